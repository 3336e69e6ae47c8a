#include "metaworld/metatrain/config.hpp"

#include <fmt/format.h>
#include <yaml-cpp/yaml.h>

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>
#include <vector>

#include "metaworld/errors.hpp"

namespace metaworld::metatrain {

std::string_view mode_name(Mode mode) {
  return mode == Mode::Corresponding ? "corresponding" : "noncorresponding";
}

Mode parse_mode(std::string_view text) {
  if (text == "corresponding") return Mode::Corresponding;
  if (text == "noncorresponding") return Mode::NonCorresponding;
  throw ConfigError("unknown mode '" + std::string(text) + "' (expected corresponding or noncorresponding)");
}

namespace {

struct Field {
  std::string group;  // empty for top-level keys
  std::string key;
  std::function<std::string(const TrainConfig&)> get;
  std::function<void(TrainConfig&, const std::string& text, const std::string& where)> set;
};

std::string format_double(double v) { return fmt::format("{:.17g}", v); }

double parse_double(const std::string& text, const std::string& where) {
  // strtod, unlike stream extraction, is exact for 17-digit round trips.
  char* end = nullptr;
  const double v = std::strtod(text.c_str(), &end);
  if (text.empty() || end != text.c_str() + text.size() || !std::isfinite(v)) {
    throw ConfigError(where + ": expected a number, got '" + text + "'");
  }
  return v;
}

template <typename U>
U parse_unsigned(const std::string& text, const std::string& where) {
  U v{};
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw ConfigError(where + ": expected a non-negative integer, got '" + text + "'");
  }
  return v;
}

// Double-quoted YAML scalar, so paths with ':' or '#' survive a round trip.
std::string quoted(const std::string& text) {
  std::string out = "\"";
  for (char ch : text) {
    if (ch == '"' || ch == '\\') out += '\\';
    out += ch;
  }
  return out + "\"";
}

bool parse_bool(const std::string& text, const std::string& where) {
  if (text == "true") return true;
  if (text == "false") return false;
  throw ConfigError(where + ": expected true or false, got '" + text + "'");
}

#define MW_SIZE_FIELD(G, K, MEMBER)                                                                   \
  Field {                                                                                             \
    G, K, [](const TrainConfig& c) { return std::to_string(c.MEMBER); },                              \
        [](TrainConfig& c, const std::string& t, const std::string& w) {                              \
          c.MEMBER = parse_unsigned<std::size_t>(t, w);                                               \
        }                                                                                             \
  }
#define MW_SEED_FIELD(G, K, MEMBER)                                                                   \
  Field {                                                                                             \
    G, K, [](const TrainConfig& c) { return std::to_string(c.MEMBER); },                              \
        [](TrainConfig& c, const std::string& t, const std::string& w) {                              \
          c.MEMBER = parse_unsigned<std::uint64_t>(t, w);                                             \
        }                                                                                             \
  }
#define MW_DOUBLE_FIELD(G, K, MEMBER)                                                                 \
  Field {                                                                                             \
    G, K, [](const TrainConfig& c) { return format_double(c.MEMBER); },                               \
        [](TrainConfig& c, const std::string& t, const std::string& w) { c.MEMBER = parse_double(t, w); } \
  }
#define MW_BOOL_FIELD(G, K, MEMBER)                                                                   \
  Field {                                                                                             \
    G, K, [](const TrainConfig& c) { return std::string(c.MEMBER ? "true" : "false"); },              \
        [](TrainConfig& c, const std::string& t, const std::string& w) { c.MEMBER = parse_bool(t, w); } \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      Field{"", "dataset", [](const TrainConfig& c) { return quoted(c.dataset); },
            [](TrainConfig& c, const std::string& t, const std::string&) { c.dataset = t; }},
      Field{"envs", "variant", [](const TrainConfig& c) { return std::string(transforms::name(c.envs.variant)); },
            [](TrainConfig& c, const std::string& t, const std::string& w) {
              auto kind = transforms::parse_kind(t);
              if (!kind) throw ConfigError(w + ": unknown transform '" + t + "'");
              c.envs.variant = *kind;
            }},
      Field{"envs", "mode", [](const TrainConfig& c) { return std::string(mode_name(c.envs.mode)); },
            [](TrainConfig& c, const std::string& t, const std::string& w) {
              try {
                c.envs.mode = parse_mode(t);
              } catch (const ConfigError& e) {
                throw ConfigError(w + ": " + e.what());
              }
            }},
      Field{"model", "preset", [](const TrainConfig& c) { return std::string(vision::preset_name(c.model.preset)); },
            [](TrainConfig& c, const std::string& t, const std::string& w) {
              try {
                c.model.preset = vision::parse_preset(t);
              } catch (const ConfigError& e) {
                throw ConfigError(w + ": " + e.what());
              }
            }},
      MW_SIZE_FIELD("batch", "size", batch.size),
      MW_SIZE_FIELD("batch", "sequence_length", batch.sequence_length),
      MW_SIZE_FIELD("schedule", "cycles", schedule.cycles),
      MW_SIZE_FIELD("schedule", "prediction_iterations", schedule.prediction_iterations),
      MW_SIZE_FIELD("schedule", "reconstruction_iterations", schedule.reconstruction_iterations),
      MW_SIZE_FIELD("schedule", "eval_every", schedule.eval_every),
      MW_SIZE_FIELD("schedule", "checkpoint_every", schedule.checkpoint_every),
      MW_DOUBLE_FIELD("loss", "beta_p", loss.beta_p),
      MW_DOUBLE_FIELD("loss", "beta_r", loss.beta_r),
      MW_DOUBLE_FIELD("loss", "eta", loss.eta),
      MW_DOUBLE_FIELD("loss", "eta_mu", loss.eta_mu),
      MW_DOUBLE_FIELD("loss", "eta_sigma", loss.eta_sigma),
      MW_DOUBLE_FIELD("loss", "kl_weight", loss.kl_weight),
      MW_DOUBLE_FIELD("loss", "free_bits", loss.free_bits),
      MW_DOUBLE_FIELD("optim", "lr_memory", optim.lr_memory),
      MW_DOUBLE_FIELD("optim", "lr_vision_o", optim.lr_vision_o),
      MW_DOUBLE_FIELD("optim", "lr_vision_i", optim.lr_vision_i),
      MW_BOOL_FIELD("memory", "sample_inputs", memory.sample_inputs),
      MW_BOOL_FIELD("memory", "sample_predictions", memory.sample_predictions),
      MW_BOOL_FIELD("memory", "teacher_forcing", memory.teacher_forcing),
      MW_SEED_FIELD("seeds", "train", seeds.train),
      MW_SEED_FIELD("seeds", "eval", seeds.eval),
      MW_SIZE_FIELD("eval", "pairs", eval.pairs),
  };
  return table;
}

const Field* find_field(const std::string& group, const std::string& key) {
  for (const auto& f : fields()) {
    if (f.group == group && f.key == key) return &f;
  }
  return nullptr;
}

bool is_group(const std::string& name) {
  for (const auto& f : fields()) {
    if (!f.group.empty() && f.group == name) return true;
  }
  return false;
}

std::string scalar_text(const YAML::Node& node, const std::string& where) {
  if (!node.IsScalar()) throw ConfigError(where + ": expected a scalar value");
  return node.Scalar();
}

void require_nonnegative(double v, const char* name) {
  if (!(v >= 0)) throw ConfigError(std::string(name) + " must be >= 0");
}

void require_positive(std::size_t v, const char* name) {
  if (v == 0) throw ConfigError(std::string(name) + " must be >= 1");
}

}  // namespace

void TrainConfig::validate() const {
  require_positive(batch.size, "batch.size");
  if (batch.sequence_length < 2) throw ConfigError("batch.sequence_length must be >= 2");
  require_positive(schedule.cycles, "schedule.cycles");
  if (schedule.prediction_iterations + schedule.reconstruction_iterations == 0) {
    throw ConfigError("schedule: a cycle needs at least one iteration");
  }
  require_positive(schedule.eval_every, "schedule.eval_every");
  require_positive(schedule.checkpoint_every, "schedule.checkpoint_every");
  require_positive(eval.pairs, "eval.pairs");
  require_nonnegative(loss.beta_p, "loss.beta_p");
  require_nonnegative(loss.beta_r, "loss.beta_r");
  require_nonnegative(loss.eta, "loss.eta");
  require_nonnegative(loss.eta_mu, "loss.eta_mu");
  require_nonnegative(loss.eta_sigma, "loss.eta_sigma");
  require_nonnegative(loss.kl_weight, "loss.kl_weight");
  require_nonnegative(loss.free_bits, "loss.free_bits");
  for (auto [v, name] : {std::pair{optim.lr_memory, "optim.lr_memory"}, std::pair{optim.lr_vision_o, "optim.lr_vision_o"},
                         std::pair{optim.lr_vision_i, "optim.lr_vision_i"}}) {
    if (!(v > 0)) throw ConfigError(std::string(name) + " must be > 0");
  }
}

TrainConfig parse_config(std::string_view yaml_text) {
  YAML::Node root;
  try {
    root = YAML::Load(std::string(yaml_text));
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("config is not valid YAML: ") + e.what());
  }
  TrainConfig config;
  if (root.IsNull()) return config;
  if (!root.IsMap()) throw ConfigError("config must be a mapping");
  for (const auto& entry : root) {
    const auto key = entry.first.as<std::string>();
    if (is_group(key)) {
      if (!entry.second.IsMap()) throw ConfigError(key + ": expected a mapping");
      for (const auto& inner : entry.second) {
        const auto name = inner.first.as<std::string>();
        const auto where = key + "." + name;
        const Field* f = find_field(key, name);
        if (!f) throw ConfigError("unknown config key '" + where + "'");
        f->set(config, scalar_text(inner.second, where), where);
      }
    } else if (const Field* f = find_field("", key)) {
      f->set(config, scalar_text(entry.second, key), key);
    } else {
      throw ConfigError("unknown config key '" + key + "'");
    }
  }
  config.validate();
  return config;
}

TrainConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read config " + path);
  std::stringstream text;
  text << in.rdbuf();
  return parse_config(text.str());
}

std::string to_yaml(const TrainConfig& config) {
  std::string out;
  std::string current;
  for (const auto& f : fields()) {
    if (f.group.empty()) {
      out += f.key + ": " + f.get(config) + "\n";
      continue;
    }
    if (f.group != current) {
      out += f.group + ":\n";
      current = f.group;
    }
    out += "  " + f.key + ": " + f.get(config) + "\n";
  }
  return out;
}

bool operator==(const TrainConfig& a, const TrainConfig& b) { return to_yaml(a) == to_yaml(b); }

}  // namespace metaworld::metatrain
