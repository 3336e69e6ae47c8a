#include "metaworld/numcore/ops.hpp"

#include <Eigen/Core>
#include <cmath>
#include <memory>
#include <string>

namespace metaworld::numcore {
namespace {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;
template <typename T>
using ArrayMap = Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>>;
template <typename T>
using ConstArrayMap = Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>>;

template <typename T>
ConstMatrixMap<T> as_matrix(const Tensor<T>& t) {
  return ConstMatrixMap<T>(t.data().data(), t.rows(), t.cols());
}
template <typename T>
MatrixMap<T> as_matrix(Tensor<T>& t) {
  return MatrixMap<T>(t.data().data(), t.rows(), t.cols());
}
template <typename T>
ConstArrayMap<T> as_array(const Tensor<T>& t) {
  return ConstArrayMap<T>(t.data().data(), t.size());
}
template <typename T>
ArrayMap<T> as_array(Tensor<T>& t) {
  return ArrayMap<T>(t.data().data(), t.size());
}

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + to_string(a) + " and " + to_string(b));
}

[[noreturn]] void shape_error(const char* op, const Shape& a, const std::string& why) {
  throw ShapeError(std::string(op) + ": shape " + to_string(a) + " " + why);
}

template <typename T>
void require_same_graph(const char* op, Var<T> a, Var<T> b) {
  if (&a.graph() != &b.graph()) throw ShapeError(std::string(op) + ": operands belong to different graphs");
}

void require_rank2(const char* op, const Shape& s) {
  if (s.size() != 2) shape_error(op, s, "is not rank 2");
}

// Elementwise unary op on Eigen arrays: forward f(x), backward g * df(x, y).
template <typename T, typename Forward, typename Derivative>
Var<T> unary(const char* op, Var<T> a, Forward f, Derivative df) {
  auto& g = a.graph();
  Tensor<T> out(a.shape());
  as_array(out) = f(as_array(a.value()));
  const auto ia = a.id();
  return g.record(op, std::move(out), {ia}, [ia, df, op_id = g.size()](Graph<T>& gr, const Tensor<T>& go) {
    if (!gr.needs_grad(ia)) return;
    const auto x = as_array(gr.value(ia));
    const auto y = as_array(gr.value(op_id));
    as_array(gr.grad_buffer(ia)) += as_array(go) * df(x, y);
  });
}

// Sparse view of a constant left operand: per-row list of (column, value).
template <typename T>
struct SparseRows {
  std::vector<std::size_t> row_start;
  std::vector<std::size_t> col;
  std::vector<T> val;
};

template <typename T>
std::shared_ptr<SparseRows<T>> sparsify(const Tensor<T>& a, double max_density) {
  std::size_t nnz = 0;
  for (T x : a.data()) nnz += (x != T(0));
  if (static_cast<double>(nnz) > max_density * static_cast<double>(a.size())) return nullptr;
  auto sp = std::make_shared<SparseRows<T>>();
  sp->row_start.reserve(a.rows() + 1);
  sp->col.reserve(nnz);
  sp->val.reserve(nnz);
  for (std::size_t r = 0; r < a.rows(); ++r) {
    sp->row_start.push_back(sp->col.size());
    for (std::size_t c = 0; c < a.cols(); ++c) {
      T x = a.at(r, c);
      if (x != T(0)) {
        sp->col.push_back(c);
        sp->val.push_back(x);
      }
    }
  }
  sp->row_start.push_back(sp->col.size());
  return sp;
}

constexpr double kSparseDensity = 0.1;

}  // namespace

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  require_same_graph("matmul", a, b);
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0]) shape_error("matmul", sa, sb);
  auto& g = a.graph();
  const auto ia = a.id();
  const auto ib = b.id();
  const std::size_t n = sa[0], k = sa[1], m = sb[1];

  std::shared_ptr<SparseRows<T>> sparse;
  if (!g.needs_grad(ia)) sparse = sparsify(a.value(), kSparseDensity);

  Tensor<T> out({n, m});
  if (sparse) {
    const auto& bv = b.value();
    for (std::size_t r = 0; r < n; ++r) {
      T* dst = &out.at(r, 0);
      for (std::size_t p = sparse->row_start[r]; p < sparse->row_start[r + 1]; ++p) {
        const T* src = &bv.at(sparse->col[p], 0);
        const T v = sparse->val[p];
        for (std::size_t c = 0; c < m; ++c) dst[c] += v * src[c];
      }
    }
  } else {
    as_matrix(out).noalias() = as_matrix(a.value()) * as_matrix(b.value());
  }
  (void)k;

  return g.record("matmul", std::move(out), {ia, ib}, [ia, ib, sparse](Graph<T>& gr, const Tensor<T>& go) {
    if (gr.needs_grad(ia)) {
      as_matrix(gr.grad_buffer(ia)).noalias() += as_matrix(go) * as_matrix(gr.value(ib)).transpose();
    }
    if (gr.needs_grad(ib)) {
      auto& gb = gr.grad_buffer(ib);
      if (sparse) {
        const std::size_t cols = gb.cols();
        for (std::size_t r = 0; r + 1 < sparse->row_start.size(); ++r) {
          const T* src = &go.at(r, 0);
          for (std::size_t p = sparse->row_start[r]; p < sparse->row_start[r + 1]; ++p) {
            T* dst = &gb.at(sparse->col[p], 0);
            const T v = sparse->val[p];
            for (std::size_t c = 0; c < cols; ++c) dst[c] += v * src[c];
          }
        }
      } else {
        as_matrix(gb).noalias() += as_matrix(gr.value(ia)).transpose() * as_matrix(go);
      }
    }
  });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  require_same_graph("add", a, b);
  if (a.shape() != b.shape()) shape_error("add", a.shape(), b.shape());
  auto& g = a.graph();
  Tensor<T> out(a.shape());
  as_array(out) = as_array(a.value()) + as_array(b.value());
  const auto ia = a.id(), ib = b.id();
  return g.record("add", std::move(out), {ia, ib}, [ia, ib](Graph<T>& gr, const Tensor<T>& go) {
    if (gr.needs_grad(ia)) as_array(gr.grad_buffer(ia)) += as_array(go);
    if (gr.needs_grad(ib)) as_array(gr.grad_buffer(ib)) += as_array(go);
  });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  require_same_graph("sub", a, b);
  if (a.shape() != b.shape()) shape_error("sub", a.shape(), b.shape());
  auto& g = a.graph();
  Tensor<T> out(a.shape());
  as_array(out) = as_array(a.value()) - as_array(b.value());
  const auto ia = a.id(), ib = b.id();
  return g.record("sub", std::move(out), {ia, ib}, [ia, ib](Graph<T>& gr, const Tensor<T>& go) {
    if (gr.needs_grad(ia)) as_array(gr.grad_buffer(ia)) += as_array(go);
    if (gr.needs_grad(ib)) as_array(gr.grad_buffer(ib)) -= as_array(go);
  });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  require_same_graph("mul", a, b);
  if (a.shape() != b.shape()) shape_error("mul", a.shape(), b.shape());
  auto& g = a.graph();
  Tensor<T> out(a.shape());
  as_array(out) = as_array(a.value()) * as_array(b.value());
  const auto ia = a.id(), ib = b.id();
  return g.record("mul", std::move(out), {ia, ib}, [ia, ib](Graph<T>& gr, const Tensor<T>& go) {
    if (gr.needs_grad(ia)) as_array(gr.grad_buffer(ia)) += as_array(go) * as_array(gr.value(ib));
    if (gr.needs_grad(ib)) as_array(gr.grad_buffer(ib)) += as_array(go) * as_array(gr.value(ia));
  });
}

template <typename T>
Var<T> add_bias(Var<T> x, Var<T> bias) {
  require_same_graph("add_bias", x, bias);
  const auto& sx = x.shape();
  const auto& sb = bias.shape();
  const bool bias_ok = (sb.size() == 1 && sx.size() == 2 && sb[0] == sx[1]) ||
                       (sb.size() == 2 && sx.size() == 2 && sb[0] == 1 && sb[1] == sx[1]);
  if (!bias_ok) shape_error("add_bias", sx, sb);
  auto& g = x.graph();
  Tensor<T> out = x.value();
  ConstArrayMap<T> bv(bias.value().data().data(), sx[1]);
  for (std::size_t r = 0; r < sx[0]; ++r) {
    ArrayMap<T>(&out.at(r, 0), sx[1]) += bv;
  }
  const auto ix = x.id(), ib = bias.id();
  return g.record("add_bias", std::move(out), {ix, ib}, [ix, ib](Graph<T>& gr, const Tensor<T>& go) {
    if (gr.needs_grad(ix)) as_array(gr.grad_buffer(ix)) += as_array(go);
    if (gr.needs_grad(ib)) {
      auto& gb = gr.grad_buffer(ib);
      ArrayMap<T> dst(gb.data().data(), gb.size());
      for (std::size_t r = 0; r < go.rows(); ++r) dst += ConstArrayMap<T>(&go.at(r, 0), go.cols());
    }
  });
}

template <typename T>
Var<T> neg(Var<T> a) {
  return unary<T>(
      "neg", a, [](const auto& x) { return -x; }, [](const auto& x, const auto&) { return x * T(0) - T(1); });
}

template <typename T>
Var<T> scale(Var<T> a, std::type_identity_t<T> factor) {
  return unary<T>(
      "scale", a, [factor](const auto& x) { return x * factor; },
      [factor](const auto& x, const auto&) { return x * T(0) + factor; });
}

template <typename T>
Var<T> shift(Var<T> a, std::type_identity_t<T> offset) {
  return unary<T>(
      "shift", a, [offset](const auto& x) { return x + offset; },
      [](const auto& x, const auto&) { return x * T(0) + T(1); });
}

template <typename T>
Var<T> sigmoid(Var<T> a) {
  // exp(-x) may overflow to inf for very negative x, giving exactly 0.
  return unary<T>(
      "sigmoid", a, [](const auto& x) { return (T(1) + (-x).exp()).inverse(); },
      [](const auto&, const auto& y) { return y * (T(1) - y); });
}

template <typename T>
Var<T> tanh(Var<T> a) {
  return unary<T>(
      "tanh", a, [](const auto& x) { return x.tanh(); }, [](const auto&, const auto& y) { return T(1) - y.square(); });
}

template <typename T>
Var<T> exp(Var<T> a) {
  return unary<T>(
      "exp", a, [](const auto& x) { return x.exp(); }, [](const auto&, const auto& y) { return y; });
}

template <typename T>
Var<T> log(Var<T> a) {
  for (T x : a.value().data()) {
    if (!(x > T(0))) shape_error("log", a.shape(), "has non-positive entries");
  }
  return unary<T>(
      "log", a, [](const auto& x) { return x.log(); }, [](const auto& x, const auto&) { return x.inverse(); });
}

template <typename T>
Var<T> square(Var<T> a) {
  return unary<T>(
      "square", a, [](const auto& x) { return x.square(); }, [](const auto& x, const auto&) { return x * T(2); });
}

template <typename T>
Var<T> clamp(Var<T> a, std::type_identity_t<T> lo, std::type_identity_t<T> hi) {
  if (!(lo <= hi)) throw ShapeError("clamp: lower bound exceeds upper bound");
  return unary<T>(
      "clamp", a, [lo, hi](const auto& x) { return x.max(lo).min(hi); },
      [lo, hi](const auto& x, const auto&) { return ((x >= lo) && (x <= hi)).template cast<T>(); });
}

template <typename T>
Var<T> sum(Var<T> a) {
  auto& g = a.graph();
  const T total = as_array(a.value()).sum();
  const auto ia = a.id();
  return g.record("sum", Tensor<T>::scalar(total), {ia}, [ia](Graph<T>& gr, const Tensor<T>& go) {
    if (gr.needs_grad(ia)) as_array(gr.grad_buffer(ia)) += go[0];
  });
}

template <typename T>
Var<T> mean(Var<T> a) {
  const T n = static_cast<T>(a.value().size());
  auto& g = a.graph();
  const T total = as_array(a.value()).sum();
  const auto ia = a.id();
  return g.record("mean", Tensor<T>::scalar(total / n), {ia}, [ia, n](Graph<T>& gr, const Tensor<T>& go) {
    if (gr.needs_grad(ia)) as_array(gr.grad_buffer(ia)) += go[0] / n;
  });
}

namespace {

template <typename T>
Var<T> reduce_axis(const char* op, Var<T> a, std::size_t axis, bool average) {
  require_rank2(op, a.shape());
  if (axis > 1) shape_error(op, a.shape(), "has no axis " + std::to_string(axis));
  auto& g = a.graph();
  const std::size_t n = a.shape()[0], m = a.shape()[1];
  const T divisor = average ? static_cast<T>(axis == 0 ? n : m) : T(1);
  const auto& x = a.value();
  Tensor<T> out(axis == 0 ? Shape{1, m} : Shape{n, 1});
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < m; ++c) out[axis == 0 ? c : r] += x.at(r, c);
  }
  if (average) as_array(out) /= divisor;
  const auto ia = a.id();
  return g.record(op, std::move(out), {ia}, [ia, axis, divisor, n, m](Graph<T>& gr, const Tensor<T>& go) {
    if (!gr.needs_grad(ia)) return;
    auto& ga = gr.grad_buffer(ia);
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t c = 0; c < m; ++c) ga.at(r, c) += go[axis == 0 ? c : r] / divisor;
    }
  });
}

}  // namespace

template <typename T>
Var<T> sum(Var<T> a, std::size_t axis) {
  return reduce_axis("sum_axis", a, axis, false);
}

template <typename T>
Var<T> mean(Var<T> a, std::size_t axis) {
  return reduce_axis("mean_axis", a, axis, true);
}

template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no operands");
  if (axis > 1) shape_error("concat", parts[0].shape(), "has no axis " + std::to_string(axis));
  auto& g = parts[0].graph();
  const Shape first = parts[0].shape();
  require_rank2("concat", first);
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (&p.graph() != &g) throw ShapeError("concat: operands belong to different graphs");
    const auto& s = p.shape();
    require_rank2("concat", s);
    if (s[1 - axis] != first[1 - axis]) shape_error("concat", first, s);
    total += s[axis];
  }
  Shape out_shape = first;
  out_shape[axis] = total;
  Tensor<T> out(out_shape);
  std::vector<std::size_t> ids;
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const auto& v = p.value();
    for (std::size_t r = 0; r < v.rows(); ++r) {
      for (std::size_t c = 0; c < v.cols(); ++c) {
        if (axis == 0) out.at(offset + r, c) = v.at(r, c);
        else out.at(r, offset + c) = v.at(r, c);
      }
    }
    ids.push_back(p.id());
    offsets.push_back(offset);
    offset += p.shape()[axis];
  }
  return g.record("concat", std::move(out), ids, [ids, offsets, axis](Graph<T>& gr, const Tensor<T>& go) {
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (!gr.needs_grad(ids[i])) continue;
      auto& gp = gr.grad_buffer(ids[i]);
      for (std::size_t r = 0; r < gp.rows(); ++r) {
        for (std::size_t c = 0; c < gp.cols(); ++c) {
          gp.at(r, c) += axis == 0 ? go.at(offsets[i] + r, c) : go.at(r, offsets[i] + c);
        }
      }
    }
  });
}

template <typename T>
Var<T> slice(Var<T> a, std::size_t axis, std::size_t begin, std::size_t end) {
  const auto& s = a.shape();
  require_rank2("slice", s);
  if (axis > 1) shape_error("slice", s, "has no axis " + std::to_string(axis));
  if (begin >= end || end > s[axis]) {
    shape_error("slice", s, "cannot take [" + std::to_string(begin) + "," + std::to_string(end) + ") on axis " +
                                std::to_string(axis));
  }
  auto& g = a.graph();
  Shape out_shape = s;
  out_shape[axis] = end - begin;
  Tensor<T> out(out_shape);
  const auto& v = a.value();
  for (std::size_t r = 0; r < out_shape[0]; ++r) {
    for (std::size_t c = 0; c < out_shape[1]; ++c) {
      out.at(r, c) = axis == 0 ? v.at(begin + r, c) : v.at(r, begin + c);
    }
  }
  const auto ia = a.id();
  return g.record("slice", std::move(out), {ia}, [ia, axis, begin](Graph<T>& gr, const Tensor<T>& go) {
    if (!gr.needs_grad(ia)) return;
    auto& ga = gr.grad_buffer(ia);
    for (std::size_t r = 0; r < go.rows(); ++r) {
      for (std::size_t c = 0; c < go.cols(); ++c) {
        if (axis == 0) ga.at(begin + r, c) += go.at(r, c);
        else ga.at(r, begin + c) += go.at(r, c);
      }
    }
  });
}

template <typename T>
Var<T> reshape(Var<T> a, Shape shape) {
  if (numel(shape) != a.value().size()) shape_error("reshape", a.shape(), shape);
  auto& g = a.graph();
  const auto ia = a.id();
  return g.record("reshape", a.value().reshaped(std::move(shape)), {ia}, [ia](Graph<T>& gr, const Tensor<T>& go) {
    if (gr.needs_grad(ia)) as_array(gr.grad_buffer(ia)) += as_array(go);
  });
}

#define METAWORLD_INSTANTIATE_OPS(T)                                                          \
  template Var<T> matmul(Var<T>, Var<T>);                                                     \
  template Var<T> add(Var<T>, Var<T>);                                                        \
  template Var<T> sub(Var<T>, Var<T>);                                                        \
  template Var<T> mul(Var<T>, Var<T>);                                                        \
  template Var<T> add_bias(Var<T>, Var<T>);                                                   \
  template Var<T> neg(Var<T>);                                                                \
  template Var<T> scale(Var<T>, std::type_identity_t<T>);                                     \
  template Var<T> shift(Var<T>, std::type_identity_t<T>);                                     \
  template Var<T> sigmoid(Var<T>);                                                            \
  template Var<T> tanh(Var<T>);                                                               \
  template Var<T> exp(Var<T>);                                                                \
  template Var<T> log(Var<T>);                                                                \
  template Var<T> square(Var<T>);                                                             \
  template Var<T> clamp(Var<T>, std::type_identity_t<T>, std::type_identity_t<T>);            \
  template Var<T> sum(Var<T>);                                                                \
  template Var<T> mean(Var<T>);                                                               \
  template Var<T> sum(Var<T>, std::size_t);                                                   \
  template Var<T> mean(Var<T>, std::size_t);                                                  \
  template Var<T> concat(const std::vector<Var<T>>&, std::size_t);                            \
  template Var<T> slice(Var<T>, std::size_t, std::size_t, std::size_t);                       \
  template Var<T> reshape(Var<T>, Shape);

METAWORLD_INSTANTIATE_OPS(float)
METAWORLD_INSTANTIATE_OPS(double)

}  // namespace metaworld::numcore
