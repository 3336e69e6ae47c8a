#pragma once

#include <cstdint>
#include <vector>

#include "metaworld/numcore/graph.hpp"

namespace metaworld::numcore {

struct AdamOptions {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Adaptive-moment optimizer over a fixed list of parameters. The parameters
// are borrowed and must outlive the optimizer.
template <typename T>
class Adam {
 public:
  Adam(std::vector<Parameter<T>*> params, AdamOptions options);

  // Applies one bias-corrected update from each parameter's grad. A
  // non-finite gradient raises NumericalError naming the parameter before
  // anything is modified.
  void step();
  void zero_grad();

  std::uint64_t step_count() const noexcept { return steps_; }
  void set_step_count(std::uint64_t steps) { steps_ = steps; }
  const AdamOptions& options() const noexcept { return options_; }

  std::size_t num_params() const noexcept { return params_.size(); }
  const Parameter<T>& param(std::size_t i) const { return *params_.at(i); }
  Tensor<T>& first_moment(std::size_t i) { return m_.at(i); }
  Tensor<T>& second_moment(std::size_t i) { return v_.at(i); }
  const Tensor<T>& first_moment(std::size_t i) const { return m_.at(i); }
  const Tensor<T>& second_moment(std::size_t i) const { return v_.at(i); }

 private:
  std::vector<Parameter<T>*> params_;
  std::vector<Tensor<T>> m_;
  std::vector<Tensor<T>> v_;
  AdamOptions options_;
  std::uint64_t steps_ = 0;
};

extern template class Adam<float>;
extern template class Adam<double>;

}  // namespace metaworld::numcore
