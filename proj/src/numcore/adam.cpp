#include "metaworld/numcore/adam.hpp"

#include <cmath>
#include <string>

namespace metaworld::numcore {

template <typename T>
Adam<T>::Adam(std::vector<Parameter<T>*> params, AdamOptions options)
    : params_(std::move(params)), options_(options) {
  for (auto* p : params_) {
    m_.emplace_back(p->value.shape());
    v_.emplace_back(p->value.shape());
  }
}

template <typename T>
void Adam<T>::step() {
  for (const auto* p : params_) {
    if (p->grad.shape() != p->value.shape()) {
      throw ShapeError("adam: gradient of " + p->name + " has shape " + to_string(p->grad.shape()) +
                       ", expected " + to_string(p->value.shape()));
    }
    if (!p->grad.all_finite()) throw NumericalError("adam: non-finite gradient for parameter " + p->name);
  }

  ++steps_;
  const double t = static_cast<double>(steps_);
  const T b1 = static_cast<T>(options_.beta1);
  const T b2 = static_cast<T>(options_.beta2);
  const T correction1 = static_cast<T>(1.0 - std::pow(options_.beta1, t));
  const T correction2 = static_cast<T>(1.0 - std::pow(options_.beta2, t));
  const T lr = static_cast<T>(options_.learning_rate);
  const T eps = static_cast<T>(options_.epsilon);

  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto value = params_[i]->value.data();
    auto grad = params_[i]->grad.data();
    auto m = m_[i].data();
    auto v = v_[i].data();
    for (std::size_t k = 0; k < value.size(); ++k) {
      const T g = grad[k];
      m[k] = b1 * m[k] + (T(1) - b1) * g;
      v[k] = b2 * v[k] + (T(1) - b2) * g * g;
      const T m_hat = m[k] / correction1;
      const T v_hat = v[k] / correction2;
      value[k] -= lr * m_hat / (std::sqrt(v_hat) + eps);
    }
  }
}

template <typename T>
void Adam<T>::zero_grad() {
  for (auto* p : params_) p->zero_grad();
}

template class Adam<float>;
template class Adam<double>;

}  // namespace metaworld::numcore
