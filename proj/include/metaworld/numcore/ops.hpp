#pragma once

#include <cstddef>
#include <type_traits>
#include <vector>

#include "metaworld/numcore/graph.hpp"

// Differentiable primitives. Every function records one node on the graph of
// its inputs and throws ShapeError naming the primitive and the offending
// shapes when they are incompatible.
namespace metaworld::numcore {

// [n,k] x [k,m] -> [n,m]. A constant, mostly-zero left operand (binary
// frames) takes a sparse path; results are identical up to summation order.
template <typename T>
Var<T> matmul(Var<T> a, Var<T> b);

template <typename T>
Var<T> add(Var<T> a, Var<T> b);
template <typename T>
Var<T> sub(Var<T> a, Var<T> b);
template <typename T>
Var<T> mul(Var<T> a, Var<T> b);
// x:[n,m] + bias:[1,m] (or [m]) broadcast over rows.
template <typename T>
Var<T> add_bias(Var<T> x, Var<T> bias);

template <typename T>
Var<T> neg(Var<T> a);
template <typename T>
Var<T> scale(Var<T> a, std::type_identity_t<T> factor);
template <typename T>
Var<T> shift(Var<T> a, std::type_identity_t<T> offset);

template <typename T>
Var<T> sigmoid(Var<T> a);
template <typename T>
Var<T> tanh(Var<T> a);
template <typename T>
Var<T> exp(Var<T> a);
template <typename T>
Var<T> log(Var<T> a);
template <typename T>
Var<T> square(Var<T> a);
// Gradient passes where lo <= a <= hi, zero elsewhere.
template <typename T>
Var<T> clamp(Var<T> a, std::type_identity_t<T> lo, std::type_identity_t<T> hi);

// Full reductions produce shape [1].
template <typename T>
Var<T> sum(Var<T> a);
template <typename T>
Var<T> mean(Var<T> a);
// Rank-2 reductions: axis 0 -> [1,m], axis 1 -> [n,1].
template <typename T>
Var<T> sum(Var<T> a, std::size_t axis);
template <typename T>
Var<T> mean(Var<T> a, std::size_t axis);

// Rank-2 concatenation and slicing along axis 0 (rows) or 1 (columns).
template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts, std::size_t axis);
template <typename T>
Var<T> slice(Var<T> a, std::size_t axis, std::size_t begin, std::size_t end);
template <typename T>
Var<T> reshape(Var<T> a, Shape shape);

template <typename T>
Var<T> operator+(Var<T> a, Var<T> b) { return add(a, b); }
template <typename T>
Var<T> operator-(Var<T> a, Var<T> b) { return sub(a, b); }
template <typename T>
Var<T> operator*(Var<T> a, Var<T> b) { return mul(a, b); }
template <typename T>
Var<T> operator-(Var<T> a) { return neg(a); }

}  // namespace metaworld::numcore
