#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <limits>

namespace capgen {

template <typename Derived>
typename Derived::Scalar log_sum_exp(const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  const Scalar top = x.maxCoeff();
  if (!std::isfinite(top)) return top;
  return top + std::log((x.array() - top).exp().sum());
}

// Entries equal to -inf (masked logits) get probability exactly 0.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> softmax(
    const Eigen::MatrixBase<Derived>& logits) {
  using Scalar = typename Derived::Scalar;
  const Scalar top = logits.maxCoeff();
  // Eigen's packet exp clamps its argument, so exp(-inf) would come out denormal.
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> p =
      (logits.array() - top).unaryExpr([](Scalar v) { return std::exp(v); }).matrix();
  return p / p.sum();
}

template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> log_softmax(
    const Eigen::MatrixBase<Derived>& logits) {
  return (logits.array() - log_sum_exp(logits)).matrix();
}

template <typename DerivedA, typename DerivedB>
typename DerivedA::Scalar cosine(const Eigen::MatrixBase<DerivedA>& a,
                                 const Eigen::MatrixBase<DerivedB>& b) {
  const auto na = a.norm();
  const auto nb = b.norm();
  if (na == 0 || nb == 0) return 0;
  return a.dot(b) / (na * nb);
}

// Gradient of cosine(a, b) with respect to a, scaled by upstream.
template <typename DerivedA, typename DerivedB>
Eigen::Matrix<typename DerivedA::Scalar, Eigen::Dynamic, 1> cosine_grad_a(
    const Eigen::MatrixBase<DerivedA>& a, const Eigen::MatrixBase<DerivedB>& b,
    typename DerivedA::Scalar upstream) {
  using Scalar = typename DerivedA::Scalar;
  const Scalar na = a.norm();
  const Scalar nb = b.norm();
  if (na == 0 || nb == 0) return Eigen::Matrix<Scalar, Eigen::Dynamic, 1>::Zero(a.size());
  const Scalar cos = a.dot(b) / (na * nb);
  return upstream * (b / (na * nb) - cos * a / (na * na));
}

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

}  // namespace capgen
