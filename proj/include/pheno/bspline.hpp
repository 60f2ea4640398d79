#pragma once

#include "pheno/core.hpp"

#include <algorithm>
#include <vector>

namespace pheno::bspline {

/// Clamped uniform knot vector on [0, 1] for `count` control points: the first
/// and last knots repeat degree + 1 times, giving count + degree + 1 knots.
inline std::vector<double> clamped_uniform_knots(int count, int degree) {
  if (count < degree + 1) throw PreconditionError("need at least degree + 1 control points");
  const int spans = count - degree;
  std::vector<double> knots;
  knots.reserve(static_cast<std::size_t>(count + degree + 1));
  for (int i = 0; i <= degree; ++i) knots.push_back(0.0);
  for (int i = 1; i < spans; ++i) knots.push_back(static_cast<double>(i) / spans);
  for (int i = 0; i <= degree; ++i) knots.push_back(1.0);
  return knots;
}

/// Checks length, monotonicity and clamping; throws PreconditionError otherwise.
inline void validate_knots(const std::vector<double>& knots, int count, int degree) {
  if (degree < 1) throw PreconditionError("invalid knot vector: degree must be >= 1");
  if (count < degree + 1) throw PreconditionError("invalid knot vector: need at least degree + 1 control points");
  if (static_cast<int>(knots.size()) != count + degree + 1) {
    throw PreconditionError("invalid knot vector: expected " + std::to_string(count + degree + 1) + " knots");
  }
  for (std::size_t i = 1; i < knots.size(); ++i) {
    if (!(knots[i] >= knots[i - 1])) throw PreconditionError("invalid knot vector: knots must be non-decreasing");
  }
  for (int i = 1; i <= degree; ++i) {
    if (knots[static_cast<std::size_t>(i)] != knots.front() || knots[knots.size() - 1 - static_cast<std::size_t>(i)] != knots.back()) {
      throw PreconditionError("invalid knot vector: ends must be clamped");
    }
  }
  if (!(knots.back() > knots.front())) throw PreconditionError("invalid knot vector: empty parameter range");
}

/// Index of the span [k_s, k_{s+1}) containing u, with u = k_max mapped to the last non-empty span.
inline int find_span(double u, const std::vector<double>& knots, int count, int degree) {
  if (u >= knots[static_cast<std::size_t>(count)]) {
    int s = count - 1;
    while (s > degree && knots[static_cast<std::size_t>(s)] == knots[static_cast<std::size_t>(s + 1)]) --s;
    return s;
  }
  if (u <= knots[static_cast<std::size_t>(degree)]) return degree;
  const auto it = std::upper_bound(knots.begin() + degree, knots.begin() + count + 1, u);
  return static_cast<int>(it - knots.begin()) - 1;
}

/// Non-zero basis functions N_{span-degree..span, degree}(u) by the Cox-de Boor
/// triangular recurrence.
template <typename Scalar>
std::vector<Scalar> basis_functions(int span, Scalar u, const std::vector<double>& knots, int degree) {
  std::vector<Scalar> n(static_cast<std::size_t>(degree + 1), Scalar(0));
  std::vector<Scalar> left(static_cast<std::size_t>(degree + 1)), right(static_cast<std::size_t>(degree + 1));
  n[0] = Scalar(1);
  for (int j = 1; j <= degree; ++j) {
    left[static_cast<std::size_t>(j)] = u - Scalar(knots[static_cast<std::size_t>(span + 1 - j)]);
    right[static_cast<std::size_t>(j)] = Scalar(knots[static_cast<std::size_t>(span + j)]) - u;
    Scalar saved(0);
    for (int r = 0; r < j; ++r) {
      const Scalar denom = right[static_cast<std::size_t>(r + 1)] + left[static_cast<std::size_t>(j - r)];
      const Scalar temp = denom == Scalar(0) ? Scalar(0) : n[static_cast<std::size_t>(r)] / denom;
      n[static_cast<std::size_t>(r)] = saved + right[static_cast<std::size_t>(r + 1)] * temp;
      saved = left[static_cast<std::size_t>(j - r)] * temp;
    }
    n[static_cast<std::size_t>(j)] = saved;
  }
  return n;
}

/// Rational B-spline point: sum(N_i w_i Q_i) / sum(N_i w_i).
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Derived::RowsAtCompileTime, 1> evaluate_rational(
    const Eigen::MatrixBase<Derived>& control, const std::vector<double>& weights, const std::vector<double>& knots,
    int degree, typename Derived::Scalar u) {
  using Scalar = typename Derived::Scalar;
  const int count = static_cast<int>(control.cols());
  const int span = find_span(static_cast<double>(u), knots, count, degree);
  const auto n = basis_functions<Scalar>(span, u, knots, degree);
  Eigen::Matrix<Scalar, Derived::RowsAtCompileTime, 1> num =
      Eigen::Matrix<Scalar, Derived::RowsAtCompileTime, 1>::Zero(control.rows());
  Scalar den(0);
  for (int r = 0; r <= degree; ++r) {
    const int i = span - degree + r;
    const Scalar nw = n[static_cast<std::size_t>(r)] * Scalar(weights[static_cast<std::size_t>(i)]);
    num += nw * control.col(i);
    den += nw;
  }
  return num / den;
}

struct CurveSample {
  double u = 0.0;
  Vec2 point = Vec2::Zero();
  int span = 0;
};

struct Config {
  int degree = 3;
  std::vector<double> knots;    // empty: clamped uniform
  std::vector<double> weights;  // empty: all ones
  int samples_per_span = 10;
};

struct Curve {
  int degree = 3;
  std::vector<double> knots;
  std::vector<double> weights;
  Points2 control;
  std::vector<CurveSample> samples;
};

/// Samples the rational curve uniformly within every non-empty knot span.
inline Curve parameterize(const Points2& control, const Config& cfg) {
  const int count = static_cast<int>(control.cols());
  if (count < cfg.degree + 1) throw PreconditionError("need at least degree + 1 control points");
  Curve c;
  c.degree = cfg.degree;
  c.control = control;
  c.knots = cfg.knots.empty() ? clamped_uniform_knots(count, cfg.degree) : cfg.knots;
  validate_knots(c.knots, count, cfg.degree);
  c.weights = cfg.weights.empty() ? std::vector<double>(static_cast<std::size_t>(count), 1.0) : cfg.weights;
  if (static_cast<int>(c.weights.size()) != count) throw PreconditionError("one weight per control point required");
  for (double w : c.weights) {
    if (!(w > 0)) throw PreconditionError("weights must be positive");
  }
  const int per_span = std::max(1, cfg.samples_per_span);
  for (int s = cfg.degree; s < count; ++s) {
    const double a = c.knots[static_cast<std::size_t>(s)], b = c.knots[static_cast<std::size_t>(s + 1)];
    if (!(b > a)) continue;
    for (int k = 0; k < per_span; ++k) {
      const double u = a + (b - a) * static_cast<double>(k) / per_span;
      c.samples.push_back({u, evaluate_rational(control, c.weights, c.knots, cfg.degree, u), s});
    }
  }
  const double u_end = c.knots[static_cast<std::size_t>(count)];
  c.samples.push_back({u_end, evaluate_rational(control, c.weights, c.knots, cfg.degree, u_end),
                       find_span(u_end, c.knots, count, cfg.degree)});
  return c;
}

}  // namespace pheno::bspline
