#pragma once

// Transition matrices of the three-state chain. exp(Q t) is computed by
// scaling, a uniformization series, and repeated squaring. Off-diagonal
// entries are only ever formed from sums of non-negative products, and each
// diagonal is rebuilt as one minus its row's off-diagonal sum, so rows stay
// stochastic to rounding even through ~40 squarings of a stiff generator.

#include <array>
#include <cmath>
#include <cstddef>

#include "sivsim/model.hpp"

namespace sivsim {

using Mat3 = std::array<std::array<double, kNumStates>, kNumStates>;
using Vec3 = std::array<double, kNumStates>;

/// Row-convention generator: Q[i][j] is the i -> j rate (Hz), rows sum to 0.
inline Mat3 generator(const RateSet& r) {
  Mat3 q{};
  for (auto from : kAllStates) {
    for (auto to : kAllStates) {
      if (from != to) q[index(from)][index(to)] = r.rate(from, to);
    }
    q[index(from)][index(from)] = -r.exit_rate(from);
  }
  return q;
}

namespace detail {

inline void restore_diagonal(Mat3& p) {
  for (std::size_t i = 0; i < kNumStates; ++i) {
    double off = 0.0;
    for (std::size_t j = 0; j < kNumStates; ++j) {
      if (j != i) off += p[i][j];
    }
    p[i][i] = 1.0 - off;
  }
}

inline Mat3 multiply_stochastic(const Mat3& a, const Mat3& b) {
  Mat3 c{};
  for (std::size_t i = 0; i < kNumStates; ++i) {
    for (std::size_t j = 0; j < kNumStates; ++j) {
      if (i == j) continue;
      double s = 0.0;
      for (std::size_t k = 0; k < kNumStates; ++k) s += a[i][k] * b[k][j];
      c[i][j] = s;
    }
  }
  restore_diagonal(c);
  return c;
}

}  // namespace detail

/// Transition matrix exp(Q * t_seconds) of a generator with non-negative
/// off-diagonal rates.
inline Mat3 transition_matrix(const Mat3& q, double t_seconds) {
  Mat3 p{};
  double q_max = 0.0;
  for (std::size_t i = 0; i < kNumStates; ++i) q_max = std::max(q_max, -q[i][i] * t_seconds);
  if (!(q_max > 0.0)) {
    for (std::size_t i = 0; i < kNumStates; ++i) p[i][i] = 1.0;
    return p;
  }
  int squarings = 0;
  double scaled = q_max;
  while (scaled > 0.5) {
    scaled *= 0.5;
    ++squarings;
  }
  const double dt = t_seconds * std::ldexp(1.0, -squarings);

  // Uniformized jump chain T = I + Q dt / scaled, non-negative with unit rows.
  Mat3 jump{};
  for (std::size_t i = 0; i < kNumStates; ++i) {
    for (std::size_t j = 0; j < kNumStates; ++j) {
      if (i != j) jump[i][j] = q[i][j] * dt / scaled;
    }
  }
  detail::restore_diagonal(jump);

  // exp(-a) * sum_k a^k/k! T^k, with a = scaled <= 0.5.
  Mat3 power{};
  for (std::size_t i = 0; i < kNumStates; ++i) power[i][i] = 1.0;
  double weight = std::exp(-scaled);
  for (std::size_t i = 0; i < kNumStates; ++i) {
    for (std::size_t j = 0; j < kNumStates; ++j) p[i][j] = weight * power[i][j];
  }
  for (int k = 1; k < 30 && weight > 1e-20; ++k) {
    Mat3 next{};
    for (std::size_t i = 0; i < kNumStates; ++i) {
      for (std::size_t j = 0; j < kNumStates; ++j) {
        double s = 0.0;
        for (std::size_t m = 0; m < kNumStates; ++m) s += power[i][m] * jump[m][j];
        next[i][j] = s;
      }
    }
    power = next;
    weight *= scaled / k;
    for (std::size_t i = 0; i < kNumStates; ++i) {
      for (std::size_t j = 0; j < kNumStates; ++j) p[i][j] += weight * power[i][j];
    }
  }
  detail::restore_diagonal(p);

  for (int s = 0; s < squarings; ++s) p = detail::multiply_stochastic(p, p);
  return p;
}

/// Row vector times matrix.
inline Vec3 propagate(const Vec3& p, const Mat3& m) {
  Vec3 out{};
  for (std::size_t j = 0; j < kNumStates; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < kNumStates; ++i) s += p[i] * m[i][j];
    out[j] = s;
  }
  return out;
}

}  // namespace sivsim
