#pragma once

// Weighted nonlinear least squares for models with a handful of parameters.
// Marquardt-scaled damping, Cholesky solves on the N x N normal equations.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>

namespace sivsim {

template <std::size_t N>
using Vec = std::array<double, N>;

template <std::size_t N>
using Mat = std::array<std::array<double, N>, N>;

/// In-place Cholesky solve of A x = b. Returns false if A is not positive definite.
template <std::size_t N>
bool cholesky_solve(Mat<N> a, Vec<N>& x, const Vec<N>& b) {
  for (std::size_t j = 0; j < N; ++j) {
    double d = a[j][j];
    for (std::size_t k = 0; k < j; ++k) d -= a[j][k] * a[j][k];
    if (!(d > 0.0) || !std::isfinite(d)) return false;
    a[j][j] = std::sqrt(d);
    for (std::size_t i = j + 1; i < N; ++i) {
      double s = a[i][j];
      for (std::size_t k = 0; k < j; ++k) s -= a[i][k] * a[j][k];
      a[i][j] = s / a[j][j];
    }
  }
  Vec<N> y{};
  for (std::size_t i = 0; i < N; ++i) {
    double s = b[i];
    for (std::size_t k = 0; k < i; ++k) s -= a[i][k] * y[k];
    y[i] = s / a[i][i];
  }
  for (std::size_t ii = N; ii-- > 0;) {
    double s = y[ii];
    for (std::size_t k = ii + 1; k < N; ++k) s -= a[k][ii] * x[k];
    x[ii] = s / a[ii][ii];
  }
  return true;
}

template <std::size_t N>
std::optional<Mat<N>> invert_spd(const Mat<N>& a) {
  Mat<N> inv{};
  for (std::size_t c = 0; c < N; ++c) {
    Vec<N> e{};
    e[c] = 1.0;
    Vec<N> col{};
    if (!cholesky_solve<N>(a, col, e)) return std::nullopt;
    for (std::size_t r = 0; r < N; ++r) inv[r][c] = col[r];
  }
  return inv;
}

template <std::size_t N>
struct LmOutcome {
  Vec<N> params{};
  std::optional<Mat<N>> covariance;
  double chi2 = 0.0;
  std::size_t dof = 0;
  bool converged = false;
  int iterations = 0;
};

struct LmSettings {
  int max_iterations = 200;
  double relative_step = 1e-8;
};

/// Minimizes sum ((y_i - f(x_i; p)) / sigma_i)^2. `model(x, p, grad)` returns
/// f and fills the gradient with respect to p.
template <std::size_t N, class Model>
LmOutcome<N> levenberg_marquardt(Model&& model, std::span<const double> x, std::span<const double> y,
                                 std::span<const double> sigma, Vec<N> p0,
                                 const LmSettings& settings = {}) {
  if (x.size() != y.size() || x.size() != sigma.size()) {
    throw std::invalid_argument("levenberg_marquardt: size mismatch");
  }
  for (double s : sigma) {
    if (!(s > 0.0) || !std::isfinite(s)) throw std::invalid_argument("levenberg_marquardt: sigma must be > 0");
  }

  auto normal_equations = [&](const Vec<N>& p, Mat<N>& jtj, Vec<N>& jtr) {
    jtj = {};
    jtr = {};
    double chi2 = 0.0;
    Vec<N> g{};
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double w = 1.0 / (sigma[i] * sigma[i]);
      const double r = y[i] - model(x[i], p, g);
      chi2 += r * r * w;
      for (std::size_t a = 0; a < N; ++a) {
        jtr[a] += g[a] * r * w;
        for (std::size_t b = 0; b <= a; ++b) jtj[a][b] += g[a] * g[b] * w;
      }
    }
    for (std::size_t a = 0; a < N; ++a) {
      for (std::size_t b = a + 1; b < N; ++b) jtj[a][b] = jtj[b][a];
    }
    return chi2;
  };
  auto chi2_at = [&](const Vec<N>& p) {
    double chi2 = 0.0;
    Vec<N> g{};
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double r = (y[i] - model(x[i], p, g)) / sigma[i];
      chi2 += r * r;
    }
    return chi2;
  };

  LmOutcome<N> out;
  out.dof = x.size() > N ? x.size() - N : 0;
  Vec<N> p = p0;
  Mat<N> jtj{};
  Vec<N> jtr{};
  double chi2 = normal_equations(p, jtj, jtr);
  double lambda = 1e-3;

  for (int it = 1; it <= settings.max_iterations; ++it) {
    out.iterations = it;
    bool accepted = false;
    bool small_step = false;
    while (lambda < 1e16) {
      Mat<N> damped = jtj;
      for (std::size_t a = 0; a < N; ++a) {
        damped[a][a] += lambda * (jtj[a][a] > 0.0 ? jtj[a][a] : 1.0);
      }
      Vec<N> step{};
      if (!cholesky_solve<N>(damped, step, jtr)) {
        lambda *= 10.0;
        continue;
      }
      Vec<N> trial{};
      double rel = 0.0;
      for (std::size_t a = 0; a < N; ++a) {
        trial[a] = p[a] + step[a];
        const double scale = std::max(std::abs(p[a]), std::numeric_limits<double>::min());
        rel = std::max(rel, std::abs(step[a]) / scale);
      }
      const double trial_chi2 = chi2_at(trial);
      if (std::isfinite(trial_chi2) && trial_chi2 <= chi2) {
        p = trial;
        accepted = true;
        small_step = rel < settings.relative_step;
        lambda = std::max(lambda * 0.1, 1e-12);
        break;
      }
      lambda *= 10.0;
    }
    if (!accepted) {
      // No descent direction left at machine precision: p is the minimum.
      out.converged = true;
      break;
    }
    chi2 = normal_equations(p, jtj, jtr);
    if (small_step) {
      out.converged = true;
      break;
    }
  }
  out.params = p;
  out.chi2 = chi2;
  out.covariance = invert_spd<N>(jtj);
  return out;
}

}  // namespace sivsim
