#pragma once

// Randomised property checks on the kernel family. Each returns the number of
// failing samples.

#include "stbem/kernels.hpp"

#include <cmath>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace stbem::checks {

struct KernelSample {
  Vec3 r;
  double s;
  double alpha;
};

/// s log-uniform in [1e-3, 10], alpha log-uniform in [0.1, 10], |r| chosen
/// through z = |r|^2 / (4 alpha s) uniform in (0, 30) so the Gaussian does
/// not underflow.
inline KernelSample draw_sample(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal;
  KernelSample k;
  k.s = std::pow(10.0, -3.0 + 4.0 * unit(rng));
  k.alpha = std::pow(10.0, -1.0 + 2.0 * unit(rng));
  const double z = 30.0 * unit(rng) + 1e-6;
  Vec3 dir(normal(rng), normal(rng), normal(rng));
  dir.normalize();
  k.r = std::sqrt(4.0 * k.alpha * k.s * z) * dir;
  return k;
}

inline double g(const Vec3& r, double s, double alpha) {
  return heat_kernel(r, s, KernelParams(alpha)).value;
}

/// |dG/ds - alpha Lap G| / max(|dG/ds|, eps) < 1e-5 with a fourth-order
/// finite-difference Laplacian.
inline int pde_residual_failures(int samples, unsigned seed = 7) {
  std::mt19937_64 rng(seed);
  int failures = 0;
  for (int i = 0; i < samples; ++i) {
    const auto k = draw_sample(rng);
    const KernelParams p(k.alpha);
    const double h = 2e-3 * std::sqrt(k.alpha * k.s);
    const double g0 = g(k.r, k.s, k.alpha);
    double lap = 0.0;
    for (int d = 0; d < 3; ++d) {
      Vec3 e = Vec3::Zero();
      e[d] = h;
      lap += (-g(k.r + 2 * e, k.s, k.alpha) + 16 * g(k.r + e, k.s, k.alpha) -
              30 * g0 + 16 * g(k.r - e, k.s, k.alpha) -
              g(k.r - 2 * e, k.s, k.alpha)) /
             (12 * h * h);
    }
    const double dgds = -heat_kernel_time_derivative(k.r, k.s, p);
    const double residual = std::abs(dgds - k.alpha * lap);
    if (residual / std::max(std::abs(dgds), 2.220446049250313e-16) >= 1e-5)
      ++failures;
  }
  return failures;
}

inline int symmetry_failures(int samples, unsigned seed = 11) {
  std::mt19937_64 rng(seed);
  int failures = 0;
  for (int i = 0; i < samples; ++i) {
    const auto k = draw_sample(rng);
    if (g(k.r, k.s, k.alpha) != g(-k.r, k.s, k.alpha)) ++failures;
  }
  return failures;
}

/// Every member of the kernel family is exactly 0 for s <= 0, |r| > 0.
inline int causality_failures(int samples, unsigned seed = 13) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  int failures = 0;
  for (int i = 0; i < samples; ++i) {
    auto k = draw_sample(rng);
    const double s = i == 0 ? 0.0 : -k.s * unit(rng);
    const KernelParams p(k.alpha);
    const double rho = k.r.norm();
    const auto h = time_antiderivatives(rho, s, p);
    const bool ok = heat_kernel(k.r, s, p).value == 0.0 &&
                    heat_kernel(k.r, s, p).regime == Regime::vanished &&
                    heat_kernel_gradient(k.r, s, p) == Vec3::Zero() &&
                    heat_kernel_time_derivative(k.r, s, p) == 0.0 &&
                    h.h1 == 0.0 && h.h2 == 0.0 &&
                    normal_moment_antiderivative(rho, s, p) == 0.0;
    if (!ok) ++failures;
  }
  return failures;
}

/// Central differences of G against the analytic gradient and time
/// derivative; relative error < 1e-6.
inline int derivative_failures(int samples, unsigned seed = 17) {
  std::mt19937_64 rng(seed);
  int failures = 0;
  for (int i = 0; i < samples; ++i) {
    const auto k = draw_sample(rng);
    const KernelParams p(k.alpha);
    const double hx = 1e-5 * std::sqrt(k.alpha * k.s);
    Vec3 fd;
    for (int d = 0; d < 3; ++d) {
      Vec3 e = Vec3::Zero();
      e[d] = hx;
      fd[d] = (g(k.r + e, k.s, k.alpha) - g(k.r - e, k.s, k.alpha)) / (2 * hx);
    }
    const Vec3 grad = heat_kernel_gradient(k.r, k.s, p);
    // Componentwise noise is measured against the natural scale G / sqrt(s).
    const double scale = g(k.r, k.s, k.alpha) / std::sqrt(k.alpha * k.s);
    if ((grad - fd).norm() >= 1e-6 * std::max(grad.norm(), scale)) ++failures;

    const double hs = 1e-5 * k.s;
    const double fds = (g(k.r, k.s + hs, k.alpha) - g(k.r, k.s - hs, k.alpha)) /
                       (2 * hs);
    const double dtau = heat_kernel_time_derivative(k.r, k.s, p);
    const double tscale = g(k.r, k.s, k.alpha) / k.s;
    if (std::abs(-dtau - fds) >= 1e-6 * std::max(std::abs(dtau), tscale))
      ++failures;
  }
  return failures;
}

/// H1' = G, H2' = H1 and J1' = G / s by central differences in s.
inline int antiderivative_chain_failures(int samples, unsigned seed = 19) {
  std::mt19937_64 rng(seed);
  int failures = 0;
  for (int i = 0; i < samples; ++i) {
    const auto k = draw_sample(rng);
    const KernelParams p(k.alpha);
    const double rho = k.r.norm();
    const double hs = 1e-5 * k.s;
    const auto plus = time_antiderivatives(rho, k.s + hs, p);
    const auto minus = time_antiderivatives(rho, k.s - hs, p);
    const auto mid = time_antiderivatives(rho, k.s, p);
    const double g0 = g(k.r, k.s, k.alpha);
    auto rel = [](double a, double b, double floor) {
      return std::abs(a - b) / std::max(std::abs(b), floor);
    };
    // Finite differences of H carry cancellation noise of size eps * H / hs.
    const double eps_h1 = 1e-16 * mid.h1 / hs;
    const double eps_h2 = 1e-16 * mid.h2 / hs;
    if (rel((plus.h1 - minus.h1) / (2 * hs), g0, 1e3 * eps_h1) >= 1e-6)
      ++failures;
    if (rel((plus.h2 - minus.h2) / (2 * hs), mid.h1, 1e3 * eps_h2) >= 1e-6)
      ++failures;
    const double j_plus = normal_moment_antiderivative(rho, k.s + hs, p);
    const double j_minus = normal_moment_antiderivative(rho, k.s - hs, p);
    const double j_mid = normal_moment_antiderivative(rho, k.s, p);
    if (rel((j_plus - j_minus) / (2 * hs), g0 / k.s,
            1e3 * 1e-16 * j_mid / hs) >= 1e-6)
      ++failures;
  }
  return failures;
}

/// |dG/dtau| <= c_total / (s^{7/4} |r|^{3/2}) and the first-part estimate
/// 6 alpha s prefactor exp <= c / (s^{7/4} |r|^{3/2}).
inline int bound_failures(int samples, unsigned seed = 23) {
  std::mt19937_64 rng(seed);
  int failures = 0;
  for (int i = 0; i < samples; ++i) {
    const auto k = draw_sample(rng);
    const KernelParams p(k.alpha);
    const auto c = time_derivative_bound(p);
    const double rho = k.r.norm();
    const double rhs = std::pow(k.s, 1.75) * std::pow(rho, 1.5);
    const double dtau = std::abs(heat_kernel_time_derivative(k.r, k.s, p));
    const double first =
        6.0 * k.alpha * k.s /
        (std::pow(4.0 * k.alpha, 2.5) * std::pow(std::numbers::pi, 1.5) *
         std::pow(k.s, 3.5)) *
        std::exp(-rho * rho / (4.0 * k.alpha * k.s));
    if (dtau > c.total / rhs * (1 + 1e-12)) ++failures;
    if (first > c.first_part / rhs * (1 + 1e-12)) ++failures;
  }
  return failures;
}

struct CheckOutcome {
  std::string name;
  int samples = 0;
  int failures = 0;
};

inline std::vector<CheckOutcome> run_kernel_suite(int samples,
                                                  unsigned seed_offset = 0) {
  const std::pair<const char*, int (*)(int, unsigned)> checks[] = {
      {"pde_residual", pde_residual_failures},
      {"symmetry", symmetry_failures},
      {"causality", causality_failures},
      {"derivatives", derivative_failures},
      {"antiderivative_chain", antiderivative_chain_failures},
      {"time_derivative_bound", bound_failures},
  };
  const unsigned seeds[] = {7, 11, 13, 17, 19, 23};
  std::vector<CheckOutcome> out;
  for (std::size_t i = 0; i < std::size(checks); ++i)
    out.push_back({checks[i].first, samples,
                   checks[i].second(samples, seeds[i] + seed_offset)});
  return out;
}

}  // namespace stbem::checks
