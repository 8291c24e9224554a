#pragma once

// Heat kernel of the 3D transient heat equation, its derivatives and its
// closed-form temporal antiderivatives.
//
//   G(r, s) = (4 pi alpha s)^{-3/2} exp(-|r|^2 / (4 alpha s))   for s > 0,
//   G(r, s) = 0                                                otherwise.
//
// The antiderivatives used by the Galerkin assembly are
//
//   H1(rho, s) = int_0^s G(rho, sigma) dsigma = erfc(q) / (4 pi alpha rho)
//   H2(rho, s) = int_0^s H1(rho, sigma) dsigma = s i2erfc(q) / (pi alpha rho)
//   J1(rho, s) = int_0^s G(rho, sigma) / sigma dsigma
//              = (q exp(-q^2) + sqrt(pi)/2 erfc(q)) / (pi^{3/2} rho^3)
//
// with q = rho / (2 sqrt(alpha s)) and i2erfc the second repeated integral
// of erfc. All of them vanish for s <= 0.

#include "stbem/core.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace stbem {

class KernelParams {
 public:
  explicit KernelParams(double alpha = 1.0) : alpha_(alpha) {
    require(std::isfinite(alpha) && alpha > 0.0, ErrorKind::invalid_argument,
            "alpha must be positive and finite, got " + std::to_string(alpha));
  }

  double alpha() const noexcept { return alpha_; }

 private:
  double alpha_;
};

enum class Regime { causal, vanished };

struct KernelValue {
  double value = 0.0;
  Regime regime = Regime::vanished;
};

struct TimeAntiderivatives {
  double h1 = 0.0;
  double h2 = 0.0;
};

namespace detail {

inline constexpr double pi = std::numbers::pi;
inline constexpr double inv_sqrt_pi = std::numbers::inv_sqrtpi;

// Second repeated integral of erfc, i2erfc(q) = int_q^inf int_t^inf erfc.
// The closed form loses about log10(2 q^4) digits to cancellation, so large
// arguments switch to the asymptotic expansion.
inline double i2erfc(double q) {
  if (q < 6.0) {
    return 0.25 * ((1.0 + 2.0 * q * q) * std::erfc(q) -
                   2.0 * q * inv_sqrt_pi * std::exp(-q * q));
  }
  // (2/sqrt(pi)) e^{-q^2} / (2q)^3 * sum_m (-1)^m (2m+2)! / (2 m! (2q)^{2m})
  const double x = 1.0 / (4.0 * q * q);
  double term = 1.0;
  double sum = 1.0;
  for (int m = 1; m < 30; ++m) {
    term *= -static_cast<double>((2 * m + 1) * (2 * m + 2)) / m * x;
    sum += term;
    if (std::abs(term) < 1e-17 * std::abs(sum)) break;
  }
  return 2.0 * inv_sqrt_pi * std::exp(-q * q) / (8.0 * q * q * q) * sum;
}

inline double kernel_unchecked(double rho2, double s, double alpha) {
  if (s <= 0.0) return 0.0;
  const double four_alpha_s = 4.0 * alpha * s;
  return std::exp(-rho2 / four_alpha_s) /
         (four_alpha_s * pi * std::sqrt(four_alpha_s * pi));
}

// d/dtau G(r, t - tau) at s = t - tau, i.e. -dG/ds.
inline double kernel_dtau_unchecked(double rho2, double s, double alpha) {
  if (s <= 0.0) return 0.0;
  const double four_alpha = 4.0 * alpha;
  const double denom =
      std::pow(four_alpha, 2.5) * pi * std::sqrt(pi) * std::pow(s, 3.5);
  return (6.0 * alpha * s - rho2) / denom * std::exp(-rho2 / (four_alpha * s));
}

inline double h1_unchecked(double rho, double s, double alpha) {
  if (s <= 0.0) return 0.0;
  const double q = rho / (2.0 * std::sqrt(alpha * s));
  return std::erfc(q) / (4.0 * pi * alpha * rho);
}

inline double h2_unchecked(double rho, double s, double alpha) {
  if (s <= 0.0) return 0.0;
  const double q = rho / (2.0 * std::sqrt(alpha * s));
  return s * i2erfc(q) / (pi * alpha * rho);
}

// H1 and H2 at once, sharing erfc(q) and exp(-q^2).
inline void h1_h2_unchecked(double rho, double s, double alpha, double& h1,
                            double& h2) {
  if (s <= 0.0) {
    h1 = h2 = 0.0;
    return;
  }
  const double q = rho / (2.0 * std::sqrt(alpha * s));
  const double e = std::erfc(q);
  const double scale = 1.0 / (pi * alpha * rho);
  h1 = 0.25 * e * scale;
  if (q < 6.0) {
    const double i2 = 0.25 * ((1.0 + 2.0 * q * q) * e -
                              2.0 * q * inv_sqrt_pi * std::exp(-q * q));
    h2 = s * i2 * scale;
  } else {
    h2 = s * i2erfc(q) * scale;
  }
}

inline double j1_unchecked(double rho, double s, double alpha) {
  if (s <= 0.0) return 0.0;
  const double q = rho / (2.0 * std::sqrt(alpha * s));
  return (q * std::exp(-q * q) + 0.5 * std::sqrt(pi) * std::erfc(q)) /
         (pi * std::sqrt(pi) * rho * rho * rho);
}

inline void check_displacement(const Vec3& r, double s) {
  require(all_finite(r) && std::isfinite(s), ErrorKind::invalid_argument,
          "non-finite kernel argument");
}

inline void check_distance(double rho, double s) {
  require(std::isfinite(rho) && std::isfinite(s), ErrorKind::invalid_argument,
          "non-finite kernel argument");
  require(rho > 0.0, ErrorKind::invalid_argument,
          "distance must be positive, got " + std::to_string(rho));
}

}  // namespace detail

inline KernelValue heat_kernel(const Vec3& r, double s, const KernelParams& p) {
  detail::check_displacement(r, s);
  const double rho2 = r.squaredNorm();
  if (s == 0.0 && rho2 == 0.0)
    fail(ErrorKind::domain_error, "heat kernel requested at r = 0, s = 0");
  if (s <= 0.0) return {0.0, Regime::vanished};
  return {detail::kernel_unchecked(rho2, s, p.alpha()), Regime::causal};
}

/// Gradient with respect to the first argument: -r / (2 alpha s) G(r, s).
inline Vec3 heat_kernel_gradient(const Vec3& r, double s,
                                 const KernelParams& p) {
  detail::check_displacement(r, s);
  const double rho2 = r.squaredNorm();
  if (s == 0.0 && rho2 == 0.0)
    fail(ErrorKind::domain_error, "kernel gradient requested at r = 0, s = 0");
  if (s <= 0.0) return Vec3::Zero();
  const double g = detail::kernel_unchecked(rho2, s, p.alpha());
  return (-g / (2.0 * p.alpha() * s)) * r;
}

/// dG/dtau (r, t - tau) evaluated at s = t - tau; equals -dG/ds.
inline double heat_kernel_time_derivative(const Vec3& r, double s,
                                          const KernelParams& p) {
  detail::check_displacement(r, s);
  const double rho2 = r.squaredNorm();
  if (s <= 0.0 && rho2 == 0.0)
    fail(ErrorKind::domain_error,
         "kernel time derivative requested at r = 0, s <= 0");
  return detail::kernel_dtau_unchecked(rho2, s, p.alpha());
}

inline TimeAntiderivatives time_antiderivatives(double rho, double s,
                                                const KernelParams& p) {
  detail::check_distance(rho, s);
  return {detail::h1_unchecked(rho, s, p.alpha()),
          detail::h2_unchecked(rho, s, p.alpha())};
}

/// J1(rho, s) = int_0^s G(rho, sigma) / sigma dsigma.
inline double normal_moment_antiderivative(double rho, double s,
                                           const KernelParams& p) {
  detail::check_distance(rho, s);
  return detail::j1_unchecked(rho, s, p.alpha());
}

/// Constants of the estimates |first part of dG/dtau| <= c / (s^{7/4} |r|^{3/2})
/// and |dG/dtau| <= c_total / (s^{7/4} |r|^{3/2}), obtained from
/// q^m exp(-q) <= m^m exp(-m) with m = 3/4 and m = 7/4.
struct TimeDerivativeBound {
  double first_part = 0.0;
  double total = 0.0;
};

inline TimeDerivativeBound time_derivative_bound(const KernelParams& p) {
  using detail::pi;
  const double scale = std::pow(4.0 * p.alpha(), 0.75) * pi * std::sqrt(pi);
  const double first =
      std::pow(0.75, 0.75) * std::exp(-0.75) * 1.5 / scale;
  const double second = std::pow(1.75, 1.75) * std::exp(-1.75) / scale;
  return {first, first + second};
}

}  // namespace stbem
