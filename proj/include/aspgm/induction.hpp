#pragma once

// Certificate algebra shared by every method: the convexity / cocoercivity
// gap quantities W and Q, the inductive hypothesis U_n, and the OGM / OBL
// update procedures.
//
// Indexing note for the z update: the certificate z_{n+1} absorbs the
// gradient evaluated at the *new* iterate x_n,
//
//   z_{n+1} = z - ((tau_n - tau_hat) / L) g_n,
//
// which is what makes the inductive identities close.  ogm_update /
// obl_update apply the formula with the gradient they are given; runners
// that evaluate the oracle at x_n afterwards recompute z_{n+1} with the
// fresh gradient via certificate_z_next.

#include <cmath>
#include <utility>

#include "aspgm/geometry.hpp"

namespace aspgm {

// W_{i,j} = f_i - f_j - <g_j, x_i - x_j>_B
inline double compute_W(const GeometryHandle& /*h*/, const OracleSample& i,
                        const OracleSample& j) {
  return i.f - j.f - j.raw_grad().dot(i.x - j.x);
}

// Q_{i,j}(L) = W_{i,j} - |g_i - g_j|_B^2 / 2L
inline double compute_Q(const GeometryHandle& h, const OracleSample& i,
                        const OracleSample& j, double L) {
  const double gg =
      (i.g - j.g).dot(i.raw_grad() - j.raw_grad());  // |g_i - g_j|_B^2
  return compute_W(h, i, j) - gg / (2.0 * L);
}

// Inductive hypothesis parameters: U_n is a function of (tau, z, L, Delta)
// plus the sample at x_n.
struct Certificate {
  double tau = 0.0;
  Vec z;
  double L = 1.0;
  double Delta = 0.0;
};

// U_n = tau (f* - f_n + |g_n|_B^2 / 2L)         [gradient term dropped on
//     + L/2 |x0 - x*|_B^2 - L/2 |z - x*|_B^2      the final step]
//     + Delta
// Test-harness quantity; requires a known (x*, f*) or probe values.
inline double eval_U(const GeometryHandle& h, const Certificate& c,
                     const Vec& x0, const Vec& xstar, double fstar,
                     const OracleSample& sample_n, bool final_step) {
  double u = c.tau * (fstar - sample_n.f);
  if (!final_step) u += c.tau * sample_n.grad_norm_B_sq() / (2.0 * c.L);
  u += 0.5 * c.L * h.norm_B_sq(x0 - xstar);
  u -= 0.5 * c.L * h.norm_B_sq(c.z - xstar);
  u += c.Delta;
  return u;
}

inline Vec certificate_z_next(const Vec& z, double tau_n, double tau_hat,
                              double L, const Vec& g_new) {
  return z - ((tau_n - tau_hat) / L) * g_new;
}

inline double ogm_tau(double tau_hat, bool final_step) {
  return final_step ? tau_hat + 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * tau_hat))
                    : tau_hat + 1.0 + std::sqrt(1.0 + 2.0 * tau_hat);
}

inline double obl_tau(double tau_hat, bool final_step) {
  return final_step ? tau_hat + std::sqrt(tau_hat)
                    : tau_hat + 0.5 * (1.0 + std::sqrt(1.0 + 8.0 * tau_hat));
}

struct OgmStep {
  double tau;
  Vec x;
  Vec z_next;
};

inline OgmStep ogm_update(double tau_hat, const Vec& x, const Vec& g,
                          const Vec& z, double L, bool final_step) {
  OgmStep out;
  out.tau = ogm_tau(tau_hat, final_step);
  out.x = (tau_hat / out.tau) * (x - g / L) + ((out.tau - tau_hat) / out.tau) * z;
  out.z_next = certificate_z_next(z, out.tau, tau_hat, L, g);
  return out;
}

struct OblStep {
  double tau;
  Vec x;
  Vec z_next;
  double Delta;
};

inline OblStep obl_update(double tau_hat, const Vec& x, const Vec& g,
                          const Vec& z, double L, double Delta_hat,
                          double delta_hat, bool final_step) {
  OblStep out;
  out.tau = obl_tau(tau_hat, final_step);
  out.x = (tau_hat / out.tau) * (x - g / L) + ((out.tau - tau_hat) / out.tau) * z;
  out.z_next = certificate_z_next(z, out.tau, tau_hat, L, g);
  out.Delta = Delta_hat + delta_hat;
  return out;
}

}  // namespace aspgm
