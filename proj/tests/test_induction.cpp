#include <catch2/catch_amalgamated.hpp>

#include "aspgm/induction.hpp"
#include "support/test_support.hpp"

using namespace aspgm;
using namespace aspgm::testsupport;

namespace {
Vec vec1(double a) {
  Vec v(1);
  v << a;
  return v;
}

OracleSample sample_at(const Oracle& oracle, const Vec& x,
                       const GeometryHandle& h = GeometryHandle()) {
  Vec g(x.size());
  const double f = oracle(x, g);
  return make_sample(h, x, f, std::move(g));
}

Oracle half_square() {
  return [](const Vec& x, Vec& g) {
    g = x;
    return 0.5 * x.squaredNorm();
  };
}
}  // namespace

TEST_CASE("compute_W basics", "[induction]") {
  const GeometryHandle id;
  const Oracle f = half_square();
  const OracleSample s0 = sample_at(f, vec1(0.0));
  const OracleSample s1 = sample_at(f, vec1(1.0));
  CHECK(compute_W(id, s1, s0) == Catch::Approx(0.5));
  CHECK(compute_W(id, s1, s1) == 0.0);

  Rng rng(19);
  for (int trial = 0; trial < 40; ++trial) {
    auto qp = random_quadratic(rng, 5, 0.2, 3.0);
    const OracleSample a = sample_at(qp.oracle, rng.normal_vec(5));
    const OracleSample b = sample_at(qp.oracle, rng.normal_vec(5));
    CHECK(compute_W(id, a, b) >= -1e-12);
  }
}

TEST_CASE("compute_Q basics", "[induction]") {
  const GeometryHandle id;
  const Oracle f = half_square();
  const OracleSample s0 = sample_at(f, vec1(0.0));
  const OracleSample s1 = sample_at(f, vec1(1.0));
  CHECK(compute_Q(id, s1, s0, 1.0) == Catch::Approx(0.0).margin(1e-15));
  CHECK(compute_Q(id, s1, s0, 2.0) == Catch::Approx(0.25));
  CHECK(compute_Q(id, s1, s1, 1.0) == 0.0);
}

TEST_CASE("eval_U vacuous and OBL base case", "[induction]") {
  const GeometryHandle id;
  const Oracle f = half_square();
  const Vec x0 = vec1(1.0);
  const OracleSample s0 = sample_at(f, x0);

  // tau = 0, z = x0: vacuous certificate
  const Certificate vac{0.0, x0, 2.0, 0.0};
  CHECK(eval_U(id, vac, x0, vec1(0.3), -0.7, s0, false) ==
        Catch::Approx(0.0).margin(1e-15));

  // OBL base: tau = 1, z = x0 - g0/L0 gives U_0 = W_{*,0} at any probe
  Rng rng(31);
  for (int trial = 0; trial < 10; ++trial) {
    const double L0 = rng.uniform(0.5, 3.0);
    const Certificate base{1.0, x0 - s0.g / L0, L0, 0.0};
    const Vec xstar = rng.normal_vec(1);
    const double fstar = rng.normal();
    const OracleSample star = make_sample(id, xstar, fstar, vec1(0.0));
    const double W = compute_W(id, star, s0);
    const double U = eval_U(id, base, x0, xstar, fstar, s0, false);
    CHECK(U == Catch::Approx(W).margin(1e-12));
  }
}

TEST_CASE("ogm_update examples", "[induction]") {
  const double tau_nf = ogm_tau(2.0, false);
  CHECK(tau_nf == Catch::Approx(3.0 + std::sqrt(5.0)));
  CHECK(ogm_tau(2.0, true) == Catch::Approx(4.0));

  // zero-gradient case: x_n = (1 - tau_hat/tau_n) z, z unchanged
  const OgmStep st =
      ogm_update(2.0, vec1(0.0), vec1(0.0), vec1(7.0), 1.0, false);
  CHECK(st.x[0] == Catch::Approx((1.0 - 2.0 / st.tau) * 7.0));
  CHECK(st.z_next[0] == Catch::Approx(7.0));
}

TEST_CASE("obl_update examples", "[induction]") {
  // triangular numbers from tau0 = 1
  double tau = 1.0;
  std::vector<double> seq{tau};
  for (int i = 0; i < 3; ++i) seq.push_back(tau = obl_tau(tau, false));
  CHECK(seq[1] == Catch::Approx(3.0));
  CHECK(seq[2] == Catch::Approx(6.0));
  CHECK(seq[3] == Catch::Approx(10.0));

  CHECK(obl_tau(1.0, true) == Catch::Approx(2.0));

  const OblStep st = obl_update(1.0, vec1(0.0), vec1(0.0), vec1(1.0), 1.0,
                                0.5, 0.25, false);
  CHECK(st.Delta == Catch::Approx(0.75));
}

TEST_CASE("tau growth bounds", "[induction]") {
  // non-final OBL recursion stays above n^2/2
  double tau = 1.0;
  for (int n = 1; n <= 200; ++n) {
    tau = obl_tau(tau, false);
    CHECK(tau >= 0.5 * n * n);
  }

  // closed form after N-1 non-final steps and one final step
  for (long N : {1L, 2L, 5L, 10L, 100L, 1000L}) {
    double t = 1.0;
    for (long i = 0; i < N - 1; ++i) t = obl_tau(t, false);
    t = obl_tau(t, true);
    const double expected =
        (N * (N + 1.0) + std::sqrt(2.0 * N * (N + 1.0))) / 2.0;
    CHECK(std::abs(t - expected) <= 1e-12 * expected);
  }
}

namespace {
// H_n evaluated at a probe (x*, f*) under fixed L
double eval_H(const GeometryHandle& h, double tau, const Vec& z, double L,
              const Vec& x0, const Vec& xstar, double fstar,
              const OracleSample& s, bool final_step) {
  double u = tau * (fstar - s.f);
  if (!final_step) u += tau * s.grad_norm_B_sq() / (2.0 * L);
  u += 0.5 * L * h.norm_B_sq(x0 - xstar);
  u -= 0.5 * L * h.norm_B_sq(z - xstar);
  return u;
}
}  // namespace

TEST_CASE("OGM induction identity at random probes", "[induction]") {
  // H_n = H_{n-1} + tau_{n-1} Q_{n-1,n} + (tau_n - tau_{n-1}) Q_{*,n}
  // holds as an identity in (x*, f*) along an OGM run
  Rng rng(101);
  const GeometryHandle id;
  const int d = 4;
  auto qp = random_quadratic(rng, d, 0.3, 2.0);
  const double L = qp.L;
  const Vec x0 = rng.normal_vec(d);

  OracleSample s_prev = sample_at(qp.oracle, x0);
  double tau = 2.0;
  Vec z = x0 - (2.0 / L) * s_prev.g;

  for (int n = 1; n <= 12; ++n) {
    const double tau_n = ogm_tau(tau, false);
    const Vec x_n =
        (tau / tau_n) * (s_prev.x - s_prev.g / L) + ((tau_n - tau) / tau_n) * z;
    const OracleSample s_n = sample_at(qp.oracle, x_n);
    const Vec z_next = certificate_z_next(z, tau_n, tau, L, s_n.g);

    for (int probe = 0; probe < 4; ++probe) {
      const Vec xs = rng.normal_vec(d);
      const double fs = rng.normal();
      const OracleSample star = make_sample(id, xs, fs, Vec::Zero(d));
      const double Hn = eval_H(id, tau_n, z_next, L, x0, xs, fs, s_n, false);
      const double Hprev = eval_H(id, tau, z, L, x0, xs, fs, s_prev, false);
      const double rhs = Hprev + tau * compute_Q(id, s_prev, s_n, L) +
                         (tau_n - tau) * compute_Q(id, star, s_n, L);
      const double scale =
          1.0 + std::abs(s_prev.f) + L * (x0 - xs).squaredNorm();
      CHECK(std::abs(Hn - rhs) <= 1e-9 * scale);
    }
    tau = tau_n;
    z = z_next;
    s_prev = s_n;
  }
}
