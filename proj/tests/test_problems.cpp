#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <fstream>

#include "aspgm/problems.hpp"
#include "support/test_support.hpp"

using namespace aspgm;
using namespace aspgm::testsupport;

namespace {
const std::vector<Family> kSynthetic = {
    Family::LS,         Family::Logistic, Family::LogSumExp,
    Family::PosSquared, Family::FourNorm, Family::CubicReg};

struct TempFile {
  std::string path;
  explicit TempFile(const std::string& contents) {
    char buf[] = "/tmp/libsvm_test_XXXXXX";
    const int fd = mkstemp(buf);
    REQUIRE(fd >= 0);
    path = buf;
    std::ofstream out(path);
    out << contents;
    close(fd);
  }
  ~TempFile() { std::remove(path.c_str()); }
};
}  // namespace

TEST_CASE("objective values at fixed points", "[problems]") {
  // LogSumExp at x = 0 with m = 1, b = 0 -> log 2
  {
    Mat A(1, 2);
    A << 1.0, -2.0;
    auto p = make_objective(Family::LogSumExp,
                            std::make_shared<DataMatrix>(A), Vec::Zero(1));
    Vec g(2);
    CHECK(p.oracle(Vec::Zero(2), g) == Catch::Approx(std::log(2.0)));
  }
  // LS with A = I, b = 0 at x = (1,1)
  {
    auto p = make_objective(Family::LS,
                            std::make_shared<DataMatrix>(Mat::Identity(2, 2)),
                            Vec::Zero(2));
    Vec g(2);
    const double f = p.oracle(Vec::Ones(2), g);
    CHECK(f == Catch::Approx(1.0));
    CHECK(g.isApprox(Vec::Ones(2)));
  }
  // shape mismatch is rejected
  CHECK_THROWS_AS(
      make_objective(Family::LS, std::make_shared<DataMatrix>(Mat::Identity(2, 2)),
                     Vec::Zero(3)),
      ShapeMismatch);
}

TEST_CASE("finite-difference gradient checks on every family", "[problems]") {
  Rng rng(41);
  for (Family fam : kSynthetic) {
    const ProblemInstance p =
        gen_synthetic(fam, 6, {SpectrumSpec::Kind::Uniform, 100.0}, 7);
    for (int i = 0; i < 10; ++i) {
      const Vec x = 0.5 * rng.normal_vec(p.dim);
      CHECK(fd_gradient_error(p.oracle, x) <= 1e-5);
    }
  }
  for (char which : {'A', 'B', 'C'}) {
    const ProblemInstance p = hard_instance(which, 8);
    for (int i = 0; i < 10; ++i)
      CHECK(fd_gradient_error(p.oracle, rng.normal_vec(8)) <= 1e-5);
  }
}

TEST_CASE("convexity spot-check", "[problems]") {
  Rng rng(43);
  const GeometryHandle id;
  for (Family fam : kSynthetic) {
    const ProblemInstance p =
        gen_synthetic(fam, 5, {SpectrumSpec::Kind::Uniform, 100.0}, 3);
    Vec g0(p.dim);
    const double scale = 1.0 + std::abs(p.oracle(p.x0, g0));
    for (int i = 0; i < 100; ++i) {
      Vec ga(p.dim), gb(p.dim);
      const Vec xa = rng.normal_vec(p.dim), xb = rng.normal_vec(p.dim);
      const double fa = p.oracle(xa, ga), fb = p.oracle(xb, gb);
      const OracleSample sa = make_sample(id, xa, fa, ga);
      const OracleSample sb = make_sample(id, xb, fb, gb);
      CHECK(compute_W(id, sa, sb) >= -1e-10 * scale);
    }
  }
}

TEST_CASE("synthetic spectra", "[problems]") {
  {
    const ProblemInstance p =
        gen_synthetic(Family::LS, 4, {SpectrumSpec::Kind::Uniform, 100.0}, 11);
    Eigen::JacobiSVD<Mat> svd(p.A->dense());
    const auto& sv = svd.singularValues();
    const double cond = (sv[0] * sv[0]) / (sv[sv.size() - 1] * sv[sv.size() - 1]);
    CHECK(cond >= 1.0);
    CHECK(cond <= 110.0);
    CHECK(p.A->rows() == 16);  // m = 4d
  }
  {
    const ProblemInstance p = gen_synthetic(
        Family::LS, 10, {SpectrumSpec::Kind::Bimodal, 1e4}, 11);
    Eigen::JacobiSVD<Mat> svd(p.A->dense());
    Vec sv = svd.singularValues();
    int low = 0, high = 0;
    for (int i = 0; i < sv.size(); ++i) {
      if (sv[i] >= 1.0 - 1e-9 && sv[i] <= 1.1 + 1e-9) ++low;
      if (sv[i] >= 90.0 - 1e-9 && sv[i] <= 100.0 + 1e-9) ++high;
    }
    CHECK(low == 9);
    CHECK(high == 1);
  }
  {
    const ProblemInstance a =
        gen_synthetic(Family::Logistic, 5, {SpectrumSpec::Kind::Uniform, 100.0}, 5);
    const ProblemInstance b =
        gen_synthetic(Family::Logistic, 5, {SpectrumSpec::Kind::Uniform, 100.0}, 5);
    CHECK(a.A->dense() == b.A->dense());
    CHECK(a.b == b.b);
    CHECK(a.c == b.c);
    CHECK(a.id == "logistic-d5-kappa1e2-uniform-s5");
    // logistic labels are informative
    for (int i = 0; i < a.c.size(); ++i)
      CHECK(std::abs(a.c[i]) == 1.0);
  }
}

TEST_CASE("hard instances", "[problems]") {
  {
    const ProblemInstance p = hard_instance('A', 3);
    Vec g(3);
    p.oracle(Vec::Zero(3), g);
    CHECK(g[0] == Catch::Approx(-0.5));
    CHECK(g[1] == 0.0);
    CHECK(g[2] == 0.0);
    // the optimum solves the tridiagonal system
    Vec gstar(3);
    p.oracle(*p.known_xstar, gstar);
    CHECK(gstar.norm() <= 1e-12);
  }
  {
    const ProblemInstance p = hard_instance('B', 1);
    Vec g(1);
    CHECK(p.x0[0] == Catch::Approx(1.0));
    CHECK(p.oracle(p.x0, g) == Catch::Approx(0.5));
    CHECK(*p.known_fstar == 0.0);
  }
  {
    const ProblemInstance p = hard_instance('C', 2);
    CHECK((*p.known_xstar)[0] == Catch::Approx(-1.0));
    CHECK((*p.known_xstar)[1] == Catch::Approx(-0.5));
    CHECK(*p.known_fstar == Catch::Approx(-0.75));
    Vec gstar(2);
    p.oracle(*p.known_xstar, gstar);
    CHECK(gstar.norm() <= 1e-9);
  }
}

TEST_CASE("known optima have zero gradient and minimal value", "[problems]") {
  Rng rng(47);
  const ProblemInstance p =
      gen_synthetic(Family::LS, 8, {SpectrumSpec::Kind::Uniform, 100.0}, 2);
  REQUIRE(p.known_xstar.has_value());
  Vec g(p.dim);
  const double fstar = p.oracle(*p.known_xstar, g);
  CHECK(g.norm() <= 1e-9 * (1.0 + fstar));
  CHECK(fstar == Catch::Approx(*p.known_fstar));
  for (int i = 0; i < 100; ++i) {
    Vec gx(p.dim);
    CHECK(p.oracle(rng.normal_vec(p.dim), gx) >= *p.known_fstar);
  }
}

TEST_CASE("libsvm parsing", "[problems]") {
  {
    TempFile f("1 1:0.5 3:-2\n-1\n# comment\n\n2 7:1.25 2:0.5\n");
    auto [A, labels] = parse_libsvm(f.path);
    REQUIRE(A.rows() == 3);
    CHECK(A.cols() == 7);
    CHECK(labels[0] == 1.0);
    CHECK(labels[1] == -1.0);
    CHECK(labels[2] == 2.0);
    CHECK(A.coeff(0, 0) == 0.5);
    CHECK(A.coeff(0, 2) == -2.0);
    CHECK(A.coeff(1, 0) == 0.0);  // empty feature row
    CHECK(A.coeff(2, 6) == 1.25);
    CHECK(A.coeff(2, 1) == 0.5);  // out-of-order indices tolerated
  }
  {
    TempFile f("1 3:0.5 1:2\n");
    auto [A, labels] = parse_libsvm(f.path, 10);  // dimension override
    CHECK(A.cols() == 10);
  }
  {
    TempFile f("# nothing\n\n");
    CHECK_THROWS_AS(parse_libsvm(f.path), EmptyFile);
  }
  {
    TempFile f("1 borked\n");
    CHECK_THROWS_AS(parse_libsvm(f.path), MalformedLine);
  }
  {
    TempFile f("1 0:1\n");  // indices are 1-based
    CHECK_THROWS_AS(parse_libsvm(f.path), MalformedLine);
  }
}

TEST_CASE("smoothness bounds are valid at sampled pairs", "[problems]") {
  Rng rng(53);
  const GeometryHandle id;
  for (Family fam : {Family::LS, Family::Logistic, Family::LogSumExp,
                     Family::PosSquared}) {
    const ProblemInstance p =
        gen_synthetic(fam, 5, {SpectrumSpec::Kind::Uniform, 100.0}, 9);
    const double L = smoothness_bound(p);
    for (int i = 0; i < 20; ++i) {
      Vec ga(p.dim), gb(p.dim);
      const Vec xa = rng.normal_vec(p.dim), xb = rng.normal_vec(p.dim);
      const double fa = p.oracle(xa, ga), fb = p.oracle(xb, gb);
      const OracleSample sa = make_sample(id, xa, fa, ga);
      const OracleSample sb = make_sample(id, xb, fb, gb);
      CHECK(local_L(id, sa, sb) <= L * (1.0 + 1e-9));
    }
  }
}

TEST_CASE("reference optimum", "[problems]") {
  {
    const ProblemInstance p =
        gen_synthetic(Family::LS, 6, {SpectrumSpec::Kind::Uniform, 100.0}, 4);
    const ReferenceOptimum r = reference_optimum(p);
    CHECK(r.quality == ReferenceOptimum::Quality::ClosedForm);
    CHECK(r.fstar == Catch::Approx(*p.known_fstar));
  }
  {
    const ProblemInstance p = hard_instance('C', 5);
    const ReferenceOptimum r = reference_optimum(p);
    double h = 0.0;
    for (int i = 1; i <= 5; ++i) h += 1.0 / i;
    CHECK(r.fstar == Catch::Approx(-0.5 * h));
  }
  {
    const ProblemInstance p = gen_synthetic(
        Family::LogSumExp, 5, {SpectrumSpec::Kind::Uniform, 100.0}, 4);
    const ReferenceOptimum r = reference_optimum(p, 5000);
    CHECK(r.quality == ReferenceOptimum::Quality::Numerical);
    Vec g(p.dim);
    CHECK(r.fstar <= p.oracle(p.x0, g));
  }
}
