#pragma once

// Differentiable convex test problems: six objective families over data
// (A, b, c), a synthetic generator with controlled spectra, three closed-form
// poorly conditioned quadratics, a LIBSVM-format reader, and reference
// optimum computation.

#include <Eigen/Dense>
#include <Eigen/QR>
#include <Eigen/Sparse>

#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <memory>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "aspgm/aspgm.hpp"
#include "aspgm/baselines.hpp"
#include "aspgm/rng.hpp"

namespace aspgm {

using SparseMat = Eigen::SparseMatrix<double, Eigen::RowMajor>;

// Dense or sparse data matrix; only A x and A^T r are ever needed.
class DataMatrix {
 public:
  explicit DataMatrix(Mat A) : dense_(std::move(A)), sparse_(false) {}
  explicit DataMatrix(SparseMat A) : sp_(std::move(A)), sparse_(true) {}

  Eigen::Index rows() const { return sparse_ ? sp_.rows() : dense_.rows(); }
  Eigen::Index cols() const { return sparse_ ? sp_.cols() : dense_.cols(); }
  bool is_sparse() const { return sparse_; }
  const Mat& dense() const { return dense_; }
  const SparseMat& sparse() const { return sp_; }

  Vec mult(const Vec& x) const {
    return sparse_ ? Vec(sp_ * x) : Vec(dense_ * x);
  }
  Vec multT(const Vec& r) const {
    return sparse_ ? Vec(sp_.transpose() * r) : Vec(dense_.transpose() * r);
  }

 private:
  Mat dense_;
  SparseMat sp_;
  bool sparse_;
};

using DataMatrixPtr = std::shared_ptr<const DataMatrix>;

enum class Family { LS, Logistic, LogSumExp, PosSquared, FourNorm, CubicReg,
                    Quadratic };

inline const char* family_name(Family f) {
  switch (f) {
    case Family::LS: return "ls";
    case Family::Logistic: return "logistic";
    case Family::LogSumExp: return "logsumexp";
    case Family::PosSquared: return "possquared";
    case Family::FourNorm: return "fournorm";
    case Family::CubicReg: return "cubicreg";
    case Family::Quadratic: return "quadratic";
  }
  return "?";
}

struct ShapeMismatch : std::invalid_argument {
  explicit ShapeMismatch(const std::string& what)
      : std::invalid_argument(what) {}
};

struct SpectrumSpec {
  enum class Kind { Uniform, Bimodal } kind = Kind::Uniform;
  double kappa = 100.0;  // target condition number of A^T A
};

inline const char* spectrum_name(SpectrumSpec::Kind k) {
  return k == SpectrumSpec::Kind::Uniform ? "uniform" : "bimodal";
}

struct ProblemInstance {
  std::string id;
  int dim = 0;
  Vec x0;
  Oracle oracle;
  std::optional<Vec> known_xstar;
  std::optional<double> known_fstar;
  Family family = Family::LS;
  DataMatrixPtr A;
  Vec b, c;
};

namespace detail {
inline double softplus(double z) {
  // log(1 + e^z) without overflow
  return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}
inline double sigmoid(double z) {
  return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z))
                  : std::exp(z) / (1.0 + std::exp(z));
}
}  // namespace detail

// f per family (z = Ax - b, a_i the rows of A, m the row count):
//   LS:         1/2 |Ax - b|^2
//   Logistic:   sum_i log(1 + exp(c_i a_i'x)) + |x|^2 / 2m
//   LogSumExp:  log(1 + sum_i exp(a_i'x - b_i))
//   PosSquared: sum_i (a_i'x - b_i)_+^2
//   FourNorm:   1/4 |Ax - b|_4^4
//   CubicReg:   1/2 |Ax|^2 + b'x + |x|^3 / 6m      (b is d-dimensional here)
inline ProblemInstance make_objective(Family family, DataMatrixPtr A, Vec b,
                                      Vec c = Vec()) {
  const Eigen::Index m = A->rows(), d = A->cols();
  ProblemInstance p;
  p.family = family;
  p.dim = static_cast<int>(d);
  p.x0 = Vec::Zero(d);
  p.A = A;
  p.b = b;
  p.c = c;

  switch (family) {
    case Family::LS: {
      if (b.size() != m) throw ShapeMismatch("ls: b must have m entries");
      p.oracle = [A, b](const Vec& x, Vec& g) {
        const Vec r = A->mult(x) - b;
        g = A->multT(r);
        return 0.5 * r.squaredNorm();
      };
      break;
    }
    case Family::Logistic: {
      if (c.size() != m) throw ShapeMismatch("logistic: c must have m entries");
      p.oracle = [A, c, m](const Vec& x, Vec& g) {
        const Vec u = A->mult(x);
        double f = 0.0;
        Vec w(m);
        for (Eigen::Index i = 0; i < m; ++i) {
          const double z = c[i] * u[i];
          f += detail::softplus(z);
          w[i] = c[i] * detail::sigmoid(z);
        }
        f += x.squaredNorm() / (2.0 * m);
        g = A->multT(w) + x / static_cast<double>(m);
        return f;
      };
      break;
    }
    case Family::LogSumExp: {
      if (b.size() != m) throw ShapeMismatch("logsumexp: b must have m entries");
      p.oracle = [A, b, m](const Vec& x, Vec& g) {
        const Vec z = A->mult(x) - b;
        const double M = std::max(0.0, z.maxCoeff());
        Vec e(m);
        double denom = std::exp(-M);
        for (Eigen::Index i = 0; i < m; ++i) {
          e[i] = std::exp(z[i] - M);
          denom += e[i];
        }
        g = A->multT(e / denom);
        return M + std::log(denom);
      };
      break;
    }
    case Family::PosSquared: {
      if (b.size() != m) throw ShapeMismatch("possquared: b must have m entries");
      p.oracle = [A, b](const Vec& x, Vec& g) {
        const Vec zp = (A->mult(x) - b).cwiseMax(0.0);
        g = A->multT(2.0 * zp);
        return zp.squaredNorm();
      };
      break;
    }
    case Family::FourNorm: {
      if (b.size() != m) throw ShapeMismatch("fournorm: b must have m entries");
      p.oracle = [A, b](const Vec& x, Vec& g) {
        const Vec z = A->mult(x) - b;
        const Vec z3 = z.array().cube();
        g = A->multT(z3);
        return 0.25 * z3.dot(z);
      };
      break;
    }
    case Family::CubicReg: {
      if (b.size() != d) throw ShapeMismatch("cubicreg: b must have d entries");
      p.oracle = [A, b, m](const Vec& x, Vec& g) {
        const Vec w = A->mult(x);
        const double nx = x.norm();
        g = A->multT(w) + b + (nx / (2.0 * m)) * x;
        return 0.5 * w.squaredNorm() + b.dot(x) +
               nx * nx * nx / (6.0 * m);
      };
      break;
    }
    case Family::Quadratic: {
      // 1/2 x'Ax + b'x with A symmetric (used by the hard instances)
      if (m != d || b.size() != d)
        throw ShapeMismatch("quadratic: A must be d x d and b d-dimensional");
      p.oracle = [A, b](const Vec& x, Vec& g) {
        const Vec Ax = A->mult(x);
        g = Ax + b;
        return 0.5 * x.dot(Ax) + b.dot(x);
      };
      break;
    }
  }
  return p;
}

inline std::string format_kappa(double kappa) {
  const double l = std::log10(kappa);
  const double rl = std::round(l);
  if (kappa > 0 && std::abs(l - rl) < 1e-12) {
    std::ostringstream os;
    os << "1e" << static_cast<long>(rl);
    return os.str();
  }
  std::ostringstream os;
  os << kappa;
  return os.str();
}

// m = 4d; A = U diag(sigma) V' with U, V from QR of Gaussian matrices;
// b standard normal; Logistic labels drawn from U{0,1} and mapped to
// {-1, +1}; x0 = 0.  Deterministic in the seed.
inline ProblemInstance gen_synthetic(Family family, int d,
                                     const SpectrumSpec& spectrum,
                                     std::uint64_t seed) {
  const int m = 4 * d;
  Rng rng(seed);

  Vec sigma(d);
  const double sk = std::sqrt(spectrum.kappa);
  if (spectrum.kind == SpectrumSpec::Kind::Uniform) {
    for (int i = 0; i < d; ++i) sigma[i] = rng.uniform(1.0, sk);
  } else {
    const int nlow = (9 * d) / 10;
    for (int i = 0; i < nlow; ++i) sigma[i] = rng.uniform(1.0, 1.1);
    for (int i = nlow; i < d; ++i) sigma[i] = rng.uniform(0.9 * sk, sk);
  }

  const auto haar_q = [&](int rows, int cols) {
    Eigen::HouseholderQR<Mat> qr(rng.normal_mat(rows, cols));
    Mat Q = qr.householderQ() * Mat::Identity(rows, cols);
    const Mat R = qr.matrixQR().topRows(cols).triangularView<Eigen::Upper>();
    for (int j = 0; j < cols; ++j)
      if (R(j, j) < 0) Q.col(j) = -Q.col(j);
    return Q;
  };
  const Mat U = haar_q(m, d);
  const Mat V = haar_q(d, d);
  Mat A = U * sigma.asDiagonal() * V.transpose();

  Vec b = rng.normal_vec(family == Family::CubicReg ? d : m);
  Vec c;
  if (family == Family::Logistic) {
    c.resize(m);
    for (int i = 0; i < m; ++i) c[i] = rng.uniform() < 0.5 ? -1.0 : 1.0;
  }

  auto Aptr = std::make_shared<DataMatrix>(std::move(A));
  ProblemInstance p = make_objective(family, Aptr, std::move(b), std::move(c));

  std::ostringstream id;
  id << family_name(family) << "-d" << d << "-kappa"
     << format_kappa(spectrum.kappa) << "-" << spectrum_name(spectrum.kind)
     << "-s" << seed;
  p.id = id.str();

  if (family == Family::LS) {
    const Vec xstar = Aptr->dense().colPivHouseholderQr().solve(p.b);
    const Vec r = Aptr->dense() * xstar - p.b;
    p.known_xstar = xstar;
    p.known_fstar = 0.5 * r.squaredNorm();
  }
  return p;
}

// The three poorly conditioned quadratics 1/2 x'Ax + b'x:
//   A: tridiagonal, diagonal 1, off-diagonals -1/2; b = (-1/2, 0, ..., 0);
//      x0 = 0 (optimum from a tridiagonal solve)
//   B: diagonal a_ii = sin^2(pi i / 2d); b = 0; x0_i = 1/a_ii (optimum 0)
//   C: diagonal (1, 2, ..., d); b = 1; x0 = 0 (optimum x*_i = -1/i)
inline ProblemInstance hard_instance(char which, int d) {
  SparseMat A(d, d);
  Vec b = Vec::Zero(d), x0 = Vec::Zero(d);
  Vec xstar(d);
  std::vector<Eigen::Triplet<double>> trips;

  switch (which) {
    case 'A': case 'a': {
      for (int i = 0; i < d; ++i) {
        trips.emplace_back(i, i, 1.0);
        if (i + 1 < d) {
          trips.emplace_back(i, i + 1, -0.5);
          trips.emplace_back(i + 1, i, -0.5);
        }
      }
      b[0] = -0.5;
      // Thomas solve of A xstar = -b
      Vec diag = Vec::Ones(d), rhs = -b;
      for (int i = 1; i < d; ++i) {
        const double w = -0.5 / diag[i - 1];
        diag[i] -= w * (-0.5);
        rhs[i] -= w * rhs[i - 1];
      }
      xstar[d - 1] = rhs[d - 1] / diag[d - 1];
      for (int i = d - 2; i >= 0; --i)
        xstar[i] = (rhs[i] - (-0.5) * xstar[i + 1]) / diag[i];
      break;
    }
    case 'B': case 'b': {
      for (int i = 0; i < d; ++i) {
        const double aii =
            std::pow(std::sin(M_PI * (i + 1) / (2.0 * d)), 2);
        trips.emplace_back(i, i, aii);
        x0[i] = 1.0 / aii;
      }
      xstar.setZero();
      break;
    }
    case 'C': case 'c': {
      for (int i = 0; i < d; ++i) {
        trips.emplace_back(i, i, i + 1.0);
        b[i] = 1.0;
        xstar[i] = -1.0 / (i + 1.0);
      }
      break;
    }
    default:
      throw std::invalid_argument("hard_instance: which must be A, B or C");
  }
  A.setFromTriplets(trips.begin(), trips.end());
  auto Aptr = std::make_shared<DataMatrix>(std::move(A));
  ProblemInstance p = make_objective(Family::Quadratic, Aptr, b);
  p.x0 = x0;
  p.known_xstar = xstar;
  p.known_fstar = 0.5 * xstar.dot(Aptr->mult(xstar)) + b.dot(xstar);
  std::ostringstream id;
  id << "hard-" << static_cast<char>(std::tolower(which)) << "-d" << d;
  p.id = id.str();
  return p;
}

struct MalformedLine : std::runtime_error {
  explicit MalformedLine(long lineno)
      : std::runtime_error("malformed LIBSVM line " + std::to_string(lineno)),
        line(lineno) {}
  long line;
};
struct EmptyFile : std::runtime_error {
  EmptyFile() : std::runtime_error("LIBSVM file contains no samples") {}
};

// "<label> <idx>:<val> ...", 1-based indices; blank lines and '#' comments
// skipped; out-of-order indices tolerated.  Dimension = max index seen
// unless overridden.
inline std::pair<SparseMat, Vec> parse_libsvm(const std::string& path,
                                              int dim_override = 0) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<Eigen::Triplet<double>> trips;
  std::vector<double> labels;
  int max_idx = 0;
  long lineno = 0;
  std::string line;
  while (std::getline(in, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ls(line);
    double label;
    if (!(ls >> label)) throw MalformedLine(lineno);
    const int row = static_cast<int>(labels.size());
    labels.push_back(label);
    std::string tok;
    while (ls >> tok) {
      const auto colon = tok.find(':');
      if (colon == std::string::npos) throw MalformedLine(lineno);
      std::size_t pos = 0;
      int idx;
      double val;
      try {
        idx = std::stoi(tok.substr(0, colon), &pos);
        if (pos != colon) throw MalformedLine(lineno);
        val = std::stod(tok.substr(colon + 1), &pos);
        if (pos != tok.size() - colon - 1) throw MalformedLine(lineno);
      } catch (const MalformedLine&) {
        throw;
      } catch (const std::exception&) {
        throw MalformedLine(lineno);
      }
      if (idx < 1) throw MalformedLine(lineno);
      max_idx = std::max(max_idx, idx);
      trips.emplace_back(row, idx - 1, val);
    }
  }
  if (labels.empty()) throw EmptyFile();
  const int d = dim_override > 0 ? dim_override : max_idx;
  SparseMat A(static_cast<int>(labels.size()), d);
  A.setFromTriplets(trips.begin(), trips.end());
  Vec lab = Eigen::Map<Vec>(labels.data(), labels.size());
  return {std::move(A), std::move(lab)};
}

// lambda_max(A^T A) by deterministic power iteration.
inline double lambda_max_AtA(const DataMatrix& A, int iters = 200) {
  Vec v = Vec::Ones(A.cols()).normalized();
  double lam = 0.0;
  for (int i = 0; i < iters; ++i) {
    Vec w = A.multT(A.mult(v));
    lam = w.norm();
    if (lam <= 0.0) return 0.0;
    v = w / lam;
  }
  return lam;
}

inline double lambda_max_sym(const DataMatrix& A, int iters = 200) {
  Vec v = Vec::Ones(A.cols()).normalized();
  double lam = 0.0;
  for (int i = 0; i < iters; ++i) {
    Vec w = A.mult(v);
    lam = w.norm();
    if (lam <= 0.0) return 0.0;
    v = w / lam;
  }
  return lam;
}

// Global smoothness bound where one exists; for the locally smooth families
// a sublevel-set estimate at x0 (only used to hand fixed-step methods a
// stepsize, not by the adaptive methods).
inline double smoothness_bound(const ProblemInstance& p) {
  const double lam = p.family == Family::Quadratic ? lambda_max_sym(*p.A)
                                                   : lambda_max_AtA(*p.A);
  const double m = static_cast<double>(p.A->rows());
  switch (p.family) {
    case Family::LS: return lam;
    case Family::Quadratic: return lam;
    case Family::Logistic: return 0.25 * lam + 1.0 / m;
    case Family::LogSumExp: return lam;
    case Family::PosSquared: return 2.0 * lam;
    case Family::FourNorm: {
      Vec g(p.dim);
      const double f0 = p.oracle(p.x0, g);
      return 3.0 * lam * 2.0 * std::sqrt(std::max(f0, 1.0));
    }
    case Family::CubicReg: {
      Vec g(p.dim);
      const double f0 = p.oracle(p.x0, g);
      const double nb = p.b.norm();
      // |x| on the sublevel set: largest root of r^3/6m - |b| r - f0 = 0
      double lo = 0.0, hi = 1.0;
      const auto val = [&](double r) {
        return r * r * r / (6.0 * m) - nb * r - std::max(f0, 0.0);
      };
      while (val(hi) < 0.0) hi *= 2.0;
      for (int i = 0; i < 200; ++i) {
        const double mid = 0.5 * (lo + hi);
        (val(mid) < 0.0 ? lo : hi) = mid;
      }
      return lam + hi / m;
    }
  }
  return lam;
}

struct ReferenceOptimum {
  double fstar = 0.0;
  enum class Quality { ClosedForm, Numerical } quality = Quality::Numerical;
};

// Closed form for the known quadratics; otherwise the minimum objective
// seen over high-accuracy ASPGM and L-BFGS runs.
inline ReferenceOptimum reference_optimum(const ProblemInstance& p,
                                          long effort_budget = 60000) {
  if (p.known_fstar)
    return {*p.known_fstar, ReferenceOptimum::Quality::ClosedForm};
  if (p.family == Family::LS && !p.A->is_sparse()) {
    const Vec xstar = p.A->dense().colPivHouseholderQr().solve(p.b);
    const Vec r = p.A->dense() * xstar - p.b;
    return {0.5 * r.squaredNorm(), ReferenceOptimum::Quality::ClosedForm};
  }

  Vec g0(p.dim);
  p.oracle(p.x0, g0);
  const double tol = 1e-13 * (1.0 + g0.norm());

  AspgmConfig acfg;
  acfg.k = 5;
  acfg.t = 5;
  acfg.budget = effort_budget;
  acfg.grad_tol = tol;
  acfg.rng_seed = 12345;
  const AspgmResult ar = run_aspgm(p.oracle, p.x0, acfg);

  LbfgsConfig lcfg;
  lcfg.budget = effort_budget;
  lcfg.grad_tol = tol;
  const BaselineResult lr = run_lbfgs_bl(p.oracle, p.x0, lcfg);

  return {std::min(ar.f_best, lr.f_best),
          ReferenceOptimum::Quality::Numerical};
}

}  // namespace aspgm
