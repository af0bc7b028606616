#include "rsynth/lti.hpp"

#include <algorithm>
#include <boost/math/special_functions/beta.hpp>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "rsynth/parallel.hpp"
#include "rsynth/rng.hpp"
#include "rsynth/robust_dp.hpp"

namespace rsynth::lti {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();

double m_norm(const VectorXd& v, const MatrixXd& M) { return std::sqrt(v.dot(M * v)); }

// X = sum_k A'^k Q A^k by doubling
MatrixXd dlyap_atxa(MatrixXd A, const MatrixXd& Q) {
  MatrixXd X = Q;
  for (int it = 0; it < 200; ++it) {
    X = X + A.transpose() * X * A;
    A = A * A;
    if (A.norm() < 1e-200) break;
  }
  return 0.5 * (X + X.transpose());
}

// X = sum_k A^k Q A'^k by doubling
MatrixXd dlyap_axat(MatrixXd A, const MatrixXd& Q) {
  MatrixXd X = Q;
  for (int it = 0; it < 200; ++it) {
    X = X + A * X * A.transpose();
    A = A * A;
    if (A.norm() < 1e-200) break;
  }
  return 0.5 * (X + X.transpose());
}

MatrixXd matrix_sqrt(const MatrixXd& M) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(M);
  VectorXd w = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * w.asDiagonal() * es.eigenvectors().transpose();
}

MatrixXd matrix_inv_sqrt(const MatrixXd& M) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(M);
  VectorXd w = es.eigenvalues();
  for (int i = 0; i < w.size(); ++i) w[i] = w[i] > 0 ? 1.0 / std::sqrt(w[i]) : 0.0;
  return es.eigenvectors() * w.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

bool Box::contains(const VectorXd& x, double tol) const {
  for (int d = 0; d < dim(); ++d)
    if (x[d] < lo[d] - tol || x[d] > hi[d] + tol) return false;
  return true;
}

void LinearSystem::validate() const {
  if (A.rows() != A.cols()) throw std::invalid_argument("A must be square");
  if (B.rows() != A.rows() || B_w.rows() != A.rows() || C.cols() != A.cols())
    throw std::invalid_argument("system dimensions inconsistent");
  if (state_box.dim() != n() || input_box.dim() != m() || x0.size() != n())
    throw std::invalid_argument("box or x0 dimension mismatch");
  for (int d = 0; d < state_box.dim(); ++d)
    if (!(state_box.lo[d] <= state_box.hi[d])) throw std::invalid_argument("empty state box");
  for (int d = 0; d < input_box.dim(); ++d)
    if (!(input_box.lo[d] <= input_box.hi[d])) throw std::invalid_argument("empty input box");
}

int GridSpec::num_cells() const {
  int n = 1;
  for (int c : cells) n *= c;
  return n;
}

VectorXd GridSpec::half_widths() const {
  VectorXd h(dim());
  for (int d = 0; d < dim(); ++d) h[d] = 0.5 * width(d);
  return h;
}

std::vector<int> GridSpec::unflatten(int flat_index) const {
  std::vector<int> idx(dim());
  for (int d = dim() - 1; d >= 0; --d) {
    idx[d] = flat_index % cells[d];
    flat_index /= cells[d];
  }
  return idx;
}

VectorXd GridSpec::center(int flat_index) const {
  std::vector<int> idx = unflatten(flat_index);
  VectorXd c(dim());
  for (int d = 0; d < dim(); ++d) c[d] = lo[d] + (idx[d] + 0.5) * width(d);
  return c;
}

std::optional<int> GridSpec::cell_of(const VectorXd& x) const {
  int flat = 0;
  for (int d = 0; d < dim(); ++d) {
    if (x[d] < lo[d] || x[d] > hi[d]) return std::nullopt;
    int i = static_cast<int>((x[d] - lo[d]) / width(d));
    if (i == cells[d]) --i;  // upper boundary
    flat = flat * cells[d] + i;
  }
  return flat;
}

std::vector<VectorXd> input_grid(const Box& box, const std::vector<int>& points) {
  int dim = box.dim();
  if (static_cast<int>(points.size()) != dim) throw std::invalid_argument("input grid dimension mismatch");
  int total = 1;
  for (int p : points) {
    if (p < 1) throw std::invalid_argument("input grid needs at least one point per dimension");
    total *= p;
  }
  std::vector<VectorXd> out;
  out.reserve(total);
  for (int k = 0; k < total; ++k) {
    VectorXd u(dim);
    int rem = k;
    for (int d = dim - 1; d >= 0; --d) {
      int i = rem % points[d];
      rem /= points[d];
      u[d] = points[d] == 1 ? 0.5 * (box.lo[d] + box.hi[d])
                            : box.lo[d] + i * (box.hi[d] - box.lo[d]) / (points[d] - 1);
    }
    out.push_back(u);
  }
  return out;
}

double spectral_radius(const MatrixXd& A) {
  double nrm = A.norm();
  if (nrm == 0.0) return 0.0;
  MatrixXd M = A / nrm;
  double log_scale = std::log(nrm);
  double power = 1.0;
  for (int it = 0; it < 40; ++it) {
    M = M * M;
    power *= 2.0;
    double n2 = M.norm();
    if (n2 == 0.0) return 0.0;
    log_scale = 2.0 * log_scale + std::log(n2) / 1.0;
    M /= n2;
    // rho estimate = |A^power|^(1/power)
  }
  return std::exp(log_scale / power);
}

ReducedModel reduce_balanced(const LinearSystem& sys, const MatrixXd& K, int n_s) {
  const int n = sys.n();
  if (K.rows() != sys.m() || K.cols() != n) throw std::invalid_argument("feedback gain dimensions");
  if (n_s < 1 || n_s > n) throw std::invalid_argument("reduction order out of range");
  MatrixXd Abar = sys.A + sys.B * K;
  double sr = spectral_radius(Abar);
  if (!(sr < 1.0)) throw std::runtime_error("A + B K is not Schur stable (spectral radius " +
                                            std::to_string(sr) + ")");
  MatrixXd Bin(n, sys.m() + sys.nw());
  Bin << sys.B, sys.B_w;
  MatrixXd Wc = dlyap_axat(Abar, Bin * Bin.transpose());
  MatrixXd Wo = dlyap_atxa(Abar, sys.C.transpose() * sys.C);

  ReducedModel red;
  auto chol = [&](MatrixXd W) {
    Eigen::LLT<MatrixXd> llt(W);
    if (llt.info() != Eigen::Success) {
      red.gramian_regularized = true;
      llt.compute(W + 1e-12 * MatrixXd::Identity(n, n));
      if (llt.info() != Eigen::Success) throw std::runtime_error("Gramian not positive definite");
    }
    return MatrixXd(llt.matrixL());
  };
  MatrixXd S = chol(Wc), Rf = chol(Wo);
  Eigen::JacobiSVD<MatrixXd> svd(Rf.transpose() * S, Eigen::ComputeFullU | Eigen::ComputeFullV);
  VectorXd sv = svd.singularValues();
  red.hankel = sv;
  VectorXd inv_sqrt = sv.cwiseMax(1e-300).cwiseSqrt().cwiseInverse();
  MatrixXd T = inv_sqrt.asDiagonal() * svd.matrixU().transpose() * Rf.transpose();
  MatrixXd Tinv = S * svd.matrixV() * inv_sqrt.asDiagonal();

  MatrixXd Ab = T * Abar * Tinv;
  red.A_s = Ab.topLeftCorner(n_s, n_s);
  red.B_s = (T * sys.B).topRows(n_s);
  red.B_sw = (T * sys.B_w).topRows(n_s);
  red.C_s = (sys.C * Tinv).leftCols(n_s);
  red.P_bal = Tinv.leftCols(n_s);
  return red;
}

InterfaceMatrices solve_interface_matrices(const LinearSystem& sys, const ReducedModel& red) {
  const int n = sys.n(), m = sys.m(), p = sys.p();
  const int ns = static_cast<int>(red.A_s.rows());
  InterfaceMatrices out;
  if (ns == n && (red.A_s - sys.A).norm() < 1e-12 && (red.B_s - sys.B).norm() < 1e-12 &&
      (red.C_s - sys.C).norm() < 1e-12) {
    out.P = MatrixXd::Identity(n, n);
    out.Q = MatrixXd::Zero(m, n);
    out.R = MatrixXd::Identity(m, m);
    return out;
  }
  // stacked least squares over [vec(P); vec(Q)] (column-major vec)
  const int rows = n * ns + p * ns;
  const int colsP = n * ns, colsQ = m * ns;
  MatrixXd Msys = MatrixXd::Zero(rows, colsP + colsQ);
  VectorXd rhs = VectorXd::Zero(rows);
  MatrixXd In = MatrixXd::Identity(n, n);
  auto kron = [](const MatrixXd& X, const MatrixXd& Y) {
    MatrixXd Z(X.rows() * Y.rows(), X.cols() * Y.cols());
    for (int i = 0; i < X.rows(); ++i)
      for (int j = 0; j < X.cols(); ++j) Z.block(i * Y.rows(), j * Y.cols(), Y.rows(), Y.cols()) = X(i, j) * Y;
    return Z;
  };
  MatrixXd Ins = MatrixXd::Identity(ns, ns);
  Msys.block(0, 0, n * ns, colsP) = kron(red.A_s.transpose(), In) - kron(Ins, sys.A);
  Msys.block(0, colsP, n * ns, colsQ) = -kron(Ins, sys.B);
  Msys.block(n * ns, 0, p * ns, colsP) = kron(Ins, sys.C);
  for (int j = 0; j < ns; ++j)
    for (int i = 0; i < p; ++i) rhs[n * ns + j * p + i] = red.C_s(i, j);

  VectorXd sol = Msys.colPivHouseholderQr().solve(rhs);
  out.P = Eigen::Map<MatrixXd>(sol.data(), n, ns);
  out.Q = Eigen::Map<MatrixXd>(sol.data() + colsP, m, ns);
  out.sylvester_residual = (out.P * red.A_s - sys.A * out.P - sys.B * out.Q).norm();
  out.output_residual = (sys.C * out.P - red.C_s).norm();
  out.R = sys.B.colPivHouseholderQr().solve(out.P * red.B_s);
  return out;
}

MatrixXd default_M(const MatrixXd& Abar, const MatrixXd& C, double rho, double eta) {
  const int n = static_cast<int>(Abar.rows());
  if (!(rho > 0)) throw std::invalid_argument("rho must be positive");
  if (!(spectral_radius(Abar) < rho))
    throw std::runtime_error("Abar spectral radius not below rho in default_M");
  MatrixXd W = C.transpose() * C + eta * MatrixXd::Identity(n, n);
  return dlyap_atxa(Abar / rho, W);
}

MatrixXd invariant_ellipsoid_M(const MatrixXd& Abar, const MatrixXd& C,
                               const std::vector<VectorXd>& generators) {
  const int n = static_cast<int>(Abar.rows());
  MatrixXd D = MatrixXd::Zero(n, n);
  for (const VectorXd& g : generators) D += g * g.transpose();
  D *= static_cast<double>(generators.size());
  if (D.norm() < 1e-300) return default_M(Abar, C);

  double sr = spectral_radius(Abar);
  double span = 1.0 / (sr * sr) - 1.0 - 1e-6;
  if (!(span > 0)) throw std::runtime_error("Abar not Schur stable in invariant_ellipsoid_M");
  double lo = std::min(0.01, 0.5 * span);
  MatrixXd best_G;
  double best_obj = kInf;
  const int kGamma = 120;
  for (int k = 0; k < kGamma; ++k) {
    double gamma = lo + (span - lo) * k / (kGamma - 1);
    MatrixXd G = dlyap_axat(std::sqrt(1.0 + gamma) * Abar,
                            (1.0 + 1.0 / gamma) * D + 1e-14 * D.trace() * MatrixXd::Identity(n, n));
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(C * G * C.transpose());
    double obj = es.eigenvalues().maxCoeff();
    if (obj < best_obj) {
      best_obj = obj;
      best_G = G;
    }
  }
  MatrixXd M = best_obj * (1.0 + 1e-9) * best_G.inverse();
  return 0.5 * (M + M.transpose());
}

double contraction_factor(const MatrixXd& Abar, const MatrixXd& M) {
  const int n = static_cast<int>(Abar.rows());
  MatrixXd H = Abar.transpose() * M * Abar;
  if (H.norm() < 1e-300) return 0.0;
  Eigen::LLT<MatrixXd> llt(M);
  if (llt.info() != Eigen::Success) throw std::invalid_argument("M must be positive definite");
  VectorXd x(n);
  rng::Stream st(0x5eedULL);
  for (int i = 0; i < n; ++i) x[i] = 1.0 + 0.1 * st.uniform();
  x /= x.norm();
  double lam = 0.0;
  for (int it = 0; it < 100000; ++it) {
    VectorXd y = llt.solve(H * x);
    double ynorm = y.norm();
    if (ynorm < 1e-300) return 0.0;
    double lam_new = x.dot(H * x) / x.dot(M * x);
    y /= ynorm;
    x = y;
    if (it > 2 && std::abs(lam_new - lam) < 1e-10 * std::max(1.0, std::abs(lam_new)))
      return std::sqrt(std::max(0.0, lam_new));
    lam = lam_new;
  }
  throw std::runtime_error("contraction_factor power iteration did not converge");
}

double noise_quantile(const MatrixXd& Bwbar, const MatrixXd& M, double delta,
                      std::uint64_t seed, int n_samples) {
  if (Bwbar.norm() == 0.0) return 0.0;
  if (delta <= 0.0) return kInf;  // Gaussian support is unbounded
  if (delta >= 1.0) return 0.0;
  if (n_samples < 100000) throw std::invalid_argument("noise_quantile needs at least 1e5 samples");
  const int nw = static_cast<int>(Bwbar.cols());
  MatrixXd Msq = matrix_sqrt(M);
  MatrixXd G = Msq * Bwbar;  // |Bwbar w|_M = |G w|_2

  std::vector<double> vals(n_samples);
  const int chunk = 4096;
  const int nchunks = (n_samples + chunk - 1) / chunk;
  parallel::parallel_for(0, nchunks, robust_dp::num_threads(), [&](int clo, int chi) {
    for (int c = clo; c < chi; ++c) {
      rng::Stream st(rng::derive_seed(seed, static_cast<std::uint64_t>(c)));
      int begin = c * chunk, end = std::min(n_samples, begin + chunk);
      VectorXd w(nw);
      for (int k = begin; k < end; ++k) {
        for (int d = 0; d < nw; ++d) w[d] = st.gaussian();
        vals[k] = (G * w).norm();
      }
    }
  });
  std::sort(vals.begin(), vals.end());

  // upper end of the one-sided 99% CI for the (1-delta)-quantile: smallest k
  // with P(Bin(n, 1-delta) <= k-1) >= 0.99, r = k-th order statistic
  const double p = 1.0 - delta;
  auto binom_cdf = [&](int k) {  // P(Bin(n,p) <= k)
    if (k < 0) return 0.0;
    if (k >= n_samples) return 1.0;
    return boost::math::ibetac(static_cast<double>(k + 1), static_cast<double>(n_samples - k), p);
  };
  int lo = 0, hi = n_samples;  // search smallest k with cdf(k-1) >= 0.99
  while (lo < hi) {
    int mid = (lo + hi) / 2;
    if (binom_cdf(mid - 1) >= 0.99)
      hi = mid;
    else
      lo = mid + 1;
  }
  if (lo > n_samples) return kInf;
  if (lo == 0) lo = 1;
  if (lo > n_samples) return kInf;
  return vals[lo - 1];
}

double ball_max_norm(const MatrixXd& Atil, const VectorXd& ctil, double radius) {
  const int n = static_cast<int>(Atil.rows());
  if (radius <= 0.0) return ctil.norm();
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(Atil.transpose() * Atil);
  VectorXd w = es.eigenvalues();
  MatrixXd V = es.eigenvectors();
  VectorXd g = V.transpose() * (Atil.transpose() * ctil);
  double wmax = w[n - 1];
  double cc = ctil.squaredNorm();

  auto z_norm2 = [&](double mu) {
    double s = 0.0;
    for (int i = 0; i < n; ++i) {
      double d = mu - w[i];
      s += (g[i] * g[i]) / (d * d);
    }
    return s;
  };
  double r2 = radius * radius;
  double gmax_top = 0.0;
  for (int i = 0; i < n; ++i)
    if (wmax - w[i] < 1e-12 * std::max(1.0, std::abs(wmax))) gmax_top += g[i] * g[i];

  double mu_lo = wmax + 1e-14 * std::max(1.0, std::abs(wmax));
  if (gmax_top < 1e-300 && z_norm2(mu_lo) <= r2) {
    // hard case: top eigen-direction is free on the boundary
    VectorXd zt(n);
    for (int i = 0; i < n; ++i) {
      double d = wmax - w[i];
      zt[i] = std::abs(d) > 1e-12 * std::max(1.0, std::abs(wmax)) ? g[i] / (0.0 - (w[i] - wmax)) : 0.0;
    }
    double rem = std::max(0.0, r2 - zt.squaredNorm());
    double obj = 0.0;
    for (int i = 0; i < n; ++i) obj += w[i] * zt[i] * zt[i] + 2.0 * g[i] * zt[i];
    obj += wmax * rem + cc;
    return std::sqrt(std::max(0.0, obj));
  }
  double hi = wmax + std::sqrt(g.squaredNorm()) / radius + 1.0;
  while (z_norm2(hi) > r2) hi *= 2.0;
  double lo = mu_lo;
  for (int it = 0; it < 200; ++it) {
    double mid = 0.5 * (lo + hi);
    if (z_norm2(mid) > r2)
      lo = mid;
    else
      hi = mid;
  }
  double mu = 0.5 * (lo + hi);
  VectorXd z(n);
  for (int i = 0; i < n; ++i) z[i] = g[i] / (mu - w[i]);
  VectorXd zz = V * z;
  return (Atil * zz + ctil).norm();
}

namespace {

// worst-case one-step M-norm of Abar xbar + vertex over the eps-ball,
// vertices enumerating the finite inputs, half-cell corners and (for scalar
// noise) the noise interval endpoints
struct A3Checker {
  MatrixXd Atil;  // Msq Abar Minvsq
  MatrixXd Msq;
  std::vector<VectorXd> vertices;  // disturbance offsets in state coordinates
  double r_delta_extra = 0.0;      // added after the ball max (vector noise)

  double worst_excess(double eps) const {
    double worst = -kInf;
    for (const VectorXd& v : vertices) {
      double val = ball_max_norm(Atil, Msq * v, eps) + r_delta_extra;
      worst = std::max(worst, val - eps);
    }
    return worst;
  }
};

}  // namespace

SimRelCert certify_relation(const LinearSystem& sys, const ReducedModel& red,
                            const InterfaceMatrices& iface, const MatrixXd& K,
                            const GridSpec& grid, const std::vector<VectorXd>& inputs,
                            const CertOptions& opt) {
  const int n = sys.n();
  const int ns = static_cast<int>(red.A_s.rows());
  if (ns > 20) throw std::invalid_argument("half-cell vertex enumeration capped at 20 dimensions");

  SimRelCert cert;
  cert.delta = opt.delta;
  cert.P = iface.P;
  cert.Q = iface.Q;
  cert.R = iface.R;
  cert.K = K;
  cert.A_s = red.A_s;
  cert.B_s = red.B_s;
  cert.B_sw = red.B_sw;
  cert.C_s = red.C_s;
  cert.Abar = sys.A + sys.B * K;
  cert.Bbar = sys.B * iface.R - iface.P * red.B_s;
  cert.Bwbar = sys.B_w - iface.P * red.B_sw;
  cert.sylvester_residual = std::max(iface.sylvester_residual, iface.output_residual);
  if (cert.sylvester_residual > 1e-8)
    throw std::runtime_error("Sylvester residual " + std::to_string(cert.sylvester_residual) +
                             " above tolerance; certification impossible with this lifting");

  // weighting matrix
  {
    std::vector<VectorXd> gens;
    // generator set for the M shape: extreme input image, half-cell image, noise column
    VectorXd beta = grid.half_widths();
    VectorXd worst_u = VectorXd::Zero(n);
    for (const VectorXd& u : inputs)
      if ((cert.Bbar * u).norm() >= worst_u.norm()) worst_u = cert.Bbar * u;
    gens.push_back(worst_u);
    {
      VectorXd pb = VectorXd::Zero(n);
      for (int corner = 0; corner < (1 << ns); ++corner) {
        VectorXd b(ns);
        for (int d = 0; d < ns; ++d) b[d] = ((corner >> d) & 1) ? beta[d] : -beta[d];
        VectorXd cand = iface.P * b;
        if (cand.norm() > pb.norm()) pb = cand;
      }
      gens.push_back(pb);
    }
    if (cert.Bwbar.norm() > 0 && opt.delta > 0 && sys.nw() == 1) {
      // Phi^{-1}(1 - delta/2) for the generator scale, by bisection
      double q = 1.0;
      double target = 1.0 - opt.delta / 2.0;
      double a = 0.0, b2 = 40.0;
      for (int it = 0; it < 200; ++it) {
        double mid = 0.5 * (a + b2);
        (normal_cdf(mid) < target ? a : b2) = mid;
      }
      q = 0.5 * (a + b2);
      gens.push_back(q * cert.Bwbar.col(0));
    } else if (cert.Bwbar.norm() > 0 && opt.delta > 0) {
      gens.push_back(2.0 * cert.Bwbar.rowwise().norm());
    }
    if (opt.M)
      cert.M = *opt.M;
    else if (opt.invariant_ellipsoid)
      cert.M = invariant_ellipsoid_M(cert.Abar, sys.C, gens);
    else
      cert.M = default_M(cert.Abar, sys.C, opt.rho, opt.eta);
  }

  cert.lambda = contraction_factor(cert.Abar, cert.M);

  // triangle terms
  cert.b_u = 0.0;
  for (const VectorXd& u : inputs) cert.b_u = std::max(cert.b_u, m_norm(cert.Bbar * u, cert.M));
  cert.b_beta = 0.0;
  VectorXd half = grid.half_widths();
  for (int corner = 0; corner < (1 << ns); ++corner) {
    VectorXd b(ns);
    for (int d = 0; d < ns; ++d) b[d] = ((corner >> d) & 1) ? half[d] : -half[d];
    cert.b_beta = std::max(cert.b_beta, m_norm(iface.P * b, cert.M));
  }
  cert.r_delta = noise_quantile(cert.Bwbar, cert.M, opt.delta, opt.noise_seed, opt.noise_samples);
  cert.min_eps_triangle = cert.lambda < 1.0
                              ? (cert.b_u + cert.b_beta + cert.r_delta) / (1.0 - cert.lambda)
                              : kInf;

  // exact per-vertex A3 check
  A3Checker chk;
  chk.Msq = matrix_sqrt(cert.M);
  MatrixXd Minvsq = matrix_inv_sqrt(cert.M);
  chk.Atil = chk.Msq * cert.Abar * Minvsq;
  const bool scalar_noise = sys.nw() == 1;
  double noise_scale = 0.0;
  if (cert.Bwbar.norm() > 0) {
    if (std::isinf(cert.r_delta)) {
      chk.r_delta_extra = kInf;
    } else if (scalar_noise) {
      noise_scale = cert.r_delta / m_norm(cert.Bwbar.col(0), cert.M);
    } else {
      chk.r_delta_extra = cert.r_delta;
    }
  }
  for (const VectorXd& u : inputs) {
    for (int corner = 0; corner < (1 << ns); ++corner) {
      VectorXd b(ns);
      for (int d = 0; d < ns; ++d) b[d] = ((corner >> d) & 1) ? half[d] : -half[d];
      VectorXd base = cert.Bbar * u + iface.P * b;
      if (scalar_noise && noise_scale > 0) {
        chk.vertices.push_back(base + noise_scale * cert.Bwbar.col(0));
        chk.vertices.push_back(base - noise_scale * cert.Bwbar.col(0));
      } else {
        chk.vertices.push_back(base);
      }
    }
  }

  if (cert.lambda < 1.0 && !std::isinf(chk.r_delta_extra)) {
    double hi = std::min(cert.min_eps_triangle, 1e6) + 1e-9;
    double lo = 0.0;
    if (chk.worst_excess(hi) <= 0.0) {
      for (int it = 0; it < 80; ++it) {
        double mid = 0.5 * (lo + hi);
        if (chk.worst_excess(mid) <= 0.0)
          hi = mid;
        else
          lo = mid;
      }
      cert.min_eps = hi * (1.0 + 1e-9) + 1e-12;
    } else {
      cert.min_eps = kInf;
    }
  } else {
    cert.min_eps = kInf;
  }

  cert.eps = opt.eps ? *opt.eps : cert.min_eps;

  // A3 at the chosen eps
  if (std::isfinite(cert.eps) && !std::isinf(chk.r_delta_extra)) {
    double excess = chk.worst_excess(cert.eps);
    cert.a3.ok = excess <= 0.0;
    cert.a3.margin = -excess;
  } else {
    cert.a3.ok = false;
    cert.a3.note = "unbounded disturbance (delta = 0 with Bwbar != 0)";
  }

  // A2: C_s = C P and M >= C'C
  {
    double cp_resid = (sys.C * iface.P - red.C_s).norm();
    MatrixXd Dm = cert.M - sys.C.transpose() * sys.C;
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(0.5 * (Dm + Dm.transpose()));
    double min_eig = es.eigenvalues().minCoeff();
    bool psd = min_eig >= -1e-9 * std::max(1.0, cert.M.norm());
    cert.a2.ok = cp_resid <= 1e-9 && psd;
    cert.a2.margin = min_eig;
    if (cp_resid > 1e-9) cert.a2.note = "C_s != C P";
  }

  // interface condition: R uhat + Q xhat + K xbar inside U
  {
    Eigen::LLT<MatrixXd> llt(cert.M);
    MatrixXd KMK = K * llt.solve(K.transpose());
    double margin = kInf;
    int ncorner = 1 << grid.dim();
    for (const VectorXd& u : inputs) {
      for (int corner = 0; corner < ncorner; ++corner) {
        VectorXd xc(grid.dim());
        for (int d = 0; d < grid.dim(); ++d) xc[d] = ((corner >> d) & 1) ? grid.hi[d] : grid.lo[d];
        VectorXd v = cert.R * u + cert.Q * xc;
        for (int r = 0; r < sys.m(); ++r) {
          double slack = std::isfinite(cert.eps) ? cert.eps * std::sqrt(std::max(0.0, KMK(r, r))) : kInf;
          margin = std::min(margin, v[r] - slack - sys.input_box.lo[r]);
          margin = std::min(margin, sys.input_box.hi[r] - v[r] - slack);
        }
      }
    }
    cert.interface_cond.ok = margin >= -1e-12;
    cert.interface_cond.margin = margin;
  }

  // A1: initial state
  {
    InitialState init = initial_abstract_state(sys.x0, iface.P, cert.M, grid,
                                               std::isfinite(cert.eps) ? cert.eps : 0.0);
    cert.a1.ok = init.ok;
    cert.a1.margin = (std::isfinite(cert.eps) ? cert.eps : 0.0) - init.residual;
    if (init.cell < 0) cert.a1.note = "projected initial state outside the grid";
    cert.initial_cell = init.cell;
    cert.xs0 = init.xs0;
  }

  cert.passed = cert.lambda < 1.0 && cert.a1.ok && cert.a2.ok && cert.a3.ok &&
                cert.interface_cond.ok && std::isfinite(cert.eps);
  return cert;
}

InitialState initial_abstract_state(const VectorXd& x0, const MatrixXd& P, const MatrixXd& M,
                                    const GridSpec& grid, double eps) {
  InitialState out;
  MatrixXd PMP = P.transpose() * M * P;
  out.xs0 = PMP.ldlt().solve(P.transpose() * M * x0);
  auto cell = grid.cell_of(out.xs0);
  if (!cell) {
    out.ok = false;
    return out;
  }
  out.cell = *cell;
  VectorXd xhat0 = grid.center(*cell);
  VectorXd err = x0 - P * xhat0;
  out.residual = m_norm(err, M);
  out.ok = out.residual <= eps;
  return out;
}

mdp::FiniteGmdp grid_abstraction(const MatrixXd& A_s, const MatrixXd& B_s, const MatrixXd& B_sw,
                                 const MatrixXd& C_s, const GridSpec& grid,
                                 const std::vector<VectorXd>& inputs) {
  const int ns = static_cast<int>(A_s.rows());
  if (grid.dim() != ns) throw std::invalid_argument("grid dimension mismatch");
  MatrixXd cov = B_sw * B_sw.transpose();
  for (int i = 0; i < ns; ++i)
    for (int j = 0; j < ns; ++j)
      if (i != j && std::abs(cov(i, j)) > 1e-12)
        throw std::invalid_argument("noise covariance must be diagonal; pre-whiten the model");
  VectorXd sigma = cov.diagonal().cwiseMax(0.0).cwiseSqrt();

  const int ncells = grid.num_cells();
  const int nu = static_cast<int>(inputs.size());
  const int p = static_cast<int>(C_s.rows());
  constexpr double kDropTol = 1e-15;

  mdp::FiniteGmdp g;
  g.num_states = ncells;
  g.num_actions = nu;
  g.output_dim = p;
  g.kernel.resize(static_cast<std::size_t>(ncells) * nu);
  g.outputs.resize(static_cast<std::size_t>(ncells) * p);
  for (int i = 0; i < ncells; ++i) {
    VectorXd y = C_s * grid.center(i);
    for (int d = 0; d < p; ++d) g.outputs[static_cast<std::size_t>(i) * p + d] = y[d];
  }

  // per-dim cell probabilities for a given mean, significant window only
  struct DimProbs {
    int first = 0;
    std::vector<double> p;
    double total = 0.0;
  };
  auto dim_probs = [&](int d, double mean) {
    DimProbs dp;
    const int nc = grid.cells[d];
    if (sigma[d] == 0.0) {
      // degenerate: unit mass on the containing cell, or none if outside
      if (mean < grid.lo[d] || mean > grid.hi[d]) return dp;
      int idx = static_cast<int>((mean - grid.lo[d]) / grid.width(d));
      if (idx == nc) --idx;
      dp.first = idx;
      dp.p = {1.0};
      dp.total = 1.0;
      return dp;
    }
    double w = grid.width(d);
    int lo_cell = std::max(0, static_cast<int>(std::floor((mean - 9.0 * sigma[d] - grid.lo[d]) / w)));
    int hi_cell = std::min(nc - 1, static_cast<int>(std::ceil((mean + 9.0 * sigma[d] - grid.lo[d]) / w)));
    if (lo_cell > hi_cell) return dp;
    dp.first = lo_cell;
    dp.p.resize(hi_cell - lo_cell + 1);
    double prev = normal_cdf((grid.lo[d] + lo_cell * w - mean) / sigma[d]);
    for (int c = lo_cell; c <= hi_cell; ++c) {
      double next = normal_cdf((grid.lo[d] + (c + 1) * w - mean) / sigma[d]);
      dp.p[c - lo_cell] = std::max(0.0, next - prev);
      dp.total += dp.p[c - lo_cell];
      prev = next;
    }
    return dp;
  };

  parallel::parallel_for(0, ncells, robust_dp::num_threads(), [&](int lo, int hi) {
    std::vector<DimProbs> dps(ns);
    for (int i = lo; i < hi; ++i) {
      VectorXd xc = grid.center(i);
      for (int a = 0; a < nu; ++a) {
        VectorXd mean = A_s * xc + B_s * inputs[a];
        bool empty = false;
        for (int d = 0; d < ns; ++d) {
          dps[d] = dim_probs(d, mean[d]);
          if (dps[d].p.empty()) empty = true;
        }
        mdp::KernelRow& row = g.row(a, i);
        if (empty) {
          row.sink = 1.0;
          continue;
        }
        // outer product over dimensions, dropping tiny entries into the sink
        std::vector<int> idx(ns, 0);
        double kept = 0.0;
        while (true) {
          double pr = 1.0;
          int flat = 0;
          for (int d = 0; d < ns; ++d) {
            pr *= dps[d].p[idx[d]];
            flat = flat * grid.cells[d] + (dps[d].first + idx[d]);
          }
          if (pr >= kDropTol) {
            row.cols.push_back(static_cast<std::uint32_t>(flat));
            row.probs.push_back(pr);
            kept += pr;
          }
          int d = ns - 1;
          while (d >= 0 && ++idx[d] == static_cast<int>(dps[d].p.size())) idx[d--] = 0;
          if (d < 0) break;
        }
        row.sink = std::max(0.0, 1.0 - kept);
      }
    }
  });
  return g;
}

VectorXd interface_apply(const SimRelCert& cert, const Box& input_box, const VectorXd& uhat,
                         const VectorXd& xhat, const VectorXd& x, bool clamp, bool* clamped) {
  VectorXd u = cert.R * uhat + cert.Q * xhat + cert.K * (x - cert.P * xhat);
  if (clamped) *clamped = false;
  if (!input_box.contains(u, 1e-9)) {
    if (!clamp) throw std::runtime_error("refined input left the input box");
    for (int d = 0; d < input_box.dim(); ++d) u[d] = std::clamp(u[d], input_box.lo[d], input_box.hi[d]);
    if (clamped) *clamped = true;
  }
  return u;
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z * 0.7071067811865475244); }

}  // namespace rsynth::lti
