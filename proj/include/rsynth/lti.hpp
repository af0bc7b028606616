#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "rsynth/mdp.hpp"

namespace rsynth::lti {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct Box {
  VectorXd lo, hi;
  int dim() const { return static_cast<int>(lo.size()); }
  bool contains(const VectorXd& x, double tol = 0.0) const;
};

// x+ = A x + B u + B_w w,  y = C x, with w standard Gaussian.
struct LinearSystem {
  MatrixXd A, B, B_w, C;
  Box state_box, input_box;
  VectorXd x0;

  int n() const { return static_cast<int>(A.rows()); }
  int m() const { return static_cast<int>(B.cols()); }
  int nw() const { return static_cast<int>(B_w.cols()); }
  int p() const { return static_cast<int>(C.rows()); }
  void validate() const;
};

// Uniform rectangular partition; representative points are cell centers.
struct GridSpec {
  VectorXd lo, hi;
  std::vector<int> cells;

  int dim() const { return static_cast<int>(cells.size()); }
  int num_cells() const;
  double width(int d) const { return (hi[d] - lo[d]) / cells[d]; }
  VectorXd half_widths() const;
  VectorXd center(int flat_index) const;
  /// Flat cell index of a point, or nullopt when outside the grid box.
  std::optional<int> cell_of(const VectorXd& x) const;
  std::vector<int> unflatten(int flat_index) const;
};

/// Finite abstract input set: all points of a uniform grid over a sub-box of U.
std::vector<VectorXd> input_grid(const Box& box, const std::vector<int>& points);

struct ReducedModel {
  MatrixXd A_s, B_s, B_sw, C_s;
  MatrixXd P_bal;              // lifting from the balancing transform
  VectorXd hankel;             // singular values of the controlled system
  bool gramian_regularized = false;
};

// Balanced truncation of the controlled system (A+BK, [B B_w], C). Gramians
// by doubling iteration, balancing by Cholesky factors + SVD. The certificate
// path recomputes the lifting by solving the Sylvester system; P_bal is kept
// for the no-truncation case and for reporting.
ReducedModel reduce_balanced(const LinearSystem& sys, const MatrixXd& K, int n_s);

struct InterfaceMatrices {
  MatrixXd P, Q, R;
  double sylvester_residual = 0.0;  // |P A_s - A P - B Q|_F
  double output_residual = 0.0;     // |C P - C_s|_F
};

// Solves P A_s = A P + B Q together with C P = C_s for (P, Q) by least
// squares, then R = argmin |B R - P B_s|. For an unreduced model the exact
// solution P = I, Q = 0, R = I is returned directly.
InterfaceMatrices solve_interface_matrices(const LinearSystem& sys, const ReducedModel& red);

/// Gelfand spectral-radius estimate |A^(2^k)|^(1/2^k) by repeated squaring.
double spectral_radius(const MatrixXd& A);

// M = sum_k (Abar/rho)'^k (C'C + eta I) (Abar/rho)^k; guarantees
// M >= C'C and an M-norm contraction factor of Abar at most rho.
MatrixXd default_M(const MatrixXd& Abar, const MatrixXd& C, double rho = 1.0, double eta = 1e-9);

// Shape matrix of an ellipsoid that is robustly invariant for
// xbar+ = Abar xbar + d with d ranging over the symmetric generator set:
// scans the Minkowski weight gamma in G = (1+gamma) Abar G Abar' +
// (1+1/gamma) g * sum dd', minimizing the worst output gain, and returns
// M = lambda_max(C G C') (1+1e-9) G^{-1}. Falls back to default_M when all
// generators vanish.
MatrixXd invariant_ellipsoid_M(const MatrixXd& Abar, const MatrixXd& C,
                               const std::vector<VectorXd>& generators);

/// sqrt of the largest generalized eigenvalue of (Abar' M Abar, M), by power
/// iteration on M^{-1} Abar' M Abar to 1e-10.
double contraction_factor(const MatrixXd& Abar, const MatrixXd& M);

// (1-delta)-quantile of |Bwbar w|_M for standard Gaussian w: seeded Monte
// Carlo, reporting the upper endpoint of a one-sided 99% distribution-free
// confidence interval on the quantile (order statistics). Exactly 0 when
// Bwbar = 0, infinity when delta = 0 with Bwbar != 0.
double noise_quantile(const MatrixXd& Bwbar, const MatrixXd& M, double delta,
                      std::uint64_t seed, int n_samples);

/// Exact maximum of |Atil z + ctil|_2 over |z|_2 <= radius (trust-region).
double ball_max_norm(const MatrixXd& Atil, const VectorXd& ctil, double radius);

struct CertCondition {
  bool ok = false;
  double margin = 0.0;
  std::string note;
};

struct SimRelCert {
  double eps = 0.0;
  double delta = 0.0;
  MatrixXd M, P, Q, R, K;
  MatrixXd A_s, B_s, B_sw, C_s;
  MatrixXd Abar, Bbar, Bwbar;
  double lambda = 0.0;
  double b_u = 0.0, b_beta = 0.0, r_delta = 0.0;
  double min_eps = 0.0;           // bisected on the exact per-vertex check
  double min_eps_triangle = 0.0;  // (b_u + b_beta + r_delta) / (1 - lambda)
  double sylvester_residual = 0.0;
  CertCondition a1, a2, a3, interface_cond;
  bool passed = false;
  int initial_cell = -1;
  VectorXd xs0;
};

struct CertOptions {
  std::optional<double> eps;  // nullopt: minimize
  double delta = 0.0;
  std::optional<MatrixXd> M;  // explicit weighting matrix
  bool invariant_ellipsoid = false;
  double rho = 1.0;
  double eta = 1e-9;
  std::uint64_t noise_seed = 1;
  int noise_samples = 200000;
};

SimRelCert certify_relation(const LinearSystem& sys, const ReducedModel& red,
                            const InterfaceMatrices& iface, const MatrixXd& K,
                            const GridSpec& grid, const std::vector<VectorXd>& inputs,
                            const CertOptions& opt);

struct InitialState {
  int cell = -1;
  VectorXd xs0;
  double residual = 0.0;
  bool ok = false;
};

InitialState initial_abstract_state(const VectorXd& x0, const MatrixXd& P, const MatrixXd& M,
                                    const GridSpec& grid, double eps);

// Finite gMDP over the grid cells: Gaussian rectangle probabilities as
// products of one-dimensional normal CDF differences (B_sw B_sw' must be
// diagonal), mass outside the grid goes to the sink. Entries below 1e-15 are
// folded into the sink mass. Outputs are C_s times the cell centers.
mdp::FiniteGmdp grid_abstraction(const MatrixXd& A_s, const MatrixXd& B_s, const MatrixXd& B_sw,
                                 const MatrixXd& C_s, const GridSpec& grid,
                                 const std::vector<VectorXd>& inputs);

/// Refined input u = R uhat + Q xhat + K (x - P xhat); throws when u leaves
/// the input box unless clamping is enabled.
VectorXd interface_apply(const SimRelCert& cert, const Box& input_box, const VectorXd& uhat,
                         const VectorXd& xhat, const VectorXd& x, bool clamp = false,
                         bool* clamped = nullptr);

/// Normal CDF, |error| well below 1e-10.
double normal_cdf(double z);

}  // namespace rsynth::lti
