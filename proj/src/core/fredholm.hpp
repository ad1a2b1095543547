#ifndef MEP_CORE_FREDHOLM_HPP
#define MEP_CORE_FREDHOLM_HPP

#include <atomic>

#include "core/numerics.hpp"
#include "core/types.hpp"

namespace mep {

// Discretized first-kind Fredholm system for one z-group: A a = b with
// A_ij = E[ pi_j(O) | X = x_i, Z = z_ref ]. Rows are probability vectors.
// The (w,y) quadrature nodes per support point are kept so right-hand sides
// can be assembled without rebuilding.
struct FredholmSystem {
    MatrixXd A;
    VectorXd z_ref;
    WorkingPrior prior;
    VectorXd beta;
    MatrixXd w_nodes;          // m x n_w, row i holds nodes for x_i
    MatrixXd y_nodes;          // m x n_y
    VectorXd w_wts, y_wts;     // shared weights, each sums to 1
    VectorXd mean_at_support;  // m(x_j, z_ref, beta)
    // Truncated SVD of A. First-kind systems here can have singular values
    // down to 1e-11 (mean models that collapse many support points onto the
    // same conditional law); solving through those modes amplifies quadrature
    // noise into the corrections, so modes below cutoff * sigma_1 are dropped.
    Eigen::MatrixXd svd_u, svd_v;
    VectorXd svd_sigma;
    double sv_cutoff = 1e-3;
};

// Validation counters for long runs; enabled by the acceptance suite.
class FredholmAudit {
public:
    static FredholmAudit& instance();
    void enable() { enabled_ = true; }
    void disable() { enabled_ = false; }
    bool enabled() const { return enabled_; }
    void reset();
    void record_row_sum_err(double e);
    void record_solve_residual(double rel);
    double max_row_sum_err() const { return row_sum_err_.load(); }
    double max_solve_rel_residual() const { return solve_rel_.load(); }
    long systems_built() const { return built_.load(); }
    long solves() const { return solved_.load(); }

private:
    std::atomic<bool> enabled_{false};
    std::atomic<double> row_sum_err_{0.0};
    std::atomic<double> solve_rel_{0.0};
    std::atomic<long> built_{0};
    std::atomic<long> solved_{0};
};

// pi_j(o) proportional to f_{Y|X,Z}(y, x_j, z) f_{W|X}(w, x_j) p_j, normalized.
// Computed with log-weights and max subtraction; if everything underflows the
// result is uniform and *underflow is set.
VectorXd posterior_weights(const Observation& o, VecRef beta, const WorkingPrior& prior,
                           const ModelSpec& spec, bool* underflow = nullptr);

// score_rhs, when non-null, receives the rhs_score matrix computed on the
// same quadrature pass.
FredholmSystem build_system(VecRef z_ref, VecRef beta, const WorkingPrior& prior,
                            const ModelSpec& spec, int n_w, int n_y,
                            MatrixXd* score_rhs = nullptr);

// b_i = E{ S*_beta(O, beta) | X = x_i, Z = z_ref }, one column per parameter.
MatrixXd rhs_score(const FredholmSystem& sys, const ModelSpec& spec);

// Center values at the stored w-nodes: entry (i, a) = center(w_nodes(i,a), z_ref).
MatrixXd center_at_w_nodes(const FredholmSystem& sys, const Center& center, VecRef beta_center);

// Q_i(zeta) = E[ I{ r(O, beta) < zeta } | X = x_i, Z = z_ref ]. The y integral
// is done in closed form (normal CDF), so the profile is smooth and exactly
// monotone in zeta; only w is integrated numerically.
VectorXd indicator_profile(const FredholmSystem& sys, const MatrixXd& center_vals, double zeta,
                           const ModelSpec& spec);

// Right-hand side of the a1 equation: rhs_i = sum_j p_j Q_j - Q_i.
VectorXd rhs_a1_from_profile(const VectorXd& q, const WorkingPrior& prior);
VectorXd rhs_a1(const FredholmSystem& sys, double zeta, const Center& center, VecRef beta_center,
                const ModelSpec& spec);

// Truncated-SVD solve of A a = rhs. Exact (to rounding) on the resolved
// subspace; throws when most of the right-hand side falls outside it.
MatrixXd fredholm_solve(const FredholmSystem& sys, MatRef rhs);

}  // namespace mep

#endif
