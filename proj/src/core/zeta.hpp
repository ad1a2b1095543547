#ifndef MEP_CORE_ZETA_HPP
#define MEP_CORE_ZETA_HPP

#include "core/semiparam.hpp"

namespace mep {

// Everything about one (data, beta, center) configuration that the zeta
// estimating equation and the influence-function assembly reuse across zeta
// evaluations: per-group Fredholm systems with a*, per-row posterior weights
// and scores, centers and residuals.
struct ZetaWorkspace {
    const Dataset* data = nullptr;
    const Center* center = nullptr;
    ModelSpec spec;
    VectorXd beta;
    std::vector<WorkingPrior> priors;
    ZGroups groups;
    GroupedFredholm gf;
    std::vector<MatrixXd> center_nodes;  // per group, m x n_w
    std::vector<VectorXd> pi_rows;       // per row, posterior weights (group prior)
    std::vector<VectorXd> sum_pi;        // per group, sum of pi over member rows
    std::vector<int> group_sizes;
    MatrixXd s_beta;                     // n x p, working scores
    MatrixXd s_eff;                      // n x p, efficient scores
    MatrixXd estar_a;                    // n x p, E*{a*|o}
    VectorXd center_vals;                // n
    VectorXd residuals;                  // n
    MatrixXd dr_dbeta;                   // n x p, -sign(y-c) * dc/dbeta

    int n() const { return data->n(); }
    int p() const { return static_cast<int>(beta.size()); }
};

ZetaWorkspace build_zeta_workspace(const Dataset& data, const ModelSpec& spec, VecRef beta,
                                   const std::vector<WorkingPrior>& priors, const ZGroups& groups,
                                   const Center& center, int n_w = 20, int n_y = 20);

// E[ I{ r(O,beta) < zeta } | X = x, Z = z ]; monotone non-decreasing in zeta.
double indicator_given_xz(double x, VecRef z, VecRef beta, double zeta, const Center& center,
                          const ModelSpec& spec, int n_w = 20);

// Per-zeta group solution of the a1 equation.
struct A1Solution {
    std::vector<VectorXd> a1;    // per group
    std::vector<double> q_bar;   // per group, E*[ I{r<zeta} | Z ]
};
A1Solution solve_a1(const ZetaWorkspace& ws, double zeta);

// G(zeta) = sum_i ( E*{a1 | o_i} + (1-alpha) - E*[I{r<zeta} | Z_i] ).
double estimating_function(double zeta, const ZetaWorkspace& ws, double alpha);
double estimating_function(double zeta, const Dataset& data, VecRef beta_hat,
                           const std::vector<WorkingPrior>& priors, const ZGroups& groups,
                           const Center& center, double alpha, const ModelSpec& spec, int n_w = 20,
                           int n_y = 20);

struct ZetaOptions {
    double tol = -1.0;  // < 0: 1e-9 * bracket width
    int max_iter = 200;
    int n_w = 20;
    int n_y = 20;
    bool with_variance = false;
};

ZetaEstimate fit_zeta(const Dataset& data, const FittedBeta& fitted, const Center& center,
                      double alpha, const ModelSpec& spec, const ZetaOptions& opts = {});
ZetaEstimate fit_zeta(const ZetaWorkspace& ws, double alpha, const ZetaOptions& opts = {});

// Plug-in c* of the sample-average influence function.
VectorXd c_hat(const ZetaWorkspace& ws, double zeta);

// Influence function value per observation at (beta, zeta).
VectorXd phi_all(const ZetaWorkspace& ws, double zeta, double alpha, VecRef c, double density);
double phi_hat(const Observation& o, const ZetaWorkspace& ws, double zeta, double alpha, VecRef c,
               double density);

// Asymptotic variance of Theorem-1 form with sample averages; returns v*/n,
// the squared standard error of zeta_hat.
double variance_v(const Dataset& data, const FittedBeta& fitted, double zeta_hat,
                  const Center& center, double alpha, const ModelSpec& spec, int n_w = 20,
                  int n_y = 20, double fd_step = 1e-4);

}  // namespace mep

#endif
