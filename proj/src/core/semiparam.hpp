#ifndef MEP_CORE_SEMIPARAM_HPP
#define MEP_CORE_SEMIPARAM_HPP

#include <functional>

#include "core/fredholm.hpp"

namespace mep {

// Per-group Fredholm machinery at one beta: the system plus the solved score
// correction a* (m x p).
struct GroupedFredholm {
    std::vector<FredholmSystem> systems;
    std::vector<MatrixXd> a_star;
};

GroupedFredholm build_grouped(VecRef beta, const std::vector<WorkingPrior>& priors,
                              const ZGroups& groups, const ModelSpec& spec, int n_w, int n_y,
                              bool with_score_correction);

// S*_beta(o, beta): posterior-weighted complete-data score. f_{W|X} carries no
// beta, so only the y-likelihood term contributes.
VectorXd working_score(const Observation& o, VecRef beta, const WorkingPrior& prior,
                       const ModelSpec& spec);

// S*_eff = S*_beta - E*{a*(X,Z) | o}.
VectorXd efficient_score(const Observation& o, VecRef beta, const WorkingPrior& prior,
                         const ModelSpec& spec, MatRef a_star);

// Batched per-group evaluation of posterior weights and scores; one entry per
// z-group, rows in dataset order within the group.
struct GroupScores {
    std::vector<int> rows;
    MatrixXd pi;     // n_g x m
    MatrixXd sbeta;  // n_g x p working scores
    MatrixXd seff;   // n_g x p efficient scores
};

std::vector<GroupScores> grouped_scores(const Dataset& data, const ModelSpec& spec,
                                        const std::vector<WorkingPrior>& priors,
                                        const ZGroups& groups, VecRef beta,
                                        const GroupedFredholm& gf);

using PriorBuilder = std::function<std::vector<WorkingPrior>(const Dataset&, const ZGroups&)>;

struct FitOptions {
    double tol = -1.0;       // < 0 means 1e-6 * n
    int max_iter = 50;
    int n_w = 20;
    int n_y = 20;
    int kmeans_iter = 100;
    std::uint64_t kmeans_seed = 0;
    // Statistical acceptance floor: a coordinate k counts as solved once
    // |F_k| <= noise_tol_frac * sqrt(sum_i S_eff_k(o_i)^2). The equation has
    // sampling noise of exactly that scale, and its exact sample roots drift
    // far along weakly identified directions, so demanding |F| = 0 harms the
    // estimate rather than helping it.
    double noise_tol_frac = 0.1;
};

// Newton solve of sum_i S*_eff(O_i, beta) = 0 with a finite-difference
// Jacobian and step halving; a* is recomputed at every evaluation point.
FittedBeta fit_beta(const Dataset& data, const ModelSpec& spec, const PriorBuilder& prior_builder,
                    VecRef init, const FitOptions& opts = {});

FittedBeta fit_beta_grouped(const Dataset& data, const ModelSpec& spec,
                            const std::vector<WorkingPrior>& priors, const ZGroups& groups,
                            VecRef init, const FitOptions& opts = {});

// Equation value at beta (sum of efficient scores); exposed for diagnostics.
VectorXd efficient_score_sum(const Dataset& data, const ModelSpec& spec,
                             const std::vector<WorkingPrior>& priors, const ZGroups& groups,
                             VecRef beta, int n_w, int n_y);

// Log-likelihood of the data under the working joint law (eta2 constant
// dropped): sum_i log sum_j p_j f_Y(y_i | x_j, z_i) f_W(w_i | x_j).
double working_loglik(const Dataset& data, const ModelSpec& spec,
                      const std::vector<WorkingPrior>& priors, const ZGroups& groups, VecRef beta);

// Sum and per-coordinate sum of squares of the efficient scores.
struct ScoreStats {
    VectorXd sum;
    VectorXd sumsq;
};
ScoreStats efficient_score_stats(const Dataset& data, const ModelSpec& spec,
                                 const std::vector<WorkingPrior>& priors, const ZGroups& groups,
                                 VecRef beta, int n_w, int n_y);

}  // namespace mep

#endif
