#ifndef MEP_CORE_INTERVAL_CENTER_HPP
#define MEP_CORE_INTERVAL_CENTER_HPP

#include "core/zeta.hpp"

namespace mep {

// f*_{Y|W,Z}(y | w, z): normalized mixture sum_j ptilde_j(w) N(m_j, sigma_eps)
// with ptilde_j(w) proportional to p_j f_{W|X}(w, x_j).
double cond_density_working(double y, double w, VecRef z, VecRef beta, const WorkingPrior& prior,
                            const ModelSpec& spec);

// Center of the highest-density window of length 2*zeta under the working
// conditional law. Grid scan plus golden-section refinement; ties toward the
// smallest center. The posterior-mean center competes as a candidate, so the
// returned window mass never falls below it.
double optimal_center(double w, VecRef z, VecRef beta, double zeta, const WorkingPrior& prior,
                      const ModelSpec& spec, int y_grid_size = 512);

// Window mass at a given center; exposed for the per-call invariant check.
double window_mass(double center, double w, VecRef z, VecRef beta, double zeta,
                   const WorkingPrior& prior, const ModelSpec& spec);

// Highest-density-window center at a fixed zeta.
class HdwCenter : public Center {
public:
    HdwCenter(std::vector<WorkingPrior> priors, ZGroups groups, ModelSpec spec, double zeta,
              int y_grid_size = 512)
        : priors_(std::move(priors)), groups_(std::move(groups)), spec_(std::move(spec)), zeta_(zeta),
          y_grid_size_(y_grid_size) {
        if (!(zeta_ > 0.0)) throw std::invalid_argument("HdwCenter: zeta must be positive");
    }
    CenterKind kind() const override { return CenterKind::HdwOptimal; }
    double value(double w, VecRef z, VecRef beta) const override {
        return optimal_center(w, z, beta, zeta_, priors_[groups_.group_of(z)], spec_, y_grid_size_);
    }
    // Implicit-function derivative of the interior argmax; falls back to the
    // component-weight average when the window mass is flat at the optimum.
    VectorXd beta_grad(double w, VecRef z, VecRef beta) const override;
    double zeta() const { return zeta_; }

private:
    std::vector<WorkingPrior> priors_;
    ZGroups groups_;
    ModelSpec spec_;
    double zeta_;
    int y_grid_size_;
};

struct CenterIterationTrace {
    std::vector<double> zeta_sequence;  // accepted values, non-increasing
    bool converged = false;
    int iterations = 0;
    bool reverted = false;  // an update increased zeta and was rolled back
};

struct IterateCenterResult {
    std::shared_ptr<Center> center;
    ZetaEstimate zeta;
    CenterIterationTrace trace;
};

// Alternate fit_zeta and highest-density-window updates starting from the
// working posterior-mean center.
IterateCenterResult iterate_center(const Dataset& data, const FittedBeta& fitted, double alpha,
                                   const ModelSpec& spec, double tol = -1.0, int max_iter = 10,
                                   int n_w = 20, int n_y = 20, int y_grid_size = 512);

}  // namespace mep

#endif
