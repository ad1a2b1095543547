#ifndef MEP_CORE_ALT_PREDICTORS_HPP
#define MEP_CORE_ALT_PREDICTORS_HPP

#include <functional>
#include <memory>

#include "core/numerics.hpp"
#include "core/types.hpp"

namespace mep {

// Kernel-regression center fitted on a training sample; beta plays no role.
class KernelCenter : public Center {
public:
    KernelCenter(Dataset training, NwSettings settings)
        : training_(std::move(training)), settings_(std::move(settings)) {}
    CenterKind kind() const override { return CenterKind::KernelRegression; }
    double value(double w, VecRef z, VecRef beta) const override {
        (void)beta;
        return nadaraya_watson(w, z, training_, training_.ys(), settings_).value;
    }
    VectorXd beta_grad(double w, VecRef z, VecRef beta) const override {
        (void)w;
        (void)z;
        return VectorXd::Zero(beta.size());
    }
    const Dataset& training() const { return training_; }
    const NwSettings& settings() const { return settings_; }

private:
    Dataset training_;
    NwSettings settings_;
};

struct SplitPlan {
    std::vector<int> estimation;
    std::vector<int> calibration;
    std::uint64_t seed = 0;

    // Seeded shuffle, first floor(n * estimation_fraction) rows to estimation.
    static SplitPlan make(int n, double estimation_fraction, std::uint64_t seed);
    void validate(int n) const;
};

struct FittedCenter {
    std::shared_ptr<Center> center;
    VectorXd beta;
};

using CenterFitter = std::function<FittedCenter(const Dataset& estimation_part)>;

// Split conformal: fit the center on the estimation part, take the (1-alpha)
// order-statistic of calibration residuals. Variance from the quantile
// asymptotics alpha(1-alpha) / (n_cal * density^2).
struct ConformalFit {
    ZetaEstimate zeta;
    FittedCenter center;
    VectorXd calibration_residuals;
};
ConformalFit conformal_fit(const Dataset& data, double alpha, const SplitPlan& plan,
                           const CenterFitter& fitter, const ModelSpec& spec);

// Direct nonparametric route: leave-one-out kernel centers, then solve
// sum_i [ (1-alpha) - I{r_i < zeta} - eps_i dhat_i(zeta) ] = 0.
struct DirectFit {
    ZetaEstimate zeta;
    VectorXd centers;    // per row
    VectorXd residuals;  // |y - center|
};
// settings == nullptr: Silverman bandwidths (requires n >= 30).
// center_override: skip the kernel fit and use the supplied centers.
DirectFit direct_fit(const Dataset& data, double alpha, const NwSettings* settings,
                     const ModelSpec& spec, const VectorXd* center_override = nullptr);

// Nonlinear least squares of y on m(w, z, beta), treating w as x.
// init empty: closed-form least squares for the Poly2 family, otherwise zeros.
FittedBeta naive_fit_beta(const Dataset& data, const ModelSpec& spec,
                          const VectorXd& init = VectorXd());

// Naive influence-function estimate of zeta given the naive beta.
ZetaEstimate naive_fit_zeta(const Dataset& data, double alpha, const FittedBeta& naive_beta,
                            const ModelSpec& spec, const NwSettings* settings = nullptr);

}  // namespace mep

#endif
