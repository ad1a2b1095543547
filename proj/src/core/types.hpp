#ifndef MEP_CORE_TYPES_HPP
#define MEP_CORE_TYPES_HPP

#include <Eigen/Dense>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace mep {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using Eigen::VectorXi;
using VecRef = const Eigen::Ref<const Eigen::VectorXd>&;
using MatRef = const Eigen::Ref<const Eigen::MatrixXd>&;

// One record (w, z, y). z always carries the intercept in slot 0.
struct Observation {
    double w = 0.0;
    double y = 0.0;
    VectorXd z;
};

// Column-typed collection of observations. z is n x d_z with z(:,0) == 1.
class Dataset {
public:
    Dataset() = default;
    Dataset(VectorXd y, VectorXd w, MatrixXd z);

    int n() const { return static_cast<int>(y_.size()); }
    int zdim() const { return static_cast<int>(z_.cols()); }

    double y(int i) const { return y_(i); }
    double w(int i) const { return w_(i); }
    VectorXd z(int i) const { return z_.row(i).transpose(); }
    Observation row(int i) const { return Observation{w_(i), y_(i), z(i)}; }

    const VectorXd& ys() const { return y_; }
    const VectorXd& ws() const { return w_; }
    const MatrixXd& zs() const { return z_; }

    Dataset subset(const std::vector<int>& idx) const;
    Dataset permuted(const std::vector<int>& order) const { return subset(order); }

private:
    VectorXd y_, w_;
    MatrixXd z_;
};

enum class MeanFamily { Poly2, SinPoly2, ExpNegSq };

// Mean function m(x,z,beta). beta packs (beta1 in R^2, beta2 in R^{d_z}) flat,
// so p = 2 + d_z and the linear index is u = beta(0)*x + beta(1)*x^2 + z'beta(2:).
struct MeanModel {
    MeanFamily family = MeanFamily::Poly2;
    int zdim = 1;

    int pdim() const { return 2 + zdim; }
    double index(double x, VecRef z, VecRef beta) const;
    double value(double x, VecRef z, VecRef beta) const;
    // d m / d beta, length pdim()
    VectorXd grad(double x, VecRef z, VecRef beta) const;
};

enum class EpsFamily { Normal, ScaledT3 };
enum class UFamily { Normal, ScaledUniform };

// Model configuration. sigma_eps and sigma_u are known constants, never fitted.
// The generator families only affect data synthesis; likelihood evaluations
// always use the normal forms.
struct ModelSpec {
    MeanModel mean;
    double sigma_eps = 0.1;
    double sigma_u = 0.3;
    EpsFamily eps_family = EpsFamily::Normal;
    UFamily u_family = UFamily::Normal;

    void validate() const;

    double lik_y_given_xz(double y, double x, VecRef z, VecRef beta) const;
    double loglik_y_given_xz(double y, double x, VecRef z, VecRef beta) const;
    double lik_w_given_x(double w, double x) const;
    double loglik_w_given_x(double w, double x) const;
};

// Discrete working prior for X given Z: support points x_j with masses p_j.
struct WorkingPrior {
    VectorXd support;
    VectorXd masses;
    int group_id = -1;

    int size() const { return static_cast<int>(support.size()); }
    void validate() const;
};

// Assignment of rows to z-groups plus the representative z per group.
struct ZGroups {
    VectorXi assignment;                 // one entry per dataset row
    std::vector<VectorXd> centroids;     // representative z (the K-means centroid)
    bool degenerate = false;             // all points identical: single group

    int count() const { return static_cast<int>(centroids.size()); }
    int group_of(VecRef z) const;
    static ZGroups single(const VectorXd& centroid, int n);
};

enum class CenterKind { WorkingPosteriorMean, KernelRegression, NaivePlugin, HdwOptimal };

// Interval center m(w,z,beta). Implementations carry their own fitted state;
// beta stays an explicit argument so the residual can be differentiated in it.
class Center {
public:
    virtual ~Center() = default;
    virtual CenterKind kind() const = 0;
    virtual double value(double w, VecRef z, VecRef beta) const = 0;
    // d center / d beta; default is a central difference on value().
    virtual VectorXd beta_grad(double w, VecRef z, VecRef beta) const;
};

// E*(Y | w, z, beta) under the grouped working prior.
class PosteriorMeanCenter : public Center {
public:
    PosteriorMeanCenter(std::vector<WorkingPrior> priors, ZGroups groups, ModelSpec spec);
    CenterKind kind() const override { return CenterKind::WorkingPosteriorMean; }
    double value(double w, VecRef z, VecRef beta) const override;
    VectorXd beta_grad(double w, VecRef z, VecRef beta) const override;

    const WorkingPrior& prior_for(VecRef z) const { return priors_[groups_.group_of(z)]; }
    const std::vector<WorkingPrior>& priors() const { return priors_; }
    const ZGroups& groups() const { return groups_; }

private:
    std::vector<WorkingPrior> priors_;
    ZGroups groups_;
    ModelSpec spec_;
};

// m(w, z, beta): treats w as if it were x.
class PluginCenter : public Center {
public:
    explicit PluginCenter(MeanModel mean) : mean_(mean) {}
    CenterKind kind() const override { return CenterKind::NaivePlugin; }
    double value(double w, VecRef z, VecRef beta) const override { return mean_.value(w, z, beta); }
    VectorXd beta_grad(double w, VecRef z, VecRef beta) const override { return mean_.grad(w, z, beta); }

private:
    MeanModel mean_;
};

// Fitted beta with convergence diagnostics and the grouping/priors it used.
struct FittedBeta {
    VectorXd beta_hat;
    int iterations = 0;
    double final_eq_norm = 0.0;
    VectorXi group_assignments;
    std::vector<WorkingPrior> priors;
    ZGroups groups;
    bool converged = false;
};

enum class ZetaMethod { Semiparam, Conformal, Direct, Naive };

struct ZetaEstimate {
    double zeta_hat = 0.0;
    ZetaMethod method = ZetaMethod::Semiparam;
    std::optional<double> variance;      // squared standard error of zeta_hat
    double density_at_zeta = 0.0;        // estimate of E[delta{zeta - r}]
    double alpha = 0.1;
    double bracket_lo = 0.0;
    double bracket_hi = 0.0;
    int iterations = 0;
    bool degenerate = false;             // e.g. all calibration residuals equal
};

const char* zeta_method_name(ZetaMethod m);

// Thrown when an iterative solver exhausts its budget; carries the trace.
class NonConvergenceError : public std::runtime_error {
public:
    explicit NonConvergenceError(const std::string& what) : std::runtime_error(what) {}
};

// |y - center(w,z,beta)|; throws if the center evaluates non-finite.
double residual(const Observation& o, const Center& center, VecRef beta);

}  // namespace mep

#endif
