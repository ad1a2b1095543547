#include "core/types.hpp"

#include <cmath>
#include <sstream>

namespace mep {

namespace {
constexpr double kInvSqrt2Pi = 0.3989422804014326779;

double normal_pdf(double x, double mu, double sigma) {
    const double t = (x - mu) / sigma;
    return kInvSqrt2Pi / sigma * std::exp(-0.5 * t * t);
}

double normal_logpdf(double x, double mu, double sigma) {
    const double t = (x - mu) / sigma;
    return -0.5 * t * t - std::log(sigma) - 0.9189385332046727418;
}
}  // namespace

Dataset::Dataset(VectorXd y, VectorXd w, MatrixXd z) : y_(std::move(y)), w_(std::move(w)), z_(std::move(z)) {
    if (y_.size() != w_.size() || y_.size() != z_.rows())
        throw std::invalid_argument("Dataset: y, w, z row counts differ");
    if (z_.cols() < 1) throw std::invalid_argument("Dataset: z must have at least the intercept column");
    for (Eigen::Index i = 0; i < z_.rows(); ++i) {
        if (z_(i, 0) != 1.0) throw std::invalid_argument("Dataset: z[0] must be 1 (intercept)");
    }
    if (!y_.allFinite() || !w_.allFinite() || !z_.allFinite())
        throw std::invalid_argument("Dataset: non-finite entry");
}

Dataset Dataset::subset(const std::vector<int>& idx) const {
    VectorXd y(idx.size()), w(idx.size());
    MatrixXd z(idx.size(), z_.cols());
    for (size_t k = 0; k < idx.size(); ++k) {
        y(k) = y_(idx[k]);
        w(k) = w_(idx[k]);
        z.row(k) = z_.row(idx[k]);
    }
    return Dataset(std::move(y), std::move(w), std::move(z));
}

double MeanModel::index(double x, VecRef z, VecRef beta) const {
    double u = beta(0) * x + beta(1) * x * x;
    for (int k = 0; k < zdim; ++k) u += z(k) * beta(2 + k);
    return u;
}

double MeanModel::value(double x, VecRef z, VecRef beta) const {
    const double u = index(x, z, beta);
    switch (family) {
        case MeanFamily::Poly2: return u;
        case MeanFamily::SinPoly2: return std::sin(u);
        case MeanFamily::ExpNegSq: return std::exp(-u * u);
    }
    throw std::logic_error("MeanModel: unknown family");
}

VectorXd MeanModel::grad(double x, VecRef z, VecRef beta) const {
    VectorXd g(pdim());
    g(0) = x;
    g(1) = x * x;
    g.segment(2, zdim) = z.head(zdim);
    const double u = index(x, z, beta);
    switch (family) {
        case MeanFamily::Poly2: break;
        case MeanFamily::SinPoly2: g *= std::cos(u); break;
        case MeanFamily::ExpNegSq: g *= -2.0 * u * std::exp(-u * u); break;
    }
    return g;
}

void ModelSpec::validate() const {
    if (!(sigma_eps > 0.0) || !std::isfinite(sigma_eps)) throw std::invalid_argument("ModelSpec: sigma_eps must be positive");
    if (!(sigma_u > 0.0) || !std::isfinite(sigma_u)) throw std::invalid_argument("ModelSpec: sigma_u must be positive");
}

double ModelSpec::lik_y_given_xz(double y, double x, VecRef z, VecRef beta) const {
    return normal_pdf(y, mean.value(x, z, beta), sigma_eps);
}

double ModelSpec::loglik_y_given_xz(double y, double x, VecRef z, VecRef beta) const {
    return normal_logpdf(y, mean.value(x, z, beta), sigma_eps);
}

double ModelSpec::lik_w_given_x(double w, double x) const { return normal_pdf(w, x, sigma_u); }

double ModelSpec::loglik_w_given_x(double w, double x) const { return normal_logpdf(w, x, sigma_u); }

void WorkingPrior::validate() const {
    if (support.size() < 1 || support.size() != masses.size())
        throw std::invalid_argument("WorkingPrior: support and masses must align, length >= 1");
    if ((masses.array() < 0.0).any()) throw std::invalid_argument("WorkingPrior: negative mass");
    if (std::abs(masses.sum() - 1.0) > 1e-12) throw std::invalid_argument("WorkingPrior: masses must sum to 1");
    for (int j = 1; j < size(); ++j)
        if (!(support(j) > support(j - 1))) throw std::invalid_argument("WorkingPrior: support must be strictly increasing");
}

int ZGroups::group_of(VecRef z) const {
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (int g = 0; g < count(); ++g) {
        const double d = (centroids[g] - z).squaredNorm();
        if (d < best_d) {
            best_d = d;
            best = g;
        }
    }
    return best;
}

ZGroups ZGroups::single(const VectorXd& centroid, int n) {
    ZGroups g;
    g.assignment = VectorXi::Zero(n);
    g.centroids = {centroid};
    return g;
}

VectorXd Center::beta_grad(double w, VecRef z, VecRef beta) const {
    VectorXd g(beta.size());
    VectorXd b = beta;
    for (int k = 0; k < beta.size(); ++k) {
        const double h = 1e-6 * (1.0 + std::abs(beta(k)));
        const double b0 = b(k);
        b(k) = b0 + h;
        const double up = value(w, z, b);
        b(k) = b0 - h;
        const double dn = value(w, z, b);
        b(k) = b0;
        g(k) = (up - dn) / (2.0 * h);
    }
    return g;
}

PosteriorMeanCenter::PosteriorMeanCenter(std::vector<WorkingPrior> priors, ZGroups groups, ModelSpec spec)
    : priors_(std::move(priors)), groups_(std::move(groups)), spec_(std::move(spec)) {
    if (priors_.size() != static_cast<size_t>(groups_.count()))
        throw std::invalid_argument("PosteriorMeanCenter: one prior per group required");
    for (const auto& p : priors_) p.validate();
}

// Weights p_j f_{W|X}(w, x_j), log-domain with max subtraction.
static VectorXd w_posterior(const WorkingPrior& prior, const ModelSpec& spec, double w) {
    const int m = prior.size();
    VectorXd lw(m);
    for (int j = 0; j < m; ++j)
        lw(j) = std::log(std::max(prior.masses(j), 1e-300)) + spec.loglik_w_given_x(w, prior.support(j));
    const double mx = lw.maxCoeff();
    if (mx < -690.0) return VectorXd::Constant(m, 1.0 / m);
    VectorXd out = (lw.array() - mx).exp();
    return out / out.sum();
}

double PosteriorMeanCenter::value(double w, VecRef z, VecRef beta) const {
    const WorkingPrior& prior = prior_for(z);
    const VectorXd pw = w_posterior(prior, spec_, w);
    double v = 0.0;
    for (int j = 0; j < prior.size(); ++j) v += pw(j) * spec_.mean.value(prior.support(j), z, beta);
    return v;
}

VectorXd PosteriorMeanCenter::beta_grad(double w, VecRef z, VecRef beta) const {
    const WorkingPrior& prior = prior_for(z);
    const VectorXd pw = w_posterior(prior, spec_, w);
    VectorXd g = VectorXd::Zero(beta.size());
    for (int j = 0; j < prior.size(); ++j) g += pw(j) * spec_.mean.grad(prior.support(j), z, beta);
    return g;
}

const char* zeta_method_name(ZetaMethod m) {
    switch (m) {
        case ZetaMethod::Semiparam: return "semiparam";
        case ZetaMethod::Conformal: return "conformal";
        case ZetaMethod::Direct: return "direct";
        case ZetaMethod::Naive: return "naive";
    }
    return "?";
}

double residual(const Observation& o, const Center& center, VecRef beta) {
    const double c = center.value(o.w, o.z, beta);
    if (!std::isfinite(c)) {
        std::ostringstream msg;
        msg << "residual: center evaluated non-finite at (w=" << o.w << ", z=[" << o.z.transpose() << "])";
        throw std::runtime_error(msg.str());
    }
    return std::abs(o.y - c);
}

}  // namespace mep
