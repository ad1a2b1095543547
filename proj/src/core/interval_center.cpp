#include "core/interval_center.hpp"

#include <cmath>

namespace mep {

namespace {
// ptilde_j(w) proportional to p_j f_{W|X}(w, x_j), log-domain.
VectorXd w_weights(const WorkingPrior& prior, const ModelSpec& spec, double w) {
    const int m = prior.size();
    VectorXd lw(m);
    for (int j = 0; j < m; ++j)
        lw(j) = std::log(std::max(prior.masses(j), 1e-300)) + spec.loglik_w_given_x(w, prior.support(j));
    const double mx = lw.maxCoeff();
    if (mx < std::log(1e-300)) return VectorXd::Constant(m, 1.0 / m);
    VectorXd out = (lw.array() - mx).exp();
    return out / out.sum();
}

VectorXd component_means(const WorkingPrior& prior, const ModelSpec& spec, VecRef z, VecRef beta) {
    VectorXd mu(prior.size());
    for (int j = 0; j < prior.size(); ++j) mu(j) = spec.mean.value(prior.support(j), z, beta);
    return mu;
}

double mass_at(double c, const VectorXd& pw, const VectorXd& mu, double zeta, double sigma) {
    double s = 0.0;
    for (int j = 0; j < mu.size(); ++j) {
        const double hi = (c + zeta - mu(j)) / sigma;
        const double lo = (c - zeta - mu(j)) / sigma;
        s += pw(j) * (normal_cdf(hi) - normal_cdf(lo));
    }
    return s;
}
}  // namespace

double cond_density_working(double y, double w, VecRef z, VecRef beta, const WorkingPrior& prior,
                            const ModelSpec& spec) {
    const VectorXd pw = w_weights(prior, spec, w);
    const VectorXd mu = component_means(prior, spec, z, beta);
    const double inv_s = 1.0 / spec.sigma_eps;
    double d = 0.0;
    for (int j = 0; j < prior.size(); ++j) {
        const double t = (y - mu(j)) * inv_s;
        d += pw(j) * 0.3989422804014326779 * inv_s * std::exp(-0.5 * t * t);
    }
    return d;
}

double window_mass(double center, double w, VecRef z, VecRef beta, double zeta,
                   const WorkingPrior& prior, const ModelSpec& spec) {
    const VectorXd pw = w_weights(prior, spec, w);
    const VectorXd mu = component_means(prior, spec, z, beta);
    return mass_at(center, pw, mu, zeta, spec.sigma_eps);
}

double optimal_center(double w, VecRef z, VecRef beta, double zeta, const WorkingPrior& prior,
                      const ModelSpec& spec, int y_grid_size) {
    if (!(zeta > 0.0)) throw std::invalid_argument("optimal_center: zeta must be positive");
    if (y_grid_size < 8) throw std::invalid_argument("optimal_center: grid too small");
    const VectorXd pw = w_weights(prior, spec, w);
    const VectorXd mu = component_means(prior, spec, z, beta);
    const double sigma = spec.sigma_eps;
    const double lo = mu.minCoeff() - 6.0 * sigma;
    const double hi = mu.maxCoeff() + 6.0 * sigma;
    const double step = (hi - lo) / (y_grid_size - 1);

    int best_idx = 0;
    double best_mass = -1.0;
    for (int k = 0; k < y_grid_size; ++k) {
        const double c = lo + k * step;
        const double mass = mass_at(c, pw, mu, zeta, sigma);
        if (mass > best_mass) {  // strict: ties keep the smaller center
            best_mass = mass;
            best_idx = k;
        }
    }

    // golden-section pass around the best cell
    double a = lo + std::max(0, best_idx - 1) * step;
    double b = lo + std::min(y_grid_size - 1, best_idx + 1) * step;
    const double gr = 0.6180339887498949;
    double x1 = b - gr * (b - a), x2 = a + gr * (b - a);
    double f1 = mass_at(x1, pw, mu, zeta, sigma), f2 = mass_at(x2, pw, mu, zeta, sigma);
    for (int it = 0; it < 40; ++it) {
        if (f1 >= f2) {  // keep the left part on ties
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - gr * (b - a);
            f1 = mass_at(x1, pw, mu, zeta, sigma);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + gr * (b - a);
            f2 = mass_at(x2, pw, mu, zeta, sigma);
        }
    }
    const double refined = 0.5 * (a + b);
    const double refined_mass = mass_at(refined, pw, mu, zeta, sigma);
    double best_c = refined_mass >= best_mass ? refined : lo + best_idx * step;
    double best = std::max(refined_mass, best_mass);

    // the posterior-mean center competes, which enforces the window-mass bound
    const double pm = pw.dot(mu);
    if (mass_at(pm, pw, mu, zeta, sigma) > best) best_c = pm;
    return best_c;
}

VectorXd HdwCenter::beta_grad(double w, VecRef z, VecRef beta) const {
    const WorkingPrior& prior = priors_[groups_.group_of(z)];
    const VectorXd pw = w_weights(prior, spec_, w);
    const VectorXd mu = component_means(prior, spec_, z, beta);
    const double c = value(w, z, beta);
    const double sigma = spec_.sigma_eps;

    // dc/dbeta = sum_j omega_j dm_j/dbeta from the stationarity of the window
    // mass in c; omega_j weights by the curvature contribution of component j.
    VectorXd omega(prior.size());
    double denom = 0.0;
    for (int j = 0; j < prior.size(); ++j) {
        const double thi = (c + zeta_ - mu(j)) / sigma;
        const double tlo = (c - zeta_ - mu(j)) / sigma;
        const double dphi_hi = -thi * 0.3989422804014326779 * std::exp(-0.5 * thi * thi);
        const double dphi_lo = -tlo * 0.3989422804014326779 * std::exp(-0.5 * tlo * tlo);
        omega(j) = pw(j) * (dphi_hi - dphi_lo);
        denom += omega(j);
    }
    if (std::abs(denom) < 1e-300) {
        omega = pw;  // flat optimum: average the component gradients
    } else {
        omega /= denom;
    }
    VectorXd g = VectorXd::Zero(beta.size());
    for (int j = 0; j < prior.size(); ++j)
        g += omega(j) * spec_.mean.grad(prior.support(j), z, beta);
    return g;
}

IterateCenterResult iterate_center(const Dataset& data, const FittedBeta& fitted, double alpha,
                                   const ModelSpec& spec, double tol, int max_iter, int n_w, int n_y,
                                   int y_grid_size) {
    ZetaOptions zopts;
    zopts.n_w = n_w;
    zopts.n_y = n_y;

    IterateCenterResult res;
    auto pm = std::make_shared<PosteriorMeanCenter>(fitted.priors, fitted.groups, spec);
    ZetaEstimate current = fit_zeta(data, fitted, *pm, alpha, spec, zopts);
    res.center = pm;
    res.zeta = current;
    res.trace.zeta_sequence.push_back(current.zeta_hat);

    const double zeta0 = current.zeta_hat;
    const double eff_tol = tol > 0.0 ? tol : 1e-3 * zeta0;

    for (int k = 0; k < max_iter; ++k) {
        auto hdw = std::make_shared<HdwCenter>(fitted.priors, fitted.groups, spec,
                                               current.zeta_hat, y_grid_size);
        ZetaEstimate next = fit_zeta(data, fitted, *hdw, alpha, spec, zopts);
        ++res.trace.iterations;
        if (next.zeta_hat > current.zeta_hat) {
            res.trace.reverted = true;
            res.trace.converged = true;
            return res;
        }
        const double gain = current.zeta_hat - next.zeta_hat;
        res.center = hdw;
        res.zeta = next;
        res.trace.zeta_sequence.push_back(next.zeta_hat);
        current = next;
        if (gain < eff_tol) {
            res.trace.converged = true;
            return res;
        }
    }
    return res;
}

}  // namespace mep
