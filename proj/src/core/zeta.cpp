#include "core/zeta.hpp"

#include <cmath>
#include <sstream>

namespace mep {

ZetaWorkspace build_zeta_workspace(const Dataset& data, const ModelSpec& spec, VecRef beta,
                                   const std::vector<WorkingPrior>& priors, const ZGroups& groups,
                                   const Center& center, int n_w, int n_y) {
    ZetaWorkspace ws;
    ws.data = &data;
    ws.center = &center;
    ws.spec = spec;
    ws.beta = beta;
    ws.priors = priors;
    ws.groups = groups;
    ws.gf = build_grouped(beta, priors, groups, spec, n_w, n_y, true);

    const int ngroups = groups.count();
    ws.center_nodes.resize(ngroups);
    ws.sum_pi.resize(ngroups);
    ws.group_sizes.assign(ngroups, 0);
    for (int g = 0; g < ngroups; ++g) {
        ws.center_nodes[g] = center_at_w_nodes(ws.gf.systems[g], center, beta);
        ws.sum_pi[g] = VectorXd::Zero(priors[g].size());
    }

    const int n = data.n();
    const int p = static_cast<int>(beta.size());
    ws.pi_rows.resize(n);
    ws.s_beta.resize(n, p);
    ws.s_eff.resize(n, p);
    ws.estar_a.resize(n, p);
    ws.center_vals.resize(n);
    ws.residuals.resize(n);
    ws.dr_dbeta.resize(n, p);

    const auto batches = grouped_scores(data, spec, priors, groups, beta, ws.gf);
    for (int g = 0; g < ngroups; ++g) {
        const GroupScores& gs = batches[g];
        for (size_t r = 0; r < gs.rows.size(); ++r) {
            const int i = gs.rows[r];
            ws.pi_rows[i] = gs.pi.row(r).transpose();
            ws.sum_pi[g] += ws.pi_rows[i];
            ++ws.group_sizes[g];
            ws.s_beta.row(i) = gs.sbeta.row(r);
            ws.s_eff.row(i) = gs.seff.row(r);
            ws.estar_a.row(i) = gs.sbeta.row(r) - gs.seff.row(r);
        }
    }
    for (int i = 0; i < n; ++i) {
        const Observation o = data.row(i);
        const double c = center.value(o.w, o.z, beta);
        if (!std::isfinite(c)) throw std::runtime_error("build_zeta_workspace: non-finite center");
        ws.center_vals(i) = c;
        ws.residuals(i) = std::abs(o.y - c);
        const double sgn = (o.y > c) ? 1.0 : (o.y < c ? -1.0 : 0.0);
        ws.dr_dbeta.row(i) = -sgn * center.beta_grad(o.w, o.z, beta).transpose();
    }
    return ws;
}

double indicator_given_xz(double x, VecRef z, VecRef beta, double zeta, const Center& center,
                          const ModelSpec& spec, int n_w) {
    if (!(zeta >= 0.0)) throw std::invalid_argument("indicator_given_xz: zeta must be >= 0");
    const GaussHermite gh = gauss_hermite(n_w);
    const double sqrt2 = std::sqrt(2.0);
    const double mu = spec.mean.value(x, z, beta);
    double acc = 0.0;
    for (int a = 0; a < n_w; ++a) {
        const double w = x + sqrt2 * spec.sigma_u * gh.nodes(a);
        const double c = center.value(w, z, beta);
        const double hi = (c + zeta - mu) / spec.sigma_eps;
        const double lo = (c - zeta - mu) / spec.sigma_eps;
        acc += gh.weights(a) * (normal_cdf(hi) - normal_cdf(lo));
    }
    return acc / std::sqrt(M_PI);
}

A1Solution solve_a1(const ZetaWorkspace& ws, double zeta) {
    A1Solution sol;
    const int ngroups = ws.groups.count();
    sol.a1.resize(ngroups);
    sol.q_bar.resize(ngroups);
    for (int g = 0; g < ngroups; ++g) {
        const VectorXd q = indicator_profile(ws.gf.systems[g], ws.center_nodes[g], zeta, ws.spec);
        sol.q_bar[g] = ws.priors[g].masses.dot(q);
        const VectorXd rhs = rhs_a1_from_profile(q, ws.priors[g]);
        sol.a1[g] = fredholm_solve(ws.gf.systems[g], rhs);
    }
    return sol;
}

double estimating_function(double zeta, const ZetaWorkspace& ws, double alpha) {
    const A1Solution sol = solve_a1(ws, zeta);
    double g_val = 0.0;
    for (int g = 0; g < ws.groups.count(); ++g) {
        g_val += ws.sum_pi[g].dot(sol.a1[g]);
        g_val += ws.group_sizes[g] * ((1.0 - alpha) - sol.q_bar[g]);
    }
    return g_val;
}

double estimating_function(double zeta, const Dataset& data, VecRef beta_hat,
                           const std::vector<WorkingPrior>& priors, const ZGroups& groups,
                           const Center& center, double alpha, const ModelSpec& spec, int n_w,
                           int n_y) {
    const ZetaWorkspace ws = build_zeta_workspace(data, spec, beta_hat, priors, groups, center, n_w, n_y);
    return estimating_function(zeta, ws, alpha);
}

ZetaEstimate fit_zeta(const ZetaWorkspace& ws, double alpha, const ZetaOptions& opts) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("fit_zeta: alpha outside (0,1)");
    const double max_r = ws.residuals.size() > 0 ? ws.residuals.maxCoeff() : 0.0;
    double hi = 2.0 * max_r;
    if (!(hi > 0.0)) hi = std::max(1e-8, ws.spec.sigma_eps);
    auto g_fn = [&](double zeta) { return estimating_function(zeta, ws, alpha); };
    for (int expand = 0; expand < 4 && g_fn(hi) >= 0.0; ++expand) hi *= 2.0;
    const double tol = opts.tol > 0.0 ? opts.tol : 1e-9 * hi;
    const BisectResult root = bisect_root(g_fn, 0.0, hi, tol, opts.max_iter);

    ZetaEstimate est;
    est.zeta_hat = root.root;
    est.method = ZetaMethod::Semiparam;
    est.alpha = alpha;
    est.bracket_lo = root.lo;
    est.bracket_hi = root.hi;
    est.iterations = root.iterations;
    est.density_at_zeta = kde_at(est.zeta_hat, ws.residuals, silverman_bandwidth(ws.residuals));
    return est;
}

ZetaEstimate fit_zeta(const Dataset& data, const FittedBeta& fitted, const Center& center,
                      double alpha, const ModelSpec& spec, const ZetaOptions& opts) {
    const ZetaWorkspace ws = build_zeta_workspace(data, spec, fitted.beta_hat, fitted.priors,
                                                  fitted.groups, center, opts.n_w, opts.n_y);
    ZetaEstimate est = fit_zeta(ws, alpha, opts);
    if (opts.with_variance)
        est.variance = variance_v(data, fitted, est.zeta_hat, center, alpha, spec, opts.n_w, opts.n_y);
    return est;
}

VectorXd c_hat(const ZetaWorkspace& ws, double zeta) {
    const int n = ws.n();
    const int p = ws.p();
    const A1Solution sol = solve_a1(ws, zeta);

    const double h = silverman_bandwidth(ws.residuals);
    const double density = kde_at(zeta, ws.residuals, h);
    const double inv_h = 1.0 / h;

    MatrixXd moment = MatrixXd::Zero(p, p);
    VectorXd t_delta = VectorXd::Zero(p);   // E[ delta{zeta-r} dr/dbeta ], kernel-smoothed
    VectorXd t_ind = VectorXd::Zero(p);     // E[ I{r<zeta} S_beta ]
    VectorXd t_a1a = VectorXd::Zero(p);     // E[ E*{a1|O} E*{a|O} ]
    for (int i = 0; i < n; ++i) {
        moment += ws.s_eff.row(i).transpose() * ws.s_eff.row(i);
        const double u = (zeta - ws.residuals(i)) * inv_h;
        const double kh = 0.3989422804014326779 * inv_h * std::exp(-0.5 * u * u);
        t_delta += kh * ws.dr_dbeta.row(i).transpose();
        if (ws.residuals(i) < zeta) t_ind += ws.s_beta.row(i).transpose();
        const int g = ws.groups.assignment(i);
        const double ea1 = ws.pi_rows[i].dot(sol.a1[g]);
        t_a1a += ea1 * ws.estar_a.row(i).transpose();
    }
    moment /= n;
    t_delta /= n;
    t_ind /= n;
    t_a1a /= n;

    Eigen::FullPivLU<MatrixXd> lu(moment);
    if (!lu.isInvertible()) throw std::runtime_error("c_hat: singular efficient-score moment matrix");
    return lu.solve((t_delta - t_ind) / density - t_a1a);
}

VectorXd phi_all(const ZetaWorkspace& ws, double zeta, double alpha, VecRef c, double density) {
    if (!(density > 0.0)) throw std::invalid_argument("phi_all: density must be positive");
    const A1Solution sol = solve_a1(ws, zeta);
    const int n = ws.n();
    VectorXd phi(n);
    for (int i = 0; i < n; ++i) {
        const int g = ws.groups.assignment(i);
        const double ea1 = ws.pi_rows[i].dot(sol.a1[g]);
        phi(i) = ws.s_eff.row(i).dot(c) + (ea1 + (1.0 - alpha) - sol.q_bar[g]) / density;
    }
    return phi;
}

double phi_hat(const Observation& o, const ZetaWorkspace& ws, double zeta, double alpha, VecRef c,
               double density) {
    if (!(density > 0.0)) throw std::invalid_argument("phi_hat: density must be positive");
    const A1Solution sol = solve_a1(ws, zeta);
    const int g = ws.groups.group_of(o.z);
    const WorkingPrior& prior = ws.priors[g];
    const VectorXd pi = posterior_weights(o, ws.beta, prior, ws.spec);
    const double inv_se2 = 1.0 / (ws.spec.sigma_eps * ws.spec.sigma_eps);
    VectorXd sb = VectorXd::Zero(ws.p());
    for (int j = 0; j < prior.size(); ++j) {
        const double x = prior.support(j);
        sb += pi(j) * (o.y - ws.spec.mean.value(x, o.z, ws.beta)) * inv_se2 *
              ws.spec.mean.grad(x, o.z, ws.beta);
    }
    const VectorXd seff = sb - ws.gf.a_star[g].transpose() * pi;
    const double ea1 = pi.dot(sol.a1[g]);
    return seff.dot(c) + (ea1 + (1.0 - alpha) - sol.q_bar[g]) / density;
}

namespace {
// Mean of phi over the sample with all zeta- and beta-dependent pieces
// (a1, q_bar, c, density) recomputed from the given workspace.
double mean_phi(const ZetaWorkspace& ws, double zeta, double alpha) {
    const VectorXd c = c_hat(ws, zeta);
    const double density = kde_at(zeta, ws.residuals, silverman_bandwidth(ws.residuals));
    return phi_all(ws, zeta, alpha, c, density).mean();
}
}  // namespace

double variance_v(const Dataset& data, const FittedBeta& fitted, double zeta_hat,
                  const Center& center, double alpha, const ModelSpec& spec, int n_w, int n_y,
                  double fd_step) {
    const ZetaWorkspace ws = build_zeta_workspace(data, spec, fitted.beta_hat, fitted.priors,
                                                  fitted.groups, center, n_w, n_y);
    const int n = ws.n();
    const int p = ws.p();

    // d mean(phi) / d zeta
    const double hz = fd_step * std::max(std::abs(zeta_hat), 1e-8);
    const double dphi_dzeta = (mean_phi(ws, zeta_hat + hz, alpha) - mean_phi(ws, zeta_hat - hz, alpha)) /
                              (2.0 * hz);
    if (std::abs(dphi_dzeta) < 1e-8)
        throw std::runtime_error("variance_v: derivative of phi in zeta is numerically zero");

    // d mean(phi) / d beta and d mean(S_eff) / d beta by rebuilding at beta +- h
    VectorXd dphi_dbeta(p);
    MatrixXd dseff_dbeta(p, p);
    VectorXd beta = fitted.beta_hat;
    for (int k = 0; k < p; ++k) {
        const double h = fd_step * (1.0 + std::abs(beta(k)));
        const double b0 = beta(k);
        beta(k) = b0 + h;
        const ZetaWorkspace up =
            build_zeta_workspace(data, spec, beta, fitted.priors, fitted.groups, center, n_w, n_y);
        beta(k) = b0 - h;
        const ZetaWorkspace dn =
            build_zeta_workspace(data, spec, beta, fitted.priors, fitted.groups, center, n_w, n_y);
        beta(k) = b0;
        dphi_dbeta(k) = (mean_phi(up, zeta_hat, alpha) - mean_phi(dn, zeta_hat, alpha)) / (2.0 * h);
        dseff_dbeta.col(k) =
            (up.s_eff.colwise().mean() - dn.s_eff.colwise().mean()).transpose() / (2.0 * h);
    }

    Eigen::FullPivLU<MatrixXd> lu(dseff_dbeta.transpose());
    if (!lu.isInvertible()) throw std::runtime_error("variance_v: singular score Jacobian");
    // adj solves J' adj = dphi_dbeta, so adj . S_eff = dphi_dbeta' J^{-1} S_eff
    const VectorXd adj = lu.solve(dphi_dbeta);

    const VectorXd c = c_hat(ws, zeta_hat);
    const double density = kde_at(zeta_hat, ws.residuals, silverman_bandwidth(ws.residuals));
    const VectorXd phi = phi_all(ws, zeta_hat, alpha, c, density);

    // u_i = phi_i - dphi_dbeta' J^{-1} S_eff_i
    double mean_u2 = 0.0;
    for (int i = 0; i < n; ++i) {
        const double u = phi(i) - adj.dot(ws.s_eff.row(i));
        mean_u2 += u * u;
    }
    mean_u2 /= n;

    const double v_star = mean_u2 / (dphi_dzeta * dphi_dzeta);
    return v_star / n;
}

}  // namespace mep
