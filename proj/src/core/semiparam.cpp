#include "core/semiparam.hpp"

#include <array>
#include <cmath>
#include <sstream>

namespace mep {

GroupedFredholm build_grouped(VecRef beta, const std::vector<WorkingPrior>& priors,
                              const ZGroups& groups, const ModelSpec& spec, int n_w, int n_y,
                              bool with_score_correction) {
    if (priors.size() != static_cast<size_t>(groups.count()))
        throw std::invalid_argument("build_grouped: one prior per group required");
    GroupedFredholm gf;
    gf.systems.reserve(priors.size());
    for (int g = 0; g < groups.count(); ++g) {
        MatrixXd b;
        gf.systems.push_back(build_system(groups.centroids[g], beta, priors[g], spec, n_w, n_y,
                                          with_score_correction ? &b : nullptr));
        if (with_score_correction) gf.a_star.push_back(fredholm_solve(gf.systems.back(), b));
    }
    return gf;
}

VectorXd working_score(const Observation& o, VecRef beta, const WorkingPrior& prior,
                       const ModelSpec& spec) {
    const VectorXd pi = posterior_weights(o, beta, prior, spec);
    const double inv_se2 = 1.0 / (spec.sigma_eps * spec.sigma_eps);
    VectorXd s = VectorXd::Zero(beta.size());
    for (int j = 0; j < prior.size(); ++j) {
        const double x = prior.support(j);
        const double resid = o.y - spec.mean.value(x, o.z, beta);
        s += pi(j) * resid * inv_se2 * spec.mean.grad(x, o.z, beta);
    }
    return s;
}

VectorXd efficient_score(const Observation& o, VecRef beta, const WorkingPrior& prior,
                         const ModelSpec& spec, MatRef a_star) {
    const VectorXd pi = posterior_weights(o, beta, prior, spec);
    const double inv_se2 = 1.0 / (spec.sigma_eps * spec.sigma_eps);
    VectorXd s = VectorXd::Zero(beta.size());
    for (int j = 0; j < prior.size(); ++j) {
        const double x = prior.support(j);
        const double resid = o.y - spec.mean.value(x, o.z, beta);
        s += pi(j) * resid * inv_se2 * spec.mean.grad(x, o.z, beta);
    }
    return s - a_star.transpose() * pi;
}

namespace {

// Index structure u_ij = v_j . beta12 + z_i . beta_z lets the whole group be
// evaluated with outer sums and a handful of matrix products.
struct BatchParts {
    MatrixXd pi;      // n_g x m
    MatrixXd wscore;  // n_g x m, pi * (y - m) * s / se^2
    MatrixXd w2;      // n_g x m, pi * s^2 / se^2 (only when with_info)
    MatrixXd zg;      // n_g x d_z
    MatrixXd v;       // m x 2, (x_j, x_j^2)
};

BatchParts batch_parts(const Dataset& data, const std::vector<int>& rows, const WorkingPrior& prior,
                       const ModelSpec& spec, VecRef beta, bool with_info) {
    const int ng = static_cast<int>(rows.size());
    const int m = prior.size();
    const int dz = data.zdim();
    BatchParts bp;
    bp.pi.resize(ng, m);
    bp.wscore.resize(ng, m);
    if (with_info) bp.w2.resize(ng, m);
    bp.zg.resize(ng, dz);
    bp.v.resize(m, 2);

    VectorXd a(m), logp(m);
    for (int j = 0; j < m; ++j) {
        const double x = prior.support(j);
        bp.v(j, 0) = x;
        bp.v(j, 1) = x * x;
        a(j) = beta(0) * x + beta(1) * x * x;
        logp(j) = std::log(std::max(prior.masses(j), 1e-300));
    }
    const double inv_2su2 = 0.5 / (spec.sigma_u * spec.sigma_u);
    const double inv_2se2 = 0.5 / (spec.sigma_eps * spec.sigma_eps);
    const double inv_se2 = 1.0 / (spec.sigma_eps * spec.sigma_eps);
    const MeanFamily family = spec.mean.family;

    std::vector<double> lw(m), mval(m), sval(m);
    for (int r = 0; r < ng; ++r) {
        const int i = rows[r];
        const double w = data.w(i);
        const double y = data.y(i);
        bp.zg.row(r) = data.zs().row(i);
        double b_i = 0.0;
        for (int c = 0; c < dz; ++c) b_i += data.zs()(i, c) * beta(2 + c);
        double mx = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < m; ++j) {
            const double u = a(j) + b_i;
            double mj, sj;
            switch (family) {
                case MeanFamily::Poly2: mj = u; sj = 1.0; break;
                case MeanFamily::SinPoly2: mj = std::sin(u); sj = std::cos(u); break;
                default: {
                    const double e = std::exp(-u * u);
                    mj = e;
                    sj = -2.0 * u * e;
                }
            }
            mval[j] = mj;
            sval[j] = sj;
            const double dy = y - mj;
            const double dw = w - prior.support(j);
            lw[j] = logp(j) - dy * dy * inv_2se2 - dw * dw * inv_2su2;
            mx = std::max(mx, lw[j]);
        }
        double tot = 0.0;
        if (mx < std::log(1e-300)) {
            for (int j = 0; j < m; ++j) bp.pi(r, j) = 1.0 / m;
        } else {
            for (int j = 0; j < m; ++j) {
                const double e = std::exp(lw[j] - mx);
                bp.pi(r, j) = e;
                tot += e;
            }
            const double inv_tot = 1.0 / tot;
            for (int j = 0; j < m; ++j) bp.pi(r, j) *= inv_tot;
        }
        for (int j = 0; j < m; ++j) {
            const double p = bp.pi(r, j);
            bp.wscore(r, j) = p * (y - mval[j]) * sval[j] * inv_se2;
            if (with_info) bp.w2(r, j) = p * sval[j] * sval[j] * inv_se2;
        }
    }
    return bp;
}

std::vector<std::vector<int>> rows_by_group(const ZGroups& groups, int n) {
    std::vector<std::vector<int>> out(groups.count());
    for (int i = 0; i < n; ++i) out[groups.assignment(i)].push_back(i);
    return out;
}

}  // namespace

std::vector<GroupScores> grouped_scores(const Dataset& data, const ModelSpec& spec,
                                        const std::vector<WorkingPrior>& priors,
                                        const ZGroups& groups, VecRef beta,
                                        const GroupedFredholm& gf) {
    const auto member_rows = rows_by_group(groups, data.n());
    const int p = static_cast<int>(beta.size());
    const int dz = data.zdim();
    std::vector<GroupScores> out(groups.count());
    for (int g = 0; g < groups.count(); ++g) {
        const BatchParts bp = batch_parts(data, member_rows[g], priors[g], spec, beta, false);
        GroupScores& gs = out[g];
        gs.rows = member_rows[g];
        const int ng = static_cast<int>(gs.rows.size());
        gs.pi = bp.pi;
        gs.sbeta.resize(ng, p);
        gs.sbeta.leftCols(2) = bp.wscore * bp.v;
        const VectorXd rowsum = bp.wscore.rowwise().sum();
        gs.sbeta.rightCols(dz) = rowsum.asDiagonal() * bp.zg;
        gs.seff = gs.sbeta - bp.pi * gf.a_star[g];
    }
    return out;
}

VectorXd efficient_score_sum(const Dataset& data, const ModelSpec& spec,
                             const std::vector<WorkingPrior>& priors, const ZGroups& groups,
                             VecRef beta, int n_w, int n_y) {
    const GroupedFredholm gf = build_grouped(beta, priors, groups, spec, n_w, n_y, true);
    VectorXd f = VectorXd::Zero(beta.size());
    for (const GroupScores& gs : grouped_scores(data, spec, priors, groups, beta, gf))
        f += gs.seff.colwise().sum().transpose();
    return f;
}

double working_loglik(const Dataset& data, const ModelSpec& spec,
                      const std::vector<WorkingPrior>& priors, const ZGroups& groups, VecRef beta) {
    double ll = 0.0;
    for (int i = 0; i < data.n(); ++i) {
        const Observation o = data.row(i);
        const WorkingPrior& prior = priors[groups.assignment(i)];
        double mx = -std::numeric_limits<double>::infinity();
        VectorXd lw(prior.size());
        for (int j = 0; j < prior.size(); ++j) {
            const double x = prior.support(j);
            lw(j) = std::log(std::max(prior.masses(j), 1e-300)) +
                    spec.loglik_y_given_xz(o.y, x, o.z, beta) + spec.loglik_w_given_x(o.w, x);
            mx = std::max(mx, lw(j));
        }
        ll += mx + std::log((lw.array() - mx).exp().sum());
    }
    return ll;
}

ScoreStats efficient_score_stats(const Dataset& data, const ModelSpec& spec,
                                 const std::vector<WorkingPrior>& priors, const ZGroups& groups,
                                 VecRef beta, int n_w, int n_y) {
    const GroupedFredholm gf = build_grouped(beta, priors, groups, spec, n_w, n_y, true);
    ScoreStats st;
    st.sum = VectorXd::Zero(beta.size());
    st.sumsq = VectorXd::Zero(beta.size());
    for (const GroupScores& gs : grouped_scores(data, spec, priors, groups, beta, gf)) {
        st.sum += gs.seff.colwise().sum().transpose();
        st.sumsq += gs.seff.cwiseAbs2().colwise().sum().transpose();
    }
    return st;
}

namespace {
// Complete-data information under the working posterior: a positive definite
// stand-in for -dF/dbeta. Much better behaved far from the root than the
// finite-difference Jacobian.
MatrixXd em_information(const Dataset& data, const ModelSpec& spec,
                        const std::vector<WorkingPrior>& priors, const ZGroups& groups, VecRef beta) {
    const int p = static_cast<int>(beta.size());
    const int dz = data.zdim();
    MatrixXd info = MatrixXd::Zero(p, p);
    const auto member_rows = rows_by_group(groups, data.n());
    for (int g = 0; g < groups.count(); ++g) {
        const BatchParts bp = batch_parts(data, member_rows[g], priors[g], spec, beta, true);
        // block structure of sum_i sum_j w2_ij [v_j; z_i][v_j; z_i]'
        const VectorXd colw = bp.w2.colwise().sum().transpose();
        const VectorXd roww = bp.w2.rowwise().sum();
        info.topLeftCorner(2, 2) += bp.v.transpose() * colw.asDiagonal() * bp.v;
        const MatrixXd cross = (bp.w2 * bp.v).transpose() * bp.zg;  // 2 x dz
        info.topRightCorner(2, dz) += cross;
        info.bottomLeftCorner(dz, 2) += cross.transpose();
        info.bottomRightCorner(dz, dz) += bp.zg.transpose() * roww.asDiagonal() * bp.zg;
    }
    return info;
}
}  // namespace

FittedBeta fit_beta_grouped(const Dataset& data, const ModelSpec& spec,
                            const std::vector<WorkingPrior>& priors, const ZGroups& groups,
                            VecRef init, const FitOptions& opts) {
    const int p = spec.mean.pdim();
    if (data.n() <= p) throw std::invalid_argument("fit_beta: need n > p");
    if (init.size() != p) throw std::invalid_argument("fit_beta: init has wrong length");
    if (!init.allFinite()) throw std::invalid_argument("fit_beta: init must be finite");
    const double tol = opts.tol > 0.0 ? opts.tol : 1e-6 * data.n();

    auto equation = [&](VecRef b) {
        return efficient_score_sum(data, spec, priors, groups, b, opts.n_w, opts.n_y);
    };

    VectorXd beta = init;
    const ScoreStats init_stats =
        efficient_score_stats(data, spec, priors, groups, beta, opts.n_w, opts.n_y);
    VectorXd f = init_stats.sum;
    double norm = f.cwiseAbs().maxCoeff();
    std::ostringstream trace;
    trace << "iter 0: ||F||_inf = " << norm;

    // Globalization phase: damped fixed point against the complete-data
    // information. Monotone line searches stall in the curved valley this
    // equation lives in, so only guard against blow-ups here.
    {
        const double f0 = norm;
        // no point iterating once safely below the statistical floor
        VectorXd phase_floor(p);
        for (int k = 0; k < p; ++k)
            phase_floor(k) = std::max(tol, 0.9 * opts.noise_tol_frac * std::sqrt(init_stats.sumsq(k)));
        auto under_phase_floor = [&](const VectorXd& fv) {
            for (int k = 0; k < p; ++k)
                if (std::abs(fv(k)) > phase_floor(k)) return false;
            return true;
        };
        VectorXd best_beta = beta;
        double best_norm = norm;
        double window_norm = norm;
        for (int it = 0; it < 200 && norm >= std::max(tol, 1e-3 * f0) && !under_phase_floor(f);
             ++it) {
            if (it % 10 == 9) {  // stagnation: linear tail no longer worth it
                if (norm > 0.98 * window_norm) break;
                window_norm = norm;
            }
            const MatrixXd info = em_information(data, spec, priors, groups, beta);
            const VectorXd step = info.ldlt().solve(f);
            if (!step.allFinite() || step.norm() < 1e-12 * (1.0 + beta.norm())) break;
            double t = 1.0;
            VectorXd cand, fc;
            double nc = std::numeric_limits<double>::infinity();
            for (int halving = 0; halving < 6; ++halving) {
                cand = beta + t * step;
                try {
                    fc = equation(cand);
                    nc = fc.cwiseAbs().maxCoeff();
                } catch (const std::exception&) {
                    nc = std::numeric_limits<double>::infinity();
                }
                if (nc < 3.0 * best_norm) break;
                t *= 0.5;
            }
            if (!std::isfinite(nc)) break;
            beta = cand;
            f = fc;
            norm = nc;
            if (norm < best_norm) {
                best_norm = norm;
                best_beta = beta;
            }
        }
        if (best_norm < norm) {
            beta = best_beta;
            f = equation(beta);
            norm = f.cwiseAbs().maxCoeff();
        }
        trace << "; fixed-point: ||F||_inf = " << norm;
    }

    // solved means every coordinate is below max(tol, statistical floor);
    // a stalled search tolerates twice the floor rather than failing over to
    // a different point of the solution ridge
    auto solved_at = [&](VecRef b, const VectorXd& fv, double slack) {
        if (fv.cwiseAbs().maxCoeff() < tol) return true;
        const ScoreStats st =
            efficient_score_stats(data, spec, priors, groups, b, opts.n_w, opts.n_y);
        for (int k = 0; k < p; ++k) {
            const double floor_k =
                std::max(tol, slack * opts.noise_tol_frac * std::sqrt(st.sumsq(k)));
            if (std::abs(fv(k)) > floor_k) return false;
        }
        return true;
    };

    int iter = 0;
    int slow_iters = 0;
    double prev_norm = norm;
    bool solved = solved_at(beta, f, 1.0);
    while (!solved && iter < opts.max_iter) {
        MatrixXd jac(p, p);
        VectorXd bp = beta;
        for (int k = 0; k < p; ++k) {
            const double h = 1e-5 * (1.0 + std::abs(beta(k)));
            const double b0 = bp(k);
            bp(k) = b0 + h;
            const VectorXd fu = equation(bp);
            bp(k) = b0 - h;
            const VectorXd fd = equation(bp);
            bp(k) = b0;
            jac.col(k) = (fu - fd) / (2.0 * h);
        }
        Eigen::FullPivLU<MatrixXd> lu(jac);
        if (!lu.isInvertible()) {
            Eigen::JacobiSVD<MatrixXd> svd(jac);
            const double cond = svd.singularValues()(0) /
                                std::max(svd.singularValues()(p - 1), 1e-300);
            std::ostringstream msg;
            msg << "fit_beta: singular Jacobian at iteration " << iter << " (condition ~ " << cond << ")";
            throw std::runtime_error(msg.str());
        }
        const VectorXd newton_step = lu.solve(-f);
        // fallback 1: step against the complete-data information (F' ~ -info)
        const MatrixXd info = em_information(data, spec, priors, groups, beta);
        const VectorXd em_step = info.ldlt().solve(f);
        // fallback 2: steepest descent of 0.5*||F||^2, scaled to the Newton step
        VectorXd grad_step = -(jac.transpose() * f);
        if (grad_step.norm() > 0.0) grad_step *= newton_step.norm() / grad_step.norm();

        bool accepted = false;
        const std::array<const VectorXd*, 3> directions = {&newton_step, &em_step, &grad_step};
        for (const VectorXd* dir : directions) {
            double t = 1.0;
            for (int halving = 0; halving <= 10 && !accepted; ++halving) {
                const VectorXd cand = beta + t * (*dir);
                VectorXd fc;
                try {
                    fc = equation(cand);
                } catch (const std::exception&) {
                    t *= 0.5;
                    continue;
                }
                const double nc = fc.cwiseAbs().maxCoeff();
                if (nc < norm) {
                    beta = cand;
                    f = fc;
                    norm = nc;
                    accepted = true;
                }
                t *= 0.5;
            }
            if (accepted) break;
        }
        ++iter;
        trace << "; iter " << iter << ": ||F||_inf = " << norm;
        if (accepted) {
            slow_iters = norm > 0.98 * prev_norm ? slow_iters + 1 : 0;
            prev_norm = norm;
            if (slow_iters >= 3) {
                if (solved_at(beta, f, 2.0)) {
                    solved = true;
                    break;
                }
                throw NonConvergenceError("fit_beta: negligible progress (" + trace.str() + ")");
            }
        }
        if (!accepted) {
            if (solved_at(beta, f, 2.0)) {
                solved = true;
                break;
            }
            throw NonConvergenceError("fit_beta: step halving failed to reduce the equation norm (" +
                                      trace.str() + ")");
        }
        solved = solved_at(beta, f, 1.0);
    }
    if (!solved && solved_at(beta, f, 2.0)) solved = true;
    if (!solved)
        throw NonConvergenceError("fit_beta: max_iter reached (" + trace.str() + ")");

    FittedBeta out;
    out.beta_hat = beta;
    out.iterations = iter;
    out.final_eq_norm = norm;
    out.group_assignments = groups.assignment;
    out.priors = priors;
    out.groups = groups;
    out.converged = true;
    return out;
}

FittedBeta fit_beta(const Dataset& data, const ModelSpec& spec, const PriorBuilder& prior_builder,
                    VecRef init, const FitOptions& opts) {
    const ZGroups groups = zgroups_from_kmeans(data, opts.kmeans_iter, opts.kmeans_seed);
    const std::vector<WorkingPrior> priors = prior_builder(data, groups);
    return fit_beta_grouped(data, spec, priors, groups, init, opts);
}

}  // namespace mep
