#include "core/fredholm.hpp"

#include <cmath>
#include <sstream>

namespace mep {

FredholmAudit& FredholmAudit::instance() {
    static FredholmAudit audit;
    return audit;
}

void FredholmAudit::reset() {
    row_sum_err_.store(0.0);
    solve_rel_.store(0.0);
    built_.store(0);
    solved_.store(0);
}

namespace {
void atomic_max(std::atomic<double>& slot, double v) {
    double cur = slot.load();
    while (v > cur && !slot.compare_exchange_weak(cur, v)) {
    }
}
}  // namespace

void FredholmAudit::record_row_sum_err(double e) {
    ++built_;
    atomic_max(row_sum_err_, e);
}

void FredholmAudit::record_solve_residual(double rel) {
    ++solved_;
    atomic_max(solve_rel_, rel);
}

VectorXd posterior_weights(const Observation& o, VecRef beta, const WorkingPrior& prior,
                           const ModelSpec& spec, bool* underflow) {
    const int m = prior.size();
    if (underflow) *underflow = false;
    VectorXd lw(m);
    for (int j = 0; j < m; ++j) {
        const double x = prior.support(j);
        lw(j) = std::log(std::max(prior.masses(j), 1e-300)) + spec.loglik_y_given_xz(o.y, x, o.z, beta) +
                spec.loglik_w_given_x(o.w, x);
    }
    const double mx = lw.maxCoeff();
    if (mx < std::log(1e-300)) {
        if (underflow) *underflow = true;
        return VectorXd::Constant(m, 1.0 / m);
    }
    VectorXd w = (lw.array() - mx).exp();
    return w / w.sum();
}

FredholmSystem build_system(VecRef z_ref, VecRef beta, const WorkingPrior& prior,
                            const ModelSpec& spec, int n_w, int n_y, MatrixXd* score_rhs) {
    prior.validate();
    spec.validate();
    const int m = prior.size();
    FredholmSystem sys;
    sys.z_ref = z_ref;
    sys.prior = prior;
    sys.beta = beta;

    const GaussHermite ghw = gauss_hermite(n_w);
    const GaussHermite ghy = gauss_hermite(n_y);
    const double sqrt2 = std::sqrt(2.0);
    const double sqrt_pi = std::sqrt(M_PI);
    sys.w_wts = ghw.weights / sqrt_pi;
    sys.y_wts = ghy.weights / sqrt_pi;

    sys.mean_at_support.resize(m);
    for (int j = 0; j < m; ++j) sys.mean_at_support(j) = spec.mean.value(prior.support(j), z_ref, beta);

    sys.w_nodes.resize(m, n_w);
    sys.y_nodes.resize(m, n_y);
    for (int i = 0; i < m; ++i) {
        sys.w_nodes.row(i) = (ghw.nodes.array() * sqrt2 * spec.sigma_u + prior.support(i)).transpose();
        sys.y_nodes.row(i) = (ghy.nodes.array() * sqrt2 * spec.sigma_eps + sys.mean_at_support(i)).transpose();
    }

    const double inv_2su2 = 0.5 / (spec.sigma_u * spec.sigma_u);
    const double inv_2se2 = 0.5 / (spec.sigma_eps * spec.sigma_eps);
    const double inv_se2 = 1.0 / (spec.sigma_eps * spec.sigma_eps);
    const int p = spec.mean.pdim();
    MatrixXd grads;
    if (score_rhs) {
        grads.resize(m, p);
        for (int j = 0; j < m; ++j)
            grads.row(j) = spec.mean.grad(prior.support(j), z_ref, beta).transpose();
        score_rhs->setZero(m, p);
    }
    sys.A.setZero(m, m);
    MatrixXd ew(m, n_w), ey(m, n_y);  // column-major: j runs down a column
    std::vector<double> q(m), acc(m), coef(m);
    for (int i = 0; i < m; ++i) {
        for (int a = 0; a < n_w; ++a) {
            const double w = sys.w_nodes(i, a);
            for (int j = 0; j < m; ++j) {
                const double d = w - prior.support(j);
                ew(j, a) = std::exp(-d * d * inv_2su2);
            }
        }
        for (int b = 0; b < n_y; ++b) {
            const double y = sys.y_nodes(i, b);
            for (int j = 0; j < m; ++j) {
                const double d = y - sys.mean_at_support(j);
                ey(j, b) = std::exp(-d * d * inv_2se2);
            }
        }
        std::fill(acc.begin(), acc.end(), 0.0);
        std::fill(coef.begin(), coef.end(), 0.0);
        for (int a = 0; a < n_w; ++a) {
            const double* ewa = ew.data() + static_cast<size_t>(a) * m;
            for (int b = 0; b < n_y; ++b) {
                const double* eyb = ey.data() + static_cast<size_t>(b) * m;
                double tot = 0.0;
                for (int j = 0; j < m; ++j) {
                    q[j] = prior.masses(j) * ewa[j] * eyb[j];
                    tot += q[j];
                }
                const double node_wt = sys.w_wts(a) * sys.y_wts(b);
                if (tot <= 0.0) {
                    const double u = node_wt / m;
                    for (int j = 0; j < m; ++j) acc[j] += u;
                } else {
                    const double u = node_wt / tot;
                    for (int j = 0; j < m; ++j) acc[j] += u * q[j];
                    if (score_rhs) {
                        const double y = sys.y_nodes(i, b);
                        const double us = u * inv_se2;
                        for (int j = 0; j < m; ++j)
                            coef[j] += us * q[j] * (y - sys.mean_at_support(j));
                    }
                }
            }
        }
        for (int j = 0; j < m; ++j) sys.A(i, j) = acc[j];
        if (score_rhs)
            for (int j = 0; j < m; ++j) score_rhs->row(i) += coef[j] * grads.row(j);
        const double row_err = std::abs(sys.A.row(i).sum() - 1.0);
        if (row_err > 1e-3) {
            std::ostringstream msg;
            msg << "build_system: quadrature normalization failed at x_" << i << " = " << prior.support(i)
                << " (row sum off by " << row_err << ")";
            throw std::runtime_error(msg.str());
        }
        if (FredholmAudit::instance().enabled()) FredholmAudit::instance().record_row_sum_err(row_err);
    }

    Eigen::JacobiSVD<MatrixXd> svd(sys.A, Eigen::ComputeThinU | Eigen::ComputeThinV);
    sys.svd_u = svd.matrixU();
    sys.svd_v = svd.matrixV();
    sys.svd_sigma = svd.singularValues();
    return sys;
}

MatrixXd rhs_score(const FredholmSystem& sys, const ModelSpec& spec) {
    const int m = sys.prior.size();
    const int p = spec.mean.pdim();
    const int n_w = static_cast<int>(sys.w_wts.size());
    const int n_y = static_cast<int>(sys.y_wts.size());
    const double inv_se2 = 1.0 / (spec.sigma_eps * spec.sigma_eps);
    const double inv_2su2 = 0.5 / (spec.sigma_u * spec.sigma_u);
    const double inv_2se2 = 0.5 * inv_se2;

    MatrixXd grads(m, p);
    for (int j = 0; j < m; ++j)
        grads.row(j) = spec.mean.grad(sys.prior.support(j), sys.z_ref, sys.beta).transpose();

    MatrixXd b = MatrixXd::Zero(m, p);
    MatrixXd ew(m, n_w), ey(m, n_y);
    std::vector<double> q(m), coef(m);
    for (int i = 0; i < m; ++i) {
        for (int a = 0; a < n_w; ++a) {
            const double w = sys.w_nodes(i, a);
            for (int j = 0; j < m; ++j) {
                const double d = w - sys.prior.support(j);
                ew(j, a) = std::exp(-d * d * inv_2su2);
            }
        }
        for (int bb = 0; bb < n_y; ++bb) {
            const double y = sys.y_nodes(i, bb);
            for (int j = 0; j < m; ++j) {
                const double d = y - sys.mean_at_support(j);
                ey(j, bb) = std::exp(-d * d * inv_2se2);
            }
        }
        // coef_j = integral of pi_j(o) (y - m_j)/sigma_eps^2 over the node
        // grid; the score column is then grads' coef
        std::fill(coef.begin(), coef.end(), 0.0);
        for (int a = 0; a < n_w; ++a) {
            const double* ewa = ew.data() + static_cast<size_t>(a) * m;
            for (int bb = 0; bb < n_y; ++bb) {
                const double* eyb = ey.data() + static_cast<size_t>(bb) * m;
                double tot = 0.0;
                for (int j = 0; j < m; ++j) {
                    q[j] = sys.prior.masses(j) * ewa[j] * eyb[j];
                    tot += q[j];
                }
                if (tot <= 0.0) continue;  // no posterior mass reaches this node
                const double y = sys.y_nodes(i, bb);
                const double u = sys.w_wts(a) * sys.y_wts(bb) * inv_se2 / tot;
                for (int j = 0; j < m; ++j)
                    coef[j] += u * q[j] * (y - sys.mean_at_support(j));
            }
        }
        for (int j = 0; j < m; ++j) b.row(i) += coef[j] * grads.row(j);
    }
    return b;
}

MatrixXd center_at_w_nodes(const FredholmSystem& sys, const Center& center, VecRef beta_center) {
    const int m = sys.prior.size();
    const int n_w = static_cast<int>(sys.w_wts.size());
    MatrixXd c(m, n_w);
    for (int i = 0; i < m; ++i)
        for (int a = 0; a < n_w; ++a) c(i, a) = center.value(sys.w_nodes(i, a), sys.z_ref, beta_center);
    if (!c.allFinite()) throw std::runtime_error("center_at_w_nodes: non-finite center value");
    return c;
}

VectorXd indicator_profile(const FredholmSystem& sys, const MatrixXd& center_vals, double zeta,
                           const ModelSpec& spec) {
    const int m = sys.prior.size();
    const int n_w = static_cast<int>(sys.w_wts.size());
    const double inv_se = 1.0 / spec.sigma_eps;
    VectorXd q(m);
    for (int i = 0; i < m; ++i) {
        double acc = 0.0;
        for (int a = 0; a < n_w; ++a) {
            const double c = center_vals(i, a);
            const double hi = (c + zeta - sys.mean_at_support(i)) * inv_se;
            const double lo = (c - zeta - sys.mean_at_support(i)) * inv_se;
            acc += sys.w_wts(a) * (normal_cdf(hi) - normal_cdf(lo));
        }
        q(i) = acc;
    }
    return q;
}

VectorXd rhs_a1_from_profile(const VectorXd& q, const WorkingPrior& prior) {
    const double avg = prior.masses.dot(q);
    return VectorXd::Constant(q.size(), avg) - q;
}

VectorXd rhs_a1(const FredholmSystem& sys, double zeta, const Center& center, VecRef beta_center,
                const ModelSpec& spec) {
    if (!(zeta >= 0.0)) throw std::invalid_argument("rhs_a1: zeta must be nonnegative");
    const MatrixXd cv = center_at_w_nodes(sys, center, beta_center);
    return rhs_a1_from_profile(indicator_profile(sys, cv, zeta, spec), sys.prior);
}

MatrixXd fredholm_solve(const FredholmSystem& sys, MatRef rhs) {
    if (rhs.rows() != sys.A.rows()) throw std::invalid_argument("fredholm_solve: rhs row count mismatch");
    const double scut = sys.sv_cutoff * sys.svd_sigma(0);
    int kept = 0;
    while (kept < sys.svd_sigma.size() && sys.svd_sigma(kept) >= scut) ++kept;
    const MatrixXd coef = sys.svd_u.leftCols(kept).transpose() * rhs;
    const MatrixXd a =
        sys.svd_v.leftCols(kept) * sys.svd_sigma.head(kept).cwiseInverse().asDiagonal() * coef;

    const double rhs_scale = rhs.cwiseAbs().maxCoeff();
    if (rhs_scale > 1e-12) {
        // the solve is exact on the resolved span, so the residual is the
        // dropped content of rhs; fail only when that dominates
        const double dropped = (rhs - sys.svd_u.leftCols(kept) * coef).cwiseAbs().maxCoeff();
        if (dropped > 0.5 * rhs_scale) {
            std::ostringstream msg;
            msg << "fredholm_solve: right-hand side lies outside the resolvable range (dropped "
                << dropped << " of " << rhs_scale << ", sigma_1 " << sys.svd_sigma(0) << ", sigma_m "
                << sys.svd_sigma(sys.svd_sigma.size() - 1) << ")";
            throw std::runtime_error(msg.str());
        }
        if (FredholmAudit::instance().enabled()) {
            const double resid = (sys.A * a - rhs).cwiseAbs().maxCoeff();
            FredholmAudit::instance().record_solve_residual(resid / rhs_scale);
        }
    }
    return a;
}

}  // namespace mep
