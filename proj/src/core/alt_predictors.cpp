#include "core/alt_predictors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "core/rng.hpp"

namespace mep {

SplitPlan SplitPlan::make(int n, double estimation_fraction, std::uint64_t seed) {
    if (n < 2) throw std::invalid_argument("SplitPlan: need at least 2 rows");
    if (!(estimation_fraction >= 0.0 && estimation_fraction < 1.0))
        throw std::invalid_argument("SplitPlan: estimation fraction outside [0,1)");
    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(seed, 0x5eedu);
    for (int i = n - 1; i > 0; --i) {
        const int j = static_cast<int>(rng.next_u64() % static_cast<std::uint64_t>(i + 1));
        std::swap(idx[i], idx[j]);
    }
    SplitPlan plan;
    plan.seed = seed;
    const int n_est = static_cast<int>(std::floor(n * estimation_fraction));
    plan.estimation.assign(idx.begin(), idx.begin() + n_est);
    plan.calibration.assign(idx.begin() + n_est, idx.end());
    return plan;
}

void SplitPlan::validate(int n) const {
    if (calibration.empty()) throw std::invalid_argument("SplitPlan: calibration set empty");
    std::vector<char> seen(n, 0);
    for (int i : estimation) {
        if (i < 0 || i >= n || seen[i]) throw std::invalid_argument("SplitPlan: bad estimation index");
        seen[i] = 1;
    }
    for (int i : calibration) {
        if (i < 0 || i >= n || seen[i]) throw std::invalid_argument("SplitPlan: bad calibration index");
        seen[i] = 1;
    }
    for (int i = 0; i < n; ++i)
        if (!seen[i]) throw std::invalid_argument("SplitPlan: indices do not cover the dataset");
}

ConformalFit conformal_fit(const Dataset& data, double alpha, const SplitPlan& plan,
                           const CenterFitter& fitter, const ModelSpec& spec) {
    (void)spec;
    if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("conformal_fit: alpha outside (0,1)");
    plan.validate(data.n());
    if (plan.calibration.size() < 10)
        throw std::invalid_argument("conformal_fit: calibration set must have >= 10 rows");

    const Dataset est = data.subset(plan.estimation);
    FittedCenter fc = fitter(est);

    VectorXd r(plan.calibration.size());
    for (size_t k = 0; k < plan.calibration.size(); ++k)
        r(k) = residual(data.row(plan.calibration[k]), *fc.center, fc.beta);

    ZetaEstimate est_out;
    est_out.method = ZetaMethod::Conformal;
    est_out.alpha = alpha;
    est_out.zeta_hat = empirical_quantile(r, 1.0 - alpha);
    est_out.bracket_lo = r.minCoeff();
    est_out.bracket_hi = r.maxCoeff();
    est_out.density_at_zeta = kde_at(est_out.zeta_hat, r, silverman_bandwidth(r));
    const bool degenerate = (r.maxCoeff() - r.minCoeff()) == 0.0;
    est_out.degenerate = degenerate;
    if (degenerate) {
        est_out.variance = 0.0;
    } else {
        const double d = est_out.density_at_zeta;
        est_out.variance = alpha * (1.0 - alpha) / (static_cast<double>(r.size()) * d * d);
    }

    ConformalFit out;
    out.zeta = est_out;
    out.center = std::move(fc);
    out.calibration_residuals = std::move(r);
    return out;
}

namespace {
// Conditional-moment kernels are oversmoothed relative to the center fit:
// at center-fit bandwidths they chase the (misspecified) model's smooth
// residual mean and bias the correction terms.
constexpr double kMomentBandwidthScale = 4.0;

NwSettings scaled_bandwidths(const NwSettings& nw, double factor) {
    NwSettings out = nw;
    out.bandwidths *= factor;
    return out;
}
}  // namespace

DirectFit direct_fit(const Dataset& data, double alpha, const NwSettings* settings,
                     const ModelSpec& spec, const VectorXd* center_override) {
    (void)spec;
    if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("direct_fit: alpha outside (0,1)");
    if (settings == nullptr && data.n() < 30)
        throw std::invalid_argument("direct_fit: need n >= 30 for automatic bandwidths");
    const NwSettings nw = settings ? *settings : nw_settings_for(data);
    const int n = data.n();

    // supplied settings are used verbatim; automatic ones get the moment scale
    const NwSettings nw_moment =
        settings ? *settings : scaled_bandwidths(nw, kMomentBandwidthScale);
    const MatrixXd w_full = nw_weight_matrix(data, data, nw_moment, /*leave_one_out=*/false);

    VectorXd centers(n);
    if (center_override) {
        if (center_override->size() != n) throw std::invalid_argument("direct_fit: bad center override");
        centers = *center_override;
    } else {
        const MatrixXd w_loo = nw_weight_matrix(data, data, nw, /*leave_one_out=*/true);
        centers = w_loo * data.ys();
    }
    const VectorXd eps = data.ys() - centers;
    const VectorXd r = eps.cwiseAbs();
    const double h = silverman_bandwidth(r);
    const double inv_h = 1.0 / h;

    auto g_fn = [&](double zeta) {
        // dhat_i = NW estimate of E[ delta{zeta - r} | w_i, z_i ]
        VectorXd kh(n);
        for (int j = 0; j < n; ++j) {
            const double u = (zeta - r(j)) * inv_h;
            kh(j) = 0.3989422804014326779 * inv_h * std::exp(-0.5 * u * u);
        }
        const VectorXd dhat = w_full * kh;
        double acc = 0.0;
        for (int i = 0; i < n; ++i)
            acc += (1.0 - alpha) - (r(i) < zeta ? 1.0 : 0.0) - eps(i) * dhat(i);
        return acc;
    };

    double hi = 2.0 * r.maxCoeff();
    if (!(hi > 0.0)) hi = 1.0;
    const BisectResult root = bisect_root(g_fn, 0.0, hi, 1e-9 * hi, 200);

    DirectFit out;
    out.zeta.zeta_hat = root.root;
    out.zeta.method = ZetaMethod::Direct;
    out.zeta.alpha = alpha;
    out.zeta.bracket_lo = root.lo;
    out.zeta.bracket_hi = root.hi;
    out.zeta.iterations = root.iterations;
    out.zeta.density_at_zeta = kde_at(root.root, r, h);
    out.centers = std::move(centers);
    out.residuals = r;
    return out;
}

namespace {
VectorXd linear_ls_poly2(const Dataset& data) {
    const int n = data.n();
    const int p = 2 + data.zdim();
    MatrixXd x(n, p);
    for (int i = 0; i < n; ++i) {
        x(i, 0) = data.w(i);
        x(i, 1) = data.w(i) * data.w(i);
        x.row(i).segment(2, data.zdim()) = data.z(i).transpose();
    }
    return (x.transpose() * x).ldlt().solve(x.transpose() * data.ys());
}
}  // namespace

FittedBeta naive_fit_beta(const Dataset& data, const ModelSpec& spec, const VectorXd& init) {
    const int p = spec.mean.pdim();
    const int n = data.n();
    if (n <= p) throw std::invalid_argument("naive_fit_beta: need n > p");

    VectorXd beta;
    if (init.size() == p) {
        beta = init;
    } else if (init.size() == 0) {
        beta = (spec.mean.family == MeanFamily::Poly2) ? linear_ls_poly2(data) : VectorXd::Zero(p);
    } else {
        throw std::invalid_argument("naive_fit_beta: init has wrong length");
    }

    auto sse_of = [&](VecRef b) {
        double s = 0.0;
        for (int i = 0; i < n; ++i) {
            const double e = data.y(i) - spec.mean.value(data.w(i), data.z(i), b);
            s += e * e;
        }
        return s;
    };

    double sse = sse_of(beta);
    const double grad_tol = 1e-8 * n;
    const int max_iter = 200;
    int iter = 0;
    double grad_norm = std::numeric_limits<double>::infinity();
    for (; iter < max_iter; ++iter) {
        MatrixXd jac(n, p);
        VectorXd e(n);
        for (int i = 0; i < n; ++i) {
            e(i) = data.y(i) - spec.mean.value(data.w(i), data.z(i), beta);
            jac.row(i) = spec.mean.grad(data.w(i), data.z(i), beta).transpose();
        }
        const VectorXd grad = jac.transpose() * e;
        grad_norm = grad.cwiseAbs().maxCoeff();
        if (grad_norm < grad_tol) break;
        MatrixXd jtj = jac.transpose() * jac;
        jtj.diagonal().array() += 1e-12 * (1.0 + jtj.trace());
        const VectorXd step = jtj.ldlt().solve(grad);

        double t = 1.0;
        bool accepted = false;
        for (int halving = 0; halving <= 20; ++halving) {
            const VectorXd cand = beta + t * step;
            const double sc = sse_of(cand);
            if (sc < sse) {
                beta = cand;
                sse = sc;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if (!accepted) break;  // stationary within line-search resolution
    }
    if (grad_norm >= grad_tol && iter >= max_iter) {
        std::ostringstream msg;
        msg << "naive_fit_beta: no convergence after " << max_iter << " iterations (gradient norm "
            << grad_norm << ")";
        throw NonConvergenceError(msg.str());
    }

    FittedBeta out;
    out.beta_hat = beta;
    out.iterations = iter;
    out.final_eq_norm = grad_norm;
    out.converged = true;
    return out;
}

ZetaEstimate naive_fit_zeta(const Dataset& data, double alpha, const FittedBeta& naive_beta,
                            const ModelSpec& spec, const NwSettings* settings) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("naive_fit_zeta: alpha outside (0,1)");
    const int n = data.n();
    const int p = spec.mean.pdim();
    const VectorXd& beta = naive_beta.beta_hat;

    VectorXd eps(n), r(n);
    MatrixXd mgrad(n, p);
    for (int i = 0; i < n; ++i) {
        eps(i) = data.y(i) - spec.mean.value(data.w(i), data.z(i), beta);
        r(i) = std::abs(eps(i));
        mgrad.row(i) = spec.mean.grad(data.w(i), data.z(i), beta).transpose();
    }

    const NwSettings nw = settings
                              ? *settings
                              : scaled_bandwidths(nw_settings_for(data), kMomentBandwidthScale);
    // leave-one-out: with the own observation included, E[eps I{r<zeta} | w,z]
    // picks up a positive eps_i^2 self term and the estimating function can
    // stay positive for every zeta
    const MatrixXd w_full = nw_weight_matrix(data, data, nw, /*leave_one_out=*/true);

    const VectorXd eps2 = eps.cwiseAbs2();
    const VectorXd eps4 = eps2.cwiseAbs2();
    VectorXd e2 = w_full * eps2;
    VectorXd v4 = (w_full * eps4) - e2.cwiseAbs2();
    const double e2_floor = 1e-10 * std::max(eps2.mean(), 1e-300);
    const double v4_floor = 1e-8 * std::max(eps4.mean(), 1e-300);
    e2 = e2.cwiseMax(e2_floor);
    v4 = v4.cwiseMax(v4_floor);

    MatrixXd mom = MatrixXd::Zero(p, p);
    for (int i = 0; i < n; ++i) mom += mgrad.row(i).transpose() * mgrad.row(i) / v4(i);
    mom /= n;
    Eigen::FullPivLU<MatrixXd> lu(mom);
    if (!lu.isInvertible()) throw std::runtime_error("naive_fit_zeta: singular moment matrix M");

    const double h = silverman_bandwidth(r);
    const double inv_h = 1.0 / h;

    auto g_fn = [&](double zeta) {
        VectorXd ind(n), kh(n);
        for (int i = 0; i < n; ++i) {
            ind(i) = r(i) < zeta ? 1.0 : 0.0;
            const double u = (zeta - r(i)) * inv_h;
            kh(i) = 0.3989422804014326779 * inv_h * std::exp(-0.5 * u * u);
        }
        // v(zeta) = avg of K_h(zeta - r) dr/dbeta + eps I{r<zeta} m' / e2
        VectorXd v = VectorXd::Zero(p);
        for (int i = 0; i < n; ++i) {
            const double sgn = eps(i) > 0.0 ? 1.0 : (eps(i) < 0.0 ? -1.0 : 0.0);
            v += kh(i) * (-sgn) * mgrad.row(i).transpose();
            v += eps(i) * ind(i) / e2(i) * mgrad.row(i).transpose();
        }
        v /= n;
        const VectorXd minv_v = lu.solve(v);
        const VectorXd g1 = w_full * (eps.array() * ind.array()).matrix();
        double acc = 0.0;
        for (int i = 0; i < n; ++i) {
            acc += (1.0 - alpha) - ind(i);
            acc += eps(i) * g1(i) / e2(i);
            acc += eps(i) * mgrad.row(i).dot(minv_v);
        }
        return acc;
    };

    double hi = 2.0 * r.maxCoeff();
    if (!(hi > 0.0)) hi = 1.0;
    const BisectResult root = bisect_root(g_fn, 0.0, hi, 1e-9 * hi, 200);

    ZetaEstimate out;
    out.zeta_hat = root.root;
    out.method = ZetaMethod::Naive;
    out.alpha = alpha;
    out.bracket_lo = root.lo;
    out.bracket_hi = root.hi;
    out.iterations = root.iterations;
    out.density_at_zeta = kde_at(root.root, r, h);
    return out;
}

}  // namespace mep
