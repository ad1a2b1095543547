#include <doctest.h>

#include <algorithm>

#include "core/alt_predictors.hpp"
#include "core/sim_bench.hpp"
#include "oracle_helpers.hpp"

using namespace mep;

namespace {
ModelSpec sim1_spec() {
    ModelSpec spec;
    spec.mean.family = MeanFamily::Poly2;
    spec.mean.zdim = 3;
    spec.sigma_eps = 0.1;
    spec.sigma_u = 0.3;
    return spec;
}

class ConstCenter : public Center {
public:
    explicit ConstCenter(double c) : c_(c) {}
    CenterKind kind() const override { return CenterKind::KernelRegression; }
    double value(double, VecRef, VecRef) const override { return c_; }
    VectorXd beta_grad(double, VecRef, VecRef beta) const override {
        return VectorXd::Zero(beta.size());
    }

private:
    double c_;
};

Dataset integer_residual_data() {
    // y = 1..100 around a zero center
    VectorXd y(100), w(100);
    MatrixXd z(100, 2);
    for (int i = 0; i < 100; ++i) {
        y(i) = i + 1.0;
        w(i) = 0.01 * i;
        z(i, 0) = 1.0;
        z(i, 1) = i % 2;
    }
    return Dataset(y, w, z);
}
}  // namespace

TEST_CASE("split plan") {
    const SplitPlan plan = SplitPlan::make(101, 0.5, 7);
    plan.validate(101);
    CHECK(plan.estimation.size() == 50);
    CHECK(plan.calibration.size() == 51);
    // deterministic in the seed
    const SplitPlan again = SplitPlan::make(101, 0.5, 7);
    CHECK(plan.estimation == again.estimation);
    const SplitPlan other = SplitPlan::make(101, 0.5, 8);
    CHECK(plan.estimation != other.estimation);
}

TEST_CASE("conformal fit") {
    const ModelSpec spec = sim1_spec();

    SUBCASE("order statistic of integer residuals") {
        const Dataset data = integer_residual_data();
        SplitPlan plan;
        plan.calibration.resize(100);
        for (int i = 0; i < 100; ++i) plan.calibration[i] = i;
        auto fitter = [&](const Dataset&) {
            return FittedCenter{std::make_shared<ConstCenter>(0.0), VectorXd::Zero(4)};
        };
        const ConformalFit cf = conformal_fit(data, 0.1, plan, fitter, spec);
        CHECK(cf.zeta.zeta_hat == doctest::Approx(90.0));
        CHECK(cf.zeta.method == ZetaMethod::Conformal);
        CHECK(cf.zeta.variance.has_value());

        // coverage on the calibration half is at least 1 - alpha by construction
        int covered = 0;
        for (int idx : plan.calibration)
            if (std::abs(data.y(idx) - 0.0) <= cf.zeta.zeta_hat) ++covered;
        CHECK(covered >= 90);
    }

    SUBCASE("degenerate residuals flag zero variance") {
        VectorXd y = VectorXd::Constant(40, 2.5), w = VectorXd::Zero(40);
        MatrixXd z = MatrixXd::Ones(40, 1);
        const Dataset data(y, w, z);
        SplitPlan plan;
        for (int i = 0; i < 40; ++i) plan.calibration.push_back(i);
        auto fitter = [&](const Dataset&) {
            return FittedCenter{std::make_shared<ConstCenter>(1.0), VectorXd::Zero(3)};
        };
        const ConformalFit cf = conformal_fit(data, 0.1, plan, fitter, spec);
        CHECK(cf.zeta.degenerate);
        CHECK(cf.zeta.variance.value() == doctest::Approx(0.0));
    }

    SUBCASE("small calibration sets are rejected") {
        const Dataset data = integer_residual_data();
        SplitPlan plan;
        for (int i = 0; i < 95; ++i) plan.estimation.push_back(i);
        for (int i = 95; i < 100; ++i) plan.calibration.push_back(i);
        auto fitter = [&](const Dataset&) {
            return FittedCenter{std::make_shared<ConstCenter>(0.0), VectorXd::Zero(4)};
        };
        CHECK_THROWS(conformal_fit(data, 0.1, plan, fitter, spec));
    }

    SUBCASE("error-free limit recovers the normal quantile") {
        SimScenario sc = SimScenario::simulation1(SimModel::M1, 5000);
        sc.sigma_u = 1e-6;
        sc.seed = 5;
        const GeneratedData gen = generate(sc, 0);
        ModelSpec tiny = sim1_spec();
        tiny.sigma_u = 1e-6;
        const SplitPlan plan = SplitPlan::make(gen.data.n(), 0.5, 3);
        auto fitter = [&](const Dataset&) {
            return FittedCenter{std::make_shared<PluginCenter>(tiny.mean), sc.beta_true};
        };
        const ConformalFit cf = conformal_fit(gen.data, 0.1, plan, fitter, tiny);
        CHECK(std::abs(cf.zeta.zeta_hat - 0.16449) < 0.01);
    }
}

TEST_CASE("direct fit") {
    const ModelSpec spec = sim1_spec();

    SUBCASE("vanishing correction leaves the order statistic") {
        // identical (w,z) rows, recentered residuals: the correction sums to
        // zero exactly, so the root sits in the quantile bracket
        const int n = 60;
        VectorXd y(n), w = VectorXd::Constant(n, 0.5);
        MatrixXd z = MatrixXd::Ones(n, 1);
        Rng rng(8, 0);
        for (int i = 0; i < n; i += 2) {
            const double d = rng.uniform(0.2, 3.0);
            y(i) = d;
            y(i + 1) = -d;  // centers are zero, eps sums to zero pairwise
        }
        const Dataset data(y, w, z);
        const VectorXd centers = VectorXd::Zero(n);
        NwSettings nw;
        nw.bandwidths = VectorXd::Constant(1, 1.0);
        nw.discrete = {false};
        const DirectFit df = direct_fit(data, 0.1, &nw, spec, &centers);
        const double q = empirical_quantile(y.cwiseAbs(), 0.9);
        std::vector<double> sorted(n);
        for (int i = 0; i < n; ++i) sorted[i] = std::abs(y(i));
        std::sort(sorted.begin(), sorted.end());
        const double next = sorted[static_cast<int>(std::ceil(0.9 * n))];
        CHECK(df.zeta.zeta_hat >= q - 1e-9);
        CHECK(df.zeta.zeta_hat <= next + 1e-9);
    }

    SUBCASE("tiny dataset root matches a dense grid scan") {
        const int n = 12;
        VectorXd y(n), w(n);
        MatrixXd z(n, 2);
        Rng rng(15, 0);
        for (int i = 0; i < n; ++i) {
            w(i) = rng.uniform(-1, 1);
            z(i, 0) = 1.0;
            z(i, 1) = rng.uniform();
            y(i) = w(i) + 0.5 * z(i, 1) + rng.normal(0.0, 0.4);
        }
        const Dataset data(y, w, z);
        NwSettings nw;
        nw.bandwidths.resize(2);
        nw.bandwidths << 0.5, 0.4;
        nw.discrete = {false, false};
        const DirectFit df = direct_fit(data, 0.1, &nw, spec);

        // dense scan of the same estimating function
        const MatrixXd w_full = nw_weight_matrix(data, data, nw, false);
        const MatrixXd w_loo = nw_weight_matrix(data, data, nw, true);
        const VectorXd centers = w_loo * data.ys();
        const VectorXd eps = data.ys() - centers;
        const VectorXd r = eps.cwiseAbs();
        const double h = silverman_bandwidth(r);
        auto g_fn = [&](double zeta) {
            double acc = 0.0;
            for (int i = 0; i < n; ++i) {
                double dhat = 0.0;
                for (int j = 0; j < n; ++j)
                    dhat += w_full(i, j) * oracle::normal_pdf(zeta - r(j), 0.0, h);
                acc += 0.9 - (r(i) < zeta ? 1.0 : 0.0) - eps(i) * dhat;
            }
            return acc;
        };
        const double hi = 2.0 * r.maxCoeff();
        double best = 0.0, best_val = 1e300;
        for (int k = 0; k <= 10000; ++k) {
            const double zeta = hi * k / 10000.0;
            const double v = std::abs(g_fn(zeta));
            if (v < best_val) {
                best_val = v;
                best = zeta;
            }
        }
        CHECK(std::abs(df.zeta.zeta_hat - best) <= hi / 10000.0 + 1e-9);
    }

    SUBCASE("automatic bandwidths require enough data") {
        VectorXd y = VectorXd::LinSpaced(12, 0, 1), w = y;
        MatrixXd z = MatrixXd::Ones(12, 1);
        const Dataset data(y, w, z);
        CHECK_THROWS(direct_fit(data, 0.1, nullptr, spec));
    }
}

TEST_CASE("naive least squares") {
    const ModelSpec spec = sim1_spec();

    SUBCASE("no measurement error recovers the generator") {
        SimScenario sc = SimScenario::simulation1(SimModel::M1, 2000);
        sc.sigma_u = 1e-9;
        sc.seed = 44;
        const GeneratedData gen = generate(sc, 0);
        const FittedBeta fb = naive_fit_beta(gen.data, spec, sc.beta_true);
        MatrixXd x(gen.data.n(), 5);
        for (int i = 0; i < gen.data.n(); ++i) {
            x(i, 0) = gen.data.w(i);
            x(i, 1) = gen.data.w(i) * gen.data.w(i);
            x.row(i).segment(2, 3) = gen.data.z(i).transpose();
        }
        const MatrixXd cov = 0.01 * (x.transpose() * x).inverse();
        for (int k = 0; k < 5; ++k)
            CHECK(std::abs(fb.beta_hat(k) - sc.beta_true(k)) < 3.0 * std::sqrt(cov(k, k)));
    }

    SUBCASE("poly2 equals closed-form least squares") {
        Rng rng(61, 0);
        const int n = 300;
        VectorXd y(n), w(n);
        MatrixXd z(n, 3);
        for (int i = 0; i < n; ++i) {
            w(i) = rng.uniform(-2, 2);
            z(i, 0) = 1.0;
            z(i, 1) = rng.uniform();
            z(i, 2) = rng.bernoulli(0.5);
            y(i) = 2.0 * w(i) + 0.5 + 0.3 * z(i, 1) - 0.2 * z(i, 2) + rng.normal(0, 0.3);
        }
        const Dataset data(y, w, z);
        const FittedBeta fb = naive_fit_beta(data, spec);
        MatrixXd x(n, 5);
        for (int i = 0; i < n; ++i) {
            x(i, 0) = w(i);
            x(i, 1) = w(i) * w(i);
            x.row(i).segment(2, 3) = z.row(i);
        }
        const VectorXd ls = (x.transpose() * x).ldlt().solve(x.transpose() * y);
        CHECK((fb.beta_hat - ls).cwiseAbs().maxCoeff() < 1e-8);
    }

    SUBCASE("attenuation under measurement error, stable large-n limit") {
        SimScenario sc = SimScenario::simulation1(SimModel::M1, 20000);
        sc.seed = 71;
        const GeneratedData big = generate(sc, 0);
        const FittedBeta limit = naive_fit_beta(big.data, spec, sc.beta_true);
        CHECK(limit.beta_hat.allFinite());
        CHECK(limit.beta_hat(0) < sc.beta_true(0));  // attenuated slope

        SimScenario small = sc;
        small.n = 500;
        const GeneratedData gen = generate(small, 3);
        const FittedBeta fb = naive_fit_beta(gen.data, spec, sc.beta_true);
        CHECK((fb.beta_hat - limit.beta_hat).cwiseAbs().maxCoeff() < 0.5);
    }
}

TEST_CASE("naive zeta") {
    const ModelSpec spec = sim1_spec();

    SUBCASE("vanishing corrections leave the order statistic") {
        // identical (w,z), mirrored residuals around the plug-in center
        const int n = 80;
        VectorXd beta0 = VectorXd::Zero(5);
        const double w0 = 0.5;
        VectorXd z0(3);
        z0 << 1.0, 0.3, 1.0;
        VectorXd y(n), w = VectorXd::Constant(n, w0);
        MatrixXd z(n, 3);
        Rng rng(81, 0);
        VectorXd beta(5);
        beta << 1.0, 0.5, 0.2, 0.1, 0.3;
        const double c0 = spec.mean.value(w0, z0, beta);
        for (int i = 0; i < n; i += 2) {
            const double d = rng.uniform(0.05, 2.0);
            y(i) = c0 + d;
            y(i + 1) = c0 - d;
            z.row(i) = z0.transpose();
            z.row(i + 1) = z0.transpose();
        }
        const Dataset data(y, w, z);
        FittedBeta nb;
        nb.beta_hat = beta;
        NwSettings nw = nw_settings_for(data);
        const ZetaEstimate est = naive_fit_zeta(data, 0.1, nb, spec, &nw);
        const VectorXd r = (data.ys().array() - c0).abs();
        const double q = empirical_quantile(r, 0.9);
        std::vector<double> sorted(r.data(), r.data() + n);
        std::sort(sorted.begin(), sorted.end());
        const double next = sorted[static_cast<int>(std::ceil(0.9 * n))];
        CHECK(est.zeta_hat >= q - 1e-9);
        CHECK(est.zeta_hat <= next + 1e-9);
    }

    SUBCASE("tiny dataset root matches a dense grid scan") {
        const int n = 12;
        VectorXd y(n), w(n);
        MatrixXd z(n, 3);
        Rng rng(92, 0);
        VectorXd beta(5);
        beta << 0.8, 0.1, 0.5, 0.2, -0.1;
        for (int i = 0; i < n; ++i) {
            w(i) = rng.uniform(-1, 1);
            z(i, 0) = 1.0;
            z(i, 1) = rng.uniform();
            z(i, 2) = rng.bernoulli(0.5);
            VectorXd zi = z.row(i).transpose();
            y(i) = spec.mean.value(w(i), zi, beta) + rng.normal(0, 0.5);
        }
        const Dataset data(y, w, z);
        FittedBeta nb;
        nb.beta_hat = beta;
        NwSettings nw;
        nw.bandwidths.resize(3);
        nw.bandwidths << 0.6, 0.5, 1.0;
        nw.discrete = {false, false, true};
        const ZetaEstimate est = naive_fit_zeta(data, 0.1, nb, spec, &nw);

        // independent assembly and scan
        VectorXd eps(n), r(n);
        MatrixXd mg(n, 5);
        for (int i = 0; i < n; ++i) {
            VectorXd zi = z.row(i).transpose();
            eps(i) = y(i) - spec.mean.value(w(i), zi, beta);
            r(i) = std::abs(eps(i));
            mg.row(i) = spec.mean.grad(w(i), zi, beta).transpose();
        }
        const MatrixXd wmat = nw_weight_matrix(data, data, nw, true);
        const VectorXd eps2 = eps.cwiseAbs2(), eps4 = eps2.cwiseAbs2();
        VectorXd e2 = (wmat * eps2).cwiseMax(1e-10 * eps2.mean());
        VectorXd v4 = ((wmat * eps4) - e2.cwiseAbs2()).cwiseMax(1e-8 * eps4.mean());
        MatrixXd mom = MatrixXd::Zero(5, 5);
        for (int i = 0; i < n; ++i) mom += mg.row(i).transpose() * mg.row(i) / v4(i) / n;
        const double h = silverman_bandwidth(r);
        auto g_fn = [&](double zeta) {
            VectorXd ind(n), kh(n);
            for (int i = 0; i < n; ++i) {
                ind(i) = r(i) < zeta ? 1.0 : 0.0;
                kh(i) = oracle::normal_pdf(zeta - r(i), 0.0, h);
            }
            VectorXd v = VectorXd::Zero(5);
            for (int i = 0; i < n; ++i) {
                const double sgn = eps(i) > 0 ? 1.0 : (eps(i) < 0 ? -1.0 : 0.0);
                v += (kh(i) * (-sgn) + eps(i) * ind(i) / e2(i)) * mg.row(i).transpose();
            }
            v /= n;
            const VectorXd mv = mom.fullPivLu().solve(v);
            const VectorXd g1 = wmat * (eps.array() * ind.array()).matrix();
            double acc = 0.0;
            for (int i = 0; i < n; ++i)
                acc += 0.9 - ind(i) + eps(i) * g1(i) / e2(i) + eps(i) * mg.row(i).dot(mv);
            return acc;
        };
        const double hi = 2.0 * r.maxCoeff();
        double best = 0.0, best_val = 1e300;
        for (int k = 0; k <= 10000; ++k) {
            const double zeta = hi * k / 10000.0;
            const double v = std::abs(g_fn(zeta));
            if (v < best_val) {
                best_val = v;
                best = zeta;
            }
        }
        CHECK(std::abs(est.zeta_hat - best) <= hi / 10000.0 + 1e-9);
    }
}
