#include <doctest.h>

#include "core/interval_center.hpp"
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

VectorXd zref() {
    VectorXd z(3);
    z << 1.0, 0.5, 1.0;
    return z;
}
}  // namespace

TEST_CASE("working conditional density") {
    const ModelSpec spec = sim1_spec();
    VectorXd beta(5);
    beta << 4, 1, 1, 1, 0.5;

    SUBCASE("single component is the normal density") {
        WorkingPrior p;
        p.support = VectorXd::Constant(1, 0.3);
        p.masses = VectorXd::Constant(1, 1.0);
        const double mu = spec.mean.value(0.3, zref(), beta);
        for (double y : {mu, mu + 0.1, mu - 0.25}) {
            CHECK(cond_density_working(y, 0.3, zref(), beta, p, spec) ==
                  doctest::Approx(oracle::normal_pdf(y, mu, 0.1)).epsilon(1e-12));
        }
    }

    SUBCASE("integrates to one in y") {
        WorkingPrior p;
        p.support.resize(3);
        p.support << -0.6, 0.0, 0.6;
        p.masses.resize(3);
        p.masses << 0.3, 0.4, 0.3;
        const double lo = spec.mean.value(-0.6, zref(), beta) - 1.5;
        const double hi = spec.mean.value(0.6, zref(), beta) + 1.5;
        const double mass = oracle::trapezoid(
            [&](double y) { return cond_density_working(y, 0.1, zref(), beta, p, spec); }, lo, hi,
            20000);
        CHECK(mass == doctest::Approx(1.0).epsilon(1e-6));
    }

    SUBCASE("two components match direct summation") {
        WorkingPrior p;
        p.support.resize(2);
        p.support << -0.4, 0.5;
        p.masses.resize(2);
        p.masses << 0.35, 0.65;
        const double w = 0.1, y = 3.0;
        double wts[2], mus[2];
        double den = 0.0;
        for (int j = 0; j < 2; ++j) {
            wts[j] = p.masses(j) * oracle::normal_pdf(w, p.support(j), 0.3);
            mus[j] = spec.mean.value(p.support(j), zref(), beta);
            den += wts[j];
        }
        const double expected =
            (wts[0] * oracle::normal_pdf(y, mus[0], 0.1) + wts[1] * oracle::normal_pdf(y, mus[1], 0.1)) /
            den;
        CHECK(cond_density_working(y, w, zref(), beta, p, spec) ==
              doctest::Approx(expected).epsilon(1e-12));
    }
}

TEST_CASE("optimal window center") {
    const ModelSpec spec = sim1_spec();
    VectorXd beta(5);
    beta << 4, 1, 1, 1, 0.5;

    SUBCASE("single component returns the mode") {
        WorkingPrior p;
        p.support = VectorXd::Constant(1, 0.2);
        p.masses = VectorXd::Constant(1, 1.0);
        const double mu = spec.mean.value(0.2, zref(), beta);
        const double c = optimal_center(0.2, zref(), beta, 0.15, p, spec);
        CHECK(c == doctest::Approx(mu).epsilon(1e-4));
    }

    SUBCASE("symmetric separated modes break toward the smaller center") {
        // two equal-weight components far apart relative to the window
        ModelSpec flat = spec;
        flat.mean.family = MeanFamily::Poly2;
        VectorXd b = VectorXd::Zero(5);
        b(0) = 10.0;  // mean = 10 x, so supports +-0.3 give modes -3, 3
        WorkingPrior p;
        p.support.resize(2);
        p.support << -0.3, 0.3;
        p.masses = VectorXd::Constant(2, 0.5);
        const double c = optimal_center(0.0, zref(), b, 0.2, p, flat);
        const double mu_low = flat.mean.value(-0.3, zref(), b);
        CHECK(c == doctest::Approx(mu_low).epsilon(1e-3));
    }

    SUBCASE("skewed mixture matches a dense scan") {
        WorkingPrior p;
        p.support.resize(3);
        p.support << -0.8, 0.0, 0.4;
        p.masses.resize(3);
        p.masses << 0.5, 0.3, 0.2;
        const double zeta = 0.3;
        const double w = -0.2;
        const double c = optimal_center(w, zref(), beta, zeta, p, spec, 512);
        double best = 0.0, best_mass = -1.0;
        const double lo = -6.0, hi = 8.0;
        for (int k = 0; k <= 100000; ++k) {
            const double cand = lo + (hi - lo) * k / 100000.0;
            const double mass = window_mass(cand, w, zref(), beta, zeta, p, spec);
            if (mass > best_mass) {
                best_mass = mass;
                best = cand;
            }
        }
        CHECK(std::abs(c - best) < (spec.mean.value(0.4, zref(), beta) -
                                    spec.mean.value(-0.8, zref(), beta) + 12 * 0.1) /
                                       511.0 +
                                       2e-4);
        // never worse than the posterior-mean center
        const VectorXd pw = [&] {
            VectorXd v(3);
            for (int j = 0; j < 3; ++j)
                v(j) = p.masses(j) * oracle::normal_pdf(w, p.support(j), 0.3);
            return VectorXd(v / v.sum());
        }();
        double pm = 0.0;
        for (int j = 0; j < 3; ++j) pm += pw(j) * spec.mean.value(p.support(j), zref(), beta);
        CHECK(window_mass(c, w, zref(), beta, zeta, p, spec) >=
              window_mass(pm, w, zref(), beta, zeta, p, spec) - 1e-12);
    }
}

TEST_CASE("iterate_center" * doctest::timeout(900)) {
    SUBCASE("unimodal working law converges immediately") {
        // one support point: the posterior mean is already the window center
        SimScenario sc = SimScenario::simulation1(SimModel::M1, 200);
        sc.seed = 31;
        const GeneratedData gen = generate(sc, 0);
        const ModelSpec spec = sc.to_spec();
        WorkingPrior p;
        p.support = VectorXd::Constant(1, 0.0);
        p.masses = VectorXd::Constant(1, 1.0);
        const ZGroups groups = ZGroups::single(zref(), gen.data.n());
        FittedBeta fb;
        fb.beta_hat = sc.beta_true;
        fb.priors = {p};
        fb.groups = groups;
        const IterateCenterResult res = iterate_center(gen.data, fb, 0.1, spec, -1.0, 10, 16, 16, 256);
        CHECK(res.trace.converged);
        CHECK(res.trace.iterations <= 1);
        CHECK(std::abs(res.trace.zeta_sequence.back() - res.trace.zeta_sequence.front()) <
              1e-3 * res.trace.zeta_sequence.front() + 1e-12);
    }

    SUBCASE("bimodal prior never increases zeta") {
        SimScenario sc = SimScenario::simulation1(SimModel::M1, 200);
        sc.seed = 33;
        const GeneratedData gen = generate(sc, 1);
        const ModelSpec spec = sc.to_spec();
        WorkingPrior p;
        p.support.resize(4);
        p.support << -1.3, -1.1, 1.1, 1.3;
        p.masses = VectorXd::Constant(4, 0.25);
        const ZGroups groups = zgroups_from_kmeans(gen.data);
        FittedBeta fb;
        fb.beta_hat = sc.beta_true;
        fb.priors = priors_per_group(p, groups.count());
        fb.groups = groups;
        const IterateCenterResult res = iterate_center(gen.data, fb, 0.1, spec, -1.0, 6, 16, 16, 256);
        const auto& seq = res.trace.zeta_sequence;
        for (size_t k = 1; k < seq.size(); ++k) CHECK(seq[k] <= seq[k - 1] + 1e-10);
        CHECK(res.zeta.zeta_hat <= seq.front() + 1e-9);
    }

    SUBCASE("sinusoidal model keeps the monotone audit") {
        SimScenario sc = SimScenario::simulation1(SimModel::M2, 150);
        sc.seed = 35;
        sc.m_grid = 15;
        const GeneratedData gen = generate(sc, 0);
        const ModelSpec spec = sc.to_spec();
        const ZGroups groups = zgroups_from_kmeans(gen.data);
        const WorkingPrior proto = build_prior_prototype(sc.to_prior_spec(), gen.data, sc.sigma_u);
        FittedBeta fb;
        fb.beta_hat = sc.beta_true;
        fb.priors = priors_per_group(proto, groups.count());
        fb.groups = groups;
        const IterateCenterResult res = iterate_center(gen.data, fb, 0.1, spec, -1.0, 6, 16, 16, 256);
        CHECK(res.zeta.zeta_hat <= res.trace.zeta_sequence.front() + 1e-9);
    }
}
