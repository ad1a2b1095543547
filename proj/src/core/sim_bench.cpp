#include "core/sim_bench.hpp"

#include <atomic>
#include <cmath>
#include <thread>

#include "core/rng.hpp"

namespace mep {

const char* method_name(Method m) {
    switch (m) {
        case Method::M1s: return "m1s";
        case Method::M1c: return "m1c";
        case Method::M2s: return "m2s";
        case Method::M2c: return "m2c";
        case Method::M3s: return "m3s";
        case Method::M3c: return "m3c";
    }
    return "?";
}

std::optional<Method> method_from_name(const std::string& name) {
    for (int k = 0; k < 6; ++k)
        if (name == method_name(static_cast<Method>(k))) return static_cast<Method>(k);
    return std::nullopt;
}

WorkingPrior build_prior_prototype(const PriorSpec& prior, const Dataset& data, double sigma_u,
                                   bool* variance_floored) {
    if (prior.points < 1) throw std::invalid_argument("build_prior_prototype: points must be >= 1");
    if (variance_floored) *variance_floored = false;
    WorkingPrior proto;
    proto.support.resize(prior.points);
    proto.masses.resize(prior.points);
    if (prior.mode == PriorMode::TrueBetaGrid) {
        const double lo = prior.grid_lo, hi = prior.grid_hi;
        const double width = hi - lo;
        // cell midpoints: the support endpoints carry zero Beta(2,2) mass and
        // would put dead columns into the Fredholm systems
        for (int j = 0; j < prior.points; ++j) {
            const double x = lo + width * (j + 0.5) / prior.points;
            proto.support(j) = x;
            const double b = (x - lo) / width;  // maps to Beta(2,2) on [0,1]
            proto.masses(j) = 6.0 * b * (1.0 - b);
        }
        const double tot = proto.masses.sum();
        if (!(tot > 0.0)) throw std::runtime_error("build_prior_prototype: degenerate grid masses");
        proto.masses /= tot;
    } else {
        if (data.n() < 2) throw std::invalid_argument("build_prior_prototype: moment prior needs data");
        const double mu = data.ws().mean();
        const double var_w = (data.ws().array() - mu).square().sum() / (data.n() - 1);
        double var_x = var_w - sigma_u * sigma_u;
        const double floor = 0.01 * var_w;
        if (var_x < floor) {
            var_x = floor;
            if (variance_floored) *variance_floored = true;
        }
        const double sd = std::sqrt(var_x);
        const double lo = mu - prior.span_sigmas * sd;
        const double hi = mu + prior.span_sigmas * sd;
        for (int j = 0; j < prior.points; ++j) {
            proto.support(j) = prior.points == 1 ? mu : lo + (hi - lo) * j / (prior.points - 1);
            proto.masses(j) = 1.0 / prior.points;
        }
    }
    proto.validate();
    return proto;
}

std::vector<WorkingPrior> priors_per_group(const WorkingPrior& prototype, int ngroups) {
    std::vector<WorkingPrior> out(ngroups, prototype);
    for (int g = 0; g < ngroups; ++g) out[g].group_id = g;
    return out;
}

SimScenario::SimScenario() {
    beta_true.resize(5);
    beta_true << 4.0, 1.0, 1.0, 1.0, 0.5;
}

SimScenario SimScenario::simulation1(SimModel model, int n) {
    SimScenario s;
    s.model = model;
    s.n = n;
    return s;
}

SimScenario SimScenario::simulation2(SimModel model, int n) {
    SimScenario s = simulation1(model, n);
    s.x_law = XLaw::NormalMuSigma;
    s.prior_mode = PriorMode::MomentUniform;
    return s;
}

SimScenario SimScenario::simulation_a1(SimModel model, int n) {
    SimScenario s = simulation2(model, n);
    s.eps_family = EpsFamily::ScaledT3;
    return s;
}

SimScenario SimScenario::simulation_a2(SimModel model, int n) {
    SimScenario s = simulation2(model, n);
    s.u_family = UFamily::ScaledUniform;
    return s;
}

SimScenario SimScenario::simulation_a3(SimModel model, int n) {
    SimScenario s = simulation2(model, n);
    s.eps_family = EpsFamily::ScaledT3;
    s.u_family = UFamily::ScaledUniform;
    return s;
}

ModelSpec SimScenario::to_spec() const {
    ModelSpec spec;
    switch (model) {
        case SimModel::M1: spec.mean.family = MeanFamily::Poly2; break;
        case SimModel::M2: spec.mean.family = MeanFamily::SinPoly2; break;
        case SimModel::M3: spec.mean.family = MeanFamily::ExpNegSq; break;
    }
    spec.mean.zdim = 3;
    spec.sigma_eps = sigma_eps;
    spec.sigma_u = sigma_u;
    spec.eps_family = eps_family;
    spec.u_family = u_family;
    return spec;
}

PriorSpec SimScenario::to_prior_spec() const {
    PriorSpec p;
    p.mode = prior_mode;
    p.points = m_grid;
    return p;
}

GeneratedData generate(const SimScenario& scenario, int rep_index) {
    const ModelSpec spec = scenario.to_spec();
    Rng rng(scenario.seed, static_cast<std::uint64_t>(rep_index));
    const int n = scenario.n;
    const double sqrt3 = std::sqrt(3.0);

    VectorXd y(n), w(n), x(n);
    MatrixXd z(n, 3);
    VectorXd zi(3);
    for (int i = 0; i < n; ++i) {
        z(i, 0) = 1.0;
        z(i, 1) = rng.uniform();
        z(i, 2) = rng.bernoulli(0.8) ? 1.0 : 0.0;
        switch (scenario.x_law) {
            case XLaw::BetaScaled: x(i) = 2.0 * sqrt3 * rng.beta22() - sqrt3; break;
            case XLaw::NormalMuSigma: x(i) = rng.normal(scenario.normal_mu, scenario.normal_sigma); break;
        }
        double u;
        switch (scenario.u_family) {
            case UFamily::Normal: u = rng.normal(0.0, scenario.sigma_u); break;
            case UFamily::ScaledUniform: u = sqrt3 * rng.uniform(-1.0, 1.0) * scenario.sigma_u; break;
            default: u = 0.0;
        }
        double eps;
        switch (scenario.eps_family) {
            case EpsFamily::Normal: eps = rng.normal(0.0, scenario.sigma_eps); break;
            case EpsFamily::ScaledT3: eps = rng.t3() * scenario.sigma_eps / sqrt3; break;
            default: eps = 0.0;
        }
        w(i) = x(i) + u;
        zi = z.row(i).transpose();
        y(i) = spec.mean.value(x(i), zi, scenario.beta_true) + eps;
    }
    return GeneratedData{Dataset(std::move(y), std::move(w), std::move(z)), std::move(x)};
}

Pipeline pipeline_for(const SimScenario& scenario, std::uint64_t split_seed) {
    Pipeline pipe;
    pipe.spec = scenario.to_spec();
    pipe.prior = scenario.to_prior_spec();
    pipe.alpha = scenario.alpha;
    pipe.split_fraction = scenario.split_fraction;
    pipe.n_w = scenario.n_w;
    pipe.n_y = scenario.n_y;
    pipe.beta_init = scenario.beta_true;
    pipe.split_seed = split_seed;
    return pipe;
}

namespace {

void fill_posterior_mean_info(MethodOutcome& out, const PosteriorMeanCenter& center) {
    out.center_kind = CenterKind::WorkingPosteriorMean;
    out.priors = center.priors();
    out.group_centroids = center.groups().centroids;
}

VectorXd centers_for_all(const Dataset& data, const Center& center, VecRef beta) {
    VectorXd c(data.n());
    for (int i = 0; i < data.n(); ++i) c(i) = center.value(data.w(i), data.z(i), beta);
    return c;
}

}  // namespace

std::array<MethodOutcome, 6> run_methods(const Dataset& data, const Pipeline& pipe, unsigned mask) {
    std::array<MethodOutcome, 6> out;
    const ModelSpec& spec = pipe.spec;
    const int p = spec.mean.pdim();
    if (data.zdim() != spec.mean.zdim) throw std::invalid_argument("run_methods: z dimension mismatch");

    // shared lazily computed pieces
    std::optional<FittedBeta> naive_full;
    std::optional<std::string> naive_error;
    bool naive_nonconv = false;
    auto get_naive = [&]() -> const FittedBeta& {
        if (!naive_full && !naive_error) {
            try {
                naive_full = naive_fit_beta(data, spec, pipe.beta_init);
            } catch (const NonConvergenceError& e) {
                naive_error = std::string("naive fit: ") + e.what();
                naive_nonconv = true;
            } catch (const std::exception& e) {
                naive_error = std::string("naive fit: ") + e.what();
            }
        }
        if (naive_error) {
            if (naive_nonconv) throw NonConvergenceError(*naive_error);
            throw std::runtime_error(*naive_error);
        }
        return *naive_full;
    };

    FitOptions fopts;
    fopts.n_w = pipe.n_w;
    fopts.n_y = pipe.n_y;
    ZetaOptions zopts;
    zopts.n_w = pipe.n_w;
    zopts.n_y = pipe.n_y;

    // Initialize from the configured value when one is supplied, otherwise
    // from the naive NLS estimate; fall back to the other on non-convergence.
    // The equation's solution set is nearly flat along weakly identified
    // directions, so the starting point decides which part of the ridge the
    // fit lands on. A fit that degrades the working likelihood relative to
    // its initializer sits on a spurious root (score-degenerate regions of
    // the flat mean families have those) and is rejected.
    auto fit_semiparam = [&](const Dataset& d, const std::vector<WorkingPrior>& priors,
                             const ZGroups& groups) {
        std::vector<VectorXd> inits;
        if (pipe.beta_init.size() == spec.mean.pdim()) inits.push_back(pipe.beta_init);
        try {
            inits.push_back(naive_fit_beta(d, spec, pipe.beta_init).beta_hat);
        } catch (const std::exception&) {
            if (inits.empty()) throw;
        }
        std::optional<FittedBeta> best;
        double best_ll = -std::numeric_limits<double>::infinity();
        std::string last_error = "fit_semiparam: no initializer";
        for (const VectorXd& init : inits) {
            const double ll0 = working_loglik(d, spec, priors, groups, init);
            try {
                FittedBeta fb = fit_beta_grouped(d, spec, priors, groups, init, fopts);
                const double ll = working_loglik(d, spec, priors, groups, fb.beta_hat);
                if (ll >= ll0 - 0.01 * d.n()) return fb;
                if (ll > best_ll) {
                    best_ll = ll;
                    best = std::move(fb);
                }
                last_error = "fit_semiparam: solution degrades the working likelihood";
            } catch (const NonConvergenceError& e) {
                last_error = e.what();
            }
        }
        if (best) return *best;  // both inits degraded: keep the better fit
        throw NonConvergenceError(last_error);
    };

    SplitPlan plan;
    const bool needs_split = mask & (method_bit(Method::M1c) | method_bit(Method::M2c) |
                                     method_bit(Method::M3c));
    if (needs_split) plan = SplitPlan::make(data.n(), pipe.split_fraction, pipe.split_seed);

    // m1s: semiparametric beta + posterior-mean center + semiparametric zeta
    if (mask & method_bit(Method::M1s)) {
        MethodOutcome& o = out[0];
        o.attempted = true;
        try {
            const ZGroups groups = zgroups_from_kmeans(data);
            const WorkingPrior proto = build_prior_prototype(pipe.prior, data, spec.sigma_u);
            const auto priors = priors_per_group(proto, groups.count());
            const FittedBeta fb = fit_semiparam(data, priors, groups);
            const PosteriorMeanCenter center(priors, groups, spec);
            const ZetaWorkspace ws =
                build_zeta_workspace(data, spec, fb.beta_hat, priors, groups, center, pipe.n_w, pipe.n_y);
            o.zeta = fit_zeta(ws, pipe.alpha, zopts);
            if (pipe.with_variance)
                o.zeta.variance =
                    variance_v(data, fb, o.zeta.zeta_hat, center, pipe.alpha, spec, pipe.n_w, pipe.n_y);
            o.centers = ws.center_vals;
            o.beta = fb.beta_hat;
            fill_posterior_mean_info(o, center);
        } catch (const NonConvergenceError& e) {
            o.failed = true;
            o.nonconvergence = true;
            o.error = e.what();
        } catch (const std::exception& e) {
            o.failed = true;
            o.error = e.what();
        }
    }

    // m1c: semiparametric beta on the estimation half + split conformal zeta
    if (mask & method_bit(Method::M1c)) {
        MethodOutcome& o = out[1];
        o.attempted = true;
        try {
            auto fitter = [&](const Dataset& est) {
                const ZGroups groups = zgroups_from_kmeans(est);
                const WorkingPrior proto = build_prior_prototype(pipe.prior, est, spec.sigma_u);
                const auto priors = priors_per_group(proto, groups.count());
                const FittedBeta fb = fit_semiparam(est, priors, groups);
                return FittedCenter{std::make_shared<PosteriorMeanCenter>(priors, groups, spec),
                                    fb.beta_hat};
            };
            ConformalFit cf = conformal_fit(data, pipe.alpha, plan, fitter, spec);
            o.zeta = cf.zeta;
            o.beta = cf.center.beta;
            o.centers = centers_for_all(data, *cf.center.center, o.beta);
            o.center_rows = plan.estimation;
            fill_posterior_mean_info(o, static_cast<const PosteriorMeanCenter&>(*cf.center.center));
        } catch (const NonConvergenceError& e) {
            o.failed = true;
            o.nonconvergence = true;
            o.error = e.what();
        } catch (const std::exception& e) {
            o.failed = true;
            o.error = e.what();
        }
    }

    // m2s: leave-one-out kernel center + direct influence-function zeta
    if (mask & method_bit(Method::M2s)) {
        MethodOutcome& o = out[2];
        o.attempted = true;
        try {
            const DirectFit df = direct_fit(data, pipe.alpha, nullptr, spec);
            o.zeta = df.zeta;
            o.centers = df.centers;
            o.beta = VectorXd::Zero(p);
            o.center_kind = CenterKind::KernelRegression;
            o.nw = nw_settings_for(data);
        } catch (const NonConvergenceError& e) {
            o.failed = true;
            o.nonconvergence = true;
            o.error = e.what();
        } catch (const std::exception& e) {
            o.failed = true;
            o.error = e.what();
        }
    }

    // m2c: kernel center on the estimation half + split conformal zeta
    if (mask & method_bit(Method::M2c)) {
        MethodOutcome& o = out[3];
        o.attempted = true;
        try {
            NwSettings est_nw;
            auto fitter = [&](const Dataset& est) {
                est_nw = nw_settings_for(est);
                return FittedCenter{std::make_shared<KernelCenter>(est, est_nw), VectorXd::Zero(p)};
            };
            ConformalFit cf = conformal_fit(data, pipe.alpha, plan, fitter, spec);
            o.zeta = cf.zeta;
            o.beta = cf.center.beta;
            o.centers = centers_for_all(data, *cf.center.center, o.beta);
            o.center_rows = plan.estimation;
            o.center_kind = CenterKind::KernelRegression;
            o.nw = est_nw;
        } catch (const NonConvergenceError& e) {
            o.failed = true;
            o.nonconvergence = true;
            o.error = e.what();
        } catch (const std::exception& e) {
            o.failed = true;
            o.error = e.what();
        }
    }

    // m3s: naive least squares + naive influence-function zeta
    if (mask & method_bit(Method::M3s)) {
        MethodOutcome& o = out[4];
        o.attempted = true;
        try {
            const FittedBeta& nb = get_naive();
            o.zeta = naive_fit_zeta(data, pipe.alpha, nb, spec);
            const PluginCenter center(spec.mean);
            o.beta = nb.beta_hat;
            o.centers = centers_for_all(data, center, o.beta);
            o.center_kind = CenterKind::NaivePlugin;
        } catch (const NonConvergenceError& e) {
            o.failed = true;
            o.nonconvergence = true;
            o.error = e.what();
        } catch (const std::exception& e) {
            o.failed = true;
            o.error = e.what();
        }
    }

    // m3c: naive least squares on the estimation half + split conformal zeta
    if (mask & method_bit(Method::M3c)) {
        MethodOutcome& o = out[5];
        o.attempted = true;
        try {
            auto fitter = [&](const Dataset& est) {
                const FittedBeta nb = naive_fit_beta(est, spec, pipe.beta_init);
                return FittedCenter{std::make_shared<PluginCenter>(spec.mean), nb.beta_hat};
            };
            ConformalFit cf = conformal_fit(data, pipe.alpha, plan, fitter, spec);
            o.zeta = cf.zeta;
            o.beta = cf.center.beta;
            o.centers = centers_for_all(data, *cf.center.center, o.beta);
            o.center_rows = plan.estimation;
            o.center_kind = CenterKind::NaivePlugin;
        } catch (const NonConvergenceError& e) {
            o.failed = true;
            o.nonconvergence = true;
            o.error = e.what();
        } catch (const std::exception& e) {
            o.failed = true;
            o.error = e.what();
        }
    }

    return out;
}

std::array<MethodOutcome, 6> run_six_methods(const Dataset& data, const SimScenario& scenario,
                                             unsigned mask, std::uint64_t split_seed) {
    return run_methods(data, pipeline_for(scenario, split_seed), mask);
}

Metrics evaluate(VecRef centers, double zeta, const Dataset& data) {
    if (centers.size() != data.n()) throw std::invalid_argument("evaluate: one center per row required");
    int hits = 0;
    for (int i = 0; i < data.n(); ++i)
        if (std::abs(data.y(i) - centers(i)) <= zeta) ++hits;
    return Metrics{static_cast<double>(hits) / data.n(), 2.0 * zeta};
}

std::shared_ptr<Center> reconstruct_center(const MethodOutcome& o, const Dataset& training,
                                           const ModelSpec& spec) {
    switch (o.center_kind) {
        case CenterKind::WorkingPosteriorMean: {
            ZGroups g;
            g.centroids = o.group_centroids;
            g.assignment = VectorXi();
            return std::make_shared<PosteriorMeanCenter>(o.priors, g, spec);
        }
        case CenterKind::KernelRegression: {
            const Dataset train =
                o.center_rows.empty() ? training : training.subset(o.center_rows);
            return std::make_shared<KernelCenter>(train, o.nw);
        }
        case CenterKind::NaivePlugin:
            return std::make_shared<PluginCenter>(spec.mean);
        case CenterKind::HdwOptimal:
            break;
    }
    throw std::invalid_argument("reconstruct_center: unsupported center kind");
}

SimResult replicate(const SimScenario& scenario, unsigned mask, int threads) {
    if (scenario.replications < 1) throw std::invalid_argument("replicate: replications must be >= 1");
    const int reps = scenario.replications;
    SimResult result;
    result.scenario = scenario;
    result.mask = mask;

    std::vector<std::vector<RepRow>> per_rep(reps);
    std::atomic<int> next{0};
    std::atomic<int> failed_reps{0};

    auto worker = [&]() {
        for (;;) {
            const int r = next.fetch_add(1);
            if (r >= reps) return;
            std::vector<RepRow>& rows = per_rep[r];
            try {
                const GeneratedData gen = generate(scenario, r);
                const std::uint64_t split_seed = Rng(scenario.seed, r).next_u64();
                const auto outcomes = run_six_methods(gen.data, scenario, mask, split_seed);
                std::optional<GeneratedData> test;
                if (scenario.out_of_sample_cp) test = generate(scenario, r + (1 << 20));
                bool any_ok = false;
                for (int k = 0; k < 6; ++k) {
                    if (!(mask & (1u << k))) continue;
                    RepRow row;
                    row.rep = r;
                    row.method = static_cast<Method>(k);
                    const MethodOutcome& o = outcomes[k];
                    if (o.failed) {
                        row.failed = true;
                        row.error = o.error;
                    } else {
                        Metrics m;
                        if (test) {
                            const auto center = reconstruct_center(o, gen.data, scenario.to_spec());
                            const VectorXd c = centers_for_all(test->data, *center, o.beta);
                            m = evaluate(c, o.zeta.zeta_hat, test->data);
                        } else {
                            m = evaluate(o.centers, o.zeta.zeta_hat, gen.data);
                        }
                        row.cp = m.cp;
                        row.lpi = m.lpi;
                        any_ok = true;
                    }
                    rows.push_back(std::move(row));
                }
                if (!any_ok) ++failed_reps;
            } catch (const std::exception& e) {
                rows.clear();
                for (int k = 0; k < 6; ++k) {
                    if (!(mask & (1u << k))) continue;
                    RepRow row;
                    row.rep = r;
                    row.method = static_cast<Method>(k);
                    row.failed = true;
                    row.error = e.what();
                    rows.push_back(std::move(row));
                }
                ++failed_reps;
            }
        }
    };

    int nthreads = threads > 0 ? threads : static_cast<int>(std::thread::hardware_concurrency());
    nthreads = std::max(1, std::min(nthreads, reps));
    if (nthreads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(nthreads);
        for (int t = 0; t < nthreads; ++t) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }

    result.failed_reps = failed_reps.load();
    for (int r = 0; r < reps; ++r)
        for (auto& row : per_rep[r]) result.rows.push_back(std::move(row));

    for (int k = 0; k < 6; ++k) {
        if (!(mask & (1u << k))) continue;
        Aggregate agg;
        std::vector<double> cps, lpis;
        for (const RepRow& row : result.rows) {
            if (static_cast<int>(row.method) != k) continue;
            if (row.failed) {
                ++agg.n_failed;
                continue;
            }
            cps.push_back(row.cp);
            lpis.push_back(row.lpi);
        }
        agg.n_ok = static_cast<int>(cps.size());
        if (agg.n_ok > 0) {
            double cm = 0.0, lm = 0.0;
            for (double v : cps) cm += v;
            for (double v : lpis) lm += v;
            cm /= agg.n_ok;
            lm /= agg.n_ok;
            agg.cp_mean = cm;
            agg.lpi_mean = lm;
            if (agg.n_ok > 1) {
                double cv = 0.0, lv = 0.0;
                for (double v : cps) cv += (v - cm) * (v - cm);
                for (double v : lpis) lv += (v - lm) * (v - lm);
                agg.cp_sd = std::sqrt(cv / (agg.n_ok - 1));
                agg.lpi_sd = std::sqrt(lv / (agg.n_ok - 1));
            }
        }
        result.table[k] = agg;
    }

    if (result.failed_reps > 0.05 * reps)
        throw PartialFailureError("replicate: more than 5% of replications failed (" +
                                  std::to_string(result.failed_reps) + " of " + std::to_string(reps) +
                                  ")");
    return result;
}

}  // namespace mep
