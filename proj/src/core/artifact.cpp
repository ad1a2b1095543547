#include "core/artifact.hpp"

#include <fstream>

#include "core/interval_center.hpp"

namespace mep {

using nlohmann::json;

void FitConfig::validate() const {
    if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("config: alpha outside (0,1)");
    if (!(sigma_eps > 0.0)) throw std::invalid_argument("config: sigma_eps must be set positive");
    if (!(sigma_u > 0.0)) throw std::invalid_argument("config: sigma_u must be set positive");
    if (prior_points < 1) throw std::invalid_argument("config: prior_points must be >= 1");
    if (!(split_fraction > 0.0 && split_fraction < 1.0))
        throw std::invalid_argument("config: split_fraction outside (0,1)");
    if (methods_mask == 0 || methods_mask > kAllMethods)
        throw std::invalid_argument("config: empty method selection");
}

bool FitArtifact::any_nonconvergence() const {
    for (const auto& m : methods)
        if (m.attempted && m.failed && m.nonconvergence) return true;
    return false;
}

bool FitArtifact::any_failure() const {
    for (const auto& m : methods)
        if (m.attempted && m.failed) return true;
    return false;
}

FitArtifact run_fit(const Dataset& data, const FitConfig& config) {
    config.validate();
    Pipeline pipe;
    pipe.spec.mean.family = config.family;
    pipe.spec.mean.zdim = data.zdim();
    pipe.spec.sigma_eps = config.sigma_eps;
    pipe.spec.sigma_u = config.sigma_u;
    pipe.prior.mode = config.prior_mode;
    pipe.prior.points = config.prior_points;
    pipe.prior.grid_lo = config.prior_grid_lo;
    pipe.prior.grid_hi = config.prior_grid_hi;
    pipe.prior.span_sigmas = config.prior_span_sigmas;
    pipe.alpha = config.alpha;
    pipe.split_fraction = config.split_fraction;
    pipe.n_w = config.n_w;
    pipe.n_y = config.n_y;
    pipe.beta_init = config.beta_init;
    pipe.split_seed = config.seed;
    pipe.with_variance = config.with_variance;

    FitArtifact artifact;
    artifact.config = config;
    artifact.data = data;
    artifact.methods = run_methods(data, pipe, config.methods_mask);
    return artifact;
}

namespace {

json vec_to_json(const VectorXd& v) {
    json arr = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v(i));
    return arr;
}

VectorXd vec_from_json(const json& arr) {
    VectorXd v(arr.size());
    for (size_t i = 0; i < arr.size(); ++i) v(i) = arr[i].get<double>();
    return v;
}

const char* family_name(MeanFamily f) {
    switch (f) {
        case MeanFamily::Poly2: return "poly2";
        case MeanFamily::SinPoly2: return "sin_poly2";
        case MeanFamily::ExpNegSq: return "exp_neg_sq";
    }
    return "?";
}

MeanFamily family_from_name(const std::string& s) {
    if (s == "poly2") return MeanFamily::Poly2;
    if (s == "sin_poly2") return MeanFamily::SinPoly2;
    if (s == "exp_neg_sq") return MeanFamily::ExpNegSq;
    throw std::invalid_argument("unknown mean family '" + s + "'");
}

const char* center_kind_name(CenterKind k) {
    switch (k) {
        case CenterKind::WorkingPosteriorMean: return "working_posterior_mean";
        case CenterKind::KernelRegression: return "kernel_regression";
        case CenterKind::NaivePlugin: return "naive_plugin";
        case CenterKind::HdwOptimal: return "hdw_optimal";
    }
    return "?";
}

CenterKind center_kind_from_name(const std::string& s) {
    if (s == "working_posterior_mean") return CenterKind::WorkingPosteriorMean;
    if (s == "kernel_regression") return CenterKind::KernelRegression;
    if (s == "naive_plugin") return CenterKind::NaivePlugin;
    if (s == "hdw_optimal") return CenterKind::HdwOptimal;
    throw std::invalid_argument("unknown center kind '" + s + "'");
}

json zeta_to_json(const ZetaEstimate& z) {
    json j;
    j["zeta_hat"] = z.zeta_hat;
    j["method"] = zeta_method_name(z.method);
    j["se"] = z.variance ? json(std::sqrt(*z.variance)) : json(nullptr);
    j["variance"] = z.variance ? json(*z.variance) : json(nullptr);
    j["density_at_zeta"] = z.density_at_zeta;
    j["alpha"] = z.alpha;
    j["bracket"] = {z.bracket_lo, z.bracket_hi};
    j["iterations"] = z.iterations;
    j["degenerate"] = z.degenerate;
    return j;
}

ZetaEstimate zeta_from_json(const json& j) {
    ZetaEstimate z;
    z.zeta_hat = j.at("zeta_hat").get<double>();
    const std::string m = j.at("method").get<std::string>();
    if (m == "semiparam") z.method = ZetaMethod::Semiparam;
    else if (m == "conformal") z.method = ZetaMethod::Conformal;
    else if (m == "direct") z.method = ZetaMethod::Direct;
    else z.method = ZetaMethod::Naive;
    if (!j.at("variance").is_null()) z.variance = j.at("variance").get<double>();
    z.density_at_zeta = j.at("density_at_zeta").get<double>();
    z.alpha = j.at("alpha").get<double>();
    z.bracket_lo = j.at("bracket")[0].get<double>();
    z.bracket_hi = j.at("bracket")[1].get<double>();
    z.iterations = j.at("iterations").get<int>();
    z.degenerate = j.at("degenerate").get<bool>();
    return z;
}

json prior_to_json(const WorkingPrior& p) {
    json j;
    j["support"] = vec_to_json(p.support);
    j["masses"] = vec_to_json(p.masses);
    j["group_id"] = p.group_id;
    return j;
}

WorkingPrior prior_from_json(const json& j) {
    WorkingPrior p;
    p.support = vec_from_json(j.at("support"));
    p.masses = vec_from_json(j.at("masses"));
    p.group_id = j.at("group_id").get<int>();
    return p;
}

}  // namespace

json artifact_to_json(const FitArtifact& artifact) {
    const FitConfig& cfg = artifact.config;
    json doc;
    doc["schema_version"] = artifact.schema_version;

    json jc;
    jc["alpha"] = cfg.alpha;
    jc["mean_family"] = family_name(cfg.family);
    jc["sigma_eps"] = cfg.sigma_eps;
    jc["sigma_u"] = cfg.sigma_u;
    jc["prior_mode"] = cfg.prior_mode == PriorMode::TrueBetaGrid ? "beta_grid" : "moment_uniform";
    jc["prior_points"] = cfg.prior_points;
    jc["prior_grid_lo"] = cfg.prior_grid_lo;
    jc["prior_grid_hi"] = cfg.prior_grid_hi;
    jc["prior_span_sigmas"] = cfg.prior_span_sigmas;
    jc["beta_init"] = vec_to_json(cfg.beta_init);
    jc["methods_mask"] = cfg.methods_mask;
    jc["split_fraction"] = cfg.split_fraction;
    jc["seed"] = cfg.seed;
    jc["n_w"] = cfg.n_w;
    jc["n_y"] = cfg.n_y;
    jc["with_variance"] = cfg.with_variance;
    doc["config"] = jc;

    json jd;
    jd["y"] = vec_to_json(artifact.data.ys());
    jd["w"] = vec_to_json(artifact.data.ws());
    json zrows = json::array();
    for (int i = 0; i < artifact.data.n(); ++i) {
        json r = json::array();
        for (int c = 0; c < artifact.data.zdim(); ++c) r.push_back(artifact.data.zs()(i, c));
        zrows.push_back(r);
    }
    jd["z"] = zrows;
    doc["data"] = jd;

    json jm = json::object();
    for (int k = 0; k < 6; ++k) {
        const MethodOutcome& o = artifact.methods[k];
        if (!o.attempted) continue;
        json m;
        m["failed"] = o.failed;
        m["nonconvergence"] = o.nonconvergence;
        m["error"] = o.error;
        if (!o.failed) {
            m["zeta"] = zeta_to_json(o.zeta);
            m["beta"] = vec_to_json(o.beta);
            m["center_kind"] = center_kind_name(o.center_kind);
            m["center_rows"] = o.center_rows;
            json priors = json::array();
            for (const auto& p : o.priors) priors.push_back(prior_to_json(p));
            m["priors"] = priors;
            json cents = json::array();
            for (const auto& c : o.group_centroids) cents.push_back(vec_to_json(c));
            m["group_centroids"] = cents;
            m["nw_bandwidths"] = vec_to_json(o.nw.bandwidths);
            m["nw_discrete"] = o.nw.discrete;
        }
        jm[method_name(static_cast<Method>(k))] = m;
    }
    doc["methods"] = jm;
    return doc;
}

FitArtifact artifact_from_json(const json& doc) {
    FitArtifact artifact;
    artifact.schema_version = doc.at("schema_version").get<int>();
    if (artifact.schema_version != 1)
        throw std::invalid_argument("unsupported fit artifact schema version");

    const json& jc = doc.at("config");
    FitConfig cfg;
    cfg.alpha = jc.at("alpha").get<double>();
    cfg.family = family_from_name(jc.at("mean_family").get<std::string>());
    cfg.sigma_eps = jc.at("sigma_eps").get<double>();
    cfg.sigma_u = jc.at("sigma_u").get<double>();
    cfg.prior_mode = jc.at("prior_mode").get<std::string>() == "beta_grid" ? PriorMode::TrueBetaGrid
                                                                           : PriorMode::MomentUniform;
    cfg.prior_points = jc.at("prior_points").get<int>();
    cfg.prior_grid_lo = jc.at("prior_grid_lo").get<double>();
    cfg.prior_grid_hi = jc.at("prior_grid_hi").get<double>();
    cfg.prior_span_sigmas = jc.at("prior_span_sigmas").get<double>();
    cfg.beta_init = vec_from_json(jc.at("beta_init"));
    cfg.methods_mask = jc.at("methods_mask").get<unsigned>();
    cfg.split_fraction = jc.at("split_fraction").get<double>();
    cfg.seed = jc.at("seed").get<std::uint64_t>();
    cfg.n_w = jc.at("n_w").get<int>();
    cfg.n_y = jc.at("n_y").get<int>();
    cfg.with_variance = jc.at("with_variance").get<bool>();
    artifact.config = cfg;

    const json& jd = doc.at("data");
    const VectorXd y = vec_from_json(jd.at("y"));
    const VectorXd w = vec_from_json(jd.at("w"));
    const json& zrows = jd.at("z");
    MatrixXd z(zrows.size(), zrows.empty() ? 0 : zrows[0].size());
    for (size_t i = 0; i < zrows.size(); ++i)
        for (size_t c = 0; c < zrows[i].size(); ++c) z(i, c) = zrows[i][c].get<double>();
    artifact.data = Dataset(y, w, z);

    const json& jm = doc.at("methods");
    for (int k = 0; k < 6; ++k) {
        const std::string name = method_name(static_cast<Method>(k));
        if (!jm.contains(name)) continue;
        const json& m = jm.at(name);
        MethodOutcome& o = artifact.methods[k];
        o.attempted = true;
        o.failed = m.at("failed").get<bool>();
        o.nonconvergence = m.at("nonconvergence").get<bool>();
        o.error = m.at("error").get<std::string>();
        if (o.failed) continue;
        o.zeta = zeta_from_json(m.at("zeta"));
        o.beta = vec_from_json(m.at("beta"));
        o.center_kind = center_kind_from_name(m.at("center_kind").get<std::string>());
        o.center_rows = m.at("center_rows").get<std::vector<int>>();
        for (const auto& p : m.at("priors")) o.priors.push_back(prior_from_json(p));
        for (const auto& c : m.at("group_centroids")) o.group_centroids.push_back(vec_from_json(c));
        o.nw.bandwidths = vec_from_json(m.at("nw_bandwidths"));
        o.nw.discrete = m.at("nw_discrete").get<std::vector<bool>>();
    }
    return artifact;
}

void save_artifact(const std::string& path, const FitArtifact& artifact) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write '" + path + "'");
    out << artifact_to_json(artifact).dump(2) << "\n";
}

FitArtifact load_artifact(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "'");
    json doc;
    try {
        in >> doc;
    } catch (const std::exception& e) {
        throw ParseError("'" + path + "': " + e.what());
    }
    return artifact_from_json(doc);
}

Predictions predict_rows(const FitArtifact& artifact, const NewData& newdata,
                         const PredictOptions& opts) {
    const int k = static_cast<int>(opts.method);
    const MethodOutcome& o = artifact.methods[k];
    if (!o.attempted || o.failed)
        throw std::invalid_argument(std::string("predict: method ") + method_name(opts.method) +
                                    " is not present in the fit artifact");
    if (newdata.z.cols() != artifact.data.zdim())
        throw std::invalid_argument("predict: z dimension differs from the fitted data");

    ModelSpec spec;
    spec.mean.family = artifact.config.family;
    spec.mean.zdim = artifact.data.zdim();
    spec.sigma_eps = artifact.config.sigma_eps;
    spec.sigma_u = artifact.config.sigma_u;

    std::shared_ptr<Center> center;
    if (opts.hdw) {
        if (o.center_kind != CenterKind::WorkingPosteriorMean)
            throw std::invalid_argument(
                "predict: --hdw needs a posterior-mean fit (m1s or m1c) for its working prior");
        ZGroups g;
        g.centroids = o.group_centroids;
        center = std::make_shared<HdwCenter>(o.priors, g, spec, o.zeta.zeta_hat);
    } else {
        center = reconstruct_center(o, artifact.data, spec);
    }

    Predictions pred;
    const int n = newdata.n();
    pred.center.resize(n);
    pred.lower.resize(n);
    pred.upper.resize(n);
    for (int i = 0; i < n; ++i) {
        const VectorXd z = newdata.z.row(i).transpose();
        pred.center(i) = center->value(newdata.w(i), z, o.beta);
        pred.lower(i) = pred.center(i) - o.zeta.zeta_hat;
        pred.upper(i) = pred.center(i) + o.zeta.zeta_hat;
    }
    return pred;
}

void write_predictions_csv(const std::string& path, const NewData& newdata, const Predictions& pred) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write '" + path + "'");
    out << "w";
    for (int c = 1; c < newdata.z.cols(); ++c) out << ",z" << c;
    out << ",center,lower,upper\n";
    for (int i = 0; i < newdata.n(); ++i) {
        out << format_double(newdata.w(i));
        for (int c = 1; c < newdata.z.cols(); ++c) out << ',' << format_double(newdata.z(i, c));
        out << ',' << format_double(pred.center(i)) << ',' << format_double(pred.lower(i)) << ','
            << format_double(pred.upper(i)) << "\n";
    }
}

}  // namespace mep
