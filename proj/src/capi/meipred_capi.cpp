#include "meipred.h"

#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "core/artifact.hpp"
#include "core/interval_center.hpp"

namespace {

thread_local std::string g_last_error;

void set_error(const std::string& msg) { g_last_error = msg; }

template <typename Fn>
mep_status guard(Fn&& fn) {
    try {
        fn();
        return MEP_OK;
    } catch (const mep::ParseError& e) {
        set_error(e.what());
        return MEP_ERR_PARSE;
    } catch (const mep::IoError& e) {
        set_error(e.what());
        return MEP_ERR_IO;
    } catch (const mep::NonConvergenceError& e) {
        set_error(e.what());
        return MEP_ERR_NONCONVERGENCE;
    } catch (const mep::PartialFailureError& e) {
        set_error(e.what());
        return MEP_ERR_PARTIAL;
    } catch (const std::invalid_argument& e) {
        set_error(e.what());
        return MEP_ERR_INVALID;
    } catch (const std::exception& e) {
        set_error(e.what());
        return MEP_ERR_NUMERIC;
    }
}

struct ConfigView {
    const std::map<std::string, std::string>* kv;

    bool has(const std::string& key) const { return kv->count(key) > 0; }
    std::string raw(const std::string& key) const { return kv->at(key); }

    std::string str(const std::string& key, const std::string& fallback) const {
        auto it = kv->find(key);
        return it == kv->end() ? fallback : it->second;
    }
    double num(const std::string& key, double fallback) const {
        auto it = kv->find(key);
        if (it == kv->end()) return fallback;
        try {
            size_t pos = 0;
            const double v = std::stod(it->second, &pos);
            if (pos != it->second.size()) throw std::invalid_argument("trailing characters");
            return v;
        } catch (const std::exception&) {
            throw std::invalid_argument("config: bad numeric value for '" + key + "': '" + it->second +
                                        "'");
        }
    }
    long integer(const std::string& key, long fallback) const {
        const double v = num(key, static_cast<double>(fallback));
        const long r = static_cast<long>(v);
        if (static_cast<double>(r) != v)
            throw std::invalid_argument("config: '" + key + "' must be an integer");
        return r;
    }
    bool flag(const std::string& key, bool fallback) const {
        auto it = kv->find(key);
        if (it == kv->end()) return fallback;
        if (it->second == "1" || it->second == "true") return true;
        if (it->second == "0" || it->second == "false") return false;
        throw std::invalid_argument("config: '" + key + "' must be 0/1");
    }
};

unsigned parse_methods(const std::string& value) {
    if (value == "all") return mep::kAllMethods;
    unsigned mask = 0;
    std::stringstream ss(value);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        const auto m = mep::method_from_name(tok);
        if (!m) throw std::invalid_argument("config: unknown method '" + tok + "'");
        mask |= mep::method_bit(*m);
    }
    if (mask == 0) throw std::invalid_argument("config: empty method list");
    return mask;
}

Eigen::VectorXd parse_vector(const std::string& value, const std::string& key) {
    std::vector<double> vals;
    std::stringstream ss(value);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        try {
            size_t pos = 0;
            vals.push_back(std::stod(tok, &pos));
            if (pos != tok.size()) throw std::invalid_argument("trailing characters");
        } catch (const std::exception&) {
            throw std::invalid_argument("config: bad numeric list for '" + key + "'");
        }
    }
    Eigen::VectorXd v(vals.size());
    for (size_t i = 0; i < vals.size(); ++i) v(i) = vals[i];
    return v;
}

mep::FitConfig fit_config_from(const ConfigView& cfg) {
    mep::FitConfig fc;
    fc.alpha = cfg.num("alpha", fc.alpha);
    const std::string fam = cfg.str("mean_family", "poly2");
    if (fam == "poly2") fc.family = mep::MeanFamily::Poly2;
    else if (fam == "sin_poly2") fc.family = mep::MeanFamily::SinPoly2;
    else if (fam == "exp_neg_sq") fc.family = mep::MeanFamily::ExpNegSq;
    else throw std::invalid_argument("config: unknown mean_family '" + fam + "'");
    if (!cfg.has("sigma_eps")) throw std::invalid_argument("config: sigma_eps is required");
    if (!cfg.has("sigma_u")) throw std::invalid_argument("config: sigma_u is required");
    fc.sigma_eps = cfg.num("sigma_eps", -1.0);
    fc.sigma_u = cfg.num("sigma_u", -1.0);
    const std::string pm = cfg.str("prior_mode", "moment_uniform");
    if (pm == "moment_uniform") fc.prior_mode = mep::PriorMode::MomentUniform;
    else if (pm == "beta_grid") fc.prior_mode = mep::PriorMode::TrueBetaGrid;
    else throw std::invalid_argument("config: unknown prior_mode '" + pm + "'");
    fc.prior_points = static_cast<int>(cfg.integer("prior_points", fc.prior_points));
    fc.prior_grid_lo = cfg.num("prior_lo", fc.prior_grid_lo);
    fc.prior_grid_hi = cfg.num("prior_hi", fc.prior_grid_hi);
    fc.prior_span_sigmas = cfg.num("prior_span", fc.prior_span_sigmas);
    if (cfg.has("beta_init")) fc.beta_init = parse_vector(cfg.raw("beta_init"), "beta_init");
    fc.methods_mask = parse_methods(cfg.str("method", "m1s"));
    fc.split_fraction = cfg.num("split_frac", fc.split_fraction);
    fc.seed = static_cast<std::uint64_t>(cfg.integer("seed", 1));
    fc.n_w = static_cast<int>(cfg.integer("quad_w", fc.n_w));
    fc.n_y = static_cast<int>(cfg.integer("quad_y", fc.n_y));
    fc.with_variance = cfg.flag("with_variance", fc.with_variance);
    return fc;
}

mep::SimScenario scenario_from(const ConfigView& cfg) {
    const std::string sim = cfg.str("sim", "1");
    const long model_no = cfg.integer("model", 1);
    if (model_no < 1 || model_no > 3) throw std::invalid_argument("config: model must be 1, 2, or 3");
    const auto model = static_cast<mep::SimModel>(model_no);
    const int n = static_cast<int>(cfg.integer("n", 500));
    mep::SimScenario s;
    if (sim == "1") s = mep::SimScenario::simulation1(model, n);
    else if (sim == "2") s = mep::SimScenario::simulation2(model, n);
    else if (sim == "a1") s = mep::SimScenario::simulation_a1(model, n);
    else if (sim == "a2") s = mep::SimScenario::simulation_a2(model, n);
    else if (sim == "a3") s = mep::SimScenario::simulation_a3(model, n);
    else throw std::invalid_argument("config: sim must be 1, 2, a1, a2, or a3");
    if (n < 10) throw std::invalid_argument("config: n must be at least 10");
    const long reps = cfg.integer("reps", 100);
    if (reps < 1) throw std::invalid_argument("config: reps must be >= 1");
    s.replications = static_cast<int>(reps);
    s.seed = static_cast<std::uint64_t>(cfg.integer("seed", 1));
    s.alpha = cfg.num("alpha", s.alpha);
    if (!(s.alpha > 0.0 && s.alpha < 1.0)) throw std::invalid_argument("config: alpha outside (0,1)");
    s.split_fraction = cfg.num("split_frac", s.split_fraction);
    s.m_grid = static_cast<int>(cfg.integer("m_grid", s.m_grid));
    s.n_w = static_cast<int>(cfg.integer("quad_w", s.n_w));
    s.n_y = static_cast<int>(cfg.integer("quad_y", s.n_y));
    s.out_of_sample_cp = cfg.flag("oos_cp", false);
    if (cfg.has("beta_true")) s.beta_true = parse_vector(cfg.raw("beta_true"), "beta_true");
    return s;
}

}  // namespace

struct mep_config {
    std::map<std::string, std::string> kv;
};

struct mep_dataset {
    mep::Dataset data;
};

struct mep_fit {
    mep::FitArtifact artifact;
};

extern "C" {

const char* mep_version(void) { return "1.0.0"; }

const char* mep_status_name(mep_status status) {
    switch (status) {
        case MEP_OK: return "ok";
        case MEP_ERR_INVALID: return "invalid-argument";
        case MEP_ERR_IO: return "io-error";
        case MEP_ERR_PARSE: return "parse-error";
        case MEP_ERR_NONCONVERGENCE: return "non-convergence";
        case MEP_ERR_NUMERIC: return "numeric-error";
        case MEP_ERR_PARTIAL: return "partial-failure";
    }
    return "unknown";
}

const char* mep_last_error(void) { return g_last_error.c_str(); }

void mep_string_free(char* s) { std::free(s); }

mep_config* mep_config_new(void) { return new mep_config(); }

void mep_config_free(mep_config* cfg) { delete cfg; }

mep_status mep_config_set(mep_config* cfg, const char* key, const char* value) {
    return guard([&] {
        if (!cfg || !key || !value) throw std::invalid_argument("mep_config_set: null argument");
        if (std::string(key).empty()) throw std::invalid_argument("mep_config_set: empty key");
        cfg->kv[key] = value;
    });
}

const char* mep_config_get(const mep_config* cfg, const char* key) {
    if (!cfg || !key) return nullptr;
    auto it = cfg->kv.find(key);
    return it == cfg->kv.end() ? nullptr : it->second.c_str();
}

mep_status mep_config_load_file(mep_config* cfg, const char* path) {
    return guard([&] {
        if (!cfg || !path) throw std::invalid_argument("mep_config_load_file: null argument");
        std::ifstream in(path);
        if (!in) throw mep::IoError(std::string("cannot open '") + path + "'");
        std::string line;
        int line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            const size_t hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            auto strip = [](std::string s) {
                while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.erase(s.begin());
                while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.pop_back();
                return s;
            };
            const std::string stripped = strip(line);
            if (stripped.empty()) continue;
            const size_t eq = stripped.find('=');
            if (eq == std::string::npos)
                throw mep::ParseError(std::string(path) + ": line " + std::to_string(line_no) +
                                      " is not 'key = value'");
            const std::string key = strip(stripped.substr(0, eq));
            const std::string val = strip(stripped.substr(eq + 1));
            if (key.empty())
                throw mep::ParseError(std::string(path) + ": empty key at line " + std::to_string(line_no));
            cfg->kv[key] = val;
        }
    });
}

char* mep_config_dump(const mep_config* cfg) {
    if (!cfg) return nullptr;
    std::string out;
    for (const auto& [k, v] : cfg->kv) out += k + " = " + v + "\n";
    char* s = static_cast<char*>(std::malloc(out.size() + 1));
    if (!s) return nullptr;
    std::memcpy(s, out.c_str(), out.size() + 1);
    return s;
}

mep_status mep_dataset_read_csv(const char* path, mep_dataset** out) {
    return guard([&] {
        if (!path || !out) throw std::invalid_argument("mep_dataset_read_csv: null argument");
        *out = new mep_dataset{mep::read_dataset_csv(path)};
    });
}

mep_status mep_dataset_new(int n, int zcols, const double* y, const double* w,
                           const double* z_rowmajor, mep_dataset** out) {
    return guard([&] {
        if (!y || !w || !out || (zcols > 0 && !z_rowmajor))
            throw std::invalid_argument("mep_dataset_new: null argument");
        if (n < 1 || zcols < 0) throw std::invalid_argument("mep_dataset_new: bad dimensions");
        Eigen::VectorXd yv(n), wv(n);
        Eigen::MatrixXd z(n, zcols + 1);
        for (int i = 0; i < n; ++i) {
            yv(i) = y[i];
            wv(i) = w[i];
            z(i, 0) = 1.0;
            for (int c = 0; c < zcols; ++c) z(i, c + 1) = z_rowmajor[i * zcols + c];
        }
        *out = new mep_dataset{mep::Dataset(std::move(yv), std::move(wv), std::move(z))};
    });
}

void mep_dataset_free(mep_dataset* data) { delete data; }

int mep_dataset_rows(const mep_dataset* data) { return data ? data->data.n() : 0; }

int mep_dataset_zdim(const mep_dataset* data) { return data ? data->data.zdim() : 0; }

mep_status mep_fit_run(const mep_config* cfg, const mep_dataset* data, mep_fit** out) {
    return guard([&] {
        if (!cfg || !data || !out) throw std::invalid_argument("mep_fit_run: null argument");
        const ConfigView view{&cfg->kv};
        const mep::FitConfig fc = fit_config_from(view);
        auto fit = std::make_unique<mep_fit>();
        fit->artifact = mep::run_fit(data->data, fc);
        if (fit->artifact.any_nonconvergence()) {
            std::string msg = "fit: solver did not converge:";
            for (int k = 0; k < 6; ++k) {
                const auto& m = fit->artifact.methods[k];
                if (m.attempted && m.failed)
                    msg += std::string(" [") + mep::method_name(static_cast<mep::Method>(k)) + "] " +
                           m.error;
            }
            throw mep::NonConvergenceError(msg);
        }
        *out = fit.release();
    });
}

mep_status mep_fit_save(const mep_fit* fit, const char* path) {
    return guard([&] {
        if (!fit || !path) throw std::invalid_argument("mep_fit_save: null argument");
        mep::save_artifact(path, fit->artifact);
    });
}

mep_status mep_fit_load(const char* path, mep_fit** out) {
    return guard([&] {
        if (!path || !out) throw std::invalid_argument("mep_fit_load: null argument");
        *out = new mep_fit{mep::load_artifact(path)};
    });
}

void mep_fit_free(mep_fit* fit) { delete fit; }

char* mep_fit_summary_json(const mep_fit* fit) {
    if (!fit) return nullptr;
    const std::string out = mep::artifact_to_json(fit->artifact).dump(2);
    char* s = static_cast<char*>(std::malloc(out.size() + 1));
    if (!s) return nullptr;
    std::memcpy(s, out.c_str(), out.size() + 1);
    return s;
}

namespace {
mep::PredictOptions predict_options(const mep_fit* fit, const char* method, int use_hdw) {
    mep::PredictOptions opts;
    opts.hdw = use_hdw != 0;
    if (method && *method) {
        const auto m = mep::method_from_name(method);
        if (!m) throw std::invalid_argument(std::string("predict: unknown method '") + method + "'");
        opts.method = *m;
    } else {
        // default: the first attempted, non-failed method
        bool found = false;
        for (int k = 0; k < 6; ++k) {
            const auto& mo = fit->artifact.methods[k];
            if (mo.attempted && !mo.failed) {
                opts.method = static_cast<mep::Method>(k);
                found = true;
                break;
            }
        }
        if (!found) throw std::invalid_argument("predict: the fit artifact has no usable method");
    }
    return opts;
}
}  // namespace

mep_status mep_predict_csv(const mep_fit* fit, const char* method, int use_hdw, const char* in_csv,
                           const char* out_csv) {
    return guard([&] {
        if (!fit || !in_csv || !out_csv) throw std::invalid_argument("mep_predict_csv: null argument");
        const mep::NewData nd = mep::read_newdata_csv(in_csv);
        const mep::Predictions pred = mep::predict_rows(fit->artifact, nd, predict_options(fit, method, use_hdw));
        mep::write_predictions_csv(out_csv, nd, pred);
    });
}

mep_status mep_predict_rows(const mep_fit* fit, const char* method, int use_hdw, int n, int zcols,
                            const double* w, const double* z_rowmajor, double* center, double* lower,
                            double* upper) {
    return guard([&] {
        if (!fit || !w || !center || !lower || !upper || (zcols > 0 && !z_rowmajor))
            throw std::invalid_argument("mep_predict_rows: null argument");
        if (n < 1 || zcols < 0) throw std::invalid_argument("mep_predict_rows: bad dimensions");
        mep::NewData nd;
        nd.w.resize(n);
        nd.z.resize(n, zcols + 1);
        for (int i = 0; i < n; ++i) {
            nd.w(i) = w[i];
            nd.z(i, 0) = 1.0;
            for (int c = 0; c < zcols; ++c) nd.z(i, c + 1) = z_rowmajor[i * zcols + c];
        }
        const mep::Predictions pred = mep::predict_rows(fit->artifact, nd, predict_options(fit, method, use_hdw));
        for (int i = 0; i < n; ++i) {
            center[i] = pred.center(i);
            lower[i] = pred.lower(i);
            upper[i] = pred.upper(i);
        }
    });
}

mep_status mep_bench_run(const mep_config* cfg, const char* out_csv, const char* out_json) {
    return guard([&] {
        if (!cfg || !out_csv || !out_json) throw std::invalid_argument("mep_bench_run: null argument");
        const ConfigView view{&cfg->kv};
        const mep::SimScenario scenario = scenario_from(view);
        const unsigned mask = parse_methods(view.str("methods", "all"));
        const int threads = static_cast<int>(view.integer("threads", 0));
        const mep::SimResult result = mep::replicate(scenario, mask, threads);
        mep::write_bench_csv(out_csv, result);
        mep::write_bench_json(out_json, result);
    });
}

}  // extern "C"
