// mep: command-line front end for the meipred shared library.
//
// Subcommands:
//   bench    run a simulation scenario and write per-replication CSV + JSON
//   fit      fit prediction-interval estimators to a CSV dataset
//   predict  emit intervals for new (w, z) rows from a saved fit
//
// Exit codes: 0 success, 1 config/input error, 2 partial bench failure,
// 3 solver non-convergence.

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <map>
#include <memory>
#include <string>

#include "meipred.h"

namespace {

int exit_code_for(mep_status status) {
    switch (status) {
        case MEP_OK: return 0;
        case MEP_ERR_INVALID:
        case MEP_ERR_IO:
        case MEP_ERR_PARSE: return 1;
        case MEP_ERR_PARTIAL: return 2;
        case MEP_ERR_NONCONVERGENCE:
        case MEP_ERR_NUMERIC: return 3;
    }
    return 1;
}

int fail(mep_status status) {
    std::fprintf(stderr, "mep: %s: %s\n", mep_status_name(status), mep_last_error());
    return exit_code_for(status);
}

struct ConfigHandle {
    mep_config* cfg = mep_config_new();
    ~ConfigHandle() { mep_config_free(cfg); }
};

// Output files without a directory component land in MEP_OUT_DIR when set.
std::string resolve_output(const std::string& path) {
    const char* dir = std::getenv("MEP_OUT_DIR");
    if (!dir || !*dir || path.find('/') != std::string::npos) return path;
    std::string joined(dir);
    if (!joined.empty() && joined.back() != '/') joined += '/';
    return joined + path;
}

// Flag values recorded as strings; flags given on the command line win over
// the config file.
class KeyedOptions {
public:
    void add(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help) {
        values_[key] = "";
        options_[key] = app->add_option(flag, values_[key], help);
    }

    mep_status apply(mep_config* cfg) const {
        for (const auto& [key, opt] : options_) {
            if (opt->count() == 0) continue;
            const mep_status st = mep_config_set(cfg, key.c_str(), values_.at(key).c_str());
            if (st != MEP_OK) return st;
        }
        return MEP_OK;
    }

private:
    std::map<std::string, std::string> values_;
    std::map<std::string, CLI::Option*> options_;
};

int load_config_file(mep_config* cfg, const std::string& path) {
    if (path.empty()) return 0;
    const mep_status st = mep_config_load_file(cfg, path.c_str());
    if (st != MEP_OK) return fail(st);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"prediction intervals for regression with a mismeasured covariate"};
    app.require_subcommand(1);

    // --- bench ---
    CLI::App* bench = app.add_subcommand("bench", "run a simulation benchmark scenario");
    std::string bench_config, bench_csv = "bench.csv", bench_json = "bench.json";
    bench->add_option("--config", bench_config, "key = value config file");
    bench->add_option("--out-csv", bench_csv, "per-replication CSV output");
    bench->add_option("--out-json", bench_json, "aggregate JSON output");
    KeyedOptions bench_keys;
    bench_keys.add(bench, "--sim", "sim", "scenario: 1, 2, a1, a2, a3");
    bench_keys.add(bench, "--model", "model", "mean model: 1, 2, 3");
    bench_keys.add(bench, "--n", "n", "sample size per replication");
    bench_keys.add(bench, "--reps", "reps", "number of replications");
    bench_keys.add(bench, "--seed", "seed", "RNG seed");
    bench_keys.add(bench, "--alpha", "alpha", "miscoverage level");
    bench_keys.add(bench, "--methods", "methods", "all or comma list of m1s..m3c");
    bench_keys.add(bench, "--threads", "threads", "worker threads (0 = auto)");
    bench_keys.add(bench, "--split-frac", "split_frac", "conformal estimation fraction");
    bench_keys.add(bench, "--m-grid", "m_grid", "working prior grid size");
    bench_keys.add(bench, "--quad-w", "quad_w", "Gauss-Hermite nodes in w");
    bench_keys.add(bench, "--quad-y", "quad_y", "Gauss-Hermite nodes in y");
    bench_keys.add(bench, "--oos-cp", "oos_cp", "evaluate CP on a fresh test set (0/1)");
    bench_keys.add(bench, "--beta-true", "beta_true", "generator coefficients (comma list)");

    // --- fit ---
    CLI::App* fit = app.add_subcommand("fit", "fit estimators to a CSV dataset");
    std::string fit_config, fit_data, fit_out = "fit.json";
    fit->add_option("--config", fit_config, "key = value config file");
    fit->add_option("--data", fit_data, "input CSV (y,w,z1,...)")->required();
    fit->add_option("--out", fit_out, "fit artifact JSON output");
    KeyedOptions fit_keys;
    fit_keys.add(fit, "--alpha", "alpha", "miscoverage level");
    fit_keys.add(fit, "--mean-family", "mean_family", "poly2, sin_poly2, exp_neg_sq");
    fit_keys.add(fit, "--sigma-eps", "sigma_eps", "known regression error SD");
    fit_keys.add(fit, "--sigma-u", "sigma_u", "known measurement error SD");
    fit_keys.add(fit, "--prior-mode", "prior_mode", "moment_uniform or beta_grid");
    fit_keys.add(fit, "--prior-points", "prior_points", "working prior grid size");
    fit_keys.add(fit, "--prior-lo", "prior_lo", "beta_grid support lower end");
    fit_keys.add(fit, "--prior-hi", "prior_hi", "beta_grid support upper end");
    fit_keys.add(fit, "--prior-span", "prior_span", "moment prior half-width in SDs");
    fit_keys.add(fit, "--beta-init", "beta_init", "initial coefficients (comma list)");
    fit_keys.add(fit, "--method", "method", "all or comma list of m1s..m3c");
    fit_keys.add(fit, "--split-frac", "split_frac", "conformal estimation fraction");
    fit_keys.add(fit, "--seed", "seed", "split/RNG seed");
    fit_keys.add(fit, "--quad-w", "quad_w", "Gauss-Hermite nodes in w");
    fit_keys.add(fit, "--quad-y", "quad_y", "Gauss-Hermite nodes in y");
    fit_keys.add(fit, "--with-variance", "with_variance", "Theorem-1 SE for m1s (0/1)");

    // --- predict ---
    CLI::App* predict = app.add_subcommand("predict", "prediction intervals for new rows");
    std::string pred_fit, pred_data, pred_out = "predictions.csv", pred_method;
    bool pred_hdw = false;
    predict->add_option("--fit", pred_fit, "fit artifact JSON")->required();
    predict->add_option("--data", pred_data, "CSV of new rows (w,z1,...)")->required();
    predict->add_option("--out", pred_out, "output CSV");
    predict->add_option("--method", pred_method, "which fitted method to use");
    predict->add_flag("--hdw", pred_hdw, "highest-density-window centers");

    CLI11_PARSE(app, argc, argv);

    if (bench->parsed()) {
        ConfigHandle cfg;
        if (const char* env = std::getenv("MEP_THREADS"); env && *env)
            mep_config_set(cfg.cfg, "threads", env);
        if (int rc = load_config_file(cfg.cfg, bench_config)) return rc;
        if (mep_status st = bench_keys.apply(cfg.cfg); st != MEP_OK) return fail(st);
        const std::string out_csv = resolve_output(bench_csv);
        const std::string out_json = resolve_output(bench_json);
        const mep_status st = mep_bench_run(cfg.cfg, out_csv.c_str(), out_json.c_str());
        if (st != MEP_OK) return fail(st);
        std::printf("bench: wrote %s and %s\n", out_csv.c_str(), out_json.c_str());
        return 0;
    }

    if (fit->parsed()) {
        ConfigHandle cfg;
        if (int rc = load_config_file(cfg.cfg, fit_config)) return rc;
        if (mep_status st = fit_keys.apply(cfg.cfg); st != MEP_OK) return fail(st);
        mep_dataset* data = nullptr;
        mep_status st = mep_dataset_read_csv(fit_data.c_str(), &data);
        if (st != MEP_OK) return fail(st);
        mep_fit* fitted = nullptr;
        st = mep_fit_run(cfg.cfg, data, &fitted);
        mep_dataset_free(data);
        if (st != MEP_OK) return fail(st);
        const std::string out = resolve_output(fit_out);
        st = mep_fit_save(fitted, out.c_str());
        mep_fit_free(fitted);
        if (st != MEP_OK) return fail(st);
        std::printf("fit: wrote %s\n", out.c_str());
        return 0;
    }

    // predict
    mep_fit* fitted = nullptr;
    mep_status st = mep_fit_load(pred_fit.c_str(), &fitted);
    if (st != MEP_OK) return fail(st);
    const std::string out = resolve_output(pred_out);
    st = mep_predict_csv(fitted, pred_method.empty() ? nullptr : pred_method.c_str(),
                         pred_hdw ? 1 : 0, pred_data.c_str(), out.c_str());
    mep_fit_free(fitted);
    if (st != MEP_OK) return fail(st);
    std::printf("predict: wrote %s\n", out.c_str());
    return 0;
}
