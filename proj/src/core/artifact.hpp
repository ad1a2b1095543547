#ifndef MEP_CORE_ARTIFACT_HPP
#define MEP_CORE_ARTIFACT_HPP

#include <json.hpp>

#include "core/csv.hpp"

namespace mep {

struct FitConfig {
    double alpha = 0.1;
    MeanFamily family = MeanFamily::Poly2;
    double sigma_eps = -1.0;  // required
    double sigma_u = -1.0;    // required
    PriorMode prior_mode = PriorMode::MomentUniform;
    int prior_points = 30;
    double prior_grid_lo = -1.7320508075688772;
    double prior_grid_hi = 1.7320508075688772;
    double prior_span_sigmas = 3.0;
    VectorXd beta_init;  // empty: automatic naive initialization
    unsigned methods_mask = method_bit(Method::M1s);
    double split_fraction = 0.5;
    std::uint64_t seed = 1;
    int n_w = 20;
    int n_y = 20;
    bool with_variance = true;

    void validate() const;
};

// Saved fit: the configuration, the training data (kernel centers and the
// highest-density-window option need it), and one outcome per method.
struct FitArtifact {
    int schema_version = 1;
    FitConfig config;
    Dataset data;
    std::array<MethodOutcome, 6> methods;

    bool any_nonconvergence() const;
    bool any_failure() const;
};

FitArtifact run_fit(const Dataset& data, const FitConfig& config);

nlohmann::json artifact_to_json(const FitArtifact& artifact);
FitArtifact artifact_from_json(const nlohmann::json& doc);
void save_artifact(const std::string& path, const FitArtifact& artifact);
FitArtifact load_artifact(const std::string& path);

struct PredictOptions {
    Method method = Method::M1s;
    bool hdw = false;  // route centers through the highest-density window
};

struct Predictions {
    VectorXd center, lower, upper;
};

Predictions predict_rows(const FitArtifact& artifact, const NewData& newdata,
                         const PredictOptions& opts);
void write_predictions_csv(const std::string& path, const NewData& newdata, const Predictions& pred);

}  // namespace mep

#endif
