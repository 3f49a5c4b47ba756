#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "crossecg/losses.hpp"
#include "crossecg/model.hpp"
#include "crossecg/training.hpp"

namespace crossecg {

// Weights of the three threshold factors (Eq. 11 weighting) plus an optional
// fixed baseline threshold; tau_b <= -1 means "derive from the validation EER".
struct AuthConfig {
    double w_g = 0.5;
    double w_p = 0.3;
    double w_l = 0.2;
    double tau_b = -1.0;
};

struct DataConfig {
    std::string dir;
    double train_fraction = 0.8;
    double val_fraction = 0.2;
};

struct RunConfig {
    std::uint64_t seed = 42;
    ModelConfig model;
    TrainConfig train;
    LossConfig loss;
    AuthConfig auth;
    DataConfig data;
    std::string digest; // FNV-1a over the canonical resolved JSON
};

nlohmann::json model_config_to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

nlohmann::json run_config_to_json(const RunConfig& c);

// Parses (an empty or missing-key file yields defaults), checks every nested
// invariant, fills the digest. Violations are collected and thrown together
// as one ConfigError.
RunConfig validate_config(const std::filesystem::path& path);
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig default_run_config();

std::string config_digest(const RunConfig& c);

// Refuses to reuse a run directory whose stored config has a different
// digest (pass force=true to overwrite). Writes the resolved config.
void claim_run_dir(const std::filesystem::path& dir, const RunConfig& cfg, bool force = false);

} // namespace crossecg
