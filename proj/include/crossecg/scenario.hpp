#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "crossecg/config.hpp"
#include "crossecg/data_io.hpp"
#include "crossecg/metrics.hpp"
#include "crossecg/preprocess.hpp"

namespace crossecg {

struct MetricsReport {
    Mode scenario = Mode::Rest2Rest;
    int n_subjects = 0;
    double acc_pct = 0.0;        // nearest-template identification accuracy
    double acc_argmax_pct = 0.0; // classifier-head accuracy, secondary column
    double far_pct = 0.0;        // at the per-user adaptive thresholds
    double frr_pct = 0.0;
    double auc_pct = 0.0;
    double eer_pct = 0.0;
    double threshold_used = 0.0; // mean adaptive threshold across users
    std::string config_digest;
    std::string split_digest;
};

nlohmann::json report_to_json(const MetricsReport& r);
void write_report(const MetricsReport& r, const std::filesystem::path& path);

// Partition -> preprocess -> train -> enroll -> adaptive thresholds ->
// test-set metrics. Writes history.csv, checkpoint.*, report.json and
// embeddings.csv under out_dir (empty path = no file output).
MetricsReport run_scenario(const RunConfig& cfg, Mode mode,
                           const std::filesystem::path& data_dir,
                           const std::filesystem::path& out_dir);

// The five ablation variants on identical Rest2Exercise splits.
// A1 = full model, A2 = no multi-scale, A3 = no deep conv, A4 = no attention,
// A5 = deep conv only.
std::vector<MetricsReport> run_ablation(const RunConfig& cfg,
                                        const std::filesystem::path& data_dir,
                                        const std::filesystem::path& out_dir);

ModelConfig ablation_variant(const ModelConfig& base, const std::string& name);

void write_ablation_csv(const std::vector<std::string>& names,
                        const std::vector<MetricsReport>& reports,
                        const std::filesystem::path& path);

// Preprocesses every record of a partition bucket (parallel over records).
std::vector<Segment> preprocess_entries(const std::vector<ManifestEntry>& entries,
                                        const std::filesystem::path& base_dir,
                                        QualityReport* combined = nullptr);

} // namespace crossecg
