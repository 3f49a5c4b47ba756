#pragma once

#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "crossecg/ecg_types.hpp"
#include "crossecg/losses.hpp"
#include "crossecg/model.hpp"

namespace crossecg {

struct PlateauConfig {
    double factor = 0.5;
    int patience = 10; // epochs without improvement before decaying
    double min_lr = 1e-6;
};

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct TrainConfig {
    double lr = 4e-4;
    int batch_size = 32;
    int epochs = 200;
    std::uint64_t seed = 42;
    PlateauConfig plateau;
    AdamConfig adam;
    int classes_per_batch = 8; // P
    int samples_per_class = 4; // K
    int augment_target = 0;    // per-class floor for augment_minority; 0 = off
};

struct OptimState {
    std::unordered_map<std::string, std::vector<double>> m, v;
    std::int64_t step = 0;
    double lr = 4e-4;
    double best_metric = std::numeric_limits<double>::infinity();
    int epochs_since_improvement = 0;
};

// Bias-corrected Adam over every parameter in the store. Validates all
// gradients before touching any parameter; a NaN/Inf gradient throws
// NonFiniteGradient and leaves parameters and step count unchanged.
void adam_step(ParamStore& params, OptimState& state, const AdamConfig& cfg);

// Called once per epoch with the monitored validation loss; halves the rate
// (down to min_lr) after `patience` epochs without an improvement > 1e-4.
double plateau_update(OptimState& state, const PlateauConfig& cfg, double val_loss);

// P distinct classes, K slots each (drawn with replacement when a class has
// fewer than K segments). Returns indices into the pool.
std::vector<size_t> balanced_batch(const std::vector<int>& labels, int P, int K, Rng& rng);

// ---- Batched inference helpers ------------------------------------------------

// Eval-mode embeddings [N,D] and logits [N,C] for a segment set, processed in
// per-length groups. Row order follows the input order.
struct EmbeddedSet {
    Tensor embeddings;
    Tensor logits;
    std::vector<int> labels;
    std::vector<std::string> subject_ids;
    std::vector<State> states;
};
EmbeddedSet embed_set(Model& model, const std::vector<Segment>& segments,
                      const std::vector<std::string>& subjects, int chunk = 64);

// ---- Training loop -------------------------------------------------------------

struct EpochStats {
    int epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double val_acc = 0.0;
    double lr = 0.0;
};

struct FitResult {
    std::vector<EpochStats> history;
    int best_epoch = 0;
    double best_val_loss = 0.0;
    double best_val_acc = 0.0;
};

// Deterministic training loop: class-balanced batches covering the pool once
// per epoch, Adam updates, per-epoch validation, plateau schedule, and a
// best-validation checkpoint + history.csv under out_dir (pass an empty path
// to skip file output).
FitResult fit(Model& model, const std::vector<Segment>& train_set,
              const std::vector<Segment>& val_set, const std::vector<std::string>& subjects,
              const TrainConfig& tcfg, const LossConfig& lcfg,
              const std::filesystem::path& out_dir);

void write_history_csv(const std::vector<EpochStats>& history,
                       const std::filesystem::path& path);

// ---- Checkpoints -----------------------------------------------------------------

// checkpoint.json carries the model config, tensor manifest and metadata;
// checkpoint.bin holds raw little-endian f64 payloads in manifest order.
void save_checkpoint(const Model& model, const nlohmann::json& metadata,
                     const std::filesystem::path& dir);

struct Checkpoint {
    ModelConfig config;
    nlohmann::json metadata;
    // Rebuilt model with restored parameters and buffers.
    Model restore() const;
    nlohmann::json manifest;
    std::vector<double> payload;
};
Checkpoint load_checkpoint(const std::filesystem::path& dir);

} // namespace crossecg
