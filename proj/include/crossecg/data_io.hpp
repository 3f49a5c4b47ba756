#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "crossecg/ecg_types.hpp"

namespace crossecg {

// One `.ecg` file: a JSON header line
//   {"subject":"s01","state":"rest","fs":300,"n":900,"lead":"II"}
// followed by n little-endian float32 samples. Segment files carry the same
// header plus "r_index" and "rr_s".
EcgRecord read_record(const std::filesystem::path& path);
void write_record(const EcgRecord& record, const std::filesystem::path& path);

Segment read_segment(const std::filesystem::path& path);
void write_segment(const Segment& segment, const std::filesystem::path& path);

struct ManifestEntry {
    std::string path; // relative to the manifest's directory
    std::string subject_id;
    State state = State::Rest;
    double duration_s = 0.0;
};

struct DatasetManifest {
    int schema_version = 1;
    std::vector<ManifestEntry> records;
    std::filesystem::path base_dir;

    std::vector<std::string> subjects() const; // sorted unique ids
};

DatasetManifest read_manifest(const std::filesystem::path& manifest_path);
void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& manifest_path);

// ---- Synthetic generation ----------------------------------------------------

struct SynthResult {
    EcgRecord record;
    std::vector<int> true_r_peaks; // sample indices, strictly increasing
};

// Sum of five Gaussian bumps per beat at RR intervals drawn inside the
// state's heart-rate band (rest 60-80 bpm, exercise 90-150 bpm) plus white
// noise. Exercise beats compress wave widths and offsets by the ratio of the
// resting rate to the current rate. Deterministic for a fixed seed.
SynthResult synth_ecg(const SubjectParams& params, State state, double duration_s,
                      double noise_std, std::uint64_t seed, double fs_hz = 300.0);

struct SynthDatasetOptions {
    int n_subjects = 10;
    double rest_sec = 80.0;      // total resting signal per subject
    double exercise_sec = 60.0;  // total post-exercise signal per subject
    double record_sec = 20.0;    // each record's length (last chunk absorbs remainder)
    double fs_hz = 300.0;
    double noise_std = 0.05;
    std::uint64_t seed = 42;
};

// Writes one .ecg per record plus manifest.json; returns the manifest.
DatasetManifest synth_dataset(const SynthDatasetOptions& opt,
                              const std::filesystem::path& out_dir);

// ---- Partitioning --------------------------------------------------------------

enum class Mode { Rest2Rest, Exercise2Exercise, Mix2Mix, Rest2Exercise, Exercise2Rest };

std::string to_string(Mode m);
Mode mode_from_string(const std::string& s);

struct SplitSpec {
    double train_fraction = 0.8;
    double val_fraction = 0.2;
    std::uint64_t seed = 42;
    Mode mode = Mode::Rest2Rest;
};

struct Partition {
    std::vector<ManifestEntry> train, val, test;
};

// Deterministic subject-wise split. Cross-state modes train/val on the source
// state and test on every target-state record. Same-state modes hold out the
// remainder after train/val as the test set (falling back to the validation
// records when the fractions sum to 1). Mix2Mix trains on half of each
// state's records and tests on the other halves.
Partition partition(const DatasetManifest& manifest, const SplitSpec& spec);

std::string split_digest(const Partition& p);

// ---- Augmentation ----------------------------------------------------------------

// Brings every class up to target_per_class by copying segments with a random
// time shift (up to 5% of the length, zero-padded) and amplitude scale
// (0.9-1.1). Originals are kept untouched.
std::vector<Segment> augment_minority(const std::vector<Segment>& segments,
                                      int target_per_class, std::uint64_t seed);

// ---- Segment directories ------------------------------------------------------------

// Writes seg_*.ecg files plus manifest.json (kind "segments") into dir.
void save_segments(const std::vector<Segment>& segments, const std::filesystem::path& dir);
std::vector<Segment> load_segments(const std::filesystem::path& dir);

} // namespace crossecg
