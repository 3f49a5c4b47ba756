#include "crossecg/data_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

namespace crossecg {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// "fs":300 rather than "fs":300.0 when the value is integral
json number_compact(double v) {
    if (v == std::floor(v) && std::abs(v) < 1e15) return json(static_cast<std::int64_t>(v));
    return json(v);
}

json header_for(const EcgRecord& r) {
    json h;
    h["subject"] = r.subject_id;
    h["state"] = to_string(r.state);
    h["fs"] = number_compact(r.fs_hz);
    h["n"] = r.samples.size();
    h["lead"] = r.lead;
    return h;
}

struct ParsedFile {
    json header;
    std::vector<float> payload;
};

ParsedFile read_ecg_file(const fs::path& path) {
    if (!fs::exists(path)) fail("MissingFile", "no such file: " + path.string());
    std::ifstream in(path, std::ios::binary);
    if (!in) fail("MissingFile", "cannot open: " + path.string());

    std::string line;
    if (!std::getline(in, line)) fail("MalformedHeader", "empty file: " + path.string());

    ParsedFile pf;
    try {
        pf.header = json::parse(line);
    } catch (const json::exception& e) {
        fail("MalformedHeader", path.string() + ": " + e.what());
    }
    for (const char* key : {"subject", "state", "fs", "n", "lead"})
        if (!pf.header.contains(key))
            fail("MalformedHeader", path.string() + ": missing key '" + key + "'");

    std::int64_t n;
    try {
        n = pf.header.at("n").get<std::int64_t>();
        pf.header.at("fs").get<double>();
        state_from_string(pf.header.at("state").get<std::string>());
    } catch (const json::exception& e) {
        fail("MalformedHeader", path.string() + ": " + e.what());
    }
    if (n < 0) fail("MalformedHeader", path.string() + ": negative sample count");

    pf.payload.resize(static_cast<size_t>(n));
    in.read(reinterpret_cast<char*>(pf.payload.data()),
            static_cast<std::streamsize>(n * sizeof(float)));
    if (in.gcount() != static_cast<std::streamsize>(n * sizeof(float)))
        fail("LengthMismatch", path.string() + ": header declares " + std::to_string(n) +
                                   " samples but payload is short");
    char extra;
    if (in.read(&extra, 1))
        fail("LengthMismatch", path.string() + ": trailing bytes after declared payload");
    return pf;
}

void write_ecg_file(const json& header, const std::vector<float>& payload, const fs::path& path) {
    const fs::path dir = path.parent_path();
    if (!dir.empty() && !fs::exists(dir))
        fail("IoFailure", "destination directory does not exist: " + dir.string());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail("IoFailure", "cannot open for writing: " + path.string());
    out << header.dump() << "\n";
    out.write(reinterpret_cast<const char*>(payload.data()),
              static_cast<std::streamsize>(payload.size() * sizeof(float)));
    if (!out) fail("IoFailure", "short write: " + path.string());
}

} // namespace

EcgRecord read_record(const fs::path& path) {
    ParsedFile pf = read_ecg_file(path);
    EcgRecord r;
    r.subject_id = pf.header.at("subject").get<std::string>();
    r.state = state_from_string(pf.header.at("state").get<std::string>());
    r.fs_hz = pf.header.at("fs").get<double>();
    r.lead = pf.header.at("lead").get<std::string>();
    r.samples = std::move(pf.payload);
    return r;
}

void write_record(const EcgRecord& record, const fs::path& path) {
    record.validate();
    write_ecg_file(header_for(record), record.samples, path);
}

Segment read_segment(const fs::path& path) {
    ParsedFile pf = read_ecg_file(path);
    if (!pf.header.contains("r_index"))
        fail("MalformedHeader", path.string() + ": segment file missing 'r_index'");
    Segment s;
    s.subject_id = pf.header.at("subject").get<std::string>();
    s.state = state_from_string(pf.header.at("state").get<std::string>());
    s.fs_hz = pf.header.at("fs").get<double>();
    s.r_index = pf.header.at("r_index").get<int>();
    s.rr_s = pf.header.value("rr_s", 0.0);
    s.samples = std::move(pf.payload);
    return s;
}

void write_segment(const Segment& segment, const fs::path& path) {
    if (segment.samples.empty()) fail("InvalidRecord", "segment has no samples");
    json h;
    h["subject"] = segment.subject_id;
    h["state"] = to_string(segment.state);
    h["fs"] = number_compact(segment.fs_hz);
    h["n"] = segment.samples.size();
    h["lead"] = "II";
    h["r_index"] = segment.r_index;
    h["rr_s"] = segment.rr_s;
    write_ecg_file(h, segment.samples, path);
}

std::vector<std::string> DatasetManifest::subjects() const {
    std::vector<std::string> ids;
    for (const auto& r : records) ids.push_back(r.subject_id);
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    return ids;
}

DatasetManifest read_manifest(const fs::path& manifest_path) {
    if (!fs::exists(manifest_path)) fail("MissingFile", "no manifest: " + manifest_path.string());
    std::ifstream in(manifest_path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        fail("MalformedHeader", manifest_path.string() + ": " + e.what());
    }
    DatasetManifest m;
    m.schema_version = j.value("schema_version", 1);
    m.base_dir = manifest_path.parent_path();
    for (const auto& e : j.at("records")) {
        ManifestEntry me;
        me.path = e.at("path").get<std::string>();
        me.subject_id = e.at("subject").get<std::string>();
        me.state = state_from_string(e.at("state").get<std::string>());
        me.duration_s = e.at("duration_s").get<double>();
        if (!fs::exists(m.base_dir / me.path))
            fail("MissingFile", "manifest lists missing record: " + (m.base_dir / me.path).string());
        m.records.push_back(std::move(me));
    }
    return m;
}

void write_manifest(const DatasetManifest& manifest, const fs::path& manifest_path) {
    json j;
    j["schema_version"] = manifest.schema_version;
    j["records"] = json::array();
    for (const auto& r : manifest.records) {
        json e;
        e["path"] = r.path;
        e["subject"] = r.subject_id;
        e["state"] = to_string(r.state);
        e["duration_s"] = r.duration_s;
        j["records"].push_back(e);
    }
    std::ofstream out(manifest_path);
    if (!out) fail("IoFailure", "cannot write manifest: " + manifest_path.string());
    out << j.dump(2) << "\n";
}

// ---- Synthetic generation -------------------------------------------------------

SynthResult synth_ecg(const SubjectParams& params, State state, double duration_s,
                      double noise_std, std::uint64_t seed, double fs_hz) {
    params.validate();
    if (duration_s <= 0.0) fail("InvalidParams", "duration_s must be positive");
    if (noise_std < 0.0) fail("InvalidParams", "noise_std must be non-negative");
    if (fs_hz <= 0.0) fail("InvalidParams", "fs_hz must be positive");

    Rng rng(seed);
    const bool exercise = state == State::Exercise;
    // Per-beat heart rate drawn inside the state's band.
    const double band_lo = exercise ? 90.0 : 60.0;
    const double band_hi = exercise ? 150.0 : 80.0;
    const double center = exercise
                              ? std::clamp(params.baseline_hr_bpm * 1.45, 95.0, 145.0)
                              : std::clamp(params.baseline_hr_bpm, 62.0, 78.0);
    const double hr_sigma = exercise ? 4.0 : 1.5;

    const int n = static_cast<int>(std::lround(duration_s * fs_hz));
    std::vector<double> sig(static_cast<size_t>(n), 0.0);

    struct Beat {
        double t_r;
        double hr;
    };
    std::vector<Beat> beats;
    const double margin = 0.35; // keeps whole beats inside the record
    double t = uniform(rng, margin, margin + 0.3);
    while (t < duration_s - margin) {
        const double hr = std::clamp(gaussian(rng, center, hr_sigma), band_lo, band_hi);
        beats.push_back({t, hr});
        t += 60.0 / hr;
    }

    const WaveParams* waves[5] = {&params.p, &params.q, &params.r, &params.s, &params.t};
    for (const Beat& beat : beats) {
        const double factor = exercise ? params.baseline_hr_bpm / beat.hr : 1.0;
        for (const WaveParams* w : waves) {
            const double c = beat.t_r + w->offset_s * factor;
            const double width = w->width_s * factor;
            const int lo = std::max(0, static_cast<int>(std::floor((c - 5.0 * width) * fs_hz)));
            const int hi = std::min(n - 1, static_cast<int>(std::ceil((c + 5.0 * width) * fs_hz)));
            for (int i = lo; i <= hi; ++i) {
                const double dt = i / fs_hz - c;
                sig[static_cast<size_t>(i)] += w->amplitude * std::exp(-dt * dt / (2.0 * width * width));
            }
        }
    }
    if (noise_std > 0.0)
        for (double& v : sig) v += gaussian(rng, 0.0, noise_std);

    SynthResult res;
    res.record.subject_id = "synthetic";
    res.record.state = state;
    res.record.fs_hz = fs_hz;
    res.record.samples.reserve(sig.size());
    for (double v : sig) res.record.samples.push_back(static_cast<float>(v));
    for (const Beat& b : beats) {
        const int idx = static_cast<int>(std::lround(b.t_r * fs_hz));
        if (idx >= 0 && idx < n) res.true_r_peaks.push_back(idx);
    }
    return res;
}

DatasetManifest synth_dataset(const SynthDatasetOptions& opt, const fs::path& out_dir) {
    if (opt.n_subjects <= 0) fail("InvalidParams", "n_subjects must be positive");
    fs::create_directories(out_dir);

    DatasetManifest manifest;
    manifest.base_dir = out_dir;
    Rng master(opt.seed);

    for (int s = 0; s < opt.n_subjects; ++s) {
        char name[16];
        std::snprintf(name, sizeof(name), "s%02d", s + 1);
        SubjectParams params = SubjectParams::for_subject(opt.seed * 1000003ull + static_cast<std::uint64_t>(s));

        for (State state : {State::Rest, State::Exercise}) {
            const double total = state == State::Rest ? opt.rest_sec : opt.exercise_sec;
            if (total <= 0.0) continue;
            const int chunks = std::max(1, static_cast<int>(std::lround(total / opt.record_sec)));
            const double chunk_dur = total / chunks;
            for (int c = 0; c < chunks; ++c) {
                const std::uint64_t rec_seed = master();
                SynthResult r = synth_ecg(params, state, chunk_dur, opt.noise_std, rec_seed, opt.fs_hz);
                r.record.subject_id = name;
                char fname[64];
                std::snprintf(fname, sizeof(fname), "%s_%s_%02d.ecg", name,
                              to_string(state).c_str(), c);
                write_record(r.record, out_dir / fname);
                ManifestEntry e;
                e.path = fname;
                e.subject_id = name;
                e.state = state;
                e.duration_s = r.record.duration_s();
                manifest.records.push_back(std::move(e));
            }
        }
    }
    write_manifest(manifest, out_dir / "manifest.json");
    return manifest;
}

// ---- Partitioning -----------------------------------------------------------------

std::string to_string(Mode m) {
    switch (m) {
        case Mode::Rest2Rest: return "rest2rest";
        case Mode::Exercise2Exercise: return "exercise2exercise";
        case Mode::Mix2Mix: return "mix2mix";
        case Mode::Rest2Exercise: return "rest2exercise";
        case Mode::Exercise2Rest: return "exercise2rest";
    }
    fail("ConfigError", "invalid mode value");
}

Mode mode_from_string(const std::string& s) {
    if (s == "rest2rest") return Mode::Rest2Rest;
    if (s == "exercise2exercise") return Mode::Exercise2Exercise;
    if (s == "mix2mix") return Mode::Mix2Mix;
    if (s == "rest2exercise") return Mode::Rest2Exercise;
    if (s == "exercise2rest") return Mode::Exercise2Rest;
    fail("ConfigError", "unknown mode: " + s);
}

namespace {

// round(f*n) clamped so the slice is usable with tiny record counts
int slice_count(double fraction, int n) {
    return std::clamp(static_cast<int>(std::lround(fraction * n)), 0, n);
}

std::vector<ManifestEntry> shuffled(std::vector<ManifestEntry> v, Rng& rng) {
    std::sort(v.begin(), v.end(),
              [](const ManifestEntry& a, const ManifestEntry& b) { return a.path < b.path; });
    std::shuffle(v.begin(), v.end(), rng);
    return v;
}

} // namespace

Partition partition(const DatasetManifest& manifest, const SplitSpec& spec) {
    if (manifest.records.empty()) fail("InsufficientData", "manifest has no records");
    if (spec.train_fraction <= 0.0 || spec.train_fraction >= 1.0 ||
        spec.val_fraction <= 0.0 || spec.val_fraction >= 1.0 ||
        spec.train_fraction + spec.val_fraction > 1.0 + 1e-12)
        fail("ConfigError", "split fractions must lie in (0,1) and sum to at most 1");

    std::map<std::string, std::vector<ManifestEntry>> rest, exercise;
    for (const auto& r : manifest.records)
        (r.state == State::Rest ? rest : exercise)[r.subject_id].push_back(r);

    auto subjects = manifest.subjects();
    const bool needs_rest = spec.mode != Mode::Exercise2Exercise;
    const bool needs_exercise = spec.mode != Mode::Rest2Rest;
    for (const auto& id : subjects) {
        if (needs_rest && rest[id].empty())
            fail("MissingState", "subject " + id + " has no rest records for mode " + to_string(spec.mode));
        if (needs_exercise && exercise[id].empty())
            fail("MissingState", "subject " + id + " has no exercise records for mode " + to_string(spec.mode));
    }

    Rng rng(spec.seed);
    Partition out;

    auto split_train_val = [&](std::vector<ManifestEntry> recs,
                               std::vector<ManifestEntry>& train,
                               std::vector<ManifestEntry>& val) -> std::vector<ManifestEntry> {
        const int n = static_cast<int>(recs.size());
        int n_train = std::max(1, slice_count(spec.train_fraction, n));
        if (n >= 2 && n_train == n) n_train = n - 1;
        int n_val = std::min(slice_count(spec.val_fraction, n), n - n_train);
        for (int i = 0; i < n; ++i) {
            if (i < n_train)
                train.push_back(recs[static_cast<size_t>(i)]);
            else if (i < n_train + n_val)
                val.push_back(recs[static_cast<size_t>(i)]);
        }
        return {recs.begin() + n_train + n_val, recs.end()}; // remainder
    };

    for (const auto& id : subjects) {
        switch (spec.mode) {
            case Mode::Rest2Rest:
            case Mode::Exercise2Exercise: {
                auto& src = spec.mode == Mode::Rest2Rest ? rest[id] : exercise[id];
                std::vector<ManifestEntry> val_part;
                auto remainder = split_train_val(shuffled(src, rng), out.train, val_part);
                // no held-out remainder: validation records double as the test set
                auto& test_src = remainder.empty() ? val_part : remainder;
                out.test.insert(out.test.end(), test_src.begin(), test_src.end());
                out.val.insert(out.val.end(), val_part.begin(), val_part.end());
                break;
            }
            case Mode::Rest2Exercise:
            case Mode::Exercise2Rest: {
                auto& src = spec.mode == Mode::Rest2Exercise ? rest[id] : exercise[id];
                auto& dst = spec.mode == Mode::Rest2Exercise ? exercise[id] : rest[id];
                split_train_val(shuffled(src, rng), out.train, out.val);
                auto sorted_dst = dst;
                std::sort(sorted_dst.begin(), sorted_dst.end(),
                          [](const ManifestEntry& a, const ManifestEntry& b) { return a.path < b.path; });
                out.test.insert(out.test.end(), sorted_dst.begin(), sorted_dst.end());
                break;
            }
            case Mode::Mix2Mix: {
                for (auto* side : {&rest, &exercise}) {
                    auto recs = shuffled((*side)[id], rng);
                    const int n = static_cast<int>(recs.size());
                    if (n == 0) continue;
                    const int n_side = std::max(1, slice_count(0.5, n));
                    std::vector<ManifestEntry> train_side(recs.begin(), recs.begin() + n_side);
                    // within the training half, carve out validation
                    const double val_share =
                        spec.val_fraction / (spec.train_fraction + spec.val_fraction);
                    const int n_val = std::min(slice_count(val_share, n_side),
                                               n_side - 1 >= 0 ? n_side - 1 : 0);
                    for (int i = 0; i < n_side; ++i) {
                        if (i < n_side - n_val)
                            out.train.push_back(train_side[static_cast<size_t>(i)]);
                        else
                            out.val.push_back(train_side[static_cast<size_t>(i)]);
                    }
                    out.test.insert(out.test.end(), recs.begin() + n_side, recs.end());
                }
                break;
            }
        }
    }
    return out;
}

std::string split_digest(const Partition& p) {
    std::ostringstream os;
    for (const auto* group : {&p.train, &p.val, &p.test}) {
        for (const auto& e : *group) os << e.path << ";";
        os << "|";
    }
    return hex64(fnv1a(os.str()));
}

// ---- Augmentation --------------------------------------------------------------------

std::vector<Segment> augment_minority(const std::vector<Segment>& segments,
                                      int target_per_class, std::uint64_t seed) {
    if (segments.empty()) fail("EmptyClass", "no segments to augment");

    std::map<std::string, std::vector<size_t>> by_class;
    for (size_t i = 0; i < segments.size(); ++i) by_class[segments[i].subject_id].push_back(i);

    std::vector<Segment> out = segments;
    Rng rng(seed);
    for (auto& [id, idxs] : by_class) {
        const int have = static_cast<int>(idxs.size());
        for (int j = have; j < target_per_class; ++j) {
            const Segment& src = segments[idxs[static_cast<size_t>(
                uniform_int(rng, 0, have - 1))]];
            const int L = static_cast<int>(src.samples.size());
            const int max_shift = static_cast<int>(std::lround(0.05 * L));
            const int shift = static_cast<int>(uniform_int(rng, -max_shift, max_shift));
            const double scale = uniform(rng, 0.9, 1.1);

            Segment copy = src;
            std::vector<float> shifted(static_cast<size_t>(L), 0.0f);
            for (int i = 0; i < L; ++i) {
                const int from = i - shift;
                if (from >= 0 && from < L)
                    shifted[static_cast<size_t>(i)] =
                        static_cast<float>(scale * src.samples[static_cast<size_t>(from)]);
            }
            copy.samples = std::move(shifted);
            out.push_back(std::move(copy));
        }
    }
    return out;
}

// ---- Segment directories ----------------------------------------------------------------

void save_segments(const std::vector<Segment>& segments, const fs::path& dir) {
    fs::create_directories(dir);
    json j;
    j["schema_version"] = 1;
    j["kind"] = "segments";
    j["files"] = json::array();
    for (size_t i = 0; i < segments.size(); ++i) {
        char fname[64];
        std::snprintf(fname, sizeof(fname), "seg_%06zu.ecg", i);
        write_segment(segments[i], dir / fname);
        json e;
        e["path"] = fname;
        e["subject"] = segments[i].subject_id;
        e["state"] = to_string(segments[i].state);
        j["files"].push_back(e);
    }
    std::ofstream out(dir / "manifest.json");
    if (!out) fail("IoFailure", "cannot write segment manifest in " + dir.string());
    out << j.dump(2) << "\n";
}

std::vector<Segment> load_segments(const fs::path& dir) {
    const fs::path mpath = dir / "manifest.json";
    if (!fs::exists(mpath)) fail("MissingFile", "no segment manifest in " + dir.string());
    std::ifstream in(mpath);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        fail("MalformedHeader", mpath.string() + ": " + e.what());
    }
    if (j.value("kind", "") != "segments")
        fail("MalformedHeader", mpath.string() + ": not a segment manifest");
    std::vector<Segment> out;
    for (const auto& e : j.at("files"))
        out.push_back(read_segment(dir / e.at("path").get<std::string>()));
    return out;
}

} // namespace crossecg
