#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "crossecg/data_io.hpp"

using namespace crossecg;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
    const fs::path dir = fs::temp_directory_path() / ("crossecg_test_" + tag);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

EcgRecord sample_record(int n = 900) {
    EcgRecord r;
    r.subject_id = "s01";
    r.state = State::Rest;
    r.fs_hz = 300.0;
    r.lead = "II";
    Rng rng(5);
    for (int i = 0; i < n; ++i) r.samples.push_back(static_cast<float>(gaussian(rng, 0.0, 1.0)));
    return r;
}

} // namespace

TEST_CASE("record round trip is bit exact") {
    const auto dir = temp_dir("roundtrip");
    EcgRecord r = sample_record();
    write_record(r, dir / "a.ecg");
    EcgRecord back = read_record(dir / "a.ecg");
    CHECK(back.subject_id == r.subject_id);
    CHECK(back.state == r.state);
    CHECK(back.fs_hz == r.fs_hz);
    CHECK(back.lead == r.lead);
    REQUIRE(back.samples.size() == r.samples.size());
    for (size_t i = 0; i < r.samples.size(); ++i) CHECK(back.samples[i] == r.samples[i]);

    SUBCASE("two writes produce byte-identical files") {
        write_record(r, dir / "b.ecg");
        std::ifstream a(dir / "a.ecg", std::ios::binary), b(dir / "b.ecg", std::ios::binary);
        std::string sa((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
        std::string sb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
        CHECK(sa == sb);
    }

    SUBCASE("file size is header plus 4 bytes per sample") {
        EcgRecord r2 = sample_record(1800);
        write_record(r2, dir / "c.ecg");
        std::ifstream in(dir / "c.ecg", std::ios::binary);
        std::string all((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        const size_t header_len = all.find('\n') + 1;
        CHECK(all.size() - header_len == 1800 * 4);
    }
}

TEST_CASE("record io error paths") {
    const auto dir = temp_dir("ioerr");

    SUBCASE("missing file") {
        try {
            read_record(dir / "nope.ecg");
            CHECK(false);
        } catch (const Error& e) {
            CHECK(e.code() == "MissingFile");
        }
    }

    SUBCASE("malformed header") {
        std::ofstream out(dir / "bad.ecg", std::ios::binary);
        out << "this is not json\n";
        out.close();
        try {
            read_record(dir / "bad.ecg");
            CHECK(false);
        } catch (const Error& e) {
            CHECK(e.code() == "MalformedHeader");
        }
    }

    SUBCASE("declared length longer than payload") {
        EcgRecord r = sample_record(100);
        write_record(r, dir / "short.ecg");
        // truncate the payload by 12 bytes
        fs::resize_file(dir / "short.ecg", fs::file_size(dir / "short.ecg") - 12);
        try {
            read_record(dir / "short.ecg");
            CHECK(false);
        } catch (const Error& e) {
            CHECK(e.code() == "LengthMismatch");
        }
    }

    SUBCASE("trailing bytes after the payload") {
        EcgRecord r = sample_record(100);
        write_record(r, dir / "long.ecg");
        std::ofstream out(dir / "long.ecg", std::ios::binary | std::ios::app);
        out << "XX";
        out.close();
        try {
            read_record(dir / "long.ecg");
            CHECK(false);
        } catch (const Error& e) {
            CHECK(e.code() == "LengthMismatch");
        }
    }

    SUBCASE("empty samples are rejected on write") {
        EcgRecord r;
        r.subject_id = "s01";
        r.fs_hz = 300.0;
        try {
            write_record(r, dir / "empty.ecg");
            CHECK(false);
        } catch (const Error& e) {
            CHECK(e.code() == "InvalidRecord");
        }
    }

    SUBCASE("missing destination directory") {
        EcgRecord r = sample_record(10);
        try {
            write_record(r, dir / "sub" / "x.ecg");
            CHECK(false);
        } catch (const Error& e) {
            CHECK(e.code() == "IoFailure");
        }
    }
}

TEST_CASE("segment files carry r_index and round trip") {
    const auto dir = temp_dir("seg");
    Segment s;
    s.subject_id = "s02";
    s.state = State::Exercise;
    s.fs_hz = 300.0;
    s.r_index = 300;
    s.rr_s = 0.5;
    for (int i = 0; i < 1200; ++i) s.samples.push_back(static_cast<float>(i) * 0.001f);
    write_segment(s, dir / "s.ecg");
    Segment back = read_segment(dir / "s.ecg");
    CHECK(back.r_index == 300);
    CHECK(back.rr_s == doctest::Approx(0.5));
    CHECK(back.state == State::Exercise);
    CHECK(back.samples == s.samples);

    SUBCASE("a record file is rejected as a segment") {
        write_record(sample_record(50), dir / "rec.ecg");
        CHECK_THROWS_AS(read_segment(dir / "rec.ecg"), Error);
    }
}

TEST_CASE("synth_ecg produces a plausible, deterministic signal") {
    SubjectParams params = SubjectParams::defaults();

    SUBCASE("rest beat count stays inside the 60-80 bpm band over 60 s") {
        const auto res = synth_ecg(params, State::Rest, 60.0, 0.0, 1);
        CHECK(res.true_r_peaks.size() >= 60);
        CHECK(res.true_r_peaks.size() <= 80);
    }

    SUBCASE("noise-free R peaks coincide with per-beat argmax within 1 sample") {
        const auto res = synth_ecg(params, State::Rest, 30.0, 0.0, 2);
        const auto& x = res.record.samples;
        const auto& peaks = res.true_r_peaks;
        for (size_t i = 0; i < peaks.size(); ++i) {
            const int lo = i == 0 ? std::max(0, peaks[0] - 60) : (peaks[i - 1] + peaks[i]) / 2;
            const int hi = i + 1 == peaks.size() ? std::min<int>(x.size() - 1, peaks[i] + 60)
                                                 : (peaks[i] + peaks[i + 1]) / 2;
            int best = lo;
            for (int j = lo; j <= hi; ++j)
                if (x[static_cast<size_t>(j)] > x[static_cast<size_t>(best)]) best = j;
            CHECK(std::abs(best - peaks[i]) <= 1);
        }
    }

    SUBCASE("same seed twice gives identical samples") {
        const auto a = synth_ecg(params, State::Exercise, 20.0, 0.05, 7);
        const auto b = synth_ecg(params, State::Exercise, 20.0, 0.05, 7);
        CHECK(a.record.samples == b.record.samples);
        CHECK(a.true_r_peaks == b.true_r_peaks);
    }

    SUBCASE("peak list is strictly increasing with state-dependent minimum gaps") {
        for (State st : {State::Rest, State::Exercise}) {
            const auto res = synth_ecg(params, st, 40.0, 0.02, 3);
            const double min_rr = st == State::Rest ? 60.0 / 80.0 : 60.0 / 150.0;
            for (size_t i = 1; i < res.true_r_peaks.size(); ++i) {
                const int gap = res.true_r_peaks[i] - res.true_r_peaks[i - 1];
                CHECK(gap > 0);
                CHECK(gap >= static_cast<int>(min_rr * res.record.fs_hz) - 1);
            }
        }
    }

    SUBCASE("exercise beats run faster than rest beats") {
        const auto rest = synth_ecg(params, State::Rest, 60.0, 0.0, 4);
        const auto ex = synth_ecg(params, State::Exercise, 60.0, 0.0, 4);
        CHECK(ex.true_r_peaks.size() > rest.true_r_peaks.size() * 1.2);
    }

    SUBCASE("invalid parameters are rejected") {
        SubjectParams bad = params;
        bad.q.width_s = -0.01;
        CHECK_THROWS_AS(synth_ecg(bad, State::Rest, 10.0, 0.0, 1), Error);
    }
}

TEST_CASE("synth_dataset writes a resolvable manifest") {
    const auto dir = temp_dir("dataset");
    SynthDatasetOptions opt;
    opt.n_subjects = 3;
    opt.rest_sec = 30.0;
    opt.exercise_sec = 20.0;
    opt.record_sec = 10.0;
    opt.seed = 9;
    const DatasetManifest m = synth_dataset(opt, dir);
    CHECK(m.records.size() == 3 * (3 + 2));
    const DatasetManifest back = read_manifest(dir / "manifest.json");
    CHECK(back.records.size() == m.records.size());
    CHECK(back.subjects() == std::vector<std::string>{"s01", "s02", "s03"});
}

TEST_CASE("partition modes") {
    // synthetic manifest with 10 rest and 4 exercise records per subject
    DatasetManifest m;
    for (int s = 0; s < 4; ++s) {
        for (int i = 0; i < 10; ++i)
            m.records.push_back({"s" + std::to_string(s) + "_r" + std::to_string(i),
                                 "s" + std::to_string(s), State::Rest, 20.0});
        for (int i = 0; i < 4; ++i)
            m.records.push_back({"s" + std::to_string(s) + "_e" + std::to_string(i),
                                 "s" + std::to_string(s), State::Exercise, 20.0});
    }

    auto subjects_of = [](const std::vector<ManifestEntry>& v) {
        std::set<std::string> s;
        for (const auto& e : v) s.insert(e.subject_id);
        return s;
    };
    auto paths_of = [](const std::vector<ManifestEntry>& v) {
        std::set<std::string> s;
        for (const auto& e : v) s.insert(e.path);
        return s;
    };

    SUBCASE("rest2rest splits 8/2 per subject and reuses val as test") {
        SplitSpec spec{0.8, 0.2, 42, Mode::Rest2Rest};
        const Partition p = partition(m, spec);
        CHECK(p.train.size() == 4 * 8);
        CHECK(p.val.size() == 4 * 2);
        CHECK(p.test.size() == 4 * 2);
        for (const auto& e : p.train) CHECK(e.state == State::Rest);
        // train and test never share records
        for (const auto& path : paths_of(p.test)) CHECK(paths_of(p.train).count(path) == 0);
    }

    SUBCASE("rest2exercise trains on rest and tests on every exercise record") {
        SplitSpec spec{0.8, 0.2, 42, Mode::Rest2Exercise};
        const Partition p = partition(m, spec);
        CHECK(p.test.size() == 4 * 4);
        for (const auto& e : p.test) CHECK(e.state == State::Exercise);
        for (const auto& e : p.train) CHECK(e.state == State::Rest);
        CHECK(subjects_of(p.train) == subjects_of(p.test)); // closed set
    }

    SUBCASE("mix2mix trains on half of each state") {
        SplitSpec spec{0.8, 0.2, 42, Mode::Mix2Mix};
        const Partition p = partition(m, spec);
        int train_rest = 0, train_ex = 0;
        for (const auto& e : p.train) (e.state == State::Rest ? train_rest : train_ex) += 1;
        for (const auto& e : p.val) (e.state == State::Rest ? train_rest : train_ex) += 1;
        CHECK(train_rest == 4 * 5);
        CHECK(train_ex == 4 * 2);
        std::set<State> test_states;
        for (const auto& e : p.test) test_states.insert(e.state);
        CHECK(test_states.size() == 2);
        for (const auto& path : paths_of(p.test)) CHECK(paths_of(p.train).count(path) == 0);
    }

    SUBCASE("partition is deterministic and seed-sensitive") {
        SplitSpec spec{0.8, 0.2, 42, Mode::Rest2Rest};
        const std::string d1 = split_digest(partition(m, spec));
        const std::string d2 = split_digest(partition(m, spec));
        CHECK(d1 == d2);
        spec.seed = 43;
        CHECK(split_digest(partition(m, spec)) != d1);
    }

    SUBCASE("a subject without exercise records fails cross-state modes") {
        DatasetManifest broken = m;
        broken.records.push_back({"s9_r0", "s9", State::Rest, 20.0});
        try {
            partition(broken, {0.8, 0.2, 42, Mode::Rest2Exercise});
            CHECK(false);
        } catch (const Error& e) {
            CHECK(e.code() == "MissingState");
        }
    }
}

TEST_CASE("augment_minority") {
    Rng rng(11);
    std::vector<Segment> pool;
    auto make_seg = [&](const std::string& id) {
        Segment s;
        s.subject_id = id;
        s.state = State::Rest;
        s.fs_hz = 300.0;
        s.r_index = 100;
        s.samples.assign(400, 0.0f);
        // a distinctive bump for the cross-correlation oracle
        for (int i = 180; i < 220; ++i)
            s.samples[static_cast<size_t>(i)] =
                static_cast<float>(std::exp(-0.01 * (i - 200) * (i - 200)));
        for (auto& v : s.samples) v += static_cast<float>(gaussian(rng, 0.0, 0.01));
        return s;
    };
    for (int i = 0; i < 3; ++i) pool.push_back(make_seg("a"));
    for (int i = 0; i < 6; ++i) pool.push_back(make_seg("b"));

    SUBCASE("counts reach the target and originals are untouched") {
        const auto out = augment_minority(pool, 6, 1);
        int a = 0, b = 0;
        for (const auto& s : out) (s.subject_id == "a" ? a : b) += 1;
        CHECK(a == 6);
        CHECK(b == 6);
        for (size_t i = 0; i < pool.size(); ++i) CHECK(out[i].samples == pool[i].samples);
    }

    SUBCASE("class already at target is unchanged") {
        const auto out = augment_minority(pool, 3, 1);
        CHECK(out.size() == pool.size());
    }

    SUBCASE("augmented copies correlate with an original at the applied lag") {
        const auto out = augment_minority(pool, 5, 3);
        REQUIRE(out.size() == pool.size() + 2);
        for (size_t k = pool.size(); k < out.size(); ++k) {
            const auto& aug = out[k].samples;
            // find the best original and lag by cross-correlation
            double best = -1.0;
            int best_lag = 0;
            for (const auto& orig : pool) {
                if (orig.subject_id != out[k].subject_id) continue;
                for (int lag = -25; lag <= 25; ++lag) {
                    double c = 0.0;
                    for (size_t i = 0; i < aug.size(); ++i) {
                        const int j = static_cast<int>(i) - lag;
                        if (j >= 0 && j < static_cast<int>(orig.samples.size()))
                            c += aug[i] * orig.samples[static_cast<size_t>(j)];
                    }
                    if (c > best) {
                        best = c;
                        best_lag = lag;
                    }
                }
            }
            CHECK(std::abs(best_lag) <= 20); // 5% of 400
            CHECK(best > 0.0);
        }
    }

    SUBCASE("empty input raises EmptyClass") {
        try {
            augment_minority({}, 5, 1);
            CHECK(false);
        } catch (const Error& e) {
            CHECK(e.code() == "EmptyClass");
        }
    }
}

TEST_CASE("segment directory save and load") {
    const auto dir = temp_dir("segdir");
    std::vector<Segment> segs;
    for (int i = 0; i < 5; ++i) {
        Segment s;
        s.subject_id = i % 2 ? "a" : "b";
        s.state = i % 2 ? State::Exercise : State::Rest;
        s.fs_hz = 100.0;
        s.r_index = 150;
        s.rr_s = 0.8;
        s.samples.assign(600, static_cast<float>(i));
        segs.push_back(std::move(s));
    }
    save_segments(segs, dir);
    const auto back = load_segments(dir);
    REQUIRE(back.size() == segs.size());
    for (size_t i = 0; i < segs.size(); ++i) {
        CHECK(back[i].subject_id == segs[i].subject_id);
        CHECK(back[i].samples == segs[i].samples);
        CHECK(back[i].r_index == segs[i].r_index);
    }
}
