#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>

#include "crossecg/data_io.hpp"
#include "crossecg/preprocess.hpp"

using namespace crossecg;

namespace {

// Steady-state amplitude ratio of a sinusoid through the filter; the first
// two seconds are discarded as startup transient.
double measured_gain(const IirFilter& f, double freq_hz, double fs_hz, double seconds = 30.0) {
    const int n = static_cast<int>(seconds * fs_hz);
    std::vector<double> x(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) x[static_cast<size_t>(i)] = std::sin(2.0 * std::numbers::pi * freq_hz * i / fs_hz);
    const auto y = filter_forward(f, x);
    double peak = 0.0;
    for (int i = static_cast<int>(2.0 * fs_hz); i < n; ++i)
        peak = std::max(peak, std::abs(y[static_cast<size_t>(i)]));
    return peak;
}

// Sensitivity / false-detection counts against ground truth at +-50 ms.
struct MatchStats {
    int matched = 0;
    int missed = 0;
    int false_pos = 0;
};

MatchStats match_peaks(const std::vector<int>& truth, const std::vector<int>& detected,
                       double fs_hz) {
    const int tol = static_cast<int>(std::lround(0.05 * fs_hz));
    MatchStats st;
    std::vector<bool> used(detected.size(), false);
    for (int t : truth) {
        bool hit = false;
        for (size_t i = 0; i < detected.size(); ++i) {
            if (!used[i] && std::abs(detected[i] - t) <= tol) {
                used[i] = true;
                hit = true;
                break;
            }
        }
        (hit ? st.matched : st.missed) += 1;
    }
    st.false_pos = static_cast<int>(detected.size()) - st.matched;
    return st;
}

std::vector<double> to_double(const std::vector<float>& v) {
    return {v.begin(), v.end()};
}

} // namespace

TEST_CASE("butterworth design matches the reference coefficients") {
    // reference values computed offline with an independent filter-design tool
    const IirFilter bp = design_butterworth(4, FilterKind::Bandpass, {0.5, 40.0}, 300.0);
    const std::vector<double> want_b{
        0.012121844325570758, 0.0, -0.04848737730228303, 0.0, 0.07273106595342455,
        0.0, -0.04848737730228303, 0.0, 0.012121844325570758};
    const std::vector<double> want_a{
        1.0, -5.834728119157425, 14.927521695976983, -22.00486480851845, 20.55124580510077,
        -12.485490911942552, 4.814188586582579, -1.0745963440670048, 0.10672409847061541};
    REQUIRE(bp.b.size() == want_b.size());
    REQUIRE(bp.a.size() == want_a.size());
    for (size_t i = 0; i < want_b.size(); ++i) CHECK(std::abs(bp.b[i] - want_b[i]) < 1e-8);
    for (size_t i = 0; i < want_a.size(); ++i) CHECK(std::abs(bp.a[i] - want_a[i]) < 1e-8);

    const IirFilter hp = design_butterworth(1, FilterKind::Highpass, {0.5}, 300.0);
    CHECK(std::abs(hp.b[0] - 0.9947912376593769) < 1e-8);
    CHECK(std::abs(hp.b[1] + 0.9947912376593769) < 1e-8);
    CHECK(std::abs(hp.a[1] + 0.989582475318754) < 1e-8);
}

TEST_CASE("bandpass frequency response") {
    const IirFilter bp = design_butterworth(4, FilterKind::Bandpass, {0.5, 40.0}, 300.0);
    CHECK(measured_gain(bp, 10.0, 300.0) == doctest::Approx(1.0).epsilon(0.05));
    CHECK(measured_gain(bp, 0.05, 300.0, 120.0) <= 0.1);
    CHECK(measured_gain(bp, 120.0, 300.0) <= 0.1);
}

TEST_CASE("butterworth design rejects bad cutoffs") {
    CHECK_THROWS_AS(design_butterworth(4, FilterKind::Bandpass, {40.0, 0.5}, 300.0), Error);
    CHECK_THROWS_AS(design_butterworth(4, FilterKind::Bandpass, {0.5, 200.0}, 300.0), Error);
    CHECK_THROWS_AS(design_butterworth(1, FilterKind::Highpass, {0.0}, 300.0), Error);
    CHECK_THROWS_AS(design_butterworth(0, FilterKind::Highpass, {0.5}, 300.0), Error);
}

TEST_CASE("filter_forward basics") {
    const IirFilter bp = design_butterworth(4, FilterKind::Bandpass, {0.5, 40.0}, 300.0);

    SUBCASE("zero in, zero out") {
        const auto y = filter_forward(bp, std::vector<double>(100, 0.0));
        for (double v : y) CHECK(v == 0.0);
    }

    SUBCASE("linearity: filter(a x) = a filter(x)") {
        Rng rng(3);
        std::vector<double> x(300);
        for (double& v : x) v = gaussian(rng, 0.0, 1.0);
        std::vector<double> x3 = x;
        for (double& v : x3) v *= 3.0;
        const auto y = filter_forward(bp, x);
        const auto y3 = filter_forward(bp, x3);
        for (size_t i = 0; i < y.size(); ++i) CHECK(std::abs(y3[i] - 3.0 * y[i]) < 1e-10);
    }

    SUBCASE("time invariance on interior samples") {
        Rng rng(4);
        const int n = 900, k = 37;
        std::vector<double> x(n, 0.0);
        for (int i = 0; i < 600; ++i) x[static_cast<size_t>(i)] = gaussian(rng, 0.0, 1.0);
        std::vector<double> xs(n, 0.0);
        for (int i = 0; i < 600; ++i) xs[static_cast<size_t>(i + k)] = x[static_cast<size_t>(i)];
        const auto y = filter_forward(bp, x);
        const auto ys = filter_forward(bp, xs);
        // compare once both runs are past the startup transient
        for (int i = 400; i < 600; ++i)
            CHECK(std::abs(ys[static_cast<size_t>(i + k)] - y[static_cast<size_t>(i)]) < 1e-9);
    }

    SUBCASE("impulse response decays for the stable design") {
        std::vector<double> x(3000, 0.0);
        x[0] = 1.0;
        const auto y = filter_forward(bp, x);
        double tail = 0.0;
        for (size_t i = 2700; i < y.size(); ++i) tail = std::max(tail, std::abs(y[i]));
        CHECK(tail < 1e-6);
    }

    SUBCASE("output length equals input length") {
        CHECK(filter_forward(bp, std::vector<double>(123, 1.0)).size() == 123);
    }
}

TEST_CASE("zscore") {
    SUBCASE("analytic three-point case") {
        const auto out = zscore({1.0, 2.0, 3.0});
        CHECK(out[0] == doctest::Approx(-1.224744871).epsilon(1e-6));
        CHECK(out[1] == doctest::Approx(0.0).epsilon(1e-9));
        CHECK(out[2] == doctest::Approx(1.224744871).epsilon(1e-6));
    }
    SUBCASE("constant input raises DegenerateSignal") {
        try {
            zscore(std::vector<double>(50, 2.5));
            CHECK(false);
        } catch (const Error& e) {
            CHECK(e.code() == "DegenerateSignal");
        }
    }
    SUBCASE("output statistics on random input") {
        Rng rng(6);
        std::vector<double> x(701);
        for (double& v : x) v = gaussian(rng, 4.0, 3.0);
        const auto out = zscore(x);
        double mean = 0.0;
        for (double v : out) mean += v;
        mean /= out.size();
        double var = 0.0;
        for (double v : out) var += (v - mean) * (v - mean);
        var /= out.size();
        CHECK(std::abs(mean) < 1e-9);
        CHECK(std::abs(std::sqrt(var) - 1.0) < 1e-9);
    }
}

TEST_CASE("r-peak detection meets the sensitivity bar on noisy synthetic ECG") {
    const IirFilter bp = design_butterworth(4, FilterKind::Bandpass, {0.5, 40.0}, 300.0);
    SubjectParams params = SubjectParams::defaults();

    for (const auto& [state, bpm_tag] : {std::pair{State::Rest, 70}, {State::Exercise, 150}}) {
        SubjectParams p = params;
        if (bpm_tag == 150) p.baseline_hr_bpm = 100.0; // pushes the exercise draw to ~145 bpm
        const auto synth = synth_ecg(p, state, 60.0, 0.05, 12345);
        const auto filtered = filter_forward(bp, to_double(synth.record.samples));
        const auto detected = detect_r_peaks(filtered, 300.0);
        const auto st = match_peaks(synth.true_r_peaks, detected, 300.0);
        const double sensitivity = static_cast<double>(st.matched) / synth.true_r_peaks.size();
        const double false_rate = detected.empty() ? 0.0
                                                   : static_cast<double>(st.false_pos) / detected.size();
        CHECK_MESSAGE(sensitivity >= 0.99, "state ", bpm_tag, ": matched ", st.matched, "/",
                      synth.true_r_peaks.size());
        CHECK_MESSAGE(false_rate <= 0.01, "state ", bpm_tag, ": false ", st.false_pos, "/",
                      detected.size());
    }
}

TEST_CASE("r-peak detection edge behavior") {
    SUBCASE("flat signal yields no peaks") {
        CHECK(detect_r_peaks(std::vector<double>(3000, 0.0), 300.0).empty());
    }

    SUBCASE("refractory spacing holds at 150 bpm") {
        SubjectParams p = SubjectParams::defaults();
        p.baseline_hr_bpm = 100.0;
        const auto synth = synth_ecg(p, State::Exercise, 40.0, 0.05, 5);
        const IirFilter bp = design_butterworth(4, FilterKind::Bandpass, {0.5, 40.0}, 300.0);
        const auto detected = detect_r_peaks(filter_forward(bp, to_double(synth.record.samples)), 300.0);
        REQUIRE(detected.size() > 10);
        const int refractory = static_cast<int>(std::lround(0.2 * 300.0));
        for (size_t i = 1; i < detected.size(); ++i)
            CHECK(detected[i] - detected[i - 1] >= refractory);
    }
}

TEST_CASE("segmentation contract") {
    std::vector<double> x(20000, 0.0);

    SUBCASE("rest window is [p-450, p+1350) at 300 Hz") {
        const auto segs = segment_around_peaks(x, {10000}, State::Rest, 300.0, "s01");
        REQUIRE(segs.size() == 1);
        CHECK(segs[0].samples.size() == 1800);
        CHECK(segs[0].r_index == 450);
    }

    SUBCASE("exercise window is 1200 samples with r at 300") {
        const auto segs = segment_around_peaks(x, {10000}, State::Exercise, 300.0, "s01");
        REQUIRE(segs.size() == 1);
        CHECK(segs[0].samples.size() == 1200);
        CHECK(segs[0].r_index == 300);
    }

    SUBCASE("peaks too close to either boundary are dropped and counted") {
        int dropped = 0;
        const auto segs =
            segment_around_peaks(x, {100, 10000, 19900}, State::Rest, 300.0, "s01", &dropped);
        CHECK(segs.size() == 1);
        CHECK(dropped == 2);
    }

    SUBCASE("lengths scale with sampling rate") {
        const auto segs = segment_around_peaks(x, {10000}, State::Rest, 100.0, "s01");
        REQUIRE(segs.size() == 1);
        CHECK(segs[0].samples.size() == 600);
        CHECK(segs[0].r_index == 150);
    }

    SUBCASE("rr interval of the anchoring peak is recorded") {
        const auto segs = segment_around_peaks(x, {9000, 9300, 9900}, State::Rest, 300.0, "s01");
        REQUIRE(segs.size() == 3);
        CHECK(segs[0].rr_s == doctest::Approx(1.0)); // first takes the next gap
        CHECK(segs[1].rr_s == doctest::Approx(1.0));
        CHECK(segs[2].rr_s == doctest::Approx(2.0));
    }
}

TEST_CASE("quality gate") {
    auto clean_segment = [] {
        // one synthetic beat-like bump train inside the window
        Segment s;
        s.subject_id = "s01";
        s.state = State::Rest;
        s.fs_hz = 300.0;
        s.r_index = 450;
        s.rr_s = 0.85;
        s.samples.assign(1800, 0.0f);
        for (int beat = 0; beat < 7; ++beat) {
            const int c = 150 + beat * 255;
            for (int i = -20; i <= 20; ++i)
                if (c + i >= 0 && c + i < 1800)
                    s.samples[static_cast<size_t>(c + i)] +=
                        static_cast<float>(std::exp(-i * i / (2.0 * 3.6 * 3.6)));
        }
        return s;
    };

    SUBCASE("clean synthetic segment passes") {
        const auto [passed, rep] = quality_gate({clean_segment()});
        CHECK(passed.size() == 1);
        CHECK(rep.n_passed == 1);
    }

    SUBCASE("saturated run is flagged Clipped") {
        Segment s = clean_segment();
        for (int i = 700; i < 710; ++i) s.samples[static_cast<size_t>(i)] = 5.0f;
        const auto [passed, rep] = quality_gate({s});
        CHECK(passed.empty());
        CHECK(rep.clipped == 1);
    }

    SUBCASE("all-equal segment is Clipped") {
        Segment s = clean_segment();
        std::fill(s.samples.begin(), s.samples.end(), 1.0f);
        const auto [passed, rep] = quality_gate({s});
        CHECK(rep.clipped == 1);
    }

    SUBCASE("pure low-frequency content is LowSnr") {
        Segment s = clean_segment();
        for (int i = 0; i < 1800; ++i)
            s.samples[static_cast<size_t>(i)] =
                static_cast<float>(std::sin(2.0 * std::numbers::pi * 1.0 * i / 300.0));
        const auto [passed, rep] = quality_gate({s});
        CHECK(rep.low_snr == 1);
    }

    SUBCASE("anchoring RR outside 40-220 bpm is BadRr") {
        Segment s = clean_segment();
        s.rr_s = 2.0; // 30 bpm
        const auto [passed, rep] = quality_gate({s});
        CHECK(rep.bad_rr == 1);
    }

    SUBCASE("accounting identity holds on random mixtures") {
        Rng rng(8);
        std::vector<Segment> segs;
        for (int i = 0; i < 40; ++i) {
            Segment s = clean_segment();
            const int kind = static_cast<int>(uniform_int(rng, 0, 3));
            if (kind == 1)
                std::fill(s.samples.begin() + 100, s.samples.begin() + 120,
                          *std::max_element(s.samples.begin(), s.samples.end()) + 1.0f);
            if (kind == 2) s.rr_s = 3.0;
            if (kind == 3)
                for (auto& v : s.samples) v = static_cast<float>(gaussian(rng, 0.0, 1e-4));
            segs.push_back(std::move(s));
        }
        const auto [passed, rep] = quality_gate(segs);
        CHECK(rep.n_input == 40);
        CHECK(rep.n_passed + rep.clipped + rep.low_snr + rep.bad_rr + rep.boundary_truncated ==
              rep.n_input);
        CHECK(static_cast<int>(passed.size()) == rep.n_passed);
    }
}

TEST_CASE("preprocess_record end to end") {
    SubjectParams params = SubjectParams::defaults();

    SUBCASE("60 s rest record yields about beat-count minus boundary segments") {
        auto synth = synth_ecg(params, State::Rest, 60.0, 0.05, 77);
        synth.record.subject_id = "s01";
        const auto [segs, rep] = preprocess_record(synth.record);
        // 6 s windows with R at 25%: usable anchors span ~54 s of the record
        const int n_beats = static_cast<int>(synth.true_r_peaks.size());
        CHECK(rep.n_input >= n_beats - 1);
        CHECK(static_cast<int>(segs.size()) >= n_beats - 10);
        for (const auto& s : segs) {
            CHECK(s.samples.size() == 1800);
            CHECK(s.r_index == 450);
            CHECK(s.subject_id == "s01");
        }
        CHECK(rep.n_passed + rep.clipped + rep.low_snr + rep.bad_rr + rep.boundary_truncated ==
              rep.n_input);
    }

    SUBCASE("record shorter than one window yields zero segments") {
        auto synth = synth_ecg(params, State::Rest, 3.0, 0.05, 78);
        synth.record.subject_id = "s01";
        const auto [segs, rep] = preprocess_record(synth.record);
        CHECK(segs.empty());
        CHECK(rep.boundary_truncated == rep.n_input);
    }

    SUBCASE("pipeline is deterministic") {
        auto synth = synth_ecg(params, State::Exercise, 30.0, 0.05, 79);
        synth.record.subject_id = "s02";
        const auto [a, ra] = preprocess_record(synth.record);
        const auto [b, rb] = preprocess_record(synth.record);
        REQUIRE(a.size() == b.size());
        for (size_t i = 0; i < a.size(); ++i) CHECK(a[i].samples == b[i].samples);
    }
}
