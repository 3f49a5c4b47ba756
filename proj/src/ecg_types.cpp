#include "crossecg/ecg_types.hpp"

#include <cmath>

namespace crossecg {

std::string to_string(State s) {
    return s == State::Rest ? "rest" : "exercise";
}

State state_from_string(const std::string& s) {
    if (s == "rest") return State::Rest;
    if (s == "exercise") return State::Exercise;
    fail("MalformedHeader", "unknown state: " + s);
}

void EcgRecord::validate() const {
    if (fs_hz <= 0.0) fail("InvalidRecord", "fs_hz must be positive");
    if (samples.empty()) fail("InvalidRecord", "samples must be non-empty");
    if (subject_id.empty()) fail("InvalidRecord", "subject_id must be non-empty");
}

int segment_length(State state, double fs_hz) {
    const double dur = state == State::Rest ? 6.0 : 4.0;
    return static_cast<int>(std::lround(dur * fs_hz));
}

int segment_r_index(int length) {
    return static_cast<int>(std::lround(0.25 * length));
}

SubjectParams SubjectParams::defaults() {
    SubjectParams sp;
    sp.p = {0.15, 0.025, -0.200};
    sp.q = {-0.10, 0.010, -0.028};
    sp.r = {1.00, 0.012, 0.000};
    sp.s = {-0.18, 0.011, 0.030};
    sp.t = {0.35, 0.060, 0.260};
    sp.baseline_hr_bpm = 70.0;
    sp.morphology_seed = 0;
    return sp;
}

SubjectParams SubjectParams::for_subject(std::uint64_t morphology_seed) {
    SubjectParams sp = defaults();
    Rng rng(morphology_seed * 0x9e3779b97f4a7c15ull + 0x5851f42d4c957f2dull);
    auto jitter = [&](WaveParams& w, double amp_lo, double amp_hi) {
        w.amplitude *= uniform(rng, amp_lo, amp_hi);
        w.width_s *= uniform(rng, 0.80, 1.25);
        w.offset_s *= uniform(rng, 0.85, 1.15);
    };
    jitter(sp.p, 0.70, 1.30);
    jitter(sp.q, 0.75, 1.25);
    jitter(sp.r, 0.85, 1.20);
    jitter(sp.s, 0.75, 1.25);
    jitter(sp.t, 0.75, 1.25);
    sp.baseline_hr_bpm = uniform(rng, 63.0, 77.0);
    sp.morphology_seed = morphology_seed;
    return sp;
}

void SubjectParams::validate() const {
    for (const WaveParams* w : {&p, &q, &r, &s, &t})
        if (w->width_s <= 0.0) fail("InvalidParams", "wave widths must be positive");
    if (r.amplitude <= std::abs(q.amplitude) || r.amplitude <= std::abs(s.amplitude))
        fail("InvalidParams", "R amplitude must dominate Q and S");
    if (baseline_hr_bpm <= 0.0) fail("InvalidParams", "baseline heart rate must be positive");
}

} // namespace crossecg
