#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "crossecg/common.hpp"

namespace crossecg {

enum class State { Rest, Exercise };

std::string to_string(State s);
State state_from_string(const std::string& s);

// Raw single-lead signal. Samples are stored as float32 so the on-disk
// payload round-trips bit-exactly.
struct EcgRecord {
    std::string subject_id;
    State state = State::Rest;
    double fs_hz = 300.0;
    std::vector<float> samples;
    std::string lead = "II";

    double duration_s() const { return samples.size() / fs_hz; }
    void validate() const; // throws InvalidRecord
};

// Fixed-length R-centered window; the network's input unit.
// rr_s is the RR interval anchoring the window (0 = unknown), used by the
// quality gate.
struct Segment {
    std::vector<float> samples;
    std::string subject_id;
    State state = State::Rest;
    int r_index = 0;
    double fs_hz = 300.0;
    double rr_s = 0.0;
};

// Segment length and R position for a state at a given sampling rate:
// 6 s windows at rest, 4 s post-exercise, R at 25% of the window.
int segment_length(State state, double fs_hz);
int segment_r_index(int length);

struct WaveParams {
    double amplitude = 0.0;
    double width_s = 0.0;
    double offset_s = 0.0; // relative to the R peak
};

// Per-subject beat morphology for the synthetic generator: five Gaussian
// bumps (P,Q,R,S,T) plus a baseline heart rate.
struct SubjectParams {
    WaveParams p, q, r, s, t;
    double baseline_hr_bpm = 70.0;
    std::uint64_t morphology_seed = 0;

    static SubjectParams defaults();
    // Deterministic identity-specific jitter of the default morphology.
    static SubjectParams for_subject(std::uint64_t morphology_seed);

    void validate() const; // throws InvalidParams
};

} // namespace crossecg
