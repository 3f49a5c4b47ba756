#pragma once

#include <string>
#include <utility>
#include <vector>

#include "crossecg/ecg_types.hpp"

namespace crossecg {

enum class FilterKind { Bandpass, Highpass };

// Direct-form IIR coefficients, a[0] = 1, all poles inside the unit circle.
struct IirFilter {
    std::vector<double> b;
    std::vector<double> a;
};

// Analog Butterworth prototype -> band transform -> bilinear transform with
// frequency pre-warping. Bandpass takes two ascending cutoffs, highpass one.
IirFilter design_butterworth(int order, FilterKind kind,
                             const std::vector<double>& cutoffs_hz, double fs_hz);

// Zero initial conditions; output length equals input length.
std::vector<double> filter_forward(const IirFilter& f, const std::vector<double>& x);

// (x - mean) / population std. Throws DegenerateSignal on (near-)constant input.
std::vector<double> zscore(const std::vector<double>& x);

// QRS detection on a bandpass-filtered signal: derivative, squaring, 150 ms
// moving-window integration, adaptive dual thresholds with a 200 ms refractory
// period and search-back at half threshold. Each detection is refined to the
// local signal maximum within +-50 ms. Output is strictly increasing with
// gaps >= round(0.2*fs).
std::vector<int> detect_r_peaks(const std::vector<double>& x, double fs_hz);

// R-centered windows of round(6*fs) (rest) / round(4*fs) (exercise) samples
// with the R peak at 25% of the window. Windows crossing a record boundary
// are dropped and counted in *boundary_dropped.
std::vector<Segment> segment_around_peaks(const std::vector<double>& x,
                                          const std::vector<int>& peaks, State state,
                                          double fs_hz, const std::string& subject,
                                          int* boundary_dropped = nullptr);

struct QualityConfig {
    int clip_run = 5;             // consecutive samples at the segment extremum
    double min_band_ratio = 0.05; // QRS-band (5-15 Hz) power / total power
    double min_bpm = 40.0;        // anchoring RR limits
    double max_bpm = 220.0;
};

struct QualityReport {
    int n_input = 0;
    int n_passed = 0;
    int clipped = 0;
    int low_snr = 0;
    int bad_rr = 0;
    int boundary_truncated = 0;

    int total_rejected() const { return clipped + low_snr + bad_rr + boundary_truncated; }
};

std::pair<std::vector<Segment>, QualityReport>
quality_gate(const std::vector<Segment>& segments, const QualityConfig& cfg = {});

// bandpass -> highpass -> zscore -> detect_r_peaks -> segment_around_peaks ->
// quality_gate. The report's n_input counts detected peaks.
std::pair<std::vector<Segment>, QualityReport>
preprocess_record(const EcgRecord& record, const QualityConfig& cfg = {});

} // namespace crossecg
