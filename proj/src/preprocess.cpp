#include "crossecg/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <numeric>

namespace crossecg {

namespace {

using cplx = std::complex<double>;
constexpr double kPi = std::numbers::pi;

std::vector<cplx> poly_from_roots(const std::vector<cplx>& roots) {
    std::vector<cplx> poly{1.0};
    for (const cplx& r : roots) {
        std::vector<cplx> next(poly.size() + 1, 0.0);
        for (size_t i = 0; i < poly.size(); ++i) {
            next[i] += poly[i];
            next[i + 1] -= poly[i] * r;
        }
        poly = std::move(next);
    }
    return poly;
}

} // namespace

IirFilter design_butterworth(int order, FilterKind kind,
                             const std::vector<double>& cutoffs_hz, double fs_hz) {
    if (order < 1) fail("InvalidCutoff", "filter order must be >= 1");
    if (fs_hz <= 0.0) fail("InvalidCutoff", "sampling rate must be positive");
    const size_t want = kind == FilterKind::Bandpass ? 2 : 1;
    if (cutoffs_hz.size() != want)
        fail("InvalidCutoff", "expected " + std::to_string(want) + " cutoff(s)");
    for (double f : cutoffs_hz)
        if (f <= 0.0 || f >= fs_hz / 2.0)
            fail("InvalidCutoff", "cutoffs must lie in (0, fs/2)");
    if (want == 2 && cutoffs_hz[0] >= cutoffs_hz[1])
        fail("InvalidCutoff", "bandpass cutoffs must be ascending");

    // Analog lowpass prototype: unit-circle poles in the left half plane.
    std::vector<cplx> proto;
    for (int k = 0; k < order; ++k) {
        const double theta = kPi / 2.0 + kPi * (2.0 * k + 1.0) / (2.0 * order);
        proto.push_back(std::polar(1.0, theta));
    }

    // Pre-warped analog edge frequencies.
    const double fs2 = 2.0 * fs_hz;
    auto warp = [&](double f) { return fs2 * std::tan(kPi * f / fs_hz); };

    std::vector<cplx> zeros, poles;
    double gain = 1.0;
    if (kind == FilterKind::Bandpass) {
        const double w1 = warp(cutoffs_hz[0]), w2 = warp(cutoffs_hz[1]);
        const double w0 = std::sqrt(w1 * w2), bw = w2 - w1;
        for (const cplx& p : proto) {
            const cplx q = p * (bw / 2.0);
            const cplx disc = std::sqrt(q * q - w0 * w0);
            poles.push_back(q + disc);
            poles.push_back(q - disc);
        }
        zeros.assign(static_cast<size_t>(order), cplx(0.0));
        gain = std::pow(bw, order);
    } else {
        const double wc = warp(cutoffs_hz[0]);
        for (const cplx& p : proto) poles.push_back(wc / p);
        zeros.assign(static_cast<size_t>(order), cplx(0.0));
        // Butterworth prototype: prod(-p) = 1, so the gain carries over.
    }

    // Bilinear transform; zeros at infinity map to z = -1.
    std::vector<cplx> zd, pd;
    cplx num{1.0}, den{1.0};
    for (const cplx& z : zeros) {
        zd.push_back((fs2 + z) / (fs2 - z));
        num *= fs2 - z;
    }
    for (const cplx& p : poles) {
        pd.push_back((fs2 + p) / (fs2 - p));
        den *= fs2 - p;
    }
    while (zd.size() < pd.size()) zd.push_back(-1.0);
    const double kd = gain * (num / den).real();

    const auto bpoly = poly_from_roots(zd);
    const auto apoly = poly_from_roots(pd);
    IirFilter f;
    for (const cplx& c : bpoly) f.b.push_back(kd * c.real());
    for (const cplx& c : apoly) f.a.push_back(c.real());

    for (const cplx& p : pd)
        if (std::abs(p) >= 1.0)
            fail("UnstableResult", "designed filter has a pole on or outside the unit circle");
    return f;
}

std::vector<double> filter_forward(const IirFilter& f, const std::vector<double>& x) {
    if (x.empty()) fail("DegenerateSignal", "filter_forward on empty signal");
    const size_t nb = f.b.size(), na = f.a.size();
    const size_t order = std::max(nb, na) - 1;
    auto bc = [&](size_t i) { return i < nb ? f.b[i] : 0.0; };
    auto ac = [&](size_t i) { return i < na ? f.a[i] : 0.0; };

    // direct form II transposed, zero initial conditions
    std::vector<double> state(order, 0.0), y(x.size());
    for (size_t n = 0; n < x.size(); ++n) {
        const double xn = x[n];
        const double yn = bc(0) * xn + (order ? state[0] : 0.0);
        for (size_t i = 0; i + 1 < order; ++i)
            state[i] = bc(i + 1) * xn + state[i + 1] - ac(i + 1) * yn;
        if (order) state[order - 1] = bc(order) * xn - ac(order) * yn;
        y[n] = yn;
    }
    return y;
}

std::vector<double> zscore(const std::vector<double>& x) {
    if (x.empty()) fail("DegenerateSignal", "zscore on empty signal");
    const double mean = std::accumulate(x.begin(), x.end(), 0.0) / x.size();
    double var = 0.0;
    for (double v : x) var += (v - mean) * (v - mean);
    const double std_pop = std::sqrt(var / x.size());
    if (std_pop <= 1e-9) fail("DegenerateSignal", "constant signal has no scale");
    std::vector<double> out(x.size());
    for (size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - mean) / std_pop;
    return out;
}

std::vector<int> detect_r_peaks(const std::vector<double>& x, double fs_hz) {
    if (fs_hz <= 0.0) fail("InvalidParams", "fs_hz must be positive");
    const int n = static_cast<int>(x.size());
    const int w_int = std::max(1, static_cast<int>(std::lround(0.150 * fs_hz)));
    const int refractory = std::max(1, static_cast<int>(std::lround(0.200 * fs_hz)));
    const int refine_win = std::max(1, static_cast<int>(std::lround(0.050 * fs_hz)));
    if (n < w_int + 4) return {};

    auto at = [&](int i) { return (i >= 0 && i < n) ? x[static_cast<size_t>(i)] : 0.0; };

    // five-point derivative, squaring, moving-window integration
    std::vector<double> mwi(static_cast<size_t>(n), 0.0);
    {
        std::vector<double> sq(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) {
            const double d = (2.0 * at(i + 1) + at(i + 2) - 2.0 * at(i - 1) - at(i - 2)) / 8.0;
            sq[static_cast<size_t>(i)] = d * d;
        }
        double run = 0.0;
        for (int i = 0; i < n; ++i) {
            run += sq[static_cast<size_t>(i)];
            if (i >= w_int) run -= sq[static_cast<size_t>(i - w_int)];
            mwi[static_cast<size_t>(i)] = run / w_int;
        }
    }

    // candidate fiducials: local maxima of the integrated energy
    struct Cand {
        int idx;
        double val;
    };
    std::vector<Cand> cands;
    for (int i = 1; i + 1 < n; ++i) {
        const double v = mwi[static_cast<size_t>(i)];
        if (v > 0.0 && v > mwi[static_cast<size_t>(i - 1)] && v >= mwi[static_cast<size_t>(i + 1)])
            cands.push_back({i, v});
    }
    if (cands.empty()) return {};

    // prime running estimates from the first two seconds
    const int prime_n = std::min(n, static_cast<int>(std::lround(2.0 * fs_hz)));
    double peak0 = 0.0, mean0 = 0.0;
    for (int i = 0; i < prime_n; ++i) {
        peak0 = std::max(peak0, mwi[static_cast<size_t>(i)]);
        mean0 += mwi[static_cast<size_t>(i)];
    }
    mean0 /= std::max(1, prime_n);
    double spki = 0.75 * peak0;
    double npki = 0.5 * mean0;

    auto thr1 = [&]() { return npki + 0.25 * (spki - npki); };

    std::vector<int> accepted; // candidate indices in mwi space
    std::vector<Cand> skipped; // rejected since the last accepted QRS
    std::vector<int> rr_hist;

    auto rr_avg = [&]() {
        if (rr_hist.empty()) return 0.0;
        const size_t take = std::min<size_t>(8, rr_hist.size());
        double s = 0.0;
        for (size_t i = rr_hist.size() - take; i < rr_hist.size(); ++i) s += rr_hist[i];
        return s / take;
    };

    auto accept = [&](int idx, double val, bool searchback) {
        if (!accepted.empty()) rr_hist.push_back(idx - accepted.back());
        accepted.push_back(idx);
        if (searchback)
            spki = 0.25 * val + 0.75 * spki;
        else
            spki = 0.125 * val + 0.875 * spki;
        skipped.clear();
    };

    for (const Cand& c : cands) {
        // search-back: if the expected beat never arrived, take the strongest
        // skipped candidate above half threshold
        const double avg = rr_avg();
        if (!accepted.empty() && avg > 0.0 &&
            c.idx - accepted.back() > static_cast<int>(1.66 * avg)) {
            const Cand* best = nullptr;
            for (const Cand& s : skipped)
                if (s.idx > accepted.back() + refractory && s.val >= 0.5 * thr1() &&
                    (!best || s.val > best->val))
                    best = &s;
            if (best) accept(best->idx, best->val, true);
        }

        if (!accepted.empty() && c.idx - accepted.back() < refractory) continue;
        if (c.val >= thr1()) {
            accept(c.idx, c.val, false);
        } else {
            npki = 0.125 * c.val + 0.875 * npki;
            skipped.push_back(c);
        }
    }

    // map integration-window fiducials back to R positions: the QRS lies inside
    // the causal window, take the signal maximum there, then refine +-50 ms
    std::vector<int> peaks;
    for (int idx : accepted) {
        int lo = std::max(0, idx - w_int), hi = std::min(n - 1, idx);
        int best = lo;
        for (int i = lo + 1; i <= hi; ++i)
            if (x[static_cast<size_t>(i)] > x[static_cast<size_t>(best)]) best = i;
        lo = std::max(0, best - refine_win);
        hi = std::min(n - 1, best + refine_win);
        for (int i = lo; i <= hi; ++i)
            if (x[static_cast<size_t>(i)] > x[static_cast<size_t>(best)]) best = i;
        peaks.push_back(best);
    }
    std::sort(peaks.begin(), peaks.end());
    peaks.erase(std::unique(peaks.begin(), peaks.end()), peaks.end());

    // enforce the refractory gap after refinement, keeping the taller peak
    std::vector<int> out;
    for (int p : peaks) {
        if (!out.empty() && p - out.back() < refractory) {
            if (x[static_cast<size_t>(p)] > x[static_cast<size_t>(out.back())]) out.back() = p;
        } else {
            out.push_back(p);
        }
    }
    return out;
}

std::vector<Segment> segment_around_peaks(const std::vector<double>& x,
                                          const std::vector<int>& peaks, State state,
                                          double fs_hz, const std::string& subject,
                                          int* boundary_dropped) {
    const int n = static_cast<int>(x.size());
    const int L = segment_length(state, fs_hz);
    const int r = segment_r_index(L);
    int dropped = 0;

    std::vector<Segment> out;
    for (size_t i = 0; i < peaks.size(); ++i) {
        const int p = peaks[i];
        const int start = p - r;
        const int end = start + L;
        if (start < 0 || end > n) {
            ++dropped;
            continue;
        }
        Segment s;
        s.samples.resize(static_cast<size_t>(L));
        for (int j = 0; j < L; ++j)
            s.samples[static_cast<size_t>(j)] = static_cast<float>(x[static_cast<size_t>(start + j)]);
        s.subject_id = subject;
        s.state = state;
        s.r_index = r;
        s.fs_hz = fs_hz;
        if (i > 0)
            s.rr_s = (p - peaks[i - 1]) / fs_hz;
        else if (peaks.size() > 1)
            s.rr_s = (peaks[1] - peaks[0]) / fs_hz;
        out.push_back(std::move(s));
    }
    if (boundary_dropped) *boundary_dropped = dropped;
    return out;
}

namespace {

bool is_clipped(const Segment& s, int run_len) {
    const auto [mn_it, mx_it] = std::minmax_element(s.samples.begin(), s.samples.end());
    const float mn = *mn_it, mx = *mx_it;
    if (mn == mx) return true; // constant segment
    int run = 1;
    for (size_t i = 1; i < s.samples.size(); ++i) {
        const bool extremal = s.samples[i] == mn || s.samples[i] == mx;
        if (extremal && s.samples[i] == s.samples[i - 1])
            ++run;
        else
            run = 1;
        if (run >= run_len) return true;
    }
    return false;
}

double band_power_ratio(const Segment& s, double f_lo, double f_hi) {
    const int L = static_cast<int>(s.samples.size());
    double mean = 0.0;
    for (float v : s.samples) mean += v;
    mean /= L;

    double total = 0.0;
    for (float v : s.samples) total += (v - mean) * (v - mean);
    if (total <= 0.0) return 0.0;

    const int k_lo = std::max(1, static_cast<int>(std::ceil(f_lo * L / s.fs_hz)));
    const int k_hi = std::min(L / 2, static_cast<int>(std::floor(f_hi * L / s.fs_hz)));
    double band = 0.0;
    for (int k = k_lo; k <= k_hi; ++k) {
        double re = 0.0, im = 0.0;
        const double w = 2.0 * kPi * k / L;
        for (int i = 0; i < L; ++i) {
            const double v = s.samples[static_cast<size_t>(i)] - mean;
            re += v * std::cos(w * i);
            im -= v * std::sin(w * i);
        }
        band += re * re + im * im;
    }
    return 2.0 * band / (static_cast<double>(L) * total);
}

} // namespace

std::pair<std::vector<Segment>, QualityReport>
quality_gate(const std::vector<Segment>& segments, const QualityConfig& cfg) {
    QualityReport rep;
    rep.n_input = static_cast<int>(segments.size());
    std::vector<Segment> passed;
    for (const Segment& s : segments) {
        if (is_clipped(s, cfg.clip_run)) {
            ++rep.clipped;
            continue;
        }
        if (band_power_ratio(s, 5.0, 15.0) < cfg.min_band_ratio) {
            ++rep.low_snr;
            continue;
        }
        if (s.rr_s > 0.0) {
            const double bpm = 60.0 / s.rr_s;
            if (bpm < cfg.min_bpm || bpm > cfg.max_bpm) {
                ++rep.bad_rr;
                continue;
            }
        }
        passed.push_back(s);
        ++rep.n_passed;
    }
    return {std::move(passed), rep};
}

std::pair<std::vector<Segment>, QualityReport>
preprocess_record(const EcgRecord& record, const QualityConfig& cfg) {
    record.validate();
    const IirFilter bp = design_butterworth(4, FilterKind::Bandpass, {0.5, 40.0}, record.fs_hz);
    const IirFilter hp = design_butterworth(1, FilterKind::Highpass, {0.5}, record.fs_hz);

    std::vector<double> sig(record.samples.begin(), record.samples.end());
    sig = filter_forward(bp, sig);
    sig = filter_forward(hp, sig);
    sig = zscore(sig);

    const auto peaks = detect_r_peaks(sig, record.fs_hz);
    int dropped = 0;
    auto segments =
        segment_around_peaks(sig, peaks, record.state, record.fs_hz, record.subject_id, &dropped);
    auto [passed, rep] = quality_gate(segments, cfg);
    rep.n_input = static_cast<int>(peaks.size());
    rep.boundary_truncated = dropped;
    return {std::move(passed), rep};
}

} // namespace crossecg
