#pragma once

// Constructed signals, fuzz generators and brute-force oracles shared by the
// unit tests and the acceptance runner.

#include "ecgr/conduction.hpp"
#include "ecgr/features.hpp"
#include "ecgr/gbt.hpp"
#include "ecgr/interpretation.hpp"
#include "ecgr/rng.hpp"
#include "ecgr/rnn.hpp"
#include "ecgr/signal_io.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace fixtures {

using namespace ecgr;

// ---------------------------------------------------------------------------
// Signals

inline void add_gauss(std::vector<double>& x, int fs, double centre_ms, double sigma_ms, double amp) {
    const double c = centre_ms * fs / 1000.0, s = sigma_ms * fs / 1000.0;
    const long lo = std::max(0L, static_cast<long>(c - 5 * s)), hi = std::min<long>(x.size() - 1, static_cast<long>(c + 5 * s));
    for (long i = lo; i <= hi; ++i) x[static_cast<std::size_t>(i)] += amp * std::exp(-0.5 * std::pow((i - c) / s, 2));
}

// P-QRS-T complex with its R peak at t_ms.
inline void add_beat(std::vector<double>& x, int fs, double t_ms, bool with_p = true) {
    if (with_p) add_gauss(x, fs, t_ms - 170.0, 18.0, 0.15);
    add_gauss(x, fs, t_ms - 22.0, 7.0, -0.12);
    add_gauss(x, fs, t_ms, 9.0, 1.1);
    add_gauss(x, fs, t_ms + 22.0, 8.0, -0.25);
    add_gauss(x, fs, t_ms + 260.0, 45.0, 0.35);
}

inline Record beats_record(const std::vector<double>& r_ms, double duration_s, int fs = kCanonicalFs) {
    Record r;
    r.id = "constructed";
    r.fs = fs;
    r.samples.assign(static_cast<std::size_t>(std::lround(duration_s * fs)), 0.0);
    for (double t : r_ms) add_beat(r.samples, fs, t);
    return r;
}

inline long to_sample(double ms, int fs = kCanonicalFs) { return std::lround(ms * fs / 1000.0); }

struct ConstructedCase {
    Record record;
    std::vector<BeatObservation> beats;
    double truth_ms = 0.0;  // spurious or missing beat
};

constexpr double kT0 = 500.0;

// Regular beats at 0/800/1600/2400 ms (shifted by kT0) and a low-amplitude
// detection at 1900 ms.
inline ConstructedCase spurious_case() {
    ConstructedCase c;
    const std::vector<double> t = {kT0, kT0 + 800, kT0 + 1600, kT0 + 2400};
    c.record = beats_record(t, 3.5);
    c.truth_ms = kT0 + 1900;
    add_gauss(c.record.samples, c.record.fs, c.truth_ms, 6.0, 0.12);
    std::vector<long> peaks;
    for (double v : t) peaks.push_back(to_sample(v));
    c.beats = delineate_all(c.record, peaks);
    BeatObservation s;
    s.qrs_peak = to_sample(c.truth_ms);
    s.qrs_onset = s.qrs_peak - 6;
    s.qrs_offset = s.qrs_peak + 6;
    s.qrs_amp = c.record.samples[static_cast<std::size_t>(s.qrs_peak)];
    // Keep the neighbour's T wave clear of the spurious detection.
    auto& prev = c.beats[2];
    if (prev.t && prev.t->offset >= s.qrs_onset) prev.t.reset();
    c.beats.insert(c.beats.begin() + 3, s);
    return c;
}

// Beats at 0/800/1600/2400/3200 ms in the signal; the one at 1600 is
// missing from the evidence.
inline ConstructedCase dropout_case() {
    ConstructedCase c;
    const std::vector<double> t = {kT0, kT0 + 800, kT0 + 1600, kT0 + 2400, kT0 + 3200};
    c.record = beats_record(t, 4.3);
    c.truth_ms = kT0 + 1600;
    std::vector<long> peaks = {to_sample(t[0]), to_sample(t[1]), to_sample(t[3]), to_sample(t[4])};
    c.beats = delineate_all(c.record, peaks);
    return c;
}

// ---------------------------------------------------------------------------
// Rhythm fuzzing

// A beat list of n beats over a noise record, with regimes mixed so that
// several patterns compete.
inline ConstructedCase fuzz_rhythm(Rng& rng, std::size_t n) {
    ConstructedCase c;
    const int fs = kCanonicalFs;
    std::vector<double> t;
    std::vector<bool> p, v;
    double now = 400.0;
    const int regime_count = 1 + static_cast<int>(rng.below(3));
    std::size_t made = 0;
    for (int reg = 0; reg < regime_count && made < n; ++reg) {
        const std::size_t len = reg + 1 == regime_count ? n - made : 1 + rng.below(n - made);
        const int kind = static_cast<int>(rng.below(6));
        for (std::size_t i = 0; i < len; ++i, ++made) {
            double rr = 800.0;
            bool has_p = true, vent = false;
            switch (kind) {
                case 0: rr = 800.0 + rng.uniform(-20, 20); break;                       // regular
                case 1: rr = rng.uniform(380, 1100); has_p = rng.uniform() < 0.15; break;  // irregular
                case 2: rr = 480.0 + rng.uniform(-15, 15); break;                       // fast
                case 3: rr = 1400.0 + rng.uniform(-40, 40); break;                      // slow
                case 4: rr = (i % 2 ? 1000.0 : 560.0); vent = i % 2 == 1; break;        // paired ectopy
                default: rr = rng.uniform(500, 1300); has_p = rng.uniform() < 0.5; vent = rng.uniform() < 0.2;
            }
            if (!t.empty() || i > 0) now += rr;
            t.push_back(now);
            p.push_back(has_p);
            v.push_back(vent);
        }
    }
    c.record.id = "fuzz";
    c.record.fs = fs;
    c.record.samples.resize(static_cast<std::size_t>((now + 700.0) * fs / 1000.0));
    const bool flutter = rng.uniform() < 0.25;
    for (std::size_t i = 0; i < c.record.samples.size(); ++i) {
        double x = 0.02 * rng.normal();
        if (flutter) x += 0.1 * std::sin(2.0 * std::numbers::pi * 5.0 * static_cast<double>(i) / fs);
        c.record.samples[i] = x;
    }
    for (std::size_t i = 0; i < t.size(); ++i) {
        add_beat(c.record.samples, fs, t[i], p[i]);
        BeatObservation b;
        b.qrs_peak = to_sample(t[i]);
        b.qrs_onset = b.qrs_peak - 12;
        b.qrs_offset = b.qrs_peak + 12;
        b.qrs_amp = 1.1;
        if (p[i]) b.p = Wave{b.qrs_peak - 72, b.qrs_peak - 51, b.qrs_peak - 30, 0.15};
        b.t = Wave{b.qrs_peak + 40, b.qrs_peak + 78, b.qrs_peak + 110, 0.35};
        b.tag = v[i] ? BeatTag::Ventricular : BeatTag::Normal;
        c.beats.push_back(b);
    }
    return c;
}

// Exhaustive oracle: every composition of the beats into consecutive
// segments, each segment taking its cheapest admissible pattern. The cost is
// additive over segments, so this is the exact optimum.
inline double exhaustive_tiling_cost(const RhythmEvidence& ev) {
    const std::size_t n = ev.beat_count();
    const auto& cfg = ev.config();
    if (n == 0) return 0.0;
    double best = std::numeric_limits<double>::infinity();
    for (unsigned long mask = 0; mask < (1UL << (n - 1)); ++mask) {
        double total = 0.0;
        std::size_t first = 0;
        for (std::size_t i = 0; i < n && total < best; ++i) {
            const bool cut = i + 1 == n || (mask >> i) & 1UL;
            if (!cut) continue;
            double seg = std::numeric_limits<double>::infinity();
            for (auto p : kAllPatterns) {
                if (p != RhythmPattern::Unexplained && i - first + 1 < cfg.min_episode_beats) continue;
                const auto m = match_pattern(p, ev, {first, i});
                if (m.admissible) seg = std::min(seg, m.penalty);
            }
            total += seg + (first > 0 ? cfg.switch_cost : 0.0);
            first = i + 1;
        }
        best = std::min(best, total);
    }
    return best;
}

// ---------------------------------------------------------------------------
// Naive feature oracles

inline double naive_pnn(const std::vector<double>& rr, double x) {
    if (rr.size() < 2) return 0.0;
    int count = 0;
    for (std::size_t i = 1; i < rr.size(); ++i)
        if (std::fabs(rr[i] - rr[i - 1]) > x) ++count;
    return static_cast<double>(count) / static_cast<double>(rr.size() - 1);
}

inline double naive_rmssd(const std::vector<double>& rr) {
    if (rr.size() < 2) return 0.0;
    double s = 0.0;
    for (std::size_t i = 1; i < rr.size(); ++i) s += (rr[i] - rr[i - 1]) * (rr[i] - rr[i - 1]);
    return std::sqrt(s / static_cast<double>(rr.size() - 1));
}

// Median by full sort, average of the two middle values for even lengths.
inline double naive_median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline double naive_mad(const std::vector<double>& v) {
    const double m = naive_median(v);
    std::vector<double> d;
    for (double x : v) d.push_back(std::fabs(x - m));
    return naive_median(d);
}

inline double naive_profile(const std::vector<double>& x) {
    double s = 0.0;
    for (std::size_t i = 1; i < x.size(); ++i) s += std::fabs(x[i] - x[i - 1]);
    return s;
}

// ---------------------------------------------------------------------------
// GBT oracle

// Hand-built 8-row, 2-feature set; feature 1 separates N from A better.
inline FeatureMatrix stump_X() {
    return {{1.0, 0.2}, {2.0, 0.9}, {3.0, 0.1}, {4.0, 0.8}, {5.0, 0.3}, {6.0, 0.7}, {7.0, 0.4}, {8.0, 0.95}};
}
inline std::vector<ClassLabel> stump_y() {
    using C = ClassLabel;
    return {C::Normal, C::AFib, C::Normal, C::AFib, C::Normal, C::AFib, C::Other, C::AFib};
}

struct BruteSplit {
    int feature = -1;
    double threshold = 0.0;
    double gain = 0.0;
    double left_leaf = 0.0, right_leaf = 0.0;
};

// Best first split for class k from uniform initial scores, scanning every
// midpoint between distinct sorted values of every feature.
inline BruteSplit brute_force_stump(const FeatureMatrix& X, const std::vector<ClassLabel>& y, std::size_t k,
                                    double lambda, double gamma, double eta) {
    const std::size_t n = X.size();
    std::vector<double> g(n), h(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double p = 0.25;
        g[i] = p - (index_of(y[i]) == k ? 1.0 : 0.0);
        h[i] = p * (1.0 - p);
    }
    auto score = [&](double G, double H) { return G * G / (H + lambda); };
    double Gt = 0, Ht = 0;
    for (std::size_t i = 0; i < n; ++i) {
        Gt += g[i];
        Ht += h[i];
    }
    BruteSplit best;
    for (std::size_t f = 0; f < X[0].size(); ++f) {
        std::vector<double> vals;
        for (const auto& row : X) vals.push_back(row[f]);
        std::sort(vals.begin(), vals.end());
        vals.erase(std::unique(vals.begin(), vals.end()), vals.end());
        for (std::size_t j = 0; j + 1 < vals.size(); ++j) {
            const double thr = 0.5 * (vals[j] + vals[j + 1]);
            double GL = 0, HL = 0, GR = 0, HR = 0;
            for (std::size_t i = 0; i < n; ++i) {
                if (X[i][f] < thr) {
                    GL += g[i];
                    HL += h[i];
                } else {
                    GR += g[i];
                    HR += h[i];
                }
            }
            const double gain = 0.5 * (score(GL, HL) + score(Gt - GL, Ht - HL) - score(Gt, Ht)) - gamma;
            if (gain > best.gain) best = {static_cast<int>(f), thr, gain, eta * -(GL / (HL + lambda)), eta * -(GR / (HR + lambda))};
        }
    }
    return best;
}

// ---------------------------------------------------------------------------
// RNN

inline RnnConfig tiny_rnn_config() {
    RnnConfig c;
    c.input_dim = 3;
    c.mlp_hidden = 4;
    c.mlp_out = 4;
    c.lstm_units = 4;
    c.head_hidden = 4;
    c.head_out = 4;
    c.batch = 2;
    return c;
}

inline Sequence random_sequence(Rng& rng, std::size_t T, std::size_t D) {
    Sequence s(static_cast<Eigen::Index>(T), static_cast<Eigen::Index>(D));
    for (Eigen::Index i = 0; i < s.rows(); ++i)
        for (Eigen::Index j = 0; j < s.cols(); ++j) s(i, j) = rng.normal();
    return s;
}

struct GradCheck {
    std::string worst_tensor;
    double worst_rel = 0.0;
};

// Central differences on every parameter; per tensor the relative error is
// ||g_analytic - g_numeric|| / max(||g_analytic|| + ||g_numeric||, 1e-12).
inline GradCheck gradient_check(const RnnModel& m, const PaddedBatch& b, double l2,
                                std::optional<std::uint64_t> dropout_seed, double h = 1e-6) {
    const auto analytic = loss_and_gradients(m, b, l2, dropout_seed).grad;
    RnnModel probe = m;
    GradCheck out;
    for (const auto& t : m.layout) {
        double diff = 0.0, na = 0.0, nn = 0.0;
        for (std::size_t k = t.offset; k < t.offset + t.size(); ++k) {
            const double keep = probe.params[k];
            probe.params[k] = keep + h;
            const double up = loss_and_gradients(probe, b, l2, dropout_seed).loss;
            probe.params[k] = keep - h;
            const double dn = loss_and_gradients(probe, b, l2, dropout_seed).loss;
            probe.params[k] = keep;
            const double num = (up - dn) / (2.0 * h);
            diff += (analytic[k] - num) * (analytic[k] - num);
            na += analytic[k] * analytic[k];
            nn += num * num;
        }
        const double rel = std::sqrt(diff) / std::max(std::sqrt(na) + std::sqrt(nn), 1e-12);
        if (rel >= out.worst_rel) {
            out.worst_rel = rel;
            out.worst_tensor = t.name;
        }
    }
    return out;
}

}  // namespace fixtures
