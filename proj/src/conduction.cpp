#include "ecgr/conduction.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace ecgr {

const char* to_string(BeatTag t) {
    switch (t) {
        case BeatTag::Normal: return "NORMAL";
        case BeatTag::Ventricular: return "VENTRICULAR";
        case BeatTag::Fusion: return "FUSION";
        case BeatTag::Spurious: return "SPURIOUS";
    }
    return "?";
}

std::optional<BeatTag> beat_tag_from_string(std::string_view s) {
    if (s == "NORMAL") return BeatTag::Normal;
    if (s == "VENTRICULAR") return BeatTag::Ventricular;
    if (s == "FUSION") return BeatTag::Fusion;
    if (s == "SPURIOUS") return BeatTag::Spurious;
    return std::nullopt;
}

bool BeatObservation::well_formed() const {
    if (!(qrs_onset < qrs_peak && qrs_peak < qrs_offset)) return false;
    if (p && !(p->onset < p->peak && p->peak < p->offset && p->offset <= qrs_onset)) return false;
    if (t && !(t->onset < t->peak && t->peak < t->offset && t->onset >= qrs_offset)) return false;
    return std::isfinite(morph_dist);
}

double BeatObservation::qrs_duration_ms(int fs) const {
    return static_cast<double>(qrs_offset - qrs_onset) * 1000.0 / fs;
}

namespace {

long ms_to_samples(double ms, int fs) { return std::lround(ms * fs / 1000.0); }

double at(const std::vector<double>& x, long i) {
    const long n = static_cast<long>(x.size());
    return x[static_cast<std::size_t>(std::clamp(i, 0L, n - 1))];
}

}  // namespace

std::vector<long> detect_qrs(const Record& r, const ConductionConfig& cfg) {
    const int fs = r.fs;
    const auto& x = r.samples;
    const long n = static_cast<long>(x.size());
    if (n < 2L * fs) throw EvidenceError("detect_qrs: record shorter than 2 s");

    // Band limit: difference over D (response peak near fs/2D = 15 Hz) then a
    // moving average of length L (first zero at 25 Hz).
    const long D = std::max(1L, std::lround(fs / 30.0));
    const long L = std::max(1L, std::lround(fs / 25.0));
    const long W = std::max(1L, ms_to_samples(cfg.integration_ms, fs));
    std::vector<double> diff(static_cast<std::size_t>(n)), band(static_cast<std::size_t>(n)),
        integ(static_cast<std::size_t>(n));
    for (long i = 0; i < n; ++i) diff[static_cast<std::size_t>(i)] = x[static_cast<std::size_t>(i)] - at(x, i - D);
    double acc = 0.0;
    for (long i = 0; i < n; ++i) {
        acc += diff[static_cast<std::size_t>(i)];
        if (i >= L) acc -= diff[static_cast<std::size_t>(i - L)];
        band[static_cast<std::size_t>(i)] = acc / static_cast<double>(L);
    }
    acc = 0.0;
    for (long i = 0; i < n; ++i) {
        const double b = band[static_cast<std::size_t>(i)];
        acc += b * b;
        if (i >= W) {
            const double o = band[static_cast<std::size_t>(i - W)];
            acc -= o * o;
        }
        integ[static_cast<std::size_t>(i)] = std::max(0.0, acc) / static_cast<double>(W);
    }

    // Candidates: maxima of the integrated signal over +-refractory; ties go to
    // the earliest sample.
    const long R = std::max(1L, ms_to_samples(cfg.refractory_ms, fs));
    std::vector<long> cand;
    for (long i = 0; i < n; ++i) {
        const double v = integ[static_cast<std::size_t>(i)];
        if (!(v > 0.0)) continue;
        bool is_max = true;
        for (long j = std::max(0L, i - R); j <= std::min(n - 1, i + R) && is_max; ++j) {
            const double w = integ[static_cast<std::size_t>(j)];
            if (j < i ? w >= v : w > v) is_max = false;
        }
        if (is_max) cand.push_back(i);
    }
    if (cand.empty()) return {};

    // Adaptive threshold: factor * median of the last accepted peak values,
    // seeded with the largest candidates.
    std::vector<double> vals;
    for (long c : cand) vals.push_back(integ[static_cast<std::size_t>(c)]);
    std::vector<double> history = vals;
    std::sort(history.begin(), history.end(), std::greater<>());
    const auto hist_n = static_cast<std::size_t>(std::max(1, cfg.detect_history));
    if (history.size() > hist_n) history.resize(hist_n);
    std::vector<long> accepted;
    for (std::size_t k = 0; k < cand.size(); ++k) {
        const double thr = cfg.detect_threshold_factor * median(history);
        if (vals[k] < thr) continue;
        accepted.push_back(cand[k]);
        history.push_back(vals[k]);
        if (history.size() > hist_n) history.erase(history.begin());
    }

    // Locate the R peak in the signal: largest deviation from the local
    // median inside a window centred on the integrator's group delay.
    const long delay = (D + L - 2) / 2 + (W - 1) / 2;
    const long half = ms_to_samples(100.0, fs);
    std::vector<long> peaks;
    std::vector<double> peak_amp;
    for (long c : accepted) {
        const long lo = std::clamp(c - delay - half, 1L, n - 2);
        const long hi = std::clamp(c - delay + half, 1L, n - 2);
        if (hi <= lo) continue;
        const double ref = median(std::span<const double>(x.data() + lo, static_cast<std::size_t>(hi - lo + 1)));
        long best = lo;
        double best_v = -1.0;
        for (long i = lo; i <= hi; ++i) {
            const double v = std::abs(x[static_cast<std::size_t>(i)] - ref);
            if (v > best_v) {
                best_v = v;
                best = i;
            }
        }
        if (!peaks.empty() && best - peaks.back() < R) {
            if (best_v > peak_amp.back()) {
                peaks.back() = best;
                peak_amp.back() = best_v;
            }
            continue;
        }
        peaks.push_back(best);
        peak_amp.push_back(best_v);
    }
    return peaks;
}

BeatObservation delineate_beat(const Record& r, long qrs_peak, long prev_offset, long next_onset,
                               const ConductionConfig& cfg) {
    const int fs = r.fs;
    const auto& x = r.samples;
    const long n = static_cast<long>(x.size());
    if (!(prev_offset < qrs_peak && qrs_peak < next_onset))
        throw EvidenceError("delineate_beat: search bounds do not bracket the QRS peak");
    if (qrs_peak < 1 || qrs_peak > n - 2) throw EvidenceError("delineate_beat: QRS peak at record edge");

    const long h = std::max(1L, ms_to_samples(5.0, fs));
    auto slope = [&](long i) { return std::abs(at(x, i + h) - at(x, i - h)); };

    const long M = ms_to_samples(cfg.qrs_max_half_ms, fs);
    const long lo = std::max({prev_offset + 1, qrs_peak - M, 0L});
    const long hi = std::min({next_onset - 1, qrs_peak + M, n - 1});

    BeatObservation b;
    b.qrs_peak = qrs_peak;

    double peak_slope = 0.0;
    long imax_l = qrs_peak, imax_r = qrs_peak;
    double ml = -1.0, mr = -1.0;
    for (long i = lo; i <= hi; ++i) {
        const double s = slope(i);
        peak_slope = std::max(peak_slope, s);
        if (i <= qrs_peak && s > ml) {
            ml = s;
            imax_l = i;
        }
        if (i >= qrs_peak && s > mr) {
            mr = s;
            imax_r = i;
        }
    }
    const double thr = cfg.slope_fraction * peak_slope;
    long on = imax_l;
    while (on > lo && slope(on) >= thr) --on;
    long off = imax_r;
    while (off < hi && slope(off) >= thr) ++off;
    b.qrs_onset = std::min(on, qrs_peak - 1);
    b.qrs_offset = std::max(off, qrs_peak + 1);

    long main_i = b.qrs_peak;
    for (long i = b.qrs_onset; i <= b.qrs_offset; ++i)
        if (std::abs(x[static_cast<std::size_t>(i)]) > std::abs(x[static_cast<std::size_t>(main_i)])) main_i = i;
    b.qrs_amp = x[static_cast<std::size_t>(main_i)];
    b.qrs_polarity = b.qrs_amp < 0.0 ? -1 : 1;

    // Peak of largest |x| in [ws, we]; edges extend while the wave keeps its
    // sign and stays above edge_fraction of the peak, within [lim_lo, lim_hi].
    auto find_wave = [&](long ws, long we, long lim_lo, long lim_hi) -> std::optional<Wave> {
        if (we - ws < 2) return std::nullopt;
        long pk = ws;
        for (long i = ws; i <= we; ++i)
            if (std::abs(x[static_cast<std::size_t>(i)]) > std::abs(x[static_cast<std::size_t>(pk)])) pk = i;
        const double amp = x[static_cast<std::size_t>(pk)];
        if (!(std::abs(amp) > cfg.wave_presence_mv)) return std::nullopt;
        const double edge = cfg.wave_edge_fraction * std::abs(amp);
        auto inside = [&](long i) {
            const double v = x[static_cast<std::size_t>(i)];
            return (v > 0.0) == (amp > 0.0) && std::abs(v) >= edge;
        };
        long a = pk;
        while (a > lim_lo && inside(a - 1)) --a;
        long z = pk;
        while (z < lim_hi && inside(z + 1)) ++z;
        if (a > lim_lo) --a;
        if (z < lim_hi) ++z;
        if (!(a < pk && pk < z)) return std::nullopt;
        return Wave{a, pk, z, amp};
    };

    const long t_lo = b.qrs_offset + ms_to_samples(cfg.t_search_start_ms, fs);
    const long t_hi = std::min({b.qrs_offset + ms_to_samples(cfg.t_search_end_ms, fs), next_onset - 1, n - 1});
    b.t = find_wave(t_lo, t_hi, b.qrs_offset, std::min(next_onset - 1, n - 1));

    const long p_lo = std::max({b.qrs_onset - ms_to_samples(cfg.p_window_ms, fs), prev_offset + 1, 0L});
    const long p_hi = b.qrs_onset - 1;
    auto p = find_wave(p_lo, p_hi, p_lo, b.qrs_onset);
    // A P wave must close before the QRS; one running into it is residue.
    if (p && (p->offset >= b.qrs_onset || p->onset <= p_lo)) p.reset();
    if (p) {
        const double dur = static_cast<double>(p->offset - p->onset) * 1000.0 / fs;
        if (dur < cfg.p_min_ms || dur > cfg.p_max_ms) p.reset();
    }
    b.p = p;
    return b;
}

std::vector<BeatObservation> delineate_all(const Record& r, std::span<const long> peaks,
                                           const ConductionConfig& cfg) {
    const long n = static_cast<long>(r.samples.size());
    const long M = ms_to_samples(cfg.qrs_max_half_ms, r.fs);
    std::vector<BeatObservation> out;
    out.reserve(peaks.size());
    long prev_end = -1;
    for (std::size_t k = 0; k < peaks.size(); ++k) {
        const long pk = peaks[k];
        if (pk < 1 || pk > n - 2 || pk <= prev_end) continue;
        long next_onset = n;
        if (k + 1 < peaks.size()) next_onset = std::max(pk + 2, peaks[k + 1] - std::min(M, (peaks[k + 1] - pk) / 2));
        BeatObservation b = delineate_beat(r, pk, prev_end, next_onset, cfg);
        prev_end = b.t ? b.t->offset : b.qrs_offset;
        out.push_back(std::move(b));
    }
    return out;
}

std::vector<double> qrs_snippet(const Record& r, long peak, const ConductionConfig& cfg) {
    const long half = ms_to_samples(cfg.template_ms / 2.0, r.fs);
    std::vector<double> s(static_cast<std::size_t>(2 * half + 1));
    for (long i = -half; i <= half; ++i) s[static_cast<std::size_t>(i + half)] = at(r.samples, peak + i);
    const double m = mean(s);
    double e = 0.0;
    for (double& v : s) {
        v -= m;
        e += v * v;
    }
    if (e <= 1e-24) {
        std::fill(s.begin(), s.end(), 0.0);
        return s;
    }
    const double inv = 1.0 / std::sqrt(e);
    for (double& v : s) v *= inv;
    return s;
}

double correlation_distance(std::span<const double> a, std::span<const double> b) {
    double d = 0.0;
    for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i) d += a[i] * b[i];
    return std::clamp(1.0 - d, 0.0, 2.0);
}

BeatTag tag_beat(double morph_dist, double qrs_ms, double median_qrs_ms, const ConductionConfig& cfg) {
    if (morph_dist > cfg.ventricular_dist && qrs_ms > cfg.wide_qrs_ms &&
        qrs_ms > cfg.ventricular_width_ratio * median_qrs_ms)
        return BeatTag::Ventricular;
    if (morph_dist > cfg.fusion_dist && morph_dist <= cfg.ventricular_dist && qrs_ms > median_qrs_ms)
        return BeatTag::Fusion;
    return BeatTag::Normal;
}

TemplateResult dominant_template(const Record& r, std::span<const BeatObservation> beats,
                                 const ConductionConfig& cfg) {
    const std::size_t n = beats.size();
    if (n < 3) throw EvidenceError("dominant_template: fewer than 3 beats");
    std::vector<std::vector<double>> snip(n);
    for (std::size_t i = 0; i < n; ++i) snip[i] = qrs_snippet(r, beats[i].qrs_peak, cfg);

    // Connected components of the correlation >= threshold graph.
    std::vector<std::size_t> parent(n);
    std::iota(parent.begin(), parent.end(), 0);
    auto find = [&parent](std::size_t i) {
        while (parent[i] != i) i = parent[i] = parent[parent[i]];
        return i;
    };
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            if (1.0 - correlation_distance(snip[i], snip[j]) >= cfg.cluster_correlation) {
                const std::size_t a = find(i), b = find(j);
                if (a != b) parent[std::max(a, b)] = std::min(a, b);
            }
    std::vector<std::size_t> size(n, 0);
    for (std::size_t i = 0; i < n; ++i) ++size[find(i)];
    std::size_t best_root = find(0);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t root = find(i);
        if (size[root] > size[best_root]) best_root = root;
    }

    TemplateResult out;
    std::vector<double> tmpl(snip[0].size(), 0.0);
    for (std::size_t i = 0; i < n; ++i)
        if (find(i) == best_root)
            for (std::size_t k = 0; k < tmpl.size(); ++k) tmpl[k] += snip[i][k];
    const double m = mean(tmpl);
    double e = 0.0;
    for (double& v : tmpl) {
        v -= m;
        e += v * v;
    }
    if (e <= 1e-24) {
        // Flat input: fall back to a centred impulse so the template keeps unit energy.
        std::fill(tmpl.begin(), tmpl.end(), 0.0);
        tmpl[tmpl.size() / 2] = 1.0;
        const double mm = mean(tmpl);
        e = 0.0;
        for (double& v : tmpl) {
            v -= mm;
            e += v * v;
        }
    }
    const double inv = 1.0 / std::sqrt(e);
    for (double& v : tmpl) v *= inv;
    out.qrs_template.waveform = std::move(tmpl);

    std::vector<double> durs(n);
    for (std::size_t i = 0; i < n; ++i) durs[i] = beats[i].qrs_duration_ms(r.fs);
    const double med_dur = median(durs);
    out.morph_dist.resize(n);
    out.tags.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        out.morph_dist[i] = correlation_distance(snip[i], out.qrs_template.waveform);
        out.tags[i] = tag_beat(out.morph_dist[i], durs[i], med_dur, cfg);
    }
    return out;
}

std::vector<BeatObservation> conduction_evidence(const Record& r, const ConductionConfig& cfg) {
    const auto peaks = detect_qrs(r, cfg);
    auto beats = delineate_all(r, peaks, cfg);
    if (beats.size() >= 3) {
        const auto tr = dominant_template(r, beats, cfg);
        for (std::size_t i = 0; i < beats.size(); ++i) {
            beats[i].morph_dist = tr.morph_dist[i];
            beats[i].tag = tr.tags[i];
        }
    }
    return beats;
}

std::string annotation_rows(std::span<const BeatObservation> beats) {
    std::ostringstream os;
    for (const auto& b : beats) {
        os << b.qrs_onset << '\t' << b.qrs_peak << '\t' << b.qrs_offset << '\t' << to_string(b.tag) << '\t';
        if (b.p) os << b.p->peak; else os << '-';
        os << '\t';
        if (b.t) os << b.t->peak; else os << '-';
        os << '\n';
    }
    return os.str();
}

}  // namespace ecgr
