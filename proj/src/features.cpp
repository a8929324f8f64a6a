#include "ecgr/features.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace ecgr {

namespace {

using S = Scaling;

constexpr std::array<FeatureInfo, kGlobalFeatureCount> kGlobalInfo = {{
    {"r01_rr_min", S::Invariant},
    {"r02_rr_max", S::Invariant},
    {"r03_rr_median", S::Invariant},
    {"r04_rr_mean", S::Invariant},
    {"r05_rr_std", S::Invariant},
    {"r06_rr_mad", S::Invariant},
    {"r07_rr_mad_ratio", S::Invariant},
    {"r08_rr_iqr", S::Invariant},
    {"r09_rmssd", S::Invariant},
    {"r10_pnn5", S::Invariant},
    {"r11_pnn10", S::Invariant},
    {"r12_pnn50", S::Invariant},
    {"r13_pnn100", S::Invariant},
    {"r14_mean_hr", S::Invariant},
    {"r15_max_abs_drr", S::Invariant},
    {"r16_drr_sign_change_frac", S::Invariant},
    {"r17_n_episodes", S::Invariant},
    {"r18_median_episode_s", S::Invariant},
    {"r19_sinus_time_frac", S::Invariant},
    {"r20_afib_time_frac", S::Invariant},
    {"r21_unexplained_time_frac", S::Invariant},
    {"r22_other_rhythm_time_frac", S::Invariant},
    {"m01_p_presence", S::Invariant},
    {"m02_p_dur_median", S::Invariant},
    {"m03_p_amp_median", S::Linear},
    {"m04_p_amp_mad", S::Linear},
    {"m05_pr_median", S::Invariant},
    {"m06_pr_mad", S::Invariant},
    {"m07_qrs_dur_median", S::Invariant},
    {"m08_qrs_dur_mad", S::Invariant},
    {"m09_qrs_amp_median", S::Linear},
    {"m10_qrs_amp_mad", S::Linear},
    {"m11_qrs_pos_polarity_frac", S::Invariant},
    {"m12_wide_qrs_frac", S::Invariant},
    {"m13_morph_dist_median", S::Invariant},
    {"m14_morph_dist_max", S::Invariant},
    {"m15_vent_frac", S::Invariant},
    {"m16_fusion_frac", S::Invariant},
    {"m17_t_presence", S::Invariant},
    {"m18_t_dur_median", S::Invariant},
    {"m19_t_amp_median", S::Linear},
    {"m20_t_amp_mad", S::Linear},
    {"m21_qt_median", S::Invariant},
    {"m22_qtc_median", S::Invariant},
    {"m23_tp_median", S::Invariant},
    {"m24_tp_peak_hz", S::Invariant},
    {"m25_tp_prominence", S::Invariant},
    {"m26_tp_4_9hz_power_frac", S::Invariant},
    {"q01_beat_profile_median", S::Linear},
    {"q02_beat_profile_mad", S::Linear},
    {"q03_p_window_profile_median", S::Linear},
    {"q04_baseline_profile_per_s", S::Linear},
    {"q05_record_profile_per_s", S::Linear},
    {"q06_deleted_frac", S::Invariant},
    {"q07_inserted_frac", S::Invariant},
    {"q08_p_window_to_beat_profile", S::Invariant},
    {"q09_baseline_to_beat_profile", S::Invariant},
    {"q10_record_to_beat_profile", S::Invariant},
    {"q11_initial_beats_per_s", S::Invariant},
    {"q12_second_to_first_diff", S::Invariant},
    {"q13_range_to_qrs_amp", S::Invariant},
    {"q14_cost_per_beat", S::Invariant},
    {"a01_tachycardia", S::Invariant},
    {"a02_bradycardia", S::Invariant},
    {"a03_wide_qrs", S::Invariant},
    {"a04_vent_or_fusion", S::Invariant},
    {"a05_extrasystole", S::Invariant},
    {"a06_long_pr", S::Invariant},
    {"a07_vent_tachy", S::Invariant},
    {"a08_flutter", S::Invariant},
}};

constexpr std::array<FeatureInfo, kBeatFeatureCount> kBeatInfo = {{
    {"b01_rr_prev", S::Invariant},
    {"b02_rr_next", S::Invariant},
    {"b03_drr_prev", S::Invariant},
    {"b04_drr_next", S::Invariant},
    {"b05_rr_prev_ratio", S::Invariant},
    {"b06_p_present", S::Invariant},
    {"b07_p_dur", S::Invariant},
    {"b08_p_amp", S::Linear},
    {"b09_pr", S::Invariant},
    {"b10_qrs_dur", S::Invariant},
    {"b11_qrs_amp", S::Linear},
    {"b12_polarity", S::Invariant},
    {"b13_morph_dist", S::Invariant},
    {"b14_qt", S::Invariant},
    {"b15_t_dur", S::Invariant},
    {"b16_t_amp", S::Linear},
    {"b17_t_polarity", S::Invariant},
    {"b18_p_window_profile", S::Linear},
    {"b19_baseline_profile", S::Linear},
    {"b20_tag_normal", S::Invariant},
    {"b21_tag_ventricular", S::Invariant},
    {"b22_tag_fusion", S::Invariant},
}};

double med0(const std::vector<double>& v) { return v.empty() ? 0.0 : median(v); }
double mad0(const std::vector<double>& v) { return v.empty() ? 0.0 : mad(v); }
double frac(double num, double den) { return den > 0.0 ? num / den : 0.0; }

double ms(long samples, int fs) { return static_cast<double>(samples) * 1000.0 / fs; }

std::vector<double> rr_from_beats(std::span<const BeatObservation> beats, int fs) {
    std::vector<double> rr;
    for (std::size_t i = 0; i + 1 < beats.size(); ++i) rr.push_back(ms(beats[i + 1].qrs_peak - beats[i].qrs_peak, fs));
    return rr;
}

double segment_profile(const Record& r, long lo, long hi) {
    const long n = static_cast<long>(r.samples.size());
    lo = std::clamp(lo, 0L, n - 1);
    hi = std::clamp(hi, 0L, n - 1);
    if (hi - lo < 1) return 0.0;
    return profile(std::span<const double>(r.samples.data() + lo, static_cast<std::size_t>(hi - lo + 1)));
}

double p_window_profile(const Record& r, const BeatObservation& b) {
    return segment_profile(r, b.qrs_onset - std::lround(0.25 * r.fs), b.qrs_onset);
}

double beat_window_profile(const Record& r, const BeatObservation& b) {
    const long h = std::lround(0.125 * r.fs);
    return segment_profile(r, b.qrs_peak - h, b.qrs_peak + h);
}

}  // namespace

const std::array<FeatureInfo, kGlobalFeatureCount>& global_feature_info() { return kGlobalInfo; }
const std::array<FeatureInfo, kBeatFeatureCount>& beat_feature_info() { return kBeatInfo; }

double profile(std::span<const double> segment) {
    if (segment.size() < 2) throw EvidenceError("profile: segment shorter than 2 samples");
    double s = 0.0;
    for (std::size_t i = 0; i + 1 < segment.size(); ++i) s += std::abs(segment[i + 1] - segment[i]);
    return s;
}

double pnn(std::span<const double> rr, double x) {
    if (rr.size() < 2) return 0.0;
    double c = 0.0;
    for (std::size_t i = 0; i + 1 < rr.size(); ++i) c += std::abs(rr[i + 1] - rr[i]) > x ? 1.0 : 0.0;
    return c / static_cast<double>(rr.size() - 1);
}

double rmssd(std::span<const double> rr) {
    if (rr.size() < 2) return 0.0;
    double s = 0.0;
    for (std::size_t i = 0; i + 1 < rr.size(); ++i) {
        const double d = rr[i + 1] - rr[i];
        s += d * d;
    }
    return std::sqrt(s / static_cast<double>(rr.size() - 1));
}

std::array<double, kRrStatCount> rr_statistics_ms(std::span<const double> rr) {
    if (rr.size() < 2) throw EvidenceError("rr_statistics: need at least 2 RR intervals");
    std::array<double, kRrStatCount> o{};
    const double med = median(rr);
    const double mn = mean(rr);
    o[0] = *std::min_element(rr.begin(), rr.end());
    o[1] = *std::max_element(rr.begin(), rr.end());
    o[2] = med;
    o[3] = mn;
    o[4] = stddev(rr);
    o[5] = mad(rr);
    o[6] = frac(o[5], med);
    o[7] = percentile(rr, 75.0) - percentile(rr, 25.0);
    o[8] = rmssd(rr);
    o[9] = pnn(rr, 5.0);
    o[10] = pnn(rr, 10.0);
    o[11] = pnn(rr, 50.0);
    o[12] = pnn(rr, 100.0);
    o[13] = frac(60000.0, mn);
    std::vector<double> d;
    for (std::size_t i = 0; i + 1 < rr.size(); ++i) d.push_back(rr[i + 1] - rr[i]);
    for (double v : d) o[14] = std::max(o[14], std::abs(v));
    if (d.size() >= 2) {
        double changes = 0.0;
        for (std::size_t i = 0; i + 1 < d.size(); ++i) changes += d[i] * d[i + 1] < 0.0 ? 1.0 : 0.0;
        o[15] = changes / static_cast<double>(d.size() - 1);
    }
    return o;
}

std::array<double, kRrStatCount> rr_statistics(std::span<const BeatObservation> beats, int fs) {
    if (beats.size() < 3) throw EvidenceError("rr_statistics: fewer than 3 beats");
    return rr_statistics_ms(rr_from_beats(beats, fs));
}

// ---------------------------------------------------------------------------
// Anomalies

std::array<double, 8> AnomalyFlags::as_vector() const {
    return {tachycardia ? 1.0 : 0.0,    bradycardia ? 1.0 : 0.0, wide_qrs ? 1.0 : 0.0, vent_or_fusion ? 1.0 : 0.0,
            extrasystole ? 1.0 : 0.0,   long_pr ? 1.0 : 0.0,     vent_tachy ? 1.0 : 0.0, flutter ? 1.0 : 0.0};
}

AnomalyFlags anomaly_rules(const AnomalyInputs& in, const AnomalyThresholds& th) {
    AnomalyFlags f;
    f.tachycardia = in.mean_hr_bpm && *in.mean_hr_bpm > th.tachy_bpm;
    f.bradycardia = in.mean_hr_bpm && *in.mean_hr_bpm < th.brady_bpm;
    f.wide_qrs = in.median_qrs_ms && *in.median_qrs_ms > th.wide_qrs_ms;
    f.long_pr = in.median_pr_ms && *in.median_pr_ms > th.long_pr_ms;
    f.vent_or_fusion = in.any_vent_or_fusion;
    f.extrasystole = in.extrasystole;
    f.vent_tachy = in.vent_tachy_episode;
    f.flutter = in.flutter_episode;
    return f;
}

bool has_extrasystole(std::span<const double> rr, const AnomalyThresholds& th) {
    const auto w = static_cast<std::size_t>(std::max(0, th.local_median_halfwidth));
    for (std::size_t k = 0; k + 1 < rr.size(); ++k) {
        // beat k+1 sits between rr[k] (previous) and rr[k+1] (next)
        const std::size_t lo = k >= w ? k - w : 0;
        const std::size_t hi = std::min(rr.size() - 1, k + w);
        const double lm = median(rr.subspan(lo, hi - lo + 1));
        if (rr[k] < th.extrasystole_prev_ratio * lm && rr[k + 1] > th.extrasystole_next_ratio * lm) return true;
    }
    return false;
}

AnomalyInputs anomaly_inputs(const Interpretation& itp, int fs, const AnomalyThresholds& th) {
    AnomalyInputs in;
    const auto& beats = itp.beats;
    const auto rr = rr_from_beats(beats, fs);
    if (!rr.empty()) in.mean_hr_bpm = 60000.0 / mean(rr);
    std::vector<double> qrs, pr;
    for (const auto& b : beats) {
        qrs.push_back(b.qrs_duration_ms(fs));
        if (b.p) pr.push_back(ms(b.qrs_onset - b.p->onset, fs));
        if (b.tag == BeatTag::Ventricular || b.tag == BeatTag::Fusion) in.any_vent_or_fusion = true;
    }
    if (!qrs.empty()) in.median_qrs_ms = median(qrs);
    if (!pr.empty()) in.median_pr_ms = median(pr);
    in.extrasystole = has_extrasystole(rr, th);
    for (const auto& e : itp.episodes) {
        if (e.pattern == RhythmPattern::VentTachy) in.vent_tachy_episode = true;
        if (e.pattern == RhythmPattern::Flutter) in.flutter_episode = true;
    }
    return in;
}

AnomalyFlags detect_anomalies(const Interpretation& itp, int fs, const AnomalyThresholds& th) {
    return anomaly_rules(anomaly_inputs(itp, fs, th), th);
}

// ---------------------------------------------------------------------------
// Global features

GlobalFeatures global_features(const Record& r, const Interpretation& itp, const AnomalyThresholds& th) {
    GlobalFeatures g;
    auto& v = g.v;
    const int fs = r.fs;
    const auto& beats = itp.beats;
    const double nb = static_cast<double>(beats.size());

    // Rhythm
    if (beats.size() >= 3) {
        const auto rs = rr_statistics(beats, fs);
        std::copy(rs.begin(), rs.end(), v.begin());
    }
    v[16] = static_cast<double>(itp.episodes.size());
    if (!itp.episodes.empty()) {
        const auto dur = episode_durations_s(itp, r);
        v[17] = median(dur);
        double sinus = 0.0, afib = 0.0, other = 0.0;
        for (std::size_t i = 0; i < dur.size(); ++i) {
            switch (itp.episodes[i].pattern) {
                case RhythmPattern::Sinus: sinus += dur[i]; break;
                case RhythmPattern::AFib: afib += dur[i]; break;
                case RhythmPattern::Unexplained: break;
                default: other += dur[i]; break;
            }
        }
        const double total = r.duration_s();
        v[18] = frac(sinus, total);
        v[19] = frac(afib, total);
        v[21] = frac(other, total);
    }
    v[20] = itp.unexplained_time_frac;

    // Morphology
    std::vector<double> p_dur, p_amp, pr, qrs_dur, qrs_amp, morph, t_dur, t_amp, qt, qtc, tp;
    double pos = 0.0, wide = 0.0, vent = 0.0, fusion = 0.0, t_count = 0.0;
    const auto rr = rr_from_beats(beats, fs);
    for (std::size_t i = 0; i < beats.size(); ++i) {
        const auto& b = beats[i];
        if (b.p) {
            p_dur.push_back(ms(b.p->offset - b.p->onset, fs));
            p_amp.push_back(b.p->amp);
            pr.push_back(ms(b.qrs_onset - b.p->onset, fs));
        }
        qrs_dur.push_back(b.qrs_duration_ms(fs));
        qrs_amp.push_back(std::abs(b.qrs_amp));
        morph.push_back(b.morph_dist);
        pos += b.qrs_polarity > 0 ? 1.0 : 0.0;
        wide += b.qrs_duration_ms(fs) > th.wide_qrs_ms ? 1.0 : 0.0;
        vent += b.tag == BeatTag::Ventricular ? 1.0 : 0.0;
        fusion += b.tag == BeatTag::Fusion ? 1.0 : 0.0;
        if (b.t) {
            t_count += 1.0;
            t_dur.push_back(ms(b.t->offset - b.t->onset, fs));
            t_amp.push_back(b.t->amp);
            const double q = ms(b.t->offset - b.qrs_onset, fs);
            qt.push_back(q);
            const double rr_s = (i < rr.size() ? rr[i] : (rr.empty() ? 0.0 : rr.back())) / 1000.0;
            if (rr_s > 0.0) qtc.push_back(q / std::sqrt(rr_s));
        }
    }
    v[22] = frac(static_cast<double>(p_dur.size()), nb);
    v[23] = med0(p_dur);
    v[24] = med0(p_amp);
    v[25] = mad0(p_amp);
    v[26] = med0(pr);
    v[27] = mad0(pr);
    v[28] = med0(qrs_dur);
    v[29] = mad0(qrs_dur);
    v[30] = med0(qrs_amp);
    v[31] = mad0(qrs_amp);
    v[32] = frac(pos, nb);
    v[33] = frac(wide, nb);
    v[34] = med0(morph);
    v[35] = morph.empty() ? 0.0 : *std::max_element(morph.begin(), morph.end());
    v[36] = frac(vent, nb);
    v[37] = frac(fusion, nb);
    v[38] = frac(t_count, nb);
    v[39] = med0(t_dur);
    v[40] = med0(t_amp);
    v[41] = mad0(t_amp);
    v[42] = med0(qt);
    v[43] = med0(qtc);

    // TP segments: durations, averaged band spectrum, baseline activity.
    const long ns = static_cast<long>(r.samples.size());
    const long min_len = std::max(16L, std::lround(0.1 * fs));
    std::vector<double> spec_sum, freqs;
    double spec_count = 0.0, tp_profile = 0.0, tp_seconds = 0.0;
    for (std::size_t i = 0; i + 1 < beats.size(); ++i) {
        auto [s, e] = tp_segment(beats[i], beats[i + 1], fs);
        s = std::clamp(s, 0L, ns);
        e = std::clamp(e, 0L, ns);
        if (e - s < 2) continue;
        tp.push_back(ms(e - s, fs));
        const std::span<const double> seg(r.samples.data() + s, static_cast<std::size_t>(e - s));
        tp_profile += profile(seg);
        tp_seconds += static_cast<double>(e - s) / fs;
        if (e - s < min_len) continue;
        auto [f, m] = band_spectrum(seg, fs, 1.0, 30.0);
        if (spec_sum.empty()) {
            spec_sum.assign(m.size(), 0.0);
            freqs = f;
        }
        for (std::size_t k = 0; k < m.size(); ++k) spec_sum[k] += m[k];
        spec_count += 1.0;
    }
    v[44] = med0(tp);
    if (spec_count > 0.0) {
        const auto it = std::max_element(spec_sum.begin(), spec_sum.end());
        v[45] = freqs[static_cast<std::size_t>(it - spec_sum.begin())];
        const double med = median(spec_sum);
        v[46] = med > 1e-15 ? *it / med : 0.0;
        double band = 0.0, total = 0.0;
        for (std::size_t k = 0; k < spec_sum.size(); ++k) {
            const double pw = spec_sum[k] * spec_sum[k];
            total += pw;
            if (freqs[k] >= 4.0 && freqs[k] <= 9.0) band += pw;
        }
        v[47] = frac(band, total);
    }

    // Quality
    std::vector<double> beat_prof, p_prof;
    for (const auto& b : beats) {
        beat_prof.push_back(beat_window_profile(r, b));
        p_prof.push_back(p_window_profile(r, b));
    }
    const double rec_prof = r.samples.size() >= 2 ? profile(r.samples) : 0.0;
    v[48] = med0(beat_prof);
    v[49] = mad0(beat_prof);
    v[50] = med0(p_prof);
    v[51] = frac(tp_profile, tp_seconds);
    v[52] = frac(rec_prof, r.duration_s());
    const double initial = static_cast<double>(itp.initial_beat_count);
    v[53] = frac(itp.deleted_count, initial);
    v[54] = frac(itp.inserted_count, initial);
    v[55] = frac(v[50], v[48]);
    v[56] = frac(v[51], v[52]);
    double beat_sum = 0.0;
    for (double p : beat_prof) beat_sum += p;
    v[57] = frac(rec_prof, beat_sum);
    v[58] = frac(initial, r.duration_s());
    double second = 0.0;
    for (std::size_t i = 2; i < r.samples.size(); ++i)
        second += std::abs(r.samples[i] - 2.0 * r.samples[i - 1] + r.samples[i - 2]);
    v[59] = frac(second, rec_prof);
    v[60] = frac(percentile(r.samples, 99.0) - percentile(r.samples, 1.0), v[30]);
    v[61] = frac(itp.total_cost, nb);

    const auto flags = detect_anomalies(itp, fs, th).as_vector();
    std::copy(flags.begin(), flags.end(), v.begin() + 62);

    for (double& x : v)
        if (!std::isfinite(x)) x = 0.0;
    return g;
}

// ---------------------------------------------------------------------------
// Per-beat features

BeatFeatureSequence beat_features(const Record& r, const Interpretation& itp) {
    const auto& beats = itp.beats;
    const int fs = r.fs;
    if (beats.size() < 3) throw EvidenceError("beat_features: fewer than 3 beats");
    const auto rr = rr_from_beats(beats, fs);
    const double med = median(rr);
    const std::size_t n = beats.size();
    const long ns = static_cast<long>(r.samples.size());
    auto rr_prev = [&](std::size_t i) { return i >= 1 ? rr[i - 1] : med; };
    auto rr_next = [&](std::size_t i) { return i + 1 < n ? rr[i] : med; };

    BeatFeatureSequence out;
    out.rows.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto& b = beats[i];
        auto& row = out.rows[i];
        row[0] = rr_prev(i);
        row[1] = rr_next(i);
        row[2] = i >= 1 ? rr_prev(i) - rr_prev(i - 1) : 0.0;
        row[3] = rr_next(i) - rr_prev(i);
        row[4] = frac(rr_prev(i), med);
        if (b.p) {
            row[5] = 1.0;
            row[6] = ms(b.p->offset - b.p->onset, fs);
            row[7] = b.p->amp;
            row[8] = ms(b.qrs_onset - b.p->onset, fs);
        }
        row[9] = b.qrs_duration_ms(fs);
        row[10] = b.qrs_amp;
        row[11] = b.qrs_polarity;
        row[12] = b.morph_dist;
        if (b.t) {
            row[13] = ms(b.t->offset - b.qrs_onset, fs);
            row[14] = ms(b.t->offset - b.t->onset, fs);
            row[15] = b.t->amp;
            row[16] = b.t->amp < 0.0 ? -1.0 : 1.0;
        }
        row[17] = p_window_profile(r, b);
        // Baseline activity in the TP segment that follows (the last beat
        // uses the one before it).
        const std::size_t a = i + 1 < n ? i : i - 1;
        auto [s, e] = tp_segment(beats[a], beats[a + 1], fs);
        s = std::clamp(s, 0L, ns);
        e = std::clamp(e, 0L, ns);
        if (e - s >= 2) row[18] = segment_profile(r, s, e - 1) * fs / static_cast<double>(e - s);
        row[19] = b.tag == BeatTag::Normal ? 1.0 : 0.0;
        row[20] = b.tag == BeatTag::Ventricular ? 1.0 : 0.0;
        row[21] = b.tag == BeatTag::Fusion ? 1.0 : 0.0;
        for (double& x : row)
            if (!std::isfinite(x)) x = 0.0;
    }
    return out;
}

BeatFeatureSequence beat_features_or_placeholder(const Record& r, const Interpretation& itp) {
    if (itp.beats.size() < 3) {
        BeatFeatureSequence s;
        s.rows.push_back({});
        return s;
    }
    return beat_features(r, itp);
}

// ---------------------------------------------------------------------------
// CSV

namespace {

std::string num(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

}  // namespace

std::string global_features_csv_header() {
    std::string s = "record_id";
    for (const auto& f : kGlobalInfo) (s += ',') += f.name;
    return s + '\n';
}

std::string global_features_csv_row(const std::string& record_id, const GlobalFeatures& f) {
    std::string s = record_id;
    for (double x : f.v) (s += ',') += num(x);
    return s + '\n';
}

std::string beat_features_csv_header() {
    std::string s = "record_id,beat_idx";
    for (const auto& f : kBeatInfo) (s += ',') += f.name;
    return s + '\n';
}

std::string beat_features_csv_rows(const std::string& record_id, const BeatFeatureSequence& seq) {
    std::ostringstream os;
    for (std::size_t i = 0; i < seq.rows.size(); ++i) {
        os << record_id << ',' << i;
        for (double x : seq.rows[i]) os << ',' << num(x);
        os << '\n';
    }
    return os.str();
}

}  // namespace ecgr
