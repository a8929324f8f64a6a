#include "ecgr/interpretation.hpp"

#include "ecgr/features.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace ecgr {

const char* to_string(RhythmPattern p) {
    switch (p) {
        case RhythmPattern::Sinus: return "SINUS";
        case RhythmPattern::AFib: return "AFIB";
        case RhythmPattern::Tachy: return "TACHY";
        case RhythmPattern::Brady: return "BRADY";
        case RhythmPattern::Flutter: return "FLUTTER";
        case RhythmPattern::Bigeminy: return "BIGEMINY";
        case RhythmPattern::Trigeminy: return "TRIGEMINY";
        case RhythmPattern::VentTachy: return "VENT_TACHY";
        case RhythmPattern::Unexplained: return "UNEXPLAINED";
    }
    return "?";
}

std::optional<RhythmPattern> pattern_from_string(std::string_view s) {
    for (auto p : kAllPatterns)
        if (s == to_string(p)) return p;
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// Spectra

std::pair<std::vector<double>, std::vector<double>> band_spectrum(std::span<const double> segment, int fs,
                                                                  double lo_hz, double hi_hz, std::size_t nfft) {
    std::vector<double> freqs, mags;
    const std::size_t len = std::min(segment.size(), nfft);
    const double m = mean(segment.first(len));
    std::vector<double> w(len);
    for (std::size_t i = 0; i < len; ++i) {
        const double hann =
            len > 1 ? 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(len - 1)))
                    : 1.0;
        w[i] = (segment[i] - m) * hann;
    }
    for (std::size_t k = 0; k <= nfft / 2; ++k) {
        const double f = static_cast<double>(k) * fs / static_cast<double>(nfft);
        if (f < lo_hz || f > hi_hz) continue;
        double re = 0.0, im = 0.0;
        const double step = -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(nfft);
        for (std::size_t i = 0; i < len; ++i) {
            re += w[i] * std::cos(step * static_cast<double>(i));
            im += w[i] * std::sin(step * static_cast<double>(i));
        }
        freqs.push_back(f);
        mags.push_back(std::hypot(re, im));
    }
    return {freqs, mags};
}

std::pair<long, long> tp_segment(const BeatObservation& a, const BeatObservation& b, int fs) {
    const long start = a.t ? a.t->offset + 1 : a.qrs_offset + std::lround(0.25 * fs);
    const long end = b.p ? b.p->onset : b.qrs_onset;
    if (end - start < 2) return {0, 0};
    return {start, end};
}

// ---------------------------------------------------------------------------
// Evidence

RhythmEvidence::RhythmEvidence(const Record& r, std::span<const BeatObservation> beats,
                               const InterpretationConfig& cfg)
    : cfg_(cfg) {
    const std::size_t n = beats.size();
    p_present_.resize(n);
    ventricular_.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        p_present_[i] = beats[i].p.has_value();
        ventricular_[i] = beats[i].tag == BeatTag::Ventricular;
        if (i + 1 < n)
            rr_.push_back(static_cast<double>(beats[i + 1].qrs_peak - beats[i].qrs_peak) * 1000.0 / r.fs);
    }

    const std::size_t gaps = n > 0 ? n - 1 : 0;
    tp_prefix_.assign(gaps + 1, 0.0);
    count_prefix_.assign(gaps + 1, 0.0);
    spec_prefix_.assign(gaps + 1, {});
    const long ns = static_cast<long>(r.samples.size());
    const long min_len = std::max(16L, std::lround(0.1 * r.fs));
    for (std::size_t g = 0; g < gaps; ++g) {
        auto [s, e] = tp_segment(beats[g], beats[g + 1], r.fs);
        s = std::clamp(s, 0L, ns);
        e = std::clamp(e, 0L, ns);
        std::vector<double> mags;
        if (e - s >= min_len) {
            auto [f, mg] = band_spectrum(
                std::span<const double>(r.samples.data() + s, static_cast<std::size_t>(e - s)), r.fs,
                cfg_.spectrum_low_hz, cfg_.spectrum_high_hz);
            if (bin_hz_.empty()) bin_hz_ = f;
            mags = std::move(mg);
        }
        auto& prev = spec_prefix_[g];
        auto& next = spec_prefix_[g + 1];
        if (!mags.empty()) {
            next = prev.empty() ? std::vector<double>(mags.size(), 0.0) : prev;
            for (std::size_t k = 0; k < mags.size(); ++k) next[k] += mags[k];
            tp_prefix_[g + 1] = tp_prefix_[g] + static_cast<double>(e - s) / r.fs;
            count_prefix_[g + 1] = count_prefix_[g] + 1.0;
        } else {
            next = prev;
            tp_prefix_[g + 1] = tp_prefix_[g];
            count_prefix_[g + 1] = count_prefix_[g];
        }
    }
}

RhythmEvidence::SpanSpectrum RhythmEvidence::tp_spectrum(BeatSpan span) const {
    SpanSpectrum out;
    if (span.last <= span.first || span.last >= spec_prefix_.size()) return out;
    const double count = count_prefix_[span.last] - count_prefix_[span.first];
    if (count <= 0.0) return out;
    out.tp_seconds = tp_prefix_[span.last] - tp_prefix_[span.first];
    const auto& hi = spec_prefix_[span.last];
    const auto& lo = spec_prefix_[span.first];
    std::vector<double> avg(hi.size());
    for (std::size_t k = 0; k < hi.size(); ++k) avg[k] = (hi[k] - (lo.empty() ? 0.0 : lo[k])) / count;
    if (avg.empty()) return out;
    const auto it = std::max_element(avg.begin(), avg.end());
    out.peak_hz = bin_hz_[static_cast<std::size_t>(it - avg.begin())];
    const double med = median(avg);
    out.prominence = med > 1e-15 ? *it / med : 0.0;
    return out;
}

PatternMatch match_pattern(RhythmPattern pattern, const RhythmEvidence& ev, BeatSpan span) {
    const std::size_t n = ev.beat_count();
    if (span.first > span.last || span.last >= n) throw ArgumentError("match_pattern: span outside beat list");
    const auto& cfg = ev.config();
    const std::size_t m = span.size();
    if (pattern == RhythmPattern::Unexplained) return {true, cfg.unexplained_beat_cost * static_cast<double>(m)};
    if (m < cfg.min_episode_beats || m < 2) return {false, 0.0};

    const auto rr = ev.rr_ms().subspan(span.first, m - 1);
    const double med = median(rr);
    const double mean_rr = mean(rr);
    if (!(med > 0.0) || !(mean_rr > 0.0)) return {false, 0.0};
    const double median_hr = 60000.0 / med;
    const double mean_hr = 60000.0 / mean_rr;
    const double irregularity = mad(rr) / med;
    double p_count = 0.0, v_count = 0.0;
    for (std::size_t i = span.first; i <= span.last; ++i) {
        p_count += ev.p_present(i) ? 1.0 : 0.0;
        v_count += ev.ventricular(i) ? 1.0 : 0.0;
    }
    const double p_frac = p_count / static_cast<double>(m);
    const double v_frac = v_count / static_cast<double>(m);
    double breaks = 0.0;
    for (double v : rr) {
        const double q = v / med;
        if (q < cfg.rr_break_low || q > cfg.rr_break_high) breaks += 1.0;
    }
    const double irregularity_term = cfg.irregularity_weight * std::max(0.0, irregularity - cfg.irregularity_tolerance) +
                                     cfg.rr_break_cost * breaks;

    switch (pattern) {
        case RhythmPattern::Sinus:
            return {median_hr >= cfg.sinus_min_bpm && median_hr <= cfg.sinus_max_bpm &&
                        p_frac >= cfg.sinus_min_p_fraction,
                    irregularity_term};
        case RhythmPattern::Brady: return {mean_hr < cfg.brady_max_bpm, irregularity_term};
        case RhythmPattern::Tachy: return {mean_hr > cfg.tachy_min_bpm, irregularity_term};
        case RhythmPattern::AFib:
            return {irregularity >= cfg.afib_min_irregularity && p_frac <= cfg.afib_max_p_fraction,
                    cfg.afib_p_weight * p_frac};
        case RhythmPattern::Flutter: {
            const auto s = ev.tp_spectrum(span);
            const bool ok = s.tp_seconds >= cfg.flutter_min_tp_s && s.peak_hz >= cfg.flutter_low_hz &&
                            s.peak_hz <= cfg.flutter_high_hz && s.prominence >= cfg.flutter_prominence;
            return {ok, irregularity_term};
        }
        case RhythmPattern::Bigeminy:
        case RhythmPattern::Trigeminy: {
            const std::size_t period = pattern == RhythmPattern::Bigeminy ? 2 : 3;
            double best_breaks = std::numeric_limits<double>::infinity();
            double best_hits = 0.0;
            for (std::size_t phase = 0; phase < period; ++phase) {
                double br = 0.0, hits = 0.0;
                for (std::size_t i = span.first; i <= span.last; ++i) {
                    const bool expect_v = (i - span.first) % period == phase;
                    if (expect_v != ev.ventricular(i)) br += 1.0;
                    if (expect_v && ev.ventricular(i)) hits += 1.0;
                }
                if (br < best_breaks) {
                    best_breaks = br;
                    best_hits = hits;
                }
            }
            const bool ok = best_hits >= 2.0 &&
                            best_breaks <= std::floor(cfg.ectopy_max_break_fraction * static_cast<double>(m));
            return {ok, best_breaks};
        }
        case RhythmPattern::VentTachy:
            return {mean_hr > cfg.tachy_min_bpm && v_frac >= cfg.vt_min_ventricular_fraction, 0.0};
        case RhythmPattern::Unexplained: break;
    }
    throw ArgumentError("match_pattern: unknown pattern");
}

// ---------------------------------------------------------------------------
// Search

namespace {

struct Hypothesis {
    double cost = 0.0;
    std::vector<RhythmEpisode> episodes;
};

// Lower cost first; equal costs by pattern order then earlier span start,
// episode by episode.
bool better(const Hypothesis& a, const Hypothesis& b) {
    if (a.cost != b.cost) return a.cost < b.cost;
    const std::size_t k = std::min(a.episodes.size(), b.episodes.size());
    for (std::size_t i = 0; i < k; ++i) {
        const auto& x = a.episodes[i];
        const auto& y = b.episodes[i];
        if (x.pattern != y.pattern) return x.pattern < y.pattern;
        if (x.first != y.first) return x.first < y.first;
        if (x.last != y.last) return x.last < y.last;
    }
    return a.episodes.size() < b.episodes.size();
}

class MatchCache {
public:
    explicit MatchCache(const RhythmEvidence& ev) : ev_(ev), n_(ev.beat_count()) {
        cache_.resize(n_ * n_ * kAllPatterns.size());
    }
    const PatternMatch& get(RhythmPattern p, std::size_t first, std::size_t last) {
        auto& slot = cache_[(first * n_ + last) * kAllPatterns.size() + static_cast<std::size_t>(p)];
        if (!slot) slot = match_pattern(p, ev_, {first, last});
        return *slot;
    }

private:
    const RhythmEvidence& ev_;
    std::size_t n_;
    std::vector<std::optional<PatternMatch>> cache_;
};

}  // namespace

Tiling best_tiling(const RhythmEvidence& ev) { return best_tiling(ev, ev.config().beam_width); }

Tiling best_tiling(const RhythmEvidence& ev, int beam_width) {
    const std::size_t n = ev.beat_count();
    const auto& cfg = ev.config();
    Tiling out;
    if (n == 0) return out;
    const auto width = static_cast<std::size_t>(std::max(1, beam_width));
    MatchCache cache(ev);
    std::vector<std::vector<Hypothesis>> beam(n + 1);
    beam[0].push_back({});

    auto prune = [width](std::vector<Hypothesis>& hs) {
        if (hs.size() <= width) return;
        std::partial_sort(hs.begin(), hs.begin() + static_cast<std::ptrdiff_t>(width), hs.end(), better);
        hs.resize(width);
    };

    for (std::size_t k = 0; k < n; ++k) {
        prune(beam[k]);
        std::sort(beam[k].begin(), beam[k].end(), better);
        for (const auto& h : beam[k]) {
            for (std::size_t last = k; last < n; ++last) {
                for (auto p : kAllPatterns) {
                    if (p != RhythmPattern::Unexplained && last - k + 1 < cfg.min_episode_beats) continue;
                    const auto& m = cache.get(p, k, last);
                    if (!m.admissible) continue;
                    Hypothesis next;
                    next.cost = h.cost;
                    if (k > 0) next.cost += cfg.switch_cost;
                    next.cost += m.penalty;
                    auto& dest = beam[last + 1];
                    if (dest.size() >= width) {
                        // cheap reject against the current worst when already full
                        const auto worst = std::max_element(dest.begin(), dest.end(), better);
                        if (worst->cost < next.cost) continue;
                    }
                    next.episodes = h.episodes;
                    next.episodes.push_back({p, k, last, m.penalty});
                    dest.push_back(std::move(next));
                    if (dest.size() > 2 * width) prune(dest);
                }
            }
        }
        beam[k].clear();
        beam[k].shrink_to_fit();
    }
    prune(beam[n]);
    const auto best = std::min_element(beam[n].begin(), beam[n].end(), better);
    out.cost = best->cost;
    out.episodes = best->episodes;
    return out;
}

double tiling_cost(const RhythmEvidence& ev, std::span<const RhythmEpisode> episodes) {
    const auto& cfg = ev.config();
    if (!tiles_exactly(episodes, ev.beat_count())) return std::numeric_limits<double>::infinity();
    double c = 0.0;
    for (std::size_t i = 0; i < episodes.size(); ++i) {
        const auto& e = episodes[i];
        if (e.pattern != RhythmPattern::Unexplained && e.last - e.first + 1 < cfg.min_episode_beats)
            return std::numeric_limits<double>::infinity();
        const auto m = match_pattern(e.pattern, ev, {e.first, e.last});
        if (!m.admissible) return std::numeric_limits<double>::infinity();
        if (i > 0) c += cfg.switch_cost;
        c += m.penalty;
    }
    return c;
}

bool tiles_exactly(std::span<const RhythmEpisode> episodes, std::size_t beat_count) {
    if (beat_count == 0) return episodes.empty();
    std::size_t next = 0;
    for (const auto& e : episodes) {
        if (e.first != next || e.last < e.first || e.last >= beat_count) return false;
        next = e.last + 1;
    }
    return next == beat_count;
}

// ---------------------------------------------------------------------------
// Evidence repair

namespace {

double window_profile(const Record& r, const BeatObservation& b, double window_ms) {
    const long n = static_cast<long>(r.samples.size());
    const long h = std::lround(window_ms / 2000.0 * r.fs);
    const long lo = std::max(0L, b.qrs_peak - h), hi = std::min(n - 1, b.qrs_peak + h);
    if (hi - lo < 1) return 0.0;
    return profile(std::span<const double>(r.samples.data() + lo, static_cast<std::size_t>(hi - lo + 1)));
}

long beat_end(const BeatObservation& b) { return b.t ? b.t->offset : b.qrs_offset; }

}  // namespace

RepairResult repair_evidence(const Record& r, std::vector<BeatObservation> beats, const Tiling& tiling,
                             const InterpretationConfig& cfg, const ConductionConfig& ccfg) {
    RepairResult res;
    res.tiling = tiling;
    double cost = tiling.cost;
    res.cost_trace.push_back(cost);
    const long ns = static_cast<long>(r.samples.size());

    auto evaluate = [&](const std::vector<BeatObservation>& bs) { return best_tiling(RhythmEvidence(r, bs, cfg)); };

    for (int pass = 1; pass <= cfg.max_repair_passes; ++pass) {
        bool applied = false;
        res.passes = pass;

        // (a) deletions of low-activity beats that lower the cost
        for (std::size_t i = 0; i < beats.size() && beats.size() > 2;) {
            std::vector<double> profiles(beats.size());
            for (std::size_t k = 0; k < beats.size(); ++k)
                profiles[k] = window_profile(r, beats[k], cfg.profile_window_ms);
            const double thr = cfg.delete_profile_ratio * median(profiles);
            if (profiles[i] < thr) {
                auto cand = beats;
                cand.erase(cand.begin() + static_cast<std::ptrdiff_t>(i));
                auto t = evaluate(cand);
                if (t.cost < cost) {
                    EvidenceEdit e;
                    e.op = EvidenceEdit::Op::Delete;
                    e.sample_index = beats[i].qrs_peak;
                    e.pass = pass;
                    e.cost_before = cost;
                    e.cost_after = t.cost;
                    e.window_profile = profiles[i];
                    e.profile_threshold = thr;
                    res.edits.push_back(e);
                    BeatObservation gone = beats[i];
                    gone.tag = BeatTag::Spurious;
                    res.deleted.push_back(gone);
                    beats = std::move(cand);
                    res.tiling = std::move(t);
                    cost = res.tiling.cost;
                    applied = true;
                    continue;
                }
            }
            ++i;
        }

        // (b) insertions at the midpoint of gaps about twice the local RR
        if (beats.size() >= 2) {
            std::optional<TemplateResult> tmpl;
            double med_qrs_ms = 0.0, med_amp = 0.0;
            {
                std::vector<double> d, a;
                for (const auto& b : beats) {
                    d.push_back(b.qrs_duration_ms(r.fs));
                    a.push_back(std::abs(b.qrs_amp));
                }
                med_qrs_ms = median(d);
                med_amp = median(a);
            }
            if (beats.size() >= 3) tmpl = dominant_template(r, beats, ccfg);
            const long search = std::lround(cfg.insert_search_ms * r.fs / 1000.0);
            for (std::size_t g = 0; g + 1 < beats.size(); ++g) {
                std::vector<double> rr(beats.size() - 1);
                for (std::size_t k = 0; k + 1 < beats.size(); ++k)
                    rr[k] = static_cast<double>(beats[k + 1].qrs_peak - beats[k].qrs_peak);
                std::vector<double> local;
                const auto lg = static_cast<std::size_t>(std::max(1, cfg.local_median_gaps));
                for (std::size_t k = (g >= lg ? g - lg : 0); k <= std::min(rr.size() - 1, g + lg); ++k)
                    if (k != g) local.push_back(rr[k]);
                if (local.empty()) continue;
                const double lm = median(local);
                if (!(lm > 0.0) || rr[g] < cfg.insert_gap_low * lm || rr[g] > cfg.insert_gap_high * lm) continue;

                const long pred = (beats[g].qrs_peak + beats[g + 1].qrs_peak) / 2;
                const long lo = std::max(pred - search, 1L), hi = std::min(pred + search, ns - 2);
                if (hi - lo < 2) continue;
                long idx = lo;
                for (long i = lo; i <= hi; ++i)
                    if (std::abs(r.samples[static_cast<std::size_t>(i)]) > std::abs(r.samples[static_cast<std::size_t>(idx)]))
                        idx = i;
                if (idx == lo || idx == hi) continue;  // not a local extremum
                if (std::abs(r.samples[static_cast<std::size_t>(idx)]) < cfg.insert_amp_ratio * med_amp) continue;
                if (idx <= beats[g].qrs_offset || idx >= beats[g + 1].qrs_onset) continue;

                auto cand = beats;
                try {
                    const long approx_on = idx - std::min(std::lround(ccfg.qrs_max_half_ms * r.fs / 1000.0),
                                                          (idx - beats[g].qrs_peak) / 2);
                    const long prev_prev_end = g > 0 ? beat_end(beats[g - 1]) : -1;
                    BeatObservation left = delineate_beat(r, beats[g].qrs_peak, prev_prev_end, approx_on, ccfg);
                    left.tag = beats[g].tag;
                    left.morph_dist = beats[g].morph_dist;
                    BeatObservation mid = delineate_beat(r, idx, beat_end(left), beats[g + 1].qrs_onset, ccfg);
                    if (tmpl) {
                        mid.morph_dist = correlation_distance(qrs_snippet(r, idx, ccfg), tmpl->qrs_template.waveform);
                        mid.tag = tag_beat(mid.morph_dist, mid.qrs_duration_ms(r.fs), med_qrs_ms, ccfg);
                    }
                    const long right_next = g + 2 < beats.size() ? beats[g + 2].qrs_onset : ns;
                    BeatObservation right = delineate_beat(r, beats[g + 1].qrs_peak, beat_end(mid), right_next, ccfg);
                    right.tag = beats[g + 1].tag;
                    right.morph_dist = beats[g + 1].morph_dist;
                    if (!left.well_formed() || !mid.well_formed() || !right.well_formed()) continue;
                    cand[g] = left;
                    cand[g + 1] = right;
                    cand.insert(cand.begin() + static_cast<std::ptrdiff_t>(g + 1), mid);
                } catch (const EvidenceError&) {
                    continue;
                }
                auto t = evaluate(cand);
                if (t.cost < cost) {
                    EvidenceEdit e;
                    e.op = EvidenceEdit::Op::Insert;
                    e.sample_index = idx;
                    e.pass = pass;
                    e.cost_before = cost;
                    e.cost_after = t.cost;
                    res.edits.push_back(e);
                    beats = std::move(cand);
                    res.tiling = std::move(t);
                    cost = res.tiling.cost;
                    applied = true;
                    ++g;  // skip the new beat
                }
            }
        }

        res.cost_trace.push_back(cost);
        if (!applied) break;
    }
    res.beats = std::move(beats);
    return res;
}

Interpretation abstract_rhythms(const Record& r, std::vector<BeatObservation> beats, const InterpretationConfig& cfg,
                                const ConductionConfig& ccfg) {
    Interpretation itp;
    itp.initial_beat_count = beats.size();
    if (beats.size() < 2) {
        itp.beats = std::move(beats);
        if (!itp.beats.empty()) {
            itp.episodes.push_back({RhythmPattern::Unexplained, 0, 0, cfg.unexplained_beat_cost});
            itp.total_cost = cfg.unexplained_beat_cost;
        }
        itp.unexplained_time_frac = 1.0;
        return itp;
    }
    const Tiling initial = best_tiling(RhythmEvidence(r, beats, cfg));
    auto rep = repair_evidence(r, std::move(beats), initial, cfg, ccfg);
    itp.beats = std::move(rep.beats);
    itp.episodes = std::move(rep.tiling.episodes);
    itp.total_cost = rep.tiling.cost;
    itp.edits = std::move(rep.edits);
    itp.deleted = std::move(rep.deleted);
    itp.repair_passes = rep.passes;
    itp.cost_trace = std::move(rep.cost_trace);
    for (const auto& e : itp.edits) (e.op == EvidenceEdit::Op::Delete ? itp.deleted_count : itp.inserted_count)++;

    const auto dur = episode_durations_s(itp, r);
    double unexplained = 0.0;
    for (std::size_t i = 0; i < itp.episodes.size(); ++i)
        if (itp.episodes[i].pattern == RhythmPattern::Unexplained) unexplained += dur[i];
    itp.unexplained_time_frac = std::clamp(unexplained / r.duration_s(), 0.0, 1.0);
    return itp;
}

std::vector<double> episode_durations_s(const Interpretation& itp, const Record& r) {
    std::vector<double> out;
    const auto& eps = itp.episodes;
    const double n = static_cast<double>(r.samples.size());
    for (std::size_t i = 0; i < eps.size(); ++i) {
        double start = 0.0, end = n;
        if (i > 0)
            start = 0.5 * static_cast<double>(itp.beats[eps[i - 1].last].qrs_peak + itp.beats[eps[i].first].qrs_peak);
        if (i + 1 < eps.size())
            end = 0.5 * static_cast<double>(itp.beats[eps[i].last].qrs_peak + itp.beats[eps[i + 1].first].qrs_peak);
        out.push_back((end - start) / r.fs);
    }
    return out;
}

// ---------------------------------------------------------------------------
// JSON

namespace {

nlohmann::json wave_json(const std::optional<Wave>& w) {
    if (!w) return nullptr;
    return {{"onset", w->onset}, {"peak", w->peak}, {"offset", w->offset}, {"amp", w->amp}};
}

std::optional<Wave> wave_from(const nlohmann::json& j) {
    if (j.is_null()) return std::nullopt;
    return Wave{j.at("onset").get<long>(), j.at("peak").get<long>(), j.at("offset").get<long>(),
                j.at("amp").get<double>()};
}

nlohmann::json beat_json(const BeatObservation& b) {
    nlohmann::json j;
    j["qrs_onset"] = b.qrs_onset;
    j["qrs_peak"] = b.qrs_peak;
    j["qrs_offset"] = b.qrs_offset;
    j["tag"] = to_string(b.tag);
    j["p_peak"] = b.p ? nlohmann::json(b.p->peak) : nlohmann::json(nullptr);
    j["t_peak"] = b.t ? nlohmann::json(b.t->peak) : nlohmann::json(nullptr);
    j["qrs_amp"] = b.qrs_amp;
    j["qrs_polarity"] = b.qrs_polarity;
    j["morph_dist"] = b.morph_dist;
    j["p"] = wave_json(b.p);
    j["t"] = wave_json(b.t);
    return j;
}

BeatObservation beat_from(const nlohmann::json& j) {
    BeatObservation b;
    b.qrs_onset = j.at("qrs_onset").get<long>();
    b.qrs_peak = j.at("qrs_peak").get<long>();
    b.qrs_offset = j.at("qrs_offset").get<long>();
    const auto tag = beat_tag_from_string(j.at("tag").get<std::string>());
    if (!tag) throw FormatError("interpretation: unknown beat tag");
    b.tag = *tag;
    b.qrs_amp = j.value("qrs_amp", 0.0);
    b.qrs_polarity = j.value("qrs_polarity", 1);
    b.morph_dist = j.value("morph_dist", 0.0);
    if (j.contains("p")) b.p = wave_from(j.at("p"));
    if (j.contains("t")) b.t = wave_from(j.at("t"));
    return b;
}

}  // namespace

std::string interpretation_to_json(const Interpretation& itp) {
    nlohmann::json j;
    j["version"] = 1;
    j["beats"] = nlohmann::json::array();
    for (const auto& b : itp.beats) j["beats"].push_back(beat_json(b));
    j["episodes"] = nlohmann::json::array();
    for (const auto& e : itp.episodes)
        j["episodes"].push_back({{"pattern", to_string(e.pattern)}, {"first", e.first}, {"last", e.last}, {"score", e.score}});
    j["edits"] = nlohmann::json::array();
    for (const auto& e : itp.edits)
        j["edits"].push_back({{"op", e.op == EvidenceEdit::Op::Delete ? "del" : "ins"},
                              {"sample_index", e.sample_index},
                              {"pass", e.pass},
                              {"cost_before", e.cost_before},
                              {"cost_after", e.cost_after},
                              {"window_profile", e.window_profile},
                              {"profile_threshold", e.profile_threshold}});
    j["deleted"] = nlohmann::json::array();
    for (const auto& b : itp.deleted) j["deleted"].push_back(beat_json(b));
    j["initial_beat_count"] = itp.initial_beat_count;
    j["deleted_count"] = itp.deleted_count;
    j["inserted_count"] = itp.inserted_count;
    j["unexplained_time_frac"] = itp.unexplained_time_frac;
    j["total_cost"] = itp.total_cost;
    return j.dump(1);
}

Interpretation interpretation_from_json(const std::string& text) {
    Interpretation itp;
    try {
        const auto j = nlohmann::json::parse(text);
        for (const auto& b : j.at("beats")) itp.beats.push_back(beat_from(b));
        for (const auto& e : j.at("episodes")) {
            const auto p = pattern_from_string(e.at("pattern").get<std::string>());
            if (!p) throw FormatError("interpretation: unknown pattern");
            itp.episodes.push_back({*p, e.at("first").get<std::size_t>(), e.at("last").get<std::size_t>(),
                                    e.value("score", 0.0)});
        }
        for (const auto& e : j.at("edits")) {
            EvidenceEdit ed;
            const auto op = e.at("op").get<std::string>();
            if (op != "del" && op != "ins") throw FormatError("interpretation: unknown edit op");
            ed.op = op == "del" ? EvidenceEdit::Op::Delete : EvidenceEdit::Op::Insert;
            ed.sample_index = e.at("sample_index").get<long>();
            ed.pass = e.value("pass", 0);
            ed.cost_before = e.value("cost_before", 0.0);
            ed.cost_after = e.value("cost_after", 0.0);
            ed.window_profile = e.value("window_profile", 0.0);
            ed.profile_threshold = e.value("profile_threshold", 0.0);
            itp.edits.push_back(ed);
        }
        if (j.contains("deleted"))
            for (const auto& b : j.at("deleted")) itp.deleted.push_back(beat_from(b));
        itp.initial_beat_count = j.value("initial_beat_count", itp.beats.size());
        itp.deleted_count = j.value("deleted_count", 0);
        itp.inserted_count = j.value("inserted_count", 0);
        itp.unexplained_time_frac = j.value("unexplained_time_frac", 0.0);
        itp.total_cost = j.value("total_cost", 0.0);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("interpretation: ") + e.what());
    }
    if (!tiles_exactly(itp.episodes, itp.beats.size())) throw FormatError("interpretation: episodes do not tile beats");
    return itp;
}

}  // namespace ecgr
