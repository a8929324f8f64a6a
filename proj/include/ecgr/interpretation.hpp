#pragma once

#include "ecgr/common.hpp"
#include "ecgr/conduction.hpp"
#include "ecgr/signal_io.hpp"

#include <array>
#include <string>
#include <vector>

namespace ecgr {

// Enumeration order is the tie-break order.
enum class RhythmPattern : std::uint8_t {
    Sinus,
    AFib,
    Tachy,
    Brady,
    Flutter,
    Bigeminy,
    Trigeminy,
    VentTachy,
    Unexplained,
};

inline constexpr std::array<RhythmPattern, 9> kAllPatterns = {
    RhythmPattern::Sinus,    RhythmPattern::AFib,      RhythmPattern::Tachy,
    RhythmPattern::Brady,    RhythmPattern::Flutter,   RhythmPattern::Bigeminy,
    RhythmPattern::Trigeminy, RhythmPattern::VentTachy, RhythmPattern::Unexplained,
};

const char* to_string(RhythmPattern p);
std::optional<RhythmPattern> pattern_from_string(std::string_view s);

struct InterpretationConfig {
    // Search
    int beam_width = 8;
    double switch_cost = 1.0;
    double unexplained_beat_cost = 2.0;
    std::size_t min_episode_beats = 3;

    // Constraint table
    double sinus_min_bpm = 50.0;
    double sinus_max_bpm = 100.0;
    double sinus_min_p_fraction = 0.6;
    double irregularity_tolerance = 0.08;  // MAD/median allowed for free
    double irregularity_weight = 4.0;
    double rr_break_low = 0.7;   // RR / median outside [low, high] is a rhythm break
    double rr_break_high = 1.5;
    double rr_break_cost = 0.5;
    double brady_max_bpm = 50.0;
    double tachy_min_bpm = 100.0;
    double afib_min_irregularity = 0.12;
    double afib_max_p_fraction = 0.3;
    double afib_p_weight = 2.0;
    double flutter_low_hz = 4.0;
    double flutter_high_hz = 6.0;
    double flutter_prominence = 2.0;
    double flutter_min_tp_s = 0.5;
    double spectrum_low_hz = 1.0;
    double spectrum_high_hz = 30.0;
    double ectopy_max_break_fraction = 0.25;
    double vt_min_ventricular_fraction = 0.8;

    // Evidence repair
    int max_repair_passes = 10;
    double profile_window_ms = 250.0;
    double delete_profile_ratio = 0.5;
    double insert_gap_low = 1.6;
    double insert_gap_high = 2.4;
    double insert_search_ms = 60.0;
    double insert_amp_ratio = 0.3;
    int local_median_gaps = 4;
};

struct BeatSpan {
    std::size_t first = 0;
    std::size_t last = 0;  // inclusive
    std::size_t size() const { return last - first + 1; }
};

struct PatternMatch {
    bool admissible = false;
    double penalty = 0.0;
};

// Per-beat quantities the constraint table needs, precomputed once per beat
// list (RR series, P presence, tags, TP-segment spectra).
class RhythmEvidence {
public:
    RhythmEvidence(const Record& r, std::span<const BeatObservation> beats, const InterpretationConfig& cfg = {});

    std::size_t beat_count() const { return p_present_.size(); }
    const InterpretationConfig& config() const { return cfg_; }
    // RR (ms) between beat i and i+1.
    std::span<const double> rr_ms() const { return rr_; }
    bool p_present(std::size_t i) const { return p_present_[i]; }
    bool ventricular(std::size_t i) const { return ventricular_[i]; }

    struct SpanSpectrum {
        double peak_hz = 0.0;
        double prominence = 0.0;  // peak / median over the analysis band
        double tp_seconds = 0.0;
    };
    SpanSpectrum tp_spectrum(BeatSpan span) const;

private:
    InterpretationConfig cfg_;
    std::vector<double> rr_;
    std::vector<bool> p_present_;
    std::vector<bool> ventricular_;
    std::vector<double> bin_hz_;
    // prefix sums over gaps of band magnitude spectra and TP durations
    std::vector<std::vector<double>> spec_prefix_;
    std::vector<double> tp_prefix_;
    std::vector<double> count_prefix_;
};

// Throws ArgumentError if the span lies outside the beat list.
PatternMatch match_pattern(RhythmPattern pattern, const RhythmEvidence& ev, BeatSpan span);

struct RhythmEpisode {
    RhythmPattern pattern = RhythmPattern::Unexplained;
    std::size_t first = 0;
    std::size_t last = 0;
    double score = 0.0;  // episode cost
};

struct Tiling {
    std::vector<RhythmEpisode> episodes;
    double cost = 0.0;
};

// Min-cost tiling by left-to-right beam search. Cost = sum of episode
// penalties + per-beat cost of UNEXPLAINED beats + switch cost per boundary.
Tiling best_tiling(const RhythmEvidence& ev, int beam_width);
Tiling best_tiling(const RhythmEvidence& ev);

// Cost of an arbitrary tiling under the same model; +inf if any episode is
// inadmissible or shorter than the minimum.
double tiling_cost(const RhythmEvidence& ev, std::span<const RhythmEpisode> episodes);

// Episodes cover beats [0, n) contiguously, in order, without overlap.
bool tiles_exactly(std::span<const RhythmEpisode> episodes, std::size_t beat_count);

struct EvidenceEdit {
    enum class Op : std::uint8_t { Delete, Insert };
    Op op = Op::Delete;
    long sample_index = 0;
    int pass = 0;
    double cost_before = 0.0;
    double cost_after = 0.0;
    // For deletions: the beat-window profile and the threshold it beat.
    double window_profile = 0.0;
    double profile_threshold = 0.0;
};

struct RepairResult {
    std::vector<BeatObservation> beats;
    std::vector<BeatObservation> deleted;  // removed evidence, tagged SPURIOUS
    std::vector<EvidenceEdit> edits;
    Tiling tiling;
    int passes = 0;
    std::vector<double> cost_trace;  // total cost after each pass (first = input)
};

RepairResult repair_evidence(const Record& r, std::vector<BeatObservation> beats, const Tiling& tiling,
                             const InterpretationConfig& cfg = {}, const ConductionConfig& ccfg = {});

struct Interpretation {
    std::vector<BeatObservation> beats;
    std::vector<RhythmEpisode> episodes;
    std::vector<EvidenceEdit> edits;
    std::vector<BeatObservation> deleted;
    std::size_t initial_beat_count = 0;
    int deleted_count = 0;
    int inserted_count = 0;
    double unexplained_time_frac = 0.0;
    double total_cost = 0.0;
    int repair_passes = 0;
    std::vector<double> cost_trace;
};

// With fewer than 2 beats returns a degenerate interpretation: one
// UNEXPLAINED episode (none at all for zero beats).
Interpretation abstract_rhythms(const Record& r, std::vector<BeatObservation> beats,
                                const InterpretationConfig& cfg = {}, const ConductionConfig& ccfg = {});

// Time extent (s) of each episode; boundaries at midpoints between the
// neighbouring episodes' edge beats, first starts at 0, last ends at the
// record end.
std::vector<double> episode_durations_s(const Interpretation& itp, const Record& r);

// Magnitude spectrum (Hann window, mean removed, zero padded to nfft) for
// bins between lo_hz and hi_hz. Returns {bin frequencies, magnitudes}.
std::pair<std::vector<double>, std::vector<double>> band_spectrum(std::span<const double> segment, int fs,
                                                                  double lo_hz, double hi_hz,
                                                                  std::size_t nfft = 1024);

// [start, end) sample range of the TP segment between beats a and b (a < b);
// empty when the waves leave no gap.
std::pair<long, long> tp_segment(const BeatObservation& a, const BeatObservation& b, int fs);

std::string interpretation_to_json(const Interpretation& itp);
Interpretation interpretation_from_json(const std::string& text);

}  // namespace ecgr
