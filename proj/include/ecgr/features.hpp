#pragma once

#include "ecgr/common.hpp"
#include "ecgr/conduction.hpp"
#include "ecgr/interpretation.hpp"
#include "ecgr/signal_io.hpp"

#include <array>
#include <optional>
#include <string>
#include <vector>

namespace ecgr {

inline constexpr std::size_t kGlobalFeatureCount = 70;
inline constexpr std::size_t kBeatFeatureCount = 22;
inline constexpr std::size_t kRrStatCount = 16;

// How an entry responds to scaling the record amplitude by c > 0.
enum class Scaling : std::uint8_t { Invariant, Linear };

struct FeatureInfo {
    const char* name;
    Scaling scaling;
};

// Canonical order: r01-r22 rhythm, m01-m26 morphology, q01-q14 quality,
// a01-a08 anomaly flags. Definitions are listed in README.md.
const std::array<FeatureInfo, kGlobalFeatureCount>& global_feature_info();
const std::array<FeatureInfo, kBeatFeatureCount>& beat_feature_info();

// Sum of absolute first differences. Throws EvidenceError below 2 samples.
double profile(std::span<const double> segment);

// r01-r16 from an RR series in ms (at least 2 intervals):
//   min, max, median, mean, std, MAD, MAD/median, IQR, RMSSD,
//   pNN5, pNN10, pNN50, pNN100, mean HR (60000/mean RR),
//   max |dRR|, fraction of sign changes in dRR.
std::array<double, kRrStatCount> rr_statistics_ms(std::span<const double> rr_ms);
// Same from beat peaks. Throws EvidenceError with fewer than 3 beats.
std::array<double, kRrStatCount> rr_statistics(std::span<const BeatObservation> beats, int fs);

// Fraction of successive |dRR| strictly greater than x ms; 0 with no pairs.
double pnn(std::span<const double> rr_ms, double x_ms);
double rmssd(std::span<const double> rr_ms);

struct AnomalyThresholds {
    double tachy_bpm = 100.0;
    double brady_bpm = 50.0;
    double wide_qrs_ms = 110.0;
    double long_pr_ms = 210.0;
    double extrasystole_prev_ratio = 0.8;
    double extrasystole_next_ratio = 1.1;
    int local_median_halfwidth = 4;  // RR intervals each side
};

struct AnomalyFlags {
    bool tachycardia = false;
    bool bradycardia = false;
    bool wide_qrs = false;
    bool vent_or_fusion = false;
    bool extrasystole = false;
    bool long_pr = false;
    bool vent_tachy = false;
    bool flutter = false;

    std::array<double, 8> as_vector() const;
};

// Aggregates the threshold rules look at.
struct AnomalyInputs {
    std::optional<double> mean_hr_bpm;    // 60000 / mean RR
    std::optional<double> median_qrs_ms;
    std::optional<double> median_pr_ms;  // beats with a P wave only
    bool any_vent_or_fusion = false;
    bool extrasystole = false;
    bool vent_tachy_episode = false;
    bool flutter_episode = false;
};

AnomalyFlags anomaly_rules(const AnomalyInputs& in, const AnomalyThresholds& th = {});
// Premature beat (RRprev < 0.8 local median) followed by a pause
// (RRnext > 1.1 local median). The local median covers RR intervals
// [i - w, i + w] around the beat's preceding interval.
bool has_extrasystole(std::span<const double> rr_ms, const AnomalyThresholds& th = {});
AnomalyInputs anomaly_inputs(const Interpretation& itp, int fs, const AnomalyThresholds& th = {});
AnomalyFlags detect_anomalies(const Interpretation& itp, int fs, const AnomalyThresholds& th = {});

struct GlobalFeatures {
    std::array<double, kGlobalFeatureCount> v{};
};

struct BeatFeatureSequence {
    std::vector<std::array<double, kBeatFeatureCount>> rows;
};

// With fewer than 3 beats the rhythm statistics are zero-filled.
GlobalFeatures global_features(const Record& r, const Interpretation& itp, const AnomalyThresholds& th = {});
// Throws EvidenceError with fewer than 3 beats.
BeatFeatureSequence beat_features(const Record& r, const Interpretation& itp);
// beat_features, or one all-zero row when there are too few beats.
BeatFeatureSequence beat_features_or_placeholder(const Record& r, const Interpretation& itp);

std::string global_features_csv_header();
std::string global_features_csv_row(const std::string& record_id, const GlobalFeatures& f);
std::string beat_features_csv_header();
std::string beat_features_csv_rows(const std::string& record_id, const BeatFeatureSequence& s);

}  // namespace ecgr
