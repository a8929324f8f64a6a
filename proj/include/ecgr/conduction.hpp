#pragma once

#include "ecgr/common.hpp"
#include "ecgr/signal_io.hpp"

#include <optional>
#include <string>
#include <vector>

namespace ecgr {

enum class BeatTag : std::uint8_t { Normal, Ventricular, Fusion, Spurious };

const char* to_string(BeatTag t);
std::optional<BeatTag> beat_tag_from_string(std::string_view s);

struct Wave {
    long onset = 0;
    long peak = 0;
    long offset = 0;
    double amp = 0.0;  // signed mV at the peak
};

struct BeatObservation {
    long qrs_onset = 0;
    long qrs_peak = 0;
    long qrs_offset = 0;
    double qrs_amp = 0.0;  // signed main deflection, mV
    int qrs_polarity = 1;
    std::optional<Wave> p;
    std::optional<Wave> t;
    BeatTag tag = BeatTag::Normal;
    double morph_dist = 0.0;

    // onset < peak < offset for each wave, p.offset <= qrs_onset,
    // t.onset >= qrs_offset, finite morph_dist.
    bool well_formed() const;
    double qrs_duration_ms(int fs) const;
};

// Named constants for every detection and delineation threshold.
struct ConductionConfig {
    double detect_threshold_factor = 0.4;
    int detect_history = 8;
    double refractory_ms = 250.0;
    double integration_ms = 150.0;
    double slope_fraction = 0.10;
    double qrs_max_half_ms = 80.0;
    double t_search_start_ms = 80.0;
    double t_search_end_ms = 400.0;
    double p_window_ms = 250.0;
    double wave_presence_mv = 0.05;
    double wave_edge_fraction = 0.2;
    double p_min_ms = 40.0;
    double p_max_ms = 150.0;
    double template_ms = 120.0;
    double cluster_correlation = 0.8;
    double ventricular_dist = 0.5;
    double fusion_dist = 0.3;
    double wide_qrs_ms = 110.0;
    double ventricular_width_ratio = 1.4;
};

// Pan-Tompkins-style detector. Returns increasing R-peak sample indices.
// Throws EvidenceError if the record is shorter than 2 s.
std::vector<long> detect_qrs(const Record& r, const ConductionConfig& cfg = {});

// Delineates one beat with search bounded by (prev_offset, next_onset).
// Throws EvidenceError if the bounds do not bracket qrs_peak.
BeatObservation delineate_beat(const Record& r, long qrs_peak, long prev_offset, long next_onset,
                               const ConductionConfig& cfg = {});

// Delineates all peaks in order, chaining the search bounds.
std::vector<BeatObservation> delineate_all(const Record& r, std::span<const long> peaks,
                                           const ConductionConfig& cfg = {});

struct QrsTemplate {
    std::vector<double> waveform;  // zero mean, unit energy
};

struct TemplateResult {
    QrsTemplate qrs_template;
    std::vector<double> morph_dist;
    std::vector<BeatTag> tags;
};

// Largest correlation cluster of QRS snippets -> template, per-beat
// correlation distance and tags. Throws EvidenceError with < 3 beats.
TemplateResult dominant_template(const Record& r, std::span<const BeatObservation> beats,
                                 const ConductionConfig& cfg = {});

// Zero-mean, unit-energy 120 ms snippet centred on a peak (edge samples held).
std::vector<double> qrs_snippet(const Record& r, long peak, const ConductionConfig& cfg = {});
double correlation_distance(std::span<const double> normalized_a, std::span<const double> normalized_b);

// Tag rule shared by template tagging and beats inserted later.
BeatTag tag_beat(double morph_dist, double qrs_ms, double median_qrs_ms, const ConductionConfig& cfg = {});

// detect + delineate + template tagging.
std::vector<BeatObservation> conduction_evidence(const Record& r, const ConductionConfig& cfg = {});

// One line per beat: qrs_onset qrs_peak qrs_offset tag p_peak|- t_peak|-
std::string annotation_rows(std::span<const BeatObservation> beats);

}  // namespace ecgr
