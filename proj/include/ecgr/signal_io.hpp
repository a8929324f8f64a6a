#pragma once

#include "ecgr/common.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace ecgr {

// Sampled single-lead ECG in millivolts.
struct Record {
    std::string id;
    int fs = kCanonicalFs;
    std::vector<double> samples;
    std::optional<ClassLabel> label;

    double duration_s() const { return static_cast<double>(samples.size()) / fs; }
    // Throws FormatError if fs <= 0, samples empty, or any sample non-finite.
    void validate() const;
};

Record negate(const Record& r);

// Text signal format:
//   line 1: fs=<int>,gain=<real>,baseline=<real>
//   lines 2..: one integer ADC value per line; mV = (adc - baseline) / gain
Record load_record(const std::filesystem::path& path,
                   std::optional<ClassLabel> manifest_label = std::nullopt);
Record parse_record(std::string_view text, std::string id,
                    std::optional<ClassLabel> manifest_label = std::nullopt);
void write_record(const std::filesystem::path& path, const Record& r, double gain = 1000.0,
                  double baseline = 0.0);

struct ManifestEntry {
    std::string record_id;
    std::string path;
    std::optional<ClassLabel> label;
};

struct Manifest {
    std::vector<ManifestEntry> entries;
    // Directory relative paths are resolved against.
    std::filesystem::path base_dir;

    std::filesystem::path resolve(const ManifestEntry& e) const;
};

// CSV "record_id,path,label"; a header row with those names is optional.
Manifest load_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const Manifest& m);

// Linear interpolation; output length round(len * target / fs); samples past
// the last input hold its value.
Record resample(const Record& r, int target_fs);

// ---------------------------------------------------------------------------
// Synthetic records (test fixtures and the acceptance corpus).

enum class OtherVariant : std::uint8_t { Tachycardia, Bradycardia, WideQrs, Ectopic };

struct SynthTruth {
    std::vector<double> beat_times_s;  // R-peak times
    std::vector<bool> ectopic;         // per beat
    bool has_p = true;
    double qrs_sigma_ms = 0.0;
    std::optional<OtherVariant> variant;  // set for class O
    double snr_db = 0.0;
};

struct SynthResult {
    Record record;
    SynthTruth truth;
};

inline constexpr double kSynthMinDuration = 9.0;
inline constexpr double kSynthMaxDuration = 61.0;

// Deterministic in (target, seed, duration_s). Throws ArgumentError for a
// duration outside [9, 61] s.
SynthResult synth_record_with_truth(ClassLabel target, std::uint64_t seed, double duration_s);
Record synth_record(ClassLabel target, std::uint64_t seed, double duration_s);
// Same, with the O variant forced instead of drawn from the seed.
SynthResult synth_other(OtherVariant variant, std::uint64_t seed, double duration_s);

}  // namespace ecgr
