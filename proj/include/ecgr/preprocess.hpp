#pragma once

#include "ecgr/common.hpp"
#include "ecgr/conduction.hpp"
#include "ecgr/signal_io.hpp"

#include <array>
#include <cstdint>
#include <string>

namespace ecgr {

// Median-filter baseline removal: baseline = median600(median200(x)).
// Records shorter than the first window are returned unchanged.
Record baseline_filter(const Record& r);

inline constexpr std::size_t kInversionFeatureCount = 14;

// Polarity features used by the lead-inversion detector. Entries and their
// behaviour under negation of the record (same beat fiducials):
//   f1  fraction of beats with negative QRS main deflection     -> 1 - f1
//   f2  fraction of T-present beats with negative T (none: 0.5)  -> 1 - f2
//   f3  fraction of P-present beats with negative P (none: 0.5)  -> 1 - f3
//   f4  median signed QRS main-deflection amplitude (mV)         -> -f4
//   f5  median signed T amplitude, 0 when no T                   -> -f5
//   f6  median signed P amplitude, 0 when no P                   -> -f6
//   f7  skewness of the whole signal                             -> -f7
//   f8  ln(max(x) / -min(x)), each side floored at 1e-6 mV       -> -f8
//   f9  median peak-to-peak inside QRS windows (mV)              -> f9
//   f10 median R value (max inside QRS window)                   -> -f11
//   f11 median S value (min inside QRS window)                   -> -f10
//   f12 fraction of samples above zero, ties counted half        -> 1 - f12
//   f13 median signed QRS area (mV*ms)                           -> -f13
//   f14 correlation of the mean 120 ms QRS snippet with its
//       time-reversed copy                                       -> f14
struct InversionFeatures {
    std::array<double, kInversionFeatureCount> v{};
};

// Throws EvidenceError for an empty beat list.
InversionFeatures inversion_features(const Record& r, std::span<const BeatObservation> beats);

struct LogRegModel {
    std::array<double, kInversionFeatureCount> weights{};
    double bias = 0.0;

    double decision(const InversionFeatures& f) const;
};

struct LogRegOptions {
    double l2 = 1e-3;
    double grad_tol = 1e-6;
    int max_iter = 10000;
};

struct LogRegFit {
    LogRegModel model;
    int iterations = 0;
    double grad_max_norm = 0.0;
};

// L2-penalised maximum likelihood by full-batch gradient ascent. Features are
// standardised internally; the penalty acts on standardised weights and the
// returned model is mapped back to raw feature space. Throws
// DegenerateDataError unless n >= 2 and both classes occur.
LogRegFit train_logreg(std::span<const InversionFeatures> X, std::span<const int> y,
                       const LogRegOptions& opt = {});

struct InversionDecision {
    double probability;
    bool inverted;  // probability > 0.5, strict
};

InversionDecision detect_inversion(const LogRegModel& m, const InversionFeatures& f);

std::string logreg_to_json(const LogRegModel& m);
LogRegModel logreg_from_json(const std::string& text);

}  // namespace ecgr
