#pragma once

#include "ecgr/common.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace ecgr {

// Rows are the reference class, columns the prediction.
struct ConfusionMatrix {
    std::array<std::array<long, kNumClasses>, kNumClasses> counts{};

    void add(ClassLabel reference, ClassLabel predicted) { ++counts[index_of(reference)][index_of(predicted)]; }
    long total() const;
};

ConfusionMatrix confusion(std::span<const ClassLabel> reference, std::span<const ClassLabel> predicted);

struct ChallengeScore {
    std::array<double, kNumClasses> f1{};  // N, A, O, ~
    double final = 0.0;                    // mean of N, A, O
};

// F1_c = 2 cm[c][c] / (row_c + col_c); 0 when row_c + col_c = 0.
ChallengeScore challenge_score(const ConfusionMatrix& cm);

// Per class: seeded shuffle, then round-robin over folds starting where the
// previous class stopped. Throws ArgumentError for k < 2.
std::vector<int> stratified_folds(std::span<const ClassLabel> labels, int k, std::uint64_t seed);

struct CvReport {
    static constexpr std::array<const char*, 3> kMethods = {"gbt", "rnn", "stacker"};
    // scores[method][fold]
    std::array<std::vector<double>, 3> scores;
    std::string config_hash;
    std::uint64_t seed = 0;

    int folds() const { return static_cast<int>(scores[0].size()); }
    double mean(std::size_t method) const;
};

std::string cv_report_csv(const CvReport& r);
std::string cv_report_json(const CvReport& r);

}  // namespace ecgr
