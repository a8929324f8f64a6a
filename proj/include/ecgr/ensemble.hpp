#pragma once

#include "ecgr/common.hpp"

#include <array>
#include <string>
#include <vector>

namespace ecgr {

inline constexpr std::size_t kStackDim = 6;
using StackVector = std::array<double, kStackDim>;

ClassProbabilities average_probs(std::span<const ClassProbabilities> ps);

// (gbt N, A, O, rnn N, A, O); the ~ entry of each is 1 minus the rest.
StackVector stack_features(const ClassProbabilities& p_gbt, const ClassProbabilities& p_rnn);

struct LdaModel {
    std::array<StackVector, kNumClasses> means{};
    std::array<std::array<double, kStackDim>, kStackDim> covariance{};  // regularised, shared
    std::array<double, kNumClasses> priors{};  // 0 for classes absent from training
    double shrink = 0.05;

    // Discriminant scores; -inf for absent classes.
    std::array<double, kNumClasses> scores(const StackVector& z) const;
    ClassProbabilities posterior(const StackVector& z) const;
};

// Pooled within-class covariance (divided by n), shrunk towards its diagonal.
// Throws DegenerateDataError unless n >= 10 and >= 2 classes occur,
// RegularizationError if the shrunk covariance is not positive definite.
LdaModel fit_lda(std::span<const StackVector> Z, std::span<const ClassLabel> y, double shrink = 0.05);

// Softmax of discriminant scores; shift invariant.
ClassProbabilities lda_posterior_from_scores(const std::array<double, kNumClasses>& scores);

struct StackedPrediction {
    ClassProbabilities probs;
    ClassLabel label = ClassLabel::Normal;
};

StackedPrediction predict_stacked(const ClassProbabilities& gbt, std::span<const ClassProbabilities> rnns,
                                  const LdaModel& lda);

std::string lda_to_json(const LdaModel& m);
LdaModel lda_from_json(const std::string& text);

}  // namespace ecgr
