#pragma once

#include "ecgr/common.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace ecgr {

struct GbtHyperparams {
    int max_depth = 6;
    double eta = 0.2;
    double gamma = 1.0;
    double colsample_bytree = 0.9;
    double min_child_weight = 20.0;
    double subsample = 0.8;
    int rounds = 60;
    double lambda = 1.0;
};

struct GbtNode {
    int feature = -1;  // -1 for a leaf
    double threshold = 0.0;
    bool default_left = true;
    int left = -1;
    int right = -1;
    double leaf = 0.0;   // already scaled by eta
    double gain = 0.0;   // split gain, gamma included
    double cover = 0.0;  // hessian sum
    bool is_leaf() const { return feature < 0; }
};

struct GbtTree {
    std::vector<GbtNode> nodes;  // nodes[0] is the root

    // x < threshold goes left; a non-finite value follows default_left.
    double predict(std::span<const double> x) const;
    int depth() const;
};

struct GbtModel {
    GbtHyperparams hp;
    std::size_t num_features = 0;
    std::vector<std::array<GbtTree, kNumClasses>> rounds;

    std::array<double, kNumClasses> scores(std::span<const double> x) const;
};

using FeatureMatrix = std::vector<std::vector<double>>;

double leaf_weight(double G, double H, double lambda);
double split_gain(double GL, double HL, double GR, double HR, double lambda, double gamma);

struct GbtTrainLog {
    std::vector<double> train_loss;  // multiclass log loss after each round, all rows
};

// Softmax objective, second-order boosting with exact greedy splits.
// Throws DegenerateDataError for empty data, ShapeError for ragged rows or
// a label count mismatch, ArgumentError for non-finite features.
GbtModel train_gbt(const FeatureMatrix& X, std::span<const ClassLabel> y, const GbtHyperparams& hp,
                   std::uint64_t seed, GbtTrainLog* log = nullptr);

// Throws ShapeError on a dimension mismatch.
ClassProbabilities predict_gbt(const GbtModel& m, std::span<const double> x);

std::string gbt_to_json(const GbtModel& m);
GbtModel gbt_from_json(const std::string& text);

}  // namespace ecgr
