#include "ecgr/evaluation.hpp"

#include "ecgr/rng.hpp"

#include <json.hpp>

#include <cstdio>
#include <sstream>

namespace ecgr {

long ConfusionMatrix::total() const {
    long s = 0;
    for (const auto& row : counts)
        for (long v : row) s += v;
    return s;
}

ConfusionMatrix confusion(std::span<const ClassLabel> reference, std::span<const ClassLabel> predicted) {
    if (reference.size() != predicted.size()) throw ShapeError("confusion: length mismatch");
    ConfusionMatrix cm;
    for (std::size_t i = 0; i < reference.size(); ++i) cm.add(reference[i], predicted[i]);
    return cm;
}

ChallengeScore challenge_score(const ConfusionMatrix& cm) {
    ChallengeScore s;
    for (std::size_t c = 0; c < kNumClasses; ++c) {
        long row = 0, col = 0;
        for (std::size_t k = 0; k < kNumClasses; ++k) {
            row += cm.counts[c][k];
            col += cm.counts[k][c];
        }
        s.f1[c] = row + col == 0 ? 0.0 : 2.0 * static_cast<double>(cm.counts[c][c]) / static_cast<double>(row + col);
    }
    s.final = (s.f1[0] + s.f1[1] + s.f1[2]) / 3.0;
    return s;
}

std::vector<int> stratified_folds(std::span<const ClassLabel> labels, int k, std::uint64_t seed) {
    if (k < 2) throw ArgumentError("stratified_folds: k must be at least 2");
    Rng rng(seed);
    std::vector<int> fold(labels.size(), -1);
    std::size_t start = 0;
    for (auto c : kAllClasses) {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < labels.size(); ++i)
            if (labels[i] == c) idx.push_back(i);
        rng.shuffle(idx.begin(), idx.end());
        for (std::size_t j = 0; j < idx.size(); ++j)
            fold[idx[j]] = static_cast<int>((start + j) % static_cast<std::size_t>(k));
        start = (start + idx.size()) % static_cast<std::size_t>(k);
    }
    return fold;
}

double CvReport::mean(std::size_t method) const {
    const auto& v = scores[method];
    if (v.empty()) return 0.0;
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

namespace {

std::string fmt(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", x);
    return buf;
}

}  // namespace

std::string cv_report_csv(const CvReport& r) {
    std::ostringstream os;
    os << "method";
    for (int f = 0; f < r.folds(); ++f) os << ",fold_" << f;
    os << ",mean\n";
    for (std::size_t m = 0; m < CvReport::kMethods.size(); ++m) {
        os << CvReport::kMethods[m];
        for (double v : r.scores[m]) os << ',' << fmt(v);
        os << ',' << fmt(r.mean(m)) << '\n';
    }
    return os.str();
}

std::string cv_report_json(const CvReport& r) {
    nlohmann::json j;
    j["version"] = 1;
    j["folds"] = r.folds();
    j["seed"] = r.seed;
    j["config_hash"] = r.config_hash;
    for (std::size_t m = 0; m < CvReport::kMethods.size(); ++m)
        j["methods"][CvReport::kMethods[m]] = {{"per_fold", r.scores[m]}, {"mean", r.mean(m)}};
    return j.dump(2);
}

}  // namespace ecgr
