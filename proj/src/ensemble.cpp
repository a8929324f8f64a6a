#include "ecgr/ensemble.hpp"

#include <Eigen/Dense>
#include <json.hpp>

#include <cmath>
#include <limits>

namespace ecgr {

ClassProbabilities average_probs(std::span<const ClassProbabilities> ps) {
    if (ps.empty()) throw ArgumentError("average_probs: no inputs");
    ClassProbabilities out;
    for (std::size_t c = 0; c < kNumClasses; ++c) {
        double s = 0.0;
        for (const auto& p : ps) s += p[c];
        out[c] = s / static_cast<double>(ps.size());
    }
    return out;
}

StackVector stack_features(const ClassProbabilities& g, const ClassProbabilities& r) {
    return {g[0], g[1], g[2], r[0], r[1], r[2]};
}

namespace {

using Mat6 = Eigen::Matrix<double, 6, 6>;
using Vec6 = Eigen::Matrix<double, 6, 1>;

Mat6 to_mat(const LdaModel& m) {
    Mat6 S;
    for (std::size_t i = 0; i < kStackDim; ++i)
        for (std::size_t j = 0; j < kStackDim; ++j)
            S(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = m.covariance[i][j];
    return S;
}

Vec6 to_vec(const StackVector& z) {
    Vec6 v;
    for (std::size_t i = 0; i < kStackDim; ++i) v(static_cast<Eigen::Index>(i)) = z[i];
    return v;
}

}  // namespace

std::array<double, kNumClasses> LdaModel::scores(const StackVector& z) const {
    const Eigen::LLT<Mat6> llt(to_mat(*this));
    const Vec6 x = to_vec(z);
    std::array<double, kNumClasses> s{};
    for (std::size_t c = 0; c < kNumClasses; ++c) {
        if (!(priors[c] > 0.0)) {
            s[c] = -std::numeric_limits<double>::infinity();
            continue;
        }
        const Vec6 mu = to_vec(means[c]);
        const Vec6 w = llt.solve(mu);
        s[c] = x.dot(w) - 0.5 * mu.dot(w) + std::log(priors[c]);
    }
    return s;
}

ClassProbabilities lda_posterior_from_scores(const std::array<double, kNumClasses>& s) {
    double mx = -std::numeric_limits<double>::infinity();
    for (double v : s) mx = std::max(mx, v);
    ClassProbabilities p;
    double tot = 0.0;
    for (std::size_t c = 0; c < kNumClasses; ++c) {
        p[c] = std::isfinite(s[c]) ? std::exp(s[c] - mx) : 0.0;
        tot += p[c];
    }
    for (std::size_t c = 0; c < kNumClasses; ++c) p[c] /= tot;
    return p;
}

ClassProbabilities LdaModel::posterior(const StackVector& z) const { return lda_posterior_from_scores(scores(z)); }

LdaModel fit_lda(std::span<const StackVector> Z, std::span<const ClassLabel> y, double shrink) {
    const std::size_t n = Z.size();
    if (y.size() != n) throw ShapeError("fit_lda: label count differs from row count");
    if (n < 10) throw DegenerateDataError("fit_lda: need at least 10 rows");
    if (!(shrink >= 0.0 && shrink <= 1.0)) throw ArgumentError("fit_lda: shrink must lie in [0, 1]");
    std::array<double, kNumClasses> count{};
    LdaModel m;
    m.shrink = shrink;
    for (std::size_t i = 0; i < n; ++i) {
        const auto c = index_of(y[i]);
        count[c] += 1.0;
        for (std::size_t k = 0; k < kStackDim; ++k) m.means[c][k] += Z[i][k];
    }
    int present = 0;
    for (std::size_t c = 0; c < kNumClasses; ++c) {
        if (count[c] > 0.0) {
            ++present;
            for (double& v : m.means[c]) v /= count[c];
        }
        m.priors[c] = count[c] / static_cast<double>(n);
    }
    if (present < 2) throw DegenerateDataError("fit_lda: fewer than 2 classes");

    Mat6 S = Mat6::Zero();
    for (std::size_t i = 0; i < n; ++i) {
        const Vec6 d = to_vec(Z[i]) - to_vec(m.means[index_of(y[i])]);
        S += d * d.transpose();
    }
    S /= static_cast<double>(n);
    const Mat6 R = (1.0 - shrink) * S + shrink * Mat6(S.diagonal().asDiagonal());
    const Eigen::SelfAdjointEigenSolver<Mat6> es(R, Eigen::EigenvaluesOnly);
    const double scale = std::max(1.0, R.diagonal().cwiseAbs().maxCoeff());
    if (!(es.eigenvalues().minCoeff() > 1e-12 * scale))
        throw RegularizationError("fit_lda: covariance is singular after shrinkage; raise shrink");
    for (std::size_t i = 0; i < kStackDim; ++i)
        for (std::size_t j = 0; j < kStackDim; ++j)
            m.covariance[i][j] = 0.5 * (R(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) +
                                        R(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)));
    return m;
}

StackedPrediction predict_stacked(const ClassProbabilities& gbt, std::span<const ClassProbabilities> rnns,
                                  const LdaModel& lda) {
    const auto avg = average_probs(rnns);
    StackedPrediction out;
    out.probs = lda.posterior(stack_features(gbt, avg));
    out.label = out.probs.argmax();
    return out;
}

std::string lda_to_json(const LdaModel& m) {
    nlohmann::json j;
    j["version"] = 1;
    j["shrink"] = m.shrink;
    j["priors"] = m.priors;
    j["means"] = m.means;
    j["covariance"] = m.covariance;
    return j.dump();
}

LdaModel lda_from_json(const std::string& text) {
    LdaModel m;
    try {
        const auto j = nlohmann::json::parse(text);
        if (j.at("version").get<int>() != 1) throw FormatError("lda model: unsupported version");
        m.shrink = j.at("shrink").get<double>();
        m.priors = j.at("priors").get<std::array<double, kNumClasses>>();
        m.means = j.at("means").get<std::array<StackVector, kNumClasses>>();
        m.covariance = j.at("covariance").get<std::array<std::array<double, kStackDim>, kStackDim>>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("lda model: ") + e.what());
    }
    return m;
}

}  // namespace ecgr
