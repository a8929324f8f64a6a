#include "ecgr/preprocess.hpp"

#include <Eigen/Dense>
#include <json.hpp>

#include <algorithm>
#include <cmath>

namespace ecgr {

namespace {

long odd_window(double ms, int fs) {
    long w = std::lround(ms * fs / 1000.0);
    if (w % 2 == 0) ++w;
    return std::max(1L, w);
}

// Running median with a symmetric window truncated at the record edges.
std::vector<double> median_filter(const std::vector<double>& x, long window) {
    const long n = static_cast<long>(x.size());
    const long h = window / 2;
    std::vector<double> out(x.size());
    std::vector<double> buf;
    buf.reserve(static_cast<std::size_t>(window));
    for (long i = 0; i < n; ++i) {
        const long lo = std::max(0L, i - h), hi = std::min(n - 1, i + h);
        buf.assign(x.begin() + lo, x.begin() + hi + 1);
        out[static_cast<std::size_t>(i)] = median(buf);
    }
    return out;
}

}  // namespace

Record baseline_filter(const Record& r) {
    const long w1 = odd_window(200.0, r.fs);
    const long w2 = odd_window(600.0, r.fs);
    if (static_cast<long>(r.samples.size()) < w1) return r;
    const auto base = median_filter(median_filter(r.samples, w1), w2);
    Record out = r;
    for (std::size_t i = 0; i < out.samples.size(); ++i) out.samples[i] -= base[i];
    return out;
}

InversionFeatures inversion_features(const Record& r, std::span<const BeatObservation> beats) {
    if (beats.empty()) throw EvidenceError("inversion_features: empty beat list");
    const auto& x = r.samples;
    const long n = static_cast<long>(x.size());
    auto val = [&](long i) { return x[static_cast<std::size_t>(std::clamp(i, 0L, n - 1))]; };
    // Signed value of largest magnitude in [a, b]; recomputed from the signal
    // so that negating the record maps every entry exactly.
    auto main_deflection = [&](long a, long b) {
        double best = val(a);
        for (long i = a; i <= b; ++i)
            if (std::abs(val(i)) > std::abs(best)) best = val(i);
        return best;
    };

    std::vector<double> qrs_amp, t_amp, p_amp, p2p, r_vals, s_vals, area;
    for (const auto& b : beats) {
        qrs_amp.push_back(main_deflection(b.qrs_onset, b.qrs_offset));
        double mx = val(b.qrs_onset), mn = mx, a = 0.0;
        for (long i = b.qrs_onset; i <= b.qrs_offset; ++i) {
            mx = std::max(mx, val(i));
            mn = std::min(mn, val(i));
            a += val(i);
        }
        p2p.push_back(mx - mn);
        r_vals.push_back(mx);
        s_vals.push_back(mn);
        area.push_back(a * 1000.0 / r.fs);
        if (b.t) t_amp.push_back(main_deflection(b.t->onset, b.t->offset));
        if (b.p) p_amp.push_back(main_deflection(b.p->onset, b.p->offset));
    }
    auto neg_fraction = [](const std::vector<double>& v) {
        if (v.empty()) return 0.5;
        double c = 0.0;
        for (double a : v) c += a < 0.0 ? 1.0 : (a == 0.0 ? 0.5 : 0.0);
        return c / static_cast<double>(v.size());
    };

    InversionFeatures f;
    f.v[0] = neg_fraction(qrs_amp);
    f.v[1] = neg_fraction(t_amp);
    f.v[2] = neg_fraction(p_amp);
    f.v[3] = median(qrs_amp);
    f.v[4] = median(t_amp);
    f.v[5] = median(p_amp);
    f.v[6] = skewness(x);
    const double mx = *std::max_element(x.begin(), x.end());
    const double mn = *std::min_element(x.begin(), x.end());
    f.v[7] = std::log(std::max(mx, 1e-6)) - std::log(std::max(-mn, 1e-6));
    f.v[8] = median(p2p);
    f.v[9] = median(r_vals);
    f.v[10] = median(s_vals);
    double above = 0.0;
    for (double v : x) above += v > 0.0 ? 1.0 : (v == 0.0 ? 0.5 : 0.0);
    f.v[11] = above / static_cast<double>(n);
    f.v[12] = median(area);

    // Mean QRS snippet vs its time reversal.
    const long half = std::lround(0.06 * r.fs);
    std::vector<double> snip(static_cast<std::size_t>(2 * half + 1), 0.0);
    for (const auto& b : beats)
        for (long i = -half; i <= half; ++i) snip[static_cast<std::size_t>(i + half)] += val(b.qrs_peak + i);
    const double m = mean(snip);
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < snip.size(); ++i) {
        const double a = snip[i] - m, b = snip[snip.size() - 1 - i] - m;
        num += a * b;
        den += a * a;
    }
    f.v[13] = den > 1e-24 ? num / den : 0.0;
    return f;
}

double LogRegModel::decision(const InversionFeatures& f) const {
    double z = bias;
    for (std::size_t i = 0; i < kInversionFeatureCount; ++i) z += weights[i] * f.v[i];
    return z;
}

LogRegFit train_logreg(std::span<const InversionFeatures> X, std::span<const int> y, const LogRegOptions& opt) {
    const std::size_t n = X.size();
    constexpr std::size_t d = kInversionFeatureCount;
    if (n != y.size()) throw ShapeError("train_logreg: X and y differ in length");
    if (n < 2) throw DegenerateDataError("train_logreg: need at least 2 examples");
    std::size_t pos = 0;
    for (int v : y) {
        if (v != 0 && v != 1) throw ArgumentError("train_logreg: labels must be 0/1");
        pos += static_cast<std::size_t>(v);
    }
    if (pos == 0 || pos == n) throw DegenerateDataError("train_logreg: single-class input");

    // Standardise; constant columns get scale 1 and carry no signal.
    Eigen::MatrixXd Z(n, d + 1);
    Eigen::VectorXd mu = Eigen::VectorXd::Zero(d), sd = Eigen::VectorXd::Ones(d);
    for (std::size_t j = 0; j < d; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += X[i].v[j];
        mu(j) = s / n;
        double v = 0.0;
        for (std::size_t i = 0; i < n; ++i) v += (X[i].v[j] - mu(j)) * (X[i].v[j] - mu(j));
        v /= n;
        sd(j) = v > 1e-24 ? std::sqrt(v) : 1.0;
        for (std::size_t i = 0; i < n; ++i) Z(i, j) = (X[i].v[j] - mu(j)) / sd(j);
    }
    Z.col(d).setOnes();
    Eigen::VectorXd t(n);
    for (std::size_t i = 0; i < n; ++i) t(i) = y[i];

    // Diagonal step sizes bounding the Hessian: 0.25 * lambda_max(Z'Z/n) + l2_j.
    const Eigen::MatrixXd gram = Z.transpose() * Z / static_cast<double>(n);
    const double lmax = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(gram, Eigen::EigenvaluesOnly)
                            .eigenvalues()
                            .maxCoeff();
    Eigen::VectorXd step(d + 1);
    for (std::size_t j = 0; j <= d; ++j) step(j) = 1.0 / (0.25 * lmax + (j < d ? opt.l2 : 0.0));

    Eigen::VectorXd w = Eigen::VectorXd::Zero(d + 1);
    LogRegFit fit;
    for (int it = 0; it < opt.max_iter; ++it) {
        const Eigen::VectorXd z = Z * w;
        const Eigen::VectorXd p = z.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
        Eigen::VectorXd g = Z.transpose() * (t - p) / static_cast<double>(n);
        g.head(d) -= opt.l2 * w.head(d);
        fit.grad_max_norm = g.cwiseAbs().maxCoeff();
        fit.iterations = it;
        if (fit.grad_max_norm < opt.grad_tol) break;
        w += step.cwiseProduct(g);
        fit.iterations = it + 1;
    }

    double b = w(d);
    for (std::size_t j = 0; j < d; ++j) {
        fit.model.weights[j] = w(j) / sd(j);
        b -= w(j) * mu(j) / sd(j);
    }
    fit.model.bias = b;
    return fit;
}

InversionDecision detect_inversion(const LogRegModel& m, const InversionFeatures& f) {
    const double z = m.decision(f);
    const double p = 1.0 / (1.0 + std::exp(-z));
    return {p, p > 0.5};
}

std::string logreg_to_json(const LogRegModel& m) {
    nlohmann::json j;
    j["weights"] = std::vector<double>(m.weights.begin(), m.weights.end());
    j["bias"] = m.bias;
    j["version"] = 1;
    return j.dump();
}

LogRegModel logreg_from_json(const std::string& text) {
    LogRegModel m;
    try {
        const auto j = nlohmann::json::parse(text);
        if (j.at("version").get<int>() != 1) throw FormatError("logreg model: unsupported version");
        const auto w = j.at("weights").get<std::vector<double>>();
        if (w.size() != kInversionFeatureCount) throw FormatError("logreg model: expected 14 weights");
        std::copy(w.begin(), w.end(), m.weights.begin());
        m.bias = j.at("bias").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("logreg model: ") + e.what());
    }
    return m;
}

}  // namespace ecgr
