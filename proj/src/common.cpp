#include "ecgr/common.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

namespace ecgr {

char to_char(ClassLabel c) {
    switch (c) {
        case ClassLabel::Normal: return 'N';
        case ClassLabel::AFib: return 'A';
        case ClassLabel::Other: return 'O';
        case ClassLabel::Noisy: return '~';
    }
    return '?';
}

std::optional<ClassLabel> label_from_char(char c) {
    switch (c) {
        case 'N': return ClassLabel::Normal;
        case 'A': return ClassLabel::AFib;
        case 'O': return ClassLabel::Other;
        case '~': return ClassLabel::Noisy;
        default: return std::nullopt;
    }
}

std::optional<ClassLabel> label_from_string(std::string_view s) {
    if (s.size() != 1) return std::nullopt;
    return label_from_char(s[0]);
}

bool ClassProbabilities::valid(double tol) const {
    double s = 0.0;
    for (double v : p) {
        if (!std::isfinite(v) || v < 0.0) return false;
        s += v;
    }
    return std::abs(s - 1.0) <= tol;
}

ClassLabel ClassProbabilities::argmax() const {
    std::size_t best = 0;
    for (std::size_t i = 1; i < kNumClasses; ++i)
        if (p[i] > p[best]) best = i;
    return static_cast<ClassLabel>(best);
}

ClassProbabilities softmax(const std::array<double, kNumClasses>& scores) {
    const double mx = *std::max_element(scores.begin(), scores.end());
    ClassProbabilities out;
    double s = 0.0;
    for (std::size_t i = 0; i < kNumClasses; ++i) {
        out.p[i] = std::exp(scores[i] - mx);
        s += out.p[i];
    }
    for (double& v : out.p) v /= s;
    return out;
}

double median(std::span<const double> x) {
    if (x.empty()) return 0.0;
    std::vector<double> v(x.begin(), x.end());
    const std::size_t mid = v.size() / 2;
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
    const double hi = v[mid];
    if (v.size() % 2 == 1) return hi;
    const double lo = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
    return 0.5 * (lo + hi);
}

double mad(std::span<const double> x) {
    if (x.empty()) return 0.0;
    const double m = median(x);
    std::vector<double> dev(x.size());
    std::transform(x.begin(), x.end(), dev.begin(), [m](double v) { return std::abs(v - m); });
    return median(dev);
}

double mean(std::span<const double> x) {
    if (x.empty()) return 0.0;
    return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

double stddev(std::span<const double> x) {
    if (x.size() < 2) return 0.0;
    const double m = mean(x);
    double s = 0.0;
    for (double v : x) s += (v - m) * (v - m);
    return std::sqrt(s / static_cast<double>(x.size()));
}

double percentile(std::span<const double> x, double q) {
    if (x.empty()) return 0.0;
    std::vector<double> v(x.begin(), x.end());
    std::sort(v.begin(), v.end());
    const double pos = std::clamp(q, 0.0, 100.0) / 100.0 * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return v[lo] + frac * (v[hi] - v[lo]);
}

double skewness(std::span<const double> x) {
    if (x.size() < 3) return 0.0;
    const double m = mean(x);
    double m2 = 0.0, m3 = 0.0;
    for (double v : x) {
        const double d = v - m;
        m2 += d * d;
        m3 += d * d * d;
    }
    const double n = static_cast<double>(x.size());
    m2 /= n;
    m3 /= n;
    if (m2 <= 1e-300) return 0.0;
    return m3 / std::pow(m2, 1.5);
}

std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

}  // namespace ecgr
