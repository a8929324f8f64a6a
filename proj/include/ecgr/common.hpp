#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace ecgr {

// All records are resampled to this rate on ingest.
inline constexpr int kCanonicalFs = 300;

inline constexpr std::size_t kNumClasses = 4;

// Class order is fixed everywhere: N, A, O, ~.
enum class ClassLabel : std::uint8_t { Normal = 0, AFib = 1, Other = 2, Noisy = 3 };

inline constexpr std::array<ClassLabel, kNumClasses> kAllClasses = {
    ClassLabel::Normal, ClassLabel::AFib, ClassLabel::Other, ClassLabel::Noisy};

char to_char(ClassLabel c);
std::optional<ClassLabel> label_from_char(char c);
std::optional<ClassLabel> label_from_string(std::string_view s);
inline std::size_t index_of(ClassLabel c) { return static_cast<std::size_t>(c); }

// Four non-negative probabilities in class order, summing to one.
struct ClassProbabilities {
    std::array<double, kNumClasses> p{0.25, 0.25, 0.25, 0.25};

    double operator[](std::size_t i) const { return p[i]; }
    double& operator[](std::size_t i) { return p[i]; }
    bool valid(double tol = 1e-9) const;
    // Ties resolve to the earlier class in N, A, O, ~ order.
    ClassLabel argmax() const;
};

ClassProbabilities softmax(const std::array<double, kNumClasses>& scores);

// ---------------------------------------------------------------------------
// Error hierarchy. The C API maps each type onto a status code.

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class FormatError : public Error { using Error::Error; };
class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t line)
        : Error(what + " (line " + std::to_string(line) + ")"), line_(line) {}
    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};
class EvidenceError : public Error { using Error::Error; };
class DegenerateDataError : public Error { using Error::Error; };
class ShapeError : public Error { using Error::Error; };
class RegularizationError : public Error { using Error::Error; };
class IoError : public Error { using Error::Error; };
class ArgumentError : public Error { using Error::Error; };

// ---------------------------------------------------------------------------
// Small order statistics used across modules. All take copies / spans and
// never mutate the caller's data.

double median(std::span<const double> x);
// median |x - median(x)|
double mad(std::span<const double> x);
double mean(std::span<const double> x);
// Population standard deviation.
double stddev(std::span<const double> x);
// Linear-interpolated percentile, q in [0, 100].
double percentile(std::span<const double> x, double q);
double skewness(std::span<const double> x);

// Stable 64-bit FNV-1a, used for config provenance hashes.
std::uint64_t fnv1a64(std::string_view bytes);
std::string hex64(std::uint64_t v);

}  // namespace ecgr
