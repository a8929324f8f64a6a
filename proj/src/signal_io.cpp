#include "ecgr/signal_io.hpp"
#include "ecgr/rng.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

namespace ecgr {

void Record::validate() const {
    if (fs <= 0) throw FormatError("record '" + id + "': sampling rate must be positive");
    if (samples.empty()) throw FormatError("record '" + id + "': no samples");
    for (double v : samples)
        if (!std::isfinite(v)) throw FormatError("record '" + id + "': non-finite sample");
}

Record negate(const Record& r) {
    Record out = r;
    for (double& v : out.samples) v = -v;
    return out;
}

namespace {

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

template <typename T>
bool parse_number(std::string_view s, T& out) {
    s = trim(s);
    if (s.empty()) return false;
    if (s.front() == '+') s.remove_prefix(1);
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc() && ptr == s.data() + s.size();
}

struct Header {
    int fs = 0;
    double gain = 0.0;
    double baseline = 0.0;
};

Header parse_header(std::string_view line) {
    Header h;
    bool have_fs = false, have_gain = false, have_baseline = false;
    std::size_t pos = 0;
    while (pos <= line.size()) {
        const std::size_t comma = line.find(',', pos);
        const std::string_view field =
            trim(line.substr(pos, comma == std::string_view::npos ? std::string_view::npos : comma - pos));
        const std::size_t eq = field.find('=');
        if (eq == std::string_view::npos) throw FormatError("malformed header field '" + std::string(field) + "'");
        const std::string_view key = trim(field.substr(0, eq));
        const std::string_view value = field.substr(eq + 1);
        bool ok = false;
        if (key == "fs") {
            ok = parse_number(value, h.fs);
            have_fs = true;
        } else if (key == "gain") {
            ok = parse_number(value, h.gain);
            have_gain = true;
        } else if (key == "baseline") {
            ok = parse_number(value, h.baseline);
            have_baseline = true;
        } else {
            throw FormatError("unknown header key '" + std::string(key) + "'");
        }
        if (!ok) throw FormatError("bad header value for '" + std::string(key) + "'");
        if (comma == std::string_view::npos) break;
        pos = comma + 1;
    }
    if (!have_fs || !have_gain || !have_baseline)
        throw FormatError("header must define fs, gain and baseline");
    if (h.fs <= 0) throw FormatError("header fs must be positive");
    if (!(h.gain != 0.0) || !std::isfinite(h.gain)) throw FormatError("header gain must be non-zero");
    if (!std::isfinite(h.baseline)) throw FormatError("header baseline must be finite");
    return h;
}

}  // namespace

Record parse_record(std::string_view text, std::string id, std::optional<ClassLabel> manifest_label) {
    Record r;
    r.id = std::move(id);
    r.label = manifest_label;

    std::size_t pos = 0;
    std::size_t line_no = 0;
    std::optional<Header> header;
    while (pos < text.size()) {
        std::size_t nl = text.find('\n', pos);
        if (nl == std::string_view::npos) nl = text.size();
        const std::string_view line = trim(text.substr(pos, nl - pos));
        pos = nl + 1;
        ++line_no;
        if (!header) {
            header = parse_header(line);
            continue;
        }
        if (line.empty()) continue;
        long long adc = 0;
        if (!parse_number(line, adc)) throw ParseError("non-numeric sample '" + std::string(line) + "'", line_no);
        r.samples.push_back((static_cast<double>(adc) - header->baseline) / header->gain);
    }
    if (!header) throw FormatError("missing header line");
    r.fs = header->fs;
    r.validate();
    return r;
}

Record load_record(const std::filesystem::path& path, std::optional<ClassLabel> manifest_label) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open record file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_record(ss.str(), path.stem().string(), manifest_label);
}

void write_record(const std::filesystem::path& path, const Record& r, double gain, double baseline) {
    r.validate();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write record file " + path.string());
    std::string buf = "fs=" + std::to_string(r.fs) + ",gain=";
    char num[64];
    auto fmt = [&num](double v) {
        auto [p, ec] = std::to_chars(num, num + sizeof num, v);
        return std::string(num, p);
    };
    buf += fmt(gain) + ",baseline=" + fmt(baseline) + "\n";
    for (double v : r.samples) {
        buf += std::to_string(std::llround(v * gain + baseline));
        buf += '\n';
    }
    out << buf;
}

std::filesystem::path Manifest::resolve(const ManifestEntry& e) const {
    std::filesystem::path p(e.path);
    if (p.is_absolute()) return p;
    return base_dir / p;
}

Manifest load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest " + path.string());
    Manifest m;
    m.base_dir = path.parent_path();
    std::set<std::string> seen;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string_view lv = trim(line);
        if (lv.empty()) continue;
        std::vector<std::string_view> cols;
        std::size_t pos = 0;
        while (true) {
            const std::size_t c = lv.find(',', pos);
            cols.push_back(trim(lv.substr(pos, c == std::string_view::npos ? std::string_view::npos : c - pos)));
            if (c == std::string_view::npos) break;
            pos = c + 1;
        }
        if (line_no == 1 && !cols.empty() && cols[0] == "record_id") continue;
        if (cols.size() < 2 || cols.size() > 3) throw ParseError("manifest row needs record_id,path[,label]", line_no);
        ManifestEntry e;
        e.record_id = std::string(cols[0]);
        e.path = std::string(cols[1]);
        if (e.record_id.empty() || e.path.empty()) throw ParseError("empty record_id or path", line_no);
        if (cols.size() == 3 && !cols[2].empty()) {
            e.label = label_from_string(cols[2]);
            if (!e.label) throw ParseError("unknown label '" + std::string(cols[2]) + "'", line_no);
        }
        if (!seen.insert(e.record_id).second)
            throw ParseError("duplicate record_id '" + e.record_id + "'", line_no);
        m.entries.push_back(std::move(e));
    }
    return m;
}

void write_manifest(const std::filesystem::path& path, const Manifest& m) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write manifest " + path.string());
    out << "record_id,path,label\n";
    for (const auto& e : m.entries) {
        out << e.record_id << ',' << e.path << ',';
        if (e.label) out << to_char(*e.label);
        out << '\n';
    }
}

Record resample(const Record& r, int target_fs) {
    if (target_fs <= 0) throw ArgumentError("resample: target rate must be positive");
    if (target_fs == r.fs) return r;
    Record out = r;
    out.fs = target_fs;
    const std::size_t n = r.samples.size();
    const auto m = static_cast<std::size_t>(
        std::llround(static_cast<double>(n) * target_fs / static_cast<double>(r.fs)));
    out.samples.assign(m, 0.0);
    if (n == 0) return out;
    const double step = static_cast<double>(r.fs) / target_fs;
    for (std::size_t j = 0; j < m; ++j) {
        const double x = static_cast<double>(j) * step;
        const auto i = static_cast<std::size_t>(std::floor(x));
        if (i + 1 >= n) {
            out.samples[j] = r.samples[n - 1];
            continue;
        }
        const double frac = x - static_cast<double>(i);
        out.samples[j] = r.samples[i] + frac * (r.samples[i + 1] - r.samples[i]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic generator

namespace {

constexpr double kPi = std::numbers::pi;

struct Bump {
    double center_s;
    double amp_mv;
    double sigma_s;
};

void add_bump(std::vector<double>& x, int fs, const Bump& b) {
    const double lo = (b.center_s - 5.0 * b.sigma_s) * fs;
    const double hi = (b.center_s + 5.0 * b.sigma_s) * fs;
    const auto n = static_cast<long>(x.size());
    for (long i = std::max(0L, static_cast<long>(std::floor(lo)));
         i <= std::min(n - 1, static_cast<long>(std::ceil(hi))); ++i) {
        const double d = (static_cast<double>(i) / fs - b.center_s) / b.sigma_s;
        x[static_cast<std::size_t>(i)] += b.amp_mv * std::exp(-0.5 * d * d);
    }
}

struct Morphology {
    double r_amp;
    double qrs_sigma;   // s
    double p_amp;
    double p_sigma;
    double pr_s;        // P peak to R peak
    double t_amp;
    double t_sigma;
};

Morphology draw_morphology(Rng& rng) {
    auto u = [&rng](double a, double b) { return rng.uniform(a, b); };
    Morphology m;
    m.r_amp = u(0.8, 1.5);
    m.qrs_sigma = u(0.014, 0.017);
    m.p_amp = u(0.10, 0.20);
    m.p_sigma = u(0.018, 0.024);
    m.pr_s = u(0.14, 0.18);
    m.t_amp = u(0.20, 0.40);
    m.t_sigma = u(0.035, 0.050);
    return m;
}

// One sinus or ectopic complex centred at R time t.
void add_beat(std::vector<double>& x, int fs, const Morphology& m, double t, double rr_s, bool with_p,
              bool ectopic) {
    const double qt_peak = 0.26 * std::sqrt(std::clamp(rr_s, 0.3, 2.0));
    if (ectopic) {
        const double sigma = 0.028;
        add_bump(x, fs, {t, -0.9 * m.r_amp, sigma});
        add_bump(x, fs, {t + 2.2 * sigma, 0.2 * m.r_amp, 0.8 * sigma});
        add_bump(x, fs, {t + qt_peak + 0.04, 0.8 * m.t_amp, m.t_sigma * 1.2});
        return;
    }
    if (with_p) add_bump(x, fs, {t - m.pr_s, m.p_amp, m.p_sigma});
    add_bump(x, fs, {t, m.r_amp, m.qrs_sigma});
    add_bump(x, fs, {t + 2.0 * m.qrs_sigma, -0.12 * m.r_amp, 0.7 * m.qrs_sigma});
    add_bump(x, fs, {t + qt_peak, m.t_amp, m.t_sigma});
}

std::vector<double> sinus_schedule(Rng& rng, double duration, double mean_rr, double jitter) {
    const double resp_phase = rng.uniform() * 2.0 * kPi;
    std::vector<double> times;
    double t = (0.15 + 0.5 * rng.uniform()) * mean_rr;
    while (t < duration - 0.15) {
        times.push_back(t);
        const double rsa = 0.03 * std::sin(2.0 * kPi * 0.25 * t + resp_phase);
        t += mean_rr * (1.0 + rsa + jitter * rng.normal());
    }
    return times;
}

double rr_mad_ratio(const std::vector<double>& times) {
    std::vector<double> rr;
    for (std::size_t i = 1; i < times.size(); ++i) rr.push_back(times[i] - times[i - 1]);
    const double med = median(rr);
    return med > 0.0 ? mad(rr) / med : 0.0;
}

void add_wander_and_noise(std::vector<double>& x, int fs, Rng& rng, double white_sd) {
    const double amp = 0.05 + 0.15 * rng.uniform();
    const double freq = 0.15 + 0.25 * rng.uniform();
    const double phase = 2.0 * kPi * rng.uniform();
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double t = static_cast<double>(i) / fs;
        x[i] += amp * std::sin(2.0 * kPi * freq * t + phase) + white_sd * rng.normal();
    }
}

double power(const std::vector<double>& x) {
    double s = 0.0;
    for (double v : x) s += v * v;
    return x.empty() ? 0.0 : s / static_cast<double>(x.size());
}

SynthResult generate(ClassLabel target, std::optional<OtherVariant> forced, std::uint64_t seed,
                     double duration_s) {
    if (!(duration_s >= kSynthMinDuration && duration_s <= kSynthMaxDuration))
        throw ArgumentError("synthetic duration must lie in [9, 61] s");
    Rng rng(seed * 0x9e3779b97f4a7c15ULL ^ (index_of(target) + 0x5eedULL));
    auto u = [&rng](double a, double b) { return rng.uniform(a, b); };

    const int fs = kCanonicalFs;
    const auto n = static_cast<std::size_t>(std::llround(duration_s * fs));
    std::vector<double> x(n, 0.0);
    SynthResult res;
    res.record.fs = fs;
    res.record.label = target;
    Morphology m = draw_morphology(rng);
    SynthTruth& truth = res.truth;

    auto render_schedule = [&](const std::vector<double>& times, const std::vector<bool>& ectopic, bool with_p) {
        for (std::size_t i = 0; i < times.size(); ++i) {
            const double rr = i + 1 < times.size() ? times[i + 1] - times[i]
                                                   : (i > 0 ? times[i] - times[i - 1] : 0.8);
            add_beat(x, fs, m, times[i], rr, with_p, ectopic[i]);
        }
    };

    switch (target) {
        case ClassLabel::Normal: {
            const double rr = 60.0 / u(60.0, 90.0);
            truth.beat_times_s = sinus_schedule(rng, duration_s, rr, 0.015);
            truth.ectopic.assign(truth.beat_times_s.size(), false);
            render_schedule(truth.beat_times_s, truth.ectopic, true);
            add_wander_and_noise(x, fs, rng, 0.008);
            break;
        }
        case ClassLabel::AFib: {
            const double med_rr = 60.0 / u(70.0, 130.0);
            for (int attempt = 0; attempt < 200; ++attempt) {
                std::vector<double> times;
                double t = u(0.1, 0.6) * med_rr;
                while (t < duration_s - 0.15) {
                    times.push_back(t);
                    t += std::max(0.3, u(0.4, 1.6) * med_rr);
                }
                truth.beat_times_s = std::move(times);
                if (truth.beat_times_s.size() >= 4 && rr_mad_ratio(truth.beat_times_s) >= 0.2) break;
            }
            truth.has_p = false;
            truth.ectopic.assign(truth.beat_times_s.size(), false);
            render_schedule(truth.beat_times_s, truth.ectopic, false);
            // Fibrillatory baseline: a few drifting 5-8 Hz components.
            const double fa = u(0.015, 0.03);
            for (int k = 0; k < 3; ++k) {
                const double f = u(5.0, 8.0), ph = u(0.0, 2.0 * kPi);
                for (std::size_t i = 0; i < n; ++i)
                    x[i] += fa / 3.0 * std::sin(2.0 * kPi * f * static_cast<double>(i) / fs + ph);
            }
            add_wander_and_noise(x, fs, rng, 0.008);
            break;
        }
        case ClassLabel::Other: {
            const auto variant = forced ? *forced : static_cast<OtherVariant>(static_cast<int>(0 + rng.below(4)));
            truth.variant = variant;
            double rr = 60.0 / u(60.0, 90.0);
            if (variant == OtherVariant::Tachycardia) rr = 60.0 / u(108.0, 140.0);
            if (variant == OtherVariant::Bradycardia) rr = 60.0 / u(35.0, 47.0);
            if (variant == OtherVariant::WideQrs) m.qrs_sigma = u(0.024, 0.030);
            truth.beat_times_s = sinus_schedule(rng, duration_s, rr, 0.015);
            truth.ectopic.assign(truth.beat_times_s.size(), false);
            if (variant == OtherVariant::Ectopic && truth.beat_times_s.size() >= 6) {
                // Premature wide beats with a full compensatory pause: the
                // sinus beat is replaced by an earlier ectopic one.
                const std::size_t count = std::min<std::size_t>(
                    truth.beat_times_s.size() / 6, static_cast<std::size_t>(static_cast<int>(1 + rng.below(3))));
                std::vector<std::size_t> slots;
                for (std::size_t i = 2; i + 2 < truth.beat_times_s.size(); i += 3) slots.push_back(i);
                rng.shuffle(slots.begin(), slots.end());
                for (std::size_t k = 0; k < std::min(count, slots.size()); ++k) {
                    const std::size_t i = slots[k];
                    const double prev = truth.beat_times_s[i - 1];
                    truth.beat_times_s[i] = prev + u(0.55, 0.65) * (truth.beat_times_s[i] - prev);
                    truth.ectopic[i] = true;
                }
            }
            render_schedule(truth.beat_times_s, truth.ectopic, true);
            add_wander_and_noise(x, fs, rng, 0.008);
            break;
        }
        case ClassLabel::Noisy: {
            const double rr = 60.0 / u(60.0, 100.0);
            truth.beat_times_s = sinus_schedule(rng, duration_s, rr, 0.02);
            truth.ectopic.assign(truth.beat_times_s.size(), false);
            render_schedule(truth.beat_times_s, truth.ectopic, true);
            const double ps = power(x);
            // Broadband noise: white + randomly smoothed bursts + spikes.
            std::vector<double> noise(n, 0.0);
            std::size_t i = 0;
            while (i < n) {
                const auto len = static_cast<std::size_t>(u(0.3, 2.0) * fs);
                const int smooth = static_cast<int>(1 + rng.below(8));
                const double gain = u(0.5, 2.0);
                std::vector<double> w(len + static_cast<std::size_t>(smooth), 0.0);
                for (double& v : w) v = rng.normal();
                for (std::size_t k = 0; k < len && i + k < n; ++k) {
                    double s = 0.0;
                    for (int j = 0; j < smooth; ++j) s += w[k + static_cast<std::size_t>(j)];
                    noise[i + k] = gain * s / std::sqrt(static_cast<double>(smooth));
                }
                i += len;
            }
            const int spikes = static_cast<int>(2 + rng.below(9));
            for (int s = 0; s < spikes; ++s)
                add_bump(noise, fs, {u(0.0, duration_s), u(-3.0, 3.0), u(0.01, 0.05)});
            const double target_snr_db = u(-12.0, -2.0);
            const double scale = std::sqrt(ps / power(noise) * std::pow(10.0, -target_snr_db / 10.0));
            for (std::size_t k = 0; k < n; ++k) x[k] += scale * noise[k];
            truth.snr_db = target_snr_db;
            add_wander_and_noise(x, fs, rng, 0.0);
            break;
        }
    }
    truth.qrs_sigma_ms = m.qrs_sigma * 1000.0;
    res.record.samples = std::move(x);
    return res;
}

}  // namespace

SynthResult synth_record_with_truth(ClassLabel target, std::uint64_t seed, double duration_s) {
    return generate(target, std::nullopt, seed, duration_s);
}

Record synth_record(ClassLabel target, std::uint64_t seed, double duration_s) {
    return generate(target, std::nullopt, seed, duration_s).record;
}

SynthResult synth_other(OtherVariant variant, std::uint64_t seed, double duration_s) {
    return generate(ClassLabel::Other, variant, seed, duration_s);
}

}  // namespace ecgr
