#include "ecgr/render.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace ecgr {

namespace {

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

std::string escape(std::string_view s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '&': out += "&amp;"; break;
            case '"': out += "&quot;"; break;
            case '\'': out += "&apos;"; break;
            default:
                if (static_cast<unsigned char>(c) >= 0x20 || c == '\n' || c == '\t') out += c;
        }
    }
    return out;
}

struct Frame {
    double x0, y_mid, sx, sy, width, height;
    long n;

    double x(double sample) const { return x0 + sx * std::clamp(sample, 0.0, static_cast<double>(std::max(n - 1, 0L))); }
    double y(double mv) const { return y_mid - sy * mv; }
};

void span(std::ostringstream& os, const Frame& f, long a, long b, const char* cls, double top, double h) {
    if (b < a) std::swap(a, b);
    os << "<rect class=\"" << cls << "\" x=\"" << num(f.x(static_cast<double>(a))) << "\" y=\"" << num(top)
       << "\" width=\"" << num(std::max(1.0, f.x(static_cast<double>(b)) - f.x(static_cast<double>(a))))
       << "\" height=\"" << num(h) << "\"/>\n";
}

void beat_spans(std::ostringstream& os, const Frame& f, const BeatObservation& b, bool deleted, double top, double h) {
    if (deleted) {
        span(os, f, b.qrs_onset, b.qrs_offset, "deleted", top, h);
        os << "<line class=\"deleted-mark\" x1=\"" << num(f.x(static_cast<double>(b.qrs_peak))) << "\" y1=\""
           << num(top) << "\" x2=\"" << num(f.x(static_cast<double>(b.qrs_peak))) << "\" y2=\"" << num(top + h)
           << "\"/>\n";
        return;
    }
    if (b.p) span(os, f, b.p->onset, b.p->offset, "p", top, h);
    span(os, f, b.qrs_onset, b.qrs_offset, "qrs", top, h);
    if (b.t) span(os, f, b.t->onset, b.t->offset, "t", top, h);
    os << "<circle class=\"peak\" cx=\"" << num(f.x(static_cast<double>(b.qrs_peak))) << "\" cy=\""
       << num(f.y(b.qrs_amp)) << "\" r=\"2\"><title>" << escape(to_string(b.tag)) << "</title></circle>\n";
}

}  // namespace

std::string render_svg(const Interpretation& itp, const Record& r, const RenderOptions& opt) {
    const long n = static_cast<long>(r.samples.size());
    const int fs = r.fs > 0 ? r.fs : kCanonicalFs;
    double lo = 0.0, hi = 0.0;
    for (double v : r.samples)
        if (std::isfinite(v)) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    const double range = std::max(hi - lo, 0.5);
    const double plot_h = range * opt.px_per_mv;
    const double plot_w = std::max(1.0, static_cast<double>(n) / fs * opt.px_per_second);
    const double top = opt.margin_px + opt.label_band_px;

    Frame f{};
    f.x0 = opt.margin_px;
    f.sx = opt.px_per_second / fs;
    f.sy = opt.px_per_mv;
    f.y_mid = top + hi * opt.px_per_mv + (range - (hi - lo)) * 0.5 * opt.px_per_mv;
    f.width = plot_w + 2.0 * opt.margin_px;
    f.height = top + plot_h + opt.margin_px;
    f.n = n;

    std::ostringstream os;
    os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
       << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(f.width) << "\" height=\"" << num(f.height)
       << "\" viewBox=\"0 0 " << num(f.width) << ' ' << num(f.height) << "\">\n"
       << "<title>" << escape(r.id) << "</title>\n"
       << "<style>\n"
          ".p{fill:#2e7d32;fill-opacity:0.18}\n"
          ".qrs{fill:#1565c0;fill-opacity:0.22}\n"
          ".t{fill:#ef6c00;fill-opacity:0.18}\n"
          ".deleted{fill:#9e9e9e;fill-opacity:0.35}\n"
          ".deleted-mark{stroke:#757575;stroke-dasharray:3,2}\n"
          ".peak{fill:#1565c0}\n"
          ".signal{fill:none;stroke:#000;stroke-width:0.8}\n"
          ".episode{fill:none;stroke:#555;stroke-width:0.5}\n"
          ".label{font:11px sans-serif;fill:#222}\n"
          "</style>\n";

    os << "<g id=\"waves\">\n";
    for (const auto& b : itp.beats) beat_spans(os, f, b, false, top, plot_h);
    for (const auto& b : itp.deleted) beat_spans(os, f, b, true, top, plot_h);
    os << "</g>\n";

    os << "<polyline class=\"signal\" points=\"";
    // Decimate to at most ~2 points per horizontal pixel.
    const long step = std::max(1L, static_cast<long>(std::floor(1.0 / (2.0 * f.sx))));
    for (long i = 0; i < n; i += step) {
        const double v = std::isfinite(r.samples[static_cast<std::size_t>(i)]) ? r.samples[static_cast<std::size_t>(i)] : 0.0;
        os << num(f.x(static_cast<double>(i))) << ',' << num(f.y(v)) << ' ';
    }
    os << "\"/>\n";

    if (!itp.episodes.empty() && !itp.beats.empty()) {
        os << "<g id=\"episodes\">\n";
        const auto durations = episode_durations_s(itp, r);
        double t0 = 0.0;
        for (std::size_t e = 0; e < itp.episodes.size(); ++e) {
            const double x0 = opt.margin_px + t0 * opt.px_per_second;
            const double w = durations[e] * opt.px_per_second;
            os << "<rect class=\"episode\" x=\"" << num(x0) << "\" y=\"" << num(opt.margin_px) << "\" width=\""
               << num(std::max(w, 1.0)) << "\" height=\"" << num(opt.label_band_px - 4.0) << "\"/>\n"
               << "<text class=\"label\" x=\"" << num(x0 + 3.0) << "\" y=\"" << num(opt.margin_px + 15.0) << "\">"
               << escape(to_string(itp.episodes[e].pattern)) << "</text>\n";
            t0 += durations[e];
        }
        os << "</g>\n";
    }
    os << "</svg>\n";
    return os.str();
}

}  // namespace ecgr
