#pragma once

#include "ecgr/interpretation.hpp"
#include "ecgr/signal_io.hpp"

#include <string>

namespace ecgr {

struct RenderOptions {
    double px_per_second = 120.0;
    double px_per_mv = 60.0;
    double label_band_px = 28.0;
    double margin_px = 10.0;
};

// Standalone SVG: signal polyline, P/QRS/T spans, deleted evidence in grey
// (class "deleted"), episode labels along the top.
std::string render_svg(const Interpretation& itp, const Record& r, const RenderOptions& opt = {});

}  // namespace ecgr
