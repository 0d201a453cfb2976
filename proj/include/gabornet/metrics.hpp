#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "gabornet/errors.hpp"
#include "gabornet/trainer.hpp"
#include "gabornet/wavefield.hpp"

namespace gabornet {

/// Image agreement on a [0, 1] scale; PSNR uses peak 1.
struct MetricsReport {
    double mse = 0.0;
    double psnr = std::numeric_limits<double>::infinity();
    double max_abs_error = 0.0;
};

inline MetricsReport compare_images(const RealImage& a, const RealImage& b) {
    if (a.n() != b.n()) {
        throw DimensionError("image sizes differ: " + std::to_string(a.n()) + " vs " + std::to_string(b.n()));
    }
    MetricsReport r;
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a.values()[i] - b.values()[i];
        acc += d * d;
        r.max_abs_error = std::max(r.max_abs_error, std::abs(d));
    }
    r.mse = acc / static_cast<double>(a.size());
    r.psnr = r.mse > 0.0 ? 10.0 * std::log10(1.0 / r.mse) : std::numeric_limits<double>::infinity();
    return r;
}

inline std::string format_metric(double v) { return std::isinf(v) ? std::string("inf") : format_double(v); }

/// "mse=<v> psnr=<v> maxabs=<v>"
inline std::string metrics_line(const MetricsReport& r) {
    return "mse=" + format_metric(r.mse) + " psnr=" + format_metric(r.psnr) + " maxabs=" + format_metric(r.max_abs_error);
}

inline std::string metrics_csv(const MetricsReport& r) {
    return "mse,psnr,maxabs\n" + format_metric(r.mse) + "," + format_metric(r.psnr) + "," +
           format_metric(r.max_abs_error) + "\n";
}

} // namespace gabornet
