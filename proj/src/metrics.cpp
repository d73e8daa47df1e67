// Copyright (c) 2026 The iterflow Authors
// SPDX-License-Identifier: Apache-2.0

#include "iterflow/metrics.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace iterflow {

namespace {

// Walks valid pixels, handing each per-pixel endpoint error (and gt magnitude)
// to the accumulator.
template <typename F>
long for_valid_pixels(const FlowField& pred, const FlowField& gt, F&& fn) {
    if (pred.uv.shape != gt.uv.shape)
        throw std::invalid_argument("metrics: pred/gt shapes differ: " + shape_str(pred.uv.shape) +
                                    " vs " + shape_str(gt.uv.shape));
    long n = 0;
    for (int y = 0; y < gt.height(); ++y)
        for (int x = 0; x < gt.width(); ++x) {
            if (!gt.is_valid(y, x)) continue;
            const double du = static_cast<double>(pred.u(y, x)) - gt.u(y, x);
            const double dv = static_cast<double>(pred.v(y, x)) - gt.v(y, x);
            const double err = std::sqrt(du * du + dv * dv);
            const double mag = std::hypot(static_cast<double>(gt.u(y, x)),
                                          static_cast<double>(gt.v(y, x)));
            fn(err, mag);
            ++n;
        }
    if (n == 0) throw std::invalid_argument("metrics: no valid pixels");
    return n;
}

}  // namespace

double epe(const FlowField& pred, const FlowField& gt) {
    double acc = 0.0;
    const long n = for_valid_pixels(pred, gt, [&](double err, double) { acc += err; });
    return acc / static_cast<double>(n);
}

double px1(const FlowField& pred, const FlowField& gt) {
    long outliers = 0;
    const long n = for_valid_pixels(pred, gt, [&](double err, double) {
        if (err > 1.0) ++outliers;
    });
    return 100.0 * static_cast<double>(outliers) / static_cast<double>(n);
}

double fl_all(const FlowField& pred, const FlowField& gt) {
    long outliers = 0;
    const long n = for_valid_pixels(pred, gt, [&](double err, double mag) {
        if (err > 3.0 && err > 0.05 * mag) ++outliers;
    });
    return 100.0 * static_cast<double>(outliers) / static_cast<double>(n);
}

double wauc(const FlowField& pred, const FlowField& gt) {
    // inlier_counts[i] = #pixels with err <= (i+1)*0.05
    long counts[100] = {0};
    const long n = for_valid_pixels(pred, gt, [&](double err, double) {
        for (int i = 0; i < 100; ++i)
            if (err <= (i + 1) * 0.05) ++counts[i];
    });
    double num = 0.0, den = 0.0;
    for (int i = 0; i < 100; ++i) {
        const double delta = (i + 1) * 0.05;
        const double w = 1.0 - delta / 5.0;
        num += w * (static_cast<double>(counts[i]) / static_cast<double>(n));
        den += w;
    }
    return 100.0 * num / den;
}

MetricReport evaluate(const FlowField& pred, const FlowField& gt) {
    MetricReport r;
    r.epe = epe(pred, gt);
    r.px1 = px1(pred, gt);
    r.fl_all = fl_all(pred, gt);
    r.wauc = wauc(pred, gt);
    for_valid_pixels(pred, gt, [&](double, double) {});
    long n = 0;
    for (float m : gt.valid.data)
        if (m != 0.0f) ++n;
    r.n_valid = n;
    return r;
}

MetricReport aggregate(const std::vector<MetricReport>& reports) {
    if (reports.empty()) throw std::invalid_argument("aggregate: no reports");
    MetricReport out;
    double wsum = 0.0;
    for (const MetricReport& r : reports) {
        const double w = static_cast<double>(r.n_valid);
        out.epe += w * r.epe;
        out.px1 += w * r.px1;
        out.fl_all += w * r.fl_all;
        out.wauc += w * r.wauc;
        out.n_valid += r.n_valid;
        wsum += w;
    }
    if (wsum <= 0.0) throw std::invalid_argument("aggregate: no valid pixels");
    out.epe /= wsum;
    out.px1 /= wsum;
    out.fl_all /= wsum;
    out.wauc /= wsum;
    return out;
}

std::string metric_csv_header() { return "label,epe,px1,fl_all,wauc,n_valid"; }

std::string metric_csv_row(const std::string& label, const MetricReport& r) {
    std::ostringstream os;
    os.precision(9);
    os << label << "," << r.epe << "," << r.px1 << "," << r.fl_all << "," << r.wauc << ","
       << r.n_valid;
    return os.str();
}

std::string format_report(const MetricReport& r) {
    std::ostringstream os;
    os.precision(4);
    os << std::fixed << "EPE " << r.epe << " px | 1px " << r.px1 << "% | Fl " << r.fl_all
       << "% | WAUC " << r.wauc << "% | valid " << r.n_valid;
    return os.str();
}

}  // namespace iterflow
