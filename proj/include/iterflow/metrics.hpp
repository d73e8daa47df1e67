// Copyright (c) 2026 The iterflow Authors
// SPDX-License-Identifier: Apache-2.0
//
// Benchmark-style flow metrics, computed at full resolution over valid pixels.

#pragma once

#include <string>
#include <vector>

#include "iterflow/flowfield.hpp"

namespace iterflow {

struct MetricReport {
    double epe = 0.0;     // mean endpoint error, px
    double px1 = 0.0;     // % of valid pixels with EPE > 1 px
    double fl_all = 0.0;  // % with EPE > 3 px and EPE > 5% of gt magnitude
    double wauc = 0.0;    // weighted area under the inlier curve, %
    long n_valid = 0;
};

double epe(const FlowField& pred, const FlowField& gt);
double px1(const FlowField& pred, const FlowField& gt);
double fl_all(const FlowField& pred, const FlowField& gt);

// Thresholds delta_i = i * 0.05 px for i = 1..100 with linearly decaying
// weights w_i = 1 - delta_i / 5; returns 100 * sum(w_i * inlier(delta_i)) / sum(w_i).
double wauc(const FlowField& pred, const FlowField& gt);

MetricReport evaluate(const FlowField& pred, const FlowField& gt);

// Valid-pixel-weighted aggregation across samples.
MetricReport aggregate(const std::vector<MetricReport>& reports);

std::string metric_csv_header();
std::string metric_csv_row(const std::string& label, const MetricReport& r);
std::string format_report(const MetricReport& r);

}  // namespace iterflow
