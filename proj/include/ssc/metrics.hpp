#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ssc/tensor.hpp"
#include "ssc/voxel.hpp"

namespace ssc {

// Per-class confusion tallies over entries whose ground truth is valid.
// For every class, tp + fp + fn + tn equals the number of valid entries.
struct ConfusionCounts {
    int64_t num_classes = 0;
    int64_t valid_total = 0;
    std::vector<int64_t> tp, fp, fn, tn;
};

ConfusionCounts confusion(const std::vector<uint8_t>& pred, const std::vector<uint8_t>& gt,
                          int64_t num_classes);

// iou: binary intersection-over-union of occupancy (any non-empty class).
// per_class[c]: tp / (tp + fp + fn) for class c; classes absent from both
// prediction and ground truth are excluded (counted[c] = false) and do not
// enter miou. miou averages the semantic classes (class 0, empty, excluded).
struct MetricReport {
    double iou = 0.0;
    double miou = 0.0;
    std::vector<double> per_class;
    std::vector<bool> counted;
    int64_t valid_total = 0;
};

MetricReport iou_miou(const std::vector<uint8_t>& pred, const std::vector<uint8_t>& gt,
                      int64_t num_classes);

// Evaluates the same report on crops of the grid: voxels whose cells lie
// within [origin_x, origin_x + range) along the forward axis. A range
// covering the whole grid reproduces the full report.
struct RangeReport {
    double range_m = 0.0;
    MetricReport metrics;
};

std::vector<RangeReport> range_metrics(const VoxelGrid<uint8_t>& pred,
                                       const VoxelGrid<uint8_t>& gt, int64_t num_classes,
                                       const std::vector<double>& ranges);

// Text report: one "name iou" line per counted class, then IoU and mIoU.
// Excluded classes print n/a.
std::string format_metric_report(const MetricReport& report,
                                 const std::vector<std::string>& class_names);

std::string format_range_reports(const std::vector<RangeReport>& reports,
                                 const std::vector<std::string>& class_names);

// Per-entry argmax over the class axis of [C, N] values; ties resolve to
// the smallest class index.
template <typename T>
std::vector<uint8_t> argmax_labels(const TensorPtr<T>& probs) {
    if (probs->ndim() < 2)
        throw std::invalid_argument("argmax_labels: need [C,...], got " + shape_str(probs->shape));
    int64_t C = probs->shape[0];
    if (C < 1 || C > 255)
        throw std::invalid_argument("argmax_labels: class count " + std::to_string(C) +
                                    " outside [1,255]");
    int64_t N = probs->numel() / C;
    std::vector<uint8_t> out(static_cast<size_t>(N));
    for (int64_t i = 0; i < N; ++i) {
        int64_t best = 0;
        T best_v = probs->data[i];
        for (int64_t c = 1; c < C; ++c) {
            T v = probs->data[c * N + i];
            if (v > best_v) {
                best_v = v;
                best = c;
            }
        }
        out[i] = static_cast<uint8_t>(best);
    }
    return out;
}

}  // namespace ssc
