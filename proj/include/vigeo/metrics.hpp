#pragma once

#include <optional>
#include <string>
#include <vector>

#include "vigeo/tensor.hpp"

namespace vigeo::metrics {

enum class AlignKind { none, scale_seq, affine };

std::string align_kind_name(AlignKind k);

struct MetricReport {
    std::optional<double> rel, delta1;
    std::optional<double> rel_p, delta_p_025;
    std::optional<double> normal_mean_deg, normal_median_deg, delta_1125;
    AlignKind alignment = AlignKind::none;
    double scale = 1.0;         // scale-seq
    double affine_a = 1.0, affine_b = 0.0;  // per-frame affine, last frame fitted
    int64_t valid_count = 0;
};

// Lower-median convention: the lower middle element for even counts.
double median(std::vector<double> values);

// Robust per-sequence scale: median over valid pixels of gt/pred.
// depth variant expects [N x H x W]; the points variant uses norm ratios.
double align_scale_seq(const Tensor& pred_depth, const Tensor& gt_depth,
                       const MaskTensor& mask);
double align_scale_seq_points(const Tensor& pred_points, const Tensor& gt_points,
                              const MaskTensor& mask);

struct AffineFit {
    double a = 1.0;
    double b = 0.0;
};

// Closed-form least squares a * pred + b ~= gt over valid pixels. Constant
// predictions are degenerate and rejected.
AffineFit align_affine(const Tensor& pred_depth, const Tensor& gt_depth,
                       const MaskTensor& mask);

struct DepthMetrics {
    double rel = 0.0;
    double delta1 = 0.0;
    int64_t count = 0;
};

DepthMetrics depth_metrics(const Tensor& pred, const Tensor& gt, const MaskTensor& mask,
                           double s);

struct PointmapMetrics {
    double rel_p = 0.0;
    double delta_p_025 = 0.0;
    int64_t count = 0;
    int64_t excluded = 0;  // zero-norm gt points
};

PointmapMetrics pointmap_metrics(const Tensor& pred_points, const Tensor& gt_points,
                                 const MaskTensor& mask, double s);

struct NormalMetrics {
    double mean_deg = 0.0;
    double median_deg = 0.0;
    double delta_1125 = 0.0;
    int64_t count = 0;
};

NormalMetrics normal_metrics(const Tensor& pred_normals, const Tensor& gt_normals,
                             const MaskTensor& mask);

// CSV emission: one row per sequence plus an aggregate row. Column names are
// fixed: rel, delta1, rel_p, delta_p_025, n_mean_deg, n_med_deg, delta_1125,
// valid_count.
void save_reports_csv(const std::string& path, const std::vector<MetricReport>& sequences,
                      const MetricReport& aggregate);

}  // namespace vigeo::metrics
