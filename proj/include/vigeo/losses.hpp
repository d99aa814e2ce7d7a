#pragma once

#include <optional>
#include <string>
#include <vector>

#include "vigeo/geometry.hpp"
#include "vigeo/model.hpp"
#include "vigeo/tensor.hpp"

namespace vigeo::losses {

struct LossWeights {
    double points_normal = 1.0;
    double normal = 1.0;
};

struct ScaleAlignment {
    double s = 1.0;
};

// Exact minimizer of sum_valid (1/gt_depth) * ||s * pred - gt||_1 over s.
// The objective is piecewise-linear convex, so the weighted median of the
// per-component ratios gt/pred (weight |pred|/gt_depth) solves it exactly.
// Components with pred == 0 contribute constants and are skipped. The result
// is clamped to [1e-6, 1e6].
// pred/gt points: [N x 3 x H x W]; gt_depth/valid: [N x H x W].
template <class T>
ScaleAlignment solve_scale(const TensorT<T>& pred_points, const TensorT<T>& gt_points,
                           const TensorT<T>& gt_depth, const MaskTensor& valid);

template <class T>
struct PointsLossResult {
    double loss = 0.0;
    TensorT<T> grad;  // d loss / d pred_points
    double scale = 1.0;
};

// Scale-aligned, depth-weighted L1 point-map loss, averaged over valid
// pixels. The alignment scale is treated as a constant in the gradient.
template <class T>
PointsLossResult<T> points_loss(const TensorT<T>& pred_points, const TensorT<T>& gt_points,
                                const TensorT<T>& gt_depth, const MaskTensor& valid);

template <class T>
struct NormalLossResult {
    double loss = 0.0;
    TensorT<T> grad;          // d loss / d pred_normals
    int64_t degenerate = 0;   // zero-length predictions, excluded from the mean
    int64_t used = 0;
};

// Mean angular distance arccos(<n, n_hat> / (|n| |n_hat|)) over valid pixels,
// cosine clamped to [-1 + 1e-7, 1 - 1e-7]; gradient is zero where the clamp
// saturates. pred/gt normals: [N x 3 x H x W]; valid: [N x H x W].
template <class T>
NormalLossResult<T> normal_loss(const TensorT<T>& pred_normals, const TensorT<T>& gt_normals,
                                const MaskTensor& valid);

// Same angular objective, but against normals derived from the predicted
// point map; the gradient flows through the difference stencil and the cross
// product. Pixels with a degenerate stencil are excluded and counted.
template <class T>
NormalLossResult<T> points_normal_loss(const TensorT<T>& pred_points,
                                       const TensorT<T>& gt_normals, const MaskTensor& valid);

struct LossTargets {
    Tensor gt_points;            // [N x 3 x H x W]
    Tensor gt_depth;             // [N x H x W]
    std::optional<Tensor> gt_normals;  // absent for datasets without normal supervision
    MaskTensor valid;            // [N x H x W]
};

struct TotalLossResult {
    double total = 0.0;
    double points = 0.0;
    double normal = 0.0;
    double points_normal = 0.0;
    Tensor d_points;    // combined gradient w.r.t. predicted points
    Tensor d_normals;   // gradient w.r.t. predicted normals (zero without supervision)
    double scale = 1.0;
};

TotalLossResult total_loss(const Tensor& pred_points, const Tensor& pred_normals,
                           const LossTargets& targets, const LossWeights& weights);

// ---------------------------------------------------------------------------
// Toy training driver
// ---------------------------------------------------------------------------

struct DataConfig {
    std::vector<geom::SceneKind> kinds{geom::SceneKind::plane, geom::SceneKind::sphere};
    int frames = 4;
    int height = 16;
    int width = 16;
    int scenes_per_kind = 4;
    uint64_t seed = 7;
};

struct StepRecord {
    int step = 0;
    double total = 0.0;
    double points = 0.0;
    double normal = 0.0;
    double points_normal = 0.0;
};

struct TrainingLog {
    std::vector<StepRecord> steps;
    void save_csv(const std::string& path) const;
};

struct AdamW {
    double lr = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
    int64_t t = 0;
    std::vector<std::vector<float>> m, v;

    void step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads);
};

// Builds LossTargets views over a rendered scene.
LossTargets targets_from_synth(const geom::SynthData& data, bool with_normals = true);

struct TrainResult {
    model::ToyModel model;
    TrainingLog log;
};

// AdamW training on synthetic scenes with per-step partition sampling
// (uniform over full, per-frame, and random 2-4 frame chunks). Aborts with a
// diagnostic on a non-finite loss. steps == 0 leaves the model untouched.
TrainResult train_toy(const model::ModelConfig& model_config, const DataConfig& data_config,
                      int steps, double lr, const LossWeights& weights);

}  // namespace vigeo::losses
