#pragma once

#include <memory>
#include <string>
#include <vector>

#include "vigeo/geometry.hpp"
#include "vigeo/model.hpp"
#include "vigeo/tensor.hpp"

namespace vigeo::refine {

// Raw depth plus a validity mask; values must be positive wherever valid.
struct SparseDepth {
    Tensor values;     // [H x W]
    MaskTensor valid;  // [H x W]

    void check() const;
    int64_t valid_count() const;
};

struct PoissonConfig {
    double lambda = 10.0;   // data-term weight
    double gamma = 0.0;     // shift applied to the mono prior
    double cg_tol = 1e-6;   // relative residual target
    int cg_max_iter = 0;    // 0 -> 10 * H * W
};

struct NormalizationState {
    double m = 1.0;  // median depth over valid sparse measurements of the sequence
};

// Flags measurements that disagree with a locally scale-aligned mono prior.
// Both depths are compared as ray distances under `cam`; the local scale is
// the median ratio over the k x k window. Pixels whose window holds fewer
// than 5 valid samples, or whose relative residual exceeds tau, are dropped.
// The output mask is always a subset of the input mask.
std::vector<SparseDepth> filter_outliers(const std::vector<SparseDepth>& raw,
                                         const std::vector<Tensor>& mono,
                                         const geom::PinholeCamera& cam, int window = 7,
                                         double tau = 0.15);

// Least-squares a * mono + b ~= sparse over valid pixels; gamma =
// clamp(b/a, 0, inf) + 1e-4. A non-positive slope falls back to
// max(eps, -min(mono) + eps).
double derive_gamma(const Tensor& mono, const SparseDepth& sparse);

// Screened-Poisson completion in the log domain: minimizes
//   sum_edges ((u_p - u_q) - (v_p - v_q))^2 + lambda * sum_valid (u_p - log d_p)^2
// with v = log(mono + gamma) on the 4-neighbour grid, via conjugate
// gradients on the normal equations. Returns u = log(prior).
TensorD poisson_solve_log(const SparseDepth& filtered, const Tensor& mono,
                          const PoissonConfig& config);

// exp of the log-domain solve: the dense prior.
Tensor poisson_prior(const SparseDepth& filtered, const Tensor& mono,
                     const PoissonConfig& config);

struct NormalizedSequence {
    std::vector<Tensor> log_priors;  // log(prior / m)
    NormalizationState state;
};

NormalizedSequence normalize_sequence(const std::vector<Tensor>& priors,
                                      const std::vector<SparseDepth>& sparse);

// Completion teacher interface (Eq. 5 call contract): consumes the RGB
// sequence and the normalized log priors, returns depth in units of the
// sequence median (the caller multiplies by m).
class CompletionTeacher {
public:
    virtual ~CompletionTeacher() = default;
    // rgb [N x 3 x H x W] (may be empty for teachers that ignore appearance),
    // log_priors: N tensors [H x W]. Returns N tensors [H x W].
    virtual std::vector<Tensor> complete(const Tensor& rgb,
                                         const std::vector<Tensor>& log_priors) = 0;
    virtual std::string name() const = 0;
};

// Passes the prior straight through: output = exp(log_prior).
class IdentityTeacher final : public CompletionTeacher {
public:
    std::vector<Tensor> complete(const Tensor& rgb,
                                 const std::vector<Tensor>& log_priors) override;
    std::string name() const override { return "identity"; }
};

// Wraps a trained CompletionNet; the network predicts log(depth/m).
class ToyTeacher final : public CompletionTeacher {
public:
    explicit ToyTeacher(model::CompletionNet net) : net_(std::move(net)) {}
    std::vector<Tensor> complete(const Tensor& rgb,
                                 const std::vector<Tensor>& log_priors) override;
    std::string name() const override { return "toy"; }
    const model::CompletionNet& net() const { return net_; }

private:
    model::CompletionNet net_;
};

std::vector<Tensor> complete_sequence(const Tensor& rgb,
                                      const std::vector<Tensor>& log_priors, double m,
                                      CompletionTeacher& teacher);

struct RefineConfig {
    int filter_window = 7;
    double tau = 0.15;
    double lambda = 10.0;
    double cg_tol = 1e-6;
    int cg_max_iter = 0;
};

// Full pipeline: filter -> gamma -> per-frame Poisson prior -> median-log
// normalization -> teacher completion. Returns dense pseudo-labels.
std::vector<Tensor> refine_pipeline(const Tensor& rgb, const std::vector<SparseDepth>& raw,
                                    const std::vector<Tensor>& mono,
                                    const geom::PinholeCamera& cam, const RefineConfig& config,
                                    CompletionTeacher& teacher);

// ---------------------------------------------------------------------------
// Teacher training on synthetic corruption
// ---------------------------------------------------------------------------

struct CorruptionConfig {
    double hole_fraction = 0.30;     // valid pixels dropped
    double outlier_fraction = 0.05;  // gross multiplicative outliers
    double outlier_scale = 8.0;
    double noise = 0.02;             // relative depth jitter
    double mono_smooth_scale = 0.25; // low-frequency distortion of the mono prior
};

struct CorruptedScene {
    std::vector<SparseDepth> raw;
    std::vector<Tensor> mono;
};

// Builds sparse, outlier-ridden raw depth and a smoothly distorted mono
// prior from rendered ground truth.
CorruptedScene corrupt_scene(const geom::SynthData& data, const CorruptionConfig& config,
                             uint64_t seed);

struct TeacherTrainResult {
    model::CompletionNet net;
    std::vector<double> losses;  // per-step L1 in log space
};

// Trains the toy completion teacher on synthetically corrupted scenes: the
// target is log(gt_depth / m) given the RGB frames and the normalized log
// prior produced by the filtering + Poisson stages.
TeacherTrainResult train_toy_teacher(const model::ModelConfig& model_config, int steps,
                                     double lr, uint64_t data_seed);

}  // namespace vigeo::refine
