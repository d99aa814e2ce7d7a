#include "vigeo/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "vigeo/io.hpp"

namespace vigeo::losses {

namespace {

constexpr double kScaleClampLo = 1e-6;
constexpr double kScaleClampHi = 1e6;
constexpr double kCosClamp = 1e-7;

template <class T>
void check_points_shapes(const TensorT<T>& pred, const TensorT<T>& gt, const TensorT<T>& depth,
                         const MaskTensor& valid) {
    if (pred.rank() != 4 || pred.dim(1) != 3)
        throw ShapeError("points: expected [N x 3 x H x W]");
    if (pred.dims() != gt.dims()) throw ShapeError("points: pred/gt shape mismatch");
    if (depth.rank() != 3 || depth.dim(0) != pred.dim(0) || depth.dim(1) != pred.dim(2) ||
        depth.dim(2) != pred.dim(3))
        throw ShapeError("points: depth shape mismatch");
    if (valid.dims() != depth.dims()) throw ShapeError("points: mask shape mismatch");
}

}  // namespace

template <class T>
ScaleAlignment solve_scale(const TensorT<T>& pred_points, const TensorT<T>& gt_points,
                           const TensorT<T>& gt_depth, const MaskTensor& valid) {
    check_points_shapes(pred_points, gt_points, gt_depth, valid);
    const int64_t n = pred_points.dim(0), h = pred_points.dim(2), w = pred_points.dim(3);

    std::vector<double> ratios, weights;
    int64_t valid_pixels = 0;
    for (int64_t f = 0; f < n; ++f)
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x) {
                if (!valid[(f * h + y) * w + x]) continue;
                ++valid_pixels;
                const double d = gt_depth[(f * h + y) * w + x];
                if (!(d > 0.0))
                    throw ContractError("solve_scale: non-positive gt depth on a valid pixel");
                for (int64_t c = 0; c < 3; ++c) {
                    const double p = pred_points[((f * 3 + c) * h + y) * w + x];
                    if (p == 0.0) continue;  // constant term in the objective
                    const double g = gt_points[((f * 3 + c) * h + y) * w + x];
                    ratios.push_back(g / p);
                    weights.push_back(std::abs(p) / d);
                }
            }
    if (valid_pixels == 0) throw ContractError("solve_scale: empty instance (no valid pixels)");
    if (ratios.empty())
        throw ContractError("solve_scale: degenerate instance (all predicted components zero)");

    std::vector<size_t> order(ratios.size());
    std::iota(order.begin(), order.end(), size_t{0});
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return ratios[a] < ratios[b]; });
    double total = 0.0;
    for (double wgt : weights) total += wgt;
    double cum = 0.0;
    double s = ratios[order.back()];
    for (size_t i : order) {
        cum += weights[i];
        if (cum >= 0.5 * total) {
            s = ratios[i];
            break;
        }
    }
    s = std::clamp(s, kScaleClampLo, kScaleClampHi);
    return ScaleAlignment{s};
}

template <class T>
PointsLossResult<T> points_loss(const TensorT<T>& pred_points, const TensorT<T>& gt_points,
                                const TensorT<T>& gt_depth, const MaskTensor& valid) {
    const double s = solve_scale(pred_points, gt_points, gt_depth, valid).s;
    const int64_t n = pred_points.dim(0), h = pred_points.dim(2), w = pred_points.dim(3);

    PointsLossResult<T> res;
    res.scale = s;
    res.grad = TensorT<T>(pred_points.dims());
    int64_t count = 0;
    double loss = 0.0;
    for (int64_t f = 0; f < n; ++f)
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x)
                if (valid[(f * h + y) * w + x]) ++count;
    const double inv_count = 1.0 / static_cast<double>(count);
    for (int64_t f = 0; f < n; ++f)
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x) {
                if (!valid[(f * h + y) * w + x]) continue;
                const double inv_d = 1.0 / static_cast<double>(gt_depth[(f * h + y) * w + x]);
                for (int64_t c = 0; c < 3; ++c) {
                    const int64_t idx = ((f * 3 + c) * h + y) * w + x;
                    const double r = s * static_cast<double>(pred_points[idx]) -
                                     static_cast<double>(gt_points[idx]);
                    loss += inv_d * std::abs(r);
                    const double sign = r > 0.0 ? 1.0 : (r < 0.0 ? -1.0 : 0.0);
                    res.grad[idx] = static_cast<T>(inv_count * inv_d * s * sign);
                }
            }
    res.loss = loss * inv_count;
    return res;
}

template <class T>
NormalLossResult<T> normal_loss(const TensorT<T>& pred_normals, const TensorT<T>& gt_normals,
                                const MaskTensor& valid) {
    if (pred_normals.rank() != 4 || pred_normals.dim(1) != 3)
        throw ShapeError("normal_loss: expected [N x 3 x H x W]");
    if (pred_normals.dims() != gt_normals.dims())
        throw ShapeError("normal_loss: pred/gt shape mismatch");
    const int64_t n = pred_normals.dim(0), h = pred_normals.dim(2), w = pred_normals.dim(3);
    if (valid.rank() != 3 || valid.dim(0) != n || valid.dim(1) != h || valid.dim(2) != w)
        throw ShapeError("normal_loss: mask shape mismatch");

    NormalLossResult<T> res;
    res.grad = TensorT<T>(pred_normals.dims());

    struct PixelGrad {
        int64_t idx[3];
        double g[3];
    };
    std::vector<PixelGrad> grads;
    double loss = 0.0;
    for (int64_t f = 0; f < n; ++f)
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x) {
                if (!valid[(f * h + y) * w + x]) continue;
                double p[3], q[3];
                int64_t idx[3];
                for (int64_t c = 0; c < 3; ++c) {
                    idx[c] = ((f * 3 + c) * h + y) * w + x;
                    p[c] = pred_normals[idx[c]];
                    q[c] = gt_normals[idx[c]];
                }
                const double pn = std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]);
                if (pn < 1e-12) {
                    ++res.degenerate;
                    continue;
                }
                const double qn = std::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2]);
                const double cos_raw = (p[0] * q[0] + p[1] * q[1] + p[2] * q[2]) / (pn * qn);
                const double cos_cl = std::clamp(cos_raw, -1.0 + kCosClamp, 1.0 - kCosClamp);
                loss += std::acos(cos_cl);
                ++res.used;
                if (cos_raw > -1.0 + kCosClamp && cos_raw < 1.0 - kCosClamp) {
                    const double dacos = -1.0 / std::sqrt(1.0 - cos_cl * cos_cl);
                    PixelGrad pg;
                    for (int64_t c = 0; c < 3; ++c) {
                        pg.idx[c] = idx[c];
                        pg.g[c] = dacos * (q[c] / (pn * qn) - cos_raw * p[c] / (pn * pn));
                    }
                    grads.push_back(pg);
                }
            }
    if (res.used > 0) {
        const double inv = 1.0 / static_cast<double>(res.used);
        res.loss = loss * inv;
        for (const PixelGrad& pg : grads)
            for (int64_t c = 0; c < 3; ++c)
                res.grad[pg.idx[c]] = static_cast<T>(pg.g[c] * inv);
    }
    return res;
}

template <class T>
NormalLossResult<T> points_normal_loss(const TensorT<T>& pred_points,
                                       const TensorT<T>& gt_normals, const MaskTensor& valid) {
    if (pred_points.rank() != 4 || pred_points.dim(1) != 3)
        throw ShapeError("points_normal_loss: expected [N x 3 x H x W]");
    const int64_t n = pred_points.dim(0), h = pred_points.dim(2), w = pred_points.dim(3);
    if (h < 3 || w < 3) throw ShapeError("points_normal_loss: needs H, W >= 3");
    if (gt_normals.dims() != pred_points.dims())
        throw ShapeError("points_normal_loss: gt shape mismatch");

    NormalLossResult<T> res;
    res.grad = TensorT<T>(pred_points.dims());

    // First pass: derived normals, loss, and d loss / d cross-product.
    struct CrossGrad {
        int64_t f, y, x;
        double g_tu[3], g_tv[3];
    };
    std::vector<CrossGrad> cross_grads;
    double loss = 0.0;
    for (int64_t f = 0; f < n; ++f) {
        auto p = [&](int64_t c, int64_t y, int64_t x) {
            return static_cast<double>(pred_points[((f * 3 + c) * h + y) * w + x]);
        };
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x) {
                if (!valid[(f * h + y) * w + x]) continue;
                double tu[3], tv[3];
                for (int64_t c = 0; c < 3; ++c) {
                    if (x == 0) tu[c] = p(c, y, 1) - p(c, y, 0);
                    else if (x == w - 1) tu[c] = p(c, y, w - 1) - p(c, y, w - 2);
                    else tu[c] = 0.5 * (p(c, y, x + 1) - p(c, y, x - 1));
                    if (y == 0) tv[c] = p(c, 1, x) - p(c, 0, x);
                    else if (y == h - 1) tv[c] = p(c, h - 1, x) - p(c, h - 2, x);
                    else tv[c] = 0.5 * (p(c, y + 1, x) - p(c, y - 1, x));
                }
                const double u[3] = {tu[1] * tv[2] - tu[2] * tv[1],
                                     tu[2] * tv[0] - tu[0] * tv[2],
                                     tu[0] * tv[1] - tu[1] * tv[0]};
                const double un = std::sqrt(u[0] * u[0] + u[1] * u[1] + u[2] * u[2]);
                if (un < 1e-12) {
                    ++res.degenerate;
                    continue;
                }
                const double sigma = u[2] > 0.0 ? -1.0 : 1.0;  // z <= 0 orientation
                double q[3];
                for (int64_t c = 0; c < 3; ++c) q[c] = gt_normals[((f * 3 + c) * h + y) * w + x];
                const double qn = std::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2]);
                if (qn < 1e-12) {
                    ++res.degenerate;
                    continue;
                }
                const double uhat[3] = {u[0] / un, u[1] / un, u[2] / un};
                const double cos_raw =
                    sigma * (uhat[0] * q[0] + uhat[1] * q[1] + uhat[2] * q[2]) / qn;
                const double cos_cl = std::clamp(cos_raw, -1.0 + kCosClamp, 1.0 - kCosClamp);
                loss += std::acos(cos_cl);
                ++res.used;
                if (cos_raw <= -1.0 + kCosClamp || cos_raw >= 1.0 - kCosClamp) continue;
                const double dacos = -1.0 / std::sqrt(1.0 - cos_cl * cos_cl);
                // d cos / d u = sigma * (b - (uhat.b) uhat) / |u|, b the unit gt
                double gu[3];
                const double ub = uhat[0] * q[0] / qn + uhat[1] * q[1] / qn + uhat[2] * q[2] / qn;
                for (int64_t c = 0; c < 3; ++c)
                    gu[c] = dacos * sigma * (q[c] / qn - ub * uhat[c]) / un;
                CrossGrad cg;
                cg.f = f;
                cg.y = y;
                cg.x = x;
                // u = tu x tv: grad_tu = tv x gu, grad_tv = gu x tu
                cg.g_tu[0] = tv[1] * gu[2] - tv[2] * gu[1];
                cg.g_tu[1] = tv[2] * gu[0] - tv[0] * gu[2];
                cg.g_tu[2] = tv[0] * gu[1] - tv[1] * gu[0];
                cg.g_tv[0] = gu[1] * tu[2] - gu[2] * tu[1];
                cg.g_tv[1] = gu[2] * tu[0] - gu[0] * tu[2];
                cg.g_tv[2] = gu[0] * tu[1] - gu[1] * tu[0];
                cross_grads.push_back(cg);
            }
    }
    if (res.used == 0) return res;
    const double inv = 1.0 / static_cast<double>(res.used);
    res.loss = loss * inv;

    // Second pass: scatter tangent gradients through the stencil.
    for (const CrossGrad& cg : cross_grads) {
        auto scatter = [&](int64_t c, int64_t y, int64_t x, double v) {
            res.grad[((cg.f * 3 + c) * h + y) * w + x] += static_cast<T>(v * inv);
        };
        for (int64_t c = 0; c < 3; ++c) {
            if (cg.x == 0) {
                scatter(c, cg.y, 1, cg.g_tu[c]);
                scatter(c, cg.y, 0, -cg.g_tu[c]);
            } else if (cg.x == w - 1) {
                scatter(c, cg.y, w - 1, cg.g_tu[c]);
                scatter(c, cg.y, w - 2, -cg.g_tu[c]);
            } else {
                scatter(c, cg.y, cg.x + 1, 0.5 * cg.g_tu[c]);
                scatter(c, cg.y, cg.x - 1, -0.5 * cg.g_tu[c]);
            }
            if (cg.y == 0) {
                scatter(c, 1, cg.x, cg.g_tv[c]);
                scatter(c, 0, cg.x, -cg.g_tv[c]);
            } else if (cg.y == h - 1) {
                scatter(c, h - 1, cg.x, cg.g_tv[c]);
                scatter(c, h - 2, cg.x, -cg.g_tv[c]);
            } else {
                scatter(c, cg.y + 1, cg.x, 0.5 * cg.g_tv[c]);
                scatter(c, cg.y - 1, cg.x, -0.5 * cg.g_tv[c]);
            }
        }
    }
    return res;
}

template ScaleAlignment solve_scale(const Tensor&, const Tensor&, const Tensor&,
                                    const MaskTensor&);
template ScaleAlignment solve_scale(const TensorD&, const TensorD&, const TensorD&,
                                    const MaskTensor&);
template PointsLossResult<float> points_loss(const Tensor&, const Tensor&, const Tensor&,
                                             const MaskTensor&);
template PointsLossResult<double> points_loss(const TensorD&, const TensorD&, const TensorD&,
                                              const MaskTensor&);
template NormalLossResult<float> normal_loss(const Tensor&, const Tensor&, const MaskTensor&);
template NormalLossResult<double> normal_loss(const TensorD&, const TensorD&,
                                              const MaskTensor&);
template NormalLossResult<float> points_normal_loss(const Tensor&, const Tensor&,
                                                    const MaskTensor&);
template NormalLossResult<double> points_normal_loss(const TensorD&, const TensorD&,
                                                     const MaskTensor&);

TotalLossResult total_loss(const Tensor& pred_points, const Tensor& pred_normals,
                           const LossTargets& targets, const LossWeights& weights) {
    if (!(weights.points_normal >= 0.0) || !(weights.normal >= 0.0) ||
        !std::isfinite(weights.points_normal) || !std::isfinite(weights.normal))
        throw ShapeError("loss weights must be finite and non-negative");

    TotalLossResult res;
    PointsLossResult<float> pl =
        points_loss(pred_points, targets.gt_points, targets.gt_depth, targets.valid);
    res.points = pl.loss;
    res.scale = pl.scale;
    res.d_points = std::move(pl.grad);
    res.d_normals = Tensor(pred_normals.dims());

    if (targets.gt_normals) {
        NormalLossResult<float> nl = normal_loss(pred_normals, *targets.gt_normals,
                                                 targets.valid);
        res.normal = nl.loss;
        res.d_normals = std::move(nl.grad);
        scale_inplace(res.d_normals, static_cast<float>(weights.normal));

        NormalLossResult<float> pnl = points_normal_loss(pred_points, *targets.gt_normals,
                                                         targets.valid);
        res.points_normal = pnl.loss;
        scale_inplace(pnl.grad, static_cast<float>(weights.points_normal));
        add_inplace(res.d_points, pnl.grad);
    }
    res.total = res.points + weights.points_normal * res.points_normal +
                weights.normal * res.normal;
    return res;
}

// ---------------------------------------------------------------------------
// Training driver
// ---------------------------------------------------------------------------

void TrainingLog::save_csv(const std::string& path) const {
    io::CsvWriter csv({"step", "total", "points", "normal", "points_normal"});
    for (const StepRecord& r : steps)
        csv.add_row({std::to_string(r.step), io::format_double(r.total),
                     io::format_double(r.points), io::format_double(r.normal),
                     io::format_double(r.points_normal)});
    csv.save(path);
}

void AdamW::step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads) {
    if (params.size() != grads.size()) throw ShapeError("adamw: param/grad count mismatch");
    if (m.empty()) {
        m.resize(params.size());
        v.resize(params.size());
        for (size_t i = 0; i < params.size(); ++i) {
            m[i].assign(static_cast<size_t>(params[i]->numel()), 0.0f);
            v[i].assign(static_cast<size_t>(params[i]->numel()), 0.0f);
        }
    }
    ++t;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (size_t i = 0; i < params.size(); ++i) {
        Tensor& p = *params[i];
        const Tensor& g = grads[i];
        if (p.dims() != g.dims()) throw ShapeError("adamw: grad shape mismatch");
        for (int64_t j = 0; j < p.numel(); ++j) {
            const double gj = g[j];
            m[i][static_cast<size_t>(j)] =
                static_cast<float>(beta1 * m[i][static_cast<size_t>(j)] + (1.0 - beta1) * gj);
            v[i][static_cast<size_t>(j)] = static_cast<float>(
                beta2 * v[i][static_cast<size_t>(j)] + (1.0 - beta2) * gj * gj);
            const double mhat = m[i][static_cast<size_t>(j)] / bc1;
            const double vhat = v[i][static_cast<size_t>(j)] / bc2;
            p[j] = static_cast<float>(
                p[j] - lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * p[j]));
        }
    }
}

LossTargets targets_from_synth(const geom::SynthData& data, bool with_normals) {
    LossTargets t;
    t.gt_points = data.points;
    t.gt_depth = data.depth;
    if (with_normals) t.gt_normals = data.normals;
    t.valid = data.valid;
    return t;
}

namespace {

attn::ChunkPartition sample_partition(int n, Rng& rng) {
    const int64_t mode = rng.randint(3);
    if (mode == 0) return attn::ChunkPartition::offline(n);
    if (mode == 1) return attn::ChunkPartition::streaming(n);
    std::vector<int> lengths;
    int remaining = n;
    while (remaining > 0) {
        int len = remaining <= 4 ? remaining : 2 + static_cast<int>(rng.randint(3));
        len = std::min(len, remaining);
        lengths.push_back(len);
        remaining -= len;
    }
    return attn::ChunkPartition(std::move(lengths));
}

}  // namespace

TrainResult train_toy(const model::ModelConfig& model_config, const DataConfig& data_config,
                      int steps, double lr, const LossWeights& weights) {
    if (steps < 0) throw ShapeError("train_toy: steps must be >= 0");

    std::vector<geom::SynthData> pool;
    uint64_t scene_seed = data_config.seed;
    for (geom::SceneKind kind : data_config.kinds)
        for (int i = 0; i < data_config.scenes_per_kind; ++i) {
            geom::SceneSpec spec;
            spec.kind = kind;
            spec.frames = data_config.frames;
            spec.height = data_config.height;
            spec.width = data_config.width;
            pool.push_back(geom::synth_scene(spec, scene_seed++));
        }
    if (pool.empty()) throw ShapeError("train_toy: empty scene pool");

    TrainResult out{model::ToyModel::init(model_config), {}};
    AdamW opt;
    opt.lr = lr;
    Rng rng(data_config.seed ^ 0x9e3779b97f4a7c15ull);

    std::vector<Tensor*> param_ptrs;
    for (auto& [name, ptr] : out.model.params()) param_ptrs.push_back(ptr);

    for (int step = 0; step < steps; ++step) {
        const geom::SynthData& scene = pool[static_cast<size_t>(step) % pool.size()];
        const attn::ChunkPartition partition =
            sample_partition(static_cast<int>(scene.rgb.dim(0)), rng);
        model::ForwardTrace<float> trace;
        model::GeometryOutput pred = out.model.forward_train(scene.rgb, partition, trace);
        const LossTargets targets = targets_from_synth(scene);
        TotalLossResult l = total_loss(pred.points, pred.normals, targets, weights);
        if (!std::isfinite(l.total))
            throw NumericError("train_toy: non-finite loss at step " + std::to_string(step) +
                               " (total=" + std::to_string(l.total) + ")");
        std::vector<Tensor> grads = out.model.backward(trace, l.d_points, l.d_normals);
        opt.step(param_ptrs, grads);
        out.log.steps.push_back({step, l.total, l.points, l.normal, l.points_normal});
    }
    return out;
}

}  // namespace vigeo::losses
