#include "vigeo/refine.hpp"

#include <algorithm>
#include <cmath>

#include "vigeo/losses.hpp"

namespace vigeo::refine {

void SparseDepth::check() const {
    if (values.rank() != 2 || valid.dims() != values.dims())
        throw ShapeError("sparse depth: values/mask shape mismatch");
    for (int64_t i = 0; i < values.numel(); ++i)
        if (valid[i] && !(values[i] > 0.0f))
            throw ContractError("sparse depth: non-positive value marked valid");
}

int64_t SparseDepth::valid_count() const {
    int64_t n = 0;
    for (int64_t i = 0; i < valid.numel(); ++i) n += valid[i] ? 1 : 0;
    return n;
}

namespace {

double lower_median(std::vector<double>& v) {
    if (v.empty()) throw ContractError("median of an empty set");
    const size_t k = (v.size() - 1) / 2;  // lower middle for even counts
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(k), v.end());
    return v[k];
}

// |(u-cx)/fx, (v-cy)/fy, 1| per pixel; depth times this is the ray distance.
TensorD ray_lengths(int64_t h, int64_t w, const geom::PinholeCamera& cam) {
    TensorD out({h, w});
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) {
            const double rx = (static_cast<double>(x) - cam.cx) / cam.fx;
            const double ry = (static_cast<double>(y) - cam.cy) / cam.fy;
            out[y * w + x] = std::sqrt(rx * rx + ry * ry + 1.0);
        }
    return out;
}

}  // namespace

std::vector<SparseDepth> filter_outliers(const std::vector<SparseDepth>& raw,
                                         const std::vector<Tensor>& mono,
                                         const geom::PinholeCamera& cam, int window,
                                         double tau) {
    if (window < 3 || window % 2 == 0)
        throw ShapeError("filter_outliers: window must be odd and >= 3");
    if (!(tau > 0.0)) throw ShapeError("filter_outliers: tau must be positive");
    if (raw.size() != mono.size())
        throw ShapeError("filter_outliers: raw/mono frame count mismatch");

    std::vector<SparseDepth> out;
    out.reserve(raw.size());
    const int r = window / 2;
    for (size_t f = 0; f < raw.size(); ++f) {
        raw[f].check();
        const Tensor& m = mono[f];
        if (m.dims() != raw[f].values.dims())
            throw ShapeError("filter_outliers: mono resolution mismatch");
        const int64_t h = m.dim(0), w = m.dim(1);
        const TensorD rays = ray_lengths(h, w, cam);

        SparseDepth filtered{raw[f].values, MaskTensor({h, w})};
        std::vector<double> ratios;
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x) {
                if (!raw[f].valid[y * w + x]) continue;
                ratios.clear();
                for (int64_t wy = std::max<int64_t>(0, y - r);
                     wy <= std::min<int64_t>(h - 1, y + r); ++wy)
                    for (int64_t wx = std::max<int64_t>(0, x - r);
                         wx <= std::min<int64_t>(w - 1, x + r); ++wx) {
                        if (!raw[f].valid[wy * w + wx]) continue;
                        const double mono_ray = m[wy * w + wx] * rays[wy * w + wx];
                        if (!(mono_ray > 0.0)) continue;
                        const double raw_ray =
                            raw[f].values[wy * w + wx] * rays[wy * w + wx];
                        ratios.push_back(raw_ray / mono_ray);
                    }
                if (ratios.size() < 5) continue;  // stays invalid
                const double scale = lower_median(ratios);
                const double raw_ray = raw[f].values[y * w + x] * rays[y * w + x];
                const double mono_ray = m[y * w + x] * rays[y * w + x];
                const double resid = std::abs(raw_ray - scale * mono_ray) / raw_ray;
                if (resid <= tau) filtered.valid[y * w + x] = 1;
            }
        out.push_back(std::move(filtered));
    }
    return out;
}

double derive_gamma(const Tensor& mono, const SparseDepth& sparse) {
    sparse.check();
    if (mono.dims() != sparse.values.dims())
        throw ShapeError("derive_gamma: mono resolution mismatch");
    constexpr double eps = 1e-4;

    // 2x2 normal equations for a * mono + b ~= sparse.
    double sxx = 0, sx = 0, sxy = 0, sy = 0, cnt = 0;
    for (int64_t i = 0; i < mono.numel(); ++i) {
        if (!sparse.valid[i]) continue;
        const double x = mono[i], y = sparse.values[i];
        sxx += x * x;
        sx += x;
        sxy += x * y;
        sy += y;
        cnt += 1;
    }
    if (cnt < 2) throw ContractError("derive_gamma: needs at least 2 valid pixels");

    double mono_min = mono[0];
    for (int64_t i = 1; i < mono.numel(); ++i) mono_min = std::min<double>(mono_min, mono[i]);

    const double det = sxx * cnt - sx * sx;
    if (std::abs(det) < 1e-18) return std::max(eps, -mono_min + eps);
    const double a = (sxy * cnt - sx * sy) / det;
    const double b = (sxx * sy - sx * sxy) / det;
    if (a <= 0.0) return std::max(eps, -mono_min + eps);
    return std::max(0.0, b / a) + eps;
}

TensorD poisson_solve_log(const SparseDepth& filtered, const Tensor& mono,
                          const PoissonConfig& config) {
    filtered.check();
    if (mono.dims() != filtered.values.dims())
        throw ShapeError("poisson: mono resolution mismatch");
    if (!(config.lambda > 0.0)) throw ShapeError("poisson: lambda must be positive");
    if (filtered.valid_count() == 0)
        throw ContractError("poisson: no valid pixels, system is rank-deficient");
    const int64_t h = mono.dim(0), w = mono.dim(1), n = h * w;

    TensorD v({h, w});
    for (int64_t i = 0; i < n; ++i) {
        const double shifted = static_cast<double>(mono[i]) + config.gamma;
        if (!(shifted > 0.0))
            throw ContractError("poisson: mono + gamma must be positive everywhere");
        v[i] = std::log(shifted);
    }

    const double lambda = config.lambda;
    const MaskTensor& mask = filtered.valid;

    // y = L x (+ lambda * mask .* x when with_data), 4-neighbour Laplacian.
    auto apply = [&](const TensorD& x, TensorD& y, bool with_data) {
        for (int64_t yy = 0; yy < h; ++yy)
            for (int64_t xx = 0; xx < w; ++xx) {
                const int64_t i = yy * w + xx;
                double acc = 0.0;
                if (yy > 0) acc += x[i] - x[i - w];
                if (yy < h - 1) acc += x[i] - x[i + w];
                if (xx > 0) acc += x[i] - x[i - 1];
                if (xx < w - 1) acc += x[i] - x[i + 1];
                if (with_data && mask[i]) acc += lambda * x[i];
                y[i] = acc;
            }
    };

    TensorD b({h, w});
    apply(v, b, false);
    for (int64_t i = 0; i < n; ++i)
        if (mask[i]) b[i] += lambda * std::log(static_cast<double>(filtered.values[i]));

    double nb = 0.0;
    for (int64_t i = 0; i < n; ++i) nb += b[i] * b[i];
    nb = std::sqrt(nb);
    const double target = std::max(config.cg_tol * nb, 1e-300);

    TensorD x = v;  // warm start at the mono prior
    TensorD ax({h, w});
    apply(x, ax, true);
    TensorD rres({h, w}), p({h, w}), ap({h, w});
    double rs = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        rres[i] = b[i] - ax[i];
        p[i] = rres[i];
        rs += rres[i] * rres[i];
    }
    const int max_iter = config.cg_max_iter > 0 ? config.cg_max_iter
                                                : static_cast<int>(10 * n);
    int it = 0;
    while (std::sqrt(rs) > target) {
        if (it++ >= max_iter)
            throw NumericError("poisson: CG did not converge, residual " +
                               std::to_string(std::sqrt(rs)) + " after " +
                               std::to_string(max_iter) + " iterations");
        apply(p, ap, true);
        double pap = 0.0;
        for (int64_t i = 0; i < n; ++i) pap += p[i] * ap[i];
        const double alpha = rs / pap;
        double rs_new = 0.0;
        for (int64_t i = 0; i < n; ++i) {
            x[i] += alpha * p[i];
            rres[i] -= alpha * ap[i];
            rs_new += rres[i] * rres[i];
        }
        const double beta = rs_new / rs;
        for (int64_t i = 0; i < n; ++i) p[i] = rres[i] + beta * p[i];
        rs = rs_new;
    }
    return x;
}

Tensor poisson_prior(const SparseDepth& filtered, const Tensor& mono,
                     const PoissonConfig& config) {
    const TensorD u = poisson_solve_log(filtered, mono, config);
    Tensor out({u.dim(0), u.dim(1)});
    for (int64_t i = 0; i < u.numel(); ++i) out[i] = static_cast<float>(std::exp(u[i]));
    return out;
}

NormalizedSequence normalize_sequence(const std::vector<Tensor>& priors,
                                      const std::vector<SparseDepth>& sparse) {
    if (priors.size() != sparse.size())
        throw ShapeError("normalize_sequence: frame count mismatch");
    std::vector<double> values;
    for (const SparseDepth& s : sparse) {
        s.check();
        for (int64_t i = 0; i < s.values.numel(); ++i)
            if (s.valid[i]) values.push_back(s.values[i]);
    }
    if (values.empty())
        throw ContractError("normalize_sequence: no valid sparse measurements");
    NormalizedSequence out;
    out.state.m = lower_median(values);
    for (const Tensor& prior : priors) {
        Tensor lp(prior.dims());
        for (int64_t i = 0; i < prior.numel(); ++i) {
            if (!(prior[i] > 0.0f))
                throw ContractError("normalize_sequence: non-positive prior value");
            lp[i] = static_cast<float>(std::log(static_cast<double>(prior[i]) / out.state.m));
        }
        out.log_priors.push_back(std::move(lp));
    }
    return out;
}

std::vector<Tensor> IdentityTeacher::complete(const Tensor& rgb,
                                              const std::vector<Tensor>& log_priors) {
    (void)rgb;
    std::vector<Tensor> out;
    out.reserve(log_priors.size());
    for (const Tensor& lp : log_priors) {
        Tensor t(lp.dims());
        for (int64_t i = 0; i < lp.numel(); ++i) t[i] = std::exp(lp[i]);
        out.push_back(std::move(t));
    }
    return out;
}

std::vector<Tensor> ToyTeacher::complete(const Tensor& rgb,
                                         const std::vector<Tensor>& log_priors) {
    if (log_priors.empty()) return {};
    const int n = static_cast<int>(log_priors.size());
    const int64_t h = log_priors[0].dim(0), w = log_priors[0].dim(1);
    Tensor stacked({n, h, w});
    for (int f = 0; f < n; ++f)
        std::copy(log_priors[static_cast<size_t>(f)].data(),
                  log_priors[static_cast<size_t>(f)].data() + h * w,
                  stacked.data() + static_cast<int64_t>(f) * h * w);
    const Tensor pred =
        net_.forward(rgb, stacked, attn::ChunkPartition::offline(n));  // log(depth/m)
    std::vector<Tensor> out;
    for (int f = 0; f < n; ++f) {
        Tensor t({h, w});
        for (int64_t i = 0; i < h * w; ++i)
            t[i] = std::exp(pred[static_cast<int64_t>(f) * h * w + i]);
        out.push_back(std::move(t));
    }
    return out;
}

std::vector<Tensor> complete_sequence(const Tensor& rgb,
                                      const std::vector<Tensor>& log_priors, double m,
                                      CompletionTeacher& teacher) {
    std::vector<Tensor> normalized = teacher.complete(rgb, log_priors);
    for (Tensor& t : normalized)
        for (int64_t i = 0; i < t.numel(); ++i)
            t[i] = static_cast<float>(static_cast<double>(t[i]) * m);
    return normalized;
}

std::vector<Tensor> refine_pipeline(const Tensor& rgb, const std::vector<SparseDepth>& raw,
                                    const std::vector<Tensor>& mono,
                                    const geom::PinholeCamera& cam, const RefineConfig& config,
                                    CompletionTeacher& teacher) {
    const std::vector<SparseDepth> filtered =
        filter_outliers(raw, mono, cam, config.filter_window, config.tau);
    std::vector<Tensor> priors;
    priors.reserve(filtered.size());
    for (size_t f = 0; f < filtered.size(); ++f) {
        PoissonConfig pc;
        pc.lambda = config.lambda;
        pc.cg_tol = config.cg_tol;
        pc.cg_max_iter = config.cg_max_iter;
        pc.gamma = derive_gamma(mono[f], filtered[f]);
        priors.push_back(poisson_prior(filtered[f], mono[f], pc));
    }
    const NormalizedSequence normalized = normalize_sequence(priors, filtered);
    return complete_sequence(rgb, normalized.log_priors, normalized.state.m, teacher);
}

// ---------------------------------------------------------------------------
// Synthetic corruption and teacher training
// ---------------------------------------------------------------------------

CorruptedScene corrupt_scene(const geom::SynthData& data, const CorruptionConfig& config,
                             uint64_t seed) {
    const int64_t n = data.depth.dim(0), h = data.depth.dim(1), w = data.depth.dim(2);
    Rng rng(seed);
    CorruptedScene out;

    // Smooth multiplicative field for the fake mono prediction, shared across
    // frames, plus a global affine so gamma has something to recover.
    const double k1 = 1.0 + rng.randint(2), k2 = 1.0 + rng.randint(2);
    const double phase = rng.uniform(0.0, 2.0 * M_PI);
    const double mono_a = rng.uniform(0.4, 0.8);
    const double mono_b = rng.uniform(0.2, 0.6);

    for (int64_t f = 0; f < n; ++f) {
        SparseDepth raw{Tensor({h, w}), MaskTensor({h, w})};
        Tensor mono({h, w});
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x) {
                const int64_t i = (f * h + y) * w + x;
                const double d = data.depth[i];
                const double field = std::sin(
                    2.0 * M_PI * (k1 * static_cast<double>(x) / static_cast<double>(w) +
                                  k2 * static_cast<double>(y) / static_cast<double>(h)) +
                    phase);
                mono[y * w + x] = static_cast<float>(
                    mono_a * d * (1.0 + config.mono_smooth_scale * field) + mono_b);
                if (!data.valid[i]) continue;
                if (rng.uniform() < config.hole_fraction) continue;  // hole
                double value = d * (1.0 + config.noise * (2.0 * rng.uniform() - 1.0));
                if (rng.uniform() < config.outlier_fraction)
                    value *= rng.uniform() < 0.5 ? config.outlier_scale
                                                 : 1.0 / config.outlier_scale;
                raw.values[y * w + x] = static_cast<float>(value);
                raw.valid[y * w + x] = 1;
            }
        out.raw.push_back(std::move(raw));
        out.mono.push_back(std::move(mono));
    }
    return out;
}

TeacherTrainResult train_toy_teacher(const model::ModelConfig& model_config, int steps,
                                     double lr, uint64_t data_seed) {
    if (steps < 0) throw ShapeError("train_toy_teacher: steps must be >= 0");

    struct Sample {
        Tensor rgb;
        Tensor log_prior;  // [N x H x W]
        Tensor target;     // log(gt / m)
        MaskTensor valid;
    };
    std::vector<Sample> pool;
    const CorruptionConfig corruption;
    const RefineConfig rc;
    uint64_t seed = data_seed;
    for (geom::SceneKind kind :
         {geom::SceneKind::plane, geom::SceneKind::sphere, geom::SceneKind::boxes})
        for (int i = 0; i < 3; ++i) {
            geom::SceneSpec spec;
            spec.kind = kind;
            spec.frames = 4;
            spec.height = 16;
            spec.width = 16;
            const geom::SynthData data = geom::synth_scene(spec, seed);
            const CorruptedScene corrupted = corrupt_scene(data, corruption, seed + 1000);
            seed += 2;
            const geom::PinholeCamera cam =
                geom::PinholeCamera::centered(spec.height, spec.width);
            const std::vector<SparseDepth> filtered = filter_outliers(
                corrupted.raw, corrupted.mono, cam, rc.filter_window, rc.tau);
            std::vector<Tensor> priors;
            for (size_t f = 0; f < filtered.size(); ++f) {
                PoissonConfig pc;
                pc.gamma = derive_gamma(corrupted.mono[f], filtered[f]);
                priors.push_back(poisson_prior(filtered[f], corrupted.mono[f], pc));
            }
            const NormalizedSequence norm = normalize_sequence(priors, filtered);

            const int64_t nf = data.depth.dim(0), h = data.depth.dim(1), w = data.depth.dim(2);
            Sample s;
            s.rgb = data.rgb;
            s.valid = data.valid;
            s.log_prior = Tensor({nf, h, w});
            s.target = Tensor({nf, h, w});
            for (int64_t f = 0; f < nf; ++f) {
                std::copy(norm.log_priors[static_cast<size_t>(f)].data(),
                          norm.log_priors[static_cast<size_t>(f)].data() + h * w,
                          s.log_prior.data() + f * h * w);
                for (int64_t i = 0; i < h * w; ++i)
                    s.target[f * h * w + i] = static_cast<float>(std::log(
                        static_cast<double>(data.depth[f * h * w + i]) / norm.state.m));
            }
            pool.push_back(std::move(s));
        }

    TeacherTrainResult out{model::CompletionNet::init(model_config), {}};
    losses::AdamW opt;
    opt.lr = lr;
    std::vector<Tensor*> param_ptrs;
    for (auto& [name, ptr] : out.net.params()) param_ptrs.push_back(ptr);

    for (int step = 0; step < steps; ++step) {
        const Sample& s = pool[static_cast<size_t>(step) % pool.size()];
        const int nf = static_cast<int>(s.rgb.dim(0));
        model::ForwardTrace<float> trace;
        Tensor pred = out.net.forward_train(s.rgb, s.log_prior,
                                            attn::ChunkPartition::offline(nf), trace);
        int64_t count = 0;
        for (int64_t i = 0; i < s.valid.numel(); ++i) count += s.valid[i] ? 1 : 0;
        double loss = 0.0;
        Tensor d_pred(pred.dims());
        const double inv = 1.0 / static_cast<double>(count);
        for (int64_t i = 0; i < pred.numel(); ++i) {
            if (!s.valid[i]) continue;
            const double r = static_cast<double>(pred[i]) - static_cast<double>(s.target[i]);
            loss += std::abs(r) * inv;
            d_pred[i] = static_cast<float>((r > 0 ? 1.0 : (r < 0 ? -1.0 : 0.0)) * inv);
        }
        if (!std::isfinite(loss))
            throw NumericError("train_toy_teacher: non-finite loss at step " +
                               std::to_string(step));
        std::vector<Tensor> grads = out.net.backward(trace, d_pred);
        opt.step(param_ptrs, grads);
        out.losses.push_back(loss);
    }
    return out;
}

}  // namespace vigeo::refine
