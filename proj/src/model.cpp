#include "vigeo/model.hpp"

#include <cmath>
#include <filesystem>

namespace vigeo::model {

int ModelConfig::chunked_layer_count() const {
    const double raw = backbone_layers * chunk_ratio;
    const int count = static_cast<int>(std::lround(raw));
    if (std::abs(raw - count) > 1e-9)
        throw ShapeError("model config: backbone_layers * chunk_ratio must be an integer");
    return count;
}

void ModelConfig::validate() const {
    if (patch_size < 1) throw ShapeError("model config: patch_size must be >= 1");
    if (dim < 1 || heads < 1 || dim % heads != 0)
        throw ShapeError("model config: dim must be a positive multiple of heads");
    if (backbone_layers < 1) throw ShapeError("model config: backbone_layers must be >= 1");
    if (decoder_layers < 0) throw ShapeError("model config: decoder_layers must be >= 0");
    if (chunk_ratio <= 0.0 || chunk_ratio > 1.0)
        throw ShapeError("model config: chunk_ratio must be in (0, 1]");
    if (chunked_layer_count() < 1)
        throw ShapeError("model config: need at least one chunking attention layer");
    if (max_frames < 1 || max_grid < 1 || head_channels < 1 || mlp_ratio < 1)
        throw ShapeError("model config: capacities must be >= 1");
}

std::vector<int> chunked_layer_depths(int n_layers, int count) {
    std::vector<int> depths;
    depths.reserve(static_cast<size_t>(count));
    for (int i = 1; i <= count; ++i)
        depths.push_back(static_cast<int>(static_cast<int64_t>(i) * n_layers / count) - 1);
    return depths;
}

io::KeyValues ModelConfig::to_key_values() const {
    io::KeyValues kv;
    kv.emplace_back("patch_size", std::to_string(patch_size));
    kv.emplace_back("dim", std::to_string(dim));
    kv.emplace_back("heads", std::to_string(heads));
    kv.emplace_back("backbone_layers", std::to_string(backbone_layers));
    kv.emplace_back("chunk_ratio", io::format_double(chunk_ratio));
    kv.emplace_back("decoder_layers", std::to_string(decoder_layers));
    kv.emplace_back("max_frames", std::to_string(max_frames));
    kv.emplace_back("max_grid", std::to_string(max_grid));
    kv.emplace_back("head_channels", std::to_string(head_channels));
    kv.emplace_back("mlp_ratio", std::to_string(mlp_ratio));
    kv.emplace_back("seed", std::to_string(seed));
    return kv;
}

ModelConfig ModelConfig::from_key_values(const io::KeyValues& kv) {
    ModelConfig c;
    c.patch_size = std::stoi(io::lookup(kv, "patch_size"));
    c.dim = std::stoi(io::lookup(kv, "dim"));
    c.heads = std::stoi(io::lookup(kv, "heads"));
    c.backbone_layers = std::stoi(io::lookup(kv, "backbone_layers"));
    c.chunk_ratio = std::stod(io::lookup(kv, "chunk_ratio"));
    c.decoder_layers = std::stoi(io::lookup(kv, "decoder_layers"));
    c.max_frames = std::stoi(io::lookup(kv, "max_frames"));
    c.max_grid = std::stoi(io::lookup(kv, "max_grid"));
    c.head_channels = std::stoi(io::lookup(kv, "head_channels"));
    c.mlp_ratio = std::stoi(io::lookup(kv, "mlp_ratio"));
    c.seed = std::stoull(io::lookup(kv, "seed"));
    return c;
}

// ---------------------------------------------------------------------------
// Shared layer machinery
// ---------------------------------------------------------------------------

namespace {

template <class T>
void init_linear(LinearT<T>& lin, int in, int out, Rng& rng) {
    lin.w = TensorT<T>({in, out});
    lin.b = TensorT<T>({out});
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    rng.fill_uniform(lin.w, -bound, bound);
}

template <class T>
void init_conv(Conv3x3T<T>& conv, int in_c, int out_c, Rng& rng) {
    conv.w = TensorT<T>({out_c, in_c, 3, 3});
    conv.b = TensorT<T>({out_c});
    const double bound = 1.0 / std::sqrt(static_cast<double>(in_c) * 9.0);
    rng.fill_uniform(conv.w, -bound, bound);
}

template <class T>
void init_block(BlockT<T>& blk, const ModelConfig& cfg, Rng& rng, bool temporal) {
    blk.ln1_g = TensorT<T>::full({cfg.dim}, T(1));
    blk.ln1_b = TensorT<T>({cfg.dim});
    blk.ln2_g = TensorT<T>::full({cfg.dim}, T(1));
    blk.ln2_b = TensorT<T>({cfg.dim});
    blk.att = attn::AttentionWeightsT<T>::random(cfg.dim, cfg.heads, rng);
    init_linear(blk.fc1, cfg.dim, cfg.dim * cfg.mlp_ratio, rng);
    init_linear(blk.fc2, cfg.dim * cfg.mlp_ratio, cfg.dim, rng);
    blk.temporal = temporal;
}

template <class T>
TensorT<T> transpose2(const TensorT<T>& a) {
    const int64_t m = a.dim(0), n = a.dim(1);
    TensorT<T> out({n, m});
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) out[j * m + i] = a[i * n + j];
    return out;
}

template <class T>
TensorT<T> linear_fwd(const TensorT<T>& x, const LinearT<T>& lin) {
    TensorT<T> y = matmul(x, lin.w);
    const int64_t rows = y.dim(0), d = y.dim(1);
    for (int64_t r = 0; r < rows; ++r)
        for (int64_t j = 0; j < d; ++j) y[r * d + j] += lin.b[j];
    return y;
}

// Returns dX; accumulates weight/bias gradients.
template <class T>
TensorT<T> linear_bwd(const TensorT<T>& x, const LinearT<T>& lin, const TensorT<T>& dy,
                      LinearT<T>& grad) {
    add_inplace(grad.w, matmul(transpose2(x), dy));
    const int64_t rows = dy.dim(0), d = dy.dim(1);
    for (int64_t r = 0; r < rows; ++r)
        for (int64_t j = 0; j < d; ++j) grad.b[j] += dy[r * d + j];
    return matmul(dy, transpose2(lin.w));
}

template <class T>
TensorT<T> ln_fwd(const TensorT<T>& x, const TensorT<T>& g, const TensorT<T>& b,
                  LnTrace<T>* trace) {
    const int64_t d = x.dim(x.rank() - 1);
    const int64_t rows = x.numel() / d;
    TensorT<T> out(x.dims());
    TensorT<T> xhat(x.dims());
    std::vector<T> inv_std(static_cast<size_t>(rows));
    for (int64_t r = 0; r < rows; ++r) {
        const T* xi = x.data() + r * d;
        T mu = T(0);
        for (int64_t j = 0; j < d; ++j) mu += xi[j];
        mu /= static_cast<T>(d);
        T var = T(0);
        for (int64_t j = 0; j < d; ++j) {
            const T c = xi[j] - mu;
            var += c * c;
        }
        var /= static_cast<T>(d);
        const T inv = T(1) / std::sqrt(var + T(1e-5));
        inv_std[static_cast<size_t>(r)] = inv;
        for (int64_t j = 0; j < d; ++j) {
            const T h = (xi[j] - mu) * inv;
            xhat[r * d + j] = h;
            out[r * d + j] = h * g[j] + b[j];
        }
    }
    if (trace) {
        trace->x = x;
        trace->inv_std = std::move(inv_std);
        trace->xhat = std::move(xhat);
    }
    return out;
}

template <class T>
TensorT<T> ln_bwd(const LnTrace<T>& tr, const TensorT<T>& g, const TensorT<T>& dy,
                  TensorT<T>& dg, TensorT<T>& db) {
    const int64_t d = tr.x.dim(tr.x.rank() - 1);
    const int64_t rows = tr.x.numel() / d;
    TensorT<T> dx(tr.x.dims());
    for (int64_t r = 0; r < rows; ++r) {
        const T* xhat = tr.xhat.data() + r * d;
        const T* dyr = dy.data() + r * d;
        const T inv = tr.inv_std[static_cast<size_t>(r)];
        T sum_dxhat = T(0), sum_dxhat_xhat = T(0);
        for (int64_t j = 0; j < d; ++j) {
            const T dxh = dyr[j] * g[j];
            sum_dxhat += dxh;
            sum_dxhat_xhat += dxh * xhat[j];
            dg[j] += dyr[j] * xhat[j];
            db[j] += dyr[j];
        }
        const T mean_dxhat = sum_dxhat / static_cast<T>(d);
        const T mean_dxhat_xhat = sum_dxhat_xhat / static_cast<T>(d);
        for (int64_t j = 0; j < d; ++j) {
            const T dxh = dyr[j] * g[j];
            dx[r * d + j] = inv * (dxh - mean_dxhat - xhat[j] * mean_dxhat_xhat);
        }
    }
    return dx;
}

template <class T>
TensorT<T> relu(const TensorT<T>& x) {
    TensorT<T> y(x.dims());
    for (int64_t i = 0; i < x.numel(); ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
    return y;
}

// Backward of multi-head attention. Keys/values come from trace.k_context /
// v_context; for a full pass those are the input rows, so dQ, dK, dV all flow
// back to the same x.
template <class T>
TensorT<T> attend_full_bwd(const TensorT<T>& x, const attn::AttentionWeightsT<T>& w,
                           const attn::AttentionTraceT<T>& tr, const TensorT<T>& dy,
                           attn::AttentionWeightsT<T>& gw) {
    const int64_t qr = tr.q.dim(0);
    const int64_t kr = tr.k_context.dim(0);
    const int64_t d = w.dim;
    const int heads = w.heads;
    const int64_t hd = d / heads;
    const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(hd));

    TensorT<T> d_concat = matmul(dy, transpose2(w.wo));
    add_inplace(gw.wo, matmul(transpose2(tr.concat), dy));
    for (int64_t r = 0; r < qr; ++r)
        for (int64_t j = 0; j < d; ++j) gw.bo[j] += dy[r * d + j];

    TensorT<T> dq({qr, d}), dk({kr, d}), dv({kr, d});
    for (int h = 0; h < heads; ++h) {
        const int64_t off = h * hd;
        const TensorT<T>& probs = tr.probs[static_cast<size_t>(h)];
        TensorT<T> dp({qr, kr});
        for (int64_t i = 0; i < qr; ++i) {
            const T* dco = d_concat.data() + i * d + off;
            for (int64_t j = 0; j < kr; ++j) {
                const T* vj = tr.v_context.data() + j * d + off;
                T acc = T(0);
                for (int64_t c = 0; c < hd; ++c) acc += dco[c] * vj[c];
                dp[i * kr + j] = acc;
                const T p = probs[i * kr + j];
                T* dvj = dv.data() + j * d + off;
                for (int64_t c = 0; c < hd; ++c) dvj[c] += p * dco[c];
            }
        }
        for (int64_t i = 0; i < qr; ++i) {
            const T* pi = probs.data() + i * kr;
            T* dpi = dp.data() + i * kr;
            T dot = T(0);
            for (int64_t j = 0; j < kr; ++j) dot += dpi[j] * pi[j];
            for (int64_t j = 0; j < kr; ++j) dpi[j] = pi[j] * (dpi[j] - dot);
        }
        for (int64_t i = 0; i < qr; ++i) {
            const T* dsi = dp.data() + i * kr;
            T* dqi = dq.data() + i * d + off;
            const T* qi = tr.q.data() + i * d + off;
            for (int64_t j = 0; j < kr; ++j) {
                const T ds = dsi[j] * inv_sqrt;
                const T* kj = tr.k_context.data() + j * d + off;
                T* dkj = dk.data() + j * d + off;
                for (int64_t c = 0; c < hd; ++c) {
                    dqi[c] += ds * kj[c];
                    dkj[c] += ds * qi[c];
                }
            }
        }
    }

    add_inplace(gw.wq, matmul(transpose2(x), dq));
    add_inplace(gw.wk, matmul(transpose2(x), dk));
    add_inplace(gw.wv, matmul(transpose2(x), dv));
    for (int64_t r = 0; r < qr; ++r)
        for (int64_t j = 0; j < d; ++j) gw.bq[j] += dq[r * d + j];
    for (int64_t r = 0; r < kr; ++r)
        for (int64_t j = 0; j < d; ++j) {
            gw.bk[j] += dk[r * d + j];
            gw.bv[j] += dv[r * d + j];
        }
    TensorT<T> dx = matmul(dq, transpose2(w.wq));
    add_inplace(dx, matmul(dk, transpose2(w.wk)));
    add_inplace(dx, matmul(dv, transpose2(w.wv)));
    return dx;
}

template <class T>
TensorT<T> slice_rows(const TensorT<T>& x, int64_t row0, int64_t rows) {
    const int64_t d = x.dim(1);
    TensorT<T> out({rows, d});
    std::copy(x.data() + row0 * d, x.data() + (row0 + rows) * d, out.data());
    return out;
}

template <class T>
void paste_rows(TensorT<T>& dst, const TensorT<T>& src, int64_t row0) {
    const int64_t d = dst.dim(1);
    std::copy(src.data(), src.data() + src.numel(), dst.data() + row0 * d);
}

// One pre-norm transformer block. A temporal block attends across all frames
// (through the cache when one is supplied); an intra-frame block attends
// within each frame independently.
template <class T>
TensorT<T> block_fwd(const TensorT<T>& x, const BlockT<T>& blk, int n_frames,
                     int tokens_per_frame, const MaskTensor& temporal_mask,
                     BlockTrace<T>* trace, attn::KVCacheT<T>* cache = nullptr,
                     int start_frame = 0) {
    LnTrace<T>* ln1_tr = trace ? &trace->ln1 : nullptr;
    TensorT<T> ln1_out = ln_fwd(x, blk.ln1_g, blk.ln1_b, ln1_tr);
    TensorT<T> att_out;
    if (trace) trace->att.clear();
    if (blk.temporal) {
        attn::AttentionTraceT<T> tr;
        if (cache) {
            att_out = attend_streaming(ln1_out, blk.att, *cache, start_frame, n_frames,
                                       trace ? &tr : nullptr);
        } else {
            att_out = attend_full(ln1_out, blk.att, temporal_mask, trace ? &tr : nullptr);
        }
        if (trace) trace->att.push_back(std::move(tr));
    } else {
        att_out = TensorT<T>({ln1_out.dim(0), ln1_out.dim(1)});
        MaskTensor ones({tokens_per_frame, tokens_per_frame});
        ones.fill(1);
        for (int f = 0; f < n_frames; ++f) {
            const int64_t row0 = static_cast<int64_t>(f) * tokens_per_frame;
            TensorT<T> xf = slice_rows(ln1_out, row0, tokens_per_frame);
            attn::AttentionTraceT<T> tr;
            TensorT<T> yf = attend_full(xf, blk.att, ones, trace ? &tr : nullptr);
            paste_rows(att_out, yf, row0);
            if (trace) trace->att.push_back(std::move(tr));
        }
    }
    TensorT<T> x_mid = add(x, att_out);
    LnTrace<T>* ln2_tr = trace ? &trace->ln2 : nullptr;
    TensorT<T> ln2_out = ln_fwd(x_mid, blk.ln2_g, blk.ln2_b, ln2_tr);
    TensorT<T> fc1_out = linear_fwd(ln2_out, blk.fc1);
    TensorT<T> act = relu(fc1_out);
    TensorT<T> out = add(x_mid, linear_fwd(act, blk.fc2));
    if (trace) {
        trace->x_in = x;
        trace->ln1_out = std::move(ln1_out);
        trace->x_mid = std::move(x_mid);
        trace->ln2_out = std::move(ln2_out);
        trace->fc1_out = std::move(fc1_out);
        trace->act_out = std::move(act);
    }
    return out;
}

template <class T>
TensorT<T> block_bwd(const BlockT<T>& blk, const BlockTrace<T>& tr, int n_frames,
                     int tokens_per_frame, const TensorT<T>& dy, BlockT<T>& grad) {
    TensorT<T> d_act = linear_bwd(tr.act_out, blk.fc2, dy, grad.fc2);
    for (int64_t i = 0; i < d_act.numel(); ++i)
        if (!(tr.fc1_out[i] > T(0))) d_act[i] = T(0);
    TensorT<T> d_ln2_out = linear_bwd(tr.ln2_out, blk.fc1, d_act, grad.fc1);
    TensorT<T> d_xmid = ln_bwd(tr.ln2, blk.ln2_g, d_ln2_out, grad.ln2_g, grad.ln2_b);
    add_inplace(d_xmid, dy);

    TensorT<T> d_ln1_out;
    if (blk.temporal) {
        d_ln1_out = attend_full_bwd(tr.ln1_out, blk.att, tr.att[0], d_xmid, grad.att);
    } else {
        d_ln1_out = TensorT<T>({tr.ln1_out.dim(0), tr.ln1_out.dim(1)});
        for (int f = 0; f < n_frames; ++f) {
            const int64_t row0 = static_cast<int64_t>(f) * tokens_per_frame;
            TensorT<T> xf = slice_rows(tr.ln1_out, row0, tokens_per_frame);
            TensorT<T> dyf = slice_rows(d_xmid, row0, tokens_per_frame);
            TensorT<T> dxf =
                attend_full_bwd(xf, blk.att, tr.att[static_cast<size_t>(f)], dyf, grad.att);
            paste_rows(d_ln1_out, dxf, row0);
        }
    }
    TensorT<T> dx = ln_bwd(tr.ln1, blk.ln1_g, d_ln1_out, grad.ln1_g, grad.ln1_b);
    add_inplace(dx, d_xmid);
    return dx;
}

template <class T>
TensorT<T> conv_fwd(const TensorT<T>& x, const Conv3x3T<T>& conv) {
    const int64_t n = x.dim(0), in_c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int64_t out_c = conv.w.dim(0);
    if (conv.w.dim(1) != in_c) throw ShapeError("conv: channel mismatch");
    TensorT<T> y({n, out_c, h, w});
    for (int64_t f = 0; f < n; ++f)
        for (int64_t oc = 0; oc < out_c; ++oc)
            for (int64_t yy = 0; yy < h; ++yy)
                for (int64_t xx = 0; xx < w; ++xx) {
                    T acc = conv.b[oc];
                    for (int64_t ic = 0; ic < in_c; ++ic)
                        for (int64_t dy = -1; dy <= 1; ++dy) {
                            const int64_t sy = yy + dy;
                            if (sy < 0 || sy >= h) continue;
                            for (int64_t dx = -1; dx <= 1; ++dx) {
                                const int64_t sx = xx + dx;
                                if (sx < 0 || sx >= w) continue;
                                acc += conv.w[((oc * in_c + ic) * 3 + (dy + 1)) * 3 + (dx + 1)] *
                                       x[((f * in_c + ic) * h + sy) * w + sx];
                            }
                        }
                    y[((f * out_c + oc) * h + yy) * w + xx] = acc;
                }
    return y;
}

template <class T>
TensorT<T> conv_bwd(const TensorT<T>& x, const Conv3x3T<T>& conv, const TensorT<T>& dy,
                    Conv3x3T<T>& grad) {
    const int64_t n = x.dim(0), in_c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int64_t out_c = conv.w.dim(0);
    TensorT<T> dx({n, in_c, h, w});
    for (int64_t f = 0; f < n; ++f)
        for (int64_t oc = 0; oc < out_c; ++oc)
            for (int64_t yy = 0; yy < h; ++yy)
                for (int64_t xx = 0; xx < w; ++xx) {
                    const T g = dy[((f * out_c + oc) * h + yy) * w + xx];
                    grad.b[oc] += g;
                    for (int64_t ic = 0; ic < in_c; ++ic)
                        for (int64_t ddy = -1; ddy <= 1; ++ddy) {
                            const int64_t sy = yy + ddy;
                            if (sy < 0 || sy >= h) continue;
                            for (int64_t ddx = -1; ddx <= 1; ++ddx) {
                                const int64_t sx = xx + ddx;
                                if (sx < 0 || sx >= w) continue;
                                const int64_t wi =
                                    ((oc * in_c + ic) * 3 + (ddy + 1)) * 3 + (ddx + 1);
                                grad.w[wi] += g * x[((f * in_c + ic) * h + sy) * w + sx];
                                dx[((f * in_c + ic) * h + sy) * w + sx] += g * conv.w[wi];
                            }
                        }
                }
    return dx;
}

// Pixel (c, gy*p+py, gx*p+px) <-> column c*p^2 + py*p + px of token
// (f*gh + gy)*gw + gx.
template <class T>
TensorT<T> patchify(const TensorT<T>& frames, int patch) {
    const int64_t n = frames.dim(0), ch = frames.dim(1), h = frames.dim(2), w = frames.dim(3);
    const int64_t gh = h / patch, gw = w / patch;
    TensorT<T> out({n * gh * gw, ch * patch * patch});
    const int64_t cols = ch * patch * patch;
    for (int64_t f = 0; f < n; ++f)
        for (int64_t gy = 0; gy < gh; ++gy)
            for (int64_t gx = 0; gx < gw; ++gx) {
                const int64_t row = (f * gh + gy) * gw + gx;
                for (int64_t c = 0; c < ch; ++c)
                    for (int64_t py = 0; py < patch; ++py)
                        for (int64_t px = 0; px < patch; ++px)
                            out[row * cols + (c * patch + py) * patch + px] =
                                frames[((f * ch + c) * h + gy * patch + py) * w + gx * patch + px];
            }
    return out;
}

template <class T>
TensorT<T> unpatchify(const TensorT<T>& rows, int n, int channels, int h, int w, int patch) {
    const int64_t gh = h / patch, gw = w / patch;
    const int64_t cols = static_cast<int64_t>(channels) * patch * patch;
    TensorT<T> out({n, channels, h, w});
    for (int64_t f = 0; f < n; ++f)
        for (int64_t gy = 0; gy < gh; ++gy)
            for (int64_t gx = 0; gx < gw; ++gx) {
                const int64_t row = (f * gh + gy) * gw + gx;
                for (int64_t c = 0; c < channels; ++c)
                    for (int64_t py = 0; py < patch; ++py)
                        for (int64_t px = 0; px < patch; ++px)
                            out[((f * channels + c) * h + gy * patch + py) * w + gx * patch + px] =
                                rows[row * cols + (c * patch + py) * patch + px];
            }
    return out;
}

struct TokenGeometry {
    int n = 0, gh = 0, gw = 0, tokens_per_frame = 0;
};

template <class T>
void add_positional(TensorT<T>& tokens, const TensorT<T>& pos_row, const TensorT<T>& pos_col,
                    const TensorT<T>& frame_emb, const TokenGeometry& g, int frame0,
                    int max_frames) {
    const int64_t d = tokens.dim(1);
    for (int64_t f = 0; f < g.n; ++f) {
        const int64_t fe = std::min<int64_t>(frame0 + f, max_frames - 1);
        for (int64_t gy = 0; gy < g.gh; ++gy)
            for (int64_t gx = 0; gx < g.gw; ++gx) {
                T* row = tokens.data() + ((f * g.gh + gy) * g.gw + gx) * d;
                for (int64_t j = 0; j < d; ++j)
                    row[j] += pos_row[gy * d + j] + pos_col[gx * d + j] + frame_emb[fe * d + j];
            }
    }
}

template <class T>
void positional_grad(const TensorT<T>& d_tokens, TensorT<T>& g_pos_row, TensorT<T>& g_pos_col,
                     TensorT<T>& g_frame, const TokenGeometry& g, int frame0, int max_frames) {
    const int64_t d = d_tokens.dim(1);
    for (int64_t f = 0; f < g.n; ++f) {
        const int64_t fe = std::min<int64_t>(frame0 + f, max_frames - 1);
        for (int64_t gy = 0; gy < g.gh; ++gy)
            for (int64_t gx = 0; gx < g.gw; ++gx) {
                const T* row = d_tokens.data() + ((f * g.gh + gy) * g.gw + gx) * d;
                for (int64_t j = 0; j < d; ++j) {
                    g_pos_row[gy * d + j] += row[j];
                    g_pos_col[gx * d + j] += row[j];
                    g_frame[fe * d + j] += row[j];
                }
            }
    }
}

template <class T>
TokenGeometry token_geometry(const ModelConfig& cfg, const TensorT<T>& frames,
                             int expect_channels) {
    if (frames.rank() != 4 || frames.dim(1) != expect_channels)
        throw ShapeError("model: frames must be [N x " + std::to_string(expect_channels) +
                         " x H x W]");
    const int n = static_cast<int>(frames.dim(0));
    const int h = static_cast<int>(frames.dim(2));
    const int w = static_cast<int>(frames.dim(3));
    if (n < 1) throw ShapeError("model: need at least one frame");
    if (h % cfg.patch_size != 0 || w % cfg.patch_size != 0)
        throw ShapeError("model: H and W must be divisible by the patch size");
    const int gh = h / cfg.patch_size, gw = w / cfg.patch_size;
    if (gh > cfg.max_grid || gw > cfg.max_grid)
        throw ShapeError("model: resolution exceeds the learned spatial embedding");
    return {n, gh, gw, gh * gw};
}

template <class T>
struct ConvHeadGrads {
    Conv3x3T<T>* c1 = nullptr;
    Conv3x3T<T>* c2 = nullptr;
};

template <class T>
TensorT<T> conv_head_fwd(const TensorT<T>& feat, const Conv3x3T<T>& c1, const Conv3x3T<T>& c2,
                         ConvHeadTrace<T>* trace) {
    TensorT<T> pre = conv_fwd(feat, c1);
    TensorT<T> act = relu(pre);
    TensorT<T> raw = conv_fwd(act, c2);
    if (trace) {
        trace->input = feat;
        trace->conv1_out = std::move(pre);
        trace->act_out = std::move(act);
        trace->raw = raw;
    }
    return raw;
}

template <class T>
TensorT<T> conv_head_bwd(const ConvHeadTrace<T>& tr, const Conv3x3T<T>& c1,
                         const Conv3x3T<T>& c2, const TensorT<T>& d_raw, Conv3x3T<T>& g1,
                         Conv3x3T<T>& g2) {
    TensorT<T> d_act = conv_bwd(tr.act_out, c2, d_raw, g2);
    for (int64_t i = 0; i < d_act.numel(); ++i)
        if (!(tr.conv1_out[i] > T(0))) d_act[i] = T(0);
    return conv_bwd(tr.input, c1, d_act, g1);
}

constexpr double kNormalFloor = 1e-12;

}  // namespace

// ---------------------------------------------------------------------------
// ToyModel
// ---------------------------------------------------------------------------

template <class T>
ToyModelT<T> ToyModelT<T>::init(const ModelConfig& cfg) {
    cfg.validate();
    ToyModelT m;
    m.cfg_ = cfg;
    Rng rng(cfg.seed);
    const int p2 = cfg.patch_size * cfg.patch_size;
    init_linear(m.patch_embed_, 3 * p2, cfg.dim, rng);
    m.pos_row_ = TensorT<T>({cfg.max_grid, cfg.dim});
    m.pos_col_ = TensorT<T>({cfg.max_grid, cfg.dim});
    m.frame_emb_ = TensorT<T>({cfg.max_frames, cfg.dim});
    rng.fill_uniform(m.pos_row_, -0.02, 0.02);
    rng.fill_uniform(m.pos_col_, -0.02, 0.02);
    rng.fill_uniform(m.frame_emb_, -0.02, 0.02);

    const std::vector<int> depths =
        chunked_layer_depths(cfg.backbone_layers, cfg.chunked_layer_count());
    for (int i = 0; i < cfg.backbone_layers; ++i) {
        const bool temporal = std::find(depths.begin(), depths.end(), i) != depths.end();
        BlockT<T> blk;
        init_block(blk, cfg, rng, temporal);
        m.blocks_.push_back(std::move(blk));
    }
    for (int i = 0; i < cfg.decoder_layers; ++i) {
        BlockT<T> blk;
        init_block(blk, cfg, rng, false);
        m.blocks_.push_back(std::move(blk));
    }
    init_linear(m.unpatch_, cfg.dim, cfg.head_channels * p2, rng);
    init_conv(m.point_conv1_, cfg.head_channels, cfg.head_channels, rng);
    init_conv(m.point_conv2_, cfg.head_channels, 3, rng);
    init_conv(m.normal_conv1_, cfg.head_channels, cfg.head_channels, rng);
    init_conv(m.normal_conv2_, cfg.head_channels, 3, rng);
    return m;
}

namespace {

// Turns raw head outputs into the geometry contract: z = exp(raw z) so depth
// is strictly positive, normals normalized to unit length, depth read off
// the point map.
template <class T>
GeometryOutputT<T> activate_heads(const TensorT<T>& point_raw, const TensorT<T>& normal_raw,
                                  std::vector<T>* norms_out) {
    const int64_t n = point_raw.dim(0), h = point_raw.dim(2), w = point_raw.dim(3);
    GeometryOutputT<T> out;
    out.points = point_raw;
    out.depth = TensorT<T>({n, h, w});
    out.normals = TensorT<T>({n, 3, h, w});
    if (norms_out) norms_out->assign(static_cast<size_t>(n * h * w), T(0));
    for (int64_t f = 0; f < n; ++f)
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x) {
                const int64_t zi = ((f * 3 + 2) * h + y) * w + x;
                const T z = std::exp(point_raw[zi]);
                out.points[zi] = z;
                out.depth[(f * h + y) * w + x] = z;
                T v[3];
                for (int64_t c = 0; c < 3; ++c) v[c] = normal_raw[((f * 3 + c) * h + y) * w + x];
                const T norm = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
                if (norms_out) (*norms_out)[static_cast<size_t>((f * h + y) * w + x)] = norm;
                if (norm < T(kNormalFloor)) {
                    out.normals[((f * 3 + 2) * h + y) * w + x] = T(-1);
                } else {
                    for (int64_t c = 0; c < 3; ++c)
                        out.normals[((f * 3 + c) * h + y) * w + x] = v[c] / norm;
                }
            }
    return out;
}

}  // namespace

template <class T>
GeometryOutputT<T> ToyModelT<T>::forward_train(const TensorT<T>& frames,
                                               const attn::ChunkPartition& partition,
                                               ForwardTrace<T>& trace) const {
    return forward_impl(frames, partition, &trace);
}

template <class T>
GeometryOutputT<T> ToyModelT<T>::forward(const TensorT<T>& frames,
                                         const attn::ChunkPartition& partition) const {
    return forward_impl(frames, partition, nullptr);
}

template <class T>
GeometryOutputT<T> ToyModelT<T>::forward_impl(const TensorT<T>& frames,
                                              const attn::ChunkPartition& partition,
                                              ForwardTrace<T>* trace) const {
    const TokenGeometry geom = token_geometry(cfg_, frames, 3);
    if (partition.frames() != geom.n)
        throw ShapeError("model: partition does not cover the frame count");
    const int height = static_cast<int>(frames.dim(2));
    const int width = static_cast<int>(frames.dim(3));

    TensorT<T> patch_vectors = patchify(frames, cfg_.patch_size);
    TensorT<T> tokens = linear_fwd(patch_vectors, patch_embed_);
    add_positional(tokens, pos_row_, pos_col_, frame_emb_, geom, 0, cfg_.max_frames);

    MaskTensor temporal_mask =
        attn::expand_mask(attn::build_mask(partition), geom.tokens_per_frame);
    if (trace) {
        trace->n = geom.n;
        trace->height = height;
        trace->width = width;
        trace->partition = partition;
        trace->temporal_mask = temporal_mask;
        trace->patch_vectors = std::move(patch_vectors);
        trace->tokens0 = tokens;
        trace->blocks.resize(blocks_.size());
    }
    for (size_t l = 0; l < blocks_.size(); ++l)
        tokens = block_fwd(tokens, blocks_[l], geom.n, geom.tokens_per_frame, temporal_mask,
                           trace ? &trace->blocks[l] : nullptr);
    if (trace) trace->trunk_out = tokens;

    TensorT<T> unpatch_out = linear_fwd(tokens, unpatch_);
    TensorT<T> feat =
        unpatchify(unpatch_out, geom.n, cfg_.head_channels, height, width, cfg_.patch_size);
    if (trace) trace->unpatch_out = std::move(unpatch_out);

    TensorT<T> point_raw = conv_head_fwd(feat, point_conv1_, point_conv2_,
                                         trace ? &trace->point_head : nullptr);
    TensorT<T> normal_raw = conv_head_fwd(feat, normal_conv1_, normal_conv2_,
                                          trace ? &trace->normal_head : nullptr);
    return activate_heads(point_raw, normal_raw, trace ? &trace->normal_norms : nullptr);
}

template <class T>
typename ToyModelT<T>::StreamState ToyModelT<T>::make_stream_state(
    int height, int width, std::optional<int> window) const {
    if (height % cfg_.patch_size != 0 || width % cfg_.patch_size != 0)
        throw ShapeError("model: H and W must be divisible by the patch size");
    StreamState st;
    st.height = height;
    st.width = width;
    const int tpf = (height / cfg_.patch_size) * (width / cfg_.patch_size);
    for (const BlockT<T>& b : blocks_)
        if (b.temporal)
            st.caches.emplace_back(cfg_.heads, cfg_.dim / cfg_.heads, tpf, window);
    return st;
}

template <class T>
GeometryOutputT<T> ToyModelT<T>::forward_streaming(const TensorT<T>& packet,
                                                   StreamState& state) const {
    const TokenGeometry geom = token_geometry(cfg_, packet, 3);
    const int height = static_cast<int>(packet.dim(2));
    const int width = static_cast<int>(packet.dim(3));
    if (height != state.height || width != state.width)
        throw ShapeError("model: packet resolution does not match the stream state");

    TensorT<T> patch_vectors = patchify(packet, cfg_.patch_size);
    TensorT<T> tokens = linear_fwd(patch_vectors, patch_embed_);
    add_positional(tokens, pos_row_, pos_col_, frame_emb_, geom, state.frames_seen,
                   cfg_.max_frames);

    MaskTensor no_mask;
    size_t cache_idx = 0;
    for (const BlockT<T>& blk : blocks_) {
        attn::KVCacheT<T>* cache = blk.temporal ? &state.caches[cache_idx++] : nullptr;
        tokens = block_fwd(tokens, blk, geom.n, geom.tokens_per_frame, no_mask, nullptr,
                           cache, state.frames_seen);
    }
    state.frames_seen += geom.n;

    TensorT<T> unpatch_out = linear_fwd(tokens, unpatch_);
    TensorT<T> feat =
        unpatchify(unpatch_out, geom.n, cfg_.head_channels, height, width, cfg_.patch_size);
    TensorT<T> point_raw = conv_head_fwd<T>(feat, point_conv1_, point_conv2_, nullptr);
    TensorT<T> normal_raw = conv_head_fwd<T>(feat, normal_conv1_, normal_conv2_, nullptr);
    return activate_heads<T>(point_raw, normal_raw, nullptr);
}

template <class T>
std::vector<TensorT<T>> ToyModelT<T>::backward(const ForwardTrace<T>& trace,
                                               const TensorT<T>& d_points,
                                               const TensorT<T>& d_normals) const {
    const int64_t n = trace.n, h = trace.height, w = trace.width;

    // Undo the output activations.
    TensorT<T> d_point_raw = d_points;
    TensorT<T> d_normal_raw({n, 3, h, w});
    for (int64_t f = 0; f < n; ++f)
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x) {
                const int64_t zi = ((f * 3 + 2) * h + y) * w + x;
                d_point_raw[zi] = d_points[zi] * std::exp(trace.point_head.raw[zi]);
                const T norm = trace.normal_norms[static_cast<size_t>((f * h + y) * w + x)];
                if (norm < T(kNormalFloor)) continue;
                T v[3], g[3];
                for (int64_t c = 0; c < 3; ++c) {
                    v[c] = trace.normal_head.raw[((f * 3 + c) * h + y) * w + x] / norm;
                    g[c] = d_normals[((f * 3 + c) * h + y) * w + x];
                }
                const T vg = v[0] * g[0] + v[1] * g[1] + v[2] * g[2];
                for (int64_t c = 0; c < 3; ++c)
                    d_normal_raw[((f * 3 + c) * h + y) * w + x] = (g[c] - v[c] * vg) / norm;
            }

    // Allocate a zero copy of every parameter in params() order.
    ToyModelT<T> g = *this;
    for (auto& [name, ptr] : g.params()) ptr->fill(T(0));

    TensorT<T> d_feat = conv_head_bwd(trace.point_head, point_conv1_, point_conv2_,
                                      d_point_raw, g.point_conv1_, g.point_conv2_);
    add_inplace(d_feat, conv_head_bwd(trace.normal_head, normal_conv1_, normal_conv2_,
                                      d_normal_raw, g.normal_conv1_, g.normal_conv2_));

    TensorT<T> d_unpatch_out = patchify(d_feat, cfg_.patch_size);
    TensorT<T> d_tokens = linear_bwd(trace.trunk_out, unpatch_, d_unpatch_out, g.unpatch_);

    const TokenGeometry geom{static_cast<int>(n), trace.height / cfg_.patch_size,
                             trace.width / cfg_.patch_size,
                             (trace.height / cfg_.patch_size) * (trace.width / cfg_.patch_size)};
    std::vector<BlockT<T>> block_grads;
    block_grads.reserve(blocks_.size());
    for (BlockT<T>& blk : g.blocks_) block_grads.push_back(std::move(blk));
    for (size_t l = blocks_.size(); l-- > 0;)
        d_tokens = block_bwd(blocks_[l], trace.blocks[l], geom.n, geom.tokens_per_frame,
                             d_tokens, block_grads[l]);
    g.blocks_ = std::move(block_grads);

    positional_grad(d_tokens, g.pos_row_, g.pos_col_, g.frame_emb_, geom, 0, cfg_.max_frames);
    linear_bwd(trace.patch_vectors, patch_embed_, d_tokens, g.patch_embed_);

    std::vector<TensorT<T>> grads;
    for (auto& [name, ptr] : g.params()) grads.push_back(std::move(*ptr));
    return grads;
}

template <class T>
std::vector<std::pair<std::string, TensorT<T>*>> ToyModelT<T>::params() {
    std::vector<std::pair<std::string, TensorT<T>*>> out;
    out.emplace_back("patch_embed.w", &patch_embed_.w);
    out.emplace_back("patch_embed.b", &patch_embed_.b);
    out.emplace_back("pos_row", &pos_row_);
    out.emplace_back("pos_col", &pos_col_);
    out.emplace_back("frame_emb", &frame_emb_);
    for (size_t i = 0; i < blocks_.size(); ++i) {
        const std::string p = "block" + std::to_string(i) + ".";
        BlockT<T>& b = blocks_[i];
        out.emplace_back(p + "ln1_g", &b.ln1_g);
        out.emplace_back(p + "ln1_b", &b.ln1_b);
        out.emplace_back(p + "att.wq", &b.att.wq);
        out.emplace_back(p + "att.bq", &b.att.bq);
        out.emplace_back(p + "att.wk", &b.att.wk);
        out.emplace_back(p + "att.bk", &b.att.bk);
        out.emplace_back(p + "att.wv", &b.att.wv);
        out.emplace_back(p + "att.bv", &b.att.bv);
        out.emplace_back(p + "att.wo", &b.att.wo);
        out.emplace_back(p + "att.bo", &b.att.bo);
        out.emplace_back(p + "ln2_g", &b.ln2_g);
        out.emplace_back(p + "ln2_b", &b.ln2_b);
        out.emplace_back(p + "fc1.w", &b.fc1.w);
        out.emplace_back(p + "fc1.b", &b.fc1.b);
        out.emplace_back(p + "fc2.w", &b.fc2.w);
        out.emplace_back(p + "fc2.b", &b.fc2.b);
    }
    out.emplace_back("unpatch.w", &unpatch_.w);
    out.emplace_back("unpatch.b", &unpatch_.b);
    out.emplace_back("point_conv1.w", &point_conv1_.w);
    out.emplace_back("point_conv1.b", &point_conv1_.b);
    out.emplace_back("point_conv2.w", &point_conv2_.w);
    out.emplace_back("point_conv2.b", &point_conv2_.b);
    out.emplace_back("normal_conv1.w", &normal_conv1_.w);
    out.emplace_back("normal_conv1.b", &normal_conv1_.b);
    out.emplace_back("normal_conv2.w", &normal_conv2_.w);
    out.emplace_back("normal_conv2.b", &normal_conv2_.b);
    return out;
}

template <class T>
std::vector<std::pair<std::string, const TensorT<T>*>> ToyModelT<T>::params() const {
    std::vector<std::pair<std::string, const TensorT<T>*>> out;
    for (auto& [name, ptr] : const_cast<ToyModelT<T>*>(this)->params())
        out.emplace_back(name, ptr);
    return out;
}

namespace {

template <class T, class M>
void save_model(const M& m, const std::string& dir) {
    std::filesystem::create_directories(dir);
    io::KeyValues manifest;
    for (const auto& [k, v] : m.config().to_key_values())
        manifest.emplace_back("config." + k, v);
    for (const auto& [name, ptr] : m.params()) {
        manifest.emplace_back("param." + name, name + ".vgeo");
        io::write_tensor(dir + "/" + name + ".vgeo", *ptr);
    }
    io::write_key_values(dir + "/manifest.txt", manifest);
}

template <class T, class M>
M load_model(const std::string& dir) {
    const io::KeyValues manifest = io::read_key_values(dir + "/manifest.txt");
    io::KeyValues cfg_kv;
    for (const auto& [k, v] : manifest)
        if (k.rfind("config.", 0) == 0) cfg_kv.emplace_back(k.substr(7), v);
    M m = M::init(ModelConfig::from_key_values(cfg_kv));
    for (auto& [name, ptr] : m.params()) {
        const std::string* rel = io::find(manifest, "param." + name);
        if (!rel) throw FormatError(dir + ": manifest missing parameter " + name);
        TensorT<T> t;
        if constexpr (std::is_same_v<T, float>) t = io::read_tensor_f32(dir + "/" + *rel);
        else t = io::read_tensor_f64(dir + "/" + *rel);
        if (t.dims() != ptr->dims())
            throw FormatError(dir + ": parameter " + name + " has unexpected shape");
        *ptr = std::move(t);
    }
    return m;
}

}  // namespace

template <class T>
void ToyModelT<T>::save(const std::string& dir) const {
    save_model<T>(*this, dir);
}

template <class T>
ToyModelT<T> ToyModelT<T>::load(const std::string& dir) {
    return load_model<T, ToyModelT<T>>(dir);
}

// ---------------------------------------------------------------------------
// CompletionNet (video depth completion teacher)
// ---------------------------------------------------------------------------

template <class T>
CompletionNetT<T> CompletionNetT<T>::init(const ModelConfig& cfg) {
    cfg.validate();
    CompletionNetT m;
    m.cfg_ = cfg;
    Rng rng(cfg.seed);
    const int p2 = cfg.patch_size * cfg.patch_size;
    init_linear(m.patch_embed_, 3 * p2, cfg.dim, rng);
    init_linear(m.prior_embed_, p2, cfg.dim, rng);
    m.pos_row_ = TensorT<T>({cfg.max_grid, cfg.dim});
    m.pos_col_ = TensorT<T>({cfg.max_grid, cfg.dim});
    m.frame_emb_ = TensorT<T>({cfg.max_frames, cfg.dim});
    rng.fill_uniform(m.pos_row_, -0.02, 0.02);
    rng.fill_uniform(m.pos_col_, -0.02, 0.02);
    rng.fill_uniform(m.frame_emb_, -0.02, 0.02);
    const std::vector<int> depths =
        chunked_layer_depths(cfg.backbone_layers, cfg.chunked_layer_count());
    for (int i = 0; i < cfg.backbone_layers; ++i) {
        const bool temporal = std::find(depths.begin(), depths.end(), i) != depths.end();
        BlockT<T> blk;
        init_block(blk, cfg, rng, temporal);
        m.blocks_.push_back(std::move(blk));
    }
    for (int i = 0; i < cfg.decoder_layers; ++i) {
        BlockT<T> blk;
        init_block(blk, cfg, rng, false);
        m.blocks_.push_back(std::move(blk));
    }
    init_linear(m.unpatch_, cfg.dim, cfg.head_channels * p2, rng);
    init_conv(m.out_conv1_, cfg.head_channels, cfg.head_channels, rng);
    init_conv(m.out_conv2_, cfg.head_channels, 1, rng);
    return m;
}

template <class T>
TensorT<T> CompletionNetT<T>::forward(const TensorT<T>& rgb, const TensorT<T>& log_prior,
                                      const attn::ChunkPartition& partition) const {
    ForwardTrace<T> trace;
    return forward_train(rgb, log_prior, partition, trace);
}

template <class T>
TensorT<T> CompletionNetT<T>::forward_train(const TensorT<T>& rgb, const TensorT<T>& log_prior,
                                            const attn::ChunkPartition& partition,
                                            ForwardTrace<T>& trace) const {
    const TokenGeometry geom = token_geometry(cfg_, rgb, 3);
    if (partition.frames() != geom.n)
        throw ShapeError("teacher: partition does not cover the frame count");
    const int height = static_cast<int>(rgb.dim(2));
    const int width = static_cast<int>(rgb.dim(3));
    if (log_prior.rank() != 3 || log_prior.dim(0) != geom.n || log_prior.dim(1) != height ||
        log_prior.dim(2) != width)
        throw ShapeError("teacher: log prior shape does not match frames");

    TensorT<T> patch_vectors = patchify(rgb, cfg_.patch_size);
    TensorT<T> prior_vectors =
        patchify(log_prior.reshaped({geom.n, 1, height, width}), cfg_.patch_size);
    TensorT<T> tokens = linear_fwd(patch_vectors, patch_embed_);
    add_inplace(tokens, linear_fwd(prior_vectors, prior_embed_));
    add_positional(tokens, pos_row_, pos_col_, frame_emb_, geom, 0, cfg_.max_frames);

    MaskTensor temporal_mask =
        attn::expand_mask(attn::build_mask(partition), geom.tokens_per_frame);
    trace.n = geom.n;
    trace.height = height;
    trace.width = width;
    trace.partition = partition;
    trace.temporal_mask = temporal_mask;
    trace.patch_vectors = std::move(patch_vectors);
    trace.prior_vectors = std::move(prior_vectors);
    trace.tokens0 = tokens;
    trace.blocks.resize(blocks_.size());
    for (size_t l = 0; l < blocks_.size(); ++l)
        tokens = block_fwd(tokens, blocks_[l], geom.n, geom.tokens_per_frame, temporal_mask,
                           &trace.blocks[l]);
    trace.trunk_out = tokens;

    TensorT<T> unpatch_out = linear_fwd(tokens, unpatch_);
    TensorT<T> feat =
        unpatchify(unpatch_out, geom.n, cfg_.head_channels, height, width, cfg_.patch_size);
    trace.unpatch_out = std::move(unpatch_out);
    TensorT<T> raw = conv_head_fwd(feat, out_conv1_, out_conv2_, &trace.point_head);
    // Residual on the prior: the head learns a correction in log space, so an
    // untrained teacher starts near the identity mapping.
    TensorT<T> out = raw.reshaped({geom.n, height, width});
    add_inplace(out, log_prior);
    return out;
}

template <class T>
std::vector<TensorT<T>> CompletionNetT<T>::backward(const ForwardTrace<T>& trace,
                                                    const TensorT<T>& d_out) const {
    const int64_t n = trace.n, h = trace.height, w = trace.width;
    TensorT<T> d_raw = d_out.reshaped({n, 1, h, w});

    CompletionNetT<T> g = *this;
    for (auto& [name, ptr] : g.params()) ptr->fill(T(0));

    TensorT<T> d_feat =
        conv_head_bwd(trace.point_head, out_conv1_, out_conv2_, d_raw, g.out_conv1_,
                      g.out_conv2_);
    TensorT<T> d_unpatch_out = patchify(d_feat, cfg_.patch_size);
    TensorT<T> d_tokens = linear_bwd(trace.trunk_out, unpatch_, d_unpatch_out, g.unpatch_);

    const TokenGeometry geom{static_cast<int>(n), trace.height / cfg_.patch_size,
                             trace.width / cfg_.patch_size,
                             (trace.height / cfg_.patch_size) * (trace.width / cfg_.patch_size)};
    std::vector<BlockT<T>> block_grads;
    block_grads.reserve(blocks_.size());
    for (BlockT<T>& blk : g.blocks_) block_grads.push_back(std::move(blk));
    for (size_t l = blocks_.size(); l-- > 0;)
        d_tokens = block_bwd(blocks_[l], trace.blocks[l], geom.n, geom.tokens_per_frame,
                             d_tokens, block_grads[l]);
    g.blocks_ = std::move(block_grads);

    positional_grad(d_tokens, g.pos_row_, g.pos_col_, g.frame_emb_, geom, 0, cfg_.max_frames);
    linear_bwd(trace.patch_vectors, patch_embed_, d_tokens, g.patch_embed_);
    linear_bwd(trace.prior_vectors, prior_embed_, d_tokens, g.prior_embed_);

    std::vector<TensorT<T>> grads;
    for (auto& [name, ptr] : g.params()) grads.push_back(std::move(*ptr));
    return grads;
}

template <class T>
std::vector<std::pair<std::string, TensorT<T>*>> CompletionNetT<T>::params() {
    std::vector<std::pair<std::string, TensorT<T>*>> out;
    out.emplace_back("patch_embed.w", &patch_embed_.w);
    out.emplace_back("patch_embed.b", &patch_embed_.b);
    out.emplace_back("prior_embed.w", &prior_embed_.w);
    out.emplace_back("prior_embed.b", &prior_embed_.b);
    out.emplace_back("pos_row", &pos_row_);
    out.emplace_back("pos_col", &pos_col_);
    out.emplace_back("frame_emb", &frame_emb_);
    for (size_t i = 0; i < blocks_.size(); ++i) {
        const std::string p = "block" + std::to_string(i) + ".";
        BlockT<T>& b = blocks_[i];
        out.emplace_back(p + "ln1_g", &b.ln1_g);
        out.emplace_back(p + "ln1_b", &b.ln1_b);
        out.emplace_back(p + "att.wq", &b.att.wq);
        out.emplace_back(p + "att.bq", &b.att.bq);
        out.emplace_back(p + "att.wk", &b.att.wk);
        out.emplace_back(p + "att.bk", &b.att.bk);
        out.emplace_back(p + "att.wv", &b.att.wv);
        out.emplace_back(p + "att.bv", &b.att.bv);
        out.emplace_back(p + "att.wo", &b.att.wo);
        out.emplace_back(p + "att.bo", &b.att.bo);
        out.emplace_back(p + "ln2_g", &b.ln2_g);
        out.emplace_back(p + "ln2_b", &b.ln2_b);
        out.emplace_back(p + "fc1.w", &b.fc1.w);
        out.emplace_back(p + "fc1.b", &b.fc1.b);
        out.emplace_back(p + "fc2.w", &b.fc2.w);
        out.emplace_back(p + "fc2.b", &b.fc2.b);
    }
    out.emplace_back("unpatch.w", &unpatch_.w);
    out.emplace_back("unpatch.b", &unpatch_.b);
    out.emplace_back("out_conv1.w", &out_conv1_.w);
    out.emplace_back("out_conv1.b", &out_conv1_.b);
    out.emplace_back("out_conv2.w", &out_conv2_.w);
    out.emplace_back("out_conv2.b", &out_conv2_.b);
    return out;
}

template <class T>
std::vector<std::pair<std::string, const TensorT<T>*>> CompletionNetT<T>::params() const {
    std::vector<std::pair<std::string, const TensorT<T>*>> out;
    for (auto& [name, ptr] : const_cast<CompletionNetT<T>*>(this)->params())
        out.emplace_back(name, ptr);
    return out;
}

template <class T>
void CompletionNetT<T>::save(const std::string& dir) const {
    save_model<T>(*this, dir);
}

template <class T>
CompletionNetT<T> CompletionNetT<T>::load(const std::string& dir) {
    return load_model<T, CompletionNetT<T>>(dir);
}

template class ToyModelT<float>;
template class ToyModelT<double>;
template class CompletionNetT<float>;
template class CompletionNetT<double>;

}  // namespace vigeo::model
