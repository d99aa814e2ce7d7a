#pragma once

#include <optional>
#include <vector>

#include "vigeo/tensor.hpp"

namespace vigeo::attn {

// Ordered split of a frame sequence into contiguous chunks. Attention is
// bidirectional within a chunk and causal across chunks; the partition alone
// selects offline, streaming, or chunk-based inference.
struct ChunkPartition {
    std::vector<int> lengths;

    ChunkPartition() = default;
    explicit ChunkPartition(std::vector<int> l);

    int frames() const;
    int chunks() const { return static_cast<int>(lengths.size()); }

    // ch(i): monotone non-decreasing frame -> chunk map.
    int chunk_of(int frame) const;

    // First frame index of chunk l.
    int chunk_start(int chunk) const;

    static ChunkPartition offline(int n_frames);                  // [N]
    static ChunkPartition streaming(int n_frames);                // [1]*N
    static ChunkPartition chunked(int n_frames, int chunk_size);  // ceil(N/C) chunks, last may be short
};

// Frame-level mask: entry (i, j) = 1 iff ch(j) <= ch(i).
MaskTensor build_mask(const ChunkPartition& partition);

// Kronecker expansion to token level: token pair (p, q) is unmasked iff the
// frame pair (frame(p), frame(q)) is.
MaskTensor expand_mask(const MaskTensor& frame_mask, int tokens_per_frame);

template <class T>
struct AttentionWeightsT {
    int dim = 0;
    int heads = 0;
    TensorT<T> wq, bq, wk, bk, wv, bv, wo, bo;  // w* are [dim x dim], b* are [dim]

    int head_dim() const { return dim / heads; }

    static AttentionWeightsT random(int dim, int heads, Rng& rng) {
        if (dim <= 0 || heads <= 0 || dim % heads != 0)
            throw ShapeError("attention weights: dim must be a positive multiple of heads");
        AttentionWeightsT w;
        w.dim = dim;
        w.heads = heads;
        const double bound = 1.0 / std::sqrt(static_cast<double>(dim));
        for (TensorT<T>* m : {&w.wq, &w.wk, &w.wv, &w.wo}) {
            *m = TensorT<T>({dim, dim});
            rng.fill_uniform(*m, -bound, bound);
        }
        for (TensorT<T>* b : {&w.bq, &w.bk, &w.bv, &w.bo}) *b = TensorT<T>({dim});
        return w;
    }
};

using AttentionWeights = AttentionWeightsT<float>;

// Per-layer store of key/value rows from completed chunks. One writer per
// sequence. With a window w, only the most recent w frames stay cached;
// attention against an evicted history is approximate by construction.
template <class T>
class KVCacheT {
public:
    KVCacheT() = default;

    KVCacheT(int heads, int head_dim, int tokens_per_frame, std::optional<int> window = {})
        : heads_(heads), head_dim_(head_dim), tokens_per_frame_(tokens_per_frame),
          window_(window), keys_(heads), values_(heads) {
        if (heads <= 0 || head_dim <= 0 || tokens_per_frame <= 0)
            throw ShapeError("kv cache: non-positive geometry");
        if (window && *window < 1) throw ShapeError("kv cache: window must be >= 1");
    }

    int heads() const { return heads_; }
    int head_dim() const { return head_dim_; }
    int tokens_per_frame() const { return tokens_per_frame_; }
    std::optional<int> window() const { return window_; }

    // Frames appended since the last reset (the sequence position).
    int frames_cached() const { return frames_cached_; }
    // Frames currently held (= min(window, frames_cached) when windowed).
    int frames_held() const { return frames_held_; }
    int tokens_held() const { return frames_held_ * tokens_per_frame_; }
    int peak_frames_held() const { return peak_frames_held_; }

    const std::vector<T>& keys(int head) const { return keys_[static_cast<size_t>(head)]; }
    const std::vector<T>& values(int head) const { return values_[static_cast<size_t>(head)]; }

    // keys/values: per head, row-major [n_frames*tokens_per_frame x head_dim].
    void append(const std::vector<TensorT<T>>& keys_per_head,
                const std::vector<TensorT<T>>& values_per_head, int n_frames) {
        if (static_cast<int>(keys_per_head.size()) != heads_ ||
            static_cast<int>(values_per_head.size()) != heads_)
            throw ShapeError("kv cache append: head count mismatch");
        const int64_t rows = static_cast<int64_t>(n_frames) * tokens_per_frame_;
        for (int h = 0; h < heads_; ++h) {
            const TensorT<T>& k = keys_per_head[static_cast<size_t>(h)];
            const TensorT<T>& v = values_per_head[static_cast<size_t>(h)];
            if (k.rank() != 2 || k.dim(0) != rows || k.dim(1) != head_dim_ ||
                v.rank() != 2 || v.dim(0) != rows || v.dim(1) != head_dim_)
                throw ShapeError("kv cache append: row shape mismatch");
            keys_[static_cast<size_t>(h)].insert(keys_[static_cast<size_t>(h)].end(),
                                                 k.data(), k.data() + k.numel());
            values_[static_cast<size_t>(h)].insert(values_[static_cast<size_t>(h)].end(),
                                                   v.data(), v.data() + v.numel());
        }
        frames_cached_ += n_frames;
        frames_held_ += n_frames;
        if (window_ && frames_held_ > *window_) {
            const int evict = frames_held_ - *window_;
            const size_t drop = static_cast<size_t>(evict) * tokens_per_frame_ * head_dim_;
            for (int h = 0; h < heads_; ++h) {
                auto& kv = keys_[static_cast<size_t>(h)];
                auto& vv = values_[static_cast<size_t>(h)];
                kv.erase(kv.begin(), kv.begin() + static_cast<std::ptrdiff_t>(drop));
                vv.erase(vv.begin(), vv.begin() + static_cast<std::ptrdiff_t>(drop));
            }
            frames_held_ = *window_;
        }
        peak_frames_held_ = std::max(peak_frames_held_, frames_held_);
    }

    // Starts a new sequence; the window setting survives.
    void reset() {
        for (auto& k : keys_) k.clear();
        for (auto& v : values_) v.clear();
        frames_cached_ = 0;
        frames_held_ = 0;
    }

private:
    int heads_ = 0;
    int head_dim_ = 0;
    int tokens_per_frame_ = 1;
    std::optional<int> window_;
    int frames_cached_ = 0;
    int frames_held_ = 0;
    int peak_frames_held_ = 0;
    std::vector<std::vector<T>> keys_;
    std::vector<std::vector<T>> values_;
};

using KVCache = KVCacheT<float>;

// Saved intermediates for the training backward pass.
template <class T>
struct AttentionTraceT {
    TensorT<T> q, k, v;                 // [rows x dim] after projection
    std::vector<TensorT<T>> probs;      // per head [q_rows x k_rows]
    TensorT<T> concat;                  // [q_rows x dim] before the output projection
    TensorT<T> k_context, v_context;    // [k_rows x dim]; equals q/k.v rows unless cached
};

namespace detail {

template <class T>
TensorT<T> project(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b) {
    TensorT<T> y = matmul(x, w);
    const int64_t rows = y.dim(0), d = y.dim(1);
    for (int64_t r = 0; r < rows; ++r)
        for (int64_t j = 0; j < d; ++j) y[r * d + j] += b[j];
    return y;
}

// Multi-head attention of q rows against k/v rows under a {0,1} mask.
template <class T>
TensorT<T> heads_attend(const TensorT<T>& q, const TensorT<T>& k, const TensorT<T>& v,
                        const MaskTensor& mask, int heads, AttentionTraceT<T>* trace) {
    const int64_t qr = q.dim(0), kr = k.dim(0), d = q.dim(1);
    const int64_t hd = d / heads;
    const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(hd));
    TensorT<T> concat({qr, d});
    if (trace) trace->probs.clear();
    for (int h = 0; h < heads; ++h) {
        const int64_t off = h * hd;
        TensorT<T> scores({qr, kr});
        for (int64_t i = 0; i < qr; ++i) {
            const T* qi = q.data() + i * d + off;
            for (int64_t j = 0; j < kr; ++j) {
                const T* kj = k.data() + j * d + off;
                T dot = T(0);
                for (int64_t c = 0; c < hd; ++c) dot += qi[c] * kj[c];
                scores[i * kr + j] = dot * inv_sqrt;
            }
        }
        TensorT<T> probs = masked_softmax(scores, mask);
        for (int64_t i = 0; i < qr; ++i) {
            T* out = concat.data() + i * d + off;
            const T* pr = probs.data() + i * kr;
            for (int64_t j = 0; j < kr; ++j) {
                const T p = pr[j];
                const T* vj = v.data() + j * d + off;
                for (int64_t c = 0; c < hd; ++c) out[c] += p * vj[c];
            }
        }
        if (trace) trace->probs.push_back(std::move(probs));
    }
    return concat;
}

}  // namespace detail

// Full-pass multi-head attention under a token-level mask.
template <class T>
TensorT<T> attend_full(const TensorT<T>& x, const AttentionWeightsT<T>& w,
                       const MaskTensor& mask, AttentionTraceT<T>* trace = nullptr) {
    if (x.rank() != 2 || x.dim(1) != w.dim)
        throw ShapeError("attend_full: input width does not match weights");
    if (mask.rank() != 2 || mask.dim(0) != x.dim(0) || mask.dim(1) != x.dim(0))
        throw ShapeError("attend_full: mask must be [tokens x tokens]");
    TensorT<T> q = detail::project(x, w.wq, w.bq);
    TensorT<T> k = detail::project(x, w.wk, w.bk);
    TensorT<T> v = detail::project(x, w.wv, w.bv);
    TensorT<T> concat = detail::heads_attend(q, k, v, mask, w.heads, trace);
    TensorT<T> y = detail::project(concat, w.wo, w.bo);
    if (trace) {
        trace->k_context = k;
        trace->v_context = v;
        trace->q = std::move(q);
        trace->k = std::move(k);
        trace->v = std::move(v);
        trace->concat = std::move(concat);
    }
    return y;
}

// Processes the next contiguous chunk against the cache: queries attend to
// the cached history plus the new chunk itself (Eq. 3 restricted to the new
// rows), then the chunk's keys/values are appended. `start_frame` is the
// global index of the chunk's first frame and guards against out-of-order
// submission.
template <class T>
TensorT<T> attend_streaming(const TensorT<T>& x_new, const AttentionWeightsT<T>& w,
                            KVCacheT<T>& cache, int start_frame, int n_new_frames,
                            AttentionTraceT<T>* trace = nullptr) {
    if (x_new.rank() != 2 || x_new.dim(1) != w.dim)
        throw ShapeError("attend_streaming: input width does not match weights");
    if (cache.heads() != w.heads || cache.head_dim() != w.dim / w.heads)
        throw ShapeError("attend_streaming: cache geometry does not match weights");
    if (start_frame != cache.frames_cached())
        throw SequenceError("attend_streaming: chunk starts at frame " +
                            std::to_string(start_frame) + " but cache holds " +
                            std::to_string(cache.frames_cached()));
    const int tpf = cache.tokens_per_frame();
    const int64_t new_rows = static_cast<int64_t>(n_new_frames) * tpf;
    if (x_new.dim(0) != new_rows)
        throw ShapeError("attend_streaming: token count does not match frame count");

    TensorT<T> q = detail::project(x_new, w.wq, w.bq);
    TensorT<T> k_new = detail::project(x_new, w.wk, w.bk);
    TensorT<T> v_new = detail::project(x_new, w.wv, w.bv);

    const int64_t past_rows = cache.tokens_held();
    const int64_t ctx_rows = past_rows + new_rows;
    const int64_t d = w.dim;
    const int64_t hd = d / w.heads;

    // Assemble the attention context: cached rows first, then the new chunk.
    TensorT<T> k_ctx({ctx_rows, d});
    TensorT<T> v_ctx({ctx_rows, d});
    for (int h = 0; h < w.heads; ++h) {
        const int64_t off = h * hd;
        const std::vector<T>& ck = cache.keys(h);
        const std::vector<T>& cv = cache.values(h);
        for (int64_t r = 0; r < past_rows; ++r)
            for (int64_t c = 0; c < hd; ++c) {
                k_ctx[r * d + off + c] = ck[static_cast<size_t>(r * hd + c)];
                v_ctx[r * d + off + c] = cv[static_cast<size_t>(r * hd + c)];
            }
        for (int64_t r = 0; r < new_rows; ++r)
            for (int64_t c = 0; c < hd; ++c) {
                k_ctx[(past_rows + r) * d + off + c] = k_new[r * d + off + c];
                v_ctx[(past_rows + r) * d + off + c] = v_new[r * d + off + c];
            }
    }

    MaskTensor ones({new_rows, ctx_rows});
    ones.fill(1);
    TensorT<T> concat = detail::heads_attend(q, k_ctx, v_ctx, ones, w.heads, trace);
    TensorT<T> y = detail::project(concat, w.wo, w.bo);

    std::vector<TensorT<T>> ks, vs;
    ks.reserve(static_cast<size_t>(w.heads));
    vs.reserve(static_cast<size_t>(w.heads));
    for (int h = 0; h < w.heads; ++h) {
        const int64_t off = h * hd;
        TensorT<T> kh({new_rows, hd}), vh({new_rows, hd});
        for (int64_t r = 0; r < new_rows; ++r)
            for (int64_t c = 0; c < hd; ++c) {
                kh[r * hd + c] = k_new[r * d + off + c];
                vh[r * hd + c] = v_new[r * d + off + c];
            }
        ks.push_back(std::move(kh));
        vs.push_back(std::move(vh));
    }
    cache.append(ks, vs, n_new_frames);

    if (trace) {
        trace->q = std::move(q);
        trace->k = std::move(k_new);
        trace->v = std::move(v_new);
        trace->k_context = std::move(k_ctx);
        trace->v_context = std::move(v_ctx);
        trace->concat = std::move(concat);
    }
    return y;
}

// Inference modes of the unified driver. All three are the same computation
// under different chunk partitions.
enum class Mode { offline, streaming, chunked };

struct ModeSpec {
    Mode mode = Mode::offline;
    int chunk = 1;  // used by Mode::chunked

    static ModeSpec offline() { return {Mode::offline, 0}; }
    static ModeSpec streaming() { return {Mode::streaming, 0}; }
    static ModeSpec chunked(int c) { return {Mode::chunked, c}; }
};

ChunkPartition partition_for(const ModeSpec& mode, int n_frames);

struct RunStats {
    int peak_cache_frames = 0;
};

// Applies a residual attention stack (x += attend(x) per layer) over the
// token sequence. Offline materializes the partition mask in one pass;
// streaming/chunked process chunks through a per-layer KV cache.
Tensor run_mode(const std::vector<AttentionWeights>& layers, const Tensor& tokens,
                int n_frames, int tokens_per_frame, const ModeSpec& mode,
                std::optional<int> window = {}, RunStats* stats = nullptr);

// Same stack under an explicit partition, single masked pass. The oracle
// route for mode-equivalence checks.
Tensor run_partition_full(const std::vector<AttentionWeights>& layers, const Tensor& tokens,
                          const ChunkPartition& partition, int tokens_per_frame);

}  // namespace vigeo::attn
