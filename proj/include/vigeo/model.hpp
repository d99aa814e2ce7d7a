#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "vigeo/chunk_attention.hpp"
#include "vigeo/io.hpp"
#include "vigeo/tensor.hpp"

namespace vigeo::model {

struct ModelConfig {
    int patch_size = 8;
    int dim = 64;
    int heads = 4;
    int backbone_layers = 6;
    double chunk_ratio = 1.0 / 3.0;  // fraction of backbone layers with chunking attention
    int decoder_layers = 2;
    int max_frames = 64;   // learned frame-index embedding capacity (clamped beyond)
    int max_grid = 16;     // learned spatial embedding capacity, patches per side
    int head_channels = 8; // feature channels entering the convolutional heads
    int mlp_ratio = 4;
    uint64_t seed = 0;

    int chunked_layer_count() const;
    void validate() const;

    io::KeyValues to_key_values() const;
    static ModelConfig from_key_values(const io::KeyValues& kv);
};

// Evenly spaced placement: the i-th of `count` chunked layers sits at depth
// floor((i+1) * n_layers / count) - 1 (0-indexed).
std::vector<int> chunked_layer_depths(int n_layers, int count);

template <class T>
struct GeometryOutputT {
    TensorT<T> points;   // [N x 3 x H x W]; z strictly positive
    TensorT<T> depth;    // [N x H x W]; always the z channel of points
    TensorT<T> normals;  // [N x 3 x H x W]; unit norm
};

using GeometryOutput = GeometryOutputT<float>;

template <class T>
struct LinearT {
    TensorT<T> w;  // [in x out]
    TensorT<T> b;  // [out]
};

template <class T>
struct Conv3x3T {
    TensorT<T> w;  // [out_c x in_c x 3 x 3], zero-padded stride-1
    TensorT<T> b;  // [out_c]
};

template <class T>
struct BlockT {
    TensorT<T> ln1_g, ln1_b, ln2_g, ln2_b;
    attn::AttentionWeightsT<T> att;
    LinearT<T> fc1, fc2;
    bool temporal = false;  // chunking attention across frames vs intra-frame
};

// ---------------------------------------------------------------------------
// Saved forward intermediates for the training backward pass.
// ---------------------------------------------------------------------------

template <class T>
struct LnTrace {
    TensorT<T> x;                // input
    std::vector<T> inv_std;      // per row
    TensorT<T> xhat;             // normalized pre-affine
};

template <class T>
struct BlockTrace {
    TensorT<T> x_in;
    LnTrace<T> ln1;
    std::vector<attn::AttentionTraceT<T>> att;  // one per frame (intra) or one (temporal)
    TensorT<T> ln1_out;
    TensorT<T> x_mid;            // after the attention residual
    LnTrace<T> ln2;
    TensorT<T> ln2_out;
    TensorT<T> fc1_out;          // pre-activation
    TensorT<T> act_out;
};

template <class T>
struct ConvHeadTrace {
    TensorT<T> input;            // [N x C x H x W]
    TensorT<T> conv1_out;        // pre-activation
    TensorT<T> act_out;
    TensorT<T> raw;              // head output before the output activation
};

template <class T>
struct ForwardTrace {
    int n = 0, height = 0, width = 0;
    attn::ChunkPartition partition;
    MaskTensor temporal_mask;    // token-level, shared by the temporal blocks
    TensorT<T> patch_vectors;    // [N*T x 3p^2] (plus prior branch columns for the teacher)
    TensorT<T> tokens0;
    std::vector<BlockTrace<T>> blocks;
    TensorT<T> trunk_out;        // tokens after the last block
    TensorT<T> unpatch_out;      // [N*T x head_channels*p^2]
    ConvHeadTrace<T> point_head;
    ConvHeadTrace<T> normal_head;
    TensorT<T> prior_vectors;    // teacher only: [N*T x p^2]
    std::vector<T> normal_norms; // |v| per pixel before normalization
};

// ---------------------------------------------------------------------------
// The toy video geometry network: per-frame patch embedding, alternating
// intra-frame and dynamic-chunking attention, a small intra-frame decoder,
// and convolutional heads for point map and normals (depth is read off the
// point map's z channel).
// ---------------------------------------------------------------------------
template <class T>
class ToyModelT {
public:
    ToyModelT() = default;

    static ToyModelT init(const ModelConfig& cfg);

    const ModelConfig& config() const { return cfg_; }

    GeometryOutputT<T> forward(const TensorT<T>& frames,
                               const attn::ChunkPartition& partition) const;

    struct StreamState {
        std::vector<attn::KVCacheT<T>> caches;  // one per temporal block
        int frames_seen = 0;
        int height = 0, width = 0;
        int peak_cache_frames() const {
            int p = 0;
            for (const auto& c : caches) p = std::max(p, c.peak_frames_held());
            return p;
        }
    };

    StreamState make_stream_state(int height, int width,
                                  std::optional<int> window = {}) const;

    // Runs the next contiguous packet of frames; past outputs never change.
    GeometryOutputT<T> forward_streaming(const TensorT<T>& packet, StreamState& state) const;

    GeometryOutputT<T> forward_train(const TensorT<T>& frames,
                                     const attn::ChunkPartition& partition,
                                     ForwardTrace<T>& trace) const;

    // Gradients w.r.t. every parameter, aligned with params(). d_points and
    // d_normals are gradients w.r.t. the final (activated) outputs.
    std::vector<TensorT<T>> backward(const ForwardTrace<T>& trace, const TensorT<T>& d_points,
                                     const TensorT<T>& d_normals) const;

    std::vector<std::pair<std::string, TensorT<T>*>> params();
    std::vector<std::pair<std::string, const TensorT<T>*>> params() const;

    void save(const std::string& dir) const;
    static ToyModelT load(const std::string& dir);

private:
    GeometryOutputT<T> forward_impl(const TensorT<T>& frames,
                                    const attn::ChunkPartition& partition,
                                    ForwardTrace<T>* trace) const;

    ModelConfig cfg_;
    LinearT<T> patch_embed_;
    TensorT<T> pos_row_, pos_col_;  // [max_grid x dim]
    TensorT<T> frame_emb_;          // [max_frames x dim]
    std::vector<BlockT<T>> blocks_; // backbone then decoder
    LinearT<T> unpatch_;            // [dim x head_channels*p^2]
    Conv3x3T<T> point_conv1_, point_conv2_;
    Conv3x3T<T> normal_conv1_, normal_conv2_;
};

using ToyModel = ToyModelT<float>;

// ---------------------------------------------------------------------------
// Video depth completion teacher: the same trunk with an extra patch
// embedding branch for the normalized log prior, and a single-channel head
// that predicts depth in log ratio units (exp gives depth / m).
// ---------------------------------------------------------------------------
template <class T>
class CompletionNetT {
public:
    CompletionNetT() = default;

    static CompletionNetT init(const ModelConfig& cfg);

    const ModelConfig& config() const { return cfg_; }

    // rgb [N x 3 x H x W], log_prior [N x H x W] -> log depth ratio [N x H x W]
    TensorT<T> forward(const TensorT<T>& rgb, const TensorT<T>& log_prior,
                       const attn::ChunkPartition& partition) const;

    TensorT<T> forward_train(const TensorT<T>& rgb, const TensorT<T>& log_prior,
                             const attn::ChunkPartition& partition,
                             ForwardTrace<T>& trace) const;

    std::vector<TensorT<T>> backward(const ForwardTrace<T>& trace,
                                     const TensorT<T>& d_out) const;

    std::vector<std::pair<std::string, TensorT<T>*>> params();
    std::vector<std::pair<std::string, const TensorT<T>*>> params() const;

    void save(const std::string& dir) const;
    static CompletionNetT load(const std::string& dir);

private:
    ModelConfig cfg_;
    LinearT<T> patch_embed_;        // [3p^2 x dim]
    LinearT<T> prior_embed_;        // [p^2 x dim]
    TensorT<T> pos_row_, pos_col_, frame_emb_;
    std::vector<BlockT<T>> blocks_;
    LinearT<T> unpatch_;
    Conv3x3T<T> out_conv1_, out_conv2_;
};

using CompletionNet = CompletionNetT<float>;

}  // namespace vigeo::model
