#include "vigeo/chunk_attention.hpp"

namespace vigeo::attn {

ChunkPartition::ChunkPartition(std::vector<int> l) : lengths(std::move(l)) {
    if (lengths.empty()) throw ShapeError("chunk partition must have at least one chunk");
    for (int len : lengths)
        if (len < 1) throw ShapeError("chunk lengths must be >= 1");
}

int ChunkPartition::frames() const {
    int n = 0;
    for (int len : lengths) n += len;
    return n;
}

int ChunkPartition::chunk_of(int frame) const {
    int acc = 0;
    for (size_t l = 0; l < lengths.size(); ++l) {
        acc += lengths[l];
        if (frame < acc) return static_cast<int>(l);
    }
    throw ShapeError("frame index " + std::to_string(frame) + " outside partition");
}

int ChunkPartition::chunk_start(int chunk) const {
    int acc = 0;
    for (int l = 0; l < chunk; ++l) acc += lengths[static_cast<size_t>(l)];
    return acc;
}

ChunkPartition ChunkPartition::offline(int n_frames) {
    return ChunkPartition({n_frames});
}

ChunkPartition ChunkPartition::streaming(int n_frames) {
    if (n_frames < 1) throw ShapeError("partition needs >= 1 frame");
    return ChunkPartition(std::vector<int>(static_cast<size_t>(n_frames), 1));
}

ChunkPartition ChunkPartition::chunked(int n_frames, int chunk_size) {
    if (n_frames < 1) throw ShapeError("partition needs >= 1 frame");
    if (chunk_size < 1) throw ShapeError("chunk size must be >= 1");
    std::vector<int> lengths;
    for (int start = 0; start < n_frames; start += chunk_size)
        lengths.push_back(std::min(chunk_size, n_frames - start));
    return ChunkPartition(std::move(lengths));
}

MaskTensor build_mask(const ChunkPartition& partition) {
    const int n = partition.frames();
    std::vector<int> ch(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) ch[static_cast<size_t>(i)] = partition.chunk_of(i);
    MaskTensor mask({n, n});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            mask[static_cast<int64_t>(i) * n + j] =
                ch[static_cast<size_t>(j)] <= ch[static_cast<size_t>(i)] ? 1 : 0;
    return mask;
}

MaskTensor expand_mask(const MaskTensor& frame_mask, int tokens_per_frame) {
    if (frame_mask.rank() != 2 || frame_mask.dim(0) != frame_mask.dim(1))
        throw ShapeError("expand_mask: frame mask must be square");
    if (tokens_per_frame < 1) throw ShapeError("expand_mask: tokens_per_frame must be >= 1");
    const int64_t n = frame_mask.dim(0);
    const int64_t t = tokens_per_frame;
    const int64_t nt = n * t;
    MaskTensor out({nt, nt});
    for (int64_t p = 0; p < nt; ++p) {
        const int64_t fi = p / t;
        for (int64_t q = 0; q < nt; ++q)
            out[p * nt + q] = frame_mask[fi * n + q / t];
    }
    return out;
}

ChunkPartition partition_for(const ModeSpec& mode, int n_frames) {
    switch (mode.mode) {
        case Mode::offline: return ChunkPartition::offline(n_frames);
        case Mode::streaming: return ChunkPartition::streaming(n_frames);
        case Mode::chunked: return ChunkPartition::chunked(n_frames, mode.chunk);
    }
    throw ShapeError("unknown inference mode");
}

Tensor run_partition_full(const std::vector<AttentionWeights>& layers, const Tensor& tokens,
                          const ChunkPartition& partition, int tokens_per_frame) {
    if (tokens.rank() != 2) throw ShapeError("run_partition_full: tokens must be rank 2");
    const MaskTensor mask = expand_mask(build_mask(partition), tokens_per_frame);
    if (mask.dim(0) != tokens.dim(0))
        throw ShapeError("run_partition_full: partition does not cover the token count");
    Tensor x = tokens;
    for (const AttentionWeights& w : layers) {
        Tensor y = attend_full(x, w, mask);
        add_inplace(x, y);
    }
    return x;
}

Tensor run_mode(const std::vector<AttentionWeights>& layers, const Tensor& tokens,
                int n_frames, int tokens_per_frame, const ModeSpec& mode,
                std::optional<int> window, RunStats* stats) {
    if (n_frames < 1) throw ShapeError("run_mode: needs at least one frame");
    if (tokens.rank() != 2 ||
        tokens.dim(0) != static_cast<int64_t>(n_frames) * tokens_per_frame)
        throw ShapeError("run_mode: token count does not match frames");
    const ChunkPartition partition = partition_for(mode, n_frames);

    if (mode.mode == Mode::offline) {
        if (stats) stats->peak_cache_frames = 0;
        return run_partition_full(layers, tokens, partition, tokens_per_frame);
    }

    const int d = layers.empty() ? static_cast<int>(tokens.dim(1)) : layers[0].dim;
    const int heads = layers.empty() ? 1 : layers[0].heads;
    std::vector<KVCache> caches;
    caches.reserve(layers.size());
    for (size_t l = 0; l < layers.size(); ++l)
        caches.emplace_back(heads, d / heads, tokens_per_frame, window);

    Tensor out({tokens.dim(0), tokens.dim(1)});
    int start = 0;
    for (int c = 0; c < partition.chunks(); ++c) {
        const int len = partition.lengths[static_cast<size_t>(c)];
        const int64_t row0 = static_cast<int64_t>(start) * tokens_per_frame;
        const int64_t rows = static_cast<int64_t>(len) * tokens_per_frame;
        Tensor x({rows, tokens.dim(1)});
        std::copy(tokens.data() + row0 * tokens.dim(1),
                  tokens.data() + (row0 + rows) * tokens.dim(1), x.data());
        for (size_t l = 0; l < layers.size(); ++l) {
            Tensor y = attend_streaming(x, layers[l], caches[l], start, len);
            add_inplace(x, y);
        }
        std::copy(x.data(), x.data() + x.numel(), out.data() + row0 * tokens.dim(1));
        start += len;
    }
    if (stats) {
        int peak = 0;
        for (const KVCache& c : caches) peak = std::max(peak, c.peak_frames_held());
        stats->peak_cache_frames = peak;
    }
    return out;
}

}  // namespace vigeo::attn
