#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

namespace vigeo {

// Dimension mismatches and bad arguments. Maps to CLI exit code 1.
class ShapeError : public std::invalid_argument {
public:
    explicit ShapeError(const std::string& msg) : std::invalid_argument(msg) {}
};

// A documented precondition was violated (e.g. fully masked softmax row).
class ContractError : public std::runtime_error {
public:
    explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

// Out-of-order chunk submission against a KV cache.
class SequenceError : public std::runtime_error {
public:
    explicit SequenceError(const std::string& msg) : std::runtime_error(msg) {}
};

// Numerical failure: solver non-convergence, non-finite loss.
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed tensor container files.
class FormatError : public std::runtime_error {
public:
    explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

// Global determinism switch. All kernels in this library run sequentially
// with a fixed reduction order, so outputs are bit-stable either way; any
// future parallel path must preserve that order while this is set.
bool deterministic();
void set_deterministic(bool on);

// Dense row-major tensor. float for the main path, double for oracles and
// gradient checks, uint8_t for validity masks.
template <class T>
class TensorT {
public:
    TensorT() = default;

    explicit TensorT(std::vector<int64_t> dims) : dims_(std::move(dims)) {
        int64_t n = 1;
        for (int64_t d : dims_) {
            if (d < 0) throw ShapeError("tensor dims must be non-negative");
            n *= d;
        }
        data_.assign(static_cast<size_t>(n), T(0));
    }

    TensorT(std::vector<int64_t> dims, std::vector<T> values)
        : dims_(std::move(dims)), data_(std::move(values)) {
        int64_t n = 1;
        for (int64_t d : dims_) n *= d;
        if (n != static_cast<int64_t>(data_.size()))
            throw ShapeError("tensor data length does not match dims");
    }

    static TensorT zeros(std::vector<int64_t> dims) { return TensorT(std::move(dims)); }

    static TensorT full(std::vector<int64_t> dims, T value) {
        TensorT t(std::move(dims));
        std::fill(t.data_.begin(), t.data_.end(), value);
        return t;
    }

    const std::vector<int64_t>& dims() const { return dims_; }
    int rank() const { return static_cast<int>(dims_.size()); }
    int64_t dim(int i) const { return dims_.at(static_cast<size_t>(i)); }
    int64_t numel() const { return static_cast<int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::vector<T>& vec() { return data_; }
    const std::vector<T>& vec() const { return data_; }

    T& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    const T& operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

    template <class... Ix>
    T& operator()(Ix... ix) { return data_[static_cast<size_t>(offset(ix...))]; }

    template <class... Ix>
    const T& operator()(Ix... ix) const { return data_[static_cast<size_t>(offset(ix...))]; }

    template <class... Ix>
    int64_t offset(Ix... ix) const {
        const int64_t idx[] = {static_cast<int64_t>(ix)...};
        constexpr int n = sizeof...(Ix);
        if (n != rank()) throw ShapeError("index arity does not match tensor rank");
        int64_t off = 0;
        for (int i = 0; i < n; ++i) off = off * dims_[static_cast<size_t>(i)] + idx[i];
        return off;
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    TensorT reshaped(std::vector<int64_t> new_dims) const {
        TensorT t;
        t.dims_ = std::move(new_dims);
        int64_t n = 1;
        for (int64_t d : t.dims_) n *= d;
        if (n != numel()) throw ShapeError("reshape changes element count");
        t.data_ = data_;
        return t;
    }

    bool all_finite() const {
        if constexpr (std::is_floating_point_v<T>) {
            for (T v : data_)
                if (!std::isfinite(v)) return false;
        }
        return true;
    }

    template <class U>
    TensorT<U> cast() const {
        TensorT<U> out(dims_);
        for (int64_t i = 0; i < numel(); ++i) out[i] = static_cast<U>(data_[static_cast<size_t>(i)]);
        return out;
    }

private:
    std::vector<int64_t> dims_;
    std::vector<T> data_;
};

using Tensor = TensorT<float>;
using TensorD = TensorT<double>;
using MaskTensor = TensorT<uint8_t>;

// ---------------------------------------------------------------------------
// Kernels. All loops have a fixed nest order; repeated calls on identical
// inputs are bit-identical.
// ---------------------------------------------------------------------------

template <class T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
    if (a.rank() != 2 || b.rank() != 2)
        throw ShapeError("matmul expects rank-2 tensors");
    if (a.dim(1) != b.dim(0))
        throw ShapeError("matmul inner dims mismatch: " + std::to_string(a.dim(1)) +
                         " vs " + std::to_string(b.dim(0)));
    const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    TensorT<T> out({m, n});
    const T* pa = a.data();
    const T* pb = b.data();
    T* po = out.data();
    // i-k-j nest; each out[i][j] accumulates in ascending k order.
    for (int64_t i = 0; i < m; ++i) {
        for (int64_t kk = 0; kk < k; ++kk) {
            const T aik = pa[i * k + kk];
            const T* brow = pb + kk * n;
            T* orow = po + i * n;
            for (int64_t j = 0; j < n; ++j) orow[j] += aik * brow[j];
        }
    }
    return out;
}

// Row-wise softmax with a {0,1} mask. Masked entries are exactly zero in the
// output; the max subtraction and the denominator only see unmasked entries,
// so a row computed against a prefix mask is bit-identical to computing the
// softmax over just that prefix.
template <class T>
TensorT<T> masked_softmax(const TensorT<T>& scores, const MaskTensor& mask) {
    if (scores.rank() != 2 || mask.rank() != 2 ||
        scores.dim(0) != mask.dim(0) || scores.dim(1) != mask.dim(1))
        throw ShapeError("masked_softmax: scores/mask shape mismatch");
    const int64_t q = scores.dim(0), k = scores.dim(1);
    TensorT<T> out({q, k});
    for (int64_t i = 0; i < q; ++i) {
        const T* srow = scores.data() + i * k;
        const uint8_t* mrow = mask.data() + i * k;
        T* orow = out.data() + i * k;
        T mx = -std::numeric_limits<T>::infinity();
        bool any = false;
        for (int64_t j = 0; j < k; ++j) {
            if (mrow[j]) {
                any = true;
                if (srow[j] > mx) mx = srow[j];
            }
        }
        if (!any) throw ContractError("masked_softmax: fully masked row " + std::to_string(i));
        T denom = T(0);
        for (int64_t j = 0; j < k; ++j) {
            orow[j] = mrow[j] ? std::exp(srow[j] - mx) : T(0);
            denom += orow[j];
        }
        for (int64_t j = 0; j < k; ++j) orow[j] /= denom;
    }
    return out;
}

// Per-vector normalization over the last dimension, then affine.
template <class T>
TensorT<T> layer_norm(const TensorT<T>& x, const TensorT<T>& gain, const TensorT<T>& bias,
                      T eps = T(1e-5)) {
    if (x.rank() < 1) throw ShapeError("layer_norm: rank must be >= 1");
    const int64_t d = x.dim(x.rank() - 1);
    if (d < 1) throw ShapeError("layer_norm: last dim must be >= 1");
    if (gain.numel() != d || bias.numel() != d)
        throw ShapeError("layer_norm: gain/bias length mismatch");
    const int64_t rows = x.numel() / d;
    TensorT<T> out(x.dims());
    for (int64_t r = 0; r < rows; ++r) {
        const T* xi = x.data() + r * d;
        T* yi = out.data() + r * d;
        T mu = T(0);
        for (int64_t j = 0; j < d; ++j) mu += xi[j];
        mu /= static_cast<T>(d);
        T var = T(0);
        for (int64_t j = 0; j < d; ++j) {
            const T c = xi[j] - mu;
            var += c * c;
        }
        var /= static_cast<T>(d);
        const T inv = T(1) / std::sqrt(var + eps);
        for (int64_t j = 0; j < d; ++j) yi[j] = (xi[j] - mu) * inv * gain[j] + bias[j];
    }
    return out;
}

template <class T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
    if (a.dims() != b.dims()) throw ShapeError("add: shape mismatch");
    TensorT<T> out(a.dims());
    for (int64_t i = 0; i < a.numel(); ++i) out[i] = a[i] + b[i];
    return out;
}

template <class T>
void add_inplace(TensorT<T>& a, const TensorT<T>& b) {
    if (a.dims() != b.dims()) throw ShapeError("add_inplace: shape mismatch");
    for (int64_t i = 0; i < a.numel(); ++i) a[i] += b[i];
}

template <class T>
void scale_inplace(TensorT<T>& a, T s) {
    for (int64_t i = 0; i < a.numel(); ++i) a[i] *= s;
}

template <class T>
double sum(const TensorT<T>& a) {
    double s = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) s += static_cast<double>(a[i]);
    return s;
}

template <class T>
double max_abs_diff(const TensorT<T>& a, const TensorT<T>& b) {
    if (a.dims() != b.dims()) throw ShapeError("max_abs_diff: shape mismatch");
    double m = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i)
        m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
    return m;
}

template <class T>
bool bitwise_equal(const TensorT<T>& a, const TensorT<T>& b) {
    if (a.dims() != b.dims()) return false;
    return std::memcmp(a.data(), b.data(), sizeof(T) * static_cast<size_t>(a.numel())) == 0;
}

// ---------------------------------------------------------------------------
// Deterministic RNG. mt19937_64 is fully specified by the standard; the
// mappings below avoid std::*_distribution, whose output is
// implementation-defined.
// ---------------------------------------------------------------------------
class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    uint64_t next() { return gen_(); }

    // [0, 1)
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller; the pair is computed together so the draw sequence is fixed.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        spare_ = r * std::sin(2.0 * M_PI * u2);
        have_spare_ = true;
        return r * std::cos(2.0 * M_PI * u2);
    }

    // [0, n)
    int64_t randint(int64_t n) {
        return static_cast<int64_t>(gen_() % static_cast<uint64_t>(n));
    }

    template <class T>
    void fill_uniform(TensorT<T>& t, double lo, double hi) {
        for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(uniform(lo, hi));
    }

    template <class T>
    void fill_normal(TensorT<T>& t, double mean, double stddev) {
        for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(mean + stddev * normal());
    }

private:
    std::mt19937_64 gen_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

}  // namespace vigeo
