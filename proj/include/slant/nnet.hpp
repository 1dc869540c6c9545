#pragma once
// Small 3D convolutional segmentation network with hand-written forward and
// backward passes, soft-Dice loss and Adam. Everything is templated on the
// scalar type: float for training, double for gradient verification.
//
// Layout: activations are C x D x H x W (W fastest, matching the flat voxel
// order of Volume3D), kernels are Cout x Cin x k x k x k.

#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "common.hpp"
#include "volio.hpp"

namespace slant {

template <class T>
struct Tensor {
    std::vector<int> shape;
    std::vector<T> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s, T fill = T(0)) : shape(std::move(s)) {
        for (int d : shape) require(d >= 1, "tensor dimensions must be positive");
        data.assign(element_count(shape), fill);
    }

    static std::size_t element_count(const std::vector<int>& s) {
        std::size_t n = 1;
        for (int d : s) n *= static_cast<std::size_t>(d);
        return n;
    }

    std::size_t size() const { return data.size(); }
    int dim(std::size_t i) const { return shape.at(i); }
    T& operator[](std::size_t i) { return data[i]; }
    const T& operator[](std::size_t i) const { return data[i]; }

    void fill(T v) { std::fill(data.begin(), data.end(), v); }

    bool all_finite() const {
        for (const T& v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    template <class U>
    Tensor<U> cast() const {
        Tensor<U> out;
        out.shape = shape;
        out.data.assign(data.begin(), data.end());
        return out;
    }
};

inline std::string shape_string(const std::vector<int>& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
    return out + "]";
}

// ---------------------------------------------------------------------------
// Convolution

namespace detail {

struct ConvGeometry {
    int cin, cout, k, pad, depth, height, width;
    std::size_t plane() const { return static_cast<std::size_t>(depth) * height * width; }
};

template <class T>
ConvGeometry conv_geometry(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& bias, int padding) {
    if (input.shape.size() != 4) fail(ErrorKind::invalid_argument, "conv input must be C x D x H x W, got " + shape_string(input.shape));
    if (weights.shape.size() != 5) fail(ErrorKind::invalid_argument, "conv weights must be 5-D, got " + shape_string(weights.shape));
    ConvGeometry g{weights.dim(1), weights.dim(0), weights.dim(2), padding, input.dim(1), input.dim(2), input.dim(3)};
    if (input.dim(0) != g.cin)
        fail(ErrorKind::invalid_argument, "conv expects " + std::to_string(g.cin) + " input channels, got " + std::to_string(input.dim(0)));
    if (weights.dim(3) != g.k || weights.dim(4) != g.k || g.k % 2 == 0)
        fail(ErrorKind::invalid_argument, "conv kernels must be cubic with odd extent");
    if (padding != g.k / 2) fail(ErrorKind::invalid_argument, "only same-size convolution (padding = k/2) is supported");
    if (bias.shape.size() != 1 || bias.dim(0) != g.cout)
        fail(ErrorKind::invalid_argument, "bias must have one entry per output channel");
    return g;
}

// Convolutions run on zero-padded copies laid out flat, so every kernel tap
// becomes one constant index offset and the inner loops span the whole
// volume. Outputs at padding positions are computed and then discarded.
struct PaddedLayout {
    int pad, pd, ph, pw;
    std::size_t size;
    std::size_t begin, end;  // flat range holding every interior position

    explicit PaddedLayout(const ConvGeometry& g)
        : pad(g.pad), pd(g.depth + 2 * g.pad), ph(g.height + 2 * g.pad), pw(g.width + 2 * g.pad) {
        size = static_cast<std::size_t>(pd) * ph * pw;
        begin = index(0, 0, 0);
        end = index(g.depth - 1, g.height - 1, g.width - 1) + 1;
    }
    std::size_t index(int z, int y, int x) const {
        return (static_cast<std::size_t>(z + pad) * ph + (y + pad)) * pw + (x + pad);
    }
    std::ptrdiff_t offset(int dz, int dy, int dx) const {
        return (static_cast<std::ptrdiff_t>(dz) * ph + dy) * pw + dx;
    }
};

template <class T>
std::vector<T> pad_channels(const T* src, int channels, const ConvGeometry& g, const PaddedLayout& L) {
    std::vector<T> out(static_cast<std::size_t>(channels) * L.size, T(0));
    for (int c = 0; c < channels; ++c) {
        const T* s = src + c * g.plane();
        T* d = out.data() + c * L.size;
        for (int z = 0; z < g.depth; ++z)
            for (int y = 0; y < g.height; ++y)
                std::copy_n(s + (static_cast<std::size_t>(z) * g.height + y) * g.width, g.width, d + L.index(z, y, 0));
    }
    return out;
}

template <class T>
void unpad_channels(const T* src, int channels, const ConvGeometry& g, const PaddedLayout& L, T* dst) {
    for (int c = 0; c < channels; ++c) {
        const T* s = src + c * L.size;
        T* d = dst + c * g.plane();
        for (int z = 0; z < g.depth; ++z)
            for (int y = 0; y < g.height; ++y)
                std::copy_n(s + L.index(z, y, 0), g.width, d + (static_cast<std::size_t>(z) * g.height + y) * g.width);
    }
}

/// sum_j a[j] * b[j] with sixteen independent partial sums (fixed order),
/// written so the compiler can keep them in vector registers.
template <class T>
T dot(const T* __restrict a, const T* __restrict b, std::size_t n) {
    constexpr std::size_t W = 16;
    T acc[W] = {};
    const std::size_t blocks = n / W;
    for (std::size_t j = 0; j < blocks; ++j)
#pragma GCC unroll 16
        for (std::size_t l = 0; l < W; ++l) acc[l] += a[j * W + l] * b[j * W + l];
    T tail = T(0);
    for (std::size_t j = blocks * W; j < n; ++j) tail += a[j] * b[j];
    for (std::size_t w = W / 2; w > 0; w /= 2)
        for (std::size_t l = 0; l < w; ++l) acc[l] += acc[l + w];
    return acc[0] + tail;
}

}  // namespace detail

/// Stride-1 cross-correlation with zero padding; output keeps the input's
/// spatial size.
template <class T>
Tensor<T> conv3d_forward(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& bias, int padding = 1) {
    const auto g = detail::conv_geometry(input, weights, bias, padding);
    const detail::PaddedLayout L(g);
    const auto in = detail::pad_channels(input.data.data(), g.cin, g, L);
    std::vector<T> acc(static_cast<std::size_t>(g.cout) * L.size, T(0));
    const int kk = g.k * g.k * g.k;
    const std::size_t n = L.end - L.begin;

    for (int co = 0; co < g.cout; ++co) {
        T* __restrict o = acc.data() + co * L.size + L.begin;
        for (int ci = 0; ci < g.cin; ++ci) {
            const T* base = in.data() + ci * L.size + L.begin;
            const T* w = weights.data.data() + (static_cast<std::size_t>(co) * g.cin + ci) * kk;
            for (int kz = 0; kz < g.k; ++kz)
                for (int ky = 0; ky < g.k; ++ky) {
                    const T* wr = w + (kz * g.k + ky) * g.k;
                    const T* row = base + L.offset(kz - g.pad, ky - g.pad, -g.pad);
                    if (g.k == 3) {
                        const T w0 = wr[0], w1 = wr[1], w2 = wr[2];
                        for (std::size_t j = 0; j < n; ++j) o[j] += w0 * row[j] + w1 * row[j + 1] + w2 * row[j + 2];
                    } else {
                        for (int kx = 0; kx < g.k; ++kx) {
                            const T wv = wr[kx];
                            const T* r = row + kx;
                            for (std::size_t j = 0; j < n; ++j) o[j] += wv * r[j];
                        }
                    }
                }
        }
    }
    Tensor<T> out({g.cout, g.depth, g.height, g.width});
    detail::unpad_channels(acc.data(), g.cout, g, L, out.data.data());
    const std::size_t plane = g.plane();
    for (int co = 0; co < g.cout; ++co) {
        T* o = out.data.data() + co * plane;
        const T b = bias[static_cast<std::size_t>(co)];
        for (std::size_t i = 0; i < plane; ++i) o[i] += b;
    }
    return out;
}

template <class T>
struct ConvGrads {
    Tensor<T> input;  // empty when not requested
    Tensor<T> weights;
    Tensor<T> bias;
};

template <class T>
ConvGrads<T> conv3d_backward(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& grad_output,
                             bool want_input_grad = true, int padding = 1) {
    Tensor<T> bias_shape({weights.dim(0)});
    const auto g = detail::conv_geometry(input, weights, bias_shape, padding);
    if (grad_output.shape != std::vector<int>{g.cout, g.depth, g.height, g.width})
        fail(ErrorKind::invalid_argument, "grad_output shape " + shape_string(grad_output.shape) + " does not match conv output");

    const detail::PaddedLayout L(g);
    const auto in = detail::pad_channels(input.data.data(), g.cin, g, L);
    const auto go = detail::pad_channels(grad_output.data.data(), g.cout, g, L);  // zero at padding
    std::vector<T> gin(want_input_grad ? static_cast<std::size_t>(g.cin) * L.size : 0, T(0));
    const int kk = g.k * g.k * g.k;
    const std::size_t n = L.end - L.begin;
    const std::size_t plane = g.plane();

    ConvGrads<T> r;
    r.weights = Tensor<T>(weights.shape);
    r.bias = Tensor<T>({g.cout});
    for (int co = 0; co < g.cout; ++co) {
        const T* gop = grad_output.data.data() + co * plane;
        T sum = T(0);
        for (std::size_t i = 0; i < plane; ++i) sum += gop[i];
        r.bias[static_cast<std::size_t>(co)] = sum;
    }

    for (int co = 0; co < g.cout; ++co) {
        const T* gop = go.data() + co * L.size + L.begin;
        for (int ci = 0; ci < g.cin; ++ci) {
            const T* base = in.data() + ci * L.size + L.begin;
            const T* w = weights.data.data() + (static_cast<std::size_t>(co) * g.cin + ci) * kk;
            T* gw = r.weights.data.data() + (static_cast<std::size_t>(co) * g.cin + ci) * kk;
            T* gi = want_input_grad ? gin.data() + ci * L.size + L.begin : nullptr;
            for (int kz = 0; kz < g.k; ++kz)
                for (int ky = 0; ky < g.k; ++ky) {
                    const std::ptrdiff_t off = L.offset(kz - g.pad, ky - g.pad, -g.pad);
                    for (int kx = 0; kx < g.k; ++kx) {
                        const int tap = (kz * g.k + ky) * g.k + kx;
                        gw[tap] = detail::dot(gop, base + off + kx, n);
                    }
                    if (gi) {
                        const T* wr = w + (kz * g.k + ky) * g.k;
                        T* __restrict dst = gi + off;
                        if (g.k == 3) {
                            // gi[j + off + kx] += w[kx] * go[j], regrouped per destination;
                            // go is zero just outside [0, n), so the edges need no special case.
                            const T w0 = wr[0], w1 = wr[1], w2 = wr[2];
                            const auto m = static_cast<std::ptrdiff_t>(n) + 2;
                            for (std::ptrdiff_t i = 0; i < m; ++i) dst[i] += w0 * gop[i] + w1 * gop[i - 1] + w2 * gop[i - 2];
                        } else {
                            for (int kx = 0; kx < g.k; ++kx) {
                                const T wv = wr[kx];
                                T* d = dst + kx;
                                for (std::size_t j = 0; j < n; ++j) d[j] += wv * gop[j];
                            }
                        }
                    }
                }
        }
    }
    if (want_input_grad) {
        r.input = Tensor<T>(input.shape);
        detail::unpad_channels(gin.data(), g.cin, g, L, r.input.data.data());
    }
    return r;
}

// ---------------------------------------------------------------------------
// Softmax and soft-Dice loss

/// Per-voxel softmax over the channel axis (axis 0) with max subtraction.
template <class T>
Tensor<T> softmax_channels(const Tensor<T>& logits) {
    require(!logits.shape.empty() && logits.dim(0) >= 2, "softmax needs at least two channels");
    if (!logits.all_finite()) fail(ErrorKind::numeric, "softmax received non-finite logits");
    const int c = logits.dim(0);
    const std::size_t plane = logits.size() / static_cast<std::size_t>(c);
    Tensor<T> p(logits.shape);
    std::vector<T> mx(plane), denom(plane, T(0));
    for (std::size_t v = 0; v < plane; ++v) mx[v] = logits[v];
    for (int k = 1; k < c; ++k)
        for (std::size_t v = 0; v < plane; ++v) mx[v] = std::max(mx[v], logits[k * plane + v]);
    for (int k = 0; k < c; ++k)
        for (std::size_t v = 0; v < plane; ++v) {
            const T e = std::exp(logits[k * plane + v] - mx[v]);
            p[k * plane + v] = e;
            denom[v] += e;
        }
    for (int k = 0; k < c; ++k)
        for (std::size_t v = 0; v < plane; ++v) p[k * plane + v] /= denom[v];
    return p;
}

/// Gradient w.r.t. logits given the gradient w.r.t. softmax outputs.
template <class T>
Tensor<T> softmax_backward(const Tensor<T>& probs, const Tensor<T>& grad_probs) {
    require(probs.shape == grad_probs.shape, "softmax backward shape mismatch");
    const int c = probs.dim(0);
    const std::size_t plane = probs.size() / static_cast<std::size_t>(c);
    std::vector<T> dot(plane, T(0));
    for (int k = 0; k < c; ++k)
        for (std::size_t v = 0; v < plane; ++v) dot[v] += probs[k * plane + v] * grad_probs[k * plane + v];
    Tensor<T> g(probs.shape);
    for (int k = 0; k < c; ++k)
        for (std::size_t v = 0; v < plane; ++v) g[k * plane + v] = probs[k * plane + v] * (grad_probs[k * plane + v] - dot[v]);
    return g;
}

template <class T>
struct LossResult {
    T loss = T(0);
    Tensor<T> grad;  // d loss / d probs
};

/// loss = 1 - mean_c (2 sum p g + s) / (sum p + sum g + s), the mean running
/// over classes 1..C-1 when `exclude_background`, else over all classes.
template <class T>
LossResult<T> dice_loss(const Tensor<T>& probs, const Tensor<T>& truth_onehot, T smooth = T(1e-5),
                        bool exclude_background = true) {
    if (probs.shape != truth_onehot.shape)
        fail(ErrorKind::invalid_argument, "dice_loss shape mismatch: " + shape_string(probs.shape) + " vs " +
                                              shape_string(truth_onehot.shape));
    const int c = probs.dim(0);
    require(c >= 2, "dice_loss needs at least two classes");
    const std::size_t plane = probs.size() / static_cast<std::size_t>(c);
    const int first = exclude_background ? 1 : 0;
    const T classes = static_cast<T>(c - first);

    LossResult<T> r;
    r.grad = Tensor<T>(probs.shape);
    T dice_sum = T(0);
    for (int k = first; k < c; ++k) {
        const T* p = probs.data.data() + k * plane;
        const T* g = truth_onehot.data.data() + k * plane;
        T inter = T(0), sp = T(0), sg = T(0);
        for (std::size_t v = 0; v < plane; ++v) {
            inter += p[v] * g[v];
            sp += p[v];
            sg += g[v];
        }
        const T num = T(2) * inter + smooth;
        const T den = sp + sg + smooth;
        dice_sum += num / den;
        T* dg = r.grad.data.data() + k * plane;
        const T inv = T(1) / (den * den);
        for (std::size_t v = 0; v < plane; ++v) dg[v] = -(T(2) * g[v] * den - num) * inv / classes;
    }
    r.loss = T(1) - dice_sum / classes;
    return r;
}

/// Mean per-voxel cross-entropy -sum_c g log p. Probabilities are clamped at
/// `floor` inside the log (and its derivative) to keep saturated voxels finite.
template <class T>
LossResult<T> cross_entropy_loss(const Tensor<T>& probs, const Tensor<T>& truth_onehot, T floor = T(1e-7)) {
    if (probs.shape != truth_onehot.shape)
        fail(ErrorKind::invalid_argument, "cross_entropy_loss shape mismatch: " + shape_string(probs.shape) + " vs " +
                                              shape_string(truth_onehot.shape));
    const int c = probs.dim(0);
    require(c >= 2, "cross_entropy_loss needs at least two classes");
    const T voxels = static_cast<T>(probs.size() / static_cast<std::size_t>(c));
    LossResult<T> r;
    r.grad = Tensor<T>(probs.shape);
    for (std::size_t i = 0; i < probs.size(); ++i) {
        const T g = truth_onehot[i];
        if (g == T(0)) continue;
        const T p = std::max(probs[i], floor);
        r.loss -= g * std::log(p);
        r.grad[i] = -g / (p * voxels);
    }
    r.loss /= voxels;
    return r;
}

template <class T>
Tensor<T> one_hot(std::span<const std::int32_t> class_index, int num_classes, const std::vector<int>& spatial) {
    std::vector<int> shape{num_classes};
    shape.insert(shape.end(), spatial.begin(), spatial.end());
    Tensor<T> t(shape);
    const std::size_t plane = class_index.size();
    require(plane * static_cast<std::size_t>(num_classes) == t.size(), "one_hot size mismatch");
    for (std::size_t v = 0; v < plane; ++v) {
        const int k = class_index[v];
        require(k >= 0 && k < num_classes, "class index out of range in one_hot");
        t[static_cast<std::size_t>(k) * plane + v] = T(1);
    }
    return t;
}

// ---------------------------------------------------------------------------
// Network

struct NetworkConfig {
    int in_channels = 1;
    int hidden_channels = 8;
    int hidden_layers = 2;
    int num_classes = 5;
    int kernel = 3;
    bool exclude_background = true;  // from the Dice mean
    double dice_smooth = 1e-5;

    void validate() const {
        require(in_channels == 1, "in_channels must be 1");
        require(hidden_channels >= 1, "hidden_channels must be >= 1");
        require(hidden_layers >= 1, "hidden_layers must be >= 1");
        require(num_classes >= 2, "num_classes must be >= 2");
        require(kernel == 3, "kernel must be 3");
    }

    int layer_count() const { return hidden_layers + 1; }
    bool operator==(const NetworkConfig&) const = default;
};

/// Layers 0..L-2 are 3x3x3 conv + ReLU; the last is the 1x1x1 head.
template <class T>
struct ModelParams {
    std::vector<Tensor<T>> weights;
    std::vector<Tensor<T>> biases;
    std::uint64_t init_seed = 0;

    std::vector<Tensor<T>*> tensors() {
        std::vector<Tensor<T>*> out;
        for (std::size_t l = 0; l < weights.size(); ++l) {
            out.push_back(&weights[l]);
            out.push_back(&biases[l]);
        }
        return out;
    }
    std::vector<const Tensor<T>*> tensors() const {
        std::vector<const Tensor<T>*> out;
        for (std::size_t l = 0; l < weights.size(); ++l) {
            out.push_back(&weights[l]);
            out.push_back(&biases[l]);
        }
        return out;
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (auto* t : tensors()) n += t->size();
        return n;
    }

    template <class U>
    ModelParams<U> cast() const {
        ModelParams<U> out;
        out.init_seed = init_seed;
        for (const auto& w : weights) out.weights.push_back(w.template cast<U>());
        for (const auto& b : biases) out.biases.push_back(b.template cast<U>());
        return out;
    }

    bool operator==(const ModelParams& o) const {
        auto same = [](const std::vector<Tensor<T>>& a, const std::vector<Tensor<T>>& b) {
            if (a.size() != b.size()) return false;
            for (std::size_t i = 0; i < a.size(); ++i)
                if (a[i].shape != b[i].shape || a[i].data != b[i].data) return false;
            return true;
        };
        return same(weights, o.weights) && same(biases, o.biases);
    }
};

inline std::vector<int> layer_weight_shape(const NetworkConfig& c, int layer) {
    const bool head = layer == c.hidden_layers;
    const int cin = layer == 0 ? c.in_channels : c.hidden_channels;
    const int cout = head ? c.num_classes : c.hidden_channels;
    const int k = head ? 1 : c.kernel;
    return {cout, cin, k, k, k};
}

template <class T>
void check_params(const ModelParams<T>& p, const NetworkConfig& c) {
    if (p.weights.size() != static_cast<std::size_t>(c.layer_count()) || p.biases.size() != p.weights.size())
        fail(ErrorKind::invalid_argument, "parameter layer count does not match network config");
    for (int l = 0; l < c.layer_count(); ++l) {
        const auto ws = layer_weight_shape(c, l);
        if (p.weights[static_cast<std::size_t>(l)].shape != ws || p.biases[static_cast<std::size_t>(l)].shape != std::vector<int>{ws[0]})
            fail(ErrorKind::invalid_argument, "parameter shapes of layer " + std::to_string(l) + " do not match network config");
    }
}

/// Weights uniform in +-sqrt(6 / fan_in), biases zero.
template <class T = float>
ModelParams<T> init_params(const NetworkConfig& config, std::uint64_t seed) {
    config.validate();
    ModelParams<T> p;
    p.init_seed = seed;
    Rng rng(seed);
    for (int l = 0; l < config.layer_count(); ++l) {
        const auto ws = layer_weight_shape(config, l);
        const double fan_in = static_cast<double>(ws[1]) * ws[2] * ws[3] * ws[4];
        const double bound = std::sqrt(6.0 / fan_in);
        Tensor<T> w(ws);
        for (auto& v : w.data) v = static_cast<T>(rng.uniform(-bound, bound));
        p.weights.push_back(std::move(w));
        p.biases.push_back(Tensor<T>({ws[0]}));
    }
    return p;
}

inline double init_bound(const NetworkConfig& config, int layer) {
    const auto ws = layer_weight_shape(config, layer);
    return std::sqrt(6.0 / (static_cast<double>(ws[1]) * ws[2] * ws[3] * ws[4]));
}

template <class T>
struct ForwardCache {
    Tensor<T> input;
    std::vector<Tensor<T>> pre;   // pre-activation of each hidden layer
    std::vector<Tensor<T>> post;  // ReLU output of each hidden layer
    Tensor<T> logits;
    Tensor<T> probs;
    std::size_t param_layers = 0;
};

/// Mean 0 / sd 1 over all voxels; a constant volume maps to zeros.
inline std::vector<float> zscore(std::span<const float> values) {
    double sum = 0.0;
    for (float v : values) sum += v;
    const double mean = values.empty() ? 0.0 : sum / static_cast<double>(values.size());
    double ss = 0.0;
    for (float v : values) ss += (v - mean) * (v - mean);
    const double sd = values.empty() ? 0.0 : std::sqrt(ss / static_cast<double>(values.size()));
    std::vector<float> out(values.size());
    for (std::size_t i = 0; i < values.size(); ++i)
        out[i] = sd > 0.0 ? static_cast<float>((values[i] - mean) / sd) : 0.0f;
    return out;
}

template <class T>
Tensor<T> volume_tensor(std::span<const float> values, const Dims3& dims) {
    Tensor<T> t({1, dims[2], dims[1], dims[0]});
    require(values.size() == t.size(), "volume data length does not match dims");
    std::copy(values.begin(), values.end(), t.data.begin());
    return t;
}

/// Conv/ReLU stack, 1x1x1 head, softmax. `input` is 1 x D x H x W and is used
/// as given (callers normalise).
template <class T>
ForwardCache<T> forward_tensor(const Tensor<T>& input, const ModelParams<T>& params, const NetworkConfig& config) {
    check_params(params, config);
    ForwardCache<T> cache;
    cache.input = input;
    cache.param_layers = params.weights.size();
    const Tensor<T>* x = &cache.input;
    for (int l = 0; l < config.hidden_layers; ++l) {
        cache.pre.push_back(conv3d_forward(*x, params.weights[static_cast<std::size_t>(l)], params.biases[static_cast<std::size_t>(l)],
                                           config.kernel / 2));
        Tensor<T> a = cache.pre.back();
        for (auto& v : a.data) v = v > T(0) ? v : T(0);
        cache.post.push_back(std::move(a));
        x = &cache.post.back();
    }
    const auto head = static_cast<std::size_t>(config.hidden_layers);
    cache.logits = conv3d_forward(*x, params.weights[head], params.biases[head], 0);
    cache.probs = softmax_channels(cache.logits);
    return cache;
}

/// Z-scores the volume, then runs the network.
template <class T>
ForwardCache<T> forward(const Volume3D& volume, const ModelParams<T>& params, const NetworkConfig& config) {
    const auto normalized = zscore(volume.data);
    return forward_tensor(volume_tensor<T>(normalized, volume.dims()), params, config);
}

/// Gradients for every parameter, in ModelParams layout.
template <class T>
ModelParams<T> backward(const ForwardCache<T>& cache, const Tensor<T>& grad_probs, const ModelParams<T>& params,
                        const NetworkConfig& config) {
    check_params(params, config);
    if (cache.param_layers != params.weights.size() || cache.pre.size() != static_cast<std::size_t>(config.hidden_layers))
        fail(ErrorKind::invalid_argument, "forward cache does not belong to this network");
    if (grad_probs.shape != cache.probs.shape)
        fail(ErrorKind::invalid_argument, "grad_probs shape " + shape_string(grad_probs.shape) + " does not match cached probs");

    ModelParams<T> grads;
    grads.weights.resize(params.weights.size());
    grads.biases.resize(params.biases.size());

    Tensor<T> g = softmax_backward(cache.probs, grad_probs);
    const auto head = static_cast<std::size_t>(config.hidden_layers);
    const Tensor<T>& head_in = config.hidden_layers > 0 ? cache.post.back() : cache.input;
    auto hg = conv3d_backward(head_in, params.weights[head], g, true, 0);
    grads.weights[head] = std::move(hg.weights);
    grads.biases[head] = std::move(hg.bias);
    g = std::move(hg.input);

    for (int l = config.hidden_layers - 1; l >= 0; --l) {
        const auto li = static_cast<std::size_t>(l);
        const Tensor<T>& z = cache.pre[li];
        for (std::size_t i = 0; i < g.size(); ++i)
            if (!(z[i] > T(0))) g[i] = T(0);
        const Tensor<T>& in = l == 0 ? cache.input : cache.post[li - 1];
        auto cg = conv3d_backward(in, params.weights[li], g, l > 0, config.kernel / 2);
        grads.weights[li] = std::move(cg.weights);
        grads.biases[li] = std::move(cg.bias);
        g = std::move(cg.input);
    }
    return grads;
}

/// Most probable class per voxel (first index wins ties).
template <class T>
std::vector<std::int32_t> argmax_channels(const Tensor<T>& probs) {
    const int c = probs.dim(0);
    const std::size_t plane = probs.size() / static_cast<std::size_t>(c);
    std::vector<std::int32_t> out(plane, 0);
    for (std::size_t v = 0; v < plane; ++v) {
        T best = probs[v];
        for (int k = 1; k < c; ++k)
            if (probs[k * plane + v] > best) {
                best = probs[k * plane + v];
                out[v] = k;
            }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Adam

template <class T>
struct AdamState {
    std::vector<Tensor<T>> m;
    std::vector<Tensor<T>> v;
    std::int64_t t = 0;
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    static AdamState for_params(const ModelParams<T>& p, double lr = 1e-4) {
        AdamState s;
        s.lr = lr;
        for (const auto* t : p.tensors()) {
            s.m.emplace_back(t->shape);
            s.v.emplace_back(t->shape);
        }
        return s;
    }
};

/// One bias-corrected Adam update in place; t is incremented.
template <class T>
void adam_step(ModelParams<T>& params, const ModelParams<T>& grads, AdamState<T>& state) {
    auto ps = params.tensors();
    const auto gs = grads.tensors();
    if (gs.size() != ps.size() || state.m.size() != ps.size() || state.v.size() != ps.size())
        fail(ErrorKind::invalid_argument, "adam_step: parameter, gradient and moment counts differ");
    for (std::size_t i = 0; i < ps.size(); ++i) {
        if (gs[i]->shape != ps[i]->shape || state.m[i].shape != ps[i]->shape || state.v[i].shape != ps[i]->shape)
            fail(ErrorKind::invalid_argument, "adam_step: shape mismatch in tensor " + std::to_string(i));
        if (!gs[i]->all_finite()) fail(ErrorKind::numeric, "adam_step: non-finite gradient in tensor " + std::to_string(i));
    }
    state.t += 1;
    const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
    const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
    const T b1 = static_cast<T>(state.beta1), b2 = static_cast<T>(state.beta2);
    const T step = static_cast<T>(state.lr / c1);
    const T inv_c2 = static_cast<T>(1.0 / c2);
    const T eps = static_cast<T>(state.epsilon);
    for (std::size_t i = 0; i < ps.size(); ++i) {
        T* p = ps[i]->data.data();
        const T* g = gs[i]->data.data();
        T* m = state.m[i].data.data();
        T* v = state.v[i].data.data();
        for (std::size_t j = 0; j < ps[i]->size(); ++j) {
            m[j] = b1 * m[j] + (T(1) - b1) * g[j];
            v[j] = b2 * v[j] + (T(1) - b2) * g[j] * g[j];
            p[j] -= step * m[j] / (std::sqrt(v[j] * inv_c2) + eps);
        }
    }
}

}  // namespace slant
