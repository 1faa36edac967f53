#pragma once

// Small convolutional encoder with a projection head and hand-written
// backward passes. Templated on the scalar so that gradient checks can run a
// double-precision shadow of the float model.
//
// Convolution activations use a channel-major [C, N, H, W] layout so that a
// 3x3 convolution over a whole batch is one GEMM against an im2col matrix
// whose columns are (n, y, x).

#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <string_view>
#include <string>
#include <vector>

#include "batchcur/error.hpp"
#include "batchcur/random.hpp"
#include "batchcur/tensor.hpp"

namespace batchcur {

template <class T>
struct Parameter {
    std::string name;
    std::vector<int> shape;
    AlignedVector<T> value;
    AlignedVector<T> grad;

    Parameter() = default;
    Parameter(std::string n, std::vector<int> s)
        : name(std::move(n)), shape(std::move(s)), value(shape_size(shape), T(0)), grad(value.size(), T(0)) {}

    std::size_t size() const noexcept { return value.size(); }
};

template <class T>
struct Feature {
    int c = 0, n = 0, h = 0, w = 0;
    AlignedVector<T> data;

    Feature() = default;
    Feature(int c_, int n_, int h_, int w_)
        : c(c_), n(n_), h(h_), w(w_), data(static_cast<std::size_t>(c_) * n_ * h_ * w_, T(0)) {}

    std::size_t columns() const noexcept { return static_cast<std::size_t>(n) * h * w; }
};

namespace nn {

template <class T>
void init_uniform(Parameter<T>& p, Rng& rng, double bound) {
    std::uniform_real_distribution<double> d(-bound, bound);
    for (auto& v : p.value) v = static_cast<T>(d(rng));
}

// 3x3 convolution, stride 1, zero padding 1.
template <class T>
class Conv3x3 {
public:
    Conv3x3(std::string name, int in, int out)
        : in_(in), out_(out), weight(name + ".weight", {out, in, 3, 3}), bias(name + ".bias", {out}) {}

    void init(Rng& rng) { init_uniform(weight, rng, std::sqrt(6.0 / (in_ * 9))); }

    Feature<T> forward(const Feature<T>& x) {
        if (x.c != in_) throw ShapeError(weight.name + ": expected " + std::to_string(in_) + " channels, got " +
                                         std::to_string(x.c));
        shape_ = x;
        shape_.data.clear();
        const int K = in_ * 9;
        const Eigen::Index cols = static_cast<Eigen::Index>(x.columns());
        cols_.resize(K, cols);
        const int N = x.n, H = x.h, W = x.w;
        for (int ci = 0; ci < in_; ++ci) {
            for (int ky = 0; ky < 3; ++ky) {
                for (int kx = 0; kx < 3; ++kx) {
                    T* dst = cols_.row((ci * 3 + ky) * 3 + kx).data();
                    for (int n = 0; n < N; ++n) {
                        const T* src = x.data.data() + (static_cast<std::size_t>(ci) * N + n) * H * W;
                        for (int y = 0; y < H; ++y) {
                            T* row = dst + (static_cast<std::size_t>(n) * H + y) * W;
                            const int sy = y + ky - 1;
                            if (sy < 0 || sy >= H) {
                                std::fill(row, row + W, T(0));
                                continue;
                            }
                            for (int xx = 0; xx < W; ++xx) {
                                const int sx = xx + kx - 1;
                                row[xx] = (sx < 0 || sx >= W) ? T(0) : src[sy * W + sx];
                            }
                        }
                    }
                }
            }
        }
        Feature<T> y(out_, N, H, W);
        MatrixMap<T> ym(y.data.data(), out_, cols);
        ConstMatrixMap<T> wm(weight.value.data(), out_, K);
        ym.noalias() = wm * cols_;
        for (int o = 0; o < out_; ++o) ym.row(o).array() += bias.value[o];
        return y;
    }

    Feature<T> backward(const Feature<T>& dy) {
        const int K = in_ * 9;
        const Eigen::Index cols = cols_.cols();
        ConstMatrixMap<T> dym(dy.data.data(), out_, cols);
        MatrixMap<T> dw(weight.grad.data(), out_, K);
        dw.noalias() += dym * cols_.transpose();
        for (int o = 0; o < out_; ++o) bias.grad[o] += dym.row(o).sum();

        ConstMatrixMap<T> wm(weight.value.data(), out_, K);
        Matrix<T> dcols = wm.transpose() * dym;
        const int N = shape_.n, H = shape_.h, W = shape_.w;
        Feature<T> dx(in_, N, H, W);
        for (int ci = 0; ci < in_; ++ci) {
            for (int ky = 0; ky < 3; ++ky) {
                for (int kx = 0; kx < 3; ++kx) {
                    const T* src = dcols.row((ci * 3 + ky) * 3 + kx).data();
                    for (int n = 0; n < N; ++n) {
                        T* dst = dx.data.data() + (static_cast<std::size_t>(ci) * N + n) * H * W;
                        for (int y = 0; y < H; ++y) {
                            const int sy = y + ky - 1;
                            if (sy < 0 || sy >= H) continue;
                            const T* row = src + (static_cast<std::size_t>(n) * H + y) * W;
                            for (int xx = 0; xx < W; ++xx) {
                                const int sx = xx + kx - 1;
                                if (sx >= 0 && sx < W) dst[sy * W + sx] += row[xx];
                            }
                        }
                    }
                }
            }
        }
        return dx;
    }

    int in_channels() const noexcept { return in_; }
    int out_channels() const noexcept { return out_; }

private:
    int in_, out_;
    Feature<T> shape_;
    Matrix<T> cols_;

public:
    Parameter<T> weight;
    Parameter<T> bias;
};

template <class T>
class Relu {
public:
    void forward_inplace(AlignedVector<T>& x) {
        mask_.resize(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) {
            mask_[i] = x[i] > T(0);
            if (!mask_[i]) x[i] = T(0);
        }
    }

    void backward_inplace(AlignedVector<T>& dy) const {
        for (std::size_t i = 0; i < dy.size(); ++i)
            if (!mask_[i]) dy[i] = T(0);
    }

private:
    std::vector<unsigned char> mask_;
};

// 2x2 max pooling with stride 2 (odd trailing rows/columns are dropped).
template <class T>
class MaxPool2 {
public:
    Feature<T> forward(const Feature<T>& x) {
        in_ = x;
        in_.data.clear();
        Feature<T> y(x.c, x.n, x.h / 2, x.w / 2);
        argmax_.assign(y.data.size(), 0);
        std::size_t o = 0;
        for (int cn = 0; cn < x.c * x.n; ++cn) {
            const std::size_t base = static_cast<std::size_t>(cn) * x.h * x.w;
            for (int oy = 0; oy < y.h; ++oy) {
                for (int ox = 0; ox < y.w; ++ox, ++o) {
                    std::size_t best = base + static_cast<std::size_t>(2 * oy) * x.w + 2 * ox;
                    for (int dy = 0; dy < 2; ++dy)
                        for (int dx = 0; dx < 2; ++dx) {
                            const std::size_t idx = base + static_cast<std::size_t>(2 * oy + dy) * x.w + 2 * ox + dx;
                            if (x.data[idx] > x.data[best]) best = idx;
                        }
                    y.data[o] = x.data[best];
                    argmax_[o] = best;
                }
            }
        }
        return y;
    }

    Feature<T> backward(const Feature<T>& dy) const {
        Feature<T> dx(in_.c, in_.n, in_.h, in_.w);
        for (std::size_t o = 0; o < dy.data.size(); ++o) dx.data[argmax_[o]] += dy.data[o];
        return dx;
    }

private:
    Feature<T> in_;
    std::vector<std::size_t> argmax_;
};

// [C, N, H, W] -> N x C spatial means.
template <class T>
class GlobalAvgPool {
public:
    Matrix<T> forward(const Feature<T>& x) {
        in_ = x;
        in_.data.clear();
        Matrix<T> y(x.n, x.c);
        const std::size_t hw = static_cast<std::size_t>(x.h) * x.w;
        for (int c = 0; c < x.c; ++c)
            for (int n = 0; n < x.n; ++n) {
                const T* p = x.data.data() + (static_cast<std::size_t>(c) * x.n + n) * hw;
                T s = T(0);
                for (std::size_t i = 0; i < hw; ++i) s += p[i];
                y(n, c) = s / static_cast<T>(hw);
            }
        return y;
    }

    Feature<T> backward(const Matrix<T>& dy) const {
        Feature<T> dx(in_.c, in_.n, in_.h, in_.w);
        const std::size_t hw = static_cast<std::size_t>(in_.h) * in_.w;
        for (int c = 0; c < in_.c; ++c)
            for (int n = 0; n < in_.n; ++n) {
                const T g = dy(n, c) / static_cast<T>(hw);
                T* p = dx.data.data() + (static_cast<std::size_t>(c) * in_.n + n) * hw;
                std::fill(p, p + hw, g);
            }
        return dx;
    }

private:
    Feature<T> in_;
};

template <class T>
class Linear {
public:
    Linear(std::string name, int in, int out)
        : in_(in), out_(out), weight(name + ".weight", {out, in}), bias(name + ".bias", {out}) {}

    void init(Rng& rng) { init_uniform(weight, rng, std::sqrt(6.0 / in_)); }

    Matrix<T> forward(const Matrix<T>& x) {
        if (x.cols() != in_) throw ShapeError(weight.name + ": expected " + std::to_string(in_) + " inputs");
        x_ = x;
        ConstMatrixMap<T> wm(weight.value.data(), out_, in_);
        Matrix<T> y(x.rows(), out_);
        y.noalias() = x * wm.transpose();
        for (Eigen::Index i = 0; i < y.rows(); ++i)
            for (int o = 0; o < out_; ++o) y(i, o) += bias.value[o];
        return y;
    }

    Matrix<T> backward(const Matrix<T>& dy) {
        MatrixMap<T> dw(weight.grad.data(), out_, in_);
        dw.noalias() += dy.transpose() * x_;
        for (int o = 0; o < out_; ++o) bias.grad[o] += dy.col(o).sum();
        ConstMatrixMap<T> wm(weight.value.data(), out_, in_);
        return dy * wm;
    }

    int in_features() const noexcept { return in_; }
    int out_features() const noexcept { return out_; }

private:
    int in_, out_;
    Matrix<T> x_;

public:
    Parameter<T> weight;
    Parameter<T> bias;
};

}  // namespace nn

struct ModelConfig {
    int in_channels = 3;
    std::vector<int> conv_channels{32, 64, 128};
    int rep_dim = 256;
    int proj_hidden = 256;
    int proj_dim = 128;

    void validate() const {
        if (in_channels < 1) throw ParameterError("in_channels must be >= 1");
        if (conv_channels.empty()) throw ParameterError("conv_channels must not be empty");
        for (int c : conv_channels)
            if (c < 1) throw ParameterError("conv_channels entries must be >= 1");
        if (rep_dim < 1 || proj_hidden < 1 || proj_dim < 1) throw ParameterError("model dimensions must be >= 1");
    }

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Conv blocks (conv3x3 -> ReLU -> maxpool2) -> global average pool ->
// affine to the representation h -> projection head (affine, ReLU, affine)
// producing z.
template <class T>
class EncoderModel {
public:
    struct Output {
        Matrix<T> h;
        Matrix<T> z;
    };

    explicit EncoderModel(ModelConfig cfg = {}, std::uint64_t seed = 0)
        : cfg_(validated(std::move(cfg))),
          rep_("rep", cfg_.conv_channels.back(), cfg_.rep_dim),
          proj1_("proj1", cfg_.rep_dim, cfg_.proj_hidden),
          proj2_("proj2", cfg_.proj_hidden, cfg_.proj_dim) {
        int in = cfg_.in_channels;
        for (std::size_t i = 0; i < cfg_.conv_channels.size(); ++i) {
            convs_.emplace_back("conv" + std::to_string(i), in, cfg_.conv_channels[i]);
            in = cfg_.conv_channels[i];
        }
        relus_.resize(convs_.size());
        pools_.resize(convs_.size());
        Rng rng = make_rng(seed, {0x6d6f64656cULL});
        for (auto& c : convs_) c.init(rng);
        rep_.init(rng);
        proj1_.init(rng);
        proj2_.init(rng);
    }

    const ModelConfig& config() const noexcept { return cfg_; }

    // views: [N, C, H, W].
    Output forward(const Tensor<T>& views) {
        if (views.shape.size() != 4) throw ShapeError("views must be [N, C, H, W], got " + shape_string(views.shape));
        const int N = views.dim(0), C = views.dim(1), H = views.dim(2), W = views.dim(3);
        if (C != cfg_.in_channels) throw ShapeError("views have " + std::to_string(C) + " channels, model expects " +
                                                    std::to_string(cfg_.in_channels));
        if (N < 1) throw ShapeError("empty view batch");
        const std::size_t hw = static_cast<std::size_t>(H) * W;
        Feature<T> x(C, N, H, W);
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c)
                std::copy_n(views.data.data() + (static_cast<std::size_t>(n) * C + c) * hw, hw,
                            x.data.data() + (static_cast<std::size_t>(c) * N + n) * hw);

        pool_applied_.assign(convs_.size(), false);
        for (std::size_t i = 0; i < convs_.size(); ++i) {
            x = convs_[i].forward(x);
            relus_[i].forward_inplace(x.data);
            if (x.h >= 2 && x.w >= 2) {
                x = pools_[i].forward(x);
                pool_applied_[i] = true;
            }
        }
        Output out;
        out.h = rep_.forward(gap_.forward(x));
        Matrix<T> a = proj1_.forward(out.h);
        proj_relu_mask_ = (a.array() > T(0)).template cast<unsigned char>();
        a = a.cwiseMax(T(0));
        out.z = proj2_.forward(a);
        return out;
    }

    // Backpropagates dL/dz through the cached forward pass, accumulating into
    // parameter gradients.
    void backward(const Matrix<T>& dz) {
        Matrix<T> da = proj2_.backward(dz);
        for (Eigen::Index i = 0; i < da.size(); ++i)
            if (!proj_relu_mask_.data()[i]) da.data()[i] = T(0);
        Matrix<T> dh = proj1_.backward(da);
        Feature<T> dx = gap_.backward(rep_.backward(dh));
        for (std::size_t i = convs_.size(); i-- > 0;) {
            if (pool_applied_[i]) dx = pools_[i].backward(dx);
            relus_[i].backward_inplace(dx.data);
            dx = convs_[i].backward(dx);
        }
    }

    void zero_grad() {
        for (auto* p : parameters()) std::fill(p->grad.begin(), p->grad.end(), T(0));
    }

    std::vector<Parameter<T>*> parameters() { return collect<Parameter<T>>(*this); }
    std::vector<const Parameter<T>*> parameters() const { return collect<const Parameter<T>>(*this); }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (auto* p : parameters()) n += p->size();
        return n;
    }

    template <class U>
    EncoderModel<U> cast() const {
        EncoderModel<U> out(cfg_);
        auto dst = out.parameters();
        auto src = parameters();
        for (std::size_t i = 0; i < src.size(); ++i)
            for (std::size_t j = 0; j < src[i]->size(); ++j) dst[i]->value[j] = static_cast<U>(src[i]->value[j]);
        return out;
    }

private:
    static ModelConfig validated(ModelConfig cfg) {
        cfg.validate();
        return cfg;
    }

    template <class P, class Self>
    static std::vector<P*> collect(Self& self) {
        std::vector<P*> out;
        for (auto& c : self.convs_) {
            out.push_back(&c.weight);
            out.push_back(&c.bias);
        }
        for (auto* l : {&self.rep_, &self.proj1_, &self.proj2_}) {
            out.push_back(&l->weight);
            out.push_back(&l->bias);
        }
        return out;
    }

    ModelConfig cfg_;
    std::vector<nn::Conv3x3<T>> convs_;
    std::vector<nn::Relu<T>> relus_;
    std::vector<nn::MaxPool2<T>> pools_;
    std::vector<bool> pool_applied_;
    nn::GlobalAvgPool<T> gap_;
    nn::Linear<T> rep_;
    nn::Linear<T> proj1_;
    nn::Linear<T> proj2_;
    Eigen::Matrix<unsigned char, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> proj_relu_mask_;
};

// Which model output a consumer works in: the projection z (the space the
// contrastive loss shapes) or the representation h (encoder output).
enum class EmbeddingSpace { Projection, Representation };

inline constexpr std::string_view to_string(EmbeddingSpace s) noexcept {
    return s == EmbeddingSpace::Projection ? "projection" : "representation";
}

inline std::optional<EmbeddingSpace> parse_embedding_space(std::string_view s) {
    if (s == "projection") return EmbeddingSpace::Projection;
    if (s == "representation") return EmbeddingSpace::Representation;
    return std::nullopt;
}

// Plain FNV-1a over the parameter bytes; used to assert that evaluation
// leaves a model untouched.
template <class T>
std::uint64_t parameter_checksum(const EncoderModel<T>& model) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto* p : model.parameters()) {
        const auto* bytes = reinterpret_cast<const unsigned char*>(p->value.data());
        for (std::size_t i = 0; i < p->value.size() * sizeof(T); ++i) {
            h ^= bytes[i];
            h *= 0x100000001b3ULL;
        }
    }
    return h;
}

}  // namespace batchcur
