#pragma once

// Minimal dense NN toolkit on Eigen: batched feature-map tensors, conv /
// linear / GRU layers with explicit backward passes, and Adam. Layers keep
// a LIFO cache of forward activations, so a layer used twice in a graph is
// backpropagated in exact reverse order of its forward calls.

#include <cmath>
#include <string>
#include <vector>

#include "kpvp/common.hpp"

namespace kpvp::nn {

// Batch of feature maps. data is (c, n*h*w); sample b occupies the column
// block [b*h*w, (b+1)*h*w), column index within a sample is y*w + x.
template <typename S>
struct Tensor {
    int n = 0, c = 0, h = 0, w = 0;
    Matrix<S> data;

    Tensor() = default;
    Tensor(int n_, int c_, int h_, int w_) : n(n_), c(c_), h(h_), w(w_) {
        data.setZero(c_, static_cast<Eigen::Index>(n_) * h_ * w_);
    }
    Eigen::Index spatial() const { return static_cast<Eigen::Index>(h) * w; }
    auto sample(int b) { return data.middleCols(static_cast<Eigen::Index>(b) * spatial(), spatial()); }
    auto sample(int b) const { return data.middleCols(static_cast<Eigen::Index>(b) * spatial(), spatial()); }
    bool same_shape(const Tensor& o) const { return n == o.n && c == o.c && h == o.h && w == o.w; }
};

template <typename S>
Tensor<S> concat_channels(const Tensor<S>& a, const Tensor<S>& b) {
    Tensor<S> out(a.n, a.c + b.c, a.h, a.w);
    out.data.topRows(a.c) = a.data;
    out.data.bottomRows(b.c) = b.data;
    return out;
}

template <typename S>
Tensor<S> slice_channels(const Tensor<S>& x, int first, int count) {
    Tensor<S> out(x.n, count, x.h, x.w);
    out.data = x.data.middleRows(first, count);
    return out;
}

struct ParamRef {
    std::string name;
    void* value = nullptr;  // Matrix<S>*
    void* grad = nullptr;   // Matrix<S>*
};

template <typename S>
struct ParamList {
    std::vector<std::string> names;
    std::vector<Matrix<S>*> values;
    std::vector<Matrix<S>*> grads;
    void add(std::string name, Matrix<S>* v, Matrix<S>* g) {
        names.push_back(std::move(name));
        values.push_back(v);
        grads.push_back(g);
    }
    void append(const ParamList& other) {
        names.insert(names.end(), other.names.begin(), other.names.end());
        values.insert(values.end(), other.values.begin(), other.values.end());
        grads.insert(grads.end(), other.grads.begin(), other.grads.end());
    }
    std::size_t size() const { return values.size(); }
    void zero_grads() {
        for (auto* g : grads) g->setZero();
    }
};

template <typename S>
void init_conv(Matrix<S>& weight, Eigen::Index fan_in, Rng& rng, S gain = S(1)) {
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
    for (Eigen::Index i = 0; i < weight.size(); ++i)
        weight.data()[i] = S(gain * S(dist(rng)));
}

// --- Convolution ------------------------------------------------------------

template <typename S>
class Conv2d {
  public:
    Conv2d() = default;
    Conv2d(int in_c, int out_c, int kh, int kw, int sh, int sw, int ph, int pw, Rng& rng)
        : in_c_(in_c), out_c_(out_c), kh_(kh), kw_(kw), sh_(sh), sw_(sw), ph_(ph), pw_(pw) {
        weight_.resize(out_c, static_cast<Eigen::Index>(in_c) * kh * kw);
        init_conv(weight_, weight_.cols(), rng);
        bias_.setZero(out_c, 1);
        grad_weight_.setZero(weight_.rows(), weight_.cols());
        grad_bias_.setZero(out_c, 1);
    }
    Conv2d(int in_c, int out_c, int k, int stride, int pad, Rng& rng)
        : Conv2d(in_c, out_c, k, k, stride, stride, pad, pad, rng) {}

    int out_h(int h) const { return (h + 2 * ph_ - kh_) / sh_ + 1; }
    int out_w(int w) const { return (w + 2 * pw_ - kw_) / sw_ + 1; }

    Tensor<S> forward(const Tensor<S>& x, bool track = true) {
        const int ho = out_h(x.h), wo = out_w(x.w);
        Matrix<S> col = im2col(x, ho, wo);
        Tensor<S> y(x.n, out_c_, ho, wo);
        y.data.noalias() = weight_ * col;
        y.data.colwise() += bias_.col(0);
        if (track) cache_.push_back({x.n, x.h, x.w, std::move(col)});
        return y;
    }

    Tensor<S> backward(const Tensor<S>& gy) {
        const Cache ctx = std::move(cache_.back());
        cache_.pop_back();
        grad_weight_.noalias() += gy.data * ctx.col.transpose();
        grad_bias_.col(0) += gy.data.rowwise().sum();
        Matrix<S> gcol = weight_.transpose() * gy.data;
        return col2im(gcol, ctx.n, ctx.h, ctx.w, gy.h, gy.w);
    }

    void collect(ParamList<S>& out, const std::string& prefix) {
        out.add(prefix + ".weight", &weight_, &grad_weight_);
        out.add(prefix + ".bias", &bias_, &grad_bias_);
    }

    // Initialization hooks (used once, right after construction).
    void scale_weights(S factor) { weight_ *= factor; }
    void set_bias(Eigen::Index channel, S value) { bias_(channel, 0) = value; }

  private:
    struct Cache {
        int n, h, w;
        Matrix<S> col;
    };

    Matrix<S> im2col(const Tensor<S>& x, int ho, int wo) const {
        Matrix<S> col;
        col.setZero(static_cast<Eigen::Index>(in_c_) * kh_ * kw_, static_cast<Eigen::Index>(x.n) * ho * wo);
        for (int b = 0; b < x.n; ++b) {
            const Eigen::Index xoff = static_cast<Eigen::Index>(b) * x.h * x.w;
            const Eigen::Index coff = static_cast<Eigen::Index>(b) * ho * wo;
            for (int ki = 0; ki < kh_; ++ki)
                for (int kj = 0; kj < kw_; ++kj) {
                    for (int oy = 0; oy < ho; ++oy) {
                        const int iy = oy * sh_ - ph_ + ki;
                        if (iy < 0 || iy >= x.h) continue;
                        for (int ox = 0; ox < wo; ++ox) {
                            const int ix = ox * sw_ - pw_ + kj;
                            if (ix < 0 || ix >= x.w) continue;
                            for (int c = 0; c < in_c_; ++c)
                                col((static_cast<Eigen::Index>(c) * kh_ + ki) * kw_ + kj,
                                    coff + static_cast<Eigen::Index>(oy) * wo + ox) =
                                    x.data(c, xoff + static_cast<Eigen::Index>(iy) * x.w + ix);
                        }
                    }
                }
        }
        return col;
    }

    Tensor<S> col2im(const Matrix<S>& gcol, int n, int h, int w, int ho, int wo) const {
        Tensor<S> gx(n, in_c_, h, w);
        for (int b = 0; b < n; ++b) {
            const Eigen::Index xoff = static_cast<Eigen::Index>(b) * h * w;
            const Eigen::Index coff = static_cast<Eigen::Index>(b) * ho * wo;
            for (int ki = 0; ki < kh_; ++ki)
                for (int kj = 0; kj < kw_; ++kj)
                    for (int oy = 0; oy < ho; ++oy) {
                        const int iy = oy * sh_ - ph_ + ki;
                        if (iy < 0 || iy >= h) continue;
                        for (int ox = 0; ox < wo; ++ox) {
                            const int ix = ox * sw_ - pw_ + kj;
                            if (ix < 0 || ix >= w) continue;
                            for (int c = 0; c < in_c_; ++c)
                                gx.data(c, xoff + static_cast<Eigen::Index>(iy) * w + ix) +=
                                    gcol((static_cast<Eigen::Index>(c) * kh_ + ki) * kw_ + kj,
                                         coff + static_cast<Eigen::Index>(oy) * wo + ox);
                        }
                    }
        }
        return gx;
    }

    int in_c_ = 0, out_c_ = 0, kh_ = 0, kw_ = 0, sh_ = 1, sw_ = 1, ph_ = 0, pw_ = 0;
    Matrix<S> weight_, bias_, grad_weight_, grad_bias_;
    std::vector<Cache> cache_;
};

// --- Linear -----------------------------------------------------------------

template <typename S>
class Linear {
  public:
    Linear() = default;
    Linear(int in, int out, Rng& rng) {
        weight_.resize(out, in);
        init_conv(weight_, in, rng);
        bias_.setZero(out, 1);
        grad_weight_.setZero(out, in);
        grad_bias_.setZero(out, 1);
    }

    Matrix<S> forward(const Matrix<S>& x, bool track = true) {
        Matrix<S> y = weight_ * x;
        y.colwise() += bias_.col(0);
        if (track) cache_.push_back(x);
        return y;
    }

    Matrix<S> backward(const Matrix<S>& gy) {
        const Matrix<S> x = std::move(cache_.back());
        cache_.pop_back();
        grad_weight_.noalias() += gy * x.transpose();
        grad_bias_.col(0) += gy.rowwise().sum();
        return weight_.transpose() * gy;
    }

    void collect(ParamList<S>& out, const std::string& prefix) {
        out.add(prefix + ".weight", &weight_, &grad_weight_);
        out.add(prefix + ".bias", &bias_, &grad_bias_);
    }

  private:
    Matrix<S> weight_, bias_, grad_weight_, grad_bias_;
    std::vector<Matrix<S>> cache_;
};

// --- Activations ------------------------------------------------------------

template <typename S>
class LeakyReLU {
  public:
    explicit LeakyReLU(S alpha = S(0.2)) : alpha_(alpha) {}
    Matrix<S> forward(const Matrix<S>& x, bool track = true) {
        Matrix<S> y = x.array().max(x.array() * alpha_);
        if (track) cache_.push_back(x);
        return y;
    }
    Matrix<S> backward(const Matrix<S>& gy) {
        Matrix<S> x = std::move(cache_.back());
        cache_.pop_back();
        return (x.array() > S(0)).select(gy, gy * alpha_);
    }

  private:
    S alpha_;
    std::vector<Matrix<S>> cache_;
};

template <typename S>
class TanhLayer {
  public:
    Matrix<S> forward(const Matrix<S>& x, bool track = true) {
        Matrix<S> y = x.array().tanh();
        if (track) cache_.push_back(y);
        return y;
    }
    Matrix<S> backward(const Matrix<S>& gy) {
        Matrix<S> y = std::move(cache_.back());
        cache_.pop_back();
        return gy.array() * (S(1) - y.array().square());
    }

  private:
    std::vector<Matrix<S>> cache_;
};

template <typename S>
class SigmoidLayer {
  public:
    Matrix<S> forward(const Matrix<S>& x, bool track = true) {
        Matrix<S> y = (S(1) / (S(1) + (-x.array()).exp())).matrix();
        if (track) cache_.push_back(y);
        return y;
    }
    Matrix<S> backward(const Matrix<S>& gy) {
        Matrix<S> y = std::move(cache_.back());
        cache_.pop_back();
        return gy.array() * y.array() * (S(1) - y.array());
    }

  private:
    std::vector<Matrix<S>> cache_;
};

// --- Nearest-neighbour 2x upsampling ----------------------------------------

template <typename S>
inline Tensor<S> upsample2x(const Tensor<S>& x) {
    Tensor<S> y(x.n, x.c, x.h * 2, x.w * 2);
    for (int b = 0; b < x.n; ++b) {
        const Eigen::Index xi = static_cast<Eigen::Index>(b) * x.h * x.w;
        const Eigen::Index yi = static_cast<Eigen::Index>(b) * y.h * y.w;
        for (int iy = 0; iy < y.h; ++iy)
            for (int ix = 0; ix < y.w; ++ix)
                y.data.col(yi + static_cast<Eigen::Index>(iy) * y.w + ix) =
                    x.data.col(xi + static_cast<Eigen::Index>(iy / 2) * x.w + ix / 2);
    }
    return y;
}

template <typename S>
inline Tensor<S> upsample2x_backward(const Tensor<S>& gy, int h, int w) {
    Tensor<S> gx(gy.n, gy.c, h, w);
    for (int b = 0; b < gy.n; ++b) {
        const Eigen::Index xi = static_cast<Eigen::Index>(b) * h * w;
        const Eigen::Index yi = static_cast<Eigen::Index>(b) * gy.h * gy.w;
        for (int iy = 0; iy < gy.h; ++iy)
            for (int ix = 0; ix < gy.w; ++ix)
                gx.data.col(xi + static_cast<Eigen::Index>(iy / 2) * w + ix / 2) +=
                    gy.data.col(yi + static_cast<Eigen::Index>(iy) * gy.w + ix);
    }
    return gx;
}

// --- GRU cell ----------------------------------------------------------------

template <typename S>
class GRUCell {
  public:
    GRUCell() = default;
    GRUCell(int in, int hidden, Rng& rng) : hidden_(hidden) {
        auto make = [&](Matrix<S>& m, int rows, int cols) {
            m.resize(rows, cols);
            init_conv(m, cols, rng, S(0.5));
        };
        make(wr_, hidden, in);
        make(wz_, hidden, in);
        make(wc_, hidden, in);
        make(ur_, hidden, hidden);
        make(uz_, hidden, hidden);
        make(uc_, hidden, hidden);
        br_.setZero(hidden, 1);
        bz_.setZero(hidden, 1);
        bc_.setZero(hidden, 1);
        gwr_.setZero(hidden, in);
        gwz_.setZero(hidden, in);
        gwc_.setZero(hidden, in);
        gur_.setZero(hidden, hidden);
        guz_.setZero(hidden, hidden);
        guc_.setZero(hidden, hidden);
        gbr_.setZero(hidden, 1);
        gbz_.setZero(hidden, 1);
        gbc_.setZero(hidden, 1);
    }

    int hidden_size() const { return hidden_; }

    Matrix<S> step(const Matrix<S>& x, const Matrix<S>& h, bool track = true) {
        Matrix<S> r = sigmoid(((wr_ * x + ur_ * h).colwise() + br_.col(0)).eval());
        Matrix<S> z = sigmoid(((wz_ * x + uz_ * h).colwise() + bz_.col(0)).eval());
        Matrix<S> rh = r.array() * h.array();
        Matrix<S> c = ((wc_ * x + uc_ * rh).colwise() + bc_.col(0)).array().tanh();
        Matrix<S> hn = ((S(1) - z.array()) * h.array() + z.array() * c.array()).matrix();
        if (track) cache_.push_back({x, h, r, z, rh, c});
        return hn;
    }

    // Returns (dx, dh_prev) given the gradient w.r.t. the new hidden state.
    std::pair<Matrix<S>, Matrix<S>> step_backward(const Matrix<S>& dhn) {
        Cache ctx = std::move(cache_.back());
        cache_.pop_back();
        Matrix<S> dc = (dhn.array() * ctx.z.array()).matrix();
        Matrix<S> dz = (dhn.array() * (ctx.c.array() - ctx.h.array())).matrix();
        Matrix<S> dh = (dhn.array() * (S(1) - ctx.z.array())).matrix();
        Matrix<S> dac = (dc.array() * (S(1) - ctx.c.array().square())).matrix();
        gwc_.noalias() += dac * ctx.x.transpose();
        guc_.noalias() += dac * ctx.rh.transpose();
        gbc_.col(0) += dac.rowwise().sum();
        Matrix<S> drh = uc_.transpose() * dac;
        Matrix<S> dr = (drh.array() * ctx.h.array()).matrix();
        dh += (drh.array() * ctx.r.array()).matrix();
        Matrix<S> dar = (dr.array() * ctx.r.array() * (S(1) - ctx.r.array())).matrix();
        Matrix<S> daz = (dz.array() * ctx.z.array() * (S(1) - ctx.z.array())).matrix();
        gwr_.noalias() += dar * ctx.x.transpose();
        gur_.noalias() += dar * ctx.h.transpose();
        gbr_.col(0) += dar.rowwise().sum();
        gwz_.noalias() += daz * ctx.x.transpose();
        guz_.noalias() += daz * ctx.h.transpose();
        gbz_.col(0) += daz.rowwise().sum();
        Matrix<S> dx = wr_.transpose() * dar + wz_.transpose() * daz + wc_.transpose() * dac;
        dh += ur_.transpose() * dar + uz_.transpose() * daz;
        return {std::move(dx), std::move(dh)};
    }

    void collect(ParamList<S>& out, const std::string& prefix) {
        out.add(prefix + ".wr", &wr_, &gwr_);
        out.add(prefix + ".wz", &wz_, &gwz_);
        out.add(prefix + ".wc", &wc_, &gwc_);
        out.add(prefix + ".ur", &ur_, &gur_);
        out.add(prefix + ".uz", &uz_, &guz_);
        out.add(prefix + ".uc", &uc_, &guc_);
        out.add(prefix + ".br", &br_, &gbr_);
        out.add(prefix + ".bz", &bz_, &gbz_);
        out.add(prefix + ".bc", &bc_, &gbc_);
    }

  private:
    static Matrix<S> sigmoid(const Matrix<S>& x) { return (S(1) / (S(1) + (-x.array()).exp())).matrix(); }

    struct Cache {
        Matrix<S> x, h, r, z, rh, c;
    };

    int hidden_ = 0;
    Matrix<S> wr_, wz_, wc_, ur_, uz_, uc_, br_, bz_, bc_;
    Matrix<S> gwr_, gwz_, gwc_, gur_, guz_, guc_, gbr_, gbz_, gbc_;
    std::vector<Cache> cache_;
};

// --- Adam --------------------------------------------------------------------

template <typename S>
class Adam {
  public:
    Adam() = default;
    Adam(S beta1, S beta2, S eps = S(1e-8)) : beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void step(ParamList<S>& params, S lr) {
        if (m_.empty()) {
            for (auto* v : params.values) {
                m_.emplace_back(Matrix<S>::Zero(v->rows(), v->cols()));
                v_.emplace_back(Matrix<S>::Zero(v->rows(), v->cols()));
            }
        }
        ++t_;
        const S bc1 = S(1) - std::pow(beta1_, S(t_));
        const S bc2 = S(1) - std::pow(beta2_, S(t_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            const Matrix<S>& g = *params.grads[i];
            m_[i] = beta1_ * m_[i] + (S(1) - beta1_) * g;
            v_[i] = (beta2_ * v_[i].array() + (S(1) - beta2_) * g.array().square()).matrix();
            params.values[i]->array() -=
                lr * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + eps_);
        }
    }

    long steps_taken() const { return t_; }

  private:
    S beta1_ = S(0.9), beta2_ = S(0.999), eps_ = S(1e-8);
    long t_ = 0;
    std::vector<Matrix<S>> m_, v_;
};

// Step-decay schedule: lr0 * decay^floor(step / every).
template <typename S>
inline S scheduled_lr(S lr0, S decay, long every, long step) {
    return lr0 * std::pow(decay, S(step / every));
}

}  // namespace kpvp::nn
