#pragma once

// Stage 1: unsupervised keypoint detector Q, analogical image translator T
// with soft background mask, image discriminator D_im, the mask blend, and
// the alternating adversarial/perceptual training step.

#include <memory>
#include <string>
#include <vector>

#include "kpvp/hyperparams.hpp"
#include "kpvp/keypoint_core.hpp"
#include "kpvp/nn.hpp"

namespace kpvp {

template <typename S>
using KeypointBatch = std::vector<KeypointSet<S>>;

// --- Keypoint detector Q ------------------------------------------------------

// Encoder (two stride-2 and two stride-1 conv blocks) with two residual
// blocks, emitting K-channel logits at H/4 x W/4.
template <typename S>
class DetectorNet {
  public:
    DetectorNet() = default;
    // head_gain scales the head initialization so the initial spatial softmax
    // is peaked rather than near-uniform. With a near-uniform softmax every
    // expected coordinate starts at the image centre and barely responds to
    // the input, which leaves the detector in a zero-gradient equilibrium the
    // translator never pulls it out of.
    DetectorNet(int k, int channels, Rng& rng, S head_gain = S(1))
        : conv0_(3, channels, 3, 2, 1, rng),
          conv1_(channels, 2 * channels, 3, 2, 1, rng),
          conv2_(2 * channels, 2 * channels, 3, 1, 1, rng),
          conv3_(2 * channels, 2 * channels, 3, 1, 1, rng),
          res1a_(2 * channels, 2 * channels, 3, 1, 1, rng),
          res1b_(2 * channels, 2 * channels, 3, 1, 1, rng),
          res2a_(2 * channels, 2 * channels, 3, 1, 1, rng),
          res2b_(2 * channels, 2 * channels, 3, 1, 1, rng),
          head_(2 * channels, k, 1, 1, 0, rng) {
        head_.scale_weights(head_gain);
    }

    nn::Tensor<S> forward(const nn::Tensor<S>& v, bool track = true) { return forward_impl(v, track); }

    nn::Tensor<S> backward(const nn::Tensor<S>& glogits) {
        nn::Tensor<S> g = head_.backward(glogits);
        // residual block 2
        {
            nn::Tensor<S> gb = res2b_.backward(g);
            gb.data = a_res2_.backward(gb.data);
            nn::Tensor<S> ga = res2a_.backward(gb);
            g.data += ga.data;
        }
        // residual block 1
        {
            nn::Tensor<S> gb = res1b_.backward(g);
            gb.data = a_res1_.backward(gb.data);
            nn::Tensor<S> ga = res1a_.backward(gb);
            g.data += ga.data;
        }
        g.data = a3_.backward(g.data);
        g = conv3_.backward(g);
        g.data = a2_.backward(g.data);
        g = conv2_.backward(g);
        g.data = a1_.backward(g.data);
        g = conv1_.backward(g);
        g.data = a0_.backward(g.data);
        return conv0_.backward(g);
    }

    void collect(nn::ParamList<S>& out, const std::string& prefix) {
        conv0_.collect(out, prefix + ".conv0");
        conv1_.collect(out, prefix + ".conv1");
        conv2_.collect(out, prefix + ".conv2");
        conv3_.collect(out, prefix + ".conv3");
        res1a_.collect(out, prefix + ".res1a");
        res1b_.collect(out, prefix + ".res1b");
        res2a_.collect(out, prefix + ".res2a");
        res2b_.collect(out, prefix + ".res2b");
        head_.collect(out, prefix + ".head");
    }

  private:
    nn::Tensor<S> forward_impl(const nn::Tensor<S>& v, bool track) {
        nn::Tensor<S> x = conv0_.forward(v, track);
        x.data = a0_.forward(x.data, track);
        x = conv1_.forward(x, track);
        x.data = a1_.forward(x.data, track);
        x = conv2_.forward(x, track);
        x.data = a2_.forward(x.data, track);
        x = conv3_.forward(x, track);
        x.data = a3_.forward(x.data, track);
        {
            nn::Tensor<S> r = res1a_.forward(x, track);
            r.data = a_res1_.forward(r.data, track);
            r = res1b_.forward(r, track);
            x.data += r.data;
        }
        {
            nn::Tensor<S> r = res2a_.forward(x, track);
            r.data = a_res2_.forward(r.data, track);
            r = res2b_.forward(r, track);
            x.data += r.data;
        }
        return head_.forward(x, track);
    }

    nn::Conv2d<S> conv0_, conv1_, conv2_, conv3_, res1a_, res1b_, res2a_, res2b_, head_;
    nn::LeakyReLU<S> a0_, a1_, a2_, a3_, a_res1_, a_res2_;
};

// Soft-argmax chain on top of detector logits. Caches what the backward
// pass needs; one instance per forward branch is not required (LIFO).
template <typename S>
struct KeypointChainCache {
    std::vector<ProbabilityMapStack<S>> maps;  // per sample
    std::vector<Coords<S>> pixel;              // per sample
    int h = 0, w = 0;
};

template <typename S>
KeypointBatch<S> keypoints_from_logits(const nn::Tensor<S>& logits, KeypointChainCache<S>* cache = nullptr) {
    KeypointBatch<S> out(logits.n);
    if (cache) {
        cache->maps.resize(logits.n);
        cache->pixel.resize(logits.n);
        cache->h = logits.h;
        cache->w = logits.w;
    }
    for (int b = 0; b < logits.n; ++b) {
        Matrix<S> l = logits.sample(b);
        auto maps = spatial_softmax<S>(l, logits.h, logits.w);
        Coords<S> pix = expected_coordinates<S>(maps, S(1e-2));
        out[b] = normalize_keypoints<S>(pix, logits.h, logits.w);
        if (cache) {
            cache->maps[b] = std::move(maps);
            cache->pixel[b] = std::move(pix);
        }
    }
    return out;
}

template <typename S>
nn::Tensor<S> keypoint_chain_backward(const KeypointChainCache<S>& cache,
                                      const std::vector<Coords<S>>& grad_kps) {
    const int n = static_cast<int>(cache.maps.size());
    const int k = static_cast<int>(cache.maps[0].values.rows());
    nn::Tensor<S> glogits(n, k, cache.h, cache.w);
    for (int b = 0; b < n; ++b) {
        Coords<S> gpix = normalize_keypoints_backward<S>(grad_kps[b], cache.h, cache.w);
        glogits.sample(b) = soft_argmax_backward<S>(cache.maps[b], cache.pixel[b], gpix);
    }
    return glogits;
}

// Renders per-sample Gaussian map stacks into one batched tensor.
template <typename S>
nn::Tensor<S> render_gaussian_tensor(const KeypointBatch<S>& kps, int h, int w, S sigma,
                                     std::vector<GaussianMapStack<S>>* cache = nullptr) {
    const int n = static_cast<int>(kps.size());
    const int k = kps[0].count();
    nn::Tensor<S> out(n, k, h, w);
    if (cache) cache->resize(n);
    for (int b = 0; b < n; ++b) {
        auto maps = render_gaussian_maps<S>(kps[b], h, w, sigma);
        out.sample(b) = maps.values;
        if (cache) (*cache)[b] = std::move(maps);
    }
    return out;
}

template <typename S>
std::vector<Coords<S>> render_gaussian_tensor_backward(const KeypointBatch<S>& kps,
                                                       const std::vector<GaussianMapStack<S>>& cache,
                                                       const nn::Tensor<S>& grad) {
    std::vector<Coords<S>> out(kps.size());
    for (std::size_t b = 0; b < kps.size(); ++b)
        out[b] = render_gaussian_maps_backward<S>(kps[b], cache[b], grad.sample(static_cast<int>(b)));
    return out;
}

// --- Image translator T -------------------------------------------------------

enum class MaskMode { Learned, ForceOne, ForceZero };

// Encoder-decoder with skip connections; consumes the image concatenated
// channel-wise with Gaussian maps of the reference and target keypoints and
// emits a synthesized image s (tanh) plus a soft background mask m (sigmoid).
template <typename S>
class TranslatorNet {
  public:
    TranslatorNet() = default;
    // mask_bias_init biases the blend toward the synthesized branch at the
    // start of training (mask channel is index 3 of the head). Starting the
    // mask high lets the generator collapse onto copying the input frame —
    // which an unconditional discriminator cannot penalize, since the input
    // is itself a real frame — after which the saturated sigmoid blocks all
    // learning. A negative initial bias makes the synthesis branch carry the
    // reconstruction first; the mask then rises only where copying wins.
    TranslatorNet(int in_channels, int channels, Rng& rng, S mask_bias_init = S(0))
        : c_(channels),
          e0_(in_channels, channels, 3, 1, 1, rng),
          e1_(channels, 2 * channels, 3, 2, 1, rng),
          e2_(2 * channels, 4 * channels, 3, 2, 1, rng),
          e3_(4 * channels, 4 * channels, 3, 2, 1, rng),
          bottleneck_(4 * channels, 4 * channels, 3, 1, 1, rng),
          d2_(8 * channels, 2 * channels, 3, 1, 1, rng),
          d1_(4 * channels, channels, 3, 1, 1, rng),
          d0_(2 * channels, channels, 3, 1, 1, rng),
          head_(channels, 4, 3, 1, 1, rng) {
        head_.set_bias(3, mask_bias_init);
    }

    // Returns (mask 1ch, synth 3ch).
    std::pair<nn::Tensor<S>, nn::Tensor<S>> forward(const nn::Tensor<S>& x, bool track = true) {
        nn::Tensor<S> e0 = e0_.forward(x, track);
        e0.data = ae0_.forward(e0.data, track);
        nn::Tensor<S> e1 = e1_.forward(e0, track);
        e1.data = ae1_.forward(e1.data, track);
        nn::Tensor<S> e2 = e2_.forward(e1, track);
        e2.data = ae2_.forward(e2.data, track);
        nn::Tensor<S> e3 = e3_.forward(e2, track);
        e3.data = ae3_.forward(e3.data, track);
        nn::Tensor<S> b = bottleneck_.forward(e3, track);
        b.data = ab_.forward(b.data, track);
        nn::Tensor<S> d2 = d2_.forward(nn::concat_channels(nn::upsample2x(b), e2), track);
        d2.data = ad2_.forward(d2.data, track);
        nn::Tensor<S> d1 = d1_.forward(nn::concat_channels(nn::upsample2x(d2), e1), track);
        d1.data = ad1_.forward(d1.data, track);
        nn::Tensor<S> d0 = d0_.forward(nn::concat_channels(nn::upsample2x(d1), e0), track);
        d0.data = ad0_.forward(d0.data, track);
        nn::Tensor<S> head = head_.forward(d0, track);
        nn::Tensor<S> s = nn::slice_channels(head, 0, 3);
        nn::Tensor<S> m = nn::slice_channels(head, 3, 1);
        s.data = s_act_.forward(s.data, track);
        m.data = m_act_.forward(m.data, track);
        return {std::move(m), std::move(s)};
    }

    nn::Tensor<S> backward(const nn::Tensor<S>& gm, const nn::Tensor<S>& gs) {
        nn::Tensor<S> ghead(gm.n, 4, gm.h, gm.w);
        ghead.data.middleRows(3, 1) = m_act_.backward(gm.data);
        ghead.data.topRows(3) = s_act_.backward(gs.data);
        nn::Tensor<S> g = head_.backward(ghead);
        g.data = ad0_.backward(g.data);
        nn::Tensor<S> gcat0 = d0_.backward(g);
        nn::Tensor<S> g_e0 = nn::slice_channels(gcat0, c_, c_);
        g = nn::upsample2x_backward(nn::slice_channels(gcat0, 0, c_), gcat0.h / 2, gcat0.w / 2);
        g.data = ad1_.backward(g.data);
        nn::Tensor<S> gcat1 = d1_.backward(g);
        nn::Tensor<S> g_e1 = nn::slice_channels(gcat1, 2 * c_, 2 * c_);
        g = nn::upsample2x_backward(nn::slice_channels(gcat1, 0, 2 * c_), gcat1.h / 2, gcat1.w / 2);
        g.data = ad2_.backward(g.data);
        nn::Tensor<S> gcat2 = d2_.backward(g);
        nn::Tensor<S> g_e2 = nn::slice_channels(gcat2, 4 * c_, 4 * c_);
        g = nn::upsample2x_backward(nn::slice_channels(gcat2, 0, 4 * c_), gcat2.h / 2, gcat2.w / 2);
        g.data = ab_.backward(g.data);
        g = bottleneck_.backward(g);
        g.data = ae3_.backward(g.data);
        g = e3_.backward(g);
        g.data += g_e2.data;
        g.data = ae2_.backward(g.data);
        g = e2_.backward(g);
        g.data += g_e1.data;
        g.data = ae1_.backward(g.data);
        g = e1_.backward(g);
        g.data += g_e0.data;
        g.data = ae0_.backward(g.data);
        return e0_.backward(g);
    }

    void collect(nn::ParamList<S>& out, const std::string& prefix) {
        e0_.collect(out, prefix + ".e0");
        e1_.collect(out, prefix + ".e1");
        e2_.collect(out, prefix + ".e2");
        e3_.collect(out, prefix + ".e3");
        bottleneck_.collect(out, prefix + ".bottleneck");
        d2_.collect(out, prefix + ".d2");
        d1_.collect(out, prefix + ".d1");
        d0_.collect(out, prefix + ".d0");
        head_.collect(out, prefix + ".head");
    }

  private:
    int c_ = 0;
    nn::Conv2d<S> e0_, e1_, e2_, e3_, bottleneck_, d2_, d1_, d0_, head_;
    nn::LeakyReLU<S> ae0_, ae1_, ae2_, ae3_, ab_, ad2_, ad1_, ad0_;
    nn::TanhLayer<S> s_act_;
    nn::SigmoidLayer<S> m_act_;
};

// --- Image discriminator D_im ---------------------------------------------------

template <typename S>
class ImageDiscriminator {
  public:
    ImageDiscriminator() = default;
    ImageDiscriminator(int channels, Rng& rng)
        : conv0_(3, channels, 3, 2, 1, rng),
          conv1_(channels, 2 * channels, 3, 2, 1, rng),
          conv2_(2 * channels, 4 * channels, 3, 2, 1, rng),
          conv3_(4 * channels, 4 * channels, 3, 2, 1, rng),
          head_(4 * channels, 1, 1, 1, 0, rng) {}

    // Per-sample probability of "real".
    Vector<S> forward(const nn::Tensor<S>& v, bool track = true) {
        nn::Tensor<S> x = conv0_.forward(v, track);
        x.data = a0_.forward(x.data, track);
        x = conv1_.forward(x, track);
        x.data = a1_.forward(x.data, track);
        x = conv2_.forward(x, track);
        x.data = a2_.forward(x.data, track);
        x = conv3_.forward(x, track);
        x.data = a3_.forward(x.data, track);
        x = head_.forward(x, track);
        Vector<S> logits(x.n);
        for (int b = 0; b < x.n; ++b) logits(b) = x.sample(b).mean();
        Vector<S> p = (S(1) / (S(1) + (-logits.array()).exp())).matrix();
        if (track) {
            cache_probs_.push_back(p);
            cache_shape_.push_back({x.n, x.h, x.w});
        }
        return p;
    }

    nn::Tensor<S> backward(const Vector<S>& gp) {
        Vector<S> p = std::move(cache_probs_.back());
        cache_probs_.pop_back();
        auto shape = cache_shape_.back();
        cache_shape_.pop_back();
        Vector<S> glogit = (gp.array() * p.array() * (S(1) - p.array())).matrix();
        nn::Tensor<S> g(shape.n, 1, shape.h, shape.w);
        const S inv = S(1) / S(shape.h * shape.w);
        for (int b = 0; b < shape.n; ++b) g.sample(b).setConstant(glogit(b) * inv);
        nn::Tensor<S> x = head_.backward(g);
        x.data = a3_.backward(x.data);
        x = conv3_.backward(x);
        x.data = a2_.backward(x.data);
        x = conv2_.backward(x);
        x.data = a1_.backward(x.data);
        x = conv1_.backward(x);
        x.data = a0_.backward(x.data);
        return conv0_.backward(x);
    }

    void collect(nn::ParamList<S>& out, const std::string& prefix) {
        conv0_.collect(out, prefix + ".conv0");
        conv1_.collect(out, prefix + ".conv1");
        conv2_.collect(out, prefix + ".conv2");
        conv3_.collect(out, prefix + ".conv3");
        head_.collect(out, prefix + ".head");
    }

  private:
    struct Shape {
        int n, h, w;
    };
    nn::Conv2d<S> conv0_, conv1_, conv2_, conv3_, head_;
    nn::LeakyReLU<S> a0_, a1_, a2_, a3_;
    std::vector<Vector<S>> cache_probs_;
    std::vector<Shape> cache_shape_;
};

// --- Perceptual feature extractor ----------------------------------------------

template <typename S>
class FeatureExtractor {
  public:
    virtual ~FeatureExtractor() = default;
    virtual int layer_count() const = 0;
    virtual std::vector<nn::Tensor<S>> forward(const nn::Tensor<S>& x, bool track) = 0;
    // Gradient w.r.t. the input given per-layer feature gradients.
    virtual nn::Tensor<S> backward(const std::vector<nn::Tensor<S>>& gfeats) = 0;
};

// Frozen, seeded, randomly initialized conv pyramid. Layer 0 is the raw
// image, so the loss keeps a direct pixel term alongside deeper features.
template <typename S>
class RandomConvPyramid : public FeatureExtractor<S> {
  public:
    RandomConvPyramid() = default;
    RandomConvPyramid(int image_h, int image_w, int channels, Rng& rng, int blocks = 5,
                      bool include_input = true)
        : include_input_(include_input) {
        int h = image_h, w = image_w, in_c = 3;
        for (int i = 0; i < blocks; ++i) {
            const int stride = (std::min(h, w) > 4) ? 2 : 1;
            const int out_c = channels * std::min(4, 1 << std::min(i, 2));
            convs_.emplace_back(in_c, out_c, 3, stride, 1, rng);
            acts_.emplace_back(S(0.2));
            in_c = out_c;
            h = (h + 2 - 3) / stride + 1;
            w = (w + 2 - 3) / stride + 1;
        }
    }

    int layer_count() const override { return static_cast<int>(convs_.size()) + (include_input_ ? 1 : 0); }

    std::vector<nn::Tensor<S>> forward(const nn::Tensor<S>& x, bool track) override {
        std::vector<nn::Tensor<S>> feats;
        if (include_input_) feats.push_back(x);
        nn::Tensor<S> h = x;
        for (std::size_t i = 0; i < convs_.size(); ++i) {
            h = convs_[i].forward(h, track);
            h.data = acts_[i].forward(h.data, track);
            feats.push_back(h);
        }
        return feats;
    }

    nn::Tensor<S> backward(const std::vector<nn::Tensor<S>>& gfeats) override {
        const std::size_t base = include_input_ ? 1 : 0;
        nn::Tensor<S> g = gfeats[base + convs_.size() - 1];
        for (std::size_t i = convs_.size(); i-- > 0;) {
            g.data = acts_[i].backward(g.data);
            g = convs_[i].backward(g);
            if (i > 0) g.data += gfeats[base + i - 1].data;
        }
        if (include_input_) g.data += gfeats[0].data;
        return g;
    }

    void collect(nn::ParamList<S>& out, const std::string& prefix) {
        for (std::size_t i = 0; i < convs_.size(); ++i)
            convs_[i].collect(out, prefix + ".block" + std::to_string(i));
    }

  private:
    bool include_input_ = true;
    std::vector<nn::Conv2d<S>> convs_;
    std::vector<nn::LeakyReLU<S>> acts_;
};

// Passes the image through unchanged; used by tests with analytic values.
template <typename S>
class IdentityExtractor : public FeatureExtractor<S> {
  public:
    int layer_count() const override { return 1; }
    std::vector<nn::Tensor<S>> forward(const nn::Tensor<S>& x, bool) override { return {x}; }
    nn::Tensor<S> backward(const std::vector<nn::Tensor<S>>& gfeats) override { return gfeats[0]; }
};

// Mean over layers of the mean absolute feature difference.
template <typename S>
S perceptual_loss(const nn::Tensor<S>& a, const nn::Tensor<S>& b, FeatureExtractor<S>& phi) {
    if (!a.same_shape(b)) throw ConfigError("perceptual_loss: frame shapes differ");
    auto fa = phi.forward(a, false);
    auto fb = phi.forward(b, false);
    S loss = S(0);
    for (std::size_t l = 0; l < fa.size(); ++l)
        loss += (fa[l].data - fb[l].data).array().abs().mean();
    return loss / S(fa.size());
}

// Tracked forward + backward pair used inside the training step.
template <typename S>
struct PerceptualCache {
    std::vector<nn::Tensor<S>> fa, fb;
};

template <typename S>
S perceptual_loss_forward(const nn::Tensor<S>& a, const nn::Tensor<S>& b, FeatureExtractor<S>& phi,
                          PerceptualCache<S>& cache) {
    cache.fb = phi.forward(b, false);
    cache.fa = phi.forward(a, true);
    S loss = S(0);
    for (std::size_t l = 0; l < cache.fa.size(); ++l)
        loss += (cache.fa[l].data - cache.fb[l].data).array().abs().mean();
    return loss / S(cache.fa.size());
}

template <typename S>
nn::Tensor<S> perceptual_loss_backward(FeatureExtractor<S>& phi, const PerceptualCache<S>& cache,
                                       S gloss) {
    std::vector<nn::Tensor<S>> gfeats(cache.fa.size());
    const S layer_scale = gloss / S(cache.fa.size());
    for (std::size_t l = 0; l < cache.fa.size(); ++l) {
        gfeats[l] = cache.fa[l];
        const S scale = layer_scale / S(cache.fa[l].data.size());
        gfeats[l].data = ((cache.fa[l].data - cache.fb[l].data).array().sign() * scale).matrix();
    }
    return phi.backward(gfeats);
}

// --- Blend (Eq. style: v_hat = m*v + (1-m)*s) ----------------------------------

template <typename S>
nn::Tensor<S> blend_with_mask(const nn::Tensor<S>& v, const nn::Tensor<S>& m, const nn::Tensor<S>& s) {
    nn::Tensor<S> out = v;
    for (int c = 0; c < 3; ++c)
        out.data.row(c) = m.data.row(0).array() * v.data.row(c).array() +
                          (S(1) - m.data.row(0).array()) * s.data.row(c).array();
    return out;
}

template <typename S>
void blend_backward(const nn::Tensor<S>& v, const nn::Tensor<S>& m, const nn::Tensor<S>& s,
                    const nn::Tensor<S>& gvhat, nn::Tensor<S>& gm, nn::Tensor<S>& gs) {
    gm = nn::Tensor<S>(m.n, 1, m.h, m.w);
    gs = nn::Tensor<S>(s.n, 3, s.h, s.w);
    gm.data.row(0).setZero();
    for (int c = 0; c < 3; ++c) {
        gm.data.row(0).array() += gvhat.data.row(c).array() * (v.data.row(c) - s.data.row(c)).array();
        gs.data.row(c) = gvhat.data.row(c).array() * (S(1) - m.data.row(0).array());
    }
}

// --- Stage-1 model and training -------------------------------------------------

template <typename S>
struct Stage1Model {
    HyperParams hp;
    DetectorNet<S> detector;
    TranslatorNet<S> translator;
    ImageDiscriminator<S> discriminator;
    RandomConvPyramid<S> perceptual;

    static Stage1Model make(const HyperParams& hp, std::uint64_t seed) {
        hp.validate();
        Rng rng(seed);
        Stage1Model m;
        m.hp = hp;
        m.detector = DetectorNet<S>(hp.keypoint_count, hp.detector_channels, rng,
                                    S(hp.detector_head_gain));
        const int in_c = 3 + hp.keypoint_count * (hp.use_reference_keypoints ? 2 : 1);
        m.translator = TranslatorNet<S>(in_c, hp.translator_channels, rng, S(hp.mask_bias_init));
        m.discriminator = ImageDiscriminator<S>(hp.discriminator_channels, rng);
        m.perceptual = RandomConvPyramid<S>(hp.image_h, hp.image_w, hp.perceptual_channels, rng);
        return m;
    }

    nn::ParamList<S> generator_params() {
        nn::ParamList<S> p;
        detector.collect(p, "detector");
        translator.collect(p, "translator");
        return p;
    }
    nn::ParamList<S> discriminator_params() {
        nn::ParamList<S> p;
        discriminator.collect(p, "image_discriminator");
        return p;
    }
    nn::ParamList<S> all_params() {
        nn::ParamList<S> p = generator_params();
        p.append(discriminator_params());
        perceptual.collect(p, "perceptual");
        return p;
    }
};

// Deterministic single-frame keypoint detection.
template <typename S>
KeypointSet<S> detect_keypoints(const nn::Tensor<S>& v, DetectorNet<S>& q) {
    nn::Tensor<S> logits = q.forward(v, false);
    return keypoints_from_logits<S>(logits)[0];
}

template <typename S>
struct TranslateResult {
    nn::Tensor<S> mask, synth, output;
};

// v_hat = m*v + (1-m)*s with optional mask-forcing test hooks. When
// reference keypoints are disabled the translator sees only the target maps.
template <typename S>
TranslateResult<S> translate(const nn::Tensor<S>& v, const KeypointBatch<S>& k_ref,
                             const KeypointBatch<S>& k_tgt, Stage1Model<S>& model,
                             MaskMode mask_mode = MaskMode::Learned) {
    const auto& hp = model.hp;
    if (static_cast<int>(k_ref[0].count()) != hp.keypoint_count ||
        static_cast<int>(k_tgt[0].count()) != hp.keypoint_count)
        throw ConfigError("translate: keypoint count mismatch");
    nn::Tensor<S> d_tgt = render_gaussian_tensor<S>(k_tgt, hp.map_h(), hp.map_w(), S(hp.sigma));
    nn::Tensor<S> x = hp.use_reference_keypoints
                          ? nn::concat_channels(nn::concat_channels(v, render_gaussian_tensor<S>(
                                                                           k_ref, hp.map_h(), hp.map_w(),
                                                                           S(hp.sigma))),
                                                d_tgt)
                          : nn::concat_channels(v, d_tgt);
    auto [m, s] = model.translator.forward(x, false);
    if (mask_mode == MaskMode::ForceOne) m.data.setOnes();
    if (mask_mode == MaskMode::ForceZero || !hp.use_mask) m.data.setZero();
    TranslateResult<S> out;
    out.output = blend_with_mask(v, m, s);
    out.mask = std::move(m);
    out.synth = std::move(s);
    return out;
}

inline double clamp_prob(double p) { return std::max(p, 1e-7); }

// Closed-form stage-1 losses given a synthesized frame.
template <typename S>
std::pair<S, S> translator_losses(const nn::Tensor<S>& v_hat, const nn::Tensor<S>& v_tgt,
                                  ImageDiscriminator<S>& d, FeatureExtractor<S>& phi, S lambda1) {
    Vector<S> p_fake = d.forward(v_hat, false);
    Vector<S> p_real = d.forward(v_tgt, false);
    S loss_d = S(0), loss_g = S(0);
    for (Eigen::Index i = 0; i < p_fake.size(); ++i) {
        loss_d += S(-std::log(clamp_prob(p_real(i))) - std::log(clamp_prob(1.0 - p_fake(i))));
        loss_g += S(-std::log(clamp_prob(p_fake(i))));
    }
    loss_d /= S(p_fake.size());
    loss_g /= S(p_fake.size());
    loss_g += lambda1 * perceptual_loss(v_hat, v_tgt, phi);
    return {loss_d, loss_g};
}

template <typename S>
struct Stage1TrainState {
    nn::Adam<S> adam_g, adam_d;
    long step = 0;

    static Stage1TrainState make(const HyperParams& hp) {
        Stage1TrainState st;
        st.adam_g = nn::Adam<S>(S(hp.beta1), S(hp.beta2));
        st.adam_d = nn::Adam<S>(S(hp.beta1), S(hp.beta2));
        return st;
    }
};

struct Stage1Metrics {
    double loss_d = 0, loss_g = 0, perceptual = 0, adversarial = 0, lr = 0;
    long step = 0;
};

// Full tracked generator pass shared by the train step.
template <typename S>
struct Stage1Forward {
    KeypointChainCache<S> chain_ref, chain_tgt;
    KeypointBatch<S> k_ref, k_tgt;
    std::vector<GaussianMapStack<S>> gauss_ref, gauss_tgt;
    nn::Tensor<S> v, mask, synth, v_hat;
};

template <typename S>
Stage1Forward<S> stage1_forward(Stage1Model<S>& model, const nn::Tensor<S>& v, const nn::Tensor<S>& vp,
                                bool track) {
    const auto& hp = model.hp;
    Stage1Forward<S> f;
    f.v = v;
    nn::Tensor<S> logits_ref = model.detector.forward(v, track);
    f.k_ref = keypoints_from_logits<S>(logits_ref, track ? &f.chain_ref : nullptr);
    nn::Tensor<S> logits_tgt = model.detector.forward(vp, track);
    f.k_tgt = keypoints_from_logits<S>(logits_tgt, track ? &f.chain_tgt : nullptr);
    nn::Tensor<S> x;
    if (hp.use_reference_keypoints) {
        nn::Tensor<S> d_ref = render_gaussian_tensor<S>(f.k_ref, hp.map_h(), hp.map_w(), S(hp.sigma),
                                                        track ? &f.gauss_ref : nullptr);
        nn::Tensor<S> d_tgt = render_gaussian_tensor<S>(f.k_tgt, hp.map_h(), hp.map_w(), S(hp.sigma),
                                                        track ? &f.gauss_tgt : nullptr);
        x = nn::concat_channels(nn::concat_channels(v, d_ref), d_tgt);
    } else {
        nn::Tensor<S> d_tgt = render_gaussian_tensor<S>(f.k_tgt, hp.map_h(), hp.map_w(), S(hp.sigma),
                                                        track ? &f.gauss_tgt : nullptr);
        x = nn::concat_channels(v, d_tgt);
    }
    auto [m, s] = model.translator.forward(x, track);
    if (!hp.use_mask) m.data.setZero();
    f.v_hat = blend_with_mask(v, m, s);
    f.mask = std::move(m);
    f.synth = std::move(s);
    return f;
}

// Backpropagates d(loss)/d(v_hat) through translator, renderer and detector,
// accumulating generator parameter gradients.
template <typename S>
void stage1_backward(Stage1Model<S>& model, Stage1Forward<S>& f, const nn::Tensor<S>& gvhat) {
    const auto& hp = model.hp;
    nn::Tensor<S> gm, gs;
    blend_backward(f.v, f.mask, f.synth, gvhat, gm, gs);
    if (!hp.use_mask) gm.data.setZero();
    nn::Tensor<S> gx = model.translator.backward(gm, gs);
    const int k = hp.keypoint_count;
    nn::Tensor<S> g_d_tgt = nn::slice_channels(gx, gx.c - k, k);
    std::vector<Coords<S>> gk_tgt = render_gaussian_tensor_backward<S>(f.k_tgt, f.gauss_tgt, g_d_tgt);
    // Detector branches were forwarded ref-then-tgt; unwind in reverse.
    nn::Tensor<S> glogits_tgt = keypoint_chain_backward<S>(f.chain_tgt, gk_tgt);
    model.detector.backward(glogits_tgt);
    if (hp.use_reference_keypoints) {
        nn::Tensor<S> g_d_ref = nn::slice_channels(gx, 3, k);
        std::vector<Coords<S>> gk_ref = render_gaussian_tensor_backward<S>(f.k_ref, f.gauss_ref, g_d_ref);
        nn::Tensor<S> glogits_ref = keypoint_chain_backward<S>(f.chain_ref, gk_ref);
        model.detector.backward(glogits_ref);
    } else {
        // The ref branch still has a pending detector cache; unwind with zeros.
        nn::Tensor<S> zeros(f.chain_ref.maps.empty() ? gvhat.n : static_cast<int>(f.chain_ref.maps.size()),
                            k, f.chain_ref.h, f.chain_ref.w);
        model.detector.backward(zeros);
    }
}

// Computes the tracked stage-1 generator loss and gradients; exposed for
// finite-difference verification as well as the train step.
template <typename S>
Stage1Metrics stage1_generator_loss_and_grad(Stage1Model<S>& model, const nn::Tensor<S>& v,
                                             const nn::Tensor<S>& vp, bool do_backward = true) {
    const auto& hp = model.hp;
    Stage1Forward<S> f = stage1_forward(model, v, vp, do_backward);
    Vector<S> p_fake = model.discriminator.forward(f.v_hat, do_backward);
    PerceptualCache<S> pc;
    S perc = do_backward ? perceptual_loss_forward<S>(f.v_hat, vp, model.perceptual, pc)
                         : perceptual_loss<S>(f.v_hat, vp, model.perceptual);
    S adv = S(0);
    for (Eigen::Index i = 0; i < p_fake.size(); ++i) adv += S(-std::log(clamp_prob(p_fake(i))));
    adv /= S(p_fake.size());
    Stage1Metrics mtr;
    mtr.perceptual = double(perc);
    mtr.adversarial = double(adv);
    mtr.loss_g = double(adv + S(hp.lambda1) * perc);
    if (do_backward) {
        nn::Tensor<S> gvhat = perceptual_loss_backward<S>(model.perceptual, pc, S(hp.lambda1));
        Vector<S> gp(p_fake.size());
        for (Eigen::Index i = 0; i < p_fake.size(); ++i)
            gp(i) = p_fake(i) > S(1e-7) ? S(-1) / (p_fake(i) * S(p_fake.size())) : S(0);
        gvhat.data += model.discriminator.backward(gp).data;
        stage1_backward(model, f, gvhat);
    }
    return mtr;
}

// One discriminator update followed by one generator update.
template <typename S>
Stage1Metrics train_translator_step(Stage1Model<S>& model, Stage1TrainState<S>& state,
                                    const nn::Tensor<S>& v, const nn::Tensor<S>& vp) {
    const auto& hp = model.hp;
    const S lr = nn::scheduled_lr<S>(S(hp.learning_rate), S(hp.lr_decay), hp.lr_decay_every, state.step);

    // Discriminator update on L_D = -log D(v') - log(1 - D(v_hat)).
    nn::Tensor<S> v_hat_detached = stage1_forward(model, v, vp, false).v_hat;
    auto d_params = model.discriminator_params();
    d_params.zero_grads();
    Vector<S> p_real = model.discriminator.forward(vp, true);
    Vector<S> p_fake = model.discriminator.forward(v_hat_detached, true);
    const Eigen::Index n = p_real.size();
    double loss_d = 0;
    Vector<S> gp_fake(n), gp_real(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        loss_d += -std::log(clamp_prob(p_real(i))) - std::log(clamp_prob(1.0 - p_fake(i)));
        gp_fake(i) = (1.0 - p_fake(i)) > S(1e-7) ? S(1) / ((S(1) - p_fake(i)) * S(n)) : S(0);
        gp_real(i) = p_real(i) > S(1e-7) ? S(-1) / (p_real(i) * S(n)) : S(0);
    }
    loss_d /= double(n);
    model.discriminator.backward(gp_fake);
    model.discriminator.backward(gp_real);
    state.adam_d.step(d_params, lr);

    // Generator update on L_QT = -log D(v_hat) + lambda1 * perceptual.
    auto g_params = model.generator_params();
    g_params.zero_grads();
    Stage1Metrics mtr = stage1_generator_loss_and_grad(model, v, vp, true);
    state.adam_g.step(g_params, lr);

    mtr.loss_d = loss_d;
    mtr.lr = double(lr);
    mtr.step = state.step;
    if (!std::isfinite(mtr.loss_d) || !std::isfinite(mtr.loss_g))
        throw NumericError("train_translator_step: non-finite loss at step " + std::to_string(state.step) +
                           " (L_D=" + std::to_string(mtr.loss_d) + ", L_QT=" + std::to_string(mtr.loss_g) + ")");
    ++state.step;
    return mtr;
}

}  // namespace kpvp
