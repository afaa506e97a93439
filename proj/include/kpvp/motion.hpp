#pragma once

// Stage 2: conditional sequence VAE over keypoint trajectories (recurrent
// encoder/decoder conditioned on the initial keypoints and the action
// class), the keypoint-sequence discriminator, and the alternating
// VAE/adversarial training step.

#include <string>
#include <vector>

#include "kpvp/hyperparams.hpp"
#include "kpvp/keypoint_core.hpp"
#include "kpvp/nn.hpp"

namespace kpvp {

template <typename S>
using KeypointSequence = std::vector<KeypointSet<S>>;  // index 0 = initial frame

template <typename S>
struct LatentPosterior {
    Matrix<S> mean;    // (latent_dim, N)
    Matrix<S> logvar;  // (latent_dim, N)
};

// Flattens a keypoint set to a (2K, 1) column: (x0, y0, x1, y1, ...).
template <typename S>
Vector<S> flatten_keypoints(const KeypointSet<S>& k) {
    Vector<S> v(k.coords.rows() * 2);
    for (Eigen::Index i = 0; i < k.coords.rows(); ++i) {
        v(2 * i) = k.coords(i, 0);
        v(2 * i + 1) = k.coords(i, 1);
    }
    return v;
}

template <typename S>
KeypointSet<S> unflatten_keypoints(const Vector<S>& v) {
    KeypointSet<S> k;
    k.coords.resize(v.size() / 2, 2);
    for (Eigen::Index i = 0; i < k.coords.rows(); ++i) {
        k.coords(i, 0) = v(2 * i);
        k.coords(i, 1) = v(2 * i + 1);
    }
    return k;
}

template <typename S>
Vector<S> one_hot(int index, int count) {
    if (index < 0 || index >= count) throw InvalidInputError("one_hot: index out of range");
    Vector<S> v = Vector<S>::Zero(count);
    v(index) = S(1);
    return v;
}

// --- Recurrent encoder ----------------------------------------------------------

template <typename S>
class MotionEncoder {
  public:
    MotionEncoder() = default;
    MotionEncoder(int k, int action_count, int hidden, int latent, Rng& rng)
        : hidden_(hidden),
          cell_(4 * k + action_count, hidden, rng),
          head_(hidden, 2 * latent, rng) {}

    // steps: T matrices of shape (2K, N); cond: (2K + C, N).
    LatentPosterior<S> forward(const std::vector<Matrix<S>>& steps, const Matrix<S>& cond, bool track) {
        Matrix<S> h = Matrix<S>::Zero(hidden_, cond.cols());
        for (const auto& x : steps) {
            Matrix<S> in(x.rows() + cond.rows(), x.cols());
            in << x, cond;
            h = cell_.step(in, h, track);
        }
        Matrix<S> out = head_.forward(h, track);
        LatentPosterior<S> p;
        p.mean = out.topRows(out.rows() / 2);
        p.logvar = out.bottomRows(out.rows() / 2);
        if (track) steps_tracked_.push_back(static_cast<int>(steps.size()));
        return p;
    }

    void backward(const Matrix<S>& dmean, const Matrix<S>& dlogvar) {
        const int t_count = steps_tracked_.back();
        steps_tracked_.pop_back();
        Matrix<S> dout(dmean.rows() * 2, dmean.cols());
        dout << dmean, dlogvar;
        Matrix<S> dh = head_.backward(dout);
        for (int t = 0; t < t_count; ++t) {
            auto [dx, dh_prev] = cell_.step_backward(dh);
            dh = std::move(dh_prev);
        }
    }

    void collect(nn::ParamList<S>& out, const std::string& prefix) {
        cell_.collect(out, prefix + ".gru");
        head_.collect(out, prefix + ".head");
    }

  private:
    int hidden_ = 0;
    nn::GRUCell<S> cell_;
    nn::Linear<S> head_;
    std::vector<int> steps_tracked_;
};

// --- Recurrent decoder ----------------------------------------------------------

// Unrolls T steps from (z, k0, a). Each step consumes the previous keypoint
// vector plus the conditioning; by default the output head predicts a
// coordinate delta which is added to the previous frame and squashed.
template <typename S>
class MotionDecoder {
  public:
    MotionDecoder() = default;
    MotionDecoder(int k, int action_count, int hidden, int latent, bool predict_deltas, Rng& rng)
        : hidden_(hidden),
          predict_deltas_(predict_deltas),
          init_(latent, hidden, rng),
          cell_(4 * k + action_count, hidden, rng),
          head_(hidden, 2 * k, rng) {}

    // Returns T matrices of shape (2K, N) in [-1, 1].
    std::vector<Matrix<S>> forward(const Matrix<S>& z, const Matrix<S>& k0, const Matrix<S>& cond,
                                   int horizon, bool track) {
        if (horizon < 1) throw InvalidInputError("decode_motion: horizon must be >= 1");
        Cache ctx;
        Matrix<S> h0_pre = init_.forward(z, track);
        Matrix<S> h = h0_pre.array().tanh();
        if (track) ctx.h0 = h;
        Matrix<S> k_prev = k0;
        std::vector<Matrix<S>> out;
        out.reserve(horizon);
        for (int t = 0; t < horizon; ++t) {
            Matrix<S> in(k_prev.rows() + cond.rows(), k_prev.cols());
            in << k_prev, cond;
            h = cell_.step(in, h, track);
            Matrix<S> delta = head_.forward(h, track);
            Matrix<S> pre = predict_deltas_ ? (k_prev + delta).eval() : delta;
            Matrix<S> k = pre.array().tanh();
            if (track) ctx.k.push_back(k);
            out.push_back(k);
            k_prev = std::move(k);
        }
        if (track) cache_.push_back(std::move(ctx));
        return out;
    }

    // grad_steps: gradient w.r.t. each emitted keypoint matrix. Returns dz.
    Matrix<S> backward(const std::vector<Matrix<S>>& grad_steps) {
        Cache ctx = std::move(cache_.back());
        cache_.pop_back();
        const int horizon = static_cast<int>(grad_steps.size());
        Matrix<S> dk_carry = Matrix<S>::Zero(grad_steps[0].rows(), grad_steps[0].cols());
        Matrix<S> dh = Matrix<S>::Zero(hidden_, grad_steps[0].cols());
        const int k_rows = static_cast<int>(grad_steps[0].rows());
        for (int t = horizon - 1; t >= 0; --t) {
            Matrix<S> dk_total = grad_steps[t] + dk_carry;
            Matrix<S> dpre = (dk_total.array() * (S(1) - ctx.k[t].array().square())).matrix();
            dk_carry = predict_deltas_ ? dpre : Matrix<S>::Zero(dpre.rows(), dpre.cols()).eval();
            dh += head_.backward(dpre);
            auto [dx, dh_prev] = cell_.step_backward(dh);
            dk_carry += dx.topRows(k_rows);
            dh = std::move(dh_prev);
        }
        // dk_carry now targets k0 (conditioning data); discard.
        Matrix<S> dh0_pre = (dh.array() * (S(1) - ctx.h0.array().square())).matrix();
        return init_.backward(dh0_pre);
    }

    void collect(nn::ParamList<S>& out, const std::string& prefix) {
        init_.collect(out, prefix + ".init");
        cell_.collect(out, prefix + ".gru");
        head_.collect(out, prefix + ".head");
    }

  private:
    struct Cache {
        Matrix<S> h0;
        std::vector<Matrix<S>> k;
    };
    int hidden_ = 0;
    bool predict_deltas_ = true;
    nn::Linear<S> init_;
    nn::GRUCell<S> cell_;
    nn::Linear<S> head_;
    std::vector<Cache> cache_;
};

// --- Sequence discriminator -------------------------------------------------------

// Temporal 1-D convolutional classifier over the whole trajectory,
// conditioned on (k0, a) broadcast along time.
template <typename S>
class SeqDiscriminator {
  public:
    SeqDiscriminator() = default;
    SeqDiscriminator(int k, int action_count, int channels, Rng& rng)
        : k_(k),
          conv0_(4 * k + action_count, channels, 1, 3, 1, 2, 0, 1, rng),
          conv1_(channels, 2 * channels, 1, 3, 1, 2, 0, 1, rng),
          head_(2 * channels, 1, 1, 1, 0, rng) {}

    // steps: T matrices (2K, N); cond: (2K + C, N).
    Vector<S> forward(const std::vector<Matrix<S>>& steps, const Matrix<S>& cond, bool track) {
        const int horizon = static_cast<int>(steps.size());
        const int n = static_cast<int>(cond.cols());
        nn::Tensor<S> x(n, static_cast<int>(steps[0].rows() + cond.rows()), 1, horizon);
        for (int b = 0; b < n; ++b)
            for (int t = 0; t < horizon; ++t) {
                x.sample(b).col(t).topRows(steps[t].rows()) = steps[t].col(b);
                x.sample(b).col(t).bottomRows(cond.rows()) = cond.col(b);
            }
        nn::Tensor<S> h = conv0_.forward(x, track);
        h.data = a0_.forward(h.data, track);
        h = conv1_.forward(h, track);
        h.data = a1_.forward(h.data, track);
        h = head_.forward(h, track);
        Vector<S> logits(h.n);
        for (int b = 0; b < h.n; ++b) logits(b) = h.sample(b).mean();
        Vector<S> p = (S(1) / (S(1) + (-logits.array()).exp())).matrix();
        if (track) {
            cache_probs_.push_back(p);
            cache_shape_.push_back({h.n, h.w, horizon});
        }
        return p;
    }

    // Returns the gradient w.r.t. the sequence steps (conditioning grad dropped).
    std::vector<Matrix<S>> backward(const Vector<S>& gp) {
        Vector<S> p = std::move(cache_probs_.back());
        cache_probs_.pop_back();
        auto shape = cache_shape_.back();
        cache_shape_.pop_back();
        Vector<S> glogit = (gp.array() * p.array() * (S(1) - p.array())).matrix();
        nn::Tensor<S> g(shape.n, 1, 1, shape.w);
        const S inv = S(1) / S(shape.w);
        for (int b = 0; b < shape.n; ++b) g.sample(b).setConstant(glogit(b) * inv);
        nn::Tensor<S> x = head_.backward(g);
        x.data = a1_.backward(x.data);
        x = conv1_.backward(x);
        x.data = a0_.backward(x.data);
        nn::Tensor<S> gx = conv0_.backward(x);
        std::vector<Matrix<S>> out(shape.horizon);
        for (int t = 0; t < shape.horizon; ++t) {
            out[t].resize(2 * k_, shape.n);
            for (int b = 0; b < shape.n; ++b) out[t].col(b) = gx.sample(b).col(t).topRows(2 * k_);
        }
        return out;
    }

    void collect(nn::ParamList<S>& out, const std::string& prefix) {
        conv0_.collect(out, prefix + ".conv0");
        conv1_.collect(out, prefix + ".conv1");
        head_.collect(out, prefix + ".head");
    }

  private:
    struct Shape {
        int n, w, horizon;
    };
    int k_ = 0;
    nn::Conv2d<S> conv0_, conv1_, head_;
    nn::LeakyReLU<S> a0_, a1_;
    std::vector<Vector<S>> cache_probs_;
    std::vector<Shape> cache_shape_;
};

// --- Model bundle for stage 2 -------------------------------------------------------

template <typename S>
struct MotionModel {
    HyperParams hp;
    MotionEncoder<S> encoder;
    MotionDecoder<S> decoder;
    SeqDiscriminator<S> discriminator;

    static MotionModel make(const HyperParams& hp, std::uint64_t seed) {
        hp.validate();
        Rng rng(seed);
        MotionModel m;
        m.hp = hp;
        m.encoder = MotionEncoder<S>(hp.keypoint_count, hp.action_count, hp.rnn_hidden, hp.latent_dim, rng);
        m.decoder = MotionDecoder<S>(hp.keypoint_count, hp.action_count, hp.rnn_hidden, hp.latent_dim,
                                     hp.motion_predicts_deltas, rng);
        m.discriminator = SeqDiscriminator<S>(hp.keypoint_count, hp.action_count,
                                              std::max(8, hp.rnn_hidden / 4), rng);
        return m;
    }

    nn::ParamList<S> generator_params() {
        nn::ParamList<S> p;
        encoder.collect(p, "motion.encoder");
        decoder.collect(p, "motion.decoder");
        return p;
    }
    nn::ParamList<S> discriminator_params() {
        nn::ParamList<S> p;
        discriminator.collect(p, "sequence_discriminator");
        return p;
    }
    nn::ParamList<S> all_params() {
        nn::ParamList<S> p = generator_params();
        p.append(discriminator_params());
        return p;
    }
};

// --- Public single-sequence operations ----------------------------------------------

template <typename S>
std::vector<Matrix<S>> sequence_to_steps(const KeypointSequence<S>& seq, int from = 1) {
    std::vector<Matrix<S>> steps;
    for (std::size_t t = from; t < seq.size(); ++t) steps.push_back(flatten_keypoints<S>(seq[t]));
    return steps;
}

template <typename S>
Matrix<S> make_condition(const KeypointSet<S>& k0, const Vector<S>& action) {
    Vector<S> f = flatten_keypoints<S>(k0);
    Matrix<S> cond(f.size() + action.size(), 1);
    cond << f, action;
    return cond;
}

template <typename S>
LatentPosterior<S> encode_motion(const KeypointSequence<S>& seq, const Vector<S>& action,
                                 MotionModel<S>& model) {
    if (static_cast<int>(seq.size()) != model.hp.horizon + 1)
        throw InvalidInputError("encode_motion: sequence length must be horizon + 1");
    return model.encoder.forward(sequence_to_steps<S>(seq), make_condition<S>(seq[0], action), false);
}

template <typename S>
Matrix<S> reparameterize(const LatentPosterior<S>& p, const Matrix<S>& noise) {
    if (noise.rows() != p.mean.rows() || noise.cols() != p.mean.cols())
        throw InvalidInputError("reparameterize: noise dimension mismatch");
    return p.mean.array() + (p.logvar.array() / S(2)).exp() * noise.array();
}

template <typename S>
KeypointSequence<S> decode_motion(const Matrix<S>& z, const KeypointSet<S>& k0, const Vector<S>& action,
                                  int horizon, MotionModel<S>& model) {
    auto steps = model.decoder.forward(z, flatten_keypoints<S>(k0), make_condition<S>(k0, action),
                                       horizon, false);
    KeypointSequence<S> out;
    for (const auto& s : steps) out.push_back(unflatten_keypoints<S>(Vector<S>(s.col(0))));
    return out;
}

// Closed-form KL(N(mean, diag exp(logvar)) || N(0, I)), summed over
// dimensions, averaged over the batch.
template <typename S>
S kl_divergence(const LatentPosterior<S>& p) {
    return S(0.5) *
           (p.mean.array().square() + p.logvar.array().exp() - S(1) - p.logvar.array()).sum() /
           S(p.mean.cols());
}

// Draws z ~ N(0, I) from a seeded generator and decodes.
template <typename S>
KeypointSequence<S> sample_motion(const KeypointSet<S>& k0, const Vector<S>& action, int horizon,
                                  MotionModel<S>& model, std::uint64_t seed) {
    Rng rng(seed);
    std::normal_distribution<double> dist(0.0, 1.0);
    Matrix<S> z(model.hp.latent_dim, 1);
    for (Eigen::Index i = 0; i < z.rows(); ++i) z(i, 0) = S(dist(rng));
    return decode_motion<S>(z, k0, action, horizon, model);
}

// --- Losses and training -------------------------------------------------------------

inline double clamp_prob_seq(double p) { return std::max(p, 1e-7); }

template <typename S>
std::pair<S, S> motion_losses(const KeypointSequence<S>& seq_true, const KeypointSequence<S>& seq_recon,
                              const LatentPosterior<S>& p, MotionModel<S>& model, S lambda2, S lambda3,
                              const Vector<S>& action) {
    if (seq_true.size() != seq_recon.size() + 1 && seq_true.size() != seq_recon.size())
        throw InvalidInputError("motion_losses: sequence length mismatch");
    // seq_true carries the initial frame; seq_recon covers steps 1..T.
    const int offset = static_cast<int>(seq_true.size()) - static_cast<int>(seq_recon.size());
    auto steps_true = sequence_to_steps<S>(seq_true, offset);
    std::vector<Matrix<S>> steps_recon;
    for (const auto& k : seq_recon) steps_recon.push_back(flatten_keypoints<S>(k));
    Matrix<S> cond = make_condition<S>(seq_true[0], action);
    Vector<S> p_real = model.discriminator.forward(steps_true, cond, false);
    Vector<S> p_fake = model.discriminator.forward(steps_recon, cond, false);
    S loss_d = S(-std::log(clamp_prob_seq(p_real(0))) - std::log(clamp_prob_seq(1.0 - p_fake(0))));
    S l1 = S(0);
    for (std::size_t t = 0; t < steps_true.size(); ++t)
        l1 += (steps_true[t] - steps_recon[t]).array().abs().mean();
    l1 /= S(steps_true.size());
    S loss_m = kl_divergence<S>(p) + lambda2 * l1 - lambda3 * S(std::log(clamp_prob_seq(p_fake(0))));
    return {loss_d, loss_m};
}

template <typename S>
struct Stage2TrainState {
    nn::Adam<S> adam_m, adam_d;
    long step = 0;
    Rng rng{0};

    static Stage2TrainState make(const HyperParams& hp, std::uint64_t seed) {
        Stage2TrainState st;
        st.adam_m = nn::Adam<S>(S(hp.beta1), S(hp.beta2));
        st.adam_d = nn::Adam<S>(S(hp.beta1), S(hp.beta2));
        st.rng = Rng(seed);
        return st;
    }
};

struct Stage2Metrics {
    double kl = 0, l1 = 0, adversarial = 0, loss_d = 0, loss_m = 0, lr = 0;
    long step = 0;
};

// Batched stage-2 objective with gradients; exposed for finite-difference
// checks. steps_true: T matrices (2K, N); cond (2K + C, N); noise (latent, N).
template <typename S>
Stage2Metrics stage2_generator_loss_and_grad(MotionModel<S>& model, const std::vector<Matrix<S>>& steps_true,
                                             const Matrix<S>& k0, const Matrix<S>& cond,
                                             const Matrix<S>& noise, bool do_backward = true) {
    const auto& hp = model.hp;
    const int horizon = static_cast<int>(steps_true.size());
    const int n = static_cast<int>(cond.cols());
    LatentPosterior<S> post = model.encoder.forward(steps_true, cond, do_backward);
    Matrix<S> sigma_half = (post.logvar.array() / S(2)).exp().matrix();
    Matrix<S> z = (post.mean.array() + sigma_half.array() * noise.array()).matrix();
    auto recon = model.decoder.forward(z, k0, cond, horizon, do_backward);

    S kl = kl_divergence<S>(post);
    S l1 = S(0);
    for (int t = 0; t < horizon; ++t) l1 += (steps_true[t] - recon[t]).array().abs().mean();
    l1 /= S(horizon);
    Vector<S> p_fake = model.discriminator.forward(recon, cond, do_backward);
    S adv = S(0);
    for (int b = 0; b < n; ++b) adv += S(-std::log(clamp_prob_seq(p_fake(b))));
    adv /= S(n);

    Stage2Metrics mtr;
    mtr.kl = double(kl);
    mtr.l1 = double(l1);
    mtr.adversarial = double(adv);
    mtr.loss_m = double(kl + S(hp.lambda2) * l1 + S(hp.lambda3) * adv);

    if (do_backward) {
        // Adversarial path: -lambda3 * log D(recon).
        Vector<S> gp(n);
        for (int b = 0; b < n; ++b)
            gp(b) = p_fake(b) > S(1e-7) ? S(-hp.lambda3) / (p_fake(b) * S(n)) : S(0);
        std::vector<Matrix<S>> grad_steps = model.discriminator.backward(gp);
        // L1 path.
        const S l1_scale = S(hp.lambda2) / (S(horizon) * S(steps_true[0].size()));
        for (int t = 0; t < horizon; ++t)
            grad_steps[t] += ((recon[t] - steps_true[t]).array().sign() * l1_scale).matrix();
        Matrix<S> dz = model.decoder.backward(grad_steps);
        // Reparameterization.
        Matrix<S> dmean = dz;
        Matrix<S> dlogvar = (dz.array() * sigma_half.array() * noise.array() * S(0.5)).matrix();
        // KL closed form.
        dmean += (post.mean / S(n)).eval();
        dlogvar += (S(0.5) * (post.logvar.array().exp() - S(1)) / S(n)).matrix();
        model.encoder.backward(dmean, dlogvar);
    }
    return mtr;
}

// One D_seq update then one M update on a batch of sequences.
template <typename S>
Stage2Metrics train_motion_step(MotionModel<S>& model, Stage2TrainState<S>& state,
                                const std::vector<KeypointSequence<S>>& sequences,
                                const std::vector<int>& actions) {
    const auto& hp = model.hp;
    const int n = static_cast<int>(sequences.size());
    const int horizon = static_cast<int>(sequences[0].size()) - 1;
    const int k2 = 2 * hp.keypoint_count;

    std::vector<Matrix<S>> steps_true(horizon, Matrix<S>(k2, n));
    Matrix<S> k0(k2, n), cond(k2 + hp.action_count, n);
    for (int b = 0; b < n; ++b) {
        if (static_cast<int>(sequences[b].size()) != horizon + 1)
            throw InvalidInputError("train_motion_step: ragged sequence lengths");
        k0.col(b) = flatten_keypoints<S>(sequences[b][0]);
        cond.col(b) = make_condition<S>(sequences[b][0], one_hot<S>(actions[b], hp.action_count)).col(0);
        for (int t = 0; t < horizon; ++t) steps_true[t].col(b) = flatten_keypoints<S>(sequences[b][t + 1]);
    }

    std::normal_distribution<double> dist(0.0, 1.0);
    Matrix<S> noise(hp.latent_dim, n);
    for (Eigen::Index i = 0; i < noise.size(); ++i) noise.data()[i] = S(dist(state.rng));

    const S lr = nn::scheduled_lr<S>(S(hp.learning_rate), S(hp.lr_decay), hp.lr_decay_every, state.step);

    // Discriminator update.
    {
        LatentPosterior<S> post = model.encoder.forward(steps_true, cond, false);
        Matrix<S> z = reparameterize<S>(post, noise);
        auto recon = model.decoder.forward(z, k0, cond, horizon, false);
        auto d_params = model.discriminator_params();
        d_params.zero_grads();
        Vector<S> p_real = model.discriminator.forward(steps_true, cond, true);
        Vector<S> p_fake = model.discriminator.forward(recon, cond, true);
        Vector<S> gp_real(n), gp_fake(n);
        double loss_d = 0;
        for (int b = 0; b < n; ++b) {
            loss_d += -std::log(clamp_prob_seq(p_real(b))) - std::log(clamp_prob_seq(1.0 - p_fake(b)));
            gp_real(b) = p_real(b) > S(1e-7) ? S(-1) / (p_real(b) * S(n)) : S(0);
            gp_fake(b) = (S(1) - p_fake(b)) > S(1e-7) ? S(1) / ((S(1) - p_fake(b)) * S(n)) : S(0);
        }
        model.discriminator.backward(gp_fake);
        model.discriminator.backward(gp_real);
        state.adam_d.step(d_params, lr);
        loss_d /= n;

        // Generator update.
        auto m_params = model.generator_params();
        m_params.zero_grads();
        Stage2Metrics mtr = stage2_generator_loss_and_grad(model, steps_true, k0, cond, noise, true);
        state.adam_m.step(m_params, lr);
        mtr.loss_d = loss_d;
        mtr.lr = double(lr);
        mtr.step = state.step;
        if (!std::isfinite(mtr.loss_m) || !std::isfinite(mtr.loss_d))
            throw NumericError("train_motion_step: non-finite loss at step " + std::to_string(state.step));
        ++state.step;
        return mtr;
    }
}

}  // namespace kpvp
