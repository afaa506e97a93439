#include <doctest.h>

#include <cmath>
#include <random>

#include "kpvp/motion.hpp"

using namespace kpvp;

namespace {

HyperParams tiny_hp() {
    HyperParams hp;
    hp.keypoint_count = 2;
    hp.action_count = 2;
    hp.latent_dim = 2;
    hp.rnn_hidden = 8;
    hp.horizon = 3;
    return hp;
}

KeypointSet<double> random_kps(int k, Rng& rng) {
    std::uniform_real_distribution<double> dist(-0.8, 0.8);
    KeypointSet<double> out;
    out.coords.resize(k, 2);
    for (Eigen::Index i = 0; i < out.coords.size(); ++i) out.coords.data()[i] = dist(rng);
    return out;
}

KeypointSequence<double> random_sequence(int k, int frames, Rng& rng) {
    KeypointSequence<double> seq;
    for (int t = 0; t < frames; ++t) seq.push_back(random_kps(k, rng));
    return seq;
}

void zero_seq_discriminator_head(SeqDiscriminator<double>& d) {
    nn::ParamList<double> p;
    d.collect(p, "d");
    for (std::size_t i = 0; i < p.size(); ++i)
        if (p.names[i] == "d.head.weight" || p.names[i] == "d.head.bias") p.values[i]->setZero();
}

}  // namespace

TEST_CASE("keypoint flatten/unflatten round-trips") {
    Rng rng(1);
    KeypointSet<double> k = random_kps(5, rng);
    auto back = unflatten_keypoints(flatten_keypoints(k));
    CHECK((back.coords - k.coords).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("one-hot codes are valid and bounds-checked") {
    auto v = one_hot<double>(1, 3);
    CHECK(v.sum() == 1.0);
    CHECK(v(1) == 1.0);
    CHECK_THROWS_AS(one_hot<double>(3, 3), InvalidInputError);
    CHECK_THROWS_AS(one_hot<double>(-1, 3), InvalidInputError);
}

TEST_CASE("KL divergence closed forms") {
    LatentPosterior<double> p;
    p.mean = Matrix<double>::Zero(4, 1);
    p.logvar = Matrix<double>::Zero(4, 1);
    CHECK(kl_divergence(p) == doctest::Approx(0.0).epsilon(1e-12));

    p.mean = Matrix<double>::Constant(1, 1, 1.0);
    p.logvar = Matrix<double>::Zero(1, 1);
    CHECK(kl_divergence(p) == doctest::Approx(0.5).epsilon(1e-9));

    Rng rng(7);
    std::normal_distribution<double> dist;
    p.mean.resize(6, 3);
    p.logvar.resize(6, 3);
    for (Eigen::Index i = 0; i < p.mean.size(); ++i) {
        p.mean.data()[i] = dist(rng);
        p.logvar.data()[i] = dist(rng);
    }
    CHECK(kl_divergence(p) >= 0.0);

    // Zero only at the prior itself.
    p.mean.setZero();
    p.logvar.setConstant(0.3);
    CHECK(kl_divergence(p) > 1e-9);
}

TEST_CASE("reparameterization trick") {
    LatentPosterior<double> p;
    p.mean = Matrix<double>::Constant(3, 1, 0.7);
    p.logvar = Matrix<double>::Zero(3, 1);

    Matrix<double> zero_noise = Matrix<double>::Zero(3, 1);
    CHECK((reparameterize(p, zero_noise) - p.mean).cwiseAbs().maxCoeff() == 0.0);

    Matrix<double> n = Matrix<double>::Constant(3, 1, 0.25);
    CHECK((reparameterize(p, n) - (p.mean + n)).cwiseAbs().maxCoeff() < 1e-12);

    p.mean = Matrix<double>::Zero(1, 1);
    p.logvar = Matrix<double>::Constant(1, 1, std::log(4.0));
    Matrix<double> one = Matrix<double>::Ones(1, 1);
    CHECK(reparameterize(p, one)(0, 0) == doctest::Approx(2.0).epsilon(1e-12));

    Matrix<double> wrong = Matrix<double>::Zero(2, 1);
    CHECK_THROWS_AS(reparameterize(p, wrong), InvalidInputError);
}

TEST_CASE("encoder emits latent_dim posterior deterministically and checks length") {
    HyperParams hp = tiny_hp();
    auto model = MotionModel<double>::make(hp, 3);
    Rng rng(4);
    auto seq = random_sequence(hp.keypoint_count, hp.horizon + 1, rng);
    auto a = one_hot<double>(0, hp.action_count);
    auto p1 = encode_motion(seq, a, model);
    auto p2 = encode_motion(seq, a, model);
    CHECK(p1.mean.rows() == hp.latent_dim);
    CHECK(p1.logvar.rows() == hp.latent_dim);
    CHECK((p1.mean - p2.mean).cwiseAbs().maxCoeff() == 0.0);
    CHECK((p1.logvar - p2.logvar).cwiseAbs().maxCoeff() == 0.0);

    auto too_short = random_sequence(hp.keypoint_count, hp.horizon, rng);
    CHECK_THROWS_AS(encode_motion(too_short, a, model), InvalidInputError);
}

TEST_CASE("decoder emits exactly T squashed frames for T in 1..64") {
    HyperParams hp = tiny_hp();
    auto model = MotionModel<double>::make(hp, 11);
    Rng rng(12);
    KeypointSet<double> k0 = random_kps(hp.keypoint_count, rng);
    auto a = one_hot<double>(1, hp.action_count);
    Matrix<double> z = Matrix<double>::Constant(hp.latent_dim, 1, 0.3);
    for (int t = 1; t <= 64; ++t) {
        auto seq = decode_motion(z, k0, a, t, model);
        REQUIRE(static_cast<int>(seq.size()) == t);
        for (const auto& k : seq) CHECK(k.coords.cwiseAbs().maxCoeff() <= 1.0);
    }
    CHECK_THROWS_AS(decode_motion(z, k0, a, 0, model), InvalidInputError);
}

TEST_CASE("sample_motion is seed-reproducible and seed-sensitive") {
    HyperParams hp = tiny_hp();
    auto model = MotionModel<double>::make(hp, 17);
    Rng rng(18);
    KeypointSet<double> k0 = random_kps(hp.keypoint_count, rng);
    auto a = one_hot<double>(0, hp.action_count);
    auto s1 = sample_motion(k0, a, hp.horizon, model, 42);
    auto s2 = sample_motion(k0, a, hp.horizon, model, 42);
    auto s3 = sample_motion(k0, a, hp.horizon, model, 43);
    double same = 0, diff = 0;
    for (int t = 0; t < hp.horizon; ++t) {
        same = std::max(same, (s1[t].coords - s2[t].coords).cwiseAbs().maxCoeff());
        diff += (s1[t].coords - s3[t].coords).cwiseAbs().mean();
    }
    CHECK(same == 0.0);
    CHECK(diff > 0.0);
}

TEST_CASE("motion losses at a 0.5-probability discriminator") {
    HyperParams hp = tiny_hp();
    auto model = MotionModel<double>::make(hp, 23);
    zero_seq_discriminator_head(model.discriminator);
    Rng rng(24);
    auto seq = random_sequence(hp.keypoint_count, hp.horizon + 1, rng);
    KeypointSequence<double> recon(seq.begin() + 1, seq.end());
    LatentPosterior<double> prior;
    prior.mean = Matrix<double>::Zero(hp.latent_dim, 1);
    prior.logvar = Matrix<double>::Zero(hp.latent_dim, 1);
    auto a = one_hot<double>(0, hp.action_count);

    auto [loss_d, loss_m] = motion_losses(seq, recon, prior, model, 1000.0, 2.0, a);
    CHECK(loss_d == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-9));
    // Zero KL and zero reconstruction error leave only the adversarial term
    // -lambda3 * log D = +lambda3 * ln 2.
    CHECK(loss_m == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-9));
}

TEST_CASE("lambda2 scales a unit mean-L1 error to 1000") {
    HyperParams hp = tiny_hp();
    auto model = MotionModel<double>::make(hp, 29);
    zero_seq_discriminator_head(model.discriminator);
    Rng rng(30);
    KeypointSequence<double> seq;
    for (int t = 0; t < hp.horizon + 1; ++t) {
        KeypointSet<double> k;
        k.coords = Coords<double>::Zero(hp.keypoint_count, 2);
        seq.push_back(k);
    }
    KeypointSequence<double> recon;
    for (int t = 0; t < hp.horizon; ++t) {
        KeypointSet<double> k;
        k.coords = Coords<double>::Ones(hp.keypoint_count, 2);
        recon.push_back(k);
    }
    LatentPosterior<double> prior;
    prior.mean = Matrix<double>::Zero(hp.latent_dim, 1);
    prior.logvar = Matrix<double>::Zero(hp.latent_dim, 1);
    auto a = one_hot<double>(1, hp.action_count);
    auto [loss_d, loss_m] = motion_losses(seq, recon, prior, model, 1000.0, 2.0, a);
    CHECK(loss_m == doctest::Approx(1000.0 + 2.0 * std::log(2.0)).epsilon(1e-9));
}

TEST_CASE("stage-2 generator gradient matches finite differences below 1e-3") {
    HyperParams hp = tiny_hp();
    auto model = MotionModel<double>::make(hp, 31);
    Rng rng(32);
    const int n = 2, k2 = 2 * hp.keypoint_count;
    std::vector<Matrix<double>> steps_true(hp.horizon);
    std::uniform_real_distribution<double> dist(-0.8, 0.8);
    for (auto& s : steps_true) {
        s.resize(k2, n);
        for (Eigen::Index i = 0; i < s.size(); ++i) s.data()[i] = dist(rng);
    }
    Matrix<double> k0(k2, n), cond(k2 + hp.action_count, n), noise(hp.latent_dim, n);
    for (Eigen::Index i = 0; i < k0.size(); ++i) k0.data()[i] = dist(rng);
    cond.topRows(k2) = k0;
    cond.bottomRows(hp.action_count).setZero();
    cond(k2, 0) = 1.0;
    cond(k2 + 1, 1) = 1.0;
    std::normal_distribution<double> gauss;
    for (Eigen::Index i = 0; i < noise.size(); ++i) noise.data()[i] = gauss(rng);

    auto loss = [&] {
        return stage2_generator_loss_and_grad(model, steps_true, k0, cond, noise, false).loss_m;
    };
    auto params = model.generator_params();
    params.zero_grads();
    stage2_generator_loss_and_grad(model, steps_true, k0, cond, noise, true);

    double worst = 0;
    const double eps = 1e-5;
    for (std::size_t i = 0; i < params.size(); ++i) {
        Matrix<double>& value = *params.values[i];
        const Eigen::Index stride = std::max<Eigen::Index>(1, value.size() / 16);
        for (Eigen::Index j = 0; j < value.size(); j += stride) {
            const double keep = value.data()[j];
            value.data()[j] = keep + eps;
            const double up = loss();
            value.data()[j] = keep - eps;
            const double dn = loss();
            value.data()[j] = keep;
            const double fd = (up - dn) / (2 * eps);
            const double a = params.grads[i]->data()[j];
            worst = std::max(worst, std::abs(fd - a) / std::max({std::abs(fd), std::abs(a), 1e-4}));
        }
    }
    CHECK(worst < 1e-3);
}

TEST_CASE("one motion training step emits finite metrics and moves parameters") {
    HyperParams hp = tiny_hp();
    auto model = MotionModel<double>::make(hp, 37);
    auto state = Stage2TrainState<double>::make(hp, 38);
    Rng rng(39);
    std::vector<KeypointSequence<double>> batch;
    std::vector<int> actions;
    for (int b = 0; b < 3; ++b) {
        batch.push_back(random_sequence(hp.keypoint_count, hp.horizon + 1, rng));
        actions.push_back(b % hp.action_count);
    }

    auto params = model.all_params();
    std::vector<Matrix<double>> before;
    for (auto* p : params.values) before.push_back(*p);

    Stage2Metrics mtr = train_motion_step(model, state, batch, actions);
    CHECK(std::isfinite(mtr.kl));
    CHECK(std::isfinite(mtr.l1));
    CHECK(std::isfinite(mtr.adversarial));
    CHECK(std::isfinite(mtr.loss_d));
    CHECK(state.step == 1);

    double moved = 0;
    for (std::size_t i = 0; i < params.size(); ++i)
        moved += (*params.values[i] - before[i]).cwiseAbs().maxCoeff() > 0 ? 1 : 0;
    CHECK(moved == double(params.size()));
}
