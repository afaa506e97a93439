#include <doctest.h>

#include <cmath>
#include <random>

#include "kpvp/evaluation.hpp"

using namespace kpvp;

namespace {

Matrix<double> gaussian_samples(int n, int d, double mean, double stddev, Rng& rng) {
    std::normal_distribution<double> dist(mean, stddev);
    Matrix<double> out(n, d);
    for (Eigen::Index i = 0; i < out.size(); ++i) out.data()[i] = dist(rng);
    return out;
}

KeypointSequence<Real> constant_sequence(const Coords<Real>& coords, int frames) {
    KeypointSet<Real> k;
    k.coords = coords;
    return KeypointSequence<Real>(frames, k);
}

}  // namespace

TEST_CASE("frechet distance of a set against itself is zero") {
    Rng rng(3);
    FeatureSet a{gaussian_samples(64, 5, 0.0, 1.0, rng), "real"};
    CHECK(frechet_distance(a, a) == doctest::Approx(0.0).epsilon(1e-6));
}

TEST_CASE("frechet distance with equal covariance reduces to the mean offset") {
    Rng rng(5);
    Matrix<double> base = gaussian_samples(400, 3, 0.0, 1.0, rng);
    Matrix<double> shifted = base;
    Eigen::RowVector3d d(0.6, -1.0, 0.3);
    shifted.rowwise() += d;
    FeatureSet a{base, "real"}, b{shifted, "generated"};
    CHECK(frechet_distance(a, b) == doctest::Approx(d.squaredNorm()).epsilon(1e-6));
}

TEST_CASE("frechet distance of N(0,1) vs N(0,4) populations approaches 1") {
    Rng rng(7);
    FeatureSet a{gaussian_samples(60000, 1, 0.0, 1.0, rng), "real"};
    FeatureSet b{gaussian_samples(60000, 1, 0.0, 2.0, rng), "generated"};
    const double fd = frechet_distance(a, b);
    CHECK(fd == doctest::Approx(1.0).epsilon(0.1));
}

TEST_CASE("frechet distance is symmetric, non-negative and rotation invariant") {
    Rng rng(11);
    Matrix<double> xa = gaussian_samples(300, 4, 0.2, 1.0, rng);
    Matrix<double> xb = gaussian_samples(300, 4, -0.1, 1.5, rng);
    FeatureSet a{xa, "real"}, b{xb, "generated"};
    const double ab = frechet_distance(a, b);
    const double ba = frechet_distance(b, a);
    CHECK(ab >= 0.0);
    CHECK(std::abs(ab - ba) < 1e-6);

    // Same orthogonal rotation applied to both sets leaves the metric fixed.
    Matrix<double> q = Eigen::HouseholderQR<Matrix<double>>(gaussian_samples(4, 4, 0.0, 1.0, rng))
                           .householderQ();
    FeatureSet ar{xa * q, "real"}, br{xb * q, "generated"};
    CHECK(frechet_distance(ar, br) == doctest::Approx(ab).epsilon(1e-5));
}

TEST_CASE("frechet distance rejects dimension mismatch and small samples") {
    Rng rng(13);
    FeatureSet a{gaussian_samples(20, 3, 0.0, 1.0, rng), "real"};
    FeatureSet b{gaussian_samples(20, 4, 0.0, 1.0, rng), "generated"};
    CHECK_THROWS_AS(frechet_distance(a, b), InvalidInputError);
    FeatureSet tiny{gaussian_samples(3, 5, 0.0, 1.0, rng), "real"};
    CHECK_THROWS_AS(frechet_distance(tiny, tiny), InvalidInputError);
}

TEST_CASE("tracking error is zero for exact predictions") {
    const int h = 64, w = 64;
    std::vector<std::vector<Eigen::Vector2f>> truth(3, {{10.0f, 20.0f}, {40.0f, 50.0f}});
    Coords<Real> coords(2, 2);
    coords << Real(2.0 * 10 / (w - 1) - 1), Real(2.0 * 20 / (h - 1) - 1),
        Real(2.0 * 40 / (w - 1) - 1), Real(2.0 * 50 / (h - 1) - 1);
    auto pred = constant_sequence(coords, 3);
    CHECK(keypoint_tracking_error(pred, truth, h, w) == doctest::Approx(0.0).epsilon(1e-4));
}

TEST_CASE("a constant (3,4) pixel offset yields error 5") {
    const int h = 33, w = 33;  // odd grid so half-pixel steps are exact
    std::vector<std::vector<Eigen::Vector2f>> truth(4, {{12.0f, 16.0f}});
    Coords<Real> coords(1, 2);
    coords << Real(2.0 * 15 / (w - 1) - 1), Real(2.0 * 20 / (h - 1) - 1);
    auto pred = constant_sequence(coords, 4);
    CHECK(keypoint_tracking_error(pred, truth, h, w) == doctest::Approx(5.0).epsilon(1e-4));
}

TEST_CASE("tracking error is permutation invariant and rejects empty truth") {
    const int h = 32, w = 32;
    std::vector<std::vector<Eigen::Vector2f>> truth(2, {{8.0f, 8.0f}, {24.0f, 16.0f}});
    Coords<Real> fwd(2, 2), rev(2, 2);
    fwd << -0.4f, -0.3f, 0.5f, 0.1f;
    rev << 0.5f, 0.1f, -0.4f, -0.3f;
    const double e1 = keypoint_tracking_error(constant_sequence(fwd, 2), truth, h, w);
    const double e2 = keypoint_tracking_error(constant_sequence(rev, 2), truth, h, w);
    CHECK(e1 == doctest::Approx(e2).epsilon(1e-9));

    std::vector<std::vector<Eigen::Vector2f>> empty;
    CHECK_THROWS_AS(keypoint_tracking_error(constant_sequence(fwd, 2), empty, h, w),
                    InvalidInputError);
}

TEST_CASE("centroid classifier scores 1.0 on its own centroids") {
    Coords<Real> c0(1, 2), c1(1, 2);
    c0 << -0.5f, -0.5f;
    c1 << 0.5f, 0.5f;
    std::vector<std::pair<KeypointSequence<Real>, int>> fit = {
        {constant_sequence(c0, 4), 0},
        {constant_sequence(c1, 4), 1},
    };
    CentroidClassifier clf;
    clf.fit(fit);
    CHECK(action_consistency(clf, fit) == doctest::Approx(1.0));
}

TEST_CASE("shuffled labels score at chance level over 1000 samples") {
    Rng rng(17);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::bernoulli_distribution coin(0.5);
    auto random_seq = [&] {
        Coords<Real> c(2, 2);
        for (Eigen::Index i = 0; i < c.size(); ++i) c.data()[i] = Real(u(rng));
        return constant_sequence(c, 3);
    };
    std::vector<std::pair<KeypointSequence<Real>, int>> fit;
    for (int i = 0; i < 200; ++i) fit.emplace_back(random_seq(), i % 2);
    CentroidClassifier clf;
    clf.fit(fit);
    std::vector<std::pair<KeypointSequence<Real>, int>> samples;
    for (int i = 0; i < 1000; ++i) samples.emplace_back(random_seq(), coin(rng) ? 1 : 0);
    const double acc = action_consistency(clf, samples);
    CHECK(acc > 0.40);
    CHECK(acc < 0.60);
}

TEST_CASE("single-class fitting set is rejected") {
    Coords<Real> c0 = Coords<Real>::Zero(1, 2);
    std::vector<std::pair<KeypointSequence<Real>, int>> fit = {{constant_sequence(c0, 2), 0}};
    CentroidClassifier clf;
    CHECK_THROWS_AS(clf.fit(fit), InvalidInputError);
}

TEST_CASE("video feature extractor is deterministic and length-normalizing") {
    VideoFeatureExtractor phi(32, 32, 99);
    Rng rng(19);
    std::normal_distribution<double> dist(0.0, 0.3);
    std::vector<Frame> clip;
    for (int t = 0; t < 7; ++t) {
        Frame f(1, 3, 32, 32);
        for (Eigen::Index i = 0; i < f.data.size(); ++i) f.data.data()[i] = Real(dist(rng));
        clip.push_back(std::move(f));
    }
    Vector<double> f1 = phi.features(clip);
    Vector<double> f2 = phi.features(clip);
    CHECK((f1 - f2).cwiseAbs().maxCoeff() == 0.0);
    CHECK(f1.allFinite());
    // Shorter clip still produces the same dimensionality.
    std::vector<Frame> prefix(clip.begin(), clip.begin() + 2);
    CHECK(phi.features(prefix).size() == f1.size());
}
