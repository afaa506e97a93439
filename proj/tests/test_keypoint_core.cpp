#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "kpvp/keypoint_core.hpp"

using namespace kpvp;

namespace {

// Central finite differences through a scalar-valued function of a matrix.
template <typename F>
double max_rel_error(const Matrix<double>& analytic, const Matrix<double>& input, F loss,
                     double eps = 1e-5) {
    double worst = 0;
    Matrix<double> x = input;
    for (Eigen::Index i = 0; i < x.rows(); ++i)
        for (Eigen::Index j = 0; j < x.cols(); ++j) {
            const double keep = x(i, j);
            x(i, j) = keep + eps;
            const double up = loss(x);
            x(i, j) = keep - eps;
            const double dn = loss(x);
            x(i, j) = keep;
            const double fd = (up - dn) / (2 * eps);
            const double denom = std::max({std::abs(fd), std::abs(analytic(i, j)), 1e-8});
            worst = std::max(worst, std::abs(fd - analytic(i, j)) / denom);
        }
    return worst;
}

}  // namespace

TEST_CASE("spatial softmax of all-zero 8x8 logits is uniform") {
    Matrix<double> logits = Matrix<double>::Zero(1, 64);
    auto maps = spatial_softmax(logits, 8, 8);
    for (Eigen::Index j = 0; j < 64; ++j) CHECK(maps.values(0, j) == doctest::Approx(1.0 / 64).epsilon(1e-12));
}

TEST_CASE("spatial softmax on 2x2 logits [[0, ln 3],[0, 0]]") {
    Matrix<double> logits(1, 4);
    logits << 0.0, std::log(3.0), 0.0, 0.0;
    auto maps = spatial_softmax(logits, 2, 2);
    CHECK(maps.values(0, 0) == doctest::Approx(1.0 / 6).epsilon(1e-12));
    CHECK(maps.values(0, 1) == doctest::Approx(1.0 / 2).epsilon(1e-12));
    CHECK(maps.values(0, 2) == doctest::Approx(1.0 / 6).epsilon(1e-12));
    CHECK(maps.values(0, 3) == doctest::Approx(1.0 / 6).epsilon(1e-12));
}

TEST_CASE("spatial softmax is shift invariant per channel") {
    std::mt19937_64 rng(11);
    std::normal_distribution<double> dist;
    Matrix<double> logits(2, 36);
    for (Eigen::Index k = 0; k < 2; ++k)
        for (Eigen::Index j = 0; j < 36; ++j) logits(k, j) = dist(rng);
    auto base = spatial_softmax(logits, 6, 6);
    Matrix<double> shifted = logits;
    shifted.row(0).array() += 3.25;
    shifted.row(1).array() -= 7.5;
    auto moved = spatial_softmax(shifted, 6, 6);
    CHECK((base.values - moved.values).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("spatial softmax channel sums are 1 and entries non-negative on random input") {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> dist(0.0, 4.0);
    Matrix<double> logits(5, 8 * 8);
    for (Eigen::Index k = 0; k < logits.rows(); ++k)
        for (Eigen::Index j = 0; j < logits.cols(); ++j) logits(k, j) = dist(rng);
    auto maps = spatial_softmax(logits, 8, 8);
    CHECK(maps.values.minCoeff() >= 0.0);
    for (Eigen::Index k = 0; k < logits.rows(); ++k)
        CHECK(std::abs(maps.values.row(k).sum() - 1.0) < 1e-5);
}

TEST_CASE("spatial softmax rejects non-finite logits and bad shapes") {
    Matrix<double> bad = Matrix<double>::Zero(1, 4);
    bad(0, 2) = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(spatial_softmax(bad, 2, 2), InvalidInputError);
    Matrix<double> ok = Matrix<double>::Zero(1, 4);
    CHECK_THROWS_AS(spatial_softmax(ok, 3, 3), InvalidInputError);
}

TEST_CASE("expected coordinates of a delta map at pixel (3,5)") {
    ProbabilityMapStack<double> maps;
    maps.h = 8;
    maps.w = 8;
    maps.values = Matrix<double>::Zero(1, 64);
    maps.values(0, 5 * 8 + 3) = 1.0;
    auto coords = expected_coordinates(maps);
    CHECK(coords(0, 0) == doctest::Approx(3.0).epsilon(1e-12));
    CHECK(coords(0, 1) == doctest::Approx(5.0).epsilon(1e-12));
}

TEST_CASE("expected coordinates of a uniform 8x8 map") {
    ProbabilityMapStack<double> maps;
    maps.h = 8;
    maps.w = 8;
    maps.values = Matrix<double>::Constant(1, 64, 1.0 / 64);
    auto coords = expected_coordinates(maps);
    CHECK(coords(0, 0) == doctest::Approx(3.5).epsilon(1e-12));
    CHECK(coords(0, 1) == doctest::Approx(3.5).epsilon(1e-12));
}

TEST_CASE("expected coordinates are linear: half mass at (0,0) and (0,2)") {
    ProbabilityMapStack<double> maps;
    maps.h = 4;
    maps.w = 4;
    maps.values = Matrix<double>::Zero(1, 16);
    maps.values(0, 0) = 0.5;
    maps.values(0, 2 * 4 + 0) = 0.5;
    auto coords = expected_coordinates(maps);
    CHECK(coords(0, 0) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(coords(0, 1) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("expected coordinates reject channels that do not sum to 1") {
    ProbabilityMapStack<double> maps;
    maps.h = 2;
    maps.w = 2;
    maps.values = Matrix<double>::Constant(1, 4, 0.3);
    CHECK_THROWS_AS(expected_coordinates(maps), InvalidInputError);
}

TEST_CASE("shifting a delta map shifts expected coordinates exactly") {
    const int h = 10, w = 12;
    for (auto [x, y, dx, dy] : {std::array<int, 4>{2, 3, 4, 5}, {0, 0, 11, 9}, {7, 6, -5, -4}}) {
        ProbabilityMapStack<double> a, b;
        a.h = b.h = h;
        a.w = b.w = w;
        a.values = Matrix<double>::Zero(1, h * w);
        b.values = Matrix<double>::Zero(1, h * w);
        a.values(0, y * w + x) = 1.0;
        b.values(0, (y + dy) * w + (x + dx)) = 1.0;
        auto ca = expected_coordinates(a);
        auto cb = expected_coordinates(b);
        CHECK(cb(0, 0) - ca(0, 0) == doctest::Approx(double(dx)).epsilon(1e-12));
        CHECK(cb(0, 1) - ca(0, 1) == doctest::Approx(double(dy)).epsilon(1e-12));
    }
}

TEST_CASE("keypoint normalization boundary and midpoint values") {
    Coords<double> px(3, 2);
    px << 0, 0, 127, 127, 63.5, 63.5;
    auto kps = normalize_keypoints(px, 128, 128);
    CHECK(kps.coords(0, 0) == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK(kps.coords(0, 1) == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK(kps.coords(1, 0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(kps.coords(1, 1) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(kps.coords(2, 0) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(kps.coords(2, 1) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("normalize then denormalize round-trips within 1e-9") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> ux(0.0, 95.0), uy(0.0, 63.0);
    Coords<double> px(16, 2);
    for (Eigen::Index k = 0; k < px.rows(); ++k) {
        px(k, 0) = ux(rng);
        px(k, 1) = uy(rng);
    }
    auto back = denormalize_keypoints(normalize_keypoints(px, 64, 96), 64, 96);
    CHECK((back - px).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("normalization rejects degenerate grids") {
    Coords<double> px = Coords<double>::Zero(1, 2);
    CHECK_THROWS_AS(normalize_keypoints(px, 1, 8), InvalidInputError);
    KeypointSet<double> kps;
    kps.coords = px;
    CHECK_THROWS_AS(denormalize_keypoints(kps, 8, 1), InvalidInputError);
}

TEST_CASE("gaussian map peaks at the center with value 1/(sigma sqrt(2 pi))") {
    KeypointSet<double> kps;
    kps.coords = Coords<double>::Zero(1, 2);
    const double sigma = 0.1;
    auto maps = render_gaussian_maps(kps, 9, 9, sigma);
    Eigen::Index arg = 0;
    maps.values.row(0).maxCoeff(&arg);
    CHECK(arg == 4 * 9 + 4);
    CHECK(maps.values(0, arg) ==
          doctest::Approx(1.0 / (sigma * std::sqrt(2.0 * std::numbers::pi))).epsilon(1e-12));
}

TEST_CASE("gaussian map of a centered keypoint is flip symmetric") {
    KeypointSet<double> kps;
    kps.coords = Coords<double>::Zero(1, 2);
    auto maps = render_gaussian_maps(kps, 7, 7, 0.25);
    for (int y = 0; y < 7; ++y)
        for (int x = 0; x < 7; ++x) {
            CHECK(maps.values(0, y * 7 + x) ==
                  doctest::Approx(maps.values(0, y * 7 + (6 - x))).epsilon(1e-12));
            CHECK(maps.values(0, y * 7 + x) ==
                  doctest::Approx(maps.values(0, (6 - y) * 7 + x)).epsilon(1e-12));
        }
}

TEST_CASE("gaussian value at distance sigma is e^{-1/2}/(sigma sqrt(2 pi))") {
    // On a 5x5 grid the lattice spacing is 0.5; put the keypoint exactly
    // sigma = 0.5 left of the center grid point.
    KeypointSet<double> kps;
    kps.coords = Coords<double>::Zero(1, 2);
    kps.coords(0, 0) = -0.5;
    const double sigma = 0.5;
    auto maps = render_gaussian_maps(kps, 5, 5, sigma);
    const double expect = std::exp(-0.5) / (sigma * std::sqrt(2.0 * std::numbers::pi));
    CHECK(maps.values(0, 2 * 5 + 2) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("gaussian renderer rejects non-positive sigma") {
    KeypointSet<double> kps;
    kps.coords = Coords<double>::Zero(1, 2);
    CHECK_THROWS_AS(render_gaussian_maps(kps, 8, 8, 0.0), InvalidInputError);
    CHECK_THROWS_AS(render_gaussian_maps(kps, 8, 8, -1.0), InvalidInputError);
}

TEST_CASE("soft-argmax chain gradient matches finite differences below 1e-4") {
    std::mt19937_64 rng(17);
    std::normal_distribution<double> dist;
    Matrix<double> logits(2, 64);
    for (Eigen::Index k = 0; k < 2; ++k)
        for (Eigen::Index j = 0; j < 64; ++j) logits(k, j) = dist(rng);
    Coords<double> weights(2, 2);
    weights << 0.7, -1.3, 0.4, 2.1;

    auto loss = [&](const Matrix<double>& l) {
        auto maps = spatial_softmax(l, 8, 8);
        auto coords = expected_coordinates(maps);
        return (coords.array() * weights.array()).sum();
    };
    auto maps = spatial_softmax(logits, 8, 8);
    auto coords = expected_coordinates(maps);
    Matrix<double> analytic = soft_argmax_backward(maps, coords, weights);
    CHECK(max_rel_error(analytic, logits, loss) < 1e-4);
}

TEST_CASE("gaussian renderer gradient matches finite differences below 1e-4") {
    KeypointSet<double> kps;
    kps.coords.resize(3, 2);
    kps.coords << 0.2, -0.4, -0.7, 0.1, 0.0, 0.9;
    const int h = 8, w = 8;
    const double sigma = 0.35;
    std::mt19937_64 rng(23);
    std::normal_distribution<double> dist;
    Matrix<double> weights(3, h * w);
    for (Eigen::Index k = 0; k < 3; ++k)
        for (Eigen::Index j = 0; j < h * w; ++j) weights(k, j) = dist(rng);

    auto loss = [&](const Matrix<double>& c) {
        KeypointSet<double> k;
        k.coords = c;
        return (render_gaussian_maps(k, h, w, sigma).values.array() * weights.array()).sum();
    };
    auto maps = render_gaussian_maps(kps, h, w, sigma);
    Matrix<double> analytic = render_gaussian_maps_backward(kps, maps, weights);
    CHECK(max_rel_error(analytic, kps.coords, loss) < 1e-4);
}
