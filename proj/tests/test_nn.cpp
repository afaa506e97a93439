#include <doctest.h>

#include <cmath>
#include <random>

#include "kpvp/nn.hpp"

using namespace kpvp;
using nn::Tensor;

namespace {

Rng make_rng(std::uint64_t seed) { return Rng(seed); }

void fill_random(Matrix<double>& m, Rng& rng, double scale = 1.0) {
    std::normal_distribution<double> dist(0.0, scale);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
}

Tensor<double> random_tensor(int n, int c, int h, int w, Rng& rng) {
    Tensor<double> t(n, c, h, w);
    fill_random(t.data, rng);
    return t;
}

// Relative error between an analytic gradient and central finite differences
// of a scalar loss, probing every entry of the perturbed matrix.
template <typename F>
double grad_check(Matrix<double>& target, const Matrix<double>& analytic, F loss,
                  double eps = 1e-5) {
    double worst = 0;
    for (Eigen::Index i = 0; i < target.size(); ++i) {
        const double keep = target.data()[i];
        target.data()[i] = keep + eps;
        const double up = loss();
        target.data()[i] = keep - eps;
        const double dn = loss();
        target.data()[i] = keep;
        const double fd = (up - dn) / (2 * eps);
        const double a = analytic.data()[i];
        worst = std::max(worst, std::abs(fd - a) / std::max({std::abs(fd), std::abs(a), 1e-6}));
    }
    return worst;
}

}  // namespace

TEST_CASE("conv2d gradients match finite differences (stride 2, pad 1)") {
    Rng rng = make_rng(101);
    nn::Conv2d<double> conv(2, 3, 3, 2, 1, rng);
    Tensor<double> x = random_tensor(2, 2, 6, 6, rng);
    Matrix<double> weights;  // loss = sum(w .* y) for a fixed random w
    {
        Tensor<double> y = conv.forward(x, false);
        weights.resize(y.data.rows(), y.data.cols());
        fill_random(weights, rng);
    }
    auto loss = [&] { return (conv.forward(x, false).data.array() * weights.array()).sum(); };

    nn::ParamList<double> params;
    conv.collect(params, "conv");
    params.zero_grads();
    Tensor<double> y = conv.forward(x);
    Tensor<double> gy = y;
    gy.data = weights;
    Tensor<double> gx = conv.backward(gy);

    CHECK(grad_check(x.data, gx.data, loss) < 1e-7);
    for (std::size_t i = 0; i < params.size(); ++i)
        CHECK(grad_check(*params.values[i], *params.grads[i], loss) < 1e-7);
}

TEST_CASE("conv2d used twice backpropagates through its LIFO cache") {
    Rng rng = make_rng(7);
    nn::Conv2d<double> conv(1, 1, 3, 1, 1, rng);
    Tensor<double> a = random_tensor(1, 1, 5, 5, rng);
    Tensor<double> b = random_tensor(1, 1, 5, 5, rng);
    auto loss = [&] {
        return conv.forward(a, false).data.sum() + 2.0 * conv.forward(b, false).data.sum();
    };
    nn::ParamList<double> params;
    conv.collect(params, "conv");
    params.zero_grads();
    Tensor<double> ya = conv.forward(a);
    Tensor<double> yb = conv.forward(b);
    Tensor<double> ga = ya, gb = yb;
    ga.data.setOnes();
    gb.data.setConstant(2.0);
    conv.backward(gb);  // most recent forward first
    conv.backward(ga);
    for (std::size_t i = 0; i < params.size(); ++i)
        CHECK(grad_check(*params.values[i], *params.grads[i], loss) < 1e-7);
}

TEST_CASE("linear gradients match finite differences") {
    Rng rng = make_rng(13);
    nn::Linear<double> lin(5, 4, rng);
    Matrix<double> x(5, 3);
    fill_random(x, rng);
    Matrix<double> w(4, 3);
    fill_random(w, rng);
    auto loss = [&] { return (lin.forward(x, false).array() * w.array()).sum(); };

    nn::ParamList<double> params;
    lin.collect(params, "lin");
    params.zero_grads();
    lin.forward(x);
    Matrix<double> gx = lin.backward(w);
    CHECK(grad_check(x, gx, loss) < 1e-8);
    for (std::size_t i = 0; i < params.size(); ++i)
        CHECK(grad_check(*params.values[i], *params.grads[i], loss) < 1e-8);
}

TEST_CASE("activation gradients match finite differences") {
    Rng rng = make_rng(29);
    Matrix<double> x(4, 6);
    fill_random(x, rng);
    Matrix<double> w(4, 6);
    fill_random(w, rng);

    nn::LeakyReLU<double> lrelu(0.2);
    auto lrelu_loss = [&] { return (lrelu.forward(x, false).array() * w.array()).sum(); };
    lrelu.forward(x);
    CHECK(grad_check(x, lrelu.backward(w), lrelu_loss) < 1e-6);

    nn::TanhLayer<double> tanh_layer;
    auto tanh_loss = [&] { return (tanh_layer.forward(x, false).array() * w.array()).sum(); };
    tanh_layer.forward(x);
    CHECK(grad_check(x, tanh_layer.backward(w), tanh_loss) < 1e-8);

    nn::SigmoidLayer<double> sig;
    auto sig_loss = [&] { return (sig.forward(x, false).array() * w.array()).sum(); };
    sig.forward(x);
    CHECK(grad_check(x, sig.backward(w), sig_loss) < 1e-8);
}

TEST_CASE("upsample2x repeats pixels and its backward sums gradients") {
    Rng rng = make_rng(31);
    Tensor<double> x = random_tensor(2, 3, 4, 5, rng);
    Tensor<double> y = nn::upsample2x(x);
    REQUIRE(y.h == 8);
    REQUIRE(y.w == 10);
    for (int b = 0; b < x.n; ++b)
        for (int c = 0; c < x.c; ++c)
            for (int iy = 0; iy < y.h; ++iy)
                for (int ix = 0; ix < y.w; ++ix)
                    CHECK(y.data(c, b * y.h * y.w + iy * y.w + ix) ==
                          x.data(c, b * x.h * x.w + (iy / 2) * x.w + ix / 2));

    Tensor<double> w = random_tensor(2, 3, 8, 10, rng);
    auto loss = [&] { return (nn::upsample2x(x).data.array() * w.data.array()).sum(); };
    Tensor<double> gx = nn::upsample2x_backward(w, x.h, x.w);
    CHECK(grad_check(x.data, gx.data, loss) < 1e-8);
}

TEST_CASE("concat and slice of channels round-trip") {
    Rng rng = make_rng(37);
    Tensor<double> a = random_tensor(2, 2, 3, 3, rng);
    Tensor<double> b = random_tensor(2, 3, 3, 3, rng);
    Tensor<double> ab = nn::concat_channels(a, b);
    REQUIRE(ab.c == 5);
    CHECK((nn::slice_channels(ab, 0, 2).data - a.data).cwiseAbs().maxCoeff() == 0.0);
    CHECK((nn::slice_channels(ab, 2, 3).data - b.data).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("GRU cell gradients match finite differences through three steps") {
    Rng rng = make_rng(43);
    const int in = 3, hidden = 4, batch = 2, steps = 3;
    nn::GRUCell<double> cell(in, hidden, rng);
    std::vector<Matrix<double>> xs(steps);
    for (auto& x : xs) {
        x.resize(in, batch);
        fill_random(x, rng);
    }
    Matrix<double> h0(hidden, batch);
    fill_random(h0, rng);
    Matrix<double> w(hidden, batch);
    fill_random(w, rng);

    auto loss = [&] {
        Matrix<double> h = h0;
        for (const auto& x : xs) h = cell.step(x, h, false);
        return (h.array() * w.array()).sum();
    };

    nn::ParamList<double> params;
    cell.collect(params, "gru");
    params.zero_grads();
    Matrix<double> h = h0;
    for (const auto& x : xs) h = cell.step(x, h);
    Matrix<double> dh = w;
    std::vector<Matrix<double>> dxs(steps);
    for (int t = steps - 1; t >= 0; --t) {
        auto [dx, dh_prev] = cell.step_backward(dh);
        dxs[t] = dx;
        dh = dh_prev;
    }
    CHECK(grad_check(h0, dh, loss) < 1e-6);
    for (int t = 0; t < steps; ++t) CHECK(grad_check(xs[t], dxs[t], loss) < 1e-6);
    for (std::size_t i = 0; i < params.size(); ++i)
        CHECK(grad_check(*params.values[i], *params.grads[i], loss) < 1e-6);
}

TEST_CASE("adam with bias correction takes lr-sized first step") {
    Matrix<double> p = Matrix<double>::Constant(2, 2, 5.0);
    Matrix<double> g = Matrix<double>::Constant(2, 2, 3.0);
    nn::ParamList<double> params;
    params.add("p", &p, &g);
    nn::Adam<double> adam(0.5, 0.999);
    adam.step(params, 0.1);
    // After bias correction the first update is lr * g/(|g| + eps) = lr * sign(g).
    CHECK(p(0, 0) == doctest::Approx(5.0 - 0.1).epsilon(1e-6));
}

TEST_CASE("adam minimizes a quadratic") {
    Matrix<double> p = Matrix<double>::Constant(1, 1, 4.0);
    Matrix<double> g(1, 1);
    nn::ParamList<double> params;
    params.add("p", &p, &g);
    nn::Adam<double> adam(0.9, 0.999);
    for (int i = 0; i < 2000; ++i) {
        g(0, 0) = 2.0 * p(0, 0);
        adam.step(params, 0.01);
    }
    CHECK(std::abs(p(0, 0)) < 1e-2);
}

TEST_CASE("learning-rate schedule decays by 0.95 every 20000 steps") {
    CHECK(nn::scheduled_lr(1e-4, 0.95, 20000L, 0L) == doctest::Approx(1e-4));
    CHECK(nn::scheduled_lr(1e-4, 0.95, 20000L, 19999L) == doctest::Approx(1e-4));
    CHECK(nn::scheduled_lr(1e-4, 0.95, 20000L, 20000L) == doctest::Approx(0.95e-4));
    CHECK(nn::scheduled_lr(1e-4, 0.95, 20000L, 40000L) == doctest::Approx(0.95 * 0.95e-4));
}
