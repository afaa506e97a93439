#pragma once

// Differentiable geometric primitives of the keypoint bottleneck:
// per-channel spatial softmax, probability-weighted expected coordinates,
// [0,W-1]x[0,H-1] <-> [-1,1]^2 affine normalization, and Gaussian map
// rendering. All functions are pure; gradients are exposed as explicit
// *_backward companions.
//
// Conventions: x = column, y = row. Spatial maps are stored channel-major,
// one row per channel, column index j = y*w + x.

#include <cmath>
#include <numbers>

#include "kpvp/common.hpp"

namespace kpvp {

template <typename S>
struct ProbabilityMapStack {
    int h = 0, w = 0;
    Matrix<S> values;  // (K, h*w), each row sums to 1
};

template <typename S>
struct KeypointSet {
    Coords<S> coords;  // (K, 2) normalized, components in [-1, 1]
    int count() const { return static_cast<int>(coords.rows()); }
};

template <typename S>
struct GaussianMapStack {
    int h = 0, w = 0;
    S sigma = S(0);
    Matrix<S> values;  // (K, h*w)
};

template <typename S>
ProbabilityMapStack<S> spatial_softmax(const Matrix<S>& logits, int h, int w) {
    if (logits.cols() != static_cast<Eigen::Index>(h) * w)
        throw InvalidInputError("spatial_softmax: logits shape does not match h*w");
    if (!logits.allFinite()) throw InvalidInputError("spatial_softmax: non-finite logits");
    ProbabilityMapStack<S> out;
    out.h = h;
    out.w = w;
    out.values.resize(logits.rows(), logits.cols());
    for (Eigen::Index k = 0; k < logits.rows(); ++k) {
        const S m = logits.row(k).maxCoeff();
        out.values.row(k) = (logits.row(k).array() - m).exp();
        out.values.row(k) /= out.values.row(k).sum();
    }
    return out;
}

// Expected pixel coordinates, one (x, y) row per channel.
template <typename S>
Coords<S> expected_coordinates(const ProbabilityMapStack<S>& maps, S sum_tolerance = S(1e-4)) {
    const Eigen::Index k_count = maps.values.rows();
    for (Eigen::Index k = 0; k < k_count; ++k) {
        if (std::abs(maps.values.row(k).sum() - S(1)) > sum_tolerance)
            throw InvalidInputError("expected_coordinates: channel does not sum to 1");
    }
    Coords<S> out(k_count, 2);
    for (Eigen::Index k = 0; k < k_count; ++k) {
        S ex = S(0), ey = S(0);
        for (int y = 0; y < maps.h; ++y)
            for (int x = 0; x < maps.w; ++x) {
                const S p = maps.values(k, y * maps.w + x);
                ex += p * S(x);
                ey += p * S(y);
            }
        out(k, 0) = ex;
        out(k, 1) = ey;
    }
    return out;
}

// Gradient of expected_coordinates(spatial_softmax(logits)) w.r.t. logits.
// d k / d logit_u = l_u (u - k), so d logit_u = l_u * dot(u - k, dk).
template <typename S>
Matrix<S> soft_argmax_backward(const ProbabilityMapStack<S>& maps, const Coords<S>& pixel_coords,
                               const Coords<S>& grad_coords) {
    Matrix<S> grad(maps.values.rows(), maps.values.cols());
    for (Eigen::Index k = 0; k < maps.values.rows(); ++k) {
        for (int y = 0; y < maps.h; ++y)
            for (int x = 0; x < maps.w; ++x) {
                const Eigen::Index j = y * maps.w + x;
                grad(k, j) = maps.values(k, j) * ((S(x) - pixel_coords(k, 0)) * grad_coords(k, 0) +
                                                  (S(y) - pixel_coords(k, 1)) * grad_coords(k, 1));
            }
    }
    return grad;
}

template <typename S>
KeypointSet<S> normalize_keypoints(const Coords<S>& pixel_coords, int h, int w) {
    if (h < 2 || w < 2) throw InvalidInputError("normalize_keypoints: grid must be at least 2x2");
    KeypointSet<S> out;
    out.coords.resize(pixel_coords.rows(), 2);
    out.coords.col(0) = pixel_coords.col(0).array() * (S(2) / S(w - 1)) - S(1);
    out.coords.col(1) = pixel_coords.col(1).array() * (S(2) / S(h - 1)) - S(1);
    return out;
}

template <typename S>
Coords<S> denormalize_keypoints(const KeypointSet<S>& kps, int h, int w) {
    if (h < 2 || w < 2) throw InvalidInputError("denormalize_keypoints: grid must be at least 2x2");
    Coords<S> out(kps.coords.rows(), 2);
    out.col(0) = (kps.coords.col(0).array() + S(1)) * (S(w - 1) / S(2));
    out.col(1) = (kps.coords.col(1).array() + S(1)) * (S(h - 1) / S(2));
    return out;
}

// Chain-rule factors of the normalization map (diagonal, constant).
template <typename S>
Coords<S> normalize_keypoints_backward(const Coords<S>& grad_normalized, int h, int w) {
    Coords<S> out(grad_normalized.rows(), 2);
    out.col(0) = grad_normalized.col(0) * (S(2) / S(w - 1));
    out.col(1) = grad_normalized.col(1) * (S(2) / S(h - 1));
    return out;
}

// Normalized grid coordinate of lattice point (x, y) on an h x w grid.
template <typename S>
inline S grid_coord(int i, int n) {
    return S(2) * S(i) / S(n - 1) - S(1);
}

// One unnormalized Gaussian bump per keypoint on the [-1,1]^2 lattice:
// value = exp(-|u' - k|^2 / (2 sigma^2)) / (sigma sqrt(2 pi)).
template <typename S>
GaussianMapStack<S> render_gaussian_maps(const KeypointSet<S>& kps, int h, int w, S sigma) {
    if (sigma <= S(0)) throw InvalidInputError("render_gaussian_maps: sigma must be positive");
    if (h < 2 || w < 2) throw InvalidInputError("render_gaussian_maps: grid must be at least 2x2");
    GaussianMapStack<S> out;
    out.h = h;
    out.w = w;
    out.sigma = sigma;
    const S amp = S(1) / (sigma * std::sqrt(S(2) * std::numbers::pi_v<S>));
    const S inv2s2 = S(1) / (S(2) * sigma * sigma);
    out.values.resize(kps.coords.rows(), static_cast<Eigen::Index>(h) * w);
    for (Eigen::Index k = 0; k < kps.coords.rows(); ++k) {
        const S kx = kps.coords(k, 0), ky = kps.coords(k, 1);
        for (int y = 0; y < h; ++y) {
            const S gy = grid_coord<S>(y, h) - ky;
            for (int x = 0; x < w; ++x) {
                const S gx = grid_coord<S>(x, w) - kx;
                out.values(k, y * w + x) = amp * std::exp(-(gx * gx + gy * gy) * inv2s2);
            }
        }
    }
    return out;
}

// d value_u / d k = value_u * (u' - k) / sigma^2, accumulated over the grid.
template <typename S>
Coords<S> render_gaussian_maps_backward(const KeypointSet<S>& kps, const GaussianMapStack<S>& maps,
                                        const Matrix<S>& grad_values) {
    const S inv_s2 = S(1) / (maps.sigma * maps.sigma);
    Coords<S> grad(kps.coords.rows(), 2);
    grad.setZero();
    for (Eigen::Index k = 0; k < kps.coords.rows(); ++k) {
        const S kx = kps.coords(k, 0), ky = kps.coords(k, 1);
        for (int y = 0; y < maps.h; ++y) {
            const S gy = grid_coord<S>(y, maps.h) - ky;
            for (int x = 0; x < maps.w; ++x) {
                const Eigen::Index j = y * maps.w + x;
                const S gx = grid_coord<S>(x, maps.w) - kx;
                const S c = grad_values(k, j) * maps.values(k, j) * inv_s2;
                grad(k, 0) += c * gx;
                grad(k, 1) += c * gy;
            }
        }
    }
    return grad;
}

}  // namespace kpvp
