#pragma once

#include <string>

#include <json.hpp>

#include "kpvp/common.hpp"

namespace kpvp {

// All scalar knobs of the two training stages and the model family.
// Defaults follow the reference configuration; desk-scale runs override
// them through the config file or CLI flags.
struct HyperParams {
    int keypoint_count = 40;           // K
    double sigma = 0.1;                // Gaussian map std-dev, normalized units
    double lambda1 = 1.0;              // perceptual weight
    double lambda2 = 1000.0;           // sequence L1 weight
    double lambda3 = 2.0;              // sequence adversarial weight
    double learning_rate = 1e-4;
    int batch_size = 32;
    double beta1 = 0.5;
    double beta2 = 0.999;
    double lr_decay = 0.95;
    long lr_decay_every = 20000;
    int image_h = 128;
    int image_w = 128;
    int horizon = 16;                  // T
    int action_count = 1;              // C
    int latent_dim = 32;

    // Architecture knobs (supplementary-level details, all desk-tunable).
    int detector_channels = 32;
    int translator_channels = 32;
    int discriminator_channels = 32;
    int perceptual_channels = 8;
    int rnn_hidden = 256;
    int gaussian_map_h = 0;            // 0 = follow image size
    int gaussian_map_w = 0;
    double detector_head_gain = 1.0;   // init scale of the detector head (softmax sharpness)
    double mask_bias_init = 0.0;       // initial bias of the translator's mask channel
    bool use_mask = true;
    bool use_reference_keypoints = true;
    bool motion_predicts_deltas = true;
    int pair_max_gap = 0;              // 0 = whole clip

    void validate() const {
        auto req = [](bool ok, const char* what) {
            if (!ok) throw ConfigError(std::string("HyperParams: ") + what);
        };
        req(keypoint_count > 0, "K must be positive");
        req(sigma > 0, "sigma must be positive");
        req(lambda1 >= 0 && lambda2 >= 0 && lambda3 >= 0, "lambdas must be non-negative");
        req(learning_rate > 0, "learning_rate must be positive");
        req(batch_size > 0, "batch_size must be positive");
        req(beta1 > 0 && beta1 < 1 && beta2 > 0 && beta2 < 1, "betas must lie in (0,1)");
        req(lr_decay > 0 && lr_decay <= 1, "lr_decay must lie in (0,1]");
        req(lr_decay_every > 0, "lr_decay_every must be positive");
        req(image_h >= 8 && image_w >= 8, "image size too small");
        req(horizon > 0, "horizon must be positive");
        req(action_count > 0, "action_count must be positive");
        req(latent_dim > 0, "latent_dim must be positive");
        req(detector_head_gain > 0, "detector_head_gain must be positive");
    }

    int map_h() const { return gaussian_map_h > 0 ? gaussian_map_h : image_h; }
    int map_w() const { return gaussian_map_w > 0 ? gaussian_map_w : image_w; }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(
    HyperParams, keypoint_count, sigma, lambda1, lambda2, lambda3, learning_rate, batch_size,
    beta1, beta2, lr_decay, lr_decay_every, image_h, image_w, horizon, action_count, latent_dim,
    detector_channels, translator_channels, discriminator_channels, perceptual_channels,
    rnn_hidden, gaussian_map_h, gaussian_map_w, detector_head_gain, mask_bias_init, use_mask,
    use_reference_keypoints,
    motion_predicts_deltas, pair_max_gap)

}  // namespace kpvp
