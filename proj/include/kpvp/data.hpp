#pragma once

// Dataset ingestion, stage-1 frame-pair sampling, paired augmentation, and
// seeded synthetic video generation with ground-truth object centers.
//
// On-disk layout:
//   root/actions.txt                       one class name per line
//   root/videos/<id>/frame_%06d.png        1-based, contiguous
//   root/videos/<id>/meta                  "action: <name>" / "num_frames: <n>"
//   root/videos/<id>/centers               synthetic only; per frame, one
//                                          "x y" pair per object on one line

#include <filesystem>
#include <string>
#include <vector>

#include "kpvp/png_io.hpp"

namespace kpvp {

struct VideoClip {
    std::string id;
    int action = 0;
    std::vector<std::filesystem::path> frame_paths;
    // centers[t] holds one (x, y) pixel point per tracked object.
    std::vector<std::vector<Eigen::Vector2f>> centers;

    int frame_count() const { return static_cast<int>(frame_paths.size()); }
    Frame frame(int i) const { return load_png(frame_paths.at(i)); }
};

struct AugmentSpec {
    bool flip = true;
    double max_rotation_deg = 10.0;
    double crop_min = 0.85;
    double crop_max = 1.0;
    double color_gain_min = 0.8;
    double color_gain_max = 1.2;

    static AugmentSpec off() { return {false, 0.0, 1.0, 1.0, 1.0, 1.0}; }
    void validate() const {
        if (crop_min <= 0.0 || crop_min > crop_max || crop_max > 1.0)
            throw ConfigError("AugmentSpec: crop fraction must lie in (0, 1]");
    }
};

struct DatasetSpec {
    std::filesystem::path root;
    int image_h = 0, image_w = 0;  // 0 = keep native size
    AugmentSpec augment;
};

struct Dataset {
    std::vector<std::string> actions;
    std::vector<VideoClip> clips;  // sorted by id
    int action_count() const { return static_cast<int>(actions.size()); }
};

Dataset load_dataset(const DatasetSpec& spec);

// Two distinct frame indices from one clip, |i - j| <= max_gap (0 = any).
std::pair<int, int> sample_pair_indices(int frame_count, int max_gap, Rng& rng);

inline std::pair<Frame, Frame> sample_frame_pair(const VideoClip& clip, int max_gap, Rng& rng) {
    auto [i, j] = sample_pair_indices(clip.frame_count(), max_gap, rng);
    return {clip.frame(i), clip.frame(j)};
}

// One shared random transform (flip / rotate / crop-resize / color gain)
// applied to both frames of a pair.
std::pair<Frame, Frame> augment_pair(const Frame& a, const Frame& b, const AugmentSpec& spec,
                                     int out_h, int out_w, Rng& rng);

// Bilinear-resampled affine warp; exposed for reuse and tests.
Frame warp_affine(const Frame& src, const Eigen::Matrix<float, 2, 3>& out_to_src, int out_h, int out_w);

enum class SyntheticKind { MovingDisc, TwoPartPendulum, BouncingShapes };

SyntheticKind parse_synthetic_kind(const std::string& name);

// Writes `count` clips in the standard layout plus per-frame ground-truth
// center records; bit-reproducible per seed.
void generate_synthetic_dataset(SyntheticKind kind, int count, int length, int h, int w,
                                int action_count, std::uint64_t seed,
                                const std::filesystem::path& root);

std::uint64_t dataset_digest(const Dataset& ds);

}  // namespace kpvp
