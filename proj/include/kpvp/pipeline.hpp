#pragma once

// End-to-end lifecycle: the model bundle (Q, T, D_im, M, D_seq plus
// hyperparameters and step counters), versioned binary checkpoints,
// pseudo-label extraction, the two training loops, and single-image video
// prediction.

#include <filesystem>
#include <optional>
#include <ostream>

#include "kpvp/data.hpp"
#include "kpvp/motion.hpp"
#include "kpvp/translator.hpp"

namespace kpvp {

using Real = float;

struct ModelBundle {
    HyperParams hp;
    Stage1Model<Real> stage1;
    MotionModel<Real> motion;
    long stage1_steps = 0;
    long stage2_steps = 0;

    static ModelBundle make(const HyperParams& hp, std::uint64_t seed) {
        ModelBundle b;
        b.hp = hp;
        b.stage1 = Stage1Model<Real>::make(hp, seed);
        b.motion = MotionModel<Real>::make(hp, seed + 1);
        return b;
    }

    nn::ParamList<Real> all_params() {
        nn::ParamList<Real> p = stage1.all_params();
        p.append(motion.all_params());
        return p;
    }
};

// Versioned binary container; digest-checked on load.
void save_bundle(ModelBundle& bundle, const std::filesystem::path& path);
ModelBundle load_bundle(const std::filesystem::path& path);
std::uint64_t file_digest(const std::filesystem::path& path);
std::uint64_t detector_digest(ModelBundle& bundle);

// --- Pseudo-labels -------------------------------------------------------------

struct PseudoLabelItem {
    std::string id;
    int action = 0;
    std::vector<KeypointSet<Real>> sequence;  // one entry per frame
};

struct PseudoLabels {
    std::uint64_t detector_digest = 0;
    std::vector<PseudoLabelItem> items;
};

std::vector<KeypointSet<Real>> extract_pseudo_labels(const VideoClip& clip, DetectorNet<Real>& detector);
PseudoLabels extract_pseudo_labels(const Dataset& dataset, ModelBundle& bundle);
void save_pseudo_labels(const PseudoLabels& labels, const std::filesystem::path& path);
PseudoLabels load_pseudo_labels(const std::filesystem::path& path);

// --- Training loops -------------------------------------------------------------

// Stage 1 over (v, v') pairs sampled from clips; returns last metrics.
Stage1Metrics train_stage1(ModelBundle& bundle, const Dataset& dataset, int steps, int batch_size,
                           std::uint64_t seed, const AugmentSpec& augment, std::ostream* log = nullptr,
                           int log_every = 100);

// Stage 2 over horizon-(T+1) windows of pseudo-label sequences.
Stage2Metrics train_stage2(ModelBundle& bundle, const PseudoLabels& labels, int steps, int batch_size,
                           std::uint64_t seed, std::ostream* log = nullptr, int log_every = 200);

// --- Inference --------------------------------------------------------------------

struct PredictDiagnostics {
    KeypointSet<Real> k0;
    KeypointSequence<Real> keypoints;  // length T
    std::vector<Frame> masks;
    std::vector<Frame> synthesized;
};

// Fig.-2 style inference: detect k0, sample a keypoint trajectory, then
// translate from the fixed reference (v0, k0) for every step.
std::vector<Frame> predict_video(const Frame& v0, int action, int horizon, ModelBundle& bundle,
                                 std::uint64_t seed, PredictDiagnostics* diagnostics = nullptr);

// Drives the translator with an externally supplied keypoint sequence.
std::vector<Frame> translate_sequence(const Frame& v0, const KeypointSet<Real>& k0,
                                      const KeypointSequence<Real>& kseq, ModelBundle& bundle,
                                      std::vector<Frame>* masks = nullptr);

// --- Configuration ------------------------------------------------------------------

struct RunConfig {
    HyperParams hp;
    AugmentSpec augment;
    std::string data_root;
};

RunConfig load_config(const std::filesystem::path& path);
std::string config_to_json(const RunConfig& cfg);

// Honors KPVP_DETERMINISTIC=1 (single-threaded execution paths).
void apply_determinism_settings();

}  // namespace kpvp
