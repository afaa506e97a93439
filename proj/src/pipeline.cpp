#include <fstream>
#include <iomanip>

#include "kpvp/pipeline.hpp"

namespace kpvp {

std::vector<KeypointSet<Real>> extract_pseudo_labels(const VideoClip& clip, DetectorNet<Real>& detector) {
    if (clip.frame_count() < 2) throw InvalidInputError("extract_pseudo_labels: video too short");
    std::vector<KeypointSet<Real>> out;
    out.reserve(clip.frame_count());
    for (int t = 0; t < clip.frame_count(); ++t) out.push_back(detect_keypoints(clip.frame(t), detector));
    return out;
}

PseudoLabels extract_pseudo_labels(const Dataset& dataset, ModelBundle& bundle) {
    PseudoLabels labels;
    labels.detector_digest = detector_digest(bundle);
    for (const auto& clip : dataset.clips) {
        PseudoLabelItem item;
        item.id = clip.id;
        item.action = clip.action;
        item.sequence = extract_pseudo_labels(clip, bundle.stage1.detector);
        labels.items.push_back(std::move(item));
    }
    return labels;
}

void save_pseudo_labels(const PseudoLabels& labels, const std::filesystem::path& path) {
    nlohmann::json j;
    j["detector_digest"] = labels.detector_digest;
    auto& videos = j["videos"] = nlohmann::json::array();
    for (const auto& item : labels.items) {
        nlohmann::json v;
        v["id"] = item.id;
        v["action"] = item.action;
        auto& seq = v["keypoints"] = nlohmann::json::array();
        for (const auto& k : item.sequence) {
            nlohmann::json frame = nlohmann::json::array();
            for (Eigen::Index i = 0; i < k.coords.rows(); ++i)
                frame.push_back({k.coords(i, 0), k.coords(i, 1)});
            seq.push_back(std::move(frame));
        }
        videos.push_back(std::move(v));
    }
    std::ofstream out(path);
    if (!out) throw DataError("save_pseudo_labels: cannot open " + path.string());
    out << j.dump(1) << "\n";
}

PseudoLabels load_pseudo_labels(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("load_pseudo_labels: cannot open " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("load_pseudo_labels: parse error: ") + e.what());
    }
    PseudoLabels labels;
    labels.detector_digest = j.at("detector_digest").get<std::uint64_t>();
    for (const auto& v : j.at("videos")) {
        PseudoLabelItem item;
        item.id = v.at("id").get<std::string>();
        item.action = v.at("action").get<int>();
        for (const auto& frame : v.at("keypoints")) {
            KeypointSet<Real> k;
            k.coords.resize(static_cast<Eigen::Index>(frame.size()), 2);
            for (std::size_t i = 0; i < frame.size(); ++i) {
                k.coords(static_cast<Eigen::Index>(i), 0) = frame[i][0].get<Real>();
                k.coords(static_cast<Eigen::Index>(i), 1) = frame[i][1].get<Real>();
            }
            item.sequence.push_back(std::move(k));
        }
        labels.items.push_back(std::move(item));
    }
    return labels;
}

Stage1Metrics train_stage1(ModelBundle& bundle, const Dataset& dataset, int steps, int batch_size,
                           std::uint64_t seed, const AugmentSpec& augment, std::ostream* log,
                           int log_every) {
    if (dataset.clips.empty()) throw DataError("train_stage1: empty dataset");
    const auto& hp = bundle.hp;
    Rng rng(seed);
    Stage1TrainState<Real> state = Stage1TrainState<Real>::make(hp);
    state.step = bundle.stage1_steps;
    std::uniform_int_distribution<std::size_t> pick(0, dataset.clips.size() - 1);
    Stage1Metrics last;
    for (int s = 0; s < steps; ++s) {
        nn::Tensor<Real> v(batch_size, 3, hp.image_h, hp.image_w);
        nn::Tensor<Real> vp(batch_size, 3, hp.image_h, hp.image_w);
        for (int b = 0; b < batch_size; ++b) {
            const VideoClip& clip = dataset.clips[pick(rng)];
            auto [f0, f1] = sample_frame_pair(clip, hp.pair_max_gap, rng);
            auto [a0, a1] = augment_pair(f0, f1, augment, hp.image_h, hp.image_w, rng);
            v.sample(b) = a0.data;
            vp.sample(b) = a1.data;
        }
        last = train_translator_step(bundle.stage1, state, v, vp);
        bundle.stage1_steps = state.step;
        if (log && (s % log_every == 0 || s == steps - 1))
            *log << "stage1 step " << last.step << " L_D=" << last.loss_d << " L_QT=" << last.loss_g
                 << " perceptual=" << last.perceptual << " lr=" << last.lr << "\n";
    }
    return last;
}

Stage2Metrics train_stage2(ModelBundle& bundle, const PseudoLabels& labels, int steps, int batch_size,
                           std::uint64_t seed, std::ostream* log, int log_every) {
    if (labels.items.empty()) throw DataError("train_stage2: empty label set");
    const auto& hp = bundle.hp;
    if (labels.detector_digest != detector_digest(bundle) && log)
        *log << "warning: pseudo-label detector digest does not match the bundle's detector\n";
    for (const auto& item : labels.items)
        if (static_cast<int>(item.sequence.size()) < hp.horizon + 1)
            throw DataError("train_stage2: label sequence '" + item.id + "' shorter than horizon+1");
    Rng rng(seed);
    Stage2TrainState<Real> state = Stage2TrainState<Real>::make(hp, seed ^ 0xabcdef12345ull);
    state.step = bundle.stage2_steps;
    std::uniform_int_distribution<std::size_t> pick(0, labels.items.size() - 1);
    Stage2Metrics last;
    for (int s = 0; s < steps; ++s) {
        std::vector<KeypointSequence<Real>> seqs;
        std::vector<int> actions;
        for (int b = 0; b < batch_size; ++b) {
            const auto& item = labels.items[pick(rng)];
            std::uniform_int_distribution<int> start(0, static_cast<int>(item.sequence.size()) - hp.horizon - 1);
            const int t0 = start(rng);
            seqs.emplace_back(item.sequence.begin() + t0, item.sequence.begin() + t0 + hp.horizon + 1);
            actions.push_back(item.action);
        }
        last = train_motion_step(bundle.motion, state, seqs, actions);
        bundle.stage2_steps = state.step;
        if (log && (s % log_every == 0 || s == steps - 1))
            *log << "stage2 step " << last.step << " KL=" << last.kl << " L1=" << last.l1
                 << " adv=" << last.adversarial << " L_D_seq=" << last.loss_d << "\n";
    }
    return last;
}

std::vector<Frame> translate_sequence(const Frame& v0, const KeypointSet<Real>& k0,
                                      const KeypointSequence<Real>& kseq, ModelBundle& bundle,
                                      std::vector<Frame>* masks) {
    if (k0.count() != bundle.hp.keypoint_count) throw InvalidInputError("translate_sequence: K mismatch");
    std::vector<Frame> out;
    for (const auto& kt : kseq) {
        if (kt.count() != bundle.hp.keypoint_count)
            throw InvalidInputError("translate_sequence: K mismatch in sequence");
        auto res = translate<Real>(v0, {k0}, {kt}, bundle.stage1);
        out.push_back(std::move(res.output));
        if (masks) masks->push_back(std::move(res.mask));
    }
    return out;
}

std::vector<Frame> predict_video(const Frame& v0, int action, int horizon, ModelBundle& bundle,
                                 std::uint64_t seed, PredictDiagnostics* diagnostics) {
    if (horizon < 1) throw InvalidInputError("predict_video: horizon must be >= 1");
    if (bundle.stage1_steps == 0 || bundle.stage2_steps == 0)
        throw StateError("predict_video: bundle has untrained stages");
    KeypointSet<Real> k0 = detect_keypoints<Real>(v0, bundle.stage1.detector);
    Vector<Real> a = one_hot<Real>(action, bundle.hp.action_count);
    KeypointSequence<Real> kseq = sample_motion<Real>(k0, a, horizon, bundle.motion, seed);
    std::vector<Frame> masks;
    std::vector<Frame> frames = translate_sequence(v0, k0, kseq, bundle, diagnostics ? &masks : nullptr);
    if (diagnostics) {
        diagnostics->k0 = k0;
        diagnostics->keypoints = kseq;
        diagnostics->masks = std::move(masks);
        diagnostics->synthesized.clear();
        for (const auto& kt : kseq)
            diagnostics->synthesized.push_back(translate<Real>(v0, {k0}, {kt}, bundle.stage1).synth);
    }
    return frames;
}

RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("load_config: cannot open " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("load_config: parse error: ") + e.what());
    }
    RunConfig cfg;
    cfg.hp = j.get<HyperParams>();
    if (j.contains("augmentation")) {
        const auto& a = j["augmentation"];
        cfg.augment.flip = a.value("flip", cfg.augment.flip);
        cfg.augment.max_rotation_deg = a.value("max_rotation_deg", cfg.augment.max_rotation_deg);
        cfg.augment.crop_min = a.value("crop_min", cfg.augment.crop_min);
        cfg.augment.crop_max = a.value("crop_max", cfg.augment.crop_max);
        cfg.augment.color_gain_min = a.value("color_gain_min", cfg.augment.color_gain_min);
        cfg.augment.color_gain_max = a.value("color_gain_max", cfg.augment.color_gain_max);
    }
    cfg.data_root = j.value("data_root", std::string());
    cfg.hp.validate();
    cfg.augment.validate();
    return cfg;
}

std::string config_to_json(const RunConfig& cfg) {
    nlohmann::json j = cfg.hp;
    j["augmentation"] = {{"flip", cfg.augment.flip},
                         {"max_rotation_deg", cfg.augment.max_rotation_deg},
                         {"crop_min", cfg.augment.crop_min},
                         {"crop_max", cfg.augment.crop_max},
                         {"color_gain_min", cfg.augment.color_gain_min},
                         {"color_gain_max", cfg.augment.color_gain_max}};
    j["data_root"] = cfg.data_root;
    return j.dump(2);
}

void apply_determinism_settings() {
    if (deterministic_mode()) Eigen::setNbThreads(1);
}

}  // namespace kpvp
