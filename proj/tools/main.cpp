// Command-line surface: synthetic data generation, the two training stages,
// pseudo-label extraction, single-image video prediction, and evaluation.
// Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric failure.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "kpvp/evaluation.hpp"
#include "kpvp/pipeline.hpp"

namespace fs = std::filesystem;
using namespace kpvp;

namespace {

std::pair<int, int> parse_size(const std::string& s) {
    const auto x = s.find('x');
    if (x == std::string::npos) throw ConfigError("--size expects HxW, e.g. 64x64");
    return {std::stoi(s.substr(0, x)), std::stoi(s.substr(x + 1))};
}

int parse_action(const std::string& name, const HyperParams& hp) {
    std::string s = name;
    if (s.rfind("class_", 0) == 0) s = s.substr(6);
    try {
        const int idx = std::stoi(s);
        if (idx < 0 || idx >= hp.action_count) throw ConfigError("action index out of range: " + name);
        return idx;
    } catch (const std::invalid_argument&) {
        throw ConfigError("unknown action name: " + name + " (expected class_<index> or an integer)");
    }
}

std::string frame_file(int index1) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "frame_%06d.png", index1);
    return buf;
}

RunConfig resolve_config(const std::string& path) {
    if (path.empty()) return RunConfig{};
    return load_config(path);
}

int run(int argc, char** argv) {
    apply_determinism_settings();
    CLI::App app{"Unsupervised-keypoint video prediction"};
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset with ground-truth centers");
    std::string kind = "moving_disc", size = "64x64", out_dir;
    int count = 100, length = 20, classes = 1;
    std::uint64_t seed = 7;
    synth->add_option("--kind", kind, "moving_disc | two_part_pendulum | bouncing_shapes");
    synth->add_option("--count", count);
    synth->add_option("--length", length);
    synth->add_option("--size", size, "HxW");
    synth->add_option("--classes", classes);
    synth->add_option("--seed", seed);
    synth->add_option("--out", out_dir)->required();

    // train-translator
    auto* tt = app.add_subcommand("train-translator", "Stage-1 training of detector and translator");
    std::string tt_config, tt_data, tt_out;
    int tt_steps = 3000;
    std::uint64_t tt_seed = 1;
    std::string tt_use_mask = "true", tt_use_ref = "true";
    tt->add_option("--config", tt_config);
    tt->add_option("--data", tt_data)->required();
    tt->add_option("--out", tt_out)->required();
    tt->add_option("--steps", tt_steps);
    tt->add_option("--seed", tt_seed);
    tt->add_option("--use-mask", tt_use_mask, "true|false");
    tt->add_option("--use-reference-keypoints", tt_use_ref, "true|false");

    // extract-keypoints
    auto* ek = app.add_subcommand("extract-keypoints", "Extract pseudo-label keypoint sequences");
    std::string ek_ckpt, ek_data, ek_out;
    ek->add_option("--ckpt", ek_ckpt)->required();
    ek->add_option("--data", ek_data)->required();
    ek->add_option("--out", ek_out)->required();

    // train-motion
    auto* tm = app.add_subcommand("train-motion", "Stage-2 training of the motion generator");
    std::string tm_config, tm_labels, tm_ckpt, tm_out;
    int tm_steps = 3000;
    std::uint64_t tm_seed = 2;
    tm->add_option("--config", tm_config);
    tm->add_option("--labels", tm_labels)->required();
    tm->add_option("--ckpt", tm_ckpt)->required();
    tm->add_option("--out", tm_out)->required();
    tm->add_option("--steps", tm_steps);
    tm->add_option("--seed", tm_seed);

    // predict
    auto* pr = app.add_subcommand("predict", "Predict future frames from a single image");
    std::string pr_bundle, pr_image, pr_action = "0", pr_out;
    int pr_frames = 16;
    std::uint64_t pr_seed = 0;
    bool pr_diag = false;
    pr->add_option("--bundle", pr_bundle)->required();
    pr->add_option("--image", pr_image)->required();
    pr->add_option("--action", pr_action);
    pr->add_option("--frames", pr_frames);
    pr->add_option("--seed", pr_seed);
    pr->add_option("--out", pr_out)->required();
    pr->add_flag("--diagnostics", pr_diag);

    // eval
    auto* ev = app.add_subcommand("eval", "Evaluate a bundle against a dataset");
    std::string ev_bundle, ev_data, ev_report;
    ev->add_option("--bundle", ev_bundle)->required();
    ev->add_option("--data", ev_data)->required();
    ev->add_option("--report", ev_report)->required();

    CLI11_PARSE(app, argc, argv);

    if (synth->parsed()) {
        auto [h, w] = parse_size(size);
        generate_synthetic_dataset(parse_synthetic_kind(kind), count, length, h, w, classes, seed,
                                   out_dir);
        std::cout << "wrote " << count << " clips to " << out_dir << "\n";
        return 0;
    }

    if (tt->parsed()) {
        RunConfig cfg = resolve_config(tt_config);
        cfg.hp.use_mask = tt_use_mask != "false";
        cfg.hp.use_reference_keypoints = tt_use_ref != "false";
        Dataset ds = load_dataset({tt_data, cfg.hp.image_h, cfg.hp.image_w, cfg.augment});
        if (ds.clips.empty()) throw DataError("train-translator: no clips in " + tt_data);
        cfg.hp.action_count = std::max(cfg.hp.action_count, ds.action_count());
        ModelBundle bundle = ModelBundle::make(cfg.hp, tt_seed);
        train_stage1(bundle, ds, tt_steps, cfg.hp.batch_size, tt_seed, cfg.augment, &std::cout);
        fs::create_directories(tt_out);
        save_bundle(bundle, fs::path(tt_out) / "bundle.ckpt");
        std::cout << "saved " << (fs::path(tt_out) / "bundle.ckpt").string() << "\n";
        return 0;
    }

    if (ek->parsed()) {
        ModelBundle bundle = load_bundle(ek_ckpt);
        Dataset ds = load_dataset({ek_data, bundle.hp.image_h, bundle.hp.image_w, AugmentSpec::off()});
        PseudoLabels labels = extract_pseudo_labels(ds, bundle);
        save_pseudo_labels(labels, ek_out);
        std::cout << "wrote labels for " << labels.items.size() << " clips to " << ek_out << "\n";
        return 0;
    }

    if (tm->parsed()) {
        ModelBundle bundle = load_bundle(tm_ckpt);
        if (!tm_config.empty()) {
            RunConfig cfg = load_config(tm_config);
            bundle.hp.horizon = cfg.hp.horizon;
            bundle.hp.lambda2 = cfg.hp.lambda2;
            bundle.hp.lambda3 = cfg.hp.lambda3;
        }
        PseudoLabels labels = load_pseudo_labels(tm_labels);
        train_stage2(bundle, labels, tm_steps, bundle.hp.batch_size, tm_seed, &std::cout);
        fs::create_directories(tm_out);
        save_bundle(bundle, fs::path(tm_out) / "bundle.ckpt");
        std::cout << "saved " << (fs::path(tm_out) / "bundle.ckpt").string() << "\n";
        return 0;
    }

    if (pr->parsed()) {
        ModelBundle bundle = load_bundle(pr_bundle);
        Frame v0 = load_png(pr_image);
        if (v0.h != bundle.hp.image_h || v0.w != bundle.hp.image_w)
            throw DataError("predict: image size does not match the bundle");
        const int action = parse_action(pr_action, bundle.hp);
        PredictDiagnostics diag;
        std::vector<Frame> frames =
            predict_video(v0, action, pr_frames, bundle, pr_seed, pr_diag ? &diag : nullptr);
        fs::create_directories(pr_out);
        for (std::size_t t = 0; t < frames.size(); ++t)
            save_png(fs::path(pr_out) / frame_file(static_cast<int>(t) + 1), frames[t]);
        if (pr_diag) {
            fs::create_directories(fs::path(pr_out) / "masks");
            nlohmann::json kps = nlohmann::json::array();
            for (std::size_t t = 0; t < diag.keypoints.size(); ++t) {
                Frame mask3(1, 3, diag.masks[t].h, diag.masks[t].w);
                for (int c = 0; c < 3; ++c)
                    mask3.data.row(c) = diag.masks[t].data.row(0) * 2.0f -
                                        Matrix<Real>::Ones(1, diag.masks[t].data.cols());
                save_png(fs::path(pr_out) / "masks" / frame_file(static_cast<int>(t) + 1), mask3);
                nlohmann::json frame = nlohmann::json::array();
                for (Eigen::Index i = 0; i < diag.keypoints[t].coords.rows(); ++i)
                    frame.push_back({diag.keypoints[t].coords(i, 0), diag.keypoints[t].coords(i, 1)});
                kps.push_back(std::move(frame));
            }
            std::ofstream(fs::path(pr_out) / "keypoints.json") << kps.dump(1) << "\n";
        }
        std::cout << "wrote " << frames.size() << " frames to " << pr_out << "\n";
        return 0;
    }

    if (ev->parsed()) {
        ModelBundle bundle = load_bundle(ev_bundle);
        Dataset ds = load_dataset({ev_data, bundle.hp.image_h, bundle.hp.image_w, AugmentSpec::off()});
        if (ds.clips.empty()) throw DataError("eval: no clips in " + ev_data);
        nlohmann::json report;
        report["bundle_digest"] = file_digest(ev_bundle);
        report["dataset_digest"] = dataset_digest(ds);
        auto& metrics = report["metrics"] = nlohmann::json::array();
        auto add = [&](const std::string& name, double value, int samples) {
            metrics.push_back({{"name", name}, {"value", value}, {"samples", samples}});
        };

        const ReconstructionReport rec = reconstruction_report(bundle, ds);
        add("reconstruction_l1", rec.mean_l1, rec.pair_count);
        add("reconstruction_perceptual", rec.mean_perceptual, rec.pair_count);
        add("mask_coverage", rec.mean_mask_coverage, rec.pair_count);

        bool have_centers = true;
        for (const auto& clip : ds.clips) have_centers = have_centers && !clip.centers.empty();
        if (have_centers) {
            double err = 0;
            for (const auto& clip : ds.clips) {
                auto seq = extract_pseudo_labels(clip, bundle.stage1.detector);
                err += keypoint_tracking_error(seq, clip.centers, bundle.hp.image_h, bundle.hp.image_w);
            }
            add("keypoint_tracking_error_px", err / double(ds.clips.size()),
                static_cast<int>(ds.clips.size()));
        }

        if (bundle.stage2_steps > 0) {
            // Toy Fréchet video distance between real and generated clips.
            VideoFeatureExtractor phi(bundle.hp.image_h, bundle.hp.image_w);
            const int dim = 32;
            if (static_cast<int>(ds.clips.size()) >= dim + 1) {
                Matrix<double> real_f(ds.clips.size(), dim), gen_f(ds.clips.size(), dim);
                for (std::size_t i = 0; i < ds.clips.size(); ++i) {
                    const auto& clip = ds.clips[i];
                    std::vector<Frame> real_frames;
                    for (int t = 0; t < clip.frame_count(); ++t) real_frames.push_back(clip.frame(t));
                    real_f.row(static_cast<Eigen::Index>(i)) = phi.features(real_frames).transpose();
                    std::vector<Frame> gen = predict_video(clip.frame(0), clip.action, bundle.hp.horizon,
                                                           bundle, 1000 + i);
                    gen_f.row(static_cast<Eigen::Index>(i)) = phi.features(gen).transpose();
                }
                add("toy_fvd", frechet_distance({real_f, "real"}, {gen_f, "generated"}),
                    static_cast<int>(ds.clips.size()));
            }

            if (ds.action_count() >= 2) {
                std::vector<std::pair<KeypointSequence<Real>, int>> fit_set, samples;
                for (std::size_t i = 0; i < ds.clips.size(); ++i) {
                    const auto& clip = ds.clips[i];
                    auto labels = extract_pseudo_labels(clip, bundle.stage1.detector);
                    if (static_cast<int>(labels.size()) < bundle.hp.horizon + 1) continue;
                    labels.resize(bundle.hp.horizon + 1);
                    fit_set.emplace_back(labels, clip.action);
                    KeypointSequence<Real> sampled{labels[0]};
                    Vector<Real> a = one_hot<Real>(clip.action, bundle.hp.action_count);
                    auto rest = sample_motion<Real>(labels[0], a, bundle.hp.horizon, bundle.motion,
                                                    2000 + i);
                    sampled.insert(sampled.end(), rest.begin(), rest.end());
                    samples.emplace_back(std::move(sampled), clip.action);
                }
                CentroidClassifier clf;
                clf.fit(fit_set);
                add("action_consistency", action_consistency(clf, samples),
                    static_cast<int>(samples.size()));
            }
        }

        std::ofstream out(ev_report);
        if (!out) throw DataError("eval: cannot open report file " + ev_report);
        out << report.dump(2) << "\n";
        std::cout << report.dump(2) << "\n";
        return 0;
    }

    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 3;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const StateError& e) {
        std::cerr << "state error: " << e.what() << "\n";
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 1;
    } catch (const InvalidInputError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
