#include <algorithm>
#include <cmath>

#include "kpvp/evaluation.hpp"

namespace kpvp {

namespace {

void check_feature_set(const FeatureSet& s, const char* which) {
    if (s.features.rows() < s.features.cols() + 1)
        throw InvalidInputError(std::string("frechet_distance: set ") + which +
                                " needs N >= D+1 samples for covariance estimation");
}

Matrix<double> covariance(const Matrix<double>& x) {
    Matrix<double> centered = x.rowwise() - x.colwise().mean();
    return centered.transpose() * centered / double(x.rows() - 1);
}

}  // namespace

double frechet_distance(const FeatureSet& a, const FeatureSet& b) {
    if (a.features.cols() != b.features.cols())
        throw InvalidInputError("frechet_distance: feature dimension mismatch");
    check_feature_set(a, "A");
    check_feature_set(b, "B");
    const Vector<double> mu_a = a.features.colwise().mean();
    const Vector<double> mu_b = b.features.colwise().mean();
    const Matrix<double> cov_a = covariance(a.features);
    const Matrix<double> cov_b = covariance(b.features);

    Eigen::EigenSolver<Matrix<double>> solver(cov_a * cov_b);
    double trace_sqrt = 0;
    const double scale = std::max(1.0, (cov_a * cov_b).cwiseAbs().maxCoeff());
    for (Eigen::Index i = 0; i < solver.eigenvalues().size(); ++i) {
        const std::complex<double> ev = solver.eigenvalues()(i);
        if (std::abs(ev.imag()) > 1e-6 * scale)
            throw NumericError("frechet_distance: eigenvalue imaginary part exceeds tolerance");
        trace_sqrt += std::sqrt(std::max(ev.real(), 0.0));
    }
    const double mean_term = (mu_a - mu_b).squaredNorm();
    return mean_term + cov_a.trace() + cov_b.trace() - 2.0 * trace_sqrt;
}

double keypoint_tracking_error(const KeypointSequence<Real>& pred,
                               const std::vector<std::vector<Eigen::Vector2f>>& truth_centers, int h,
                               int w) {
    bool any = false;
    for (const auto& pts : truth_centers) any = any || !pts.empty();
    if (truth_centers.empty() || !any) throw InvalidInputError("keypoint_tracking_error: empty truth");
    const std::size_t frames = std::min(pred.size(), truth_centers.size());
    double total = 0;
    long count = 0;
    for (std::size_t t = 0; t < frames; ++t) {
        Coords<Real> px = denormalize_keypoints<Real>(pred[t], h, w);
        for (const auto& center : truth_centers[t]) {
            double best = std::numeric_limits<double>::infinity();
            for (Eigen::Index k = 0; k < px.rows(); ++k) {
                const double dx = double(px(k, 0)) - center.x();
                const double dy = double(px(k, 1)) - center.y();
                best = std::min(best, std::hypot(dx, dy));
            }
            total += best;
            ++count;
        }
    }
    return total / double(count);
}

namespace {
Vector<double> flatten_sequence(const KeypointSequence<Real>& seq) {
    const Eigen::Index k = seq[0].coords.rows();
    Vector<double> v(static_cast<Eigen::Index>(seq.size()) * k * 2);
    Eigen::Index j = 0;
    for (const auto& frame : seq)
        for (Eigen::Index i = 0; i < k; ++i) {
            v(j++) = frame.coords(i, 0);
            v(j++) = frame.coords(i, 1);
        }
    return v;
}
}  // namespace

void CentroidClassifier::fit(const std::vector<std::pair<KeypointSequence<Real>, int>>& labelled) {
    if (labelled.empty()) throw InvalidInputError("CentroidClassifier: empty fitting set");
    int classes = 0;
    for (const auto& [seq, label] : labelled) classes = std::max(classes, label + 1);
    if (classes < 2) throw InvalidInputError("CentroidClassifier: need at least 2 classes");
    const Eigen::Index dim = flatten_sequence(labelled[0].first).size();
    Matrix<double> all(static_cast<Eigen::Index>(labelled.size()), dim);
    for (std::size_t i = 0; i < labelled.size(); ++i)
        all.row(static_cast<Eigen::Index>(i)) = flatten_sequence(labelled[i].first).transpose();
    mean_ = all.colwise().mean();
    std_ = ((all.rowwise() - mean_.transpose()).array().square().colwise().mean().sqrt() + 1e-9)
               .matrix()
               .transpose();
    centroids_.setZero(classes, dim);
    Vector<double> counts = Vector<double>::Zero(classes);
    for (std::size_t i = 0; i < labelled.size(); ++i) {
        const Eigen::Index r = labelled[i].second;
        centroids_.row(r) += ((all.row(static_cast<Eigen::Index>(i)).transpose() - mean_).array() /
                              std_.array())
                                 .matrix()
                                 .transpose();
        counts(r) += 1;
    }
    for (int c = 0; c < classes; ++c) {
        if (counts(c) == 0) throw InvalidInputError("CentroidClassifier: class without samples");
        centroids_.row(c) /= counts(c);
    }
}

int CentroidClassifier::predict(const KeypointSequence<Real>& seq) const {
    Vector<double> z = ((flatten_sequence(seq) - mean_).array() / std_.array()).matrix();
    int best = 0;
    double best_dist = std::numeric_limits<double>::infinity();
    for (Eigen::Index c = 0; c < centroids_.rows(); ++c) {
        const double d = (centroids_.row(c).transpose() - z).squaredNorm();
        if (d < best_dist) {
            best_dist = d;
            best = static_cast<int>(c);
        }
    }
    return best;
}

double action_consistency(const CentroidClassifier& classifier,
                          const std::vector<std::pair<KeypointSequence<Real>, int>>& samples) {
    if (samples.empty()) throw InvalidInputError("action_consistency: empty sample set");
    long hits = 0;
    for (const auto& [seq, label] : samples)
        if (classifier.predict(seq) == label) ++hits;
    return double(hits) / double(samples.size());
}

ReconstructionReport reconstruction_report(ModelBundle& bundle, const Dataset& dataset,
                                           std::uint64_t seed, int pairs_per_clip) {
    if (dataset.clips.empty()) throw InvalidInputError("reconstruction_report: empty dataset");
    Rng rng(seed);
    ReconstructionReport rep;
    for (const auto& clip : dataset.clips) {
        for (int p = 0; p < pairs_per_clip; ++p) {
            auto [v, vp] = sample_frame_pair(clip, bundle.hp.pair_max_gap, rng);
            KeypointSet<Real> k_ref = detect_keypoints<Real>(v, bundle.stage1.detector);
            KeypointSet<Real> k_tgt = detect_keypoints<Real>(vp, bundle.stage1.detector);
            auto res = translate<Real>(v, {k_ref}, {k_tgt}, bundle.stage1);
            rep.mean_l1 += (res.output.data - vp.data).array().abs().mean();
            rep.mean_perceptual += perceptual_loss<Real>(res.output, vp, bundle.stage1.perceptual);
            rep.mean_mask_coverage += (1.0 - res.mask.data.array()).mean();
            ++rep.pair_count;
        }
    }
    rep.mean_l1 /= rep.pair_count;
    rep.mean_perceptual /= rep.pair_count;
    rep.mean_mask_coverage /= rep.pair_count;
    return rep;
}

VideoFeatureExtractor::VideoFeatureExtractor(int image_h, int image_w, std::uint64_t seed, int frames)
    : frames_(frames) {
    Rng rng(seed);
    int c = 3 * frames;
    int h = image_h;
    const int widths[3] = {16, 32, 32};
    for (int i = 0; i < 3; ++i) {
        convs_.emplace_back(c, widths[i], 3, 2, 1, rng);
        c = widths[i];
        h = (h + 1) / 2;
    }
    (void)h;
}

Vector<double> VideoFeatureExtractor::features(const std::vector<Frame>& clip_frames) {
    if (clip_frames.empty()) throw InvalidInputError("VideoFeatureExtractor: empty clip");
    // Evenly subsample `frames_` frames and stack channel-wise.
    const int n = static_cast<int>(clip_frames.size());
    nn::Tensor<Real> x(1, 3 * frames_, clip_frames[0].h, clip_frames[0].w);
    for (int i = 0; i < frames_; ++i) {
        const int t = frames_ == 1 ? 0 : (i * (n - 1)) / (frames_ - 1);
        x.data.middleRows(3 * i, 3) = clip_frames[t].data;
    }
    for (auto& conv : convs_) {
        x = conv.forward(x, false);
        x.data = x.data.array().max(x.data.array() * Real(0.2)).matrix();
    }
    Vector<double> out(x.c);
    for (int c = 0; c < x.c; ++c) out(c) = double(x.data.row(c).mean());
    return out;
}

}  // namespace kpvp
