#pragma once

// Metrics: Fréchet distance between feature populations, keypoint tracking
// error against synthetic ground truth, action-consistency via a
// nearest-centroid classifier over flattened sequences, and stage-1
// reconstruction scores.

#include <string>
#include <vector>

#include "kpvp/pipeline.hpp"

namespace kpvp {

struct FeatureSet {
    Matrix<double> features;  // N x D, one feature vector per row
    std::string source;       // "real" | "generated"
};

// ||mu_A - mu_B||^2 + Tr(S_A + S_B - 2 (S_A S_B)^{1/2}); requires N >= D+1
// per set. Matrix square root via eigen decomposition, negative eigenvalues
// clamped at 0, imaginary parts tolerated up to 1e-6.
double frechet_distance(const FeatureSet& a, const FeatureSet& b);

// Mean over frames and true centers of the pixel distance to the nearest
// predicted keypoint (predictions denormalized onto the H x W grid).
double keypoint_tracking_error(const KeypointSequence<Real>& pred,
                               const std::vector<std::vector<Eigen::Vector2f>>& truth_centers, int h,
                               int w);

// Nearest-centroid classifier over flattened keypoint sequences, with
// per-dimension z-score standardization fit on the training set.
class CentroidClassifier {
  public:
    void fit(const std::vector<std::pair<KeypointSequence<Real>, int>>& labelled);
    int predict(const KeypointSequence<Real>& seq) const;
    int class_count() const { return static_cast<int>(centroids_.rows()); }

  private:
    Vector<double> mean_, std_;
    Matrix<double> centroids_;  // C x D
};

double action_consistency(const CentroidClassifier& classifier,
                          const std::vector<std::pair<KeypointSequence<Real>, int>>& samples);

struct ReconstructionReport {
    double mean_l1 = 0;
    double mean_perceptual = 0;
    double mean_mask_coverage = 0;  // mean of (1 - m)
    int pair_count = 0;
};

ReconstructionReport reconstruction_report(ModelBundle& bundle, const Dataset& dataset,
                                           std::uint64_t seed = 17, int pairs_per_clip = 1);

// Frozen random conv pyramid over a fixed-size stack of clip frames; the
// toy stand-in for an action-recognition feature network. Values are only
// comparable across runs of this same extractor.
class VideoFeatureExtractor {
  public:
    VideoFeatureExtractor(int image_h, int image_w, std::uint64_t seed = 99, int frames = 4);
    Vector<double> features(const std::vector<Frame>& clip_frames);
    int frame_count() const { return frames_; }

  private:
    int frames_;
    std::vector<nn::Conv2d<Real>> convs_;
};

}  // namespace kpvp
