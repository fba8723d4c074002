#pragma once

#include <functional>

#include "featlens/data.hpp"
#include "featlens/host_model.hpp"
#include "featlens/lens.hpp"
#include "featlens/train.hpp"

namespace featlens {

// Sample Pearson correlation coefficient. Inputs must have equal length >= 2
// and nonzero variance; degenerate inputs raise rather than returning NaN.
double pearson(std::span<const float> a, std::span<const float> b);
double pearson(std::span<const double> a, std::span<const double> b);

struct CorrelationEntry {
  std::string transform;
  double whole_feature_r = 0.0;  // mean over images of r between flattened maps
  double channel_mean_r = 0.0;   // mean over images of r between pooled vectors
  int sample_count = 0;
  int skipped = 0;  // zero-variance features skipped
};

// For each image: features of the original input vs dual-aligned features of
// the transformed input. Rotations are dual-rotated; scalings are cropped to
// the content window and bilinearly upsampled back to the original grid.
CorrelationEntry feature_correlations(const FrozenHost& host, const Dataset& ds,
                                      const TransformSpec& spec, int max_images,
                                      int batch_size = 32);

// Reconstructed-feature variant of the same measurement: the lens output Y
// replaces the dual-aligned transformed features.
CorrelationEntry lens_feature_correlations(const FrozenHost& host, const LensRegistry& registry,
                                           const Dataset& ds, const TransformSpec& spec,
                                           int max_images, int batch_size = 32);

struct EvalSpec {
  double filter_lo_deg = 45.0;
  double filter_hi_deg = 315.0;
  bool apply_angle_filter = false;  // keep rotations with angle in [lo, hi]
  int max_images = 0;               // 0 = all
  int batch_size = 64;
};

struct AccuracyReport {
  double accuracy = 0.0;
  int total = 0;
  int correct = 0;
  // breakdown keyed by bin / transform name
  std::map<std::string, std::pair<int, int>> per_transform;  // (correct, count)
};

// Maps dataset indices to logits. Predictors build their own input batches so
// they control input geometry and lens routing.
using BatchPredictor = std::function<Tensor(const Dataset&, const std::vector<int>&)>;

AccuracyReport evaluate_accuracy(const BatchPredictor& predictor, const Dataset& ds,
                                 const EvalSpec& spec);

// Ready-made predictors; the referenced host/registry/classifier must outlive
// the returned callable.
BatchPredictor host_predictor(const FrozenHost& host);
BatchPredictor lens_predictor(const FrozenHost& host, const LensRegistry& registry,
                              LensSelect select, const RotationClassifier* clf = nullptr);
BatchPredictor xlayer_predictor(const FrozenHost& host, const XlayerBlock& block);

struct Regression {
  double slope = 0.0;
  double intercept = 0.0;
  double r = 0.0;  // Pearson r of the fit
};

// Least squares over (x, y) points; needs >= 2 points and non-constant x.
Regression regress_corr_accuracy(const std::vector<std::pair<double, double>>& points);

}  // namespace featlens
