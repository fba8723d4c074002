#pragma once

#include "featlens/data.hpp"
#include "featlens/host_model.hpp"
#include "featlens/lens.hpp"
#include "featlens/loss.hpp"

namespace featlens {

struct TrainConfig {
  int epochs = 3;
  int batch_size = 64;
  double initial_lr = 0.01;
  double lr_decay = 0.5;
  int decay_period_epochs = 1;
  double momentum = 0.9;
  uint64_t seed = 1;
  LossConfig loss;
  int subset = 0;  // 0 trains on the whole dataset
};

// initial_lr * decay^floor(epoch / period); strictly positive, non-increasing.
double lr_at(const TrainConfig& cfg, int epoch);

struct LogRow {
  int step = 0;
  double lr = 0.0;
  double loss = 0.0;
  double acc = -1.0;  // < 0 means not recorded
};

struct TrainLog {
  std::vector<LogRow> rows;
  double last_loss() const { return rows.empty() ? 0.0 : rows.back().loss; }
  // mean loss over the first/last `window` rows, for convergence checks
  double smoothed_loss_front(size_t window) const;
  double smoothed_loss_back(size_t window) const;
};

// ---------------------------------------------------------------------------
// Supervised host training (plain and augmented)
// ---------------------------------------------------------------------------
struct AugPolicy {
  std::vector<std::pair<TransformSpec, double>> entries;

  void validate() const;
  TransformSpec sample(Rng& rng) const;

  static AugPolicy none();
  // no transform 0.4, each of the three rotations 0.2
  static AugPolicy small_dataset_rotations();
};

struct HostTrainResult {
  HostModel model;
  TrainLog log;
};

// Supervised training with per-batch transform sampling under `policy`.
// Plain host training is the degenerate policy {none: 1.0}.
HostTrainResult train_dataaug(const Dataset& train, const HostConfig& host_cfg,
                              const AugPolicy& policy, const TrainConfig& cfg);
HostTrainResult train_host(const Dataset& train, const HostConfig& host_cfg,
                           const TrainConfig& cfg);

// ---------------------------------------------------------------------------
// Self-supervised lens training. Labels are never consulted; the frozen host
// provides original features X and transformed-input taps, and only lens
// parameters receive gradients. Aborts if the host checksum drifts or the
// loss stops being finite.
// ---------------------------------------------------------------------------
struct LensTrainResult {
  RotationLens lens;
  TrainLog log;
};

LensTrainResult train_lens(const FrozenHost& host, LensBin bin, const Dataset& originals,
                           const TrainConfig& cfg, int groups);

struct ScalingLensTrainResult {
  ScalingLens lens;
  TrainLog log;
  // (w1, w2) after every step
  std::vector<std::pair<double, double>> weight_trace;
};

ScalingLensTrainResult train_scaling_lens(const FrozenHost& host, double scale_factor,
                                          const Dataset& originals, const TrainConfig& cfg,
                                          int groups);

// ---------------------------------------------------------------------------
// Rotation-type classifier: FC over pooled lens-input features, labels are
// the self-generated angle bins.
// ---------------------------------------------------------------------------
struct RotClfTrainResult {
  RotationClassifier clf;
  TrainLog log;
  double holdout_accuracy = 0.0;
};

RotClfTrainResult train_rot_classifier(const FrozenHost& host, const Dataset& originals,
                                       const TrainConfig& cfg);

// ---------------------------------------------------------------------------
// Xlayer baseline: one extra bottleneck block on top of the frozen block
// output, trained with class labels through the frozen FC head. The last
// conv starts at zero, so the initial block is an identity residual.
// ---------------------------------------------------------------------------
struct XlayerBlock {
  Tensor c1_w, c1_b;
  Tensor c2_w, c2_b;
  Tensor c3_w, c3_b;

  static XlayerBlock create(int channels, int mid, uint64_t seed);
  Tensor forward(const Tensor& block_out) const;
  std::vector<Tensor> parameters() const;
  std::map<std::string, Tensor> named_parameters() const;
  void load_parameters(const std::map<std::string, Tensor>& named);
};

struct XlayerTrainResult {
  XlayerBlock block;
  TrainLog log;
};

// `transformed` must carry per-image transform specs and labels.
XlayerTrainResult train_xlayer(const FrozenHost& host, const Dataset& transformed,
                               const TrainConfig& cfg);

}  // namespace featlens
