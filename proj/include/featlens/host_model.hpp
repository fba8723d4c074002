#pragma once

#include <map>

#include "featlens/ops.hpp"

namespace featlens {

// Small ResNet-style classifier whose last block is a bottleneck. The stage
// feeding the block is 3N channels wide so that the block input (shortcut)
// together with the Conv2 output forms the 4N-channel lens input; inside the
// block a 1x1 projection lifts the shortcut to 4N for the residual add.
struct HostConfig {
  int input_h = 56;
  int input_w = 56;
  int input_channels = 1;
  int class_count = 10;
  std::vector<int> stage_widths = {16, 32, 64};  // stem + two downsampling stages
  int bottleneck_n = 64;                         // N; the block maps 3N -> 4N

  int shortcut_channels() const { return 3 * bottleneck_n; }
  int feature_channels() const { return 4 * bottleneck_n; }
  void validate() const;
  // product of all stride-2 stages between image and feature grid
  int total_stride() const { return 8; }
  int feature_h() const;
  int feature_w() const;
};

// Intermediate features of the last block exposed for lenses:
//   x0        shortcut into the block (3N channels)
//   x2        Conv2 output (N channels)
//   x3        Conv3 output (4N channels)
//   block_out output after projection add and ReLU (4N channels)
struct Taps {
  Tensor x0;
  Tensor x2;
  Tensor x3;
  Tensor block_out;
};

class HostModel {
 public:
  HostModel(HostConfig cfg, uint64_t seed);

  struct Output {
    Tensor logits;
    Taps taps;
  };

  // Pure function of (parameters, batch); batch is (B, C, H, W).
  Output forward_with_taps(const Tensor& batch) const;

  // Classifier head on block output: FC(global_avg_pool(X)).
  Tensor head(const Tensor& block_out) const;

  const HostConfig& config() const { return cfg_; }
  std::vector<Tensor> parameters() const;
  std::map<std::string, Tensor> named_parameters() const;
  void load_parameters(const std::map<std::string, Tensor>& named);
  uint64_t checksum() const { return param_checksum(parameters()); }

 private:
  HostConfig cfg_;
  Tensor stem_w_, stem_b_;
  Tensor s1_w_, s1_b_;
  Tensor s2_w_, s2_b_;
  Tensor s3_w_, s3_b_;
  Tensor c1_w_, c1_b_;
  Tensor c2_w_, c2_b_;
  Tensor c3_w_, c3_b_;
  Tensor proj_w_, proj_b_;
  Tensor fc_w_, fc_b_;
};

// Frozen handle over a trained host. Construction drops gradient tracking on
// every parameter and pins a checksum; there is deliberately no way back to a
// trainable model.
class FrozenHost {
 public:
  explicit FrozenHost(HostModel model);

  HostModel::Output forward_with_taps(const Tensor& batch) const {
    return model_.forward_with_taps(batch);
  }
  Tensor head(const Tensor& block_out) const { return model_.head(block_out); }
  const HostConfig& config() const { return model_.config(); }
  std::map<std::string, Tensor> named_parameters() const { return model_.named_parameters(); }

  uint64_t checksum() const { return checksum_; }
  // Throws if any parameter changed since freezing.
  void verify_unchanged() const;

 private:
  HostModel model_;
  uint64_t checksum_ = 0;
};

FrozenHost freeze(HostModel model);

}  // namespace featlens
