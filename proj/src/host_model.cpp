#include "featlens/host_model.hpp"

namespace featlens {

void HostConfig::validate() const {
  check(input_h >= 8 && input_w >= 8, "host config: input too small");
  check(input_channels >= 1, "host config: input_channels must be >= 1");
  check(class_count >= 2, "host config: class_count must be >= 2");
  check(stage_widths.size() == 3, "host config: expected stem + two stage widths");
  for (int w : stage_widths) check(w >= 1, "host config: stage width must be >= 1");
  check(bottleneck_n >= 1, "host config: bottleneck width must be >= 1");
  check(feature_h() >= 2 && feature_w() >= 2,
        "host config: spatial size underflows before the last stage (" +
            std::to_string(feature_h()) + "x" + std::to_string(feature_w()) + ")");
}

namespace {
int downsampled(int v) { return (v - 1) / 2 + 1; }  // 3x3 conv, stride 2, pad 1
}  // namespace

int HostConfig::feature_h() const { return downsampled(downsampled(downsampled(input_h))); }
int HostConfig::feature_w() const { return downsampled(downsampled(downsampled(input_w))); }

namespace {
Tensor conv_init(int o, int i, int k, Rng& rng) {
  const double stddev = std::sqrt(2.0 / (double(i) * k * k));
  return Tensor::randn({o, i, k, k}, rng, stddev, true);
}
}  // namespace

HostModel::HostModel(HostConfig cfg, uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  Rng rng(seed);
  const int w0 = cfg_.stage_widths[0], w1 = cfg_.stage_widths[1], w2 = cfg_.stage_widths[2];
  const int n = cfg_.bottleneck_n;
  stem_w_ = conv_init(w0, cfg_.input_channels, 3, rng).set_name("host.stem.w");
  stem_b_ = Tensor::zeros({w0}, true).set_name("host.stem.b");
  s1_w_ = conv_init(w1, w0, 3, rng).set_name("host.stage1.w");
  s1_b_ = Tensor::zeros({w1}, true).set_name("host.stage1.b");
  s2_w_ = conv_init(w2, w1, 3, rng).set_name("host.stage2.w");
  s2_b_ = Tensor::zeros({w2}, true).set_name("host.stage2.b");
  s3_w_ = conv_init(3 * n, w2, 3, rng).set_name("host.stage3.w");
  s3_b_ = Tensor::zeros({3 * n}, true).set_name("host.stage3.b");
  c1_w_ = conv_init(n, 3 * n, 1, rng).set_name("host.block.conv1.w");
  c1_b_ = Tensor::zeros({n}, true).set_name("host.block.conv1.b");
  c2_w_ = conv_init(n, n, 3, rng).set_name("host.block.conv2.w");
  c2_b_ = Tensor::zeros({n}, true).set_name("host.block.conv2.b");
  c3_w_ = conv_init(4 * n, n, 1, rng).set_name("host.block.conv3.w");
  c3_b_ = Tensor::zeros({4 * n}, true).set_name("host.block.conv3.b");
  proj_w_ = conv_init(4 * n, 3 * n, 1, rng).set_name("host.block.proj.w");
  proj_b_ = Tensor::zeros({4 * n}, true).set_name("host.block.proj.b");
  const double fc_std = std::sqrt(2.0 / double(4 * n));
  fc_w_ = Tensor::randn({cfg_.class_count, 4 * n}, rng, fc_std, true).set_name("host.fc.w");
  fc_b_ = Tensor::zeros({cfg_.class_count}, true).set_name("host.fc.b");
}

HostModel::Output HostModel::forward_with_taps(const Tensor& batch) const {
  check(batch.rank() == 4 && batch.dim(1) == cfg_.input_channels &&
            batch.dim(2) == cfg_.input_h && batch.dim(3) == cfg_.input_w,
        "host forward: batch shape " + shape_str(batch.shape()) + " does not match configured " +
            std::to_string(cfg_.input_channels) + "x" + std::to_string(cfg_.input_h) + "x" +
            std::to_string(cfg_.input_w));
  Tensor h = relu(conv2d(batch, stem_w_, stem_b_, 1, 1));
  h = relu(conv2d(h, s1_w_, s1_b_, 2, 1));
  h = relu(conv2d(h, s2_w_, s2_b_, 2, 1));
  Tensor x0 = relu(conv2d(h, s3_w_, s3_b_, 2, 1));
  Tensor x1 = relu(conv2d(x0, c1_w_, c1_b_, 1, 0));
  Tensor x2 = relu(conv2d(x1, c2_w_, c2_b_, 1, 1));
  Tensor x3 = conv2d(x2, c3_w_, c3_b_, 1, 0);
  Tensor shortcut = conv2d(x0, proj_w_, proj_b_, 1, 0);
  Tensor block_out = relu(add(x3, shortcut));
  Output out;
  out.logits = head(block_out);
  out.taps = Taps{x0, x2, x3, block_out};
  return out;
}

Tensor HostModel::head(const Tensor& block_out) const {
  return fully_connected(global_avg_pool(block_out), fc_w_, fc_b_);
}

std::vector<Tensor> HostModel::parameters() const {
  return {stem_w_, stem_b_, s1_w_, s1_b_, s2_w_, s2_b_, s3_w_, s3_b_, c1_w_, c1_b_,
          c2_w_,   c2_b_,   c3_w_, c3_b_, proj_w_, proj_b_, fc_w_, fc_b_};
}

std::map<std::string, Tensor> HostModel::named_parameters() const {
  std::map<std::string, Tensor> m;
  for (const auto& p : parameters()) m.emplace(p.name(), p);
  return m;
}

void HostModel::load_parameters(const std::map<std::string, Tensor>& named) {
  for (auto& p : parameters()) {
    auto it = named.find(p.name());
    check(it != named.end(), "host load: missing parameter '" + p.name() + "'");
    check(it->second.shape() == p.shape(),
          "host load: shape mismatch for '" + p.name() + "': expected " + shape_str(p.shape()) +
              ", got " + shape_str(it->second.shape()));
    auto dst = p.mutable_data();
    auto src = it->second.data();
    std::copy(src.begin(), src.end(), dst.begin());
  }
}

FrozenHost::FrozenHost(HostModel model) : model_(std::move(model)) {
  for (auto& p : model_.parameters()) p.set_requires_grad(false);
  checksum_ = model_.checksum();
}

void FrozenHost::verify_unchanged() const {
  check(model_.checksum() == checksum_,
        "frozen host parameters changed (checksum mismatch); aborting");
}

FrozenHost freeze(HostModel model) { return FrozenHost(std::move(model)); }

}  // namespace featlens
