#include "featlens/train.hpp"

#include <numeric>

namespace featlens {

double lr_at(const TrainConfig& cfg, int epoch) {
  check(epoch >= 0, "lr_at: epoch must be >= 0");
  check(cfg.initial_lr > 0.0, "lr_at: initial lr must be positive");
  check(cfg.lr_decay > 0.0 && cfg.lr_decay <= 1.0, "lr_at: decay must be in (0,1]");
  check(cfg.decay_period_epochs >= 1, "lr_at: decay period must be >= 1");
  return cfg.initial_lr * std::pow(cfg.lr_decay, double(epoch / cfg.decay_period_epochs));
}

double TrainLog::smoothed_loss_front(size_t window) const {
  const size_t n = std::min(window, rows.size());
  check(n > 0, "train log is empty");
  double acc = 0.0;
  for (size_t i = 0; i < n; ++i) acc += rows[i].loss;
  return acc / double(n);
}

double TrainLog::smoothed_loss_back(size_t window) const {
  const size_t n = std::min(window, rows.size());
  check(n > 0, "train log is empty");
  double acc = 0.0;
  for (size_t i = rows.size() - n; i < rows.size(); ++i) acc += rows[i].loss;
  return acc / double(n);
}

// ---------------------------------------------------------------------------
// Augmentation policy
// ---------------------------------------------------------------------------
void AugPolicy::validate() const {
  check(!entries.empty(), "aug policy: no entries");
  double total = 0.0;
  for (const auto& [spec, p] : entries) {
    (void)spec;
    check(p >= 0.0, "aug policy: negative probability");
    total += p;
  }
  check(std::abs(total - 1.0) < 1e-9, "aug policy: probabilities sum to " + std::to_string(total));
}

TransformSpec AugPolicy::sample(Rng& rng) const {
  const double u = rng.uniform();
  double acc = 0.0;
  for (const auto& [spec, p] : entries) {
    acc += p;
    if (u < acc) return spec;
  }
  return entries.back().first;
}

AugPolicy AugPolicy::none() { return {{{TransformSpec::identity(), 1.0}}}; }

AugPolicy AugPolicy::small_dataset_rotations() {
  return {{{TransformSpec::identity(), 0.4},
           {TransformSpec::rotation(90), 0.2},
           {TransformSpec::rotation(180), 0.2},
           {TransformSpec::rotation(270), 0.2}}};
}

// ---------------------------------------------------------------------------
// Shared helpers
// ---------------------------------------------------------------------------
namespace {

std::vector<int> pick_subset(int total, int subset, uint64_t seed) {
  std::vector<int> idx(static_cast<size_t>(total));
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(Rng::derive(seed, 0xda7a));
  rng.shuffle(idx);
  if (subset > 0 && subset < total) idx.resize(size_t(subset));
  return idx;
}

void check_finite_loss(double loss, int step) {
  if (!std::isfinite(loss))
    throw std::runtime_error("training diverged: non-finite loss at step " +
                             std::to_string(step));
}

double batch_accuracy(const Tensor& logits, const std::vector<int>& labels) {
  const int b = logits.dim(0), c = logits.dim(1);
  const float* v = logits.data().data();
  int correct = 0;
  for (int n = 0; n < b; ++n) {
    int best = 0;
    for (int i = 1; i < c; ++i)
      if (v[size_t(n) * c + i] > v[size_t(n) * c + best]) best = i;
    if (best == labels[size_t(n)]) ++correct;
  }
  return double(correct) / b;
}

// Per-image feature rows extracted once from the frozen host; lens and head
// training then iterate over cached values instead of re-running the host.
struct FeatureStore {
  Shape item_shape;        // (C,H,W)
  std::vector<float> data;  // n * numel(item_shape)

  void init(Shape s, int n) {
    item_shape = std::move(s);
    data.assign(size_t(n) * size_t(numel(item_shape)), 0.0f);
  }
  size_t item_size() const { return size_t(numel(item_shape)); }

  void put(int row, const Tensor& batch_tensor, int batch_index) {
    const size_t per = item_size();
    const float* src = batch_tensor.data().data() + size_t(batch_index) * per;
    std::copy(src, src + per, data.begin() + size_t(row) * per);
  }

  Tensor gather(const std::vector<int>& rows) const {
    Shape s = item_shape;
    s.insert(s.begin(), int(rows.size()));
    std::vector<float> out(rows.size() * item_size());
    for (size_t i = 0; i < rows.size(); ++i)
      std::copy(data.begin() + size_t(rows[size_t(i)]) * item_size(),
                data.begin() + size_t(rows[size_t(i)] + 1) * item_size(),
                out.begin() + i * item_size());
    return Tensor::from_data(std::move(s), std::move(out));
  }
};

std::vector<std::vector<int>> make_batches(std::vector<int> order, int batch_size, Rng& rng) {
  rng.shuffle(order);
  std::vector<std::vector<int>> batches;
  for (size_t i = 0; i < order.size(); i += size_t(batch_size)) {
    const size_t hi = std::min(order.size(), i + size_t(batch_size));
    batches.emplace_back(order.begin() + long(i), order.begin() + long(hi));
  }
  return batches;
}

}  // namespace

// ---------------------------------------------------------------------------
// Supervised host training
// ---------------------------------------------------------------------------
HostTrainResult train_dataaug(const Dataset& train, const HostConfig& host_cfg,
                              const AugPolicy& policy, const TrainConfig& cfg) {
  policy.validate();
  HostModel model(host_cfg, cfg.seed);
  SgdT<float> opt(model.parameters());
  Rng rng(Rng::derive(cfg.seed, 0x7131));

  const std::vector<int> subset = pick_subset(train.count(), cfg.subset, cfg.seed);
  TrainLog log;
  int step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_at(cfg, epoch);
    for (auto& batch : make_batches(subset, cfg.batch_size, rng)) {
      const TransformSpec spec = policy.sample(rng);
      Tensor inputs = make_input_batch(train, batch, host_cfg.input_h, host_cfg.input_w, &spec);
      auto out = model.forward_with_taps(inputs);
      const std::vector<int> labels = labels_of(train, batch);
      Tensor loss = cross_entropy(out.logits, labels);
      check_finite_loss(loss.item(), step);
      backward(loss);
      opt.step(lr, cfg.momentum);
      log.rows.push_back({step, lr, double(loss.item()), batch_accuracy(out.logits, labels)});
      ++step;
    }
  }
  return {std::move(model), std::move(log)};
}

HostTrainResult train_host(const Dataset& train, const HostConfig& host_cfg,
                           const TrainConfig& cfg) {
  return train_dataaug(train, host_cfg, AugPolicy::none(), cfg);
}

// ---------------------------------------------------------------------------
// Lens training
// ---------------------------------------------------------------------------
namespace {

// Runs the frozen host over `indices` twice (original and transformed inputs)
// and stores the tensors each lens kind needs.
struct LensFeatures {
  FeatureStore target;  // block output of the original input
  FeatureStore x2, x0, x3;
};

LensFeatures featurize_pairs(const FrozenHost& host, const Dataset& ds,
                             const std::vector<int>& indices, const TransformSpec& spec,
                             bool want_x3, const ContentWindow* crop) {
  const auto& cfg = host.config();
  LensFeatures feats;
  const int n = int(indices.size());
  const int chunk = 64;
  const TransformSpec identity = TransformSpec::identity();
  bool initialized = false;
  for (int at = 0; at < n; at += chunk) {
    std::vector<int> part(indices.begin() + at,
                          indices.begin() + std::min(n, at + chunk));
    Tensor orig = make_input_batch(ds, part, cfg.input_h, cfg.input_w, &identity);
    Tensor target = host.forward_with_taps(orig).taps.block_out;
    Tensor timg = make_input_batch(ds, part, cfg.input_h, cfg.input_w, &spec);
    Taps taps = host.forward_with_taps(timg).taps;
    Tensor x2 = taps.x2, x0 = taps.x0, x3 = taps.x3;
    if (crop) {
      x2 = crop_spatial(x2, crop->y0, crop->x0, crop->h, crop->w);
      x0 = crop_spatial(x0, crop->y0, crop->x0, crop->h, crop->w);
      x3 = crop_spatial(x3, crop->y0, crop->x0, crop->h, crop->w);
    }
    if (!initialized) {
      auto tail = [](const Tensor& t) {
        return Shape{t.dim(1), t.dim(2), t.dim(3)};
      };
      feats.target.init(tail(target), n);
      feats.x2.init(tail(x2), n);
      feats.x0.init(tail(x0), n);
      if (want_x3) feats.x3.init(tail(x3), n);
      initialized = true;
    }
    for (size_t i = 0; i < part.size(); ++i) {
      feats.target.put(at + int(i), target, int(i));
      feats.x2.put(at + int(i), x2, int(i));
      feats.x0.put(at + int(i), x0, int(i));
      if (want_x3) feats.x3.put(at + int(i), x3, int(i));
    }
  }
  return feats;
}

}  // namespace

LensTrainResult train_lens(const FrozenHost& host, LensBin bin, const Dataset& originals,
                           const TrainConfig& cfg, int groups) {
  check(bin != LensBin::Identity, "train_lens: the identity bin is a pass-through, not trained");
  host.verify_unchanged();
  const auto& hcfg = host.config();
  const TransformSpec spec = TransformSpec::rotation(bin_exact_angle(bin));

  const std::vector<int> indices = pick_subset(originals.count(), cfg.subset, cfg.seed);
  LensFeatures feats = featurize_pairs(host, originals, indices, spec, false, nullptr);

  Rng init_rng(Rng::derive(cfg.seed, 0x1e45));
  RotationLens lens = RotationLens::create(hcfg.feature_channels(), hcfg.feature_channels(),
                                           groups, bin_exact_angle(bin), init_rng);
  SgdT<float> opt(lens.parameters());
  Rng rng(Rng::derive(cfg.seed, 0x0ba7 + uint64_t(bin)));

  TrainLog log;
  std::vector<int> order(indices.size());
  std::iota(order.begin(), order.end(), 0);
  int step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_at(cfg, epoch);
    for (auto& batch : make_batches(order, cfg.batch_size, rng)) {
      Tensor target = feats.target.gather(batch);
      Tensor x2 = feats.x2.gather(batch);
      Tensor x0 = feats.x0.gather(batch);
      Tensor y = lens.forward(x2, x0);
      Tensor loss = scale(reconstruction_loss(target, y, cfg.loss), 1.0 / double(batch.size()));
      check_finite_loss(loss.item(), step);
      backward(loss);
      opt.step(lr, cfg.momentum);
      log.rows.push_back({step, lr, double(loss.item())});
      ++step;
    }
    host.verify_unchanged();
  }
  return {std::move(lens), std::move(log)};
}

ScalingLensTrainResult train_scaling_lens(const FrozenHost& host, double scale_factor,
                                          const Dataset& originals, const TrainConfig& cfg,
                                          int groups) {
  host.verify_unchanged();
  const auto& hcfg = host.config();
  const TransformSpec spec = TransformSpec::scaling(scale_factor);
  const ContentWindow win = feature_content_window(hcfg, scale_factor);

  const std::vector<int> indices = pick_subset(originals.count(), cfg.subset, cfg.seed);
  LensFeatures feats = featurize_pairs(host, originals, indices, spec, true, &win);

  Rng init_rng(Rng::derive(cfg.seed, 0x5ca1e));
  const int stride = std::max(1, int(std::lround(1.0 / scale_factor)));
  ScalingLens lens = ScalingLens::create(hcfg.feature_channels(), hcfg.feature_channels(), groups,
                                         stride, 3, init_rng);
  SgdT<float> opt(lens.parameters());
  Rng rng(Rng::derive(cfg.seed, 0x5ca1e + 7));

  TrainLog log;
  ScalingLensTrainResult result;
  std::vector<int> order(indices.size());
  std::iota(order.begin(), order.end(), 0);
  int step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_at(cfg, epoch);
    for (auto& batch : make_batches(order, cfg.batch_size, rng)) {
      Tensor target = feats.target.gather(batch);
      Tensor y = lens.forward(feats.x2.gather(batch), feats.x0.gather(batch),
                              feats.x3.gather(batch), hcfg.feature_h(), hcfg.feature_w());
      Tensor loss = scale(reconstruction_loss(target, y, cfg.loss), 1.0 / double(batch.size()));
      check_finite_loss(loss.item(), step);
      backward(loss);
      opt.step(lr, cfg.momentum);
      const double w1 = lens.w1(), w2 = lens.w2();
      check(w1 > 0.0 && w1 < 1.0 && std::abs(w1 + w2 - 1.0) < 1e-12,
            "scaling lens: mixing weights left (0,1)");
      result.weight_trace.emplace_back(w1, w2);
      log.rows.push_back({step, lr, double(loss.item())});
      ++step;
    }
    host.verify_unchanged();
  }
  result.lens = std::move(lens);
  result.log = std::move(log);
  return result;
}

// ---------------------------------------------------------------------------
// Rotation-type classifier
// ---------------------------------------------------------------------------
RotClfTrainResult train_rot_classifier(const FrozenHost& host, const Dataset& originals,
                                       const TrainConfig& cfg) {
  host.verify_unchanged();
  const auto& hcfg = host.config();
  const std::vector<int> indices = pick_subset(originals.count(), cfg.subset, cfg.seed);
  const int n = int(indices.size());
  check(n >= 16, "rot classifier: dataset too small");

  // self-generated labels: rotate by a uniform angle, label with its bin
  std::vector<int> bins(static_cast<size_t>(n));
  const int dim = hcfg.bottleneck_n + hcfg.shortcut_channels();
  FeatureStore pooled;
  pooled.init({dim}, n);
  const int chunk = 64;
  for (int at = 0; at < n; at += chunk) {
    const int hi = std::min(n, at + chunk);
    // per-image angles drawn from a stream derived off the image index
    Tensor inputs;
    {
      std::vector<float> data;
      data.reserve(size_t(hi - at) * hcfg.input_h * hcfg.input_w);
      for (int i = at; i < hi; ++i) {
        Rng arng(Rng::derive(cfg.seed, 0xc1f + uint64_t(i)));
        const double angle = arng.uniform(0.0, 360.0);
        bins[size_t(i)] = int(bin_angle(angle));
        const TransformSpec spec = TransformSpec::rotation(angle);
        Tensor one = make_input_batch(originals, {indices[size_t(i)]}, hcfg.input_h,
                                      hcfg.input_w, &spec);
        auto d = one.data();
        data.insert(data.end(), d.begin(), d.end());
      }
      inputs = Tensor::from_data({hi - at, 1, hcfg.input_h, hcfg.input_w}, std::move(data));
    }
    Taps taps = host.forward_with_taps(inputs).taps;
    Tensor vec = global_avg_pool(concat_channels<float>({taps.x2, taps.x0}));
    for (int i = at; i < hi; ++i) pooled.put(i, vec, i - at);
  }

  const int holdout = std::max(1, n / 5);
  const int train_n = n - holdout;
  RotationClassifier clf = RotationClassifier::zeros(dim);
  SgdT<float> opt(clf.parameters());
  Rng rng(Rng::derive(cfg.seed, 0xc1f0));

  TrainLog log;
  std::vector<int> order(static_cast<size_t>(train_n));
  std::iota(order.begin(), order.end(), 0);
  int step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_at(cfg, epoch);
    for (auto& batch : make_batches(order, cfg.batch_size, rng)) {
      Tensor x = pooled.gather(batch);
      std::vector<int> labels;
      labels.reserve(batch.size());
      for (int i : batch) labels.push_back(bins[size_t(i)]);
      Tensor logits = fully_connected(x, clf.weight, clf.bias);
      Tensor loss = cross_entropy(logits, labels);
      check_finite_loss(loss.item(), step);
      backward(loss);
      opt.step(lr, cfg.momentum);
      log.rows.push_back({step, lr, double(loss.item()), batch_accuracy(logits, labels)});
      ++step;
    }
  }
  host.verify_unchanged();

  std::vector<int> hold(static_cast<size_t>(holdout));
  std::iota(hold.begin(), hold.end(), train_n);
  Tensor hx = pooled.gather(hold);
  std::vector<int> hlabels;
  for (int i : hold) hlabels.push_back(bins[size_t(i)]);
  Tensor hlogits = fully_connected(hx, clf.weight, clf.bias);
  return {std::move(clf), std::move(log), batch_accuracy(hlogits, hlabels)};
}

// ---------------------------------------------------------------------------
// Xlayer baseline
// ---------------------------------------------------------------------------
XlayerBlock XlayerBlock::create(int channels, int mid, uint64_t seed) {
  Rng rng(Rng::derive(seed, 0x1a7e));
  XlayerBlock b;
  auto init = [&rng](int o, int i, int k, const char* name) {
    const double stddev = std::sqrt(2.0 / (double(i) * k * k));
    return Tensor::randn({o, i, k, k}, rng, stddev, true).set_name(name);
  };
  b.c1_w = init(mid, channels, 1, "xlayer.conv1.w");
  b.c1_b = Tensor::zeros({mid}, true).set_name("xlayer.conv1.b");
  b.c2_w = init(mid, mid, 3, "xlayer.conv2.w");
  b.c2_b = Tensor::zeros({mid}, true).set_name("xlayer.conv2.b");
  // zero last conv: the block starts as an identity residual
  b.c3_w = Tensor::zeros({channels, mid, 1, 1}, true).set_name("xlayer.conv3.w");
  b.c3_b = Tensor::zeros({channels}, true).set_name("xlayer.conv3.b");
  return b;
}

Tensor XlayerBlock::forward(const Tensor& block_out) const {
  Tensor h = relu(conv2d(block_out, c1_w, c1_b, 1, 0));
  h = relu(conv2d(h, c2_w, c2_b, 1, 1));
  h = conv2d(h, c3_w, c3_b, 1, 0);
  return relu(add(block_out, h));
}

std::vector<Tensor> XlayerBlock::parameters() const {
  return {c1_w, c1_b, c2_w, c2_b, c3_w, c3_b};
}

std::map<std::string, Tensor> XlayerBlock::named_parameters() const {
  std::map<std::string, Tensor> m;
  for (const auto& p : parameters()) m.emplace(p.name(), p);
  return m;
}

void XlayerBlock::load_parameters(const std::map<std::string, Tensor>& named) {
  for (auto& p : parameters()) {
    auto it = named.find(p.name());
    check(it != named.end(), "xlayer load: missing parameter '" + p.name() + "'");
    check(it->second.shape() == p.shape(), "xlayer load: shape mismatch for '" + p.name() + "'");
    auto dst = p.mutable_data();
    auto src = it->second.data();
    std::copy(src.begin(), src.end(), dst.begin());
  }
}

XlayerTrainResult train_xlayer(const FrozenHost& host, const Dataset& transformed,
                               const TrainConfig& cfg) {
  check(!transformed.specs.empty(), "train_xlayer: dataset must carry per-image transforms");
  host.verify_unchanged();
  const auto& hcfg = host.config();
  const std::vector<int> indices = pick_subset(transformed.count(), cfg.subset, cfg.seed);
  const int n = int(indices.size());

  FeatureStore features;
  features.init({hcfg.feature_channels(), hcfg.feature_h(), hcfg.feature_w()}, n);
  std::vector<int> labels(static_cast<size_t>(n));
  const int chunk = 64;
  for (int at = 0; at < n; at += chunk) {
    std::vector<int> part(indices.begin() + at, indices.begin() + std::min(n, at + chunk));
    Tensor inputs = make_input_batch(transformed, part, hcfg.input_h, hcfg.input_w);
    Tensor x = host.forward_with_taps(inputs).taps.block_out;
    for (size_t i = 0; i < part.size(); ++i) {
      features.put(at + int(i), x, int(i));
      labels[size_t(at) + i] = int(transformed.labels[size_t(part[i])]);
    }
  }

  XlayerBlock block = XlayerBlock::create(hcfg.feature_channels(), hcfg.bottleneck_n, cfg.seed);
  SgdT<float> opt(block.parameters());
  Rng rng(Rng::derive(cfg.seed, 0x1a7e + 3));

  TrainLog log;
  std::vector<int> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  int step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_at(cfg, epoch);
    for (auto& batch : make_batches(order, cfg.batch_size, rng)) {
      Tensor x = features.gather(batch);
      std::vector<int> blabels;
      blabels.reserve(batch.size());
      for (int i : batch) blabels.push_back(labels[size_t(i)]);
      Tensor logits = host.head(block.forward(x));
      Tensor loss = cross_entropy(logits, blabels);
      check_finite_loss(loss.item(), step);
      backward(loss);
      opt.step(lr, cfg.momentum);
      log.rows.push_back({step, lr, double(loss.item()), batch_accuracy(logits, blabels)});
      ++step;
    }
    host.verify_unchanged();
  }
  return {std::move(block), std::move(log)};
}

}  // namespace featlens
