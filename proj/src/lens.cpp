#include "featlens/lens.hpp"

namespace featlens {

namespace {

// Value-level gather of selected batch items; eval paths only.
Tensor gather_batch(const Tensor& t, const std::vector<int>& idx) {
  Shape s = t.shape();
  const size_t per = size_t(numel(s)) / size_t(s[0]);
  s[0] = int(idx.size());
  std::vector<float> out(size_t(idx.size()) * per);
  const float* src = t.data().data();
  for (size_t i = 0; i < idx.size(); ++i)
    std::copy(src + size_t(idx[i]) * per, src + size_t(idx[i] + 1) * per, out.data() + i * per);
  return Tensor::from_data(std::move(s), std::move(out));
}

void scatter_logit_rows(const Tensor& rows, const std::vector<int>& idx, std::vector<float>& out,
                        int classes) {
  const float* src = rows.data().data();
  for (size_t i = 0; i < idx.size(); ++i)
    std::copy(src + i * size_t(classes), src + (i + 1) * size_t(classes),
              out.data() + size_t(idx[i]) * classes);
}

}  // namespace

std::vector<RotationPrediction> predict_rotation(const Taps& taps, const RotationClassifier& clf) {
  Tensor logits = clf.logits_from_taps(taps);
  Tensor probs = softmax(logits);
  const int b = probs.dim(0);
  std::vector<RotationPrediction> out(static_cast<size_t>(b));
  const float* p = probs.data().data();
  for (int n = 0; n < b; ++n) {
    int best = 0;
    for (int i = 0; i < 4; ++i) {
      out[size_t(n)].probs[size_t(i)] = p[size_t(n) * 4 + i];
      if (p[size_t(n) * 4 + i] > p[size_t(n) * 4 + best]) best = i;
    }
    out[size_t(n)].bin = LensBin(best);
  }
  return out;
}

Tensor apply_lens_pipeline(const FrozenHost& host, const LensRegistry& registry,
                           const Tensor& batch, const std::vector<TransformSpec>& specs,
                           LensSelect select, const RotationClassifier* clf) {
  const int b = batch.dim(0);
  check(int(specs.size()) == b, "lens pipeline: one transform spec per image required");
  auto fwd = host.forward_with_taps(batch);
  if (select == LensSelect::None) return fwd.logits;

  std::vector<LensBin> predicted;
  if (select == LensSelect::Predicted) {
    check(clf != nullptr, "lens pipeline: predicted selection needs a rotation classifier");
    for (const auto& p : predict_rotation(fwd.taps, *clf)) predicted.push_back(p.bin);
  }

  // Route every image: rotation/identity specs resolve to a bin, scalings to
  // their scaling lens.
  std::vector<int> by_bin[4];
  std::vector<int> by_scale[2];
  for (int n = 0; n < b; ++n) {
    const auto& spec = specs[size_t(n)];
    if (spec.kind == TransformKind::Scaling) {
      by_scale[scale_key(spec.scale) == ScaleKey::Half ? 0 : 1].push_back(n);
      continue;
    }
    LensBin bin = (spec.kind == TransformKind::Identity) ? LensBin::Identity
                                                         : bin_angle(spec.angle_deg);
    if (select == LensSelect::Predicted) bin = predicted[size_t(n)];
    check(registry.covers(bin), "lens pipeline: unresolved bin " + std::string(bin_name(bin)));
    by_bin[int(bin)].push_back(n);
  }

  const int classes = host.config().class_count;
  std::vector<float> out(size_t(b) * classes);

  // Identity passes the host's own logits through untouched.
  if (!by_bin[0].empty())
    scatter_logit_rows(gather_batch(fwd.logits, by_bin[0]), by_bin[0], out, classes);

  for (int bi = 1; bi < 4; ++bi) {
    if (by_bin[bi].empty()) continue;
    const RotationLens& lens = registry.rotation_for(LensBin(bi));
    Tensor x2 = gather_batch(fwd.taps.x2, by_bin[bi]);
    Tensor x0 = gather_batch(fwd.taps.x0, by_bin[bi]);
    Tensor y = lens.forward(x2, x0);
    scatter_logit_rows(host.head(y), by_bin[bi], out, classes);
  }

  for (int si = 0; si < 2; ++si) {
    if (by_scale[si].empty()) continue;
    const double scale = si == 0 ? 0.5 : 1.0 / 3.0;
    const ScalingLens& lens = registry.scaling_for(si == 0 ? ScaleKey::Half : ScaleKey::Third);
    const ContentWindow win = feature_content_window(host.config(), scale);
    auto cropped = [&](const Tensor& t) {
      return crop_spatial(gather_batch(t, by_scale[si]), win.y0, win.x0, win.h, win.w);
    };
    Tensor y = lens.forward(cropped(fwd.taps.x2), cropped(fwd.taps.x0), cropped(fwd.taps.x3),
                            host.config().feature_h(), host.config().feature_w());
    scatter_logit_rows(host.head(y), by_scale[si], out, classes);
  }

  return Tensor::from_data({b, classes}, std::move(out));
}

}  // namespace featlens
