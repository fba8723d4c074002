#include "featlens/analysis.hpp"

#include <numeric>

namespace featlens {

namespace {

template <typename S>
double pearson_impl(std::span<const S> a, std::span<const S> b) {
  check(a.size() == b.size(), "pearson: length mismatch");
  check(a.size() >= 2, "pearson: need at least two samples");
  const size_t n = a.size();
  double ma = 0.0, mb = 0.0;
  for (size_t i = 0; i < n; ++i) {
    ma += double(a[i]);
    mb += double(b[i]);
  }
  ma /= double(n);
  mb /= double(n);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double da = double(a[i]) - ma;
    const double db = double(b[i]) - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  check(saa > 0.0 && sbb > 0.0, "pearson: zero-variance input");
  return sab / std::sqrt(saa * sbb);
}

}  // namespace

double pearson(std::span<const float> a, std::span<const float> b) { return pearson_impl(a, b); }
double pearson(std::span<const double> a, std::span<const double> b) { return pearson_impl(a, b); }

// ---------------------------------------------------------------------------
// Feature correlations
// ---------------------------------------------------------------------------
namespace {

// Dual-align transformed features with the original grid.
Tensor dual_align(const Tensor& xt, const TransformSpec& spec, const HostConfig& cfg) {
  switch (spec.kind) {
    case TransformKind::Identity: return xt;
    case TransformKind::Rotation: {
      double a = std::fmod(spec.angle_deg, 360.0);
      if (a < 0) a += 360.0;
      const int q = int(std::lround(a / 90.0)) % 4;
      check(std::abs(a - 90.0 * std::lround(a / 90.0)) < 1e-9,
            "feature correlations: rotation dual needs a 90-degree multiple");
      if (q == 0) return xt;
      return rotate_feature_quarters(xt, (4 - q) % 4);
    }
    case TransformKind::Scaling: {
      const ContentWindow win = feature_content_window(cfg, spec.scale);
      Tensor content = crop_spatial(xt, win.y0, win.x0, win.h, win.w);
      return bilinear_resize(content, cfg.feature_h(), cfg.feature_w());
    }
  }
  throw std::runtime_error("dual_align: bad spec");
}

CorrelationEntry correlate(const FrozenHost& host, const Dataset& ds, const TransformSpec& spec,
                           int max_images, int batch_size,
                           const std::function<Tensor(const Tensor&)>& reconstruct) {
  const auto& cfg = host.config();
  const int n = std::min(max_images > 0 ? max_images : ds.count(), ds.count());
  check(n >= 1, "feature correlations: empty dataset");

  CorrelationEntry entry;
  entry.transform = spec.kind == TransformKind::Identity ? "identity"
                    : spec.kind == TransformKind::Rotation
                        ? "rot" + std::to_string(int(std::lround(spec.angle_deg)))
                        : "scale1/" + std::to_string(int(std::lround(1.0 / spec.scale)));

  const TransformSpec identity = TransformSpec::identity();
  double whole_sum = 0.0, chan_sum = 0.0;
  int counted = 0, skipped = 0;
  for (int at = 0; at < n; at += batch_size) {
    std::vector<int> part;
    for (int i = at; i < std::min(n, at + batch_size); ++i) part.push_back(i);
    Tensor orig_in = make_input_batch(ds, part, cfg.input_h, cfg.input_w, &identity);
    Tensor x = host.forward_with_taps(orig_in).taps.block_out;
    Tensor timg = make_input_batch(ds, part, cfg.input_h, cfg.input_w, &spec);
    Tensor aligned = reconstruct(timg);

    const int c = x.dim(1), hw = x.dim(2) * x.dim(3);
    const float* xv = x.data().data();
    const float* yv = aligned.data().data();
    for (size_t i = 0; i < part.size(); ++i) {
      std::span<const float> xi(xv + i * size_t(c) * hw, size_t(c) * hw);
      std::span<const float> yi(yv + i * size_t(c) * hw, size_t(c) * hw);
      std::vector<float> xp(static_cast<size_t>(c)), yp(static_cast<size_t>(c));
      for (int ch = 0; ch < c; ++ch) {
        double sx = 0.0, sy = 0.0;
        for (int e = 0; e < hw; ++e) {
          sx += xi[size_t(ch) * hw + e];
          sy += yi[size_t(ch) * hw + e];
        }
        xp[size_t(ch)] = float(sx / hw);
        yp[size_t(ch)] = float(sy / hw);
      }
      try {
        const double wr = pearson(xi, yi);
        const double cr = pearson(std::span<const float>(xp), std::span<const float>(yp));
        whole_sum += wr;
        chan_sum += cr;
        ++counted;
      } catch (const std::exception&) {
        ++skipped;
      }
    }
  }
  check(counted > 0, "feature correlations: every image was degenerate");
  entry.whole_feature_r = whole_sum / counted;
  entry.channel_mean_r = chan_sum / counted;
  entry.sample_count = counted;
  entry.skipped = skipped;
  return entry;
}

}  // namespace

CorrelationEntry feature_correlations(const FrozenHost& host, const Dataset& ds,
                                      const TransformSpec& spec, int max_images, int batch_size) {
  return correlate(host, ds, spec, max_images, batch_size, [&](const Tensor& timg) {
    Tensor xt = host.forward_with_taps(timg).taps.block_out;
    return dual_align(xt, spec, host.config());
  });
}

CorrelationEntry lens_feature_correlations(const FrozenHost& host, const LensRegistry& registry,
                                           const Dataset& ds, const TransformSpec& spec,
                                           int max_images, int batch_size) {
  CorrelationEntry entry =
      correlate(host, ds, spec, max_images, batch_size, [&](const Tensor& timg) {
        Taps taps = host.forward_with_taps(timg).taps;
        switch (spec.kind) {
          case TransformKind::Identity: return taps.block_out;
          case TransformKind::Rotation: {
            const LensBin bin = bin_angle(spec.angle_deg);
            if (bin == LensBin::Identity) return taps.block_out;
            return registry.rotation_for(bin).forward(taps.x2, taps.x0);
          }
          case TransformKind::Scaling: {
            const ContentWindow win = feature_content_window(host.config(), spec.scale);
            auto crop = [&](const Tensor& t) {
              return crop_spatial(t, win.y0, win.x0, win.h, win.w);
            };
            return registry.scaling_for(scale_key(spec.scale))
                .forward(crop(taps.x2), crop(taps.x0), crop(taps.x3), host.config().feature_h(),
                         host.config().feature_w());
          }
        }
        throw std::runtime_error("lens correlations: bad spec");
      });
  entry.transform += "+lens";
  return entry;
}

// ---------------------------------------------------------------------------
// Accuracy evaluation
// ---------------------------------------------------------------------------
namespace {

std::string transform_label(const TransformSpec& spec) {
  switch (spec.kind) {
    case TransformKind::Identity: return "identity";
    case TransformKind::Rotation: return bin_name(bin_angle(spec.angle_deg));
    case TransformKind::Scaling:
      return scale_key(spec.scale) == ScaleKey::Half ? "scale1/2" : "scale1/3";
  }
  return "?";
}

}  // namespace

AccuracyReport evaluate_accuracy(const BatchPredictor& predictor, const Dataset& ds,
                                 const EvalSpec& spec) {
  const int n = std::min(spec.max_images > 0 ? spec.max_images : ds.count(), ds.count());
  std::vector<int> kept;
  for (int i = 0; i < n; ++i) {
    const TransformSpec t = ds.spec(i);
    if (spec.apply_angle_filter) {
      if (t.kind != TransformKind::Rotation) continue;
      double a = std::fmod(t.angle_deg, 360.0);
      if (a < 0) a += 360.0;
      if (a < spec.filter_lo_deg || a > spec.filter_hi_deg) continue;
    }
    kept.push_back(i);
  }
  check(!kept.empty(), "evaluate_accuracy: the angle filter left no images");

  AccuracyReport report;
  for (size_t at = 0; at < kept.size(); at += size_t(spec.batch_size)) {
    std::vector<int> part(kept.begin() + long(at),
                          kept.begin() + long(std::min(kept.size(), at + size_t(spec.batch_size))));
    Tensor logits = predictor(ds, part);
    const int classes = logits.dim(1);
    const float* v = logits.data().data();
    for (size_t i = 0; i < part.size(); ++i) {
      int best = 0;
      for (int c = 1; c < classes; ++c)
        if (v[i * size_t(classes) + size_t(c)] > v[i * size_t(classes) + size_t(best)]) best = c;
      const bool ok = best == int(ds.labels[size_t(part[i])]);
      auto& slot = report.per_transform[transform_label(ds.spec(part[i]))];
      slot.second += 1;
      if (ok) {
        slot.first += 1;
        ++report.correct;
      }
      ++report.total;
    }
  }
  report.accuracy = double(report.correct) / report.total;
  return report;
}

BatchPredictor host_predictor(const FrozenHost& host) {
  const FrozenHost* h = &host;
  return [h](const Dataset& ds, const std::vector<int>& idx) {
    Tensor in = make_input_batch(ds, idx, h->config().input_h, h->config().input_w);
    return h->forward_with_taps(in).logits;
  };
}

BatchPredictor lens_predictor(const FrozenHost& host, const LensRegistry& registry,
                              LensSelect select, const RotationClassifier* clf) {
  const FrozenHost* h = &host;
  const LensRegistry* r = &registry;
  return [h, r, select, clf](const Dataset& ds, const std::vector<int>& idx) {
    Tensor in = make_input_batch(ds, idx, h->config().input_h, h->config().input_w);
    std::vector<TransformSpec> specs;
    specs.reserve(idx.size());
    for (int i : idx) specs.push_back(ds.spec(i));
    return apply_lens_pipeline(*h, *r, in, specs, select, clf);
  };
}

BatchPredictor xlayer_predictor(const FrozenHost& host, const XlayerBlock& block) {
  const FrozenHost* h = &host;
  const XlayerBlock* b = &block;
  return [h, b](const Dataset& ds, const std::vector<int>& idx) {
    Tensor in = make_input_batch(ds, idx, h->config().input_h, h->config().input_w);
    Tensor x = h->forward_with_taps(in).taps.block_out;
    return h->head(b->forward(x));
  };
}

// ---------------------------------------------------------------------------
// Regression
// ---------------------------------------------------------------------------
Regression regress_corr_accuracy(const std::vector<std::pair<double, double>>& points) {
  check(points.size() >= 2, "regression: need at least two points");
  const double n = double(points.size());
  double mx = 0.0, my = 0.0;
  for (const auto& [x, y] : points) {
    mx += x;
    my += y;
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (const auto& [x, y] : points) {
    sxy += (x - mx) * (y - my);
    sxx += (x - mx) * (x - mx);
    syy += (y - my) * (y - my);
  }
  check(sxx > 0.0, "regression: x values are constant");
  Regression fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  fit.r = syy > 0.0 ? sxy / std::sqrt(sxx * syy) : 0.0;
  return fit;
}

}  // namespace featlens
