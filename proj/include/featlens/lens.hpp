#pragma once

#include <optional>

#include "featlens/host_model.hpp"
#include "featlens/ops.hpp"

namespace featlens {

// ---------------------------------------------------------------------------
// Transform declarations and angle binning
// ---------------------------------------------------------------------------
enum class TransformKind { Identity, Rotation, Scaling };

struct TransformSpec {
  TransformKind kind = TransformKind::Identity;
  double angle_deg = 0.0;  // rotations: [0, 360)
  double scale = 1.0;      // scalings: (0, 1]

  static TransformSpec identity() { return {}; }
  static TransformSpec rotation(double deg) {
    TransformSpec t;
    t.kind = TransformKind::Rotation;
    t.angle_deg = deg;
    return t;
  }
  static TransformSpec scaling(double s) {
    check(s > 0.0 && s <= 1.0, "transform: scale must be in (0,1]");
    TransformSpec t;
    t.kind = TransformKind::Scaling;
    t.scale = s;
    return t;
  }
};

enum class LensBin { Identity = 0, Rot90 = 1, Rot180 = 2, Rot270 = 3 };

inline const char* bin_name(LensBin b) {
  switch (b) {
    case LensBin::Identity: return "identity";
    case LensBin::Rot90: return "rot90";
    case LensBin::Rot180: return "rot180";
    case LensBin::Rot270: return "rot270";
  }
  return "?";
}

// Angle intervals: [-45,45) identity, [45,135) rot90, [135,225) rot180,
// [225,315) rot270; any real angle is reduced mod 360 first.
inline LensBin bin_angle(double angle_deg) {
  double a = std::fmod(angle_deg, 360.0);
  if (a < 0) a += 360.0;
  if (a < 45.0 || a >= 315.0) return LensBin::Identity;
  if (a < 135.0) return LensBin::Rot90;
  if (a < 225.0) return LensBin::Rot180;
  return LensBin::Rot270;
}

inline int bin_exact_angle(LensBin b) { return 90 * int(b); }

// ---------------------------------------------------------------------------
// Feature-grid rotations (pure permutations, differentiable)
// ---------------------------------------------------------------------------

// Rotate the spatial grid of (B,C,H,W) by q counterclockwise quarter turns.
template <typename S>
TensorT<S> rotate_feature_quarters(const TensorT<S>& f, int q) {
  check(f.rank() == 4, "rotate_feature_quarters: input must be 4-D");
  q = ((q % 4) + 4) % 4;
  if (q == 0) {
    // still an op so callers always get a fresh node
    auto fn = f;
    std::vector<S> out(f.data().begin(), f.data().end());
    return make_op<S>(f.shape(), std::move(out), {f}, [fn](Node<S>& self) {
      fn.raw()->ensure_grad();
      S* g = fn.raw()->grad.data();
      for (size_t i = 0; i < self.value.size(); ++i) g[i] += self.grad[i];
    });
  }
  const int b = f.dim(0), c = f.dim(1), h = f.dim(2), w = f.dim(3);
  if (q != 2)
    check(h == w, "rotate_feature_quarters: 90/270 degree turns need square maps, got " +
                      shape_str(f.shape()));
  const int oh = (q == 2) ? h : w;
  const int ow = (q == 2) ? w : h;
  // source index for each destination index
  std::vector<int> src(size_t(oh) * ow);
  for (int i = 0; i < oh; ++i)
    for (int j = 0; j < ow; ++j) {
      int si = 0, sj = 0;
      if (q == 1) {  // ccw: dest(i,j) <- src(j, W-1-i)
        si = j;
        sj = w - 1 - i;
      } else if (q == 2) {
        si = h - 1 - i;
        sj = w - 1 - j;
      } else {  // q == 3, cw: dest(i,j) <- src(H-1-j, i)
        si = h - 1 - j;
        sj = i;
      }
      src[size_t(i) * ow + j] = si * w + sj;
    }
  std::vector<S> out(size_t(f.size()));
  const S* x = f.data().data();
  const size_t planes = size_t(b) * c;
  const size_t hw = size_t(h) * w;
  for (size_t p = 0; p < planes; ++p) {
    const S* in = x + p * hw;
    S* y = out.data() + p * hw;
    for (size_t i = 0; i < hw; ++i) y[i] = in[size_t(src[i])];
  }
  auto fn = f;
  return make_op<S>({b, c, oh, ow}, std::move(out), {f},
                    [fn, src = std::move(src), planes, hw](Node<S>& self) {
                      fn.raw()->ensure_grad();
                      S* g = fn.raw()->grad.data();
                      for (size_t p = 0; p < planes; ++p) {
                        const S* gs = self.grad.data() + p * hw;
                        S* gd = g + p * hw;
                        for (size_t i = 0; i < hw; ++i) gd[size_t(src[i])] += gs[i];
                      }
                    });
}

// Reverse the rotation the input image received, so every (h,w) location
// lines up with the original image's receptive field. Input angle must be a
// binned multiple of 90.
template <typename S>
TensorT<S> dual_rotate_features(const TensorT<S>& f, int input_angle_deg) {
  check(input_angle_deg == 90 || input_angle_deg == 180 || input_angle_deg == 270,
        "dual_rotate_features: unbinned angle " + std::to_string(input_angle_deg));
  return rotate_feature_quarters(f, (4 - input_angle_deg / 90) % 4);
}

// ---------------------------------------------------------------------------
// Multigroup convolution and the self-attentive weighted sum
// ---------------------------------------------------------------------------

// One 1x1 convolution whose output channels split into `groups` equal groups.
template <typename S>
std::vector<TensorT<S>> multigroup_conv(const TensorT<S>& x, const TensorT<S>& kernel,
                                        const TensorT<S>& bias, int groups) {
  check(groups >= 1, "multigroup_conv: need at least one group");
  check(kernel.dim(0) % groups == 0, "multigroup_conv: kernel rows not divisible by group count");
  TensorT<S> all = conv2d(x, kernel, bias, 1, 0);
  const int per = all.dim(1) / groups;
  std::vector<TensorT<S>> out;
  out.reserve(size_t(groups));
  for (int m = 0; m < groups; ++m) out.push_back(slice_channels(all, m * per, (m + 1) * per));
  return out;
}

// Per coordinate (c,h,w): softmax across the M group values, then the
// weighted sum of those values. A soft max-pool over groups.
template <typename S>
TensorT<S> self_attentive_sum(const std::vector<TensorT<S>>& groups) {
  check(!groups.empty(), "self_attentive_sum: empty group list");
  const int m = int(groups.size());
  const auto& shape = groups[0].shape();
  for (const auto& g : groups)
    check(g.shape() == shape, "self_attentive_sum: group shape mismatch");
  const size_t n = size_t(groups[0].size());

  std::vector<const S*> v(static_cast<size_t>(m));
  for (int i = 0; i < m; ++i) v[size_t(i)] = groups[size_t(i)].data().data();

  std::vector<S> out(n);
  std::vector<S> weights(n * size_t(m));  // kept for backward
  std::vector<S> vals(static_cast<size_t>(m));
  for (size_t e = 0; e < n; ++e) {
    S mx = v[0][e];
    for (int i = 1; i < m; ++i) mx = std::max(mx, v[size_t(i)][e]);
    S z = S(0);
    for (int i = 0; i < m; ++i) {
      vals[size_t(i)] = std::exp(v[size_t(i)][e] - mx);
      z += vals[size_t(i)];
    }
    S y = S(0);
    for (int i = 0; i < m; ++i) {
      const S s = vals[size_t(i)] / z;
      weights[e * size_t(m) + size_t(i)] = s;
      y += s * v[size_t(i)][e];
    }
    out[e] = y;
  }

  auto groups_copy = groups;
  std::vector<S> yv = out;
  return make_op<S>(shape, std::move(out), groups,
                    [groups_copy, weights = std::move(weights), yv = std::move(yv), m,
                     n](Node<S>& self) {
                      // dY/dx_j = s_j * (1 + x_j - Y)
                      for (int i = 0; i < m; ++i) {
                        auto& g = groups_copy[size_t(i)];
                        if (!g.requires_grad()) continue;
                        g.raw()->ensure_grad();
                        S* gd = g.raw()->grad.data();
                        const S* xv = g.data().data();
                        for (size_t e = 0; e < n; ++e) {
                          const S s = weights[e * size_t(m) + size_t(i)];
                          gd[e] += self.grad[e] * s * (S(1) + xv[e] - yv[e]);
                        }
                      }
                    });
}

// ---------------------------------------------------------------------------
// Rotation lens: dual rotation of the concatenated taps, multigroup 1x1
// convolution, self-attentive weighted sum.
// ---------------------------------------------------------------------------
template <typename S>
struct RotationLensT {
  int groups = 4;         // M
  int input_angle = 0;    // 0 disables the dual operator (embedded-lens use)
  TensorT<S> kernel;      // (M*out_channels, in_channels, 1, 1)
  TensorT<S> bias;        // (M*out_channels)

  static RotationLensT create(int in_channels, int out_channels, int groups, int input_angle,
                              Rng& rng, double init_stddev_scale = 1.0) {
    check(groups >= 1, "rotation lens: M must be >= 1");
    RotationLensT lens;
    lens.groups = groups;
    lens.input_angle = input_angle;
    const double stddev = init_stddev_scale * std::sqrt(2.0 / double(in_channels));
    lens.kernel = TensorT<S>::randn({groups * out_channels, in_channels, 1, 1}, rng, stddev, true);
    lens.bias = TensorT<S>::zeros({groups * out_channels}, true);
    return lens;
  }

  TensorT<S> forward(const TensorT<S>& x2, const TensorT<S>& x0) const {
    TensorT<S> cat = concat_channels<S>({x2, x0});
    check(cat.dim(1) == kernel.dim(1),
          "rotation lens: expected " + std::to_string(kernel.dim(1)) + " input channels, got " +
              std::to_string(cat.dim(1)));
    if (input_angle != 0) cat = dual_rotate_features(cat, input_angle);
    return self_attentive_sum(multigroup_conv(cat, kernel, bias, groups));
  }

  std::vector<TensorT<S>> parameters() const { return {kernel, bias}; }
};

using RotationLens = RotationLensT<float>;

// ---------------------------------------------------------------------------
// Scaling lens: embedded lens (no dual) -> transposed conv up to the original
// feature size, mixed with a bilinear upscaling of x3 by convex weights
// w1 = logistic(alpha), w2 = 1 - w1.
// ---------------------------------------------------------------------------
template <typename S>
struct ScalingLensT {
  RotationLensT<S> embedded;
  TensorT<S> tconv_kernel;  // (C, C, k, k)
  TensorT<S> alpha;         // scalar pre-weight
  int stride = 2;

  static ScalingLensT create(int in_channels, int out_channels, int groups, int stride,
                             int tconv_k, Rng& rng) {
    check(stride >= 1, "scaling lens: stride must be >= 1");
    ScalingLensT lens;
    lens.embedded = RotationLensT<S>::create(in_channels, out_channels, groups, 0, rng);
    const double stddev = std::sqrt(2.0 / (double(out_channels) * tconv_k * tconv_k));
    lens.tconv_kernel =
        TensorT<S>::randn({out_channels, out_channels, tconv_k, tconv_k}, rng, stddev, true);
    lens.alpha = TensorT<S>::zeros({1}, true);  // w1 = w2 = 0.5 at start
    lens.stride = stride;
    return lens;
  }

  TensorT<S> forward(const TensorT<S>& x2, const TensorT<S>& x0, const TensorT<S>& x3,
                     int target_h, int target_w) const {
    check(target_h >= x3.dim(2) && target_w >= x3.dim(3),
          "scaling lens: target must not be smaller than the scaled feature maps");
    TensorT<S> up = transposed_conv2d(embedded.forward(x2, x0), tconv_kernel, stride, target_h,
                                      target_w);
    TensorT<S> residual = bilinear_resize(x3, target_h, target_w);
    return convex_mix(up, residual, logistic(alpha));
  }

  double w1() const { return 1.0 / (1.0 + std::exp(-double(alpha.data()[0]))); }
  double w2() const { return 1.0 - w1(); }

  std::vector<TensorT<S>> parameters() const {
    return {embedded.kernel, embedded.bias, tconv_kernel, alpha};
  }
};

using ScalingLens = ScalingLensT<float>;

// Content-region window of the feature grid for a centered, zero-padded
// downscaled input; computed from the canvas geometry.
struct ContentWindow {
  int y0 = 0, x0 = 0, h = 0, w = 0;
};

inline ContentWindow feature_content_window(const HostConfig& cfg, double scale) {
  const int stride = cfg.total_stride();
  const int fh = cfg.feature_h(), fw = cfg.feature_w();
  auto axis = [&](int img, int feat) {
    const int content_px = std::max(1, int(std::lround(img * scale)));
    const int off_px = (img - content_px) / 2;
    int extent = std::max(1, int(std::lround(double(content_px) / stride)));
    extent = std::min(extent, feat);
    int off = int(std::lround(double(off_px) / stride));
    off = std::min(off, feat - extent);
    return std::pair<int, int>(off, extent);
  };
  auto [y0, h] = axis(cfg.input_h, fh);
  auto [x0, w] = axis(cfg.input_w, fw);
  return {y0, x0, h, w};
}

// ---------------------------------------------------------------------------
// Rotation-type classifier: an FC layer over the pooled lens input features.
// ---------------------------------------------------------------------------
struct RotationClassifier {
  Tensor weight;  // (4, D)
  Tensor bias;    // (4)

  // Zero weights give uniform class probabilities.
  static RotationClassifier zeros(int feature_dim) {
    RotationClassifier c;
    c.weight = Tensor::zeros({4, feature_dim}, true).set_name("rotclf.w");
    c.bias = Tensor::zeros({4}, true).set_name("rotclf.b");
    return c;
  }

  Tensor logits_from_taps(const Taps& taps) const {
    Tensor pooled = global_avg_pool(concat_channels<float>({taps.x2, taps.x0}));
    return fully_connected(pooled, weight, bias);
  }

  std::vector<Tensor> parameters() const { return {weight, bias}; }
};

struct RotationPrediction {
  LensBin bin = LensBin::Identity;
  std::array<float, 4> probs{};
};

std::vector<RotationPrediction> predict_rotation(const Taps& taps, const RotationClassifier& clf);

// ---------------------------------------------------------------------------
// Registry and pipeline
// ---------------------------------------------------------------------------
enum class ScaleKey { Half, Third };

inline ScaleKey scale_key(double scale) {
  const int inv = int(std::lround(1.0 / scale));
  check(inv == 2 || inv == 3, "no scaling lens bin for scale " + std::to_string(scale));
  return inv == 2 ? ScaleKey::Half : ScaleKey::Third;
}

struct LensRegistry {
  std::optional<RotationLens> rot90, rot180, rot270;
  std::optional<ScalingLens> scale_half, scale_third;

  bool covers(LensBin b) const {
    switch (b) {
      case LensBin::Identity: return true;  // pass-through
      case LensBin::Rot90: return rot90.has_value();
      case LensBin::Rot180: return rot180.has_value();
      case LensBin::Rot270: return rot270.has_value();
    }
    return false;
  }

  const RotationLens& rotation_for(LensBin b) const {
    switch (b) {
      case LensBin::Rot90:
        check(rot90.has_value(), "lens registry: rot90 bin unresolved");
        return *rot90;
      case LensBin::Rot180:
        check(rot180.has_value(), "lens registry: rot180 bin unresolved");
        return *rot180;
      case LensBin::Rot270:
        check(rot270.has_value(), "lens registry: rot270 bin unresolved");
        return *rot270;
      default: throw std::runtime_error("lens registry: identity bin has no lens module");
    }
  }

  const ScalingLens& scaling_for(ScaleKey k) const {
    const auto& slot = (k == ScaleKey::Half) ? scale_half : scale_third;
    check(slot.has_value(), "lens registry: scaling bin unresolved");
    return *slot;
  }
};

enum class LensSelect { None, TrueTransform, Predicted };

inline LensSelect parse_lens_select(const std::string& s) {
  if (s == "none") return LensSelect::None;
  if (s == "true") return LensSelect::TrueTransform;
  if (s == "predicted") return LensSelect::Predicted;
  throw std::runtime_error("unknown lens selection mode '" + s + "'");
}

// Run the frozen host on a batch of (already transformed) inputs, route each
// image's taps through the lens its bin resolves to, and classify from the
// reconstructed features. Identity-bin images reproduce the host's own logits
// bit-exactly. `specs` carries the per-image transforms; with Predicted
// selection the rotation classifier overrides rotation bins.
Tensor apply_lens_pipeline(const FrozenHost& host, const LensRegistry& registry,
                           const Tensor& batch, const std::vector<TransformSpec>& specs,
                           LensSelect select, const RotationClassifier* clf = nullptr);

}  // namespace featlens
