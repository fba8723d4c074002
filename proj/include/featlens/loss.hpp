#pragma once

#include <algorithm>
#include <numeric>

#include "featlens/tensor.hpp"

namespace featlens {

enum class LossMode { Tac, Mse, Mae, MseTac, MaeTac };

inline const char* loss_mode_name(LossMode m) {
  switch (m) {
    case LossMode::Tac: return "tac";
    case LossMode::Mse: return "mse";
    case LossMode::Mae: return "mae";
    case LossMode::MseTac: return "mse+tac";
    case LossMode::MaeTac: return "mae+tac";
  }
  return "?";
}

inline LossMode parse_loss_mode(const std::string& s) {
  if (s == "tac") return LossMode::Tac;
  if (s == "mse") return LossMode::Mse;
  if (s == "mae") return LossMode::Mae;
  if (s == "mse+tac") return LossMode::MseTac;
  if (s == "mae+tac") return LossMode::MaeTac;
  throw std::runtime_error("unknown loss mode '" + s + "'");
}

struct LossConfig {
  int k = 3;          // activations kept per channel, each for positives and negatives
  double d1 = 0.2;    // overshoot discount
  LossMode mode = LossMode::Tac;

  void validate(int map_size) const {
    check(k >= 1 && k <= map_size / 2,
          "loss config: K=" + std::to_string(k) + " violates 1 <= K <= " +
              std::to_string(map_size / 2) + " for maps of " + std::to_string(map_size));
    check(d1 > 0.0 && d1 <= 1.0, "loss config: d1 must be in (0,1]");
  }
};

// Per-channel coordinates of the K highest and K lowest activations. Ties
// break toward the lowest row-major linear index; the negative list skips
// locations already captured by the positive list.
struct TopKSelection {
  std::vector<int> pos_locs;
  std::vector<int> neg_locs;
};

template <typename S>
TopKSelection topk_locations(std::span<const S> map, int k) {
  const int n = int(map.size());
  check(k >= 1 && k <= n / 2, "topk_locations: K=" + std::to_string(k) +
                                  " too large for a map of " + std::to_string(n) + " values");
  std::vector<int> idx(static_cast<size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);

  TopKSelection sel;
  sel.pos_locs.resize(size_t(k));
  std::partial_sort_copy(idx.begin(), idx.end(), sel.pos_locs.begin(), sel.pos_locs.end(),
                         [&](int a, int b) {
                           if (map[size_t(a)] != map[size_t(b)]) return map[size_t(a)] > map[size_t(b)];
                           return a < b;
                         });

  std::vector<char> taken(size_t(n), 0);
  for (int p : sel.pos_locs) taken[size_t(p)] = 1;
  std::sort(idx.begin(), idx.end(), [&](int a, int b) {
    if (map[size_t(a)] != map[size_t(b)]) return map[size_t(a)] < map[size_t(b)];
    return a < b;
  });
  sel.neg_locs.reserve(size_t(k));
  for (int i : idx) {
    if (taken[size_t(i)]) continue;
    sel.neg_locs.push_back(i);
    if (int(sel.neg_locs.size()) == k) break;
  }
  return sel;
}

template <typename S>
TopKSelection topk_locations(const TensorT<S>& channel_map, int k) {
  return topk_locations<S>(channel_map.data(), k);
}

namespace detail {
// Channel decomposition: the spatial map is the trailing (up to) two axes,
// every leading axis indexes a channel.
inline int map_extent(const Shape& s) {
  if (s.size() <= 1) return s.empty() ? 1 : s[0];
  return s[s.size() - 1] * s[s.size() - 2];
}
}  // namespace detail

// Top-K Activation Contrast loss. Undershoot at the target's top positive and
// top negative locations is penalized at full weight; overshoot there, and
// spurious peaks at the reconstruction's own top positive locations, are
// discounted by d1. The target X is a constant: selections are recomputed
// every call and held fixed during backward, and no gradient reaches X.
template <typename S>
TensorT<S> tac_loss(const TensorT<S>& target, const TensorT<S>& recon, const LossConfig& cfg) {
  check(target.shape() == recon.shape(), "tac_loss: shape mismatch " + shape_str(target.shape()) +
                                             " vs " + shape_str(recon.shape()));
  const int map = detail::map_extent(target.shape());
  cfg.validate(map);
  const int channels = int(target.size() / map);
  const S* xv = target.data().data();
  const S* yv = recon.data().data();
  const S d1 = S(cfg.d1);

  // signed per-coordinate dL/dY, fixed selection
  std::vector<std::pair<int, S>> ygrad;
  double loss = 0.0;
  for (int c = 0; c < channels; ++c) {
    const S* xm = xv + size_t(c) * map;
    const S* ym = yv + size_t(c) * map;
    const auto selx = topk_locations<S>(std::span<const S>(xm, size_t(map)), cfg.k);
    for (int p : selx.pos_locs) {
      const S x = xm[p], y = ym[p];
      if (x > y) {
        loss += double(x - y);
        ygrad.emplace_back(c * map + p, S(-1));
      } else if (x < y) {
        loss += double(d1) * double(y - x);
        ygrad.emplace_back(c * map + p, d1);
      }
    }
    for (int q : selx.neg_locs) {
      const S x = xm[q], y = ym[q];
      if (x > y) {
        loss += double(d1) * double(x - y);
        ygrad.emplace_back(c * map + q, -d1);
      } else if (x < y) {
        loss += double(y - x);
        ygrad.emplace_back(c * map + q, S(1));
      }
    }
    const auto sely = topk_locations<S>(std::span<const S>(ym, size_t(map)), cfg.k);
    for (int p : sely.pos_locs) {
      const S x = xm[p], y = ym[p];
      if (y > x) {
        loss += double(d1) * double(y - x);
        ygrad.emplace_back(c * map + p, d1);
      }
    }
  }

  auto yn = recon;
  return make_op<S>({1}, {S(loss)}, {recon}, [yn, ygrad = std::move(ygrad)](Node<S>& self) {
    yn.raw()->ensure_grad();
    S* g = yn.raw()->grad.data();
    const S gs = self.grad[0];
    for (const auto& [i, v] : ygrad) g[size_t(i)] += gs * v;
  });
}

// Mean squared / absolute error over all elements; target is constant.
template <typename S>
TensorT<S> mse_loss(const TensorT<S>& target, const TensorT<S>& recon) {
  check(target.shape() == recon.shape(), "mse_loss: shape mismatch");
  const S* xv = target.data().data();
  const S* yv = recon.data().data();
  const int64_t n = target.size();
  double acc = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double d = double(yv[i]) - double(xv[i]);
    acc += d * d;
  }
  auto yn = recon;
  auto xn = target;
  return make_op<S>({1}, {S(acc / double(n))}, {recon}, [yn, xn, n](Node<S>& self) {
    yn.raw()->ensure_grad();
    S* g = yn.raw()->grad.data();
    const S* xv2 = xn.data().data();
    const S* yv2 = yn.data().data();
    const S gs = self.grad[0] * S(2.0 / double(n));
    for (int64_t i = 0; i < n; ++i) g[size_t(i)] += gs * (yv2[size_t(i)] - xv2[size_t(i)]);
  });
}

template <typename S>
TensorT<S> mae_loss(const TensorT<S>& target, const TensorT<S>& recon) {
  check(target.shape() == recon.shape(), "mae_loss: shape mismatch");
  const S* xv = target.data().data();
  const S* yv = recon.data().data();
  const int64_t n = target.size();
  double acc = 0.0;
  for (int64_t i = 0; i < n; ++i) acc += std::abs(double(yv[i]) - double(xv[i]));
  auto yn = recon;
  auto xn = target;
  return make_op<S>({1}, {S(acc / double(n))}, {recon}, [yn, xn, n](Node<S>& self) {
    yn.raw()->ensure_grad();
    S* g = yn.raw()->grad.data();
    const S* xv2 = xn.data().data();
    const S* yv2 = yn.data().data();
    const S gs = self.grad[0] / S(double(n));
    for (int64_t i = 0; i < n; ++i) {
      const S d = yv2[size_t(i)] - xv2[size_t(i)];
      if (d > S(0))
        g[size_t(i)] += gs;
      else if (d < S(0))
        g[size_t(i)] -= gs;
    }
  });
}

// Equal-weight combination of a pointwise loss with TAC.
template <typename S>
TensorT<S> combined_loss(const TensorT<S>& target, const TensorT<S>& recon, const LossConfig& cfg) {
  check(cfg.mode == LossMode::MseTac || cfg.mode == LossMode::MaeTac,
        "combined_loss: mode must be mse+tac or mae+tac");
  TensorT<S> point = cfg.mode == LossMode::MseTac ? mse_loss(target, recon)
                                                  : mae_loss(target, recon);
  return add(scale(point, 0.5), scale(tac_loss(target, recon, cfg), 0.5));
}

// Mode dispatch used by the training loops.
template <typename S>
TensorT<S> reconstruction_loss(const TensorT<S>& target, const TensorT<S>& recon,
                               const LossConfig& cfg) {
  switch (cfg.mode) {
    case LossMode::Tac: return tac_loss(target, recon, cfg);
    case LossMode::Mse: return mse_loss(target, recon);
    case LossMode::Mae: return mae_loss(target, recon);
    case LossMode::MseTac:
    case LossMode::MaeTac: return combined_loss(target, recon, cfg);
  }
  throw std::runtime_error("reconstruction_loss: invalid mode");
}

}  // namespace featlens
