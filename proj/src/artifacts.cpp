#include "featlens/artifacts.hpp"

#include <filesystem>

namespace featlens {

namespace {

Tensor meta_tensor(std::vector<float> v) {
  Shape s{int(v.size())};
  return Tensor::from_data(std::move(s), std::move(v));
}

const Tensor& require(const std::map<std::string, Tensor>& m, const std::string& key,
                      const std::string& path) {
  auto it = m.find(key);
  check(it != m.end(), "checkpoint " + path + ": missing tensor '" + key + "'");
  return it->second;
}

}  // namespace

void save_host(const HostModel& model, const std::string& path) {
  auto named = model.named_parameters();
  const auto& c = model.config();
  named.emplace("host.meta",
                meta_tensor({float(c.input_h), float(c.input_w), float(c.input_channels),
                             float(c.class_count), float(c.stage_widths[0]),
                             float(c.stage_widths[1]), float(c.stage_widths[2]),
                             float(c.bottleneck_n)}));
  save_checkpoint(named, path);
}

HostModel load_host(const std::string& path) {
  auto named = load_checkpoint(path);
  const Tensor& meta = require(named, "host.meta", path);
  check(meta.size() == 8, "checkpoint " + path + ": bad host.meta");
  auto m = meta.data();
  HostConfig cfg;
  cfg.input_h = int(m[0]);
  cfg.input_w = int(m[1]);
  cfg.input_channels = int(m[2]);
  cfg.class_count = int(m[3]);
  cfg.stage_widths = {int(m[4]), int(m[5]), int(m[6])};
  cfg.bottleneck_n = int(m[7]);
  HostModel model(cfg, 0);
  model.load_parameters(named);
  return model;
}

void save_rotation_lens(const RotationLens& lens, LensBin bin, const std::string& path) {
  const std::string ns = std::string("lens.") + bin_name(bin);
  std::map<std::string, Tensor> named;
  named.emplace(ns + ".kernel", lens.kernel);
  named.emplace(ns + ".bias", lens.bias);
  named.emplace(ns + ".meta", meta_tensor({float(lens.groups), float(lens.input_angle)}));
  save_checkpoint(named, path);
}

RotationLens load_rotation_lens(const std::string& path, LensBin bin) {
  const std::string ns = std::string("lens.") + bin_name(bin);
  auto named = load_checkpoint(path);
  const Tensor& meta = require(named, ns + ".meta", path);
  check(meta.size() == 2, "checkpoint " + path + ": bad lens meta");
  RotationLens lens;
  lens.groups = int(meta.data()[0]);
  lens.input_angle = int(meta.data()[1]);
  lens.kernel = require(named, ns + ".kernel", path).detach(true);
  lens.bias = require(named, ns + ".bias", path).detach(true);
  return lens;
}

void save_scaling_lens(const ScalingLens& lens, ScaleKey key, const std::string& path) {
  const std::string ns = key == ScaleKey::Half ? "lens.scale2" : "lens.scale3";
  std::map<std::string, Tensor> named;
  named.emplace(ns + ".embedded.kernel", lens.embedded.kernel);
  named.emplace(ns + ".embedded.bias", lens.embedded.bias);
  named.emplace(ns + ".tconv", lens.tconv_kernel);
  named.emplace(ns + ".alpha", lens.alpha);
  named.emplace(ns + ".meta", meta_tensor({float(lens.embedded.groups), float(lens.stride)}));
  save_checkpoint(named, path);
}

ScalingLens load_scaling_lens(const std::string& path, ScaleKey key) {
  const std::string ns = key == ScaleKey::Half ? "lens.scale2" : "lens.scale3";
  auto named = load_checkpoint(path);
  const Tensor& meta = require(named, ns + ".meta", path);
  check(meta.size() == 2, "checkpoint " + path + ": bad scaling lens meta");
  ScalingLens lens;
  lens.embedded.groups = int(meta.data()[0]);
  lens.embedded.input_angle = 0;
  lens.stride = int(meta.data()[1]);
  lens.embedded.kernel = require(named, ns + ".embedded.kernel", path).detach(true);
  lens.embedded.bias = require(named, ns + ".embedded.bias", path).detach(true);
  lens.tconv_kernel = require(named, ns + ".tconv", path).detach(true);
  lens.alpha = require(named, ns + ".alpha", path).detach(true);
  return lens;
}

void save_rotclf(const RotationClassifier& clf, const std::string& path) {
  save_checkpoint({{"rotclf.w", clf.weight}, {"rotclf.b", clf.bias}}, path);
}

RotationClassifier load_rotclf(const std::string& path) {
  auto named = load_checkpoint(path);
  RotationClassifier clf;
  clf.weight = require(named, "rotclf.w", path).detach(true);
  clf.bias = require(named, "rotclf.b", path).detach(true);
  return clf;
}

void save_xlayer(const XlayerBlock& block, const std::string& path) {
  save_checkpoint(block.named_parameters(), path);
}

XlayerBlock load_xlayer(const std::string& path) {
  auto named = load_checkpoint(path);
  const Tensor& c1 = require(named, "xlayer.conv1.w", path);
  XlayerBlock block = XlayerBlock::create(c1.dim(1), c1.dim(0), 0);
  block.load_parameters(named);
  return block;
}

std::string host_ckpt_path(const std::string& out_dir) { return out_dir + "/host.ckpt"; }
std::string dataaug_ckpt_path(const std::string& out_dir) { return out_dir + "/dataaug.ckpt"; }

std::string lens_ckpt_path(const std::string& out_dir, LensBin bin, LossMode mode) {
  std::string name = out_dir + "/lens_" + bin_name(bin);
  if (mode != LossMode::Tac) name += std::string("_") + loss_mode_name(mode);
  return name + ".ckpt";
}

std::string scaling_ckpt_path(const std::string& out_dir, ScaleKey key, LossMode mode) {
  std::string name = out_dir + (key == ScaleKey::Half ? "/lens_scale2" : "/lens_scale3");
  if (mode != LossMode::Tac) name += std::string("_") + loss_mode_name(mode);
  return name + ".ckpt";
}

std::string rotclf_ckpt_path(const std::string& out_dir) { return out_dir + "/rotclf.ckpt"; }
std::string xlayer_ckpt_path(const std::string& out_dir) { return out_dir + "/xlayer.ckpt"; }

LensRegistry load_registry(const std::string& out_dir) {
  namespace fs = std::filesystem;
  LensRegistry reg;
  for (LensBin bin : {LensBin::Rot90, LensBin::Rot180, LensBin::Rot270}) {
    const std::string path = lens_ckpt_path(out_dir, bin, LossMode::Tac);
    if (!fs::exists(path)) continue;
    RotationLens lens = load_rotation_lens(path, bin);
    switch (bin) {
      case LensBin::Rot90: reg.rot90 = std::move(lens); break;
      case LensBin::Rot180: reg.rot180 = std::move(lens); break;
      case LensBin::Rot270: reg.rot270 = std::move(lens); break;
      default: break;
    }
  }
  for (ScaleKey key : {ScaleKey::Half, ScaleKey::Third}) {
    const std::string path = scaling_ckpt_path(out_dir, key, LossMode::Tac);
    if (!fs::exists(path)) continue;
    ScalingLens lens = load_scaling_lens(path, key);
    (key == ScaleKey::Half ? reg.scale_half : reg.scale_third) = std::move(lens);
  }
  return reg;
}

}  // namespace featlens
