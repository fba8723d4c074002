#pragma once

#include <string>

#include "featlens/checkpoint.hpp"
#include "featlens/host_model.hpp"
#include "featlens/lens.hpp"
#include "featlens/train.hpp"

namespace featlens {

// Checkpoint wrappers for every trained artifact. Each lens persists under
// its own named-tensor namespace (lens.<bin>.*); hosts carry a meta tensor so
// they can be rebuilt without the original config file.

void save_host(const HostModel& model, const std::string& path);
HostModel load_host(const std::string& path);

void save_rotation_lens(const RotationLens& lens, LensBin bin, const std::string& path);
RotationLens load_rotation_lens(const std::string& path, LensBin bin);

void save_scaling_lens(const ScalingLens& lens, ScaleKey key, const std::string& path);
ScalingLens load_scaling_lens(const std::string& path, ScaleKey key);

void save_rotclf(const RotationClassifier& clf, const std::string& path);
RotationClassifier load_rotclf(const std::string& path);

void save_xlayer(const XlayerBlock& block, const std::string& path);
XlayerBlock load_xlayer(const std::string& path);

// Standard artifact names inside an output directory.
std::string host_ckpt_path(const std::string& out_dir);
std::string dataaug_ckpt_path(const std::string& out_dir);
std::string lens_ckpt_path(const std::string& out_dir, LensBin bin, LossMode mode);
std::string scaling_ckpt_path(const std::string& out_dir, ScaleKey key, LossMode mode);
std::string rotclf_ckpt_path(const std::string& out_dir);
std::string xlayer_ckpt_path(const std::string& out_dir);

// Loads whatever rotation/scaling lens checkpoints exist under out_dir
// (TAC-trained ones) into a registry.
LensRegistry load_registry(const std::string& out_dir);

}  // namespace featlens
