#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "featlens/lens.hpp"
#include "featlens/tensor.hpp"

namespace featlens {

// Grayscale image dataset. Pixels stay u8 at rest and are normalized to
// [0,1] at the tensor boundary; per-image transform specs are carried for
// bin labels and angle filtering and applied lazily when batches are built.
struct Dataset {
  int h = 0, w = 0;
  std::vector<uint8_t> images;  // count * h * w
  std::vector<uint8_t> labels;
  std::string split;
  std::vector<TransformSpec> specs;  // empty or one per image

  int count() const { return (h > 0 && w > 0) ? int(images.size() / (size_t(h) * w)) : 0; }
  const uint8_t* image(int i) const { return images.data() + size_t(i) * h * w; }
  TransformSpec spec(int i) const {
    return specs.empty() ? TransformSpec::identity() : specs[size_t(i)];
  }
  Dataset subset(const std::vector<int>& indices) const;
};

// IDX container I/O (big-endian headers, magic 0x803 for images, 0x801 for
// labels). Loading validates magic, dimension headers, and count agreement.
Dataset load_mnist_idx(const std::string& images_path, const std::string& labels_path);
void save_mnist_idx(const Dataset& ds, const std::string& images_path,
                    const std::string& labels_path);

// ---------------------------------------------------------------------------
// Image-plane transforms (float planes in [0,1])
// ---------------------------------------------------------------------------

// Multiples of 90 degrees are exact pixel permutations; other angles use
// bilinear resampling about the center with zero fill. Scalings bilinear-
// downsample and re-pad to the full canvas, centered.
std::vector<float> apply_transform(const std::vector<float>& img, int h, int w,
                                   const TransformSpec& spec);

std::vector<float> resize_plane(const std::vector<float>& img, int h, int w, int th, int tw);

// ---------------------------------------------------------------------------
// Dataset construction
// ---------------------------------------------------------------------------

// Attach per-image rotation specs with angles uniform in [lo_deg, hi_deg);
// images themselves are untouched. Same seed, same angle sequence.
Dataset make_rotated_dataset(const Dataset& base, double lo_deg, double hi_deg, uint64_t seed);

// Attach a fixed spec to every image.
Dataset make_transformed_dataset(const Dataset& base, const TransformSpec& spec);

// Procedurally rendered digit glyphs, MNIST-shaped (28x28 u8, labels 0..9).
// Stands in when the canonical IDX files are not available.
Dataset make_synth_digits(int count, uint64_t seed, const std::string& split);

// Loads `train`/`t10k` IDX pairs from dir; if absent, generates synthetic
// digits and saves them there first, so every later run reloads identical
// bytes.
Dataset ensure_dataset(const std::string& dir, const std::string& split, int synth_count,
                       uint64_t synth_seed);

// Resolves the dataset root: explicit path if non-empty, else the
// FEATLENS_DATA_DIR environment variable, else fallback_dir.
std::string resolve_data_dir(const std::string& explicit_dir, const std::string& fallback_dir);

// ---------------------------------------------------------------------------
// Tensor boundary
// ---------------------------------------------------------------------------

// Build a (B,1,H,W) input batch: normalize, resize to the host input size,
// then apply each image's transform spec (or the override, if given).
Tensor make_input_batch(const Dataset& ds, const std::vector<int>& indices, int input_h,
                        int input_w, const TransformSpec* override_spec = nullptr);

std::vector<int> labels_of(const Dataset& ds, const std::vector<int>& indices);

}  // namespace featlens
