#include "featlens/data.hpp"

#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>

namespace featlens {

Dataset Dataset::subset(const std::vector<int>& indices) const {
  Dataset out;
  out.h = h;
  out.w = w;
  out.split = split;
  out.images.reserve(indices.size() * size_t(h) * w);
  out.labels.reserve(indices.size());
  if (!specs.empty()) out.specs.reserve(indices.size());
  for (int i : indices) {
    const uint8_t* p = image(i);
    out.images.insert(out.images.end(), p, p + size_t(h) * w);
    out.labels.push_back(labels[size_t(i)]);
    if (!specs.empty()) out.specs.push_back(specs[size_t(i)]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// IDX I/O
// ---------------------------------------------------------------------------
namespace {

uint32_t read_be32(std::istream& in, const std::string& path, const char* what) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  check(bool(in), "idx: " + path + " truncated while reading " + what);
  return (uint32_t(b[0]) << 24) | (uint32_t(b[1]) << 16) | (uint32_t(b[2]) << 8) | uint32_t(b[3]);
}

void write_be32(std::ostream& out, uint32_t v) {
  unsigned char b[4] = {uint8_t(v >> 24), uint8_t(v >> 16), uint8_t(v >> 8), uint8_t(v)};
  out.write(reinterpret_cast<char*>(b), 4);
}

}  // namespace

Dataset load_mnist_idx(const std::string& images_path, const std::string& labels_path) {
  std::ifstream fi(images_path, std::ios::binary);
  check(bool(fi), "idx: cannot open image file " + images_path);
  const uint32_t imagic = read_be32(fi, images_path, "magic");
  check(imagic == 0x00000803u,
        "idx: bad magic in " + images_path + " (expected 0x00000803 image file)");
  const uint32_t n = read_be32(fi, images_path, "count");
  const uint32_t h = read_be32(fi, images_path, "rows");
  const uint32_t w = read_be32(fi, images_path, "cols");
  check(h >= 1 && w >= 1 && h <= 4096 && w <= 4096, "idx: implausible image dims in " + images_path);

  Dataset ds;
  ds.h = int(h);
  ds.w = int(w);
  ds.images.resize(size_t(n) * h * w);
  fi.read(reinterpret_cast<char*>(ds.images.data()), std::streamsize(ds.images.size()));
  check(size_t(fi.gcount()) == ds.images.size(), "idx: " + images_path + " truncated pixel data");

  std::ifstream fl(labels_path, std::ios::binary);
  check(bool(fl), "idx: cannot open label file " + labels_path);
  const uint32_t lmagic = read_be32(fl, labels_path, "magic");
  check(lmagic == 0x00000801u,
        "idx: bad magic in " + labels_path + " (expected 0x00000801 label file)");
  const uint32_t ln = read_be32(fl, labels_path, "count");
  check(ln == n, "idx: image/label count mismatch (" + std::to_string(n) + " images in " +
                     images_path + ", " + std::to_string(ln) + " labels in " + labels_path + ")");
  ds.labels.resize(size_t(ln));
  fl.read(reinterpret_cast<char*>(ds.labels.data()), std::streamsize(ds.labels.size()));
  check(size_t(fl.gcount()) == ds.labels.size(), "idx: " + labels_path + " truncated label data");
  return ds;
}

void save_mnist_idx(const Dataset& ds, const std::string& images_path,
                    const std::string& labels_path) {
  std::ofstream fi(images_path, std::ios::binary);
  check(bool(fi), "idx: cannot write " + images_path);
  write_be32(fi, 0x00000803u);
  write_be32(fi, uint32_t(ds.count()));
  write_be32(fi, uint32_t(ds.h));
  write_be32(fi, uint32_t(ds.w));
  fi.write(reinterpret_cast<const char*>(ds.images.data()), std::streamsize(ds.images.size()));
  check(bool(fi), "idx: short write to " + images_path);

  std::ofstream fl(labels_path, std::ios::binary);
  check(bool(fl), "idx: cannot write " + labels_path);
  write_be32(fl, 0x00000801u);
  write_be32(fl, uint32_t(ds.labels.size()));
  fl.write(reinterpret_cast<const char*>(ds.labels.data()), std::streamsize(ds.labels.size()));
  check(bool(fl), "idx: short write to " + labels_path);
}

// ---------------------------------------------------------------------------
// Plane transforms
// ---------------------------------------------------------------------------
namespace {

std::vector<float> rotate_quarters_plane(const std::vector<float>& img, int h, int w, int q) {
  std::vector<float> out(img.size());
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      float v = img[size_t(i) * w + j];
      int di = 0, dj = 0;
      switch (q) {
        case 1: di = w - 1 - j, dj = i; break;     // ccw: (i,j) -> (W-1-j, i)
        case 2: di = h - 1 - i, dj = w - 1 - j; break;
        case 3: di = j, dj = h - 1 - i; break;     // cw
        default: di = i, dj = j; break;
      }
      out[size_t(di) * (q % 2 ? h : w) + dj] = v;
    }
  return out;
}

std::vector<float> rotate_arbitrary_plane(const std::vector<float>& img, int h, int w,
                                          double angle_deg) {
  const double rad = angle_deg * 3.14159265358979323846 / 180.0;
  const double c = std::cos(rad), s = std::sin(rad);
  const double cy = (h - 1) / 2.0, cx = (w - 1) / 2.0;
  std::vector<float> out(img.size(), 0.0f);
  // Destination (i,j) samples the source at the inverse rotation. With image
  // row index increasing downward, a CCW rotation by `rad` of content maps
  // source = R(rad) applied to destination offsets.
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      const double dy = i - cy, dx = j - cx;
      const double sy = c * dy - s * dx + cy;
      const double sx = s * dy + c * dx + cx;
      if (sy < 0 || sy > h - 1 || sx < 0 || sx > w - 1) continue;
      const int y0 = int(sy), x0 = int(sx);
      const int y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
      const double wy = sy - y0, wx = sx - x0;
      const double top = img[size_t(y0) * w + x0] * (1 - wx) + img[size_t(y0) * w + x1] * wx;
      const double bot = img[size_t(y1) * w + x0] * (1 - wx) + img[size_t(y1) * w + x1] * wx;
      out[size_t(i) * w + j] = float(top * (1 - wy) + bot * wy);
    }
  }
  return out;
}

}  // namespace

std::vector<float> resize_plane(const std::vector<float>& img, int h, int w, int th, int tw) {
  if (th == h && tw == w) return img;
  std::vector<float> out(size_t(th) * tw);
  const double sy = double(h) / th, sx = double(w) / tw;
  for (int i = 0; i < th; ++i) {
    double fy = (i + 0.5) * sy - 0.5;
    fy = std::min(std::max(fy, 0.0), double(h - 1));
    const int y0 = int(fy);
    const int y1 = std::min(y0 + 1, h - 1);
    const double wy = fy - y0;
    for (int j = 0; j < tw; ++j) {
      double fx = (j + 0.5) * sx - 0.5;
      fx = std::min(std::max(fx, 0.0), double(w - 1));
      const int x0 = int(fx);
      const int x1 = std::min(x0 + 1, w - 1);
      const double wx = fx - x0;
      const double a0 = img[size_t(y0) * w + x0], b0 = img[size_t(y1) * w + x0];
      const double top = a0 + (img[size_t(y0) * w + x1] - a0) * wx;
      const double bot = b0 + (img[size_t(y1) * w + x1] - b0) * wx;
      out[size_t(i) * tw + j] = float(top + (bot - top) * wy);
    }
  }
  return out;
}

std::vector<float> apply_transform(const std::vector<float>& img, int h, int w,
                                   const TransformSpec& spec) {
  switch (spec.kind) {
    case TransformKind::Identity: return img;
    case TransformKind::Rotation: {
      double a = std::fmod(spec.angle_deg, 360.0);
      if (a < 0) a += 360.0;
      const double quarters = a / 90.0;
      if (std::abs(quarters - std::round(quarters)) < 1e-9) {
        const int q = int(std::lround(quarters)) % 4;
        if (q == 0) return img;
        check(q == 2 || h == w, "apply_transform: 90/270 rotation needs a square image");
        return rotate_quarters_plane(img, h, w, q);
      }
      return rotate_arbitrary_plane(img, h, w, a);
    }
    case TransformKind::Scaling: {
      const int ch = std::max(1, int(std::lround(h * spec.scale)));
      const int cw = std::max(1, int(std::lround(w * spec.scale)));
      std::vector<float> small = resize_plane(img, h, w, ch, cw);
      std::vector<float> out(size_t(h) * w, 0.0f);
      const int oy = (h - ch) / 2, ox = (w - cw) / 2;
      for (int i = 0; i < ch; ++i)
        std::copy(small.begin() + size_t(i) * cw, small.begin() + size_t(i + 1) * cw,
                  out.begin() + size_t(oy + i) * w + ox);
      return out;
    }
  }
  throw std::runtime_error("apply_transform: bad spec");
}

// ---------------------------------------------------------------------------
// Dataset construction
// ---------------------------------------------------------------------------

Dataset make_rotated_dataset(const Dataset& base, double lo_deg, double hi_deg, uint64_t seed) {
  Dataset out = base;
  out.specs.resize(size_t(base.count()));
  for (int i = 0; i < base.count(); ++i) {
    Rng rng(Rng::derive(seed, uint64_t(i)));
    const double a = (lo_deg == hi_deg) ? lo_deg : rng.uniform(lo_deg, hi_deg);
    out.specs[size_t(i)] = TransformSpec::rotation(a);
  }
  return out;
}

Dataset make_transformed_dataset(const Dataset& base, const TransformSpec& spec) {
  Dataset out = base;
  out.specs.assign(size_t(base.count()), spec);
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic digits
// ---------------------------------------------------------------------------
namespace {

struct Pt {
  double x, y;
};

using Stroke = std::vector<Pt>;

void add_arc(std::vector<Stroke>& strokes, double cx, double cy, double rx, double ry,
             double from_deg, double to_deg) {
  Stroke s;
  const int steps = std::max(6, int(std::abs(to_deg - from_deg) / 14.0));
  for (int i = 0; i <= steps; ++i) {
    const double a = (from_deg + (to_deg - from_deg) * i / steps) * 3.14159265358979323846 / 180.0;
    s.push_back({cx + rx * std::cos(a), cy + ry * std::sin(a)});
  }
  strokes.push_back(std::move(s));
}

void add_line(std::vector<Stroke>& strokes, double x0, double y0, double x1, double y1) {
  strokes.push_back({{x0, y0}, {x1, y1}});
}

// Digit skeletons in a unit box, y growing downward.
std::vector<Stroke> digit_strokes(int d) {
  std::vector<Stroke> s;
  switch (d) {
    case 0: add_arc(s, 0.5, 0.5, 0.26, 0.36, 0, 360); break;
    case 1:
      add_line(s, 0.52, 0.12, 0.52, 0.88);
      add_line(s, 0.52, 0.12, 0.38, 0.26);
      break;
    case 2:
      add_arc(s, 0.5, 0.32, 0.23, 0.19, 180, 380);
      add_line(s, 0.716, 0.385, 0.29, 0.84);
      add_line(s, 0.29, 0.84, 0.74, 0.84);
      break;
    case 3:
      add_arc(s, 0.46, 0.33, 0.21, 0.17, 215, 430);
      add_arc(s, 0.46, 0.68, 0.23, 0.19, 290, 510);
      break;
    case 4:
      add_line(s, 0.64, 0.1, 0.64, 0.9);
      add_line(s, 0.64, 0.1, 0.28, 0.6);
      add_line(s, 0.28, 0.6, 0.8, 0.6);
      break;
    case 5:
      add_line(s, 0.72, 0.12, 0.34, 0.12);
      add_line(s, 0.34, 0.12, 0.32, 0.46);
      add_arc(s, 0.46, 0.64, 0.24, 0.21, 250, 520);
      break;
    case 6:
      add_arc(s, 0.52, 0.5, 0.26, 0.37, 300, 90);
      add_arc(s, 0.48, 0.68, 0.2, 0.17, 0, 360);
      break;
    case 7:
      add_line(s, 0.26, 0.14, 0.76, 0.14);
      add_line(s, 0.76, 0.14, 0.42, 0.88);
      break;
    case 8:
      add_arc(s, 0.5, 0.31, 0.18, 0.15, 0, 360);
      add_arc(s, 0.5, 0.67, 0.22, 0.19, 0, 360);
      break;
    case 9:
      add_arc(s, 0.47, 0.33, 0.2, 0.17, 0, 360);
      add_line(s, 0.67, 0.33, 0.62, 0.88);
      break;
    default: throw std::runtime_error("digit_strokes: label out of range");
  }
  return s;
}

double seg_dist(double px, double py, const Pt& a, const Pt& b) {
  const double vx = b.x - a.x, vy = b.y - a.y;
  const double len2 = vx * vx + vy * vy;
  double t = len2 > 0 ? ((px - a.x) * vx + (py - a.y) * vy) / len2 : 0.0;
  t = std::min(std::max(t, 0.0), 1.0);
  const double dx = px - (a.x + t * vx), dy = py - (a.y + t * vy);
  return std::sqrt(dx * dx + dy * dy);
}

}  // namespace

Dataset make_synth_digits(int count, uint64_t seed, const std::string& split) {
  const int hw = 28;
  Dataset ds;
  ds.h = hw;
  ds.w = hw;
  ds.split = split;
  ds.images.resize(size_t(count) * hw * hw, 0);
  ds.labels.resize(size_t(count));

  for (int n = 0; n < count; ++n) {
    Rng rng(Rng::derive(seed, uint64_t(n)));
    const int label = rng.uniform_int(10);
    ds.labels[size_t(n)] = uint8_t(label);

    // per-sample jitter: rotation, anisotropic scale, shear, shift, stroke width
    const double rot = rng.uniform(-0.16, 0.16);
    const double sc = rng.uniform(0.86, 1.08);
    const double aspect = rng.uniform(0.92, 1.08);
    const double shear = rng.uniform(-0.12, 0.12);
    const double tx = rng.uniform(-1.8, 1.8), ty = rng.uniform(-1.8, 1.8);
    const double thick = rng.uniform(1.35, 2.2);
    const double amp = rng.uniform(0.78, 1.0);

    const double cr = std::cos(rot), sr = std::sin(rot);
    auto map = [&](const Pt& p) {
      double x = (p.x - 0.5) * 20.0 * sc * aspect;
      double y = (p.y - 0.5) * 20.0 * sc / aspect;
      x += shear * y;
      return Pt{cr * x - sr * y + 13.5 + tx, sr * x + cr * y + 13.5 + ty};
    };

    std::vector<Stroke> strokes = digit_strokes(label);
    for (auto& stroke : strokes)
      for (auto& p : stroke) p = map(p);

    uint8_t* img = ds.images.data() + size_t(n) * hw * hw;
    for (int i = 0; i < hw; ++i)
      for (int j = 0; j < hw; ++j) {
        double best = 1e9;
        for (const auto& stroke : strokes)
          for (size_t k = 0; k + 1 < stroke.size(); ++k)
            best = std::min(best, seg_dist(j, i, stroke[k], stroke[k + 1]));
        const double v = std::min(std::max((thick - best) / 1.1, 0.0), 1.0) * amp;
        img[size_t(i) * hw + j] = uint8_t(std::lround(v * 255.0));
      }
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Dataset resolution
// ---------------------------------------------------------------------------

std::string resolve_data_dir(const std::string& explicit_dir, const std::string& fallback_dir) {
  if (!explicit_dir.empty()) return explicit_dir;
  if (const char* env = std::getenv("FEATLENS_DATA_DIR"); env && *env) return env;
  return fallback_dir;
}

Dataset ensure_dataset(const std::string& dir, const std::string& split, int synth_count,
                       uint64_t synth_seed) {
  namespace fs = std::filesystem;
  const std::string prefix = (split == "train") ? "train" : "t10k";
  const std::string ipath = dir + "/" + prefix + "-images-idx3-ubyte";
  const std::string lpath = dir + "/" + prefix + "-labels-idx1-ubyte";
  if (!fs::exists(ipath) || !fs::exists(lpath)) {
    fs::create_directories(dir);
    Dataset synth = make_synth_digits(synth_count, synth_seed + (split == "train" ? 0 : 1), split);
    save_mnist_idx(synth, ipath, lpath);
  }
  Dataset ds = load_mnist_idx(ipath, lpath);
  ds.split = split;
  return ds;
}

// ---------------------------------------------------------------------------
// Tensor boundary
// ---------------------------------------------------------------------------

Tensor make_input_batch(const Dataset& ds, const std::vector<int>& indices, int input_h,
                        int input_w, const TransformSpec* override_spec) {
  const int b = int(indices.size());
  std::vector<float> out(size_t(b) * input_h * input_w);
  std::vector<float> plane(size_t(ds.h) * ds.w);
  for (int n = 0; n < b; ++n) {
    const uint8_t* src = ds.image(indices[size_t(n)]);
    for (size_t i = 0; i < plane.size(); ++i) plane[i] = float(src[i]) / 255.0f;
    std::vector<float> resized = resize_plane(plane, ds.h, ds.w, input_h, input_w);
    const TransformSpec spec =
        override_spec ? *override_spec : ds.spec(indices[size_t(n)]);
    std::vector<float> transformed = apply_transform(resized, input_h, input_w, spec);
    std::copy(transformed.begin(), transformed.end(),
              out.begin() + size_t(n) * input_h * input_w);
  }
  return Tensor::from_data({b, 1, input_h, input_w}, std::move(out));
}

std::vector<int> labels_of(const Dataset& ds, const std::vector<int>& indices) {
  std::vector<int> out;
  out.reserve(indices.size());
  for (int i : indices) out.push_back(int(ds.labels[size_t(i)]));
  return out;
}

}  // namespace featlens
