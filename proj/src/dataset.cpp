#include "esdmr/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>

#include "esdmr/rng.hpp"

namespace esdmr {

std::string split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "train";
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "val" || s == "validation") return Split::kVal;
  if (s == "test") return Split::kTest;
  throw std::invalid_argument("manifest: unknown split '" + s +
                              "' (expected train/val/test)");
}

DatasetManifest load_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open manifest: " + path);
  DatasetManifest m;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    ManifestEntry e;
    std::string split_field;
    if (!std::getline(ls, e.image_path, '\t') ||
        !std::getline(ls, e.mask_path, '\t') ||
        !std::getline(ls, split_field, '\t')) {
      throw std::runtime_error("manifest: line " + std::to_string(lineno) +
                               " is not image<TAB>mask<TAB>split: " + path);
    }
    e.split = parse_split(split_field);
    m.entries.push_back(std::move(e));
  }
  return m;
}

Tensor image_to_tensor(const ImageBuffer& img) {
  Tensor t({img.channels, img.height, img.width});
  float* out = t.data();
  const float inv = 1.0f / static_cast<float>(img.max_value);
  const std::size_t plane = static_cast<std::size_t>(img.height) * img.width;
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      for (int c = 0; c < img.channels; ++c) {
        out[static_cast<std::size_t>(c) * plane +
            static_cast<std::size_t>(y) * img.width + x] =
            static_cast<float>(
                img.samples[(static_cast<std::size_t>(y) * img.width + x) *
                                img.channels +
                            c]) *
            inv;
      }
    }
  }
  return t;
}

Tensor resize_bilinear(const Tensor& t, int out_h, int out_w) {
  const int c = t.extent(0), h = t.extent(1), w = t.extent(2);
  if (h == out_h && w == out_w) return t;
  Tensor out({c, out_h, out_w});
  const float sy = static_cast<float>(h) / static_cast<float>(out_h);
  const float sx = static_cast<float>(w) / static_cast<float>(out_w);
  const float* src = t.data();
  float* dst = out.data();
  for (int ch = 0; ch < c; ++ch) {
    const float* plane = src + static_cast<std::size_t>(ch) * h * w;
    float* optr = dst + static_cast<std::size_t>(ch) * out_h * out_w;
    for (int y = 0; y < out_h; ++y) {
      float fy = (static_cast<float>(y) + 0.5f) * sy - 0.5f;
      if (fy < 0) fy = 0;
      int y0 = static_cast<int>(fy);
      if (y0 > h - 1) y0 = h - 1;
      const int y1 = std::min(y0 + 1, h - 1);
      const float wy = fy - static_cast<float>(y0);
      for (int x = 0; x < out_w; ++x) {
        float fx = (static_cast<float>(x) + 0.5f) * sx - 0.5f;
        if (fx < 0) fx = 0;
        int x0 = static_cast<int>(fx);
        if (x0 > w - 1) x0 = w - 1;
        const int x1 = std::min(x0 + 1, w - 1);
        const float wx = fx - static_cast<float>(x0);
        const float top = (1 - wx) * plane[static_cast<std::size_t>(y0) * w + x0] +
                          wx * plane[static_cast<std::size_t>(y0) * w + x1];
        const float bot = (1 - wx) * plane[static_cast<std::size_t>(y1) * w + x0] +
                          wx * plane[static_cast<std::size_t>(y1) * w + x1];
        optr[static_cast<std::size_t>(y) * out_w + x] = (1 - wy) * top + wy * bot;
      }
    }
  }
  return out;
}

Tensor resize_nearest(const Tensor& t, int out_h, int out_w) {
  const int c = t.extent(0), h = t.extent(1), w = t.extent(2);
  if (h == out_h && w == out_w) return t;
  Tensor out({c, out_h, out_w});
  const float sy = static_cast<float>(h) / static_cast<float>(out_h);
  const float sx = static_cast<float>(w) / static_cast<float>(out_w);
  const float* src = t.data();
  float* dst = out.data();
  for (int ch = 0; ch < c; ++ch) {
    const float* plane = src + static_cast<std::size_t>(ch) * h * w;
    float* optr = dst + static_cast<std::size_t>(ch) * out_h * out_w;
    for (int y = 0; y < out_h; ++y) {
      int yy = static_cast<int>((static_cast<float>(y) + 0.5f) * sy);
      if (yy > h - 1) yy = h - 1;
      for (int x = 0; x < out_w; ++x) {
        int xx = static_cast<int>((static_cast<float>(x) + 0.5f) * sx);
        if (xx > w - 1) xx = w - 1;
        optr[static_cast<std::size_t>(y) * out_w + x] =
            plane[static_cast<std::size_t>(yy) * w + xx];
      }
    }
  }
  return out;
}

SegSample load_sample(const std::string& image_path,
                      const std::string& mask_path, int resize_h,
                      int resize_w) {
  const ImageBuffer raw_img = read_image(image_path);
  const ImageBuffer raw_mask = read_image(mask_path);
  if (raw_mask.channels != 1) {
    throw std::runtime_error("mask must be single-channel: " + mask_path);
  }
  if (raw_img.width != raw_mask.width || raw_img.height != raw_mask.height) {
    throw std::runtime_error("image/mask extent mismatch: " + image_path +
                             " vs " + mask_path);
  }
  SegSample s;
  s.source_path = image_path;
  s.image = resize_bilinear(image_to_tensor(raw_img), resize_h, resize_w);

  Tensor mask = resize_nearest(image_to_tensor(raw_mask), resize_h, resize_w);
  float maxv = 0;
  for (std::size_t i = 0; i < mask.numel(); ++i) {
    maxv = std::max(maxv, mask.data()[i]);
  }
  const float threshold = 0.5f * maxv;
  float* md = mask.data();
  for (std::size_t i = 0; i < mask.numel(); ++i) {
    md[i] = (maxv > 0 && md[i] > threshold) ? 1.0f : 0.0f;
  }
  s.mask = mask;
  return s;
}

std::array<Tensor, 4> corner_patches(const Tensor& image, int size) {
  if (image.ndim() != 3) {
    throw std::invalid_argument("corner_patches: expected (C,H,W), got " +
                                shape_to_string(image.shape()));
  }
  const int c = image.extent(0), h = image.extent(1), w = image.extent(2);
  if (h < size || w < size) {
    throw std::invalid_argument(
        "corner_patches: image " + shape_to_string(image.shape()) +
        " smaller than patch size " + std::to_string(size));
  }
  const int anchors[4][2] = {
      {0, 0}, {0, w - size}, {h - size, 0}, {h - size, w - size}};
  std::array<Tensor, 4> out;
  for (int k = 0; k < 4; ++k) {
    Tensor patch({c, size, size});
    const int oy = anchors[k][0], ox = anchors[k][1];
    for (int ch = 0; ch < c; ++ch) {
      for (int y = 0; y < size; ++y) {
        const float* src = image.data() +
                           (static_cast<std::size_t>(ch) * h + oy + y) * w + ox;
        float* dst = patch.data() +
                     (static_cast<std::size_t>(ch) * size + y) * size;
        std::copy(src, src + size, dst);
      }
    }
    out[static_cast<std::size_t>(k)] = std::move(patch);
  }
  return out;
}

namespace {

long long round_half_up(double x) {
  return static_cast<long long>(std::floor(x + 0.5));
}

std::string filename_of(const std::string& path) {
  const std::size_t pos = path.find_last_of('/');
  return pos == std::string::npos ? path : path.substr(pos + 1);
}

std::vector<ManifestEntry> sorted_by_filename(
    const std::vector<ManifestEntry>& entries) {
  std::vector<ManifestEntry> out = entries;
  std::sort(out.begin(), out.end(),
            [](const ManifestEntry& a, const ManifestEntry& b) {
              return filename_of(a.image_path) < filename_of(b.image_path);
            });
  return out;
}

SplitLists split_by_counts(std::vector<ManifestEntry> ordered,
                           std::size_t n_train, std::size_t n_val) {
  SplitLists out;
  for (std::size_t i = 0; i < ordered.size(); ++i) {
    ManifestEntry e = ordered[i];
    if (i < n_train) {
      e.split = Split::kTrain;
      out.train.push_back(std::move(e));
    } else if (i < n_train + n_val) {
      e.split = Split::kVal;
      out.val.push_back(std::move(e));
    } else {
      e.split = Split::kTest;
      out.test.push_back(std::move(e));
    }
  }
  return out;
}

std::string lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

}  // namespace

SplitLists make_split(const DatasetManifest& manifest,
                      const std::string& dataset_name, std::uint64_t seed) {
  const std::string name = lower(dataset_name);
  const std::size_t n = manifest.entries.size();

  if (name.empty() || name == "manifest" || name == "none") {
    SplitLists out;
    for (const ManifestEntry& e : manifest.entries) {
      switch (e.split) {
        case Split::kTrain: out.train.push_back(e); break;
        case Split::kVal: out.val.push_back(e); break;
        case Split::kTest: out.test.push_back(e); break;
      }
    }
    return out;
  }

  struct FixedCounts {
    std::size_t total, train, val;
  };
  FixedCounts fixed{};
  bool is_fixed = false;
  if (name == "drive") {
    fixed = {40, 20, 0};
    is_fixed = true;
  } else if (name == "isic2016") {
    fixed = {1279, 900, 0};
    is_fixed = true;
  } else if (name == "isic2017") {
    fixed = {2750, 2000, 150};
    is_fixed = true;
  } else if (name == "mc") {
    fixed = {138, 100, 0};
    is_fixed = true;
  } else if (name == "monuseg") {
    fixed = {44, 30, 0};
    is_fixed = true;
  }

  if (is_fixed) {
    std::vector<ManifestEntry> ordered = sorted_by_filename(manifest.entries);
    if (n == fixed.total) {
      return split_by_counts(std::move(ordered), fixed.train, fixed.val);
    }
    std::cerr << "warning: dataset '" << name << "' expects " << fixed.total
              << " entries, manifest has " << n
              << "; using a proportional split\n";
    const double train_frac =
        static_cast<double>(fixed.train) / static_cast<double>(fixed.total);
    const double val_frac =
        static_cast<double>(fixed.val) / static_cast<double>(fixed.total);
    const std::size_t n_train = static_cast<std::size_t>(
        round_half_up(train_frac * static_cast<double>(n)));
    const std::size_t n_val = static_cast<std::size_t>(
        round_half_up(val_frac * static_cast<double>(n)));
    return split_by_counts(std::move(ordered), n_train, n_val);
  }

  if (name == "chase") {
    std::vector<ManifestEntry> ordered = sorted_by_filename(manifest.entries);
    const std::size_t n_train = static_cast<std::size_t>(
        round_half_up(0.7 * static_cast<double>(n)));
    return split_by_counts(std::move(ordered), n_train, 0);
  }

  if (name == "cvc" || name == "cvc-clinicdb" || name == "cvcclinicdb") {
    std::vector<ManifestEntry> ordered = sorted_by_filename(manifest.entries);
    Rng rng(seed);
    std::vector<std::size_t> perm = rng.permutation(n);
    std::vector<ManifestEntry> shuffled;
    shuffled.reserve(n);
    for (std::size_t i : perm) shuffled.push_back(ordered[i]);
    const std::size_t n_train = static_cast<std::size_t>(
        round_half_up(0.8 * static_cast<double>(n)));
    const std::size_t n_val = static_cast<std::size_t>(
        round_half_up(0.1 * static_cast<double>(n)));
    return split_by_counts(std::move(shuffled), n_train, n_val);
  }

  throw std::invalid_argument(
      "unknown dataset split convention '" + dataset_name +
      "' (expected drive, chase, isic2016, isic2017, cvc-clinicdb, mc, "
      "monuseg or manifest)");
}

namespace {

const float* as_plane(const Tensor& t, int& h, int& w, const char* op) {
  if (t.ndim() == 2) {
    h = t.extent(0);
    w = t.extent(1);
  } else if (t.ndim() == 3 && t.extent(0) == 1) {
    h = t.extent(1);
    w = t.extent(2);
  } else {
    throw std::invalid_argument(std::string(op) +
                                ": expected (H,W) or (1,H,W) map, got " +
                                shape_to_string(t.shape()));
  }
  return t.data();
}

}  // namespace

ImageBuffer render_overlay(const Tensor& pred_binary,
                           const Tensor& ref_binary) {
  int h = 0, w = 0;
  const float* p = as_plane(pred_binary, h, w, "render_overlay");
  int h2 = 0, w2 = 0;
  const float* r = as_plane(ref_binary, h2, w2, "render_overlay");
  if (h != h2 || w != w2) {
    throw std::invalid_argument("render_overlay: extent mismatch");
  }
  ImageBuffer img;
  img.width = w;
  img.height = h;
  img.channels = 3;
  img.max_value = 255;
  img.samples.assign(static_cast<std::size_t>(w) * h * 3, 0);
  for (std::size_t i = 0; i < static_cast<std::size_t>(w) * h; ++i) {
    const bool pi = p[i] == 1.0f;
    const bool ri = r[i] == 1.0f;
    std::uint16_t* px = &img.samples[3 * i];
    if (pi && ri) {
      px[1] = 255;  // TP: green
    } else if (pi && !ri) {
      px[0] = 255;  // FP: red
    } else if (!pi && ri) {
      px[2] = 255;  // FN: blue
    }                // TN stays black
  }
  return img;
}

void write_mask_png(const std::string& path, const Tensor& mask_binary) {
  int h = 0, w = 0;
  const float* m = as_plane(mask_binary, h, w, "write_mask_png");
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(w) * h);
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    bytes[i] = m[i] == 1.0f ? 255 : 0;
  }
  write_png_gray8(path, w, h, bytes.data());
}

void write_overlay_png(const std::string& path, const Tensor& pred_binary,
                       const Tensor& ref_binary) {
  const ImageBuffer img = render_overlay(pred_binary, ref_binary);
  std::vector<std::uint8_t> bytes(img.samples.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    bytes[i] = static_cast<std::uint8_t>(img.samples[i]);
  }
  write_png_rgb8(path, img.width, img.height, bytes.data());
}

}  // namespace esdmr
