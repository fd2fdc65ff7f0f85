#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "esdmr/image.hpp"
#include "esdmr/tensor.hpp"

namespace esdmr {

enum class Split { kTrain, kVal, kTest };

std::string split_name(Split s);
Split parse_split(const std::string& s);

/// One image/mask pair, loaded and normalized: image values in [0,1] with
/// shape (C,H,W); mask strictly binary with shape (1,H,W).
struct SegSample {
  Tensor image;
  Tensor mask;
  std::string source_path;
  Split split = Split::kTrain;
};

struct ManifestEntry {
  std::string image_path;
  std::string mask_path;
  Split split = Split::kTrain;
};

/// Line-oriented TSV: image_path<TAB>mask_path<TAB>split.
struct DatasetManifest {
  std::string name;
  std::vector<ManifestEntry> entries;
  int resize_h = 256;
  int resize_w = 256;
};

DatasetManifest load_manifest(const std::string& path);

/// Loads a pair: the image is scaled to [0,1] and bilinearly resized; the
/// mask is nearest-neighbor resized, then thresholded at half its maximum.
SegSample load_sample(const std::string& image_path,
                      const std::string& mask_path, int resize_h,
                      int resize_w);

/// The four size x size patches anchored at the corners of a (C,H,W) tensor,
/// in order top-left, top-right, bottom-left, bottom-right.
std::array<Tensor, 4> corner_patches(const Tensor& image, int size = 512);

struct SplitLists {
  std::vector<ManifestEntry> train, val, test;
};

/// Applies a named split convention over the manifest entries (sorted by
/// image filename), or the manifest's own split column when `dataset_name`
/// is empty or "manifest".
///
/// Fixed counts: drive 20/0/20, isic2016 900/0/379, isic2017 2000/150/600,
/// mc 100/0/38, monuseg 30/0/14. chase: first 70% train (round-half-up),
/// rest test. cvc-clinicdb: seeded random 80/10/10 (round-half-up train and
/// val, remainder test). A count mismatch against the convention emits a
/// warning on stderr and falls back to a proportional split.
SplitLists make_split(const DatasetManifest& manifest,
                      const std::string& dataset_name, std::uint64_t seed);

/// TP green, TN black, FP red, FN blue, as 8-bit RGB.
ImageBuffer render_overlay(const Tensor& pred_binary, const Tensor& ref_binary);

/// Writes a (1,H,W) or (H,W) binary mask as an 8-bit gray PNG with values
/// {0,255}.
void write_mask_png(const std::string& path, const Tensor& mask_binary);

void write_overlay_png(const std::string& path, const Tensor& pred_binary,
                       const Tensor& ref_binary);

/// Converts a decoded raster to a [0,1] float tensor of shape (C,H,W).
Tensor image_to_tensor(const ImageBuffer& img);

/// General bilinear resize of a (C,H,W) tensor (half-pixel centers, edge
/// clamp); returns the input unchanged when extents already match.
Tensor resize_bilinear(const Tensor& t, int out_h, int out_w);

/// Nearest-neighbor resize of a (C,H,W) tensor.
Tensor resize_nearest(const Tensor& t, int out_h, int out_w);

}  // namespace esdmr
