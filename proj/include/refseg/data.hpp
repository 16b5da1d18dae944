#pragma once

// Dataset ingestion: JSON-lines manifests of image/mask/expression
// triplets, dual-resolution preprocessing, and the synthetic shapes
// dataset used for end-to-end verification.

#include "refseg/image.hpp"
#include "refseg/tokenizer.hpp"

#include <string>
#include <vector>

namespace refseg {

struct ManifestEntry {
  std::string image_path;  // resolved relative to the manifest directory
  std::string mask_path;
  std::string expression;
  std::string split;  // train | val | test
  std::string id;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;

  std::vector<const ManifestEntry*> split(const std::string& name) const {
    std::vector<const ManifestEntry*> out;
    for (const auto& e : entries)
      if (e.split == name) out.push_back(&e);
    return out;
  }
  size_t split_count(const std::string& name) const { return split(name).size(); }
};

// One sample: high-res image, binary ground-truth mask, expression.
struct Triplet {
  ImageF image;  // HxWx3, [0,1]
  MaskU8 mask;   // HxW, strictly 0/1
  std::string expression;
  std::string id;
};

struct DualResSample {
  ImageF image_lowres;
  ImageF image_highres;
  MaskU8 mask;  // kept at ground-truth resolution
  std::vector<int> token_ids;
  std::vector<bool> pad_mask;
  std::string id;
};

// Parses and validates a JSON-lines manifest; referenced files must exist.
DatasetManifest load_manifest(const std::string& path);

void save_manifest(const DatasetManifest& manifest, const std::string& path);

// Decodes the entry's image and mask; the mask is binarized at 0.5 with a
// warning when the source had more than two distinct values.
Triplet load_triplet(const ManifestEntry& entry);

// Resamples the image to both model resolutions; the ground-truth mask is
// never resampled. The low-res image is downsampled from the high-res one.
DualResSample preprocess_dual(const Triplet& triplet, int size_low, int size_high,
                              const Tokenizer& tokenizer);

// Synthetic referring-segmentation dataset: 2-4 simple shapes per canvas
// with color/size/position attributes; each expression uniquely
// identifies one shape. Pure function of (n, canvas, seed); images and
// masks are written under out_dir, the returned manifest is also saved as
// out_dir/manifest.jsonl.
DatasetManifest generate_synthetic(int n, int canvas, uint64_t seed, const std::string& out_dir);

}  // namespace refseg
