#include "refseg/data.hpp"

#include "refseg/log.hpp"
#include "refseg/png_io.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

namespace fs = std::filesystem;

namespace refseg {

namespace {

const std::set<std::string>& known_splits() {
  static const std::set<std::string> s = {"train", "val", "test"};
  return s;
}

}  // namespace

DatasetManifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("manifest not found: " + path);
  const fs::path base = fs::path(path).parent_path();

  DatasetManifest manifest;
  std::map<std::string, std::string> image_split;  // image path -> split, for disjointness
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const std::exception& e) {
      throw std::runtime_error("manifest line " + std::to_string(line_no) +
                               ": invalid JSON: " + e.what());
    }
    ManifestEntry entry;
    try {
      entry.image_path = (base / j.at("image").get<std::string>()).string();
      entry.mask_path = (base / j.at("mask").get<std::string>()).string();
      entry.expression = j.at("expression").get<std::string>();
      entry.split = j.at("split").get<std::string>();
    } catch (const std::exception& e) {
      throw std::runtime_error("manifest line " + std::to_string(line_no) +
                               ": missing or malformed field: " + e.what());
    }
    entry.id = j.value("id", "line" + std::to_string(line_no));
    if (!known_splits().count(entry.split))
      throw std::runtime_error("manifest line " + std::to_string(line_no) + ": unknown split \"" +
                               entry.split + "\" (expected train, val or test)");
    if (entry.expression.find_first_not_of(" \t\r\n") == std::string::npos)
      throw std::runtime_error("manifest line " + std::to_string(line_no) + ": empty expression");
    if (!fs::exists(entry.image_path))
      throw std::runtime_error("manifest line " + std::to_string(line_no) +
                               ": image file missing: " + entry.image_path);
    if (!fs::exists(entry.mask_path))
      throw std::runtime_error("manifest line " + std::to_string(line_no) +
                               ": mask file missing: " + entry.mask_path);
    auto [it, inserted] = image_split.emplace(entry.image_path, entry.split);
    if (!inserted && it->second != entry.split)
      throw std::runtime_error("manifest line " + std::to_string(line_no) + ": image " +
                               entry.image_path + " appears in splits \"" + it->second +
                               "\" and \"" + entry.split + "\"");
    manifest.entries.push_back(std::move(entry));
  }
  return manifest;
}

void save_manifest(const DatasetManifest& manifest, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write manifest: " + path);
  const fs::path base = fs::path(path).parent_path();
  for (const auto& e : manifest.entries) {
    nlohmann::json j;
    j["image"] = fs::relative(e.image_path, base).string();
    j["mask"] = fs::relative(e.mask_path, base).string();
    j["expression"] = e.expression;
    j["split"] = e.split;
    j["id"] = e.id;
    out << j.dump() << "\n";
  }
}

Triplet load_triplet(const ManifestEntry& entry) {
  Triplet t;
  t.id = entry.id;
  t.expression = entry.expression;
  t.image = read_png(entry.image_path, 3);

  ImageF raw_mask = read_png(entry.mask_path, 1);
  if (raw_mask.h != t.image.h || raw_mask.w != t.image.w)
    throw std::runtime_error("triplet " + entry.id + ": mask " + std::to_string(raw_mask.h) + "x" +
                             std::to_string(raw_mask.w) + " does not match image " +
                             std::to_string(t.image.h) + "x" + std::to_string(t.image.w));
  std::set<float> distinct;
  for (float v : raw_mask.data) {
    distinct.insert(v);
    if (distinct.size() > 2) break;
  }
  if (distinct.size() > 2)
    log::warn("triplet " + entry.id + ": mask has more than two distinct values; binarizing at 0.5");
  t.mask = make_mask(raw_mask.h, raw_mask.w);
  for (size_t i = 0; i < raw_mask.data.size(); ++i)
    t.mask.data[i] = raw_mask.data[i] >= 0.5f ? 1 : 0;
  return t;
}

DualResSample preprocess_dual(const Triplet& triplet, int size_low, int size_high,
                              const Tokenizer& tokenizer) {
  if (size_low >= size_high)
    throw std::invalid_argument("preprocess_dual: size_low " + std::to_string(size_low) +
                                " must be < size_high " + std::to_string(size_high));
  DualResSample s;
  s.id = triplet.id;
  s.image_highres = (triplet.image.h == size_high && triplet.image.w == size_high)
                        ? triplet.image
                        : resize_bilinear(triplet.image, size_high, size_high);
  s.image_lowres = resize_bilinear(s.image_highres, size_low, size_low);
  s.mask = triplet.mask;
  auto enc = tokenizer.tokenize(triplet.expression);
  s.token_ids = std::move(enc.ids);
  s.pad_mask = std::move(enc.pad_mask);
  return s;
}

}  // namespace refseg
