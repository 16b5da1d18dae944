#include "refseg/data.hpp"
#include "refseg/png_io.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>
#include <stdexcept>
#include <string>

namespace fs = std::filesystem;

namespace refseg {

namespace {

enum class Kind { Circle, Square, Triangle };

struct ShapeSpec {
  Kind kind;
  int color;      // 0 red, 1 green, 2 blue
  int size_cls;   // 0 small, 1 large
  int pos;        // 0 left, 1 right, 2 top, 3 bottom
  double cx, cy, r;
};

const std::array<std::string, 3> kKindNames = {"circle", "square", "triangle"};
const std::array<std::string, 3> kColorNames = {"red", "green", "blue"};
const std::array<std::array<float, 3>, 3> kColorValues = {{
    {0.85f, 0.15f, 0.15f}, {0.15f, 0.80f, 0.20f}, {0.15f, 0.30f, 0.85f}}};
const std::array<std::string, 2> kSizeNames = {"small", "large"};
const std::array<std::string, 4> kPosPhrases = {"on the left", "on the right", "at the top",
                                                "at the bottom"};

bool inside(const ShapeSpec& s, double x, double y) {
  const double dx = x - s.cx, dy = y - s.cy;
  switch (s.kind) {
    case Kind::Circle:
      return dx * dx + dy * dy <= s.r * s.r;
    case Kind::Square:
      return std::abs(dx) <= s.r && std::abs(dy) <= s.r;
    case Kind::Triangle: {
      // upward triangle: apex at cy - r, base at cy + r
      if (dy < -s.r || dy > s.r) return false;
      const double half_width = (dy + s.r) / 2.0;
      return std::abs(dx) <= half_width;
    }
  }
  return false;
}

int position_label(double cx, double cy, int canvas) {
  const double half = canvas / 2.0;
  const double dx = cx - half, dy = cy - half;
  if (std::abs(dx) >= std::abs(dy)) return dx < 0 ? 0 : 1;
  return dy < 0 ? 2 : 3;
}

// Attribute subset: bit 0 color, bit 1 size, bit 2 position. The type is
// always part of the phrase.
bool matches(const ShapeSpec& shape, const ShapeSpec& target, unsigned subset) {
  if (shape.kind != target.kind) return false;
  if ((subset & 1u) && shape.color != target.color) return false;
  if ((subset & 2u) && shape.size_cls != target.size_cls) return false;
  if ((subset & 4u) && shape.pos != target.pos) return false;
  return true;
}

std::string render_expression(const ShapeSpec& target, unsigned subset) {
  std::string out = "the";
  if (subset & 2u) out += " " + kSizeNames[static_cast<size_t>(target.size_cls)];
  if (subset & 1u) out += " " + kColorNames[static_cast<size_t>(target.color)];
  out += " " + kKindNames[static_cast<size_t>(target.kind)];
  if (subset & 4u) out += " " + kPosPhrases[static_cast<size_t>(target.pos)];
  return out;
}

struct Sample {
  std::vector<ShapeSpec> shapes;
  size_t target = 0;
  std::string expression;
};

Sample roll_sample(std::mt19937_64& rng, int canvas) {
  std::uniform_int_distribution<int> count_dist(2, 4);
  std::uniform_int_distribution<int> kind_dist(0, 2);
  std::uniform_int_distribution<int> color_dist(0, 2);
  std::uniform_int_distribution<int> size_dist(0, 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  for (int attempt = 0; attempt < 1000; ++attempt) {
    const int k = count_dist(rng);
    std::vector<ShapeSpec> shapes;
    bool placed_all = true;
    for (int i = 0; i < k; ++i) {
      bool placed = false;
      for (int tries = 0; tries < 60 && !placed; ++tries) {
        ShapeSpec s;
        s.kind = static_cast<Kind>(kind_dist(rng));
        s.color = color_dist(rng);
        s.size_cls = size_dist(rng);
        const double lo = s.size_cls == 0 ? 0.06 : 0.12;
        const double hi = s.size_cls == 0 ? 0.09 : 0.17;
        s.r = (lo + (hi - lo) * unit(rng)) * canvas;
        const double margin = s.r + 2.0;
        s.cx = margin + (canvas - 2.0 * margin) * unit(rng);
        s.cy = margin + (canvas - 2.0 * margin) * unit(rng);
        bool clear = true;
        for (const auto& other : shapes) {
          const double dx = s.cx - other.cx, dy = s.cy - other.cy;
          const double min_sep = 1.5 * (s.r + other.r) + 2.0;
          if (dx * dx + dy * dy < min_sep * min_sep) {
            clear = false;
            break;
          }
        }
        if (clear) {
          s.pos = position_label(s.cx, s.cy, canvas);
          shapes.push_back(s);
          placed = true;
        }
      }
      if (!placed) {
        placed_all = false;
        break;
      }
    }
    if (!placed_all) continue;

    std::uniform_int_distribution<size_t> target_dist(0, shapes.size() - 1);
    const size_t target = target_dist(rng);
    // simplest uniquely-identifying phrase first
    static const std::array<unsigned, 8> kSubsets = {0u, 1u, 2u, 4u, 3u, 5u, 6u, 7u};
    for (unsigned subset : kSubsets) {
      int hits = 0;
      for (const auto& s : shapes) hits += matches(s, shapes[target], subset) ? 1 : 0;
      if (hits == 1) {
        Sample sample;
        sample.shapes = std::move(shapes);
        sample.target = target;
        sample.expression = render_expression(sample.shapes[target], subset);
        return sample;
      }
    }
    // no unique phrase for this roll; try a fresh arrangement
  }
  throw std::runtime_error("generate_synthetic: could not produce an unambiguous sample");
}

}  // namespace

DatasetManifest generate_synthetic(int n, int canvas, uint64_t seed, const std::string& out_dir) {
  if (n <= 0) throw std::invalid_argument("generate_synthetic: n must be > 0");
  if (canvas < 32) throw std::invalid_argument("generate_synthetic: canvas must be >= 32");

  fs::create_directories(fs::path(out_dir) / "images");
  fs::create_directories(fs::path(out_dir) / "masks");

  std::mt19937_64 rng(seed);
  DatasetManifest manifest;
  for (int i = 0; i < n; ++i) {
    const Sample sample = roll_sample(rng, canvas);

    ImageF img = make_image(canvas, canvas, 3);
    for (auto& v : img.data) v = 0.08f;
    MaskU8 mask = make_mask(canvas, canvas);
    for (int y = 0; y < canvas; ++y) {
      for (int x = 0; x < canvas; ++x) {
        const double px = x + 0.5, py = y + 0.5;
        for (size_t si = 0; si < sample.shapes.size(); ++si) {
          if (!inside(sample.shapes[si], px, py)) continue;
          const auto& c = kColorValues[static_cast<size_t>(sample.shapes[si].color)];
          img.at(y, x, 0) = c[0];
          img.at(y, x, 1) = c[1];
          img.at(y, x, 2) = c[2];
          if (si == sample.target) mask.at(y, x) = 1;
        }
      }
    }

    char name[32];
    std::snprintf(name, sizeof(name), "sample_%05d", i);
    ManifestEntry entry;
    entry.id = name;
    entry.image_path = (fs::path(out_dir) / "images" / (std::string(name) + ".png")).string();
    entry.mask_path = (fs::path(out_dir) / "masks" / (std::string(name) + ".png")).string();
    entry.expression = sample.expression;
    entry.split = i % 10 == 8 ? "val" : (i % 10 == 9 ? "test" : "train");
    write_png_rgb(entry.image_path, img);
    write_png_mask(entry.mask_path, mask);
    manifest.entries.push_back(std::move(entry));
  }
  save_manifest(manifest, (fs::path(out_dir) / "manifest.jsonl").string());
  return manifest;
}

}  // namespace refseg
