#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "hcma/image.hpp"
#include "hcma/tensor.hpp"

namespace hcma {

struct generation_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Normalized axis-aligned box, 0 <= x0 < x1 <= 1 (same for y).
struct Box {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;

  bool valid() const { return 0.0 <= x0 && x0 < x1 && x1 <= 1.0 && 0.0 <= y0 && y0 < y1 && y1 <= 1.0; }
  double area() const { return (x1 - x0) * (y1 - y0); }
  double iou(const Box& o) const;
  double cx() const { return 0.5 * (x0 + x1); }
  double cy() const { return 0.5 * (y0 + y1); }
};

struct PlacedObject {
  int category_id = 0;  // color * num_shapes + shape
  Box box;
};

/// One canvas: objects sorted by box center (x, then y), a grammar caption,
/// and the seed that regenerates it bit-identically.
struct Scene {
  std::vector<PlacedObject> objects;
  std::vector<int> caption_tokens;
  uint64_t seed = 0;
};

// ---- closed vocabulary -----------------------------------------------------

namespace vocab {

inline constexpr int kNumColors = 4;
inline constexpr int kNumShapes = 3;
inline constexpr int kNumCategories = kNumColors * kNumShapes;

const std::vector<std::string>& words();        // token id -> word
int token_id(const std::string& word);          // throws on unknown word
int size();                                     // vocabulary size
int pad_id();

int color_of(int category_id);
int shape_of(int category_id);
std::string category_name(int category_id);     // e.g. "red circle"
std::vector<int> label_tokens(int category_id); // e.g. {id("red"), id("circle")}
std::array<float, 3> color_rgb(int color);

}  // namespace vocab

// ---- generation ------------------------------------------------------------

struct DatasetConfig {
  int min_objects = 1;
  int max_objects = 4;
  double min_obj_side = 0.2;
  double max_obj_side = 0.4;
  double max_iou = 0.1;
  int max_attempts = 1000;
};

/// Rejection-samples a scene; pure function of (config, seed).
Scene sample_scene(const DatasetConfig& config, uint64_t seed);

/// Rasterizes at `side` pixels (divisible by 32). A pixel takes the color of
/// the frontmost (latest-listed) shape whose analytic region contains its
/// center; otherwise the fixed light-gray background.
Image render(const Scene& scene, int side);

/// Deterministic grammar: "a {color} {shape}" per object, joined by "and",
/// objects in box-center order.
std::vector<int> caption(const Scene& scene);

/// Coverage fractions: out[h, w, i] = area(box_i ∩ cell(h,w)) / area(cell),
/// shape [G, G, M]. Every box must cover a positive total area.
Tensor box_map(const std::vector<Box>& boxes, int G);

/// Sinusoidal code of the four coordinates at frequencies 2^l, l = 0..L-1:
/// per coordinate, (sin(2^l π p), cos(2^l π p)); length 8L.
std::vector<float> fourier_embed(const Box& box, int L = 8);

// ---- dataset file (newline-delimited JSON records) -------------------------

void save_dataset(const std::filesystem::path& path, const std::vector<Scene>& scenes);
std::vector<Scene> load_dataset(const std::filesystem::path& path);

}  // namespace hcma
