#include "hcma/scene.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <unordered_map>

#include <json.hpp>

#include "hcma/rng.hpp"

namespace hcma {

double Box::iou(const Box& o) const {
  const double ix = std::max(0.0, std::min(x1, o.x1) - std::max(x0, o.x0));
  const double iy = std::max(0.0, std::min(y1, o.y1) - std::max(y0, o.y0));
  const double inter = ix * iy;
  const double uni = area() + o.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

namespace vocab {

namespace {
const std::vector<std::string> kColors = {"red", "green", "blue", "yellow"};
const std::vector<std::string> kShapes = {"circle", "square", "triangle"};
}  // namespace

const std::vector<std::string>& words() {
  static const std::vector<std::string> w = [] {
    std::vector<std::string> v = {"<pad>", "a", "and"};
    for (const auto& c : kColors) v.push_back(c);
    for (const auto& s : kShapes) v.push_back(s);
    return v;
  }();
  return w;
}

int token_id(const std::string& word) {
  static const std::unordered_map<std::string, int> index = [] {
    std::unordered_map<std::string, int> m;
    for (size_t i = 0; i < words().size(); ++i) m[words()[i]] = static_cast<int>(i);
    return m;
  }();
  auto it = index.find(word);
  if (it == index.end()) throw std::runtime_error("unknown vocabulary word: " + word);
  return it->second;
}

int size() { return static_cast<int>(words().size()); }
int pad_id() { return 0; }

int color_of(int category_id) { return category_id / kNumShapes; }
int shape_of(int category_id) { return category_id % kNumShapes; }

std::string category_name(int category_id) {
  return kColors[color_of(category_id)] + " " + kShapes[shape_of(category_id)];
}

std::vector<int> label_tokens(int category_id) {
  return {token_id(kColors[color_of(category_id)]), token_id(kShapes[shape_of(category_id)])};
}

std::array<float, 3> color_rgb(int color) {
  static const std::array<std::array<float, 3>, 4> palette = {{
      {0.85f, 0.10f, 0.10f},  // red
      {0.10f, 0.70f, 0.15f},  // green
      {0.15f, 0.25f, 0.85f},  // blue
      {0.95f, 0.85f, 0.10f},  // yellow
  }};
  return palette[color];
}

}  // namespace vocab

// ---------------------------------------------------------------------------

Scene sample_scene(const DatasetConfig& config, uint64_t seed) {
  if (config.max_objects < config.min_objects || config.max_objects > 4 ||
      config.min_objects < 1 || config.min_obj_side < 0.05 || config.max_obj_side > 1.0)
    throw generation_error("invalid dataset config");
  Rng rng = Rng(seed).stream("scene");
  Scene scene;
  scene.seed = seed;
  const int m = static_cast<int>(rng.uniform_int(config.min_objects, config.max_objects));
  for (int i = 0; i < m; ++i) {
    bool placed = false;
    for (int attempt = 0; attempt < config.max_attempts && !placed; ++attempt) {
      const double s = config.min_obj_side + (config.max_obj_side - config.min_obj_side) * rng.uniform();
      Box b;
      b.x0 = rng.uniform() * (1.0 - s);
      b.y0 = rng.uniform() * (1.0 - s);
      b.x1 = b.x0 + s;
      b.y1 = b.y0 + s;
      bool ok = true;
      for (const auto& obj : scene.objects)
        if (b.iou(obj.box) > config.max_iou) {
          ok = false;
          break;
        }
      if (ok) {
        PlacedObject obj;
        obj.category_id = static_cast<int>(rng.uniform_int(0, vocab::kNumCategories - 1));
        obj.box = b;
        scene.objects.push_back(obj);
        placed = true;
      }
    }
    if (!placed)
      throw generation_error("object placement failed after " +
                             std::to_string(config.max_attempts) + " attempts");
  }
  std::stable_sort(scene.objects.begin(), scene.objects.end(),
                   [](const PlacedObject& a, const PlacedObject& b) {
                     if (a.box.cx() != b.box.cx()) return a.box.cx() < b.box.cx();
                     return a.box.cy() < b.box.cy();
                   });
  scene.caption_tokens = caption(scene);
  return scene;
}

namespace {

bool point_in_shape(int shape, const Box& b, double px, double py) {
  switch (shape) {
    case 0: {  // circle
      const double r = 0.5 * std::min(b.x1 - b.x0, b.y1 - b.y0);
      const double dx = px - b.cx(), dy = py - b.cy();
      return dx * dx + dy * dy <= r * r;
    }
    case 1:  // square
      return px >= b.x0 && px <= b.x1 && py >= b.y0 && py <= b.y1;
    case 2: {  // triangle: apex top-center, base at bottom edge
      if (py < b.y0 || py > b.y1) return false;
      const double t = (py - b.y0) / (b.y1 - b.y0);  // 0 at apex row, 1 at base
      const double half = 0.5 * (b.x1 - b.x0) * t;
      return px >= b.cx() - half && px <= b.cx() + half;
    }
    default:
      return false;
  }
}

}  // namespace

Image render(const Scene& scene, int side) {
  if (side % 32 != 0) throw std::runtime_error("render: side must be divisible by 32");
  Image img(side);
  const float bg = 0.8f;
  std::fill(img.data.begin(), img.data.end(), bg);
  for (int y = 0; y < side; ++y) {
    const double py = (y + 0.5) / side;
    for (int x = 0; x < side; ++x) {
      const double px = (x + 0.5) / side;
      // frontmost = latest listed
      for (int i = static_cast<int>(scene.objects.size()) - 1; i >= 0; --i) {
        const auto& obj = scene.objects[i];
        if (point_in_shape(vocab::shape_of(obj.category_id), obj.box, px, py)) {
          auto rgb = vocab::color_rgb(vocab::color_of(obj.category_id));
          for (int c = 0; c < 3; ++c) img.at(c, y, x) = rgb[c];
          break;
        }
      }
    }
  }
  return img;
}

std::vector<int> caption(const Scene& scene) {
  std::vector<int> toks;
  for (size_t i = 0; i < scene.objects.size(); ++i) {
    if (i > 0) toks.push_back(vocab::token_id("and"));
    toks.push_back(vocab::token_id("a"));
    for (int t : vocab::label_tokens(scene.objects[i].category_id)) toks.push_back(t);
  }
  return toks;
}

Tensor box_map(const std::vector<Box>& boxes, int G) {
  if (G < 2) throw shape_error("box_map: G >= 2 required");
  const int M = static_cast<int>(boxes.size());
  Tensor out({G, G, M});
  const double cell = 1.0 / G;
  for (int i = 0; i < M; ++i) {
    const Box& b = boxes[i];
    if (!b.valid()) throw numeric_error("box_map: invalid box");
    double total = 0.0;
    for (int h = 0; h < G; ++h) {
      const double cy0 = h * cell, cy1 = cy0 + cell;
      for (int w = 0; w < G; ++w) {
        const double cx0 = w * cell, cx1 = cx0 + cell;
        const double ix = std::max(0.0, std::min(b.x1, cx1) - std::max(b.x0, cx0));
        const double iy = std::max(0.0, std::min(b.y1, cy1) - std::max(b.y0, cy0));
        const double frac = (ix * iy) / (cell * cell);
        out[(int64_t(h) * G + w) * M + i] = static_cast<float>(frac);
        total += ix * iy;
      }
    }
    if (total <= 0.0) throw numeric_error("box_map: box with zero coverage");
  }
  return out;
}

std::vector<float> fourier_embed(const Box& box, int L) {
  const double coords[4] = {box.x0, box.y0, box.x1, box.y1};
  std::vector<float> out;
  out.reserve(8 * L);
  for (double p : coords)
    for (int l = 0; l < L; ++l) {
      const double f = std::ldexp(1.0, l) * M_PI * p;  // 2^l * pi * p
      out.push_back(static_cast<float>(std::sin(f)));
      out.push_back(static_cast<float>(std::cos(f)));
    }
  return out;
}

// ---------------------------------------------------------------------------

void save_dataset(const std::filesystem::path& path, const std::vector<Scene>& scenes) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  for (const auto& s : scenes) {
    nlohmann::ordered_json rec;
    rec["seed"] = s.seed;
    rec["objects"] = nlohmann::ordered_json::array();
    for (const auto& o : s.objects)
      rec["objects"].push_back({{"category", o.category_id},
                                {"box", {o.box.x0, o.box.y0, o.box.x1, o.box.y1}}});
    rec["caption"] = s.caption_tokens;
    out << rec.dump() << "\n";
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::vector<Scene> load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open: " + path.string());
  std::vector<Scene> scenes;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto rec = nlohmann::json::parse(line);
    Scene s;
    s.seed = rec.at("seed").get<uint64_t>();
    for (const auto& o : rec.at("objects")) {
      PlacedObject obj;
      obj.category_id = o.at("category").get<int>();
      auto b = o.at("box");
      obj.box = Box{b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()};
      s.objects.push_back(obj);
    }
    s.caption_tokens = rec.at("caption").get<std::vector<int>>();
    scenes.push_back(std::move(s));
  }
  return scenes;
}

}  // namespace hcma
