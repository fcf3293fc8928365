#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "rfnet/common.hpp"
#include "rfnet/random.hpp"
#include "rfnet/serialize.hpp"
#include "rfnet/tensor.hpp"

namespace rfnet {

// Synthetic captioning corpus. A scene holds one to three objects, each with
// four attributes (shape, color, size, position; positions are distinct
// within a scene). Every view sees only a subset of the attributes: a cell's
// masked attribute one-hots pass through a fixed random projection, then get
// Gaussian noise. Views whose mask includes position lay cells out by
// position (always three cells, empty ones stay zero before noise); other
// views use one cell per object. Captions come from a small template grammar
// and never exceed sixteen tokens.

constexpr std::size_t kAttrShape = 0;
constexpr std::size_t kAttrColor = 1;
constexpr std::size_t kAttrSize = 2;
constexpr std::size_t kAttrPosition = 3;

inline const std::vector<std::vector<std::string>>& attribute_values() {
  static const std::vector<std::vector<std::string>> v = {
      {"circle", "square", "triangle", "star"},
      {"red", "blue", "green", "yellow"},
      {"small", "big"},
      {"left", "right", "center"},
  };
  return v;
}

struct SceneObject {
  std::size_t shape = 0, color = 0, size = 0, position = 0;
};

struct Scene {
  std::vector<SceneObject> objects;
  std::vector<Tensor> views;  // annotation matrices, one per view (cells x dim)
  std::vector<std::vector<std::string>> captions;
};

struct GeneratorConfig {
  std::size_t views = 3;              // 1..6
  std::size_t feature_dim = 16;       // annotation width, all views
  std::size_t captions_per_scene = 2;
  std::size_t max_objects = 3;        // 1..3
  double noise_std = 0.05;
  std::uint64_t seed = 1;
  std::size_t train_scenes = 2000;
  std::size_t val_scenes = 200;
  std::size_t test_scenes = 200;

  void validate() const {
    if (views < 1 || views > 6) throw ConfigError("views must be in [1,6]");
    if (feature_dim == 0) throw ConfigError("feature_dim must be positive");
    if (captions_per_scene == 0) throw ConfigError("captions_per_scene must be positive");
    if (max_objects < 1 || max_objects > 3) throw ConfigError("max_objects must be in [1,3]");
    if (noise_std < 0.0) throw ConfigError("noise_std must be non-negative");
    if (train_scenes == 0) throw ConfigError("train_scenes must be positive");
  }
};

// Which attributes each view observes. A single view sees everything;
// otherwise views cycle through complementary attribute pairs.
inline std::vector<std::vector<std::size_t>> view_info_masks(std::size_t views) {
  if (views < 1 || views > 6) throw ConfigError("views must be in [1,6]");
  if (views == 1) return {{kAttrShape, kAttrColor, kAttrSize, kAttrPosition}};
  static const std::vector<std::vector<std::size_t>> cycle = {
      {kAttrShape, kAttrColor}, {kAttrSize, kAttrPosition},
      {kAttrShape, kAttrSize},  {kAttrColor, kAttrPosition},
      {kAttrShape, kAttrPosition}, {kAttrColor, kAttrSize},
  };
  return {cycle.begin(), cycle.begin() + static_cast<std::ptrdiff_t>(views)};
}

namespace detail {

inline bool mask_has(const std::vector<std::size_t>& mask, std::size_t attr) {
  return std::find(mask.begin(), mask.end(), attr) != mask.end();
}

// One-hot width for a view: the masked attributes plus an occupancy flag.
inline std::size_t mask_input_dim(const std::vector<std::size_t>& mask) {
  std::size_t d = 1;
  for (std::size_t a : mask) d += attribute_values()[a].size();
  return d;
}

inline std::size_t attr_value(const SceneObject& o, std::size_t attr) {
  switch (attr) {
    case kAttrShape: return o.shape;
    case kAttrColor: return o.color;
    case kAttrSize: return o.size;
    case kAttrPosition: return o.position;
    default: throw ValueError("unknown attribute index");
  }
}

inline std::vector<double> cell_one_hot(const SceneObject* o,
                                        const std::vector<std::size_t>& mask) {
  std::vector<double> x(mask_input_dim(mask), 0.0);
  if (o == nullptr) return x;  // empty cell
  std::size_t off = 0;
  for (std::size_t a : mask) {
    x[off + attr_value(*o, a)] = 1.0;
    off += attribute_values()[a].size();
  }
  x[off] = 1.0;  // occupancy
  return x;
}

}  // namespace detail

struct Dataset {
  GeneratorConfig config;
  std::vector<std::vector<std::size_t>> info_masks;  // per view
  std::vector<Tensor> projections;                   // per view (dim x one_hot_dim)
  std::vector<Scene> train, val, test;

  std::vector<std::size_t> view_dims() const {
    return std::vector<std::size_t>(config.views, config.feature_dim);
  }

  const std::vector<Scene>& split(const std::string& name) const {
    if (name == "train") return train;
    if (name == "val") return val;
    if (name == "test") return test;
    throw ValueError("unknown split '" + name + "'");
  }
};

namespace detail {

inline SceneObject sample_object(Rng& rng, std::size_t position) {
  SceneObject o;
  o.shape = rng.uniform_int(attribute_values()[kAttrShape].size());
  o.color = rng.uniform_int(attribute_values()[kAttrColor].size());
  o.size = rng.uniform_int(attribute_values()[kAttrSize].size());
  o.position = position;
  return o;
}

inline std::vector<SceneObject> sample_objects(Rng& rng, std::size_t max_objects) {
  std::size_t n = 1 + rng.uniform_int(max_objects);
  std::vector<std::size_t> positions = {0, 1, 2};
  rng.shuffle(positions);
  std::vector<SceneObject> objs;
  for (std::size_t i = 0; i < n; ++i) objs.push_back(sample_object(rng, positions[i]));
  return objs;
}

// Annotation matrix for one view: project each cell's one-hot, add noise.
inline Tensor encode_view(const std::vector<SceneObject>& objects,
                          const std::vector<std::size_t>& mask,
                          const Tensor& projection, double noise_std, Rng& rng) {
  std::vector<const SceneObject*> cells;
  if (mask_has(mask, kAttrPosition)) {
    cells.assign(3, nullptr);
    for (const auto& o : objects) cells[o.position] = &o;
  } else {
    for (const auto& o : objects) cells.push_back(&o);
  }
  std::size_t dim = projection.rows(), in_dim = projection.cols();
  Tensor out(Shape{cells.size(), dim});
  for (std::size_t c = 0; c < cells.size(); ++c) {
    std::vector<double> x = cell_one_hot(cells[c], mask);
    if (x.size() != in_dim) throw ShapeError("projection width mismatch");
    for (std::size_t r = 0; r < dim; ++r) {
      double acc = 0.0;
      for (std::size_t k = 0; k < in_dim; ++k) acc += projection.at(r * in_dim + k) * x[k];
      out.at(c * dim + r) = acc + noise_std * rng.normal();
    }
  }
  return out;
}

// --- caption grammar -------------------------------------------------------

inline const std::string& pick(Rng& rng, const std::vector<std::string>& words) {
  return words[rng.uniform_int(words.size())];
}

inline std::string size_word(Rng& rng, std::size_t size) {
  static const std::vector<std::string> small = {"small", "tiny", "little"};
  static const std::vector<std::string> big = {"big", "large", "huge"};
  return pick(rng, size == 0 ? small : big);
}

inline std::string shape_word(const SceneObject& o) {
  return attribute_values()[kAttrShape][o.shape];
}
inline std::string color_word(const SceneObject& o) {
  return attribute_values()[kAttrColor][o.color];
}
inline std::string position_word(const SceneObject& o) {
  return attribute_values()[kAttrPosition][o.position];
}

inline void push_words(std::vector<std::string>& out, const std::string& phrase) {
  std::istringstream ss(phrase);
  std::string w;
  while (ss >> w) out.push_back(w);
}

// "a small red circle" (with size) or "a red circle".
inline std::string object_phrase(Rng& rng, const SceneObject& o, bool with_size) {
  std::string s = "a ";
  if (with_size) s += size_word(rng, o.size) + " ";
  return s + color_word(o) + " " + shape_word(o);
}

inline std::string location_phrase(Rng& rng, const SceneObject& o) {
  static const std::vector<std::string> preps = {"at", "on", "near"};
  return pick(rng, preps) + " the " + position_word(o);
}

inline std::vector<std::string> make_caption(Rng& rng,
                                             const std::vector<SceneObject>& objects) {
  static const std::vector<std::string> openers = {
      "there is", "we see", "the image shows", "the picture shows",
      "the scene contains", "this view shows"};
  static const std::vector<std::string> verbs = {"sits", "stands", "rests", "lies",
                                                 "appears"};
  std::vector<std::string> toks;
  std::size_t n = objects.size();
  if (n == 1) {
    const SceneObject& o = objects[0];
    if (rng.bernoulli(0.5)) {
      // "the image shows a small red circle at the left"
      push_words(toks, pick(rng, openers));
      push_words(toks, object_phrase(rng, o, true));
      push_words(toks, location_phrase(rng, o));
    } else {
      // "a small red circle sits at the left"
      push_words(toks, object_phrase(rng, o, true));
      push_words(toks, pick(rng, verbs));
      push_words(toks, location_phrase(rng, o));
    }
  } else if (n == 2) {
    if (rng.bernoulli(0.5)) {
      // "a small red circle at the left and a big blue star at the right"
      push_words(toks, object_phrase(rng, objects[0], true));
      push_words(toks, location_phrase(rng, objects[0]));
      toks.push_back("and");
      push_words(toks, object_phrase(rng, objects[1], true));
      push_words(toks, location_phrase(rng, objects[1]));
    } else {
      // "two shapes a small red circle and a big blue star"
      push_words(toks, "two shapes");
      push_words(toks, object_phrase(rng, objects[0], true));
      toks.push_back("and");
      push_words(toks, object_phrase(rng, objects[1], true));
    }
  } else {
    if (rng.bernoulli(0.5)) {
      // "red circle left and blue star right and green square center"
      for (std::size_t i = 0; i < n; ++i) {
        if (i) toks.push_back("and");
        push_words(toks, color_word(objects[i]) + " " + shape_word(objects[i]) + " " +
                             position_word(objects[i]));
      }
    } else {
      // "three shapes a red circle a blue star and a green square"
      push_words(toks, "three shapes");
      for (std::size_t i = 0; i < n; ++i) {
        if (i + 1 == n) toks.push_back("and");
        push_words(toks, object_phrase(rng, objects[i], false));
      }
    }
  }
  if (toks.size() > 16) throw ValueError("caption grammar exceeded sixteen tokens");
  return toks;
}

inline Scene make_scene(Rng& rng, const GeneratorConfig& cfg,
                        const std::vector<std::vector<std::size_t>>& masks,
                        const std::vector<Tensor>& projections) {
  Scene s;
  s.objects = sample_objects(rng, cfg.max_objects);
  for (std::size_t m = 0; m < cfg.views; ++m)
    s.views.push_back(encode_view(s.objects, masks[m], projections[m], cfg.noise_std, rng));
  for (std::size_t j = 0; j < cfg.captions_per_scene; ++j)
    s.captions.push_back(make_caption(rng, s.objects));
  return s;
}

}  // namespace detail

inline Dataset generate_dataset(const GeneratorConfig& cfg) {
  cfg.validate();
  Dataset ds;
  ds.config = cfg;
  ds.info_masks = view_info_masks(cfg.views);
  Rng rng(cfg.seed);
  for (std::size_t m = 0; m < cfg.views; ++m) {
    std::size_t in_dim = detail::mask_input_dim(ds.info_masks[m]);
    Tensor proj(Shape{cfg.feature_dim, in_dim});
    double scale = 1.0 / std::sqrt(static_cast<double>(in_dim));
    for (std::size_t i = 0; i < proj.size(); ++i) proj.at(i) = scale * rng.normal();
    ds.projections.push_back(proj);
  }
  auto fill = [&](std::vector<Scene>& out, std::size_t count) {
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i)
      out.push_back(detail::make_scene(rng, cfg, ds.info_masks, ds.projections));
  };
  fill(ds.train, cfg.train_scenes);
  fill(ds.val, cfg.val_scenes);
  fill(ds.test, cfg.test_scenes);
  return ds;
}

// Flat list of (scene index, caption index) pairs for one split.
inline std::vector<std::pair<std::size_t, std::size_t>> example_index(
    const std::vector<Scene>& scenes) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t i = 0; i < scenes.size(); ++i)
    for (std::size_t j = 0; j < scenes[i].captions.size(); ++j) out.emplace_back(i, j);
  return out;
}

inline std::vector<std::vector<std::string>> train_captions(const Dataset& ds) {
  std::vector<std::vector<std::string>> out;
  for (const auto& s : ds.train)
    for (const auto& c : s.captions) out.push_back(c);
  return out;
}

// --- persistence ------------------------------------------------------------

namespace detail {

inline std::string join_tokens(const std::vector<std::string>& toks) {
  std::string s;
  for (std::size_t i = 0; i < toks.size(); ++i) {
    if (i) s += ' ';
    s += toks[i];
  }
  return s;
}

inline std::vector<std::string> split_tokens(const std::string& s) {
  std::istringstream ss(s);
  std::vector<std::string> out;
  std::string w;
  while (ss >> w) out.push_back(w);
  return out;
}

inline void save_split(RecordWriter& w, const std::string& name,
                       const std::vector<Scene>& scenes) {
  w.u64(name + ".count", scenes.size());
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    std::string base = name + std::to_string(i);
    std::vector<std::uint64_t> objs;
    for (const auto& o : scenes[i].objects) {
      objs.push_back(o.shape);
      objs.push_back(o.color);
      objs.push_back(o.size);
      objs.push_back(o.position);
    }
    w.u64s(base + ".objects", objs);
    for (std::size_t m = 0; m < scenes[i].views.size(); ++m)
      w.tensor(base + ".view" + std::to_string(m), scenes[i].views[m]);
    w.u64(base + ".captions", scenes[i].captions.size());
    for (std::size_t j = 0; j < scenes[i].captions.size(); ++j)
      w.str(base + ".caption" + std::to_string(j), join_tokens(scenes[i].captions[j]));
  }
}

inline std::vector<Scene> load_split(const RecordReader& r, const std::string& name,
                                     std::size_t views) {
  std::size_t count = static_cast<std::size_t>(r.u64(name + ".count"));
  std::vector<Scene> scenes(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::string base = name + std::to_string(i);
    auto objs = r.u64s(base + ".objects");
    if (objs.size() % 4) throw IoError("malformed object record in '" + base + "'");
    for (std::size_t k = 0; k < objs.size(); k += 4) {
      SceneObject o;
      o.shape = static_cast<std::size_t>(objs[k]);
      o.color = static_cast<std::size_t>(objs[k + 1]);
      o.size = static_cast<std::size_t>(objs[k + 2]);
      o.position = static_cast<std::size_t>(objs[k + 3]);
      scenes[i].objects.push_back(o);
    }
    for (std::size_t m = 0; m < views; ++m)
      scenes[i].views.push_back(r.tensor(base + ".view" + std::to_string(m)));
    std::size_t ncap = static_cast<std::size_t>(r.u64(base + ".captions"));
    for (std::size_t j = 0; j < ncap; ++j)
      scenes[i].captions.push_back(split_tokens(r.str(base + ".caption" + std::to_string(j))));
  }
  return scenes;
}

}  // namespace detail

inline void save_dataset(const Dataset& ds, const std::string& path) {
  RecordWriter w(path);
  w.str("format", "dataset");
  w.u64("config.views", ds.config.views);
  w.u64("config.feature_dim", ds.config.feature_dim);
  w.u64("config.captions_per_scene", ds.config.captions_per_scene);
  w.u64("config.max_objects", ds.config.max_objects);
  w.f64("config.noise_std", ds.config.noise_std);
  w.u64("config.seed", ds.config.seed);
  w.u64("config.train_scenes", ds.config.train_scenes);
  w.u64("config.val_scenes", ds.config.val_scenes);
  w.u64("config.test_scenes", ds.config.test_scenes);
  for (std::size_t m = 0; m < ds.config.views; ++m) {
    std::vector<std::uint64_t> mask(ds.info_masks[m].begin(), ds.info_masks[m].end());
    w.u64s("mask" + std::to_string(m), mask);
    w.tensor("projection" + std::to_string(m), ds.projections[m]);
  }
  detail::save_split(w, "train", ds.train);
  detail::save_split(w, "val", ds.val);
  detail::save_split(w, "test", ds.test);
  w.close();
}

inline Dataset load_dataset(const std::string& path) {
  RecordReader r(path);
  if (!r.has("format") || r.str("format") != "dataset")
    throw IoError("'" + path + "' is not a dataset file");
  Dataset ds;
  ds.config.views = static_cast<std::size_t>(r.u64("config.views"));
  ds.config.feature_dim = static_cast<std::size_t>(r.u64("config.feature_dim"));
  ds.config.captions_per_scene =
      static_cast<std::size_t>(r.u64("config.captions_per_scene"));
  ds.config.max_objects = static_cast<std::size_t>(r.u64("config.max_objects"));
  ds.config.noise_std = r.f64("config.noise_std");
  ds.config.seed = r.u64("config.seed");
  ds.config.train_scenes = static_cast<std::size_t>(r.u64("config.train_scenes"));
  ds.config.val_scenes = static_cast<std::size_t>(r.u64("config.val_scenes"));
  ds.config.test_scenes = static_cast<std::size_t>(r.u64("config.test_scenes"));
  for (std::size_t m = 0; m < ds.config.views; ++m) {
    auto mask = r.u64s("mask" + std::to_string(m));
    ds.info_masks.emplace_back(mask.begin(), mask.end());
    ds.projections.push_back(r.tensor("projection" + std::to_string(m)));
  }
  ds.train = detail::load_split(r, "train", ds.config.views);
  ds.val = detail::load_split(r, "val", ds.config.views);
  ds.test = detail::load_split(r, "test", ds.config.views);
  return ds;
}

}  // namespace rfnet
