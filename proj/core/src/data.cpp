#include "catdiff/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>

#include "catdiff/errors.hpp"
#include "catdiff/rng.hpp"
#include "catdiff/serialize.hpp"

namespace catdiff {

namespace {

constexpr char kSceneMagic[4] = {'C', 'A', 'T', 'D'};
constexpr std::uint32_t kSceneVersion = 1;
constexpr int kMaxPlacementAttempts = 100;

struct ScaleRange {
  double lo, hi;
};

// Extent ranges chosen so most draws land inside the default area bounds.
constexpr std::array<ScaleRange, 8> kScaleRanges = {{
    {0.30, 0.66},  // circle
    {0.25, 0.60},  // square
    {0.35, 0.85},  // triangle
    {0.32, 0.80},  // ring
    {0.32, 0.80},  // cross
    {0.40, 0.95},  // star
    {0.40, 0.95},  // bar
    {0.35, 0.85},  // diamond
}};

bool inside_polygon(double x, double y, const std::vector<std::pair<double, double>>& poly) {
  bool in = false;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    const auto [xi, yi] = poly[i];
    const auto [xj, yj] = poly[j];
    if ((yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi) in = !in;
  }
  return in;
}

std::vector<std::pair<double, double>> star_polygon(double cx, double cy, double outer) {
  std::vector<std::pair<double, double>> poly;
  const double inner = 0.45 * outer;
  for (int k = 0; k < 10; ++k) {
    const double r = (k % 2 == 0) ? outer : inner;
    const double a = -std::numbers::pi / 2 + k * std::numbers::pi / 5;
    poly.emplace_back(cx + r * std::cos(a), cy + r * std::sin(a));
  }
  return poly;
}

std::size_t mask_area(const Tensor& m) {
  std::size_t n = 0;
  for (float v : m.data()) n += v != 0.0f;
  return n;
}

void require_mask(const Tensor& mask, const char* op) {
  if (mask.rank() != 3 || mask.dim(0) != 1 || mask.dim(1) != mask.dim(2))
    throw ContractError(std::string(op) + ": expected a [1×R×R] mask, got " + shape_str(mask.shape()));
}

}  // namespace

MaskKind parse_mask_kind(std::string_view s) {
  if (s == "seg") return MaskKind::seg;
  if (s == "bbox") return MaskKind::bbox;
  throw ConfigError("mask kind must be 'seg' or 'bbox', got '" + std::string(s) + "'");
}

std::string_view to_string(MaskKind kind) { return kind == MaskKind::seg ? "seg" : "bbox"; }
std::string_view to_string(Split split) { return split == Split::train ? "train" : "test"; }

SceneConfig SceneConfig::from(const Config& cfg) {
  return SceneConfig{cfg.resolution, cfg.classes, cfg.min_area, cfg.max_area};
}

Tensor rasterize_shape(ShapeClass shape, const ShapeParams& p, std::size_t resolution) {
  const double R = static_cast<double>(resolution);
  const double extent = p.scale * R;
  const double half = extent / 2.0;
  Tensor mask({1, resolution, resolution});

  if (shape == ShapeClass::square) {
    const auto side = static_cast<std::size_t>(std::lround(p.scale * R));
    if (side == 0 || side > resolution) return mask;
    const long max_corner = static_cast<long>(resolution - side);
    const long r0 = std::clamp(std::lround(p.cy - static_cast<double>(side) / 2.0), 0L, max_corner);
    const long c0 = std::clamp(std::lround(p.cx - static_cast<double>(side) / 2.0), 0L, max_corner);
    for (std::size_t r = 0; r < side; ++r)
      for (std::size_t c = 0; c < side; ++c)
        mask[(static_cast<std::size_t>(r0) + r) * resolution + static_cast<std::size_t>(c0) + c] = 1.0f;
    return mask;
  }

  std::vector<std::pair<double, double>> star;
  if (shape == ShapeClass::star) star = star_polygon(p.cx, p.cy, half);

  for (std::size_t r = 0; r < resolution; ++r) {
    for (std::size_t c = 0; c < resolution; ++c) {
      const double x = static_cast<double>(c) + 0.5;
      const double y = static_cast<double>(r) + 0.5;
      const double dx = x - p.cx;
      const double dy = y - p.cy;
      bool in = false;
      switch (shape) {
        case ShapeClass::circle:
          in = dx * dx + dy * dy <= half * half;
          break;
        case ShapeClass::ring: {
          const double d2 = dx * dx + dy * dy;
          const double inner = 0.55 * half;
          in = d2 <= half * half && d2 >= inner * inner;
          break;
        }
        case ShapeClass::triangle: {
          const double top = p.cy - half;
          const double depth = y - top;
          in = depth >= 0.0 && depth <= extent && std::abs(dx) <= depth / 2.0;
          break;
        }
        case ShapeClass::cross: {
          const double arm = extent / 6.0;
          in = (std::abs(dx) <= arm && std::abs(dy) <= half) || (std::abs(dy) <= arm && std::abs(dx) <= half);
          break;
        }
        case ShapeClass::star:
          in = inside_polygon(x, y, star);
          break;
        case ShapeClass::bar: {
          const double thick = 0.15 * extent;
          in = p.vertical ? (std::abs(dx) <= thick && std::abs(dy) <= half)
                          : (std::abs(dy) <= thick && std::abs(dx) <= half);
          break;
        }
        case ShapeClass::diamond:
          in = std::abs(dx) + std::abs(dy) <= half;
          break;
        case ShapeClass::square:
          break;
      }
      if (in) mask[r * resolution + c] = 1.0f;
    }
  }
  return mask;
}

Scene generate_scene(std::uint64_t seed, std::uint32_t class_id, const SceneConfig& config) {
  if (class_id >= config.classes)
    throw ContractError("class id " + std::to_string(class_id) + " out of range for " +
                        std::to_string(config.classes) + " classes");
  const std::size_t R = config.resolution;
  const std::size_t plane = R * R;
  Rng rng(derive_seed(seed, class_id, 0x5CE1E));

  std::array<double, 3> c0{}, c1{};
  for (auto& v : c0) v = rng.uniform(0.15, 0.85);
  for (auto& v : c1) v = rng.uniform(0.15, 0.85);
  const double theta = rng.uniform(0.0, 2.0 * std::numbers::pi);

  std::array<double, 3> color{};
  for (int attempt = 0; attempt < 50; ++attempt) {
    for (auto& v : color) v = rng.uniform();
    double dist = 0.0;
    for (int ch = 0; ch < 3; ++ch) dist += std::abs(color[ch] - 0.5 * (c0[ch] + c1[ch]));
    if (dist / 3.0 >= 0.25) break;
  }

  const auto shape = static_cast<ShapeClass>(class_id);
  const auto [lo, hi] = kScaleRanges[class_id];
  const double min_px = config.min_area * static_cast<double>(plane);
  const double max_px = config.max_area * static_cast<double>(plane);
  Tensor seg;
  bool placed = false;
  for (int attempt = 0; attempt < kMaxPlacementAttempts && !placed; ++attempt) {
    ShapeParams p;
    p.scale = rng.uniform(lo, hi);
    const double half = 0.5 * p.scale * static_cast<double>(R);
    const double span = std::max(0.0, static_cast<double>(R) - 2.0 * half);
    p.cx = half + rng.uniform() * span;
    p.cy = half + rng.uniform() * span;
    p.vertical = rng.coin();
    seg = rasterize_shape(shape, p, R);
    const auto area = static_cast<double>(mask_area(seg));
    placed = area >= min_px && area <= max_px;
  }
  if (!placed)
    throw ConfigError("could not place a '" + std::string(kClassNames[class_id]) + "' within area bounds [" +
                      std::to_string(config.min_area) + ", " + std::to_string(config.max_area) + "] after " +
                      std::to_string(kMaxPlacementAttempts) + " attempts");

  Scene scene;
  scene.image = Tensor({3, R, R});
  for (std::size_t r = 0; r < R; ++r) {
    for (std::size_t c = 0; c < R; ++c) {
      const double x = (static_cast<double>(c) + 0.5) / static_cast<double>(R) - 0.5;
      const double y = (static_cast<double>(r) + 0.5) / static_cast<double>(R) - 0.5;
      const double t = std::clamp(0.5 + x * std::cos(theta) + y * std::sin(theta), 0.0, 1.0);
      const bool fg = seg[r * R + c] != 0.0f;
      for (std::size_t ch = 0; ch < 3; ++ch) {
        const double base = fg ? color[ch] : c0[ch] + (c1[ch] - c0[ch]) * t;
        const double noise = rng.uniform(-0.03, 0.03);
        scene.image[ch * plane + r * R + c] = static_cast<float>(std::clamp(base + noise, 0.0, 1.0));
      }
    }
  }
  scene.bbox_mask = bbox_from_seg(seg);
  scene.seg_mask = std::move(seg);
  scene.class_id = class_id;
  scene.caption = std::string(kClassNames[class_id]);
  return scene;
}

Tensor bbox_from_seg(const Tensor& seg_mask) {
  require_mask(seg_mask, "bbox_from_seg");
  const std::size_t R = seg_mask.dim(1);
  std::size_t rmin = R, rmax = 0, cmin = R, cmax = 0;
  bool any = false;
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t c = 0; c < R; ++c)
      if (seg_mask[r * R + c] != 0.0f) {
        any = true;
        rmin = std::min(rmin, r);
        rmax = std::max(rmax, r);
        cmin = std::min(cmin, c);
        cmax = std::max(cmax, c);
      }
  if (!any) throw ContractError("bbox_from_seg: mask is empty");
  Tensor box({1, R, R});
  for (std::size_t r = rmin; r <= rmax; ++r)
    for (std::size_t c = cmin; c <= cmax; ++c) box[r * R + c] = 1.0f;
  return box;
}

Tensor mask_to_patch_grid(const Tensor& mask, std::size_t patch) {
  require_mask(mask, "mask_to_patch_grid");
  const std::size_t R = mask.dim(1);
  if (patch == 0 || R % patch != 0)
    throw ConfigError("patch size " + std::to_string(patch) + " does not divide resolution " + std::to_string(R));
  const std::size_t G = R / patch;
  Tensor grid({G * G});
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t c = 0; c < R; ++c)
      if (mask[r * R + c] != 0.0f) grid[(r / patch) * G + c / patch] = 1.0f;
  return grid;
}

std::pair<Corpus, Corpus> build_corpus(std::uint64_t seed, std::size_t n_train, std::size_t n_test,
                                       const SceneConfig& config) {
  if (config.classes == 0) throw ConfigError("corpus needs at least one class");
  if (n_train < config.classes || n_test < config.classes)
    throw ConfigError("each split needs at least one scene per class");
  auto make = [&](Split split, std::size_t count) {
    Corpus corpus;
    corpus.split = split;
    corpus.seed = seed;
    for (std::size_t k = 0; k < config.classes; ++k) corpus.classes.emplace_back(kClassNames[k]);
    corpus.scenes.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
      const auto cls = static_cast<std::uint32_t>(i % config.classes);
      corpus.scenes.push_back(generate_scene(derive_seed(seed, static_cast<std::uint64_t>(split) + 1, i), cls, config));
    }
    return corpus;
  };
  return {make(Split::train, n_train), make(Split::test, n_test)};
}

void write_scene(const std::filesystem::path& path, const Scene& scene) {
  ByteWriter w;
  w.bytes(std::string_view(kSceneMagic, 4));
  w.u32(kSceneVersion);
  w.tensor(scene.image);
  w.tensor(scene.seg_mask);
  w.tensor(scene.bbox_mask);
  w.u32(scene.class_id);
  w.str(scene.caption);
  w.write_file(path);
}

Scene read_scene(const std::filesystem::path& path) {
  ByteReader r = ByteReader::from_file(path);
  if (r.bytes(4) != std::string_view(kSceneMagic, 4)) throw IoError("'" + path.string() + "' is not a scene file");
  if (const auto v = r.u32(); v != kSceneVersion)
    throw IoError("'" + path.string() + "' has unsupported scene version " + std::to_string(v));
  Scene s;
  s.image = r.tensor();
  s.seg_mask = r.tensor();
  s.bbox_mask = r.tensor();
  s.class_id = r.u32();
  s.caption = r.str();
  if (!r.at_end()) throw IoError("trailing bytes in '" + path.string() + "'");
  return s;
}

namespace {
std::string scene_filename(std::size_t idx) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "scene_%06zu.bin", idx);
  return buf;
}
}  // namespace

void write_dataset(const std::filesystem::path& dir, const Corpus& train, const Corpus& test,
                   const SceneConfig& config, std::size_t patch) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create dataset directory '" + dir.string() + "': " + ec.message());

  std::ostringstream manifest;
  manifest << "seed=" << train.seed << '\n';
  manifest << "resolution=" << config.resolution << '\n';
  manifest << "patch=" << patch << '\n';
  manifest << "classes=";
  for (std::size_t k = 0; k < train.classes.size(); ++k) manifest << (k ? "," : "") << train.classes[k];
  manifest << '\n';
  manifest << "counts=" << train.scenes.size() << ',' << test.scenes.size() << '\n';
  char area[96];
  std::snprintf(area, sizeof area, "min_area=%.17g\nmax_area=%.17g\n", config.min_area, config.max_area);
  manifest << area;

  const auto manifest_path = dir / "manifest.txt";
  std::ofstream out(manifest_path, std::ios::trunc | std::ios::binary);
  if (!out) throw IoError("cannot write '" + manifest_path.string() + "'");
  out << manifest.str();
  out.close();

  std::size_t idx = 0;
  for (const auto& s : train.scenes) write_scene(dir / scene_filename(idx++), s);
  for (const auto& s : test.scenes) write_scene(dir / scene_filename(idx++), s);
}

Dataset read_dataset(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.txt";
  std::ifstream in(manifest_path);
  if (!in) throw IoError("cannot read dataset manifest '" + manifest_path.string() + "'");
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw IoError("malformed manifest line '" + line + "'");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto get = [&](const std::string& key) {
    auto it = kv.find(key);
    if (it == kv.end()) throw IoError("manifest '" + manifest_path.string() + "' lacks key '" + key + "'");
    return it->second;
  };

  Dataset ds;
  const std::uint64_t seed = std::stoull(get("seed"));
  ds.scene_config.resolution = std::stoul(get("resolution"));
  ds.patch = std::stoul(get("patch"));
  ds.scene_config.min_area = std::stod(get("min_area"));
  ds.scene_config.max_area = std::stod(get("max_area"));
  std::vector<std::string> classes;
  {
    std::stringstream ss(get("classes"));
    std::string name;
    while (std::getline(ss, name, ',')) classes.push_back(name);
  }
  ds.scene_config.classes = classes.size();
  const std::string counts = get("counts");
  const auto comma = counts.find(',');
  if (comma == std::string::npos) throw IoError("manifest counts must be 'train,test'");
  const std::size_t n_train = std::stoul(counts.substr(0, comma));
  const std::size_t n_test = std::stoul(counts.substr(comma + 1));

  ds.train.split = Split::train;
  ds.test.split = Split::test;
  ds.train.seed = ds.test.seed = seed;
  ds.train.classes = ds.test.classes = classes;
  for (std::size_t i = 0; i < n_train + n_test; ++i) {
    Scene s = read_scene(dir / scene_filename(i));
    (i < n_train ? ds.train : ds.test).scenes.push_back(std::move(s));
  }
  return ds;
}

}  // namespace catdiff
