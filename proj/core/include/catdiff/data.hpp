#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "catdiff/config.hpp"
#include "catdiff/tensor.hpp"

namespace catdiff {

inline constexpr std::array<std::string_view, 8> kClassNames = {"circle", "square", "triangle", "ring",
                                                                 "cross",  "star",   "bar",      "diamond"};

enum class ShapeClass : std::uint32_t { circle, square, triangle, ring, cross, star, bar, diamond };

/// One sample: image [3×R×R] in [0,1], binary masks [1×R×R], label, caption.
struct Scene {
  Tensor image;
  Tensor seg_mask;
  Tensor bbox_mask;
  std::uint32_t class_id = 0;
  std::string caption;
};

enum class Split { train, test };
enum class MaskKind { seg, bbox };

MaskKind parse_mask_kind(std::string_view s);
std::string_view to_string(MaskKind kind);
std::string_view to_string(Split split);

inline const Tensor& scene_mask(const Scene& s, MaskKind kind) {
  return kind == MaskKind::seg ? s.seg_mask : s.bbox_mask;
}

struct Corpus {
  std::vector<Scene> scenes;
  Split split = Split::train;
  std::uint64_t seed = 0;
  std::vector<std::string> classes;
};

struct SceneConfig {
  std::size_t resolution = 32;
  std::size_t classes = 8;
  double min_area = 0.05;
  double max_area = 0.40;

  static SceneConfig from(const Config& cfg);
};

/// Geometry of one foreground shape. `scale` is the shape extent as a
/// fraction of the image side; centre is in pixel units.
struct ShapeParams {
  double cx = 0.0;
  double cy = 0.0;
  double scale = 0.5;
  bool vertical = false;
};

/// Binary silhouette [1×R×R]. A pixel is set when its centre lies inside the
/// shape. Squares are axis-aligned with side round(scale·R), anchored at
/// the integer corner nearest to the requested centre.
Tensor rasterize_shape(ShapeClass shape, const ShapeParams& params, std::size_t resolution);

/// Deterministic in (seed, class_id, config). Throws ContractError for an
/// out-of-range class and ConfigError when no placement meets the area
/// bounds within 100 attempts.
Scene generate_scene(std::uint64_t seed, std::uint32_t class_id, const SceneConfig& config);

/// Tightest axis-aligned rectangle covering a nonempty mask.
Tensor bbox_from_seg(const Tensor& seg_mask);

/// [1×R×R] pixel mask -> [N] patch mask; a patch is set if any covered pixel is.
Tensor mask_to_patch_grid(const Tensor& mask, std::size_t patch);

/// Class-balanced train/test corpora (scene i has class i mod K).
std::pair<Corpus, Corpus> build_corpus(std::uint64_t seed, std::size_t n_train, std::size_t n_test,
                                       const SceneConfig& config);

// On-disk dataset: manifest.txt plus scene_<idx>.bin, train indices first.
void write_scene(const std::filesystem::path& path, const Scene& scene);
Scene read_scene(const std::filesystem::path& path);
void write_dataset(const std::filesystem::path& dir, const Corpus& train, const Corpus& test,
                   const SceneConfig& config, std::size_t patch);

struct Dataset {
  Corpus train;
  Corpus test;
  SceneConfig scene_config;
  std::size_t patch = 0;
};
Dataset read_dataset(const std::filesystem::path& dir);

}  // namespace catdiff
