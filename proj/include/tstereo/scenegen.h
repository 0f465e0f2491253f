#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tstereo/image.h"

namespace tstereo {

struct CameraRig {
  double focal_px = 320.0;
  double baseline_m = 0.05;
  int width = 128;
  int height = 96;
  double disparity_min = 8.0;
  double disparity_max = 40.0;

  // Throws std::invalid_argument when the rig violates its invariants.
  void validate() const;
  bool operator==(const CameraRig&) const = default;
};

// z = focal * baseline / d. Both directions throw std::domain_error on
// nonpositive input.
double disparity_to_depth(double disparity_px, const CameraRig& rig);
double depth_to_disparity(double depth_m, const CameraRig& rig);

enum class Material : std::uint8_t {
  kBackground = 0,
  kDiffuse = 1,
  kTransparent = 2,
  kBoundary = 3,
};

// Label codes used when a material mask is written as an 8-bit PGM.
std::uint8_t material_code(Material m);
Material material_from_code(std::uint8_t code);
const char* material_name(Material m);

enum class Shape : std::uint8_t { kRectangle = 0, kEllipse = 1 };

// Multi-octave value noise. Octave k has cell size base_cell / 2^k and
// amplitude persistence^k; the sum is normalized to [0, 1].
struct TextureParams {
  int octaves = 4;
  double base_cell = 8.0;
  double persistence = 0.6;
  double contrast = 1.0;
};

double value_noise(std::uint64_t seed, double x, double y,
                   const TextureParams& params);

struct ObjectSpec {
  Material material = Material::kDiffuse;
  Shape shape = Shape::kRectangle;
  double center_x = 0.0;
  double center_y = 0.0;
  double half_width = 8.0;
  double half_height = 8.0;
  double disparity = 20.0;
  int class_id = 0;
  std::uint64_t texture_seed = 0;

  bool contains(double x, double y) const;
};

struct SceneConfig {
  CameraRig rig;
  int view_id = 0;

  double background_disparity_min = 14.0;
  double background_disparity_max = 18.0;
  double object_disparity_min = 22.0;
  double object_disparity_max = 34.0;
  int num_diffuse = 2;
  int num_transparent = 2;
  double object_half_size_min = 7.0;
  double object_half_size_max = 11.0;
  // Object classes drawn for random objects. Shape and surface texture
  // follow from the class id.
  std::vector<int> diffuse_classes{0, 1, 2, 3};
  std::vector<int> transparent_classes{0, 1, 2, 3};

  // 0 renders transparent objects as fully invisible (both views show the
  // background). Values in (0, 1] blend a surface layer that is consistent
  // with the object's own disparity.
  double transparent_blend = 0.0;
  // Background octaves still visible through a blended transparent object
  // (refraction smears fine detail). Negative keeps every octave.
  int refraction_octaves = -1;
  int boundary_width = 2;

  // Per-view perturbation of object placement and disparities.
  double view_jitter_px = 6.0;
  int view_disparity_jitter = 2;

  TextureParams background_texture{4, 8.0, 0.6, 1.0};
  TextureParams object_texture{4, 6.0, 0.6, 1.0};
  TextureParams surface_texture{2, 2.0, 0.7, 1.0};

  // When non-empty these objects are used verbatim (no view jitter) and the
  // background disparity is fixed_background_disparity.
  std::vector<ObjectSpec> objects;
  double fixed_background_disparity = 0.0;

  // Throws std::invalid_argument for configs outside the rig range.
  void validate() const;
};

struct SceneSample {
  Image left;
  Image right;
  Image gt_disparity;
  Mask material;           // Material enum values, boundary ring included
  Grid<int> object_id;     // 0 = background, k = objects[k - 1]
  std::vector<ObjectSpec> objects;
  double background_disparity = 0.0;
  CameraRig rig;
  int scene_id = 0;
  int view_id = 0;

  int width() const { return left.width(); }
  int height() const { return left.height(); }
  Material label(int x, int y) const {
    return static_cast<Material>(material.at(x, y));
  }
  // Material of the visible surface, ignoring the boundary label.
  Material surface_material(int x, int y) const;
};

SceneSample generate_scene(std::uint64_t seed, const SceneConfig& cfg);

struct WarpResult {
  Image image;
  Image writer_disparity;  // NaN where nothing was written
};

// Forward-warps the left image into the right view: right(u - d, v) =
// left(u, v). Neighboring left pixels on the same surface (|d step| <= 1)
// are joined so fractional shifts interpolate linearly. Overlaps keep the
// largest-disparity writer. NaN disparities do not write. Unwritten pixels
// take their value from `fill` (zeros when fill is empty).
WarpResult warp_right_from_left(const Image& left, const Image& disparity,
                                const Image& fill);
WarpResult warp_right_from_left(const Image& left, const Image& disparity);

// Rounds every value to the 16-bit grid k / 65535, clamped to [0, 1].
void quantize16(Image& image);

// Marks pixels within ceil(width / 2) (Chebyshev) of a pixel with a
// different object id as boundary.
Mask label_materials(const Grid<int>& object_id,
                     const std::vector<ObjectSpec>& objects,
                     int boundary_width);

}  // namespace tstereo
