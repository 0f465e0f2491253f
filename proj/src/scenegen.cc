#include "tstereo/scenegen.h"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

#include "tstereo/rng.h"

namespace tstereo {

void CameraRig::validate() const {
  if (!(focal_px > 0.0)) throw std::invalid_argument("focal_px must be > 0");
  if (!(baseline_m > 0.0))
    throw std::invalid_argument("baseline_m must be > 0");
  if (width <= 0 || height <= 0)
    throw std::invalid_argument("rig image size must be positive");
  if (!(disparity_min > 0.0 && disparity_min < disparity_max &&
        disparity_max < width))
    throw std::invalid_argument(
        "rig requires 0 < disparity_min < disparity_max < width");
}

double disparity_to_depth(double disparity_px, const CameraRig& rig) {
  if (!(disparity_px > 0.0))
    throw std::domain_error("disparity must be positive");
  return rig.focal_px * rig.baseline_m / disparity_px;
}

double depth_to_disparity(double depth_m, const CameraRig& rig) {
  if (!(depth_m > 0.0)) throw std::domain_error("depth must be positive");
  return rig.focal_px * rig.baseline_m / depth_m;
}

std::uint8_t material_code(Material m) {
  switch (m) {
    case Material::kBackground: return 0;
    case Material::kDiffuse: return 64;
    case Material::kTransparent: return 128;
    case Material::kBoundary: return 255;
  }
  return 0;
}

Material material_from_code(std::uint8_t code) {
  switch (code) {
    case 0: return Material::kBackground;
    case 64: return Material::kDiffuse;
    case 128: return Material::kTransparent;
    case 255: return Material::kBoundary;
  }
  throw std::invalid_argument("unknown material code " + std::to_string(code));
}

const char* material_name(Material m) {
  switch (m) {
    case Material::kBackground: return "background";
    case Material::kDiffuse: return "diffuse";
    case Material::kTransparent: return "transparent";
    case Material::kBoundary: return "boundary";
  }
  return "?";
}

namespace {

double lattice(std::uint64_t seed, long ix, long iy) {
  std::uint64_t h = mix_seed(seed, static_cast<std::uint64_t>(ix),
                             static_cast<std::uint64_t>(iy));
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

double fade(double t) { return t * t * (3.0 - 2.0 * t); }

double octave_noise(std::uint64_t seed, double x, double y, double cell) {
  const double gx = x / cell;
  const double gy = y / cell;
  const double fx = std::floor(gx);
  const double fy = std::floor(gy);
  const long ix = static_cast<long>(fx);
  const long iy = static_cast<long>(fy);
  const double tx = fade(gx - fx);
  const double ty = fade(gy - fy);
  const double v00 = lattice(seed, ix, iy);
  const double v10 = lattice(seed, ix + 1, iy);
  const double v01 = lattice(seed, ix, iy + 1);
  const double v11 = lattice(seed, ix + 1, iy + 1);
  const double top = v00 + (v10 - v00) * tx;
  const double bottom = v01 + (v11 - v01) * tx;
  return top + (bottom - top) * ty;
}

}  // namespace

double value_noise(std::uint64_t seed, double x, double y,
                   const TextureParams& params) {
  double sum = 0.0;
  double norm = 0.0;
  double amplitude = 1.0;
  double cell = params.base_cell;
  for (int k = 0; k < params.octaves; ++k) {
    sum += amplitude * octave_noise(mix_seed(seed, 0x7e57u, k), x, y, cell);
    norm += amplitude;
    amplitude *= params.persistence;
    cell *= 0.5;
  }
  const double v = norm > 0.0 ? sum / norm : 0.5;
  return std::clamp(0.5 + params.contrast * (v - 0.5), 0.0, 1.0);
}

bool ObjectSpec::contains(double x, double y) const {
  const double dx = (x - center_x) / half_width;
  const double dy = (y - center_y) / half_height;
  if (shape == Shape::kRectangle) return std::abs(dx) <= 1.0 && std::abs(dy) <= 1.0;
  return dx * dx + dy * dy <= 1.0;
}

void SceneConfig::validate() const {
  rig.validate();
  auto in_range = [&](double d) {
    return d >= rig.disparity_min && d <= rig.disparity_max;
  };
  if (!objects.empty()) {
    if (!in_range(fixed_background_disparity))
      throw std::invalid_argument("background disparity outside rig range");
    for (const auto& o : objects) {
      if (!in_range(o.disparity))
        throw std::invalid_argument("object disparity " +
                                    std::to_string(o.disparity) +
                                    " outside rig range");
    }
  } else {
    if (!in_range(background_disparity_min) ||
        !in_range(background_disparity_max) ||
        background_disparity_min > background_disparity_max)
      throw std::invalid_argument("background disparity outside rig range");
    const double lo = object_disparity_min - view_disparity_jitter;
    const double hi = object_disparity_max + view_disparity_jitter;
    if (!in_range(lo) || !in_range(hi) ||
        object_disparity_min > object_disparity_max)
      throw std::invalid_argument("object disparities exceed rig range");
    if (num_diffuse < 0 || num_transparent < 0)
      throw std::invalid_argument("negative object count");
    if (num_diffuse > 0 && diffuse_classes.empty())
      throw std::invalid_argument("no diffuse classes configured");
    if (num_transparent > 0 && transparent_classes.empty())
      throw std::invalid_argument("no transparent classes configured");
    if (!(object_half_size_min > 0.0 &&
          object_half_size_min <= object_half_size_max))
      throw std::invalid_argument("bad object size range");
  }
  if (transparent_blend < 0.0 || transparent_blend > 1.0)
    throw std::invalid_argument("transparent_blend must be in [0, 1]");
  if (boundary_width < 0) throw std::invalid_argument("negative boundary width");
}

Material SceneSample::surface_material(int x, int y) const {
  const int id = object_id.at(x, y);
  if (id == 0) return Material::kBackground;
  return objects[static_cast<std::size_t>(id - 1)].material;
}

WarpResult warp_right_from_left(const Image& left, const Image& disparity,
                                const Image& fill) {
  if (!left.same_shape(disparity))
    throw std::invalid_argument("warp: image/disparity shape mismatch");
  const int w = left.width();
  const int h = left.height();
  WarpResult out{Image(w, h, 0.0), Image(w, h, kInvalidDisparity)};
  if (!fill.empty()) {
    if (!fill.same_shape(left))
      throw std::invalid_argument("warp: fill shape mismatch");
    out.image = fill;
  }
  auto write = [&](int x, int y, double value, double d) {
    if (x < 0 || x >= w) return;
    double& zbuf = out.writer_disparity.at(x, y);
    if (std::isnan(zbuf) || d > zbuf) {
      zbuf = d;
      out.image.at(x, y) = value;
    }
  };
  for (int y = 0; y < h; ++y) {
    for (int u = 0; u < w; ++u) {
      const double d0 = disparity.at(u, y);
      if (!is_valid(d0)) continue;
      const double t0 = u - d0;
      const double rounded = std::round(t0);
      if (std::abs(rounded - t0) < 1e-9)
        write(static_cast<int>(rounded), y, left.at(u, y), d0);
      if (u + 1 >= w) continue;
      const double d1 = disparity.at(u + 1, y);
      if (!is_valid(d1) || std::abs(d1 - d0) > 1.0) continue;
      const double t1 = (u + 1) - d1;
      const double lo = std::min(t0, t1);
      const double hi = std::max(t0, t1);
      for (int x = static_cast<int>(std::ceil(lo - 1e-9));
           x <= static_cast<int>(std::floor(hi + 1e-9)); ++x) {
        const double s = hi > lo ? std::clamp((x - t0) / (t1 - t0), 0.0, 1.0) : 0.0;
        const double value = (1.0 - s) * left.at(u, y) + s * left.at(u + 1, y);
        write(x, y, value, (1.0 - s) * d0 + s * d1);
      }
    }
  }
  return out;
}

WarpResult warp_right_from_left(const Image& left, const Image& disparity) {
  return warp_right_from_left(left, disparity, Image());
}

void quantize16(Image& image) {
  for (double& v : image.values())
    v = std::round(std::clamp(v, 0.0, 1.0) * 65535.0) / 65535.0;
}

Mask label_materials(const Grid<int>& object_id,
                     const std::vector<ObjectSpec>& objects,
                     int boundary_width) {
  const int w = object_id.width();
  const int h = object_id.height();
  Mask out(w, h, static_cast<unsigned char>(Material::kBackground));
  const int radius = (boundary_width + 1) / 2;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int id = object_id.at(x, y);
      bool boundary = false;
      for (int dy = -radius; dy <= radius && !boundary; ++dy) {
        for (int dx = -radius; dx <= radius; ++dx) {
          const int nx = x + dx;
          const int ny = y + dy;
          if (object_id.contains(nx, ny) && object_id.at(nx, ny) != id) {
            boundary = true;
            break;
          }
        }
      }
      Material m = Material::kBackground;
      if (boundary) {
        m = Material::kBoundary;
      } else if (id > 0) {
        m = objects[static_cast<std::size_t>(id - 1)].material;
      }
      out.at(x, y) = static_cast<unsigned char>(m);
    }
  }
  return out;
}

namespace {

struct Box {
  double x0, x1, y0, y1;
};

Box footprint(const ObjectSpec& o, double shift) {
  return {o.center_x - o.half_width - shift, o.center_x + o.half_width - shift,
          o.center_y - o.half_height, o.center_y + o.half_height};
}

bool boxes_overlap(const Box& a, const Box& b, double gap) {
  return a.x0 - gap <= b.x1 && b.x0 - gap <= a.x1 && a.y0 - gap <= b.y1 &&
         b.y0 - gap <= a.y1;
}

// Objects must not overlap in either view and must stay fully visible in
// the right image.
bool placement_ok(const std::vector<ObjectSpec>& objs, const CameraRig& rig,
                  int margin) {
  for (std::size_t i = 0; i < objs.size(); ++i) {
    const auto& o = objs[i];
    const Box l = footprint(o, 0.0);
    const Box r = footprint(o, o.disparity);
    if (l.x1 > rig.width - 1 - margin || l.y0 < margin ||
        l.y1 > rig.height - 1 - margin || r.x0 < margin ||
        l.x0 < rig.disparity_max + margin)
      return false;
    for (std::size_t j = 0; j < i; ++j) {
      const auto& p = objs[j];
      if (boxes_overlap(l, footprint(p, 0.0), margin) ||
          boxes_overlap(r, footprint(p, p.disparity), margin))
        return false;
    }
  }
  return true;
}

Shape class_shape(int class_id) {
  return class_id % 2 == 0 ? Shape::kRectangle : Shape::kEllipse;
}

// Transparent classes differ in the scale of their surface detail.
double class_surface_scale(int class_id) {
  return 1.0 + 0.15 * static_cast<double>(class_id % 4);
}

struct Layout {
  double background_disparity;
  std::vector<ObjectSpec> objects;
};

Layout random_layout(std::uint64_t seed, const SceneConfig& cfg) {
  const CameraRig& rig = cfg.rig;
  const int margin = cfg.boundary_width + 2;
  std::mt19937_64 rng(mix_seed(seed, 0x5ce4e));
  auto uniform = [&](double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
  };
  auto uniform_int = [&](long lo, long hi) {
    return std::uniform_int_distribution<long>(lo, hi)(rng);
  };

  Layout base;
  base.background_disparity =
      static_cast<double>(uniform_int(std::lround(cfg.background_disparity_min),
                                      std::lround(cfg.background_disparity_max)));
  const int total = cfg.num_diffuse + cfg.num_transparent;
  bool placed = false;
  for (int attempt = 0; attempt < 2000 && !placed; ++attempt) {
    base.objects.clear();
    for (int k = 0; k < total; ++k) {
      ObjectSpec o;
      const bool transparent = k >= cfg.num_diffuse;
      o.material = transparent ? Material::kTransparent : Material::kDiffuse;
      const auto& classes =
          transparent ? cfg.transparent_classes : cfg.diffuse_classes;
      o.class_id = classes[static_cast<std::size_t>(
          uniform_int(0, static_cast<long>(classes.size()) - 1))];
      o.shape = class_shape(o.class_id);
      o.half_width = uniform(cfg.object_half_size_min, cfg.object_half_size_max);
      o.half_height = uniform(cfg.object_half_size_min, cfg.object_half_size_max);
      o.disparity = static_cast<double>(
          uniform_int(std::lround(cfg.object_disparity_min),
                      std::lround(cfg.object_disparity_max)));
      o.center_x = uniform(rig.disparity_max + margin + o.half_width,
                           rig.width - 1 - margin - o.half_width);
      o.center_y = uniform(margin + o.half_height,
                           rig.height - 1 - margin - o.half_height);
      o.texture_seed = mix_seed(seed, 0x0b1ec7, static_cast<std::uint64_t>(k));
      base.objects.push_back(o);
    }
    placed = placement_ok(base.objects, rig, margin);
  }
  if (!placed)
    throw std::invalid_argument("could not place objects without overlap");

  // Views perturb the base layout; the same objects appear in every view.
  std::mt19937_64 view_rng(
      mix_seed(seed, 0x51e3, static_cast<std::uint64_t>(cfg.view_id)));
  auto vuniform = [&](double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(view_rng);
  };
  auto vint = [&](long lo, long hi) {
    return std::uniform_int_distribution<long>(lo, hi)(view_rng);
  };
  for (int attempt = 0; attempt < 200; ++attempt) {
    Layout view = base;
    view.background_disparity = std::clamp(
        base.background_disparity + static_cast<double>(vint(-1, 1)),
        cfg.background_disparity_min, cfg.background_disparity_max);
    for (auto& o : view.objects) {
      o.center_x += vuniform(-cfg.view_jitter_px, cfg.view_jitter_px);
      o.center_y += vuniform(-cfg.view_jitter_px, cfg.view_jitter_px);
      o.disparity += static_cast<double>(
          vint(-cfg.view_disparity_jitter, cfg.view_disparity_jitter));
      o.disparity = std::clamp(o.disparity, rig.disparity_min, rig.disparity_max);
    }
    if (placement_ok(view.objects, rig, margin)) return view;
  }
  return base;
}

}  // namespace

SceneSample generate_scene(std::uint64_t seed, const SceneConfig& cfg) {
  cfg.validate();
  const CameraRig& rig = cfg.rig;
  const int w = rig.width;
  const int h = rig.height;

  Layout layout;
  if (!cfg.objects.empty()) {
    layout.background_disparity = cfg.fixed_background_disparity;
    layout.objects = cfg.objects;
    for (std::size_t k = 0; k < layout.objects.size(); ++k) {
      if (layout.objects[k].texture_seed == 0)
        layout.objects[k].texture_seed = mix_seed(seed, 0x0b1ec7, k);
    }
  } else {
    layout = random_layout(seed, cfg);
  }

  SceneSample s;
  s.rig = rig;
  s.scene_id = static_cast<int>(seed);
  s.view_id = cfg.view_id;
  s.objects = layout.objects;
  s.background_disparity = layout.background_disparity;
  const double d_bg = layout.background_disparity;
  const std::uint64_t bg_seed = mix_seed(seed, 0xbac6);

  s.object_id = Grid<int>(w, h, 0);
  s.gt_disparity = Image(w, h, d_bg);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double best = -1.0;
      for (std::size_t k = 0; k < s.objects.size(); ++k) {
        const auto& o = s.objects[k];
        if (o.disparity > best && o.contains(x, y)) {
          best = o.disparity;
          s.object_id.at(x, y) = static_cast<int>(k) + 1;
          s.gt_disparity.at(x, y) = o.disparity;
        }
      }
    }
  }

  auto background = [&](double x, double y) {
    return value_noise(bg_seed, x, y, cfg.background_texture);
  };
  TextureParams through_params = cfg.background_texture;
  if (cfg.transparent_blend > 0.0 && cfg.refraction_octaves >= 0)
    through_params.octaves = std::min(through_params.octaves, cfg.refraction_octaves);
  auto seen_through = [&](double x, double y) {
    return value_noise(bg_seed, x, y, through_params);
  };
  auto object_texture = [&](const ObjectSpec& o, double x, double y) {
    return value_noise(o.texture_seed, x - o.center_x, y - o.center_y,
                       cfg.object_texture);
  };
  auto surface_texture = [&](const ObjectSpec& o, double x, double y) {
    TextureParams p = cfg.surface_texture;
    p.base_cell *= class_surface_scale(o.class_id);
    return value_noise(mix_seed(o.texture_seed, 0x5f), x - o.center_x,
                       y - o.center_y, p);
  };

  // Base layer: transparent objects show the background behind them and
  // are rendered into the right view with the background disparity.
  Image base(w, h);
  Image render_disparity(w, h);
  Image surface(w, h, 0.0);
  Image surface_disparity(w, h, kInvalidDisparity);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int id = s.object_id.at(x, y);
      if (id == 0) {
        base.at(x, y) = background(x, y);
        render_disparity.at(x, y) = d_bg;
        continue;
      }
      const auto& o = s.objects[static_cast<std::size_t>(id - 1)];
      if (o.material == Material::kTransparent) {
        base.at(x, y) = seen_through(x, y);
        render_disparity.at(x, y) = d_bg;
        surface.at(x, y) = surface_texture(o, x, y);
        surface_disparity.at(x, y) = o.disparity;
      } else {
        base.at(x, y) = object_texture(o, x, y);
        render_disparity.at(x, y) = o.disparity;
      }
    }
  }

  Image fill(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) fill.at(x, y) = background(x + d_bg, y);

  WarpResult right = warp_right_from_left(base, render_disparity, fill);
  s.left = base;
  s.right = right.image;

  const double alpha = cfg.transparent_blend;
  if (alpha > 0.0) {
    WarpResult surf = warp_right_from_left(surface, surface_disparity);
    for (std::size_t i = 0; i < s.left.size(); ++i) {
      if (is_valid(surface_disparity[i]))
        s.left[i] = (1.0 - alpha) * base[i] + alpha * surface[i];
      const double sd = surf.writer_disparity[i];
      if (!is_valid(sd)) continue;
      const double bd = right.writer_disparity[i];
      if (is_valid(bd) && bd > sd) continue;  // occluded by a nearer surface
      s.right[i] = (1.0 - alpha) * right.image[i] + alpha * surf.image[i];
    }
  }
  quantize16(s.left);
  quantize16(s.right);
  s.material = label_materials(s.object_id, s.objects, cfg.boundary_width);
  return s;
}

}  // namespace tstereo
