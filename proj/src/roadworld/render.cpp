#include "wmnav/render.hpp"

#include <algorithm>
#include <cmath>

#include "wmnav/error.hpp"

namespace wmnav {

namespace {

using Rgb = std::array<float, 3>;

struct Palette {
  Rgb road, ground, sky_top, sky_horizon;
};

// First kTrainPalettes entries are training palettes, the rest are held out.
const std::array<Palette, kTrainPalettes + kHoldoutPalettes> kPalettes{{
    {{0.30f, 0.30f, 0.32f}, {0.25f, 0.50f, 0.20f}, {0.30f, 0.50f, 0.90f}, {0.75f, 0.85f, 0.95f}},
    {{0.40f, 0.38f, 0.36f}, {0.55f, 0.45f, 0.30f}, {0.35f, 0.55f, 0.85f}, {0.85f, 0.85f, 0.90f}},
    {{0.22f, 0.22f, 0.25f}, {0.40f, 0.60f, 0.30f}, {0.20f, 0.30f, 0.60f}, {0.60f, 0.65f, 0.80f}},
    {{0.50f, 0.50f, 0.50f}, {0.30f, 0.40f, 0.25f}, {0.55f, 0.60f, 0.70f}, {0.80f, 0.80f, 0.80f}},
    {{0.35f, 0.33f, 0.40f}, {0.60f, 0.55f, 0.35f}, {0.45f, 0.65f, 0.95f}, {0.90f, 0.90f, 0.85f}},
    {{0.28f, 0.30f, 0.28f}, {0.20f, 0.35f, 0.15f}, {0.15f, 0.20f, 0.40f}, {0.50f, 0.50f, 0.60f}},
    // holdout: concrete under overcast sky, dusk, wet asphalt with dry grass
    {{0.58f, 0.57f, 0.55f}, {0.32f, 0.45f, 0.22f}, {0.62f, 0.64f, 0.68f}, {0.82f, 0.82f, 0.84f}},
    {{0.26f, 0.24f, 0.28f}, {0.45f, 0.35f, 0.28f}, {0.25f, 0.20f, 0.45f}, {0.90f, 0.60f, 0.45f}},
    {{0.18f, 0.19f, 0.21f}, {0.62f, 0.58f, 0.40f}, {0.40f, 0.55f, 0.75f}, {0.75f, 0.80f, 0.85f}},
}};

constexpr int kTrainTextures = 3;
constexpr int kHoldoutTextures = 2;

Rgb hue_rotate(const Rgb& c, float angle) {
  // Rodrigues rotation about the (1,1,1)/sqrt(3) axis.
  const float cs = std::cos(angle), sn = std::sin(angle);
  const float k = (1.0f - cs) / 3.0f, s = sn / std::sqrt(3.0f);
  return {c[0] * (cs + k) + c[1] * (k - s) + c[2] * (k + s), c[0] * (k + s) + c[1] * (cs + k) + c[2] * (k - s),
          c[0] * (k - s) + c[1] * (k + s) + c[2] * (cs + k)};
}

Rgb apply_style(const Rgb& c, const RenderStyle& st) {
  Rgb r = hue_rotate(c, st.hue_shift);
  for (float& v : r) v = std::clamp(v * st.gain, 0.0f, 1.0f);
  return r;
}

std::uint64_t mix(std::uint64_t x) {
  x ^= x >> 33;
  x *= 0xff51afd7ed558ccdULL;
  x ^= x >> 33;
  x *= 0xc4ceb9fe1a85ec53ULL;
  x ^= x >> 33;
  return x;
}

float hash_unit(std::int64_t a, std::int64_t b, std::uint64_t salt) {
  const std::uint64_t h = mix(static_cast<std::uint64_t>(a) * 0x9E3779B97F4A7C15ULL ^ mix(static_cast<std::uint64_t>(b) + salt));
  return static_cast<float>(h >> 40) / static_cast<float>(1ULL << 24);
}

// Multiplicative brightness of the ground texture at world point (x, y).
float texture_gain(int texture, double x, double y, bool road) {
  switch (texture) {
    case 0: return 1.0f;
    case 1: return 0.85f + 0.3f * hash_unit(static_cast<std::int64_t>(std::floor(x * 3)), static_cast<std::int64_t>(std::floor(y * 3)), road ? 1 : 2);
    case 2: return road ? 1.0f : 0.9f + 0.2f * static_cast<float>(std::sin(x * 1.7) > 0);
    case 3: return 0.8f + 0.4f * static_cast<float>((static_cast<long>(std::floor(x * 1.5)) + static_cast<long>(std::floor(y * 1.5))) & 1);
    case 4: return 0.85f + 0.15f * static_cast<float>(std::sin(x * 0.45) * std::cos(y * 0.35) + 0.5 * std::sin((x + y) * 1.1));
    default: return 1.0f;
  }
}

}  // namespace

std::string family_name(StyleFamily f) { return f == StyleFamily::Train ? "train" : "holdout"; }

StyleFamily family_from_name(const std::string& s) {
  if (s == "train") return StyleFamily::Train;
  if (s == "holdout") return StyleFamily::Holdout;
  throw FormatError("unknown style family '" + s + "'");
}

bool palette_is_holdout(int palette) { return palette >= kTrainPalettes; }
bool texture_is_holdout(int texture) { return texture >= kTrainTextures; }

RenderStyle sample_style(StyleFamily family, Rng& rng) {
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  RenderStyle s;
  s.family = family;
  if (family == StyleFamily::Train) {
    s.palette = static_cast<int>(rng() % kTrainPalettes);
    s.texture = static_cast<int>(rng() % kTrainTextures);
    s.gain = 0.75f + 0.5f * u(rng);
    s.hue_shift = -0.5f + 1.0f * u(rng);
    s.noise = 0.05f * u(rng);
  } else {
    s.palette = kTrainPalettes + static_cast<int>(rng() % kHoldoutPalettes);
    s.texture = kTrainTextures + static_cast<int>(rng() % kHoldoutTextures);
    s.gain = 0.7f + 0.6f * u(rng);
    s.hue_shift = -0.6f + 1.2f * u(rng);
    s.noise = 0.02f + 0.06f * u(rng);
    s.camera_height_offset = -0.15f + 0.3f * u(rng);
    s.camera_pitch_offset = -0.035f + 0.07f * u(rng);
  }
  return s;
}

double CameraSpec::focal() const { return 0.5 * width / std::tan(0.5 * hfov_rad); }

double CameraSpec::horizon_row(double pitch) const { return 0.5 * height - focal() * std::tan(pitch); }

StyledPalette styled_palette(const RenderStyle& style) {
  WMNAV_REQUIRE(style.palette >= 0 && style.palette < static_cast<int>(kPalettes.size()), "unknown palette id");
  const Palette& p = kPalettes[static_cast<std::size_t>(style.palette)];
  return {apply_style(p.road, style), apply_style(p.ground, style), apply_style(p.sky_top, style),
          apply_style(p.sky_horizon, style)};
}

FpvImage render_fpv(const TileMap& map, const RobotPose& pose, const RenderStyle& style, std::uint64_t seed,
                    const CameraSpec& cam) {
  WMNAV_REQUIRE(texture_is_holdout(style.texture) == (style.family == StyleFamily::Holdout) &&
                    palette_is_holdout(style.palette) == (style.family == StyleFamily::Holdout),
                "render_fpv: style components do not belong to its family");
  const StyledPalette pal = styled_palette(style);
  const double pitch = cam.pitch_rad + style.camera_pitch_offset;
  const double height = cam.height_m + style.camera_height_offset;
  const double f = cam.focal();
  const double cp = std::cos(pitch), sp = std::sin(pitch);
  const double hx = std::cos(pose.heading), hy = std::sin(pose.heading);
  const double rx = hy, ry = -hx;
  const double horizon = cam.horizon_row(pitch);

  FpvImage img{cam.height, cam.width, std::vector<std::uint8_t>(static_cast<std::size_t>(cam.height) * cam.width * 3)};
#pragma omp parallel for schedule(static) if (cam.width * cam.height >= 65536)
  for (int r = 0; r < cam.height; ++r) {
    const double yd = (r + 0.5 - 0.5 * cam.height) / f;  // image-down direction
    const double ray_down = yd * cp + sp, ray_fwd = cp - yd * sp;
    for (int c = 0; c < cam.width; ++c) {
      Rgb col;
      if (ray_down <= 1e-6) {
        const float a = static_cast<float>(std::clamp((horizon - r) / std::max(horizon, 1.0), 0.0, 1.0));
        for (int k = 0; k < 3; ++k) col[static_cast<std::size_t>(k)] = a * pal.sky_top[static_cast<std::size_t>(k)] + (1 - a) * pal.sky_horizon[static_cast<std::size_t>(k)];
      } else {
        const double t = height / ray_down;
        const double fwd = t * ray_fwd, right = t * (c + 0.5 - 0.5 * cam.width) / f;
        const double wx = pose.x + fwd * hx + right * rx, wy = pose.y + fwd * hy + right * ry;
        const bool road = map.on_road(wx, wy);
        const float g = texture_gain(style.texture, wx, wy, road);
        const Rgb& base = road ? pal.road : pal.ground;
        const float fog = static_cast<float>(std::clamp(fwd / cam.far_m, 0.0, 1.0));
        for (int k = 0; k < 3; ++k)
          col[static_cast<std::size_t>(k)] = (1 - fog) * std::clamp(base[static_cast<std::size_t>(k)] * g, 0.0f, 1.0f) + fog * pal.sky_horizon[static_cast<std::size_t>(k)];
      }
      std::uint8_t* px = img.rgb.data() + (static_cast<std::size_t>(r) * cam.width + c) * 3;
      for (int k = 0; k < 3; ++k) {
        float v = col[static_cast<std::size_t>(k)];
        if (style.noise > 0) {
          // Box-Muller on a per-pixel hash keeps the noise independent of iteration order.
          const float u1 = std::max(hash_unit(r * 4096 + c, k, seed), 1e-7f), u2 = hash_unit(c * 4096 + r, k + 7, seed);
          v += style.noise * std::sqrt(-2.0f * std::log(u1)) * std::cos(2.0f * static_cast<float>(kPi) * u2);
        }
        px[k] = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
      }
    }
  }
  return img;
}

}  // namespace wmnav
