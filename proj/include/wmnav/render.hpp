#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "wmnav/world.hpp"

namespace wmnav {

enum class StyleFamily : std::uint8_t { Train, Holdout };

std::string family_name(StyleFamily f);
StyleFamily family_from_name(const std::string& s);

/// Appearance parameters for first-person rendering. Palettes and textures
/// are split into disjoint train and holdout sets.
struct RenderStyle {
  int palette = 0;
  int texture = 0;
  float gain = 1.0f;
  float hue_shift = 0.0f;  // radians around the grey axis
  float noise = 0.0f;      // per-pixel noise std, in [0,1] colour units
  StyleFamily family = StyleFamily::Train;
  float camera_height_offset = 0.0f;
  float camera_pitch_offset = 0.0f;  // radians, positive looks further down

  friend bool operator==(const RenderStyle&, const RenderStyle&) = default;
};

inline constexpr int kTrainPalettes = 6;
inline constexpr int kHoldoutPalettes = 3;
bool palette_is_holdout(int palette);
bool texture_is_holdout(int texture);

/// Randomised style from the given family. Holdout styles also perturb the camera mount.
RenderStyle sample_style(StyleFamily family, Rng& rng);

struct CameraSpec {
  int width = 64, height = 64;
  double hfov_rad = kPi / 2;
  double height_m = 3.0;
  double pitch_rad = 0.5;
  double far_m = 45.0;

  double focal() const;
  /// Image row of the horizon (ray parallel to the ground), fractional.
  double horizon_row(double pitch) const;
};

/// RGB raster, 8 bits per channel, row-major HxWx3.
struct FpvImage {
  int height = 64, width = 64;
  std::vector<std::uint8_t> rgb;
  friend bool operator==(const FpvImage&, const FpvImage&) = default;
};

/// Projective ground-plane render. Pixels above the horizon are sky; ground
/// pixels are coloured by the road mask at the ray/ground intersection.
FpvImage render_fpv(const TileMap& map, const RobotPose& pose, const RenderStyle& style, std::uint64_t seed,
                    const CameraSpec& cam = {});

/// Palette colours after style gain and hue shift, before texture and noise.
struct StyledPalette {
  std::array<float, 3> road, ground, sky_top, sky_horizon;
};
StyledPalette styled_palette(const RenderStyle& style);

}  // namespace wmnav
