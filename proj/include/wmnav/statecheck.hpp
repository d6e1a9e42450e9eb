#pragma once

// Anchor state checking (nearest anchor latent) and temporal state checking
// (confidence gate against the memory prediction).

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "wmnav/vae.hpp"

namespace wmnav {

inline constexpr int kDefaultAnchorCount = 1439;

struct AnchorSet {
  Tensor latents;                  // [n, 32]
  std::vector<RoadClass> labels;   // per anchor
  std::vector<std::int64_t> ids;   // source BEV id, unique
  Tensor unit;                     // rows of `latents` scaled to unit length

  int size() const { return static_cast<int>(labels.size()); }
  const float* row(int i) const { return latents.data() + static_cast<std::size_t>(i) * kLatentDim; }
  std::vector<float> latent(int i) const { return {row(i), row(i) + kLatentDim}; }
  /// Validates invariants and fills `unit`. Throws ContractError.
  void finalize();
};

/// Distinct BEV views stratified across the six classes, embedded by the VAE mean.
AnchorSet build_anchor_set(BevVae& vae, int count, std::uint64_t seed);

/// Writes <dir>/anchors.json and <dir>/anchors.bin.
void write_anchor_set(const AnchorSet& s, const std::filesystem::path& dir);
/// Throws MissingFileError, FormatError and IntegrityError (byte length).
AnchorSet read_anchor_set(const std::filesystem::path& dir);

enum class ConfidenceMetric : std::uint8_t { Cosine, NegDistance };
std::string metric_name(ConfidenceMetric m);
ConfidenceMetric metric_from_name(const std::string& s);

struct StateCheckConfig {
  float rho = 0.0f;
  ConfidenceMetric metric = ConfidenceMetric::Cosine;
  /// Search on unit-normalised vectors. Used with cosine-trained encoders,
  /// whose output scale carries no information.
  bool unit_search = false;
  void validate() const;
};

struct AscResult {
  std::vector<float> z_bar;  // the chosen anchor latent, exactly
  float confidence = 0;
  int index = -1;
  float distance = 0;        // search distance to the chosen anchor
};

/// Nearest anchor by Euclidean distance; ties go to the lowest index.
/// Confidence is computed from the pre-replacement z against the chosen anchor.
AscResult asc(const std::vector<float>& z, const AnchorSet& anchors, ConfidenceMetric metric, bool unit_search = false);
/// Index of the nearest anchor for each row of Z [N,32].
std::vector<int> nearest_anchors(const Tensor& z, const AnchorSet& anchors, bool unit_search = false);
float confidence(const std::vector<float>& z, const float* anchor, ConfidenceMetric metric);

struct TscResult {
  std::vector<float> z;
  bool accepted = true;  // false when the memory prediction replaced z_bar
};

/// tau >= rho keeps z_bar; otherwise the previous prediction, if any.
TscResult tsc(const std::vector<float>& z_bar, float tau, const std::optional<std::vector<float>>& z_prev, float rho);

/// q-th percentile (linear interpolation, q in [0,100]) of a confidence sample.
float calibrate_rho(std::vector<float> confidences, double q = 5.0);

}  // namespace wmnav
