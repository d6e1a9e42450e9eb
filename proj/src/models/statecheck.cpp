#include "wmnav/statecheck.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <string_view>
#include <unordered_set>

#include "json.hpp"
#include "wmnav/dataset.hpp"
#include "wmnav/error.hpp"

namespace wmnav {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

float sq_dist(const float* a, const float* b) {
  float s = 0;
  for (int k = 0; k < kLatentDim; ++k) {
    const float d = a[k] - b[k];
    s += d * d;
  }
  return s;
}

void normalize(float* v) {
  double s = 0;
  for (int k = 0; k < kLatentDim; ++k) s += static_cast<double>(v[k]) * v[k];
  const float n = static_cast<float>(std::sqrt(s + 1e-12));
  for (int k = 0; k < kLatentDim; ++k) v[k] /= n;
}

// Strict comparison keeps the lowest index on ties.
int nearest(const float* q, const Tensor& rows, int n, float* best_out) {
  int best = 0;
  float best_d = sq_dist(q, rows.data());
  for (int i = 1; i < n; ++i) {
    const float d = sq_dist(q, rows.data() + static_cast<std::size_t>(i) * kLatentDim);
    if (d < best_d) best_d = d, best = i;
  }
  if (best_out) *best_out = best_d;
  return best;
}

}  // namespace

void AnchorSet::finalize() {
  const int n = size();
  WMNAV_REQUIRE(n > 0, "anchor set is empty");
  WMNAV_REQUIRE(latents.shape() == Shape({n, kLatentDim}), "anchor latents must be [n,32]");
  WMNAV_REQUIRE(ids.size() == labels.size(), "anchor ids/labels length mismatch");
  WMNAV_REQUIRE(latents.all_finite(), "anchor latents must be finite");
  WMNAV_REQUIRE(std::set<std::int64_t>(ids.begin(), ids.end()).size() == ids.size(), "anchor ids must be unique");
  unit = latents;
  for (int i = 0; i < n; ++i) normalize(unit.data() + static_cast<std::size_t>(i) * kLatentDim);
}

AnchorSet build_anchor_set(BevVae& vae, int count, std::uint64_t seed) {
  WMNAV_REQUIRE(count > 0, "build_anchor_set: count must be positive");
  Rng rng(seed);
  std::array<int, kNumClasses> quota{};
  for (int c = 0; c < kNumClasses; ++c) quota[static_cast<std::size_t>(c)] = count / kNumClasses + (c < count % kNumClasses);
  ViewSpec spec;
  spec.with_fpv = false;
  spec.balanced = false;
  std::unordered_set<std::string> seen;
  std::vector<BevImage> bevs;
  AnchorSet s;
  std::int64_t next_id = 0;
  while (static_cast<int>(bevs.size()) < count) {
    for (auto& v : sample_views(64, StyleFamily::Train, rng, spec)) {
      const std::int64_t id = next_id++;
      int& q = quota[static_cast<std::size_t>(v.cls)];
      if (q == 0) continue;
      std::string key(v.bev.pixels.begin(), v.bev.pixels.end());
      if (!seen.insert(std::move(key)).second) continue;
      --q;
      s.labels.push_back(v.cls);
      s.ids.push_back(id);
      bevs.push_back(std::move(v.bev));
    }
  }
  std::vector<const BevImage*> ptrs;
  for (const auto& b : bevs) ptrs.push_back(&b);
  s.latents = vae.encode_mean(ptrs);
  s.finalize();
  return s;
}

void write_anchor_set(const AnchorSet& s, const fs::path& dir) {
  fs::create_directories(dir);
  json labels = json::array();
  for (RoadClass c : s.labels) labels.push_back(class_names()[static_cast<std::size_t>(c)]);
  const json manifest{{"format_version", "1"}, {"count", s.size()}, {"dim", kLatentDim},
                      {"labels", labels},      {"ids", s.ids},      {"data", "anchors.bin"}};
  std::ofstream(dir / "anchors.json") << manifest.dump(1) << "\n";
  std::ofstream bin(dir / "anchors.bin", std::ios::binary);
  bin.write(reinterpret_cast<const char*>(s.latents.data()), static_cast<std::streamsize>(s.latents.size() * sizeof(float)));
  if (!bin) throw Error("cannot write anchors to " + dir.string());
}

AnchorSet read_anchor_set(const fs::path& dir) {
  const fs::path mpath = dir / "anchors.json", bpath = dir / "anchors.bin";
  if (!fs::exists(mpath)) throw MissingFileError("missing anchor manifest " + mpath.string());
  if (!fs::exists(bpath)) throw MissingFileError("missing anchor data " + bpath.string());
  AnchorSet s;
  int count = 0;
  try {
    std::ifstream in(mpath);
    const json m = json::parse(in);
    if (m.at("format_version").get<std::string>() != "1") throw FormatError("unsupported anchor format in " + mpath.string());
    if (m.at("dim").get<int>() != kLatentDim) throw FormatError("anchor dim is not 32 in " + mpath.string());
    count = m.at("count").get<int>();
    for (const auto& l : m.at("labels")) s.labels.push_back(class_from_name(l.get<std::string>()));
    s.ids = m.at("ids").get<std::vector<std::int64_t>>();
  } catch (const json::exception& e) {
    throw FormatError("malformed anchor manifest " + mpath.string() + ": " + e.what());
  } catch (const ContractError& e) {
    throw FormatError("malformed anchor manifest " + mpath.string() + ": " + e.what());
  }
  if (count <= 0 || static_cast<int>(s.labels.size()) != count || static_cast<int>(s.ids.size()) != count)
    throw FormatError("anchor manifest count disagrees with its lists in " + mpath.string());
  const std::uintmax_t expect = static_cast<std::uintmax_t>(count) * kLatentDim * sizeof(float);
  if (fs::file_size(bpath) != expect)
    throw IntegrityError("anchor data " + bpath.string() + " has " + std::to_string(fs::file_size(bpath)) +
                         " bytes, expected " + std::to_string(expect));
  s.latents = Tensor({count, kLatentDim});
  std::ifstream bin(bpath, std::ios::binary);
  bin.read(reinterpret_cast<char*>(s.latents.data()), static_cast<std::streamsize>(expect));
  try {
    s.finalize();
  } catch (const ContractError& e) {
    throw IntegrityError(std::string("invalid anchor set: ") + e.what());
  }
  return s;
}

std::string metric_name(ConfidenceMetric m) { return m == ConfidenceMetric::Cosine ? "cosine" : "neg-distance"; }

ConfidenceMetric metric_from_name(const std::string& s) {
  if (s == "cosine") return ConfidenceMetric::Cosine;
  if (s == "neg-distance") return ConfidenceMetric::NegDistance;
  throw ContractError("unknown confidence metric '" + s + "'");
}

void StateCheckConfig::validate() const {
  if (metric == ConfidenceMetric::Cosine)
    WMNAV_REQUIRE(rho >= -1.0f && rho <= 1.0f, "cosine threshold must lie in [-1,1]");
  else
    WMNAV_REQUIRE(rho > 0.0f && rho <= 1.0f, "neg-distance threshold must lie in (0,1]");
}

float confidence(const std::vector<float>& z, const float* anchor, ConfidenceMetric metric) {
  if (metric == ConfidenceMetric::NegDistance)
    return 1.0f / (1.0f + std::sqrt(sq_dist(z.data(), anchor)));
  double dot = 0, nz = 0, na = 0;
  for (int k = 0; k < kLatentDim; ++k) {
    dot += static_cast<double>(z[static_cast<std::size_t>(k)]) * anchor[k];
    nz += static_cast<double>(z[static_cast<std::size_t>(k)]) * z[static_cast<std::size_t>(k)];
    na += static_cast<double>(anchor[k]) * anchor[k];
  }
  const double den = std::sqrt(nz * na);
  return den > 0 ? static_cast<float>(std::clamp(dot / den, -1.0, 1.0)) : 0.0f;
}

AscResult asc(const std::vector<float>& z, const AnchorSet& anchors, ConfidenceMetric metric, bool unit_search) {
  WMNAV_REQUIRE(anchors.size() > 0, "asc: empty anchor set");
  WMNAV_REQUIRE(z.size() == static_cast<std::size_t>(kLatentDim), "asc: latent must have 32 values");
  AscResult r;
  float d2 = 0;
  if (unit_search) {
    std::vector<float> q = z;
    normalize(q.data());
    r.index = nearest(q.data(), anchors.unit, anchors.size(), &d2);
  } else {
    r.index = nearest(z.data(), anchors.latents, anchors.size(), &d2);
  }
  r.distance = std::sqrt(d2);
  r.z_bar = anchors.latent(r.index);
  r.confidence = confidence(z, anchors.row(r.index), metric);
  return r;
}

std::vector<int> nearest_anchors(const Tensor& z, const AnchorSet& anchors, bool unit_search) {
  WMNAV_REQUIRE(anchors.size() > 0, "nearest_anchors: empty anchor set");
  WMNAV_REQUIRE(z.rank() == 2 && z.dim(1) == kLatentDim, "nearest_anchors: expected [N,32]");
  const int n = z.dim(0);
  std::vector<int> out(static_cast<std::size_t>(n));
#pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i) {
    std::array<float, kLatentDim> q;
    std::copy_n(z.data() + static_cast<std::size_t>(i) * kLatentDim, kLatentDim, q.begin());
    if (unit_search) normalize(q.data());
    out[static_cast<std::size_t>(i)] = nearest(q.data(), unit_search ? anchors.unit : anchors.latents, anchors.size(), nullptr);
  }
  return out;
}

TscResult tsc(const std::vector<float>& z_bar, float tau, const std::optional<std::vector<float>>& z_prev, float rho) {
  if (tau >= rho || !z_prev) return {z_bar, true};
  return {*z_prev, false};
}

float calibrate_rho(std::vector<float> c, double q) {
  WMNAV_REQUIRE(!c.empty(), "calibrate_rho: no confidences");
  WMNAV_REQUIRE(q >= 0 && q <= 100, "calibrate_rho: percentile outside [0,100]");
  std::sort(c.begin(), c.end());
  const double pos = q / 100.0 * static_cast<double>(c.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(c.size() - 1, lo + 1);
  const double f = pos - static_cast<double>(lo);
  return static_cast<float>(c[lo] * (1 - f) + c[hi] * f);
}

}  // namespace wmnav
