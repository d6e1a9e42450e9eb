#include "wmnav/dataset.hpp"

#include <zlib.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include "json.hpp"
#include <sstream>

#include "wmnav/error.hpp"

namespace wmnav {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::array<int, 4> kDx{1, 0, -1, 0};
constexpr std::array<int, 4> kDy{0, 1, 0, -1};

Tile tile_at(const TileMap& map, std::pair<int, int> t) { return map.lookup(t.first, t.second); }

}  // namespace

WaypointFollower::WaypointFollower(const TileMap& map, const RobotPose& start, std::uint64_t seed, double cruise)
    : rng_(seed), cruise_(cruise) {
  const auto cur = map.tile_of(start.x, start.y);
  const auto [cx, cy] = map.tile_center(cur.first, cur.second);
  const double hx = std::cos(start.heading), hy = std::sin(start.heading);
  const double ahead = (cx - start.x) * hx + (cy - start.y) * hy;
  const std::uint8_t arms = tile_at(map, cur).arms();
  // Best arm along the heading; if the centre is still ahead, drive through it first.
  int best = -1;
  double best_dot = -2;
  for (int d = 0; d < 4; ++d) {
    if (!((arms >> d) & 1)) continue;
    const double dot = hx * kDx[static_cast<std::size_t>(d)] + hy * kDy[static_cast<std::size_t>(d)];
    if (dot > best_dot) best_dot = dot, best = d;
  }
  if (ahead > 0 || best < 0 || best_dot < 0.5) {
    tiles_.push_back(cur);
    prev_ = {cur.first - (best >= 0 ? kDx[static_cast<std::size_t>(best)] : 0), cur.second - (best >= 0 ? kDy[static_cast<std::size_t>(best)] : 0)};
  } else {
    prev_ = cur;
    tiles_.emplace_back(cur.first + kDx[static_cast<std::size_t>(best)], cur.second + kDy[static_cast<std::size_t>(best)]);
  }
  extend(map);
}

void WaypointFollower::extend(const TileMap& map) {
  while (tiles_.size() < 3) {
    const auto last = tiles_.back();
    const auto before = tiles_.size() >= 2 ? tiles_[tiles_.size() - 2] : prev_;
    const std::uint8_t arms = tile_at(map, last).arms();
    std::vector<int> options, all;
    for (int d = 0; d < 4; ++d) {
      if (!((arms >> d) & 1)) continue;
      all.push_back(d);
      const std::pair<int, int> n{last.first + kDx[static_cast<std::size_t>(d)], last.second + kDy[static_cast<std::size_t>(d)]};
      if (n != before) options.push_back(d);
    }
    if (options.empty()) options = all;
    if (options.empty()) return;  // isolated tile; stay on it
    const int d = options[static_cast<std::size_t>(rng_() % options.size())];
    tiles_.emplace_back(last.first + kDx[static_cast<std::size_t>(d)], last.second + kDy[static_cast<std::size_t>(d)]);
  }
}

Action WaypointFollower::operator()(const TileMap& map, const RobotPose& pose) {
  constexpr double kSwitchRadius = 1.5;
  auto target = [&] {
    const auto& t = tiles_.front();
    return map.tile_center(t.first, t.second);
  };
  for (int guard = 0; guard < 4 && tiles_.size() > 1; ++guard) {
    auto [tx, ty] = target();
    if (std::hypot(tx - pose.x, ty - pose.y) >= kSwitchRadius) break;
    prev_ = tiles_.front();
    tiles_.erase(tiles_.begin());
    extend(map);
  }
  const auto [tx, ty] = target();
  const double err = wrap_angle(std::atan2(ty - pose.y, tx - pose.x) - pose.heading);
  const double steer = std::clamp(2.0 * err, -1.0, 1.0);
  const double throttle = std::abs(err) > 1.0 ? 0.1 : cruise_ * std::max(0.3, std::cos(err));
  return Action(throttle, steer);
}

RobotPose sample_road_pose(const TileMap& map, Rng& rng, double pos_jitter, double heading_jitter) {
  std::vector<std::pair<int, int>> road;
  for (int j = 0; j < map.height(); ++j)
    for (int i = 0; i < map.width(); ++i)
      if (map.at(i, j).arms()) road.emplace_back(i, j);
  WMNAV_REQUIRE(!road.empty(), "sample_road_pose: map has no road");
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (;;) {
    const auto [i, j] = road[static_cast<std::size_t>(rng() % road.size())];
    const std::uint8_t arms = map.at(i, j).arms();
    std::vector<int> dirs;
    for (int d = 0; d < 4; ++d)
      if ((arms >> d) & 1) dirs.push_back(d);
    const int d = dirs[static_cast<std::size_t>(rng() % dirs.size())];
    const double along = u(rng) * 0.5 * map.tile_size();
    const auto [cx, cy] = map.tile_center(i, j);
    RobotPose p;
    p.x = cx + along * kDx[static_cast<std::size_t>(d)] + pos_jitter * (2 * u(rng) - 1);
    p.y = cy + along * kDy[static_cast<std::size_t>(d)] + pos_jitter * (2 * u(rng) - 1);
    const double base = d * 0.5 * kPi + (u(rng) < 0.5 ? 0.0 : kPi);
    p.heading = wrap_angle(base + heading_jitter * (2 * u(rng) - 1));
    if (map.on_road(p.x, p.y)) return p;
  }
}

std::vector<LabeledView> sample_views(int count, StyleFamily family, Rng& rng, const ViewSpec& spec) {
  WMNAV_REQUIRE(count >= 0, "sample_views: negative count");
  std::array<int, kNumClasses> quota{};
  for (int c = 0; c < kNumClasses; ++c) quota[static_cast<std::size_t>(c)] = count / kNumClasses + (c < count % kNumClasses);
  std::vector<LabeledView> out;
  out.reserve(static_cast<std::size_t>(count));
  while (static_cast<int>(out.size()) < count) {
    const TileMap map = generate_map(spec.map_size, spec.map_size, rng);
    for (int k = 0; k < spec.poses_per_map && static_cast<int>(out.size()) < count; ++k) {
      LabeledView v;
      v.pose = sample_road_pose(map, rng);
      if (spec.approach) {
        const auto [i, j] = map.tile_of(v.pose.x, v.pose.y);
        const auto [cx, cy] = map.tile_center(i, j);
        if ((cx - v.pose.x) * std::cos(v.pose.heading) + (cy - v.pose.y) * std::sin(v.pose.heading) < 0)
          v.pose.heading = wrap_angle(v.pose.heading + kPi);
      }
      v.cls = local_class(map, v.pose);
      if (spec.balanced) {
        int& q = quota[static_cast<std::size_t>(v.cls)];
        if (q == 0) continue;
        --q;
      }
      v.style = sample_style(family, rng);
      const std::uint64_t seed = rng();
      v.bev = render_bev(map, v.pose, spec.bev);
      if (spec.with_fpv) v.fpv = render_fpv(map, v.pose, v.style, seed, spec.camera);
      out.push_back(std::move(v));
    }
  }
  return out;
}

Trajectory collect_trajectory(const TileMap& map, Controller controller, const CollectSpec& spec,
                              const RenderStyle& style, Rng& rng, const RobotPose* start) {
  WMNAV_REQUIRE(spec.steps >= 1, "collect_trajectory: T must be at least 1");
  RobotPose pose = start ? *start : sample_road_pose(map, rng);
  if (!controller) controller = WaypointFollower(map, pose, rng());
  const std::uint64_t frame_seed = rng();
  Trajectory traj;
  traj.style = style;
  traj.records.reserve(static_cast<std::size_t>(spec.steps));
  for (int t = 0; t < spec.steps; ++t) {
    TrajectoryRecord rec;
    rec.pose = pose;
    rec.t = t;
    rec.bev = render_bev(map, pose, spec.bev);
    rec.fpv = render_fpv(map, pose, style, frame_seed + static_cast<std::uint64_t>(t), spec.camera);
    rec.cls = map.on_road(pose.x, pose.y) ? local_class(map, pose)
                                          : (t > 0 ? traj.records.back().cls : RoadClass::Straight);
    rec.action = controller(map, pose);
    traj.records.push_back(std::move(rec));
    pose = step_dynamics(pose, traj.records.back().action, spec.dt, spec.limits);
  }
  return traj;
}

// ---- image files ----

namespace {

void write_pnm(const fs::path& path, const char* magic, int w, int h, const std::uint8_t* data, std::size_t n) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open " + path.string() + " for writing");
  os << magic << '\n' << w << ' ' << h << "\n255\n";
  os.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n));
  if (!os) throw Error("failed writing " + path.string());
}

std::vector<std::uint8_t> read_pnm(const fs::path& path, const std::string& magic, int channels, int& w, int& h) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw MissingFileError("image file not found: " + path.string());
  std::string m;
  int maxval = 0;
  is >> m >> w >> h >> maxval;
  if (!is || m != magic || w <= 0 || h <= 0 || maxval != 255)
    throw FormatError("malformed image header in " + path.string());
  is.get();  // single whitespace byte after maxval
  std::vector<std::uint8_t> data(static_cast<std::size_t>(w) * h * channels);
  is.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (is.gcount() != static_cast<std::streamsize>(data.size()))
    throw FormatError("truncated image file " + path.string() + " (" + std::to_string(is.gcount()) + " of " +
                      std::to_string(data.size()) + " payload bytes)");
  return data;
}

}  // namespace

void write_pgm(const fs::path& path, const BevImage& img) {
  std::vector<std::uint8_t> px(img.pixels.size());
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = img.pixels[i] ? 255 : 0;
  write_pnm(path, "P5", img.width, img.height, px.data(), px.size());
}

BevImage read_pgm(const fs::path& path) {
  BevImage img;
  img.pixels = read_pnm(path, "P5", 1, img.width, img.height);
  for (auto& p : img.pixels) {
    if (p != 0 && p != 255) throw FormatError("non-binary BEV pixel in " + path.string());
    p = p ? 1 : 0;
  }
  return img;
}

void write_ppm(const fs::path& path, const FpvImage& img) {
  write_pnm(path, "P6", img.width, img.height, img.rgb.data(), img.rgb.size());
}

FpvImage read_ppm(const fs::path& path) {
  FpvImage img;
  img.rgb = read_pnm(path, "P6", 3, img.width, img.height);
  return img;
}

std::uint32_t crc32_bytes(const void* data, std::size_t n, std::uint32_t crc) {
  return static_cast<std::uint32_t>(::crc32(crc, static_cast<const Bytef*>(data), static_cast<uInt>(n)));
}

std::uint32_t file_crc32(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw MissingFileError("file not found: " + path.string());
  std::vector<char> buf((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return crc32_bytes(buf.data(), buf.size());
}

// ---- dataset manifest ----

namespace {

json style_to_json(const RenderStyle& s) {
  return {{"family", family_name(s.family)}, {"palette", s.palette}, {"texture", s.texture},
          {"gain", s.gain}, {"hue_shift", s.hue_shift}, {"noise", s.noise},
          {"camera_height_offset", s.camera_height_offset}, {"camera_pitch_offset", s.camera_pitch_offset}};
}

RenderStyle style_from_json(const json& j) {
  RenderStyle s;
  s.family = family_from_name(j.at("family").get<std::string>());
  s.palette = j.at("palette").get<int>();
  s.texture = j.at("texture").get<int>();
  s.gain = j.at("gain").get<float>();
  s.hue_shift = j.at("hue_shift").get<float>();
  s.noise = j.at("noise").get<float>();
  s.camera_height_offset = j.at("camera_height_offset").get<float>();
  s.camera_pitch_offset = j.at("camera_pitch_offset").get<float>();
  return s;
}

std::string frame_name(const char* prefix, int t, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%06d.%s", prefix, t, ext);
  return buf;
}

}  // namespace

fs::path write_dataset(const std::vector<Trajectory>& trajectories, const fs::path& dir, const DatasetMeta& meta) {
  fs::create_directories(dir);
  json manifest;
  manifest["format_version"] = "1";
  manifest["tile_size_m"] = meta.tile_size_m;
  manifest["bev_range_m"] = meta.bev_range_m;
  manifest["classes"] = class_names();
  manifest["sequences"] = json::array();
  for (std::size_t s = 0; s < trajectories.size(); ++s) {
    char seq[32];
    std::snprintf(seq, sizeof seq, "seq_%04zu", s);
    fs::create_directories(dir / seq);
    json records = json::array();
    for (const TrajectoryRecord& r : trajectories[s].records) {
      const std::string fpv = std::string(seq) + "/" + frame_name("fpv", r.t, "ppm");
      const std::string bev = std::string(seq) + "/" + frame_name("bev", r.t, "pgm");
      write_ppm(dir / fpv, r.fpv);
      write_pgm(dir / bev, r.bev);
      records.push_back({{"fpv_path", fpv}, {"bev_path", bev},
                         {"fpv_crc32", file_crc32(dir / fpv)}, {"bev_crc32", file_crc32(dir / bev)},
                         {"throttle", r.action.throttle}, {"steer", r.action.steer},
                         {"x", r.pose.x}, {"y", r.pose.y}, {"heading", r.pose.heading},
                         {"class", class_names()[static_cast<std::size_t>(r.cls)]}, {"t", r.t}});
    }
    manifest["sequences"].push_back({{"style", style_to_json(trajectories[s].style)}, {"records", std::move(records)}});
  }
  const fs::path path = dir / "manifest.json";
  std::ofstream os(path);
  os << manifest.dump(1) << '\n';
  if (!os) throw Error("failed writing " + path.string());
  return path;
}

std::vector<Trajectory> read_dataset(const fs::path& dir, DatasetMeta* meta) {
  const fs::path path = dir / "manifest.json";
  std::ifstream is(path);
  if (!is) throw MissingFileError("manifest not found: " + path.string());
  json manifest;
  try {
    manifest = json::parse(is);
  } catch (const json::exception& e) {
    throw FormatError("malformed manifest " + path.string() + ": " + e.what());
  }
  std::vector<Trajectory> out;
  try {
    if (manifest.at("format_version").get<std::string>() != "1")
      throw FormatError("unsupported dataset format_version in " + path.string());
    if (meta) {
      meta->tile_size_m = manifest.at("tile_size_m").get<double>();
      meta->bev_range_m = manifest.at("bev_range_m").get<double>();
    }
    for (const json& seq : manifest.at("sequences")) {
      Trajectory traj;
      traj.style = style_from_json(seq.at("style"));
      for (const json& r : seq.at("records")) {
        TrajectoryRecord rec;
        const auto fpv = dir / r.at("fpv_path").get<std::string>();
        const auto bev = dir / r.at("bev_path").get<std::string>();
        for (const auto& [file, key] : {std::pair{fpv, "fpv_crc32"}, std::pair{bev, "bev_crc32"}}) {
          if (!fs::exists(file)) throw MissingFileError("dataset image missing: " + file.string());
          if (file_crc32(file) != r.at(key).get<std::uint32_t>())
            throw ChecksumError("checksum mismatch for " + file.string());
        }
        rec.fpv = read_ppm(fpv);
        rec.bev = read_pgm(bev);
        rec.action.throttle = r.at("throttle").get<float>();
        rec.action.steer = r.at("steer").get<float>();
        rec.pose = {r.at("x").get<double>(), r.at("y").get<double>(), r.at("heading").get<double>()};
        rec.cls = class_from_name(r.at("class").get<std::string>());
        rec.t = r.at("t").get<int>();
        if (!traj.records.empty() && rec.t <= traj.records.back().t)
          throw FormatError("non-increasing timesteps in " + path.string());
        traj.records.push_back(std::move(rec));
      }
      out.push_back(std::move(traj));
    }
  } catch (const json::exception& e) {
    throw FormatError("malformed manifest " + path.string() + ": " + e.what());
  }
  return out;
}

}  // namespace wmnav
