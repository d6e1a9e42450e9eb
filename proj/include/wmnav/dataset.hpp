#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "wmnav/render.hpp"

namespace wmnav {

struct TrajectoryRecord {
  FpvImage fpv;
  BevImage bev;
  Action action;  // action taken from this pose
  RobotPose pose;
  RoadClass cls = RoadClass::Straight;
  int t = 0;
};

struct Trajectory {
  RenderStyle style;
  std::vector<TrajectoryRecord> records;
};

using Controller = std::function<Action(const TileMap&, const RobotPose&)>;

/// Scripted driver: random walk over the tile graph (no U-turns except at
/// dead ends), steering toward successive tile centres.
class WaypointFollower {
 public:
  WaypointFollower(const TileMap& map, const RobotPose& start, std::uint64_t seed, double cruise = 0.6);
  Action operator()(const TileMap& map, const RobotPose& pose);

 private:
  void extend(const TileMap& map);
  std::vector<std::pair<int, int>> tiles_;  // unwrapped tile indices still ahead
  std::pair<int, int> prev_;
  Rng rng_;
  double cruise_;
};

/// Road point with heading along a randomly chosen arm, jittered by up to
/// `pos_jitter` metres and `heading_jitter` radians.
RobotPose sample_road_pose(const TileMap& map, Rng& rng, double pos_jitter = 0.5, double heading_jitter = 15.0 * kPi / 180.0);

struct CollectSpec {
  int steps = 64;
  double dt = 0.1;
  DriveLimits limits;
  BevSpec bev;
  CameraSpec camera;
};

/// Rolls `controller` for spec.steps steps from a jittered road pose; every
/// record is rendered from the pose it stores. When `controller` is empty a
/// WaypointFollower seeded from `rng` drives.
Trajectory collect_trajectory(const TileMap& map, Controller controller, const CollectSpec& spec,
                              const RenderStyle& style, Rng& rng, const RobotPose* start = nullptr);

// Image files. PGM stores road as 255, non-road as 0.
void write_pgm(const std::filesystem::path& path, const BevImage& img);
BevImage read_pgm(const std::filesystem::path& path);
void write_ppm(const std::filesystem::path& path, const FpvImage& img);
FpvImage read_ppm(const std::filesystem::path& path);

std::uint32_t file_crc32(const std::filesystem::path& path);
std::uint32_t crc32_bytes(const void* data, std::size_t n, std::uint32_t crc = 0);

/// One independently sampled road view with its class label.
struct LabeledView {
  FpvImage fpv;
  BevImage bev;
  RoadClass cls = RoadClass::Straight;
  RobotPose pose;
  RenderStyle style;
};

struct ViewSpec {
  int map_size = 6;
  int poses_per_map = 16;
  bool balanced = true;   // equal count per class (remainder to the first classes)
  bool with_fpv = true;
  /// Turn each pose to face the centre of its tile, so the labelled tile is
  /// the one in view rather than the one being left behind.
  bool approach = true;
  BevSpec bev;
  CameraSpec camera;
};

/// Random road views drawn from fresh procedural maps, each with its own
/// style from `family`.
std::vector<LabeledView> sample_views(int count, StyleFamily family, Rng& rng, const ViewSpec& spec = {});

struct DatasetMeta {
  double tile_size_m = 15.0;
  double bev_range_m = 20.0;
};

/// Writes images plus manifest.json; returns the manifest path.
std::filesystem::path write_dataset(const std::vector<Trajectory>& trajectories, const std::filesystem::path& dir,
                                    const DatasetMeta& meta = {});
/// Throws FormatError (manifest), MissingFileError, ChecksumError.
std::vector<Trajectory> read_dataset(const std::filesystem::path& dir, DatasetMeta* meta = nullptr);

}  // namespace wmnav
