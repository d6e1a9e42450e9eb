#pragma once

// Tile-based road world: map geometry, differential-drive kinematics,
// egocentric BEV rasterisation, routing and local road classification.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "wmnav/nn.hpp"

namespace wmnav {

inline constexpr double kPi = 3.14159265358979323846;

enum class TileKind : std::uint8_t { Empty, Straight, Curve, TJunction, Crossroad, DeadEnd };

// Arm bits, counter-clockwise from +x: bit d points along angle d * 90 degrees.
enum ArmBit : std::uint8_t { kEast = 1, kNorth = 2, kWest = 4, kSouth = 8 };

struct Tile {
  TileKind kind = TileKind::Empty;
  int orientation_deg = 0;  // 0, 90, 180, 270; counter-clockwise

  std::uint8_t arms() const;
  static Tile from_arms(std::uint8_t arms);
  friend bool operator==(const Tile&, const Tile&) = default;
};

class TileMap {
 public:
  TileMap(int width, int height, double tile_size_m = 15.0, double road_half_width_m = 2.5, bool periodic = false);

  int width() const { return width_; }
  int height() const { return height_; }
  double tile_size() const { return tile_size_; }
  double road_half_width() const { return half_width_; }
  bool periodic() const { return periodic_; }

  const Tile& at(int i, int j) const;
  void set(int i, int j, Tile t);
  /// Tile at wrapped or out-of-range coordinates (out of range on a bounded map is Empty).
  Tile lookup(int i, int j) const;

  /// True when every arm meets a matching arm across the tile border and no
  /// arm leaves a bounded map.
  bool consistent() const;

  /// True when (x, y) lies on the road surface.
  bool on_road(double x, double y) const;
  /// Euclidean distance from (x, y) to the road surface (0 on the road).
  double distance_to_road(double x, double y) const;

  /// Tile index containing a world point (unwrapped).
  std::pair<int, int> tile_of(double x, double y) const;
  std::pair<double, double> tile_center(int i, int j) const;

 private:
  int width_, height_;
  double tile_size_, half_width_;
  bool periodic_;
  std::vector<Tile> tiles_;
};

/// Random connected road network: spanning tree over the grid plus extra loop edges.
TileMap generate_map(int width, int height, Rng& rng, double loop_prob = 0.3, double tile_size_m = 15.0,
                     double road_half_width_m = 2.5);

/// Fills a whole map with one tile, producing a periodic pattern.
TileMap uniform_map(int width, int height, Tile tile, double tile_size_m = 15.0, double road_half_width_m = 2.5);

struct RobotPose {
  double x = 0, y = 0;
  double heading = 0;  // radians, (-pi, pi]
};

double wrap_angle(double a);

struct Action {
  float throttle = 0, steer = 0;

  Action() = default;
  Action(double t, double s);
};

struct DriveLimits {
  double v_max = 2.0;
  double w_max = 1.5;
};

/// Exact-arc unicycle update: v = v_max * throttle, w = w_max * steer.
RobotPose step_dynamics(const RobotPose& pose, const Action& action, double dt, const DriveLimits& limits = {});

/// Off-road beyond `margin` metres.
bool curb_collision(const TileMap& map, const RobotPose& pose, double margin = 0.1);

struct BevSpec {
  int size = 64;
  double range_m = 20.0;
};

/// Binary egocentric raster: row 0 is straight ahead, columns run left to right,
/// the robot sits at the image centre. 1 = road.
struct BevImage {
  int height = 64, width = 64;
  std::vector<std::uint8_t> pixels;

  float road_fraction() const;
  friend bool operator==(const BevImage&, const BevImage&) = default;
};

BevImage render_bev(const TileMap& map, const RobotPose& pose, const BevSpec& spec = {});
BevImage render_bev_reference(const TileMap& map, const RobotPose& pose, const BevSpec& spec = {});

struct Point2 {
  double x = 0, y = 0;
};

/// Centerline points spaced `resolution_m` apart from start to goal, goal last.
/// Throws NoRouteError when the goal tile is unreachable.
std::vector<Point2> make_waypoints(const TileMap& map, Point2 start, Point2 goal, double resolution_m);

/// Route of tile indices between two road tiles (breadth-first, deterministic neighbour order).
std::vector<std::pair<int, int>> route_tiles(const TileMap& map, std::pair<int, int> from, std::pair<int, int> to);

enum class RoadClass : std::uint8_t { Straight, LeftCurve, RightCurve, TJunction, Crossroad, DeadEnd };
inline constexpr int kNumClasses = 6;
const std::array<std::string, kNumClasses>& class_names();
RoadClass class_from_name(const std::string& name);

inline constexpr double kClassLookahead = 2.5;

/// Class of the road tile under the point `lookahead_m` ahead of the robot
/// (the robot's own tile if that point is off the map's road tiles); curves are
/// left or right relative to the direction of travel. Throws ContractError off-road.
RoadClass local_class(const TileMap& map, const RobotPose& pose, double lookahead_m = kClassLookahead);

}  // namespace wmnav
