#include "wmnav/world.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <numeric>
#include <tuple>

#include "wmnav/error.hpp"

namespace wmnav {

namespace {

constexpr std::array<int, 4> kDirDx{1, 0, -1, 0};
constexpr std::array<int, 4> kDirDy{0, 1, 0, -1};

std::uint8_t rotate_arms(std::uint8_t arms, int quarter_turns) {
  const int r = ((quarter_turns % 4) + 4) % 4;
  return static_cast<std::uint8_t>(((arms << r) | (arms >> (4 - r))) & 0xF);
}

std::uint8_t canonical_arms(TileKind kind) {
  switch (kind) {
    case TileKind::Empty: return 0;
    case TileKind::Straight: return kNorth | kSouth;
    case TileKind::Curve: return kNorth | kEast;
    case TileKind::TJunction: return kEast | kSouth | kWest;
    case TileKind::Crossroad: return 0xF;
    case TileKind::DeadEnd: return kNorth;
  }
  return 0;
}

int mod(int a, int m) { return ((a % m) + m) % m; }

// Distance from (u, v) to an axis-aligned box [x0,x1] x [y0,y1].
double box_distance(double u, double v, double x0, double x1, double y0, double y1) {
  const double dx = std::max({x0 - u, 0.0, u - x1});
  const double dy = std::max({y0 - v, 0.0, v - y1});
  return std::hypot(dx, dy);
}

}  // namespace

std::uint8_t Tile::arms() const { return rotate_arms(canonical_arms(kind), orientation_deg / 90); }

Tile Tile::from_arms(std::uint8_t arms) {
  arms &= 0xF;
  for (TileKind k : {TileKind::Empty, TileKind::Straight, TileKind::Curve, TileKind::TJunction, TileKind::Crossroad,
                     TileKind::DeadEnd})
    for (int r = 0; r < 4; ++r)
      if (rotate_arms(canonical_arms(k), r) == arms) return Tile{k, k == TileKind::Empty || k == TileKind::Crossroad ? 0 : r * 90};
  throw ContractError("unreachable arm mask");
}

TileMap::TileMap(int width, int height, double tile_size_m, double road_half_width_m, bool periodic)
    : width_(width), height_(height), tile_size_(tile_size_m), half_width_(road_half_width_m), periodic_(periodic) {
  WMNAV_REQUIRE(width > 0 && height > 0, "TileMap: dimensions must be positive");
  WMNAV_REQUIRE(tile_size_m > 0 && road_half_width_m > 0 && 2 * road_half_width_m < tile_size_m,
                "TileMap: road must fit inside a tile");
  tiles_.resize(static_cast<std::size_t>(width) * height);
}

const Tile& TileMap::at(int i, int j) const {
  WMNAV_REQUIRE(i >= 0 && i < width_ && j >= 0 && j < height_, "TileMap::at out of range");
  return tiles_[static_cast<std::size_t>(j) * width_ + i];
}

void TileMap::set(int i, int j, Tile t) {
  WMNAV_REQUIRE(i >= 0 && i < width_ && j >= 0 && j < height_, "TileMap::set out of range");
  tiles_[static_cast<std::size_t>(j) * width_ + i] = t;
}

Tile TileMap::lookup(int i, int j) const {
  if (periodic_) return tiles_[static_cast<std::size_t>(mod(j, height_)) * width_ + mod(i, width_)];
  if (i < 0 || i >= width_ || j < 0 || j >= height_) return {};
  return tiles_[static_cast<std::size_t>(j) * width_ + i];
}

bool TileMap::consistent() const {
  for (int j = 0; j < height_; ++j)
    for (int i = 0; i < width_; ++i) {
      const std::uint8_t a = at(i, j).arms();
      for (int d = 0; d < 4; ++d) {
        const int ni = i + kDirDx[static_cast<std::size_t>(d)], nj = j + kDirDy[static_cast<std::size_t>(d)];
        const bool inside = periodic_ || (ni >= 0 && ni < width_ && nj >= 0 && nj < height_);
        const bool here = (a >> d) & 1;
        if (!inside) {
          if (here) return false;
          continue;
        }
        const bool there = (lookup(ni, nj).arms() >> ((d + 2) % 4)) & 1;
        if (here != there) return false;
      }
    }
  return true;
}

std::pair<int, int> TileMap::tile_of(double x, double y) const {
  return {static_cast<int>(std::floor(x / tile_size_)), static_cast<int>(std::floor(y / tile_size_))};
}

std::pair<double, double> TileMap::tile_center(int i, int j) const {
  return {(i + 0.5) * tile_size_, (j + 0.5) * tile_size_};
}

bool TileMap::on_road(double x, double y) const {
  const auto [i, j] = tile_of(x, y);
  const std::uint8_t a = lookup(i, j).arms();
  if (!a) return false;
  const double u = x - (i + 0.5) * tile_size_, v = y - (j + 0.5) * tile_size_;
  const double hw = half_width_;
  const bool in_v = std::abs(v) <= hw, in_u = std::abs(u) <= hw;
  if (in_u && in_v) return true;
  if (in_v && (((a & kEast) && u >= 0) || ((a & kWest) && u <= 0))) return true;
  if (in_u && (((a & kNorth) && v >= 0) || ((a & kSouth) && v <= 0))) return true;
  return false;
}

double TileMap::distance_to_road(double x, double y) const {
  const auto [ti, tj] = tile_of(x, y);
  const double half = 0.5 * tile_size_, hw = half_width_;
  double best = std::numeric_limits<double>::infinity();
  for (int dj = -1; dj <= 1; ++dj)
    for (int di = -1; di <= 1; ++di) {
      const std::uint8_t a = lookup(ti + di, tj + dj).arms();
      if (!a) continue;
      const double u = x - (ti + di + 0.5) * tile_size_, v = y - (tj + dj + 0.5) * tile_size_;
      best = std::min(best, box_distance(u, v, -hw, hw, -hw, hw));
      if (a & kEast) best = std::min(best, box_distance(u, v, 0, half, -hw, hw));
      if (a & kWest) best = std::min(best, box_distance(u, v, -half, 0, -hw, hw));
      if (a & kNorth) best = std::min(best, box_distance(u, v, -hw, hw, 0, half));
      if (a & kSouth) best = std::min(best, box_distance(u, v, -hw, hw, -half, 0));
    }
  return best;
}

TileMap generate_map(int width, int height, Rng& rng, double loop_prob, double tile_size_m, double road_half_width_m) {
  TileMap map(width, height, tile_size_m, road_half_width_m, false);
  const int n = width * height;
  std::vector<std::uint8_t> arms(static_cast<std::size_t>(n), 0);
  // Candidate edges: (cell, direction) for east and north neighbours.
  std::vector<std::pair<int, int>> edges;
  for (int j = 0; j < height; ++j)
    for (int i = 0; i < width; ++i) {
      if (i + 1 < width) edges.emplace_back(j * width + i, 0);
      if (j + 1 < height) edges.emplace_back(j * width + i, 1);
    }
  std::shuffle(edges.begin(), edges.end(), rng);
  std::vector<int> parent(static_cast<std::size_t>(n));
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](int a) {
    while (parent[static_cast<std::size_t>(a)] != a) a = parent[static_cast<std::size_t>(a)] = parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(a)])];
    return a;
  };
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  for (auto [cell, dir] : edges) {
    const int other = dir == 0 ? cell + 1 : cell + width;
    const int ra = find(cell), rb = find(other);
    const bool tree_edge = ra != rb;
    if (!tree_edge && coin(rng) >= loop_prob) continue;
    if (tree_edge) parent[static_cast<std::size_t>(ra)] = rb;
    arms[static_cast<std::size_t>(cell)] |= dir == 0 ? kEast : kNorth;
    arms[static_cast<std::size_t>(other)] |= dir == 0 ? kWest : kSouth;
  }
  for (int j = 0; j < height; ++j)
    for (int i = 0; i < width; ++i) map.set(i, j, Tile::from_arms(arms[static_cast<std::size_t>(j * width + i)]));
  return map;
}

TileMap uniform_map(int width, int height, Tile tile, double tile_size_m, double road_half_width_m) {
  TileMap map(width, height, tile_size_m, road_half_width_m, true);
  for (int j = 0; j < height; ++j)
    for (int i = 0; i < width; ++i) map.set(i, j, tile);
  return map;
}

double wrap_angle(double a) {
  double r = std::fmod(a + kPi, 2 * kPi);
  if (r <= 0) r += 2 * kPi;
  return r - kPi;
}

Action::Action(double t, double s)
    : throttle(static_cast<float>(std::clamp(t, -1.0, 1.0))), steer(static_cast<float>(std::clamp(s, -1.0, 1.0))) {}

RobotPose step_dynamics(const RobotPose& pose, const Action& action, double dt, const DriveLimits& limits) {
  WMNAV_REQUIRE(dt > 0, "step_dynamics: dt must be positive");
  const double v = limits.v_max * std::clamp(static_cast<double>(action.throttle), -1.0, 1.0);
  const double w = limits.w_max * std::clamp(static_cast<double>(action.steer), -1.0, 1.0);
  RobotPose out = pose;
  const double th = pose.heading, th2 = th + w * dt;
  if (std::abs(w) < 1e-9) {
    out.x += v * dt * std::cos(th);
    out.y += v * dt * std::sin(th);
  } else {
    out.x += v / w * (std::sin(th2) - std::sin(th));
    out.y += v / w * (std::cos(th) - std::cos(th2));
  }
  out.heading = wrap_angle(th2);
  return out;
}

bool curb_collision(const TileMap& map, const RobotPose& pose, double margin) {
  return map.distance_to_road(pose.x, pose.y) > margin;
}

float BevImage::road_fraction() const {
  if (pixels.empty()) return 0.0f;
  std::size_t n = 0;
  for (auto p : pixels) n += p;
  return static_cast<float>(n) / static_cast<float>(pixels.size());
}

namespace {

struct BevFrame {
  double res, half;
  double fx, fy, rx, ry;  // forward and right unit vectors
};

BevFrame bev_frame(const RobotPose& pose, const BevSpec& spec) {
  const double c = std::cos(pose.heading), s = std::sin(pose.heading);
  return {spec.range_m / spec.size, 0.5 * spec.size, c, s, s, -c};
}

}  // namespace

BevImage render_bev(const TileMap& map, const RobotPose& pose, const BevSpec& spec) {
  BevImage img{spec.size, spec.size, std::vector<std::uint8_t>(static_cast<std::size_t>(spec.size) * spec.size)};
  const BevFrame f = bev_frame(pose, spec);
#pragma omp parallel for schedule(static) if (spec.size >= 128)
  for (int r = 0; r < spec.size; ++r) {
    const double fwd = (f.half - r - 0.5) * f.res;
    const double bx = pose.x + fwd * f.fx, by = pose.y + fwd * f.fy;
    std::uint8_t* row = img.pixels.data() + static_cast<std::size_t>(r) * spec.size;
    for (int c = 0; c < spec.size; ++c) {
      const double right = (c + 0.5 - f.half) * f.res;
      row[c] = map.on_road(bx + right * f.rx, by + right * f.ry) ? 1 : 0;
    }
  }
  return img;
}

BevImage render_bev_reference(const TileMap& map, const RobotPose& pose, const BevSpec& spec) {
  BevImage img{spec.size, spec.size, std::vector<std::uint8_t>(static_cast<std::size_t>(spec.size) * spec.size)};
  const BevFrame f = bev_frame(pose, spec);
  for (int r = 0; r < spec.size; ++r)
    for (int c = 0; c < spec.size; ++c) {
      const double fwd = (f.half - r - 0.5) * f.res, right = (c + 0.5 - f.half) * f.res;
      const double x = pose.x + fwd * f.fx + right * f.rx, y = pose.y + fwd * f.fy + right * f.ry;
      img.pixels[static_cast<std::size_t>(r) * spec.size + c] = map.on_road(x, y) ? 1 : 0;
    }
  return img;
}

std::vector<std::pair<int, int>> route_tiles(const TileMap& map, std::pair<int, int> from, std::pair<int, int> to) {
  const int w = map.width(), h = map.height();
  auto norm = [&](std::pair<int, int> t) {
    return map.periodic() ? std::pair<int, int>{mod(t.first, w), mod(t.second, h)} : t;
  };
  from = norm(from), to = norm(to);
  auto valid = [&](std::pair<int, int> t) { return t.first >= 0 && t.first < w && t.second >= 0 && t.second < h; };
  if (!valid(from) || !valid(to) || !map.at(from.first, from.second).arms() || !map.at(to.first, to.second).arms())
    throw NoRouteError("route endpoints are not on road tiles");
  std::vector<int> prev(static_cast<std::size_t>(w) * h, -2);
  auto idx = [&](std::pair<int, int> t) { return static_cast<std::size_t>(t.second) * w + t.first; };
  std::deque<std::pair<int, int>> queue{from};
  prev[idx(from)] = -1;
  while (!queue.empty()) {
    const auto cur = queue.front();
    queue.pop_front();
    if (cur == to) break;
    const std::uint8_t a = map.at(cur.first, cur.second).arms();
    for (int d = 0; d < 4; ++d) {
      if (!((a >> d) & 1)) continue;
      const auto nxt = norm({cur.first + kDirDx[static_cast<std::size_t>(d)], cur.second + kDirDy[static_cast<std::size_t>(d)]});
      if (!valid(nxt) || prev[idx(nxt)] != -2) continue;
      prev[idx(nxt)] = static_cast<int>(idx(cur));
      queue.push_back(nxt);
    }
  }
  if (prev[idx(to)] == -2) throw NoRouteError("goal tile is unreachable from start tile");
  std::vector<std::pair<int, int>> path;
  for (int k = static_cast<int>(idx(to)); k != -1; k = prev[static_cast<std::size_t>(k)]) path.emplace_back(k % w, k / w);
  std::reverse(path.begin(), path.end());
  return path;
}

namespace {

// True when p lies on the arm of tile `t` pointing toward tile `n` (within the road width).
bool on_arm_toward(const TileMap& map, std::pair<int, int> t, std::pair<int, int> n, Point2 p) {
  const auto [cx, cy] = map.tile_center(t.first, t.second);
  int dx = n.first - t.first, dy = n.second - t.second;
  if (map.periodic()) {  // adjacent across the wrap
    if (dx > 1) dx = -1;
    if (dx < -1) dx = 1;
    if (dy > 1) dy = -1;
    if (dy < -1) dy = 1;
  }
  const double along = (p.x - cx) * dx + (p.y - cy) * dy;
  const double across = std::abs((p.x - cx) * dy - (p.y - cy) * dx);
  return along >= 0 && across <= map.road_half_width();
}

// Arm direction of p relative to tile centre c, or -1 inside the centre square.
int arm_of(Point2 c, Point2 p, double half_width) {
  const double u = p.x - c.x, v = p.y - c.y;
  if (std::abs(u) <= half_width && std::abs(v) <= half_width) return -1;
  if (std::abs(u) >= std::abs(v)) return u > 0 ? 0 : 2;
  return v > 0 ? 1 : 3;
}

}  // namespace

std::vector<Point2> make_waypoints(const TileMap& map, Point2 start, Point2 goal, double resolution_m) {
  WMNAV_REQUIRE(resolution_m > 0, "make_waypoints: resolution must be positive");
  WMNAV_REQUIRE(map.on_road(start.x, start.y) && map.on_road(goal.x, goal.y), "make_waypoints: start and goal must be on road");
  const auto ts = map.tile_of(start.x, start.y), tg = map.tile_of(goal.x, goal.y);
  const auto path = route_tiles(map, ts, tg);

  // Unwrap tile indices along the path so periodic maps produce continuous polylines.
  std::vector<std::pair<int, int>> tiles{ts};
  for (std::size_t k = 1; k < path.size(); ++k) {
    int dx = path[k].first - path[k - 1].first, dy = path[k].second - path[k - 1].second;
    if (dx > 1) dx = -1;
    if (dx < -1) dx = 1;
    if (dy > 1) dy = -1;
    if (dy < -1) dy = 1;
    tiles.emplace_back(tiles.back().first + dx, tiles.back().second + dy);
  }
  auto center = [&](std::pair<int, int> t) {
    const auto [x, y] = map.tile_center(t.first, t.second);
    return Point2{x, y};
  };
  std::vector<Point2> poly{start};
  if (tiles.size() == 1) {
    const Point2 c = center(tiles[0]);
    const int sa = arm_of(c, start, map.road_half_width()), ga = arm_of(c, goal, map.road_half_width());
    if (sa >= 0 && ga >= 0 && sa != ga) poly.push_back(c);
  } else {
    if (!on_arm_toward(map, tiles[0], tiles[1], start)) poly.push_back(center(tiles[0]));
    for (std::size_t k = 1; k + 1 < tiles.size(); ++k) poly.push_back(center(tiles[k]));
    const auto& last = tiles.back();
    const Point2 g_unwrapped{goal.x + (last.first - tg.first) * map.tile_size(), goal.y + (last.second - tg.second) * map.tile_size()};
    if (!on_arm_toward(map, last, tiles[tiles.size() - 2], g_unwrapped)) poly.push_back(center(last));
    goal = g_unwrapped;
  }
  poly.push_back(goal);

  std::vector<Point2> out;
  double next = resolution_m, travelled = 0;
  for (std::size_t k = 1; k < poly.size(); ++k) {
    const double seg = std::hypot(poly[k].x - poly[k - 1].x, poly[k].y - poly[k - 1].y);
    while (seg > 0 && next < travelled + seg - 1e-9) {
      const double a = (next - travelled) / seg;
      out.push_back({poly[k - 1].x + a * (poly[k].x - poly[k - 1].x), poly[k - 1].y + a * (poly[k].y - poly[k - 1].y)});
      next += resolution_m;
    }
    travelled += seg;
  }
  // The last sample may coincide with the goal up to rounding; the goal itself closes the list.
  if (!out.empty() && std::hypot(out.back().x - goal.x, out.back().y - goal.y) < 1e-6) out.pop_back();
  out.push_back(goal);
  return out;
}

const std::array<std::string, kNumClasses>& class_names() {
  static const std::array<std::string, kNumClasses> names{"straight", "left-curve", "right-curve",
                                                          "t-junction", "crossroad", "dead-end"};
  return names;
}

RoadClass class_from_name(const std::string& name) {
  const auto& n = class_names();
  for (int i = 0; i < kNumClasses; ++i)
    if (n[static_cast<std::size_t>(i)] == name) return static_cast<RoadClass>(i);
  throw FormatError("unknown road class '" + name + "'");
}

RoadClass local_class(const TileMap& map, const RobotPose& pose, double lookahead_m) {
  WMNAV_REQUIRE(map.on_road(pose.x, pose.y), "local_class: pose is off-road");
  const double hx = std::cos(pose.heading), hy = std::sin(pose.heading);
  // Tile under the lookahead point, or the current tile when that point
  // falls on an empty tile.
  auto [i, j] = map.tile_of(pose.x + lookahead_m * hx, pose.y + lookahead_m * hy);
  if (!map.lookup(i, j).arms()) std::tie(i, j) = map.tile_of(pose.x, pose.y);
  const Tile tile = map.lookup(i, j);
  switch (tile.kind) {
    case TileKind::Straight: return RoadClass::Straight;
    case TileKind::TJunction: return RoadClass::TJunction;
    case TileKind::Crossroad: return RoadClass::Crossroad;
    case TileKind::DeadEnd: return RoadClass::DeadEnd;
    case TileKind::Curve: {
      const std::uint8_t a = tile.arms();
      // Entry arm is the one most opposed to the heading; exit is the other.
      int entry = -1, exit = -1;
      double best = -2;
      for (int d = 0; d < 4; ++d) {
        if (!((a >> d) & 1)) continue;
        const double score = -(hx * kDirDx[static_cast<std::size_t>(d)] + hy * kDirDy[static_cast<std::size_t>(d)]);
        if (score > best) best = score, entry = d;
      }
      for (int d = 0; d < 4; ++d)
        if (((a >> d) & 1) && d != entry) exit = d;
      const double cross = hx * kDirDy[static_cast<std::size_t>(exit)] - hy * kDirDx[static_cast<std::size_t>(exit)];
      return cross > 0 ? RoadClass::LeftCurve : RoadClass::RightCurve;
    }
    case TileKind::Empty: break;
  }
  throw ContractError("local_class: no road geometry around pose");
}

}  // namespace wmnav
