#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "wmnav/dataset.hpp"
#include "wmnav/error.hpp"

using namespace wmnav;
namespace fs = std::filesystem;

namespace {

const Tile kStraightNS{TileKind::Straight, 0};
const Tile kCross{TileKind::Crossroad, 0};

fs::path temp_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("wmnav_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// 3x3 bounded map with a curve joining the south and east arms at tile (1,1).
TileMap l_map() {
  TileMap m(3, 3);
  m.set(1, 1, Tile::from_arms(kSouth | kEast));
  m.set(1, 0, Tile::from_arms(kNorth));
  m.set(2, 1, Tile::from_arms(kWest));
  return m;
}

}  // namespace

TEST_CASE("tile arms rotate counter-clockwise with orientation") {
  CHECK(Tile{TileKind::Straight, 0}.arms() == (kNorth | kSouth));
  CHECK(Tile{TileKind::Straight, 90}.arms() == (kEast | kWest));
  CHECK(Tile{TileKind::Curve, 90}.arms() == (kNorth | kWest));
  for (int a = 0; a < 16; ++a) CHECK(Tile::from_arms(static_cast<std::uint8_t>(a)).arms() == a);
}

TEST_CASE("generated maps are connected and border-consistent") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    TileMap m = generate_map(6, 5, rng);
    CHECK(m.consistent());
    for (int j = 0; j < 5; ++j)
      for (int i = 0; i < 6; ++i) CHECK_NOTHROW(route_tiles(m, {0, 0}, {i, j}));
  }
}

TEST_CASE("step_dynamics closed-form cases") {
  DriveLimits lim{1.0, kPi};
  auto p = step_dynamics({}, Action(1, 0), 0.1, lim);
  CHECK(p.x == doctest::Approx(0.1));
  CHECK(p.y == doctest::Approx(0.0));
  CHECK(p.heading == doctest::Approx(0.0));

  p = step_dynamics({}, Action(0, 1), 1.0, lim);
  CHECK(p.x == 0.0);
  CHECK(p.y == 0.0);
  CHECK(p.heading == doctest::Approx(kPi));

  // Arc of radius 1 through a quarter turn.
  p = step_dynamics({}, Action(1, 1), kPi / 2, DriveLimits{1.0, 1.0});
  CHECK(p.x == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(p.y == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(p.heading == doctest::Approx(kPi / 2));
}

TEST_CASE("dynamics invariants: no steer keeps heading, no throttle keeps position") {
  Rng rng(11);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int trial = 0; trial < 200; ++trial) {
    RobotPose start{u(rng) * 10, u(rng) * 10, u(rng) * kPi};
    RobotPose p = start;
    for (int k = 0; k < 50; ++k) p = step_dynamics(p, Action(u(rng), 0), 0.1);
    CHECK(p.heading == doctest::Approx(start.heading).epsilon(1e-12));
    const double cross = (p.x - start.x) * std::sin(start.heading) - (p.y - start.y) * std::cos(start.heading);
    CHECK(std::abs(cross) < 1e-5);
    RobotPose q = start;
    for (int k = 0; k < 50; ++k) q = step_dynamics(q, Action(0, u(rng)), 0.1);
    CHECK(q.x == start.x);
    CHECK(q.y == start.y);
  }
}

TEST_CASE("heading wraps into (-pi, pi]") {
  CHECK(wrap_angle(kPi) == doctest::Approx(kPi));
  CHECK(wrap_angle(-kPi) == doctest::Approx(kPi));
  CHECK(wrap_angle(3 * kPi / 2) == doctest::Approx(-kPi / 2));
  Action a(5, -7);
  CHECK(a.throttle == 1.0f);
  CHECK(a.steer == -1.0f);
}

TEST_CASE("render_bev symmetries") {
  SUBCASE("crossroad centre is 4-fold symmetric") {
    TileMap m = uniform_map(4, 4, kCross);
    const BevImage a = render_bev(m, {22.5, 22.5, 0.3});
    const BevImage b = render_bev(m, {22.5, 22.5, 0.3 + kPi / 2});
    CHECK(a == b);
  }
  SUBCASE("aligned straight road is left-right mirror symmetric") {
    TileMap m = uniform_map(4, 4, kStraightNS);
    const BevImage a = render_bev(m, {22.5, 20.0, kPi / 2});
    for (int r = 0; r < a.height; ++r)
      for (int c = 0; c < a.width; ++c)
        CHECK(a.pixels[static_cast<std::size_t>(r * a.width + c)] == a.pixels[static_cast<std::size_t>(r * a.width + a.width - 1 - c)]);
    CHECK(a.road_fraction() > 0.1f);
  }
  SUBCASE("far from any road the view is empty") {
    TileMap m(4, 4);
    m.set(0, 0, Tile::from_arms(kEast));
    m.set(1, 0, Tile::from_arms(kWest));
    const BevImage a = render_bev(m, {52.5, 52.5, 1.0}, BevSpec{64, 20.0});
    CHECK(a.road_fraction() == 0.0f);
  }
  SUBCASE("translation by one tile over a periodic map is exact") {
    TileMap m = uniform_map(3, 3, Tile{TileKind::TJunction, 90});
    const RobotPose p{20.3, 17.9, 0.7};
    CHECK(render_bev(m, p) == render_bev(m, {p.x + 15.0, p.y, p.heading}));
    CHECK(render_bev(m, p) == render_bev(m, {p.x, p.y - 15.0, p.heading}));
  }
  SUBCASE("parallel raster equals the serial reference") {
    Rng rng(3);
    TileMap m = generate_map(5, 5, rng);
    for (int k = 0; k < 20; ++k) {
      RobotPose p = sample_road_pose(m, rng);
      CHECK(render_bev(m, p, {128, 20.0}) == render_bev_reference(m, p, {128, 20.0}));
    }
  }
}

TEST_CASE("curb_collision") {
  TileMap m = uniform_map(3, 3, kStraightNS);
  CHECK_FALSE(curb_collision(m, {22.5, 20.0, 0}));
  TileMap e(3, 3);
  CHECK(curb_collision(e, {22.5, 22.5, 0}));
  // Road edge at x = 25.0.
  CHECK_FALSE(curb_collision(m, {25.05, 20.0, 0}, 0.1));
  CHECK(curb_collision(m, {25.15, 20.0, 0}, 0.1));
}

TEST_CASE("distance_to_road agrees with a brute-force raster oracle") {
  Rng rng(5);
  TileMap m = generate_map(4, 4, rng);
  std::uniform_real_distribution<double> u(2.0, 58.0);
  constexpr double kCell = 0.02;
  for (int trial = 0; trial < 30; ++trial) {
    const double x = u(rng), y = u(rng);
    double best = 1e9;
    for (double dy = -3; dy <= 3; dy += kCell)
      for (double dx = -3; dx <= 3; dx += kCell)
        if (m.on_road(x + dx, y + dy)) best = std::min(best, std::hypot(dx, dy));
    const double d = m.distance_to_road(x, y);
    if (best > 2.9) {
      CHECK(d > 2.8);
      continue;
    }
    CHECK(std::abs(d - best) < 2 * kCell);
  }
}

TEST_CASE("render_fpv") {
  TileMap m = uniform_map(4, 4, kStraightNS);
  RenderStyle style;  // palette 0, flat texture, no noise
  CameraSpec cam;
  cam.far_m = 1e9;  // disable distance fog so colours stay pure
  const RobotPose pose{22.5, 22.5, kPi / 2};
  const FpvImage img = render_fpv(m, pose, style, 1, cam);
  const StyledPalette pal = styled_palette(style);
  auto px = [&](int r, int c) {
    const std::uint8_t* p = img.rgb.data() + (static_cast<std::size_t>(r) * img.width + c) * 3;
    return std::array<float, 3>{p[0] / 255.0f, p[1] / 255.0f, p[2] / 255.0f};
  };
  auto dist = [](std::array<float, 3> a, std::array<float, 3> b) {
    return std::hypot(a[0] - b[0], a[1] - b[1], a[2] - b[2]);
  };
  const double horizon = cam.horizon_row(cam.pitch_rad);

  SUBCASE("rows above the horizon hold sky colours only") {
    for (int r = 0; r < static_cast<int>(std::floor(horizon)); ++r)
      for (int c = 0; c < img.width; ++c) {
        // Distance from the pixel to the sky_top..sky_horizon segment.
        const auto p = px(r, c);
        double best = 1e9;
        for (int k = 0; k <= 100; ++k) {
          const float a = k / 100.0f;
          std::array<float, 3> q{};
          for (int ch = 0; ch < 3; ++ch) q[static_cast<std::size_t>(ch)] = a * pal.sky_top[static_cast<std::size_t>(ch)] + (1 - a) * pal.sky_horizon[static_cast<std::size_t>(ch)];
          best = std::min(best, static_cast<double>(dist(p, q)));
        }
        CHECK(best < 0.02);
      }
  }
  SUBCASE("same pose, style and seed render identically") {
    RenderStyle noisy = style;
    noisy.noise = 0.05f;
    CHECK(render_fpv(m, pose, noisy, 9) == render_fpv(m, pose, noisy, 9));
    CHECK_FALSE(render_fpv(m, pose, noisy, 9) == render_fpv(m, pose, noisy, 10));
  }
  SUBCASE("road along the view axis projects to a trapezoid") {
    // Ground-plane oracle: column c is road iff |c + 0.5 - W/2| <= hw * f * ray_down / h.
    const double f = cam.focal(), cp = std::cos(cam.pitch_rad), sp = std::sin(cam.pitch_rad);
    int prev_width = 0;
    for (int r = static_cast<int>(std::ceil(horizon)) + 1; r < img.height; ++r) {
      const double yd = (r + 0.5 - 0.5 * img.height) / f;
      const double ray_down = yd * cp + sp;
      const double lateral_extent = cam.height_m / ray_down * (0.5 * img.width) / f;
      if (lateral_extent > 12.0) continue;  // neighbouring parallel roads come into view
      int expected = 0, width = 0, first = -1, last = -1;
      for (int c = 0; c < img.width; ++c) {
        if (std::abs(c + 0.5 - 0.5 * img.width) <= 2.5 * f * ray_down / cam.height_m) ++expected;
        if (dist(px(r, c), pal.road) < dist(px(r, c), pal.ground)) {
          ++width;
          if (first < 0) first = c;
          last = c;
        }
      }
      CHECK(std::abs(width - expected) <= 1);
      CHECK(last - first + 1 == width);                      // contiguous
      CHECK(std::abs((first + last + 1) - img.width) <= 1);  // centred
      CHECK(width >= prev_width);                            // widens toward the bottom
      prev_width = width;
    }
    CHECK(prev_width > 0);
  }
}

TEST_CASE("style families use disjoint palettes and textures") {
  Rng rng(2);
  for (int k = 0; k < 200; ++k) {
    const RenderStyle tr = sample_style(StyleFamily::Train, rng), ho = sample_style(StyleFamily::Holdout, rng);
    CHECK_FALSE(palette_is_holdout(tr.palette));
    CHECK_FALSE(texture_is_holdout(tr.texture));
    CHECK(palette_is_holdout(ho.palette));
    CHECK(texture_is_holdout(ho.texture));
  }
}

TEST_CASE("make_waypoints") {
  SUBCASE("straight 10 m at 1 m resolution") {
    TileMap m = uniform_map(3, 3, kStraightNS);
    auto w = make_waypoints(m, {7.5, 2.0}, {7.5, 12.0}, 1.0);
    REQUIRE(w.size() == 10);
    for (const auto& p : w) CHECK(p.x == doctest::Approx(7.5));
    CHECK(w.back().y == doctest::Approx(12.0));
    CHECK(w.front().y == doctest::Approx(3.0));
  }
  SUBCASE("start equal to goal") {
    TileMap m = uniform_map(3, 3, kStraightNS);
    auto w = make_waypoints(m, {7.5, 4.0}, {7.5, 4.0}, 1.0);
    REQUIRE(w.size() == 1);
    CHECK(w[0].y == 4.0);
  }
  SUBCASE("L-shaped route of two 5 m legs") {
    TileMap m = l_map();
    REQUIRE(m.consistent());
    const Point2 start{22.5, 17.5}, goal{27.5, 22.5};
    auto w = make_waypoints(m, start, goal, 1.0);
    REQUIRE(w.size() == 10);
    double arc = std::hypot(w[0].x - start.x, w[0].y - start.y);
    for (std::size_t k = 1; k < w.size(); ++k) arc += std::hypot(w[k].x - w[k - 1].x, w[k].y - w[k - 1].y);
    CHECK(std::abs(arc - 10.0) < 0.1);
    CHECK(w.back().x == goal.x);
  }
  SUBCASE("route across several tiles stays on road") {
    Rng rng(4);
    TileMap m = generate_map(5, 5, rng);
    for (int k = 0; k < 20; ++k) {
      RobotPose a = sample_road_pose(m, rng, 0, 0), b = sample_road_pose(m, rng, 0, 0);
      auto w = make_waypoints(m, {a.x, a.y}, {b.x, b.y}, 1.0);
      for (const auto& p : w) CHECK(m.on_road(p.x, p.y));
      for (std::size_t i = 1; i + 1 < w.size(); ++i)
        CHECK(std::hypot(w[i].x - w[i - 1].x, w[i].y - w[i - 1].y) <= 1.0 + 1e-9);
    }
  }
  SUBCASE("unreachable goal") {
    TileMap m(4, 1);
    m.set(0, 0, Tile::from_arms(kEast));
    m.set(1, 0, Tile::from_arms(kWest));
    m.set(2, 0, Tile::from_arms(kEast));
    m.set(3, 0, Tile::from_arms(kWest));
    CHECK(m.consistent());
    CHECK_THROWS_AS(make_waypoints(m, {7.5, 7.5}, {52.5, 7.5}, 1.0), NoRouteError);
  }
}

TEST_CASE("local_class") {
  TileMap straight = uniform_map(3, 3, kStraightNS);
  CHECK(local_class(straight, {22.5, 22.5, kPi / 2}) == RoadClass::Straight);
  TileMap cross = uniform_map(3, 3, kCross);
  for (int k = 0; k < 4; ++k) CHECK(local_class(cross, {22.5, 22.5, k * kPi / 2}) == RoadClass::Crossroad);

  // Curve joining south and east arms: arriving from the south heading north
  // turns right; arriving from the east heading west turns left.
  TileMap l = l_map();
  CHECK(local_class(l, {22.5, 19.0, kPi / 2}) == RoadClass::RightCurve);
  CHECK(local_class(l, {26.0, 22.5, kPi}) == RoadClass::LeftCurve);

  TileMap empty(2, 2);
  CHECK_THROWS_AS(local_class(empty, {5, 5, 0}), ContractError);
}

TEST_CASE("collect_trajectory") {
  TileMap m = uniform_map(2, 6, kStraightNS);
  Rng rng(1);
  CollectSpec spec;
  spec.steps = 1;
  CHECK(collect_trajectory(m, {}, spec, RenderStyle{}, rng).records.size() == 1);

  spec.steps = 50;
  const RobotPose start{7.5, 10.0, kPi / 2};
  Rng r2(2);
  auto traj = collect_trajectory(m, {}, spec, RenderStyle{}, r2, &start);
  REQUIRE(traj.records.size() == 50);
  CHECK(traj.records.back().pose.y - start.y > 2.0);
  for (const auto& rec : traj.records) CHECK(rec.bev == render_bev(m, rec.pose));
  for (std::size_t k = 1; k < traj.records.size(); ++k) CHECK(traj.records[k].t > traj.records[k - 1].t);

  Rng a(7), b(7);
  Rng ma(3);
  TileMap gm = generate_map(5, 5, ma);
  RenderStyle st = sample_style(StyleFamily::Train, a);
  (void)sample_style(StyleFamily::Train, b);
  auto ta = collect_trajectory(gm, {}, spec, st, a), tb = collect_trajectory(gm, {}, spec, st, b);
  REQUIRE(ta.records.size() == tb.records.size());
  for (std::size_t k = 0; k < ta.records.size(); ++k) {
    CHECK(ta.records[k].fpv == tb.records[k].fpv);
    CHECK(ta.records[k].pose.x == tb.records[k].pose.x);
  }
}

TEST_CASE("scripted follower stays on the road") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    TileMap m = generate_map(6, 6, rng);
    CollectSpec spec;
    spec.steps = 400;
    auto traj = collect_trajectory(m, {}, spec, RenderStyle{}, rng);
    for (const auto& rec : traj.records) CHECK_FALSE(curb_collision(m, rec.pose));
  }
}

TEST_CASE("dataset write/read") {
  Rng rng(5);
  TileMap m = generate_map(4, 4, rng);
  CollectSpec spec;
  spec.steps = 6;
  std::vector<Trajectory> trajs;
  for (int k = 0; k < 2; ++k) trajs.push_back(collect_trajectory(m, {}, spec, sample_style(StyleFamily::Train, rng), rng));

  SUBCASE("roundtrip is record-by-record identity") {
    const fs::path dir = temp_dir("ds_roundtrip");
    write_dataset(trajs, dir);
    auto back = read_dataset(dir);
    REQUIRE(back.size() == trajs.size());
    for (std::size_t s = 0; s < trajs.size(); ++s) {
      CHECK(back[s].style == trajs[s].style);
      REQUIRE(back[s].records.size() == trajs[s].records.size());
      for (std::size_t k = 0; k < trajs[s].records.size(); ++k) {
        const auto &a = trajs[s].records[k], &b = back[s].records[k];
        CHECK(a.fpv == b.fpv);
        CHECK(a.bev == b.bev);
        CHECK(a.action.throttle == b.action.throttle);
        CHECK(a.action.steer == b.action.steer);
        CHECK(a.pose.x == b.pose.x);
        CHECK(a.pose.y == b.pose.y);
        CHECK(a.pose.heading == b.pose.heading);
        CHECK(a.cls == b.cls);
        CHECK(a.t == b.t);
      }
    }
  }
  SUBCASE("empty dataset") {
    const fs::path dir = temp_dir("ds_empty");
    write_dataset({}, dir);
    CHECK(read_dataset(dir).empty());
  }
  SUBCASE("truncated image names the file") {
    const fs::path dir = temp_dir("ds_trunc");
    write_dataset(trajs, dir);
    const fs::path victim = dir / "seq_0001" / "bev_000003.pgm";
    fs::resize_file(victim, fs::file_size(victim) - 100);
    try {
      read_dataset(dir);
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(std::string(e.what()).find("bev_000003.pgm") != std::string::npos);
    }
    CHECK_THROWS_AS(read_pgm(victim), FormatError);
  }
  SUBCASE("corruption classes are distinct") {
    const fs::path dir = temp_dir("ds_corrupt");
    write_dataset(trajs, dir);
    {
      std::fstream f(dir / "seq_0000" / "fpv_000001.ppm", std::ios::in | std::ios::out | std::ios::binary);
      f.seekp(100);
      f.put('\x7f');
    }
    CHECK_THROWS_AS(read_dataset(dir), ChecksumError);
    fs::remove(dir / "seq_0000" / "fpv_000001.ppm");
    CHECK_THROWS_AS(read_dataset(dir), MissingFileError);
    std::ofstream(dir / "manifest.json") << "{\"format_version\": \"1\", \"sequences\": [";
    CHECK_THROWS_AS(read_dataset(dir), FormatError);
  }
}
