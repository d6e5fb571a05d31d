#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <set>

#include "objdb/synth.hpp"
#include "test_util.hpp"

using namespace objdb;
using namespace objdb::synth;

namespace {

// Deterministic unit vectors spread over the sphere.
std::vector<Vec3> probe_directions(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<Vec3> dirs;
  for (int i = 0; i < n; ++i) {
    Vec3 v(g(rng), g(rng), g(rng));
    if (v.norm() < 1e-6) v = Vec3(1, 0, 0);
    dirs.push_back(v.normalized());
  }
  return dirs;
}

}  // namespace

TEST_CASE("primitive signed distances match hand values", "[synth]") {
  const Shape sphere = make_sphere(0.5);
  CHECK(sphere.signed_distance(Vec3(0, 0, 0)) == Catch::Approx(-0.5));
  CHECK(sphere.signed_distance(Vec3(1, 0, 0)) == Catch::Approx(0.5));
  CHECK(sphere.signed_distance(Vec3(0, 0.5, 0)) == Catch::Approx(0.0).margin(1e-15));

  const Shape box = make_box(Vec3(1.0, 2.0, 3.0));
  CHECK(box.signed_distance(Vec3(0, 0, 0)) == Catch::Approx(-1.0));
  CHECK(box.signed_distance(Vec3(1.5, 0, 0)) == Catch::Approx(0.5));
  CHECK(box.signed_distance(Vec3(2.0, 3.0, 0)) == Catch::Approx(std::sqrt(2.0)));
  CHECK(box.signed_distance(Vec3(0.9, 1.9, 2.9)) == Catch::Approx(-0.1));

  const Shape cyl = make_cylinder(1.0, 2.0);
  CHECK(cyl.signed_distance(Vec3(0, 0, 0)) == Catch::Approx(-1.0));
  CHECK(cyl.signed_distance(Vec3(2.0, 0, 0)) == Catch::Approx(1.0));
  CHECK(cyl.signed_distance(Vec3(0, 0, 3.0)) == Catch::Approx(1.0));
  CHECK(cyl.signed_distance(Vec3(2.0, 0, 3.0)) == Catch::Approx(std::sqrt(2.0)));

  // Unit tetrahedron-ish plane set: x,y,z >= 0 and x+y+z <= 1.
  const Shape tet = make_plane_set({{Vec3(-1, 0, 0), 0.0},
                                    {Vec3(0, -1, 0), 0.0},
                                    {Vec3(0, 0, -1), 0.0},
                                    {Vec3(1, 1, 1), 1.0}});
  CHECK(tet.signed_distance(Vec3(0.1, 0.1, 0.1)) < 0.0);
  CHECK(tet.signed_distance(Vec3(-0.2, 0.1, 0.1)) == Catch::Approx(0.2));
  CHECK(tet.signed_distance(Vec3(1, 1, 1)) > 0.0);

  const Shape two = make_union({{make_sphere(0.3), RigidTransform::from_translation(Vec3(1, 0, 0))},
                                {make_sphere(0.4), RigidTransform::from_translation(Vec3(-1, 0, 0))}});
  CHECK(two.signed_distance(Vec3(1, 0, 0)) == Catch::Approx(-0.3));
  CHECK(two.signed_distance(Vec3(-1, 0, 0)) == Catch::Approx(-0.4));
  CHECK(two.signed_distance(Vec3(0, 0, 0)) == Catch::Approx(0.6));
}

TEST_CASE("raycast hits lie on the zero set and are first hits", "[synth]") {
  const std::vector<Shape> shapes = {
      make_sphere(0.4), make_box(Vec3(0.3, 0.2, 0.5)), make_cylinder(0.25, 0.4),
      synth::detail::benchmark_crate(),
      make_union({{make_sphere(0.25), RigidTransform::from_translation(Vec3(0.2, 0, 0.1))},
                  {make_box(Vec3(0.2, 0.15, 0.1)), RigidTransform::identity()}})};
  int hits = 0;
  for (const Shape& shape : shapes) {
    const Aabb box = shape.bounds();
    const Vec3 center = 0.5 * (box.min + box.max);
    for (const Vec3& dir : probe_directions(120, 7)) {
      const Vec3 origin = center - 3.0 * dir + Vec3(0.013, -0.007, 0.004);
      const auto t = shape.raycast(origin, dir);
      if (!t) continue;
      ++hits;
      const Vec3 hit = origin + *t * dir;
      CHECK(std::abs(shape.signed_distance(hit)) < 1e-9);
      // No earlier surface crossing: all strictly earlier samples are outside.
      for (int i = 1; i < 40; ++i) {
        const double tt = *t * i / 40.0;
        CHECK(shape.signed_distance(origin + tt * dir) > -1e-9);
      }
    }
  }
  CHECK(hits > 300);
}

TEST_CASE("surface samples lie on the surface", "[synth]") {
  const std::vector<Shape> shapes = {make_sphere(0.4), make_box(Vec3(0.3, 0.2, 0.5)),
                                     make_cylinder(0.25, 0.4), synth::detail::benchmark_crate()};
  for (const Shape& shape : shapes) {
    PointCloud cloud;
    shape.sample_surface(0.02, &cloud);
    REQUIRE(cloud.size() > 500);
    for (const auto& p : cloud.points) CHECK(std::abs(shape.signed_distance(p)) < 1e-6);
  }
}

TEST_CASE("fronto-parallel plane renders constant depth", "[synth]") {
  SceneSpec spec;
  spec.name = "plane";
  spec.prototypes.emplace_back("slab", make_box(Vec3(5.0, 5.0, 0.05)));
  Instance inst;
  inst.prototype = 0;
  inst.pose = RigidTransform::from_translation(Vec3(0, 0, 2.05));  // near face at z = 2
  spec.instances.push_back(inst);
  spec.trajectory.push_back(RigidTransform::identity());

  const RenderedFrame frame = render_frame(spec, spec.trajectory[0], 0);
  int valid = 0;
  for (int y = 0; y < frame.depth.height(); ++y)
    for (int x = 0; x < frame.depth.width(); ++x) {
      REQUIRE(frame.depth.valid_at(x, y));
      CHECK(std::abs(frame.depth.depth.at(x, y) - 2.0) < 1e-6);
      CHECK(frame.labels.at(x, y) == 1u);
      ++valid;
    }
  CHECK(valid == 320 * 240);
}

TEST_CASE("sphere on the optical axis renders distance minus radius", "[synth]") {
  SceneSpec spec;
  spec.sensor.intrinsics = {260.0, 260.0, 160.0, 120.0};  // integer principal point
  spec.prototypes.emplace_back("ball", make_sphere(0.3));
  Instance inst;
  inst.prototype = 0;
  inst.pose = RigidTransform::from_translation(Vec3(0, 0, 1.7));
  spec.instances.push_back(inst);
  const RenderedFrame frame = render_frame(spec, RigidTransform::identity(), 0);
  CHECK(std::abs(frame.depth.depth.at(160, 120) - 1.4) < 1e-6);
  CHECK(frame.labels.at(160, 120) == 1u);
  CHECK(frame.depth.depth.at(0, 0) == 0.0f);  // ray misses the ball
  CHECK(frame.labels.at(0, 0) == 0u);
}

TEST_CASE("noise-free back-projections lie on the analytic surface", "[synth]") {
  const Benchmark bench = make_benchmark("two-view");
  const SceneSpec& spec = bench.sessions[0];
  const RigidTransform pose = spec.trajectory[3];
  const RenderedFrame frame = render_frame(spec, pose, 0);
  int checked = 0;
  for (int y = 0; y < frame.depth.height(); y += 3)
    for (int x = 0; x < frame.depth.width(); x += 3) {
      if (!frame.depth.valid_at(x, y)) continue;
      const Vec3 world = pose * frame.depth.backproject(x, y);
      CHECK(std::abs(scene_sdf(spec, world)) < 1e-6);
      ++checked;
    }
  CHECK(checked > 300);
}

TEST_CASE("rendering is deterministic and seed-sensitive", "[synth]") {
  const Benchmark bench = make_benchmark("repeat-3");
  SceneSpec spec = bench.sessions[0];
  spec.sensor.depth_noise_coeff = 0.0025;
  spec.sensor.invalid_prob = 0.01;
  const RigidTransform pose = spec.trajectory[0];
  const RenderedFrame a = render_frame(spec, pose, 42);
  const RenderedFrame b = render_frame(spec, pose, 42);
  const RenderedFrame c = render_frame(spec, pose, 43);
  REQUIRE(a.depth.depth.data() == b.depth.depth.data());
  REQUIRE(a.labels.data() == b.labels.data());
  CHECK(a.depth.depth.data() != c.depth.depth.data());
}

TEST_CASE("depth noise magnitude follows the quadratic model", "[synth]") {
  SceneSpec spec;
  spec.prototypes.emplace_back("slab", make_box(Vec3(5.0, 5.0, 0.05)));
  Instance inst;
  inst.prototype = 0;
  inst.pose = RigidTransform::from_translation(Vec3(0, 0, 2.05));
  spec.instances.push_back(inst);
  spec.sensor.depth_noise_coeff = 0.0025;
  const RenderedFrame frame = render_frame(spec, RigidTransform::identity(), 9);
  double sum = 0.0, sum_sq = 0.0;
  int n = 0;
  for (int y = 0; y < frame.depth.height(); ++y)
    for (int x = 0; x < frame.depth.width(); ++x) {
      REQUIRE(frame.depth.valid_at(x, y));
      const double err = frame.depth.depth.at(x, y) - 2.0;
      sum += err;
      sum_sq += err * err;
      ++n;
    }
  const double mean = sum / n;
  const double sigma = std::sqrt(sum_sq / n - mean * mean);
  // sigma(2 m) = 0.0025 * 4 = 0.01 m.
  CHECK(std::abs(mean) < 5e-4);
  CHECK(sigma == Catch::Approx(0.01).epsilon(0.05));
}

TEST_CASE("label corruption changes the requested fraction of pixels", "[synth]") {
  const Benchmark bench = make_benchmark("repeat-3");
  const SceneSpec& spec = bench.sessions[0];
  const RenderedFrame frame = render_frame(spec, spec.trajectory[2], 0);
  const auto corrupted = corrupt_labels(frame.labels, 0.2, 77);
  int labeled = 0, changed = 0;
  for (int y = 0; y < frame.labels.height(); ++y)
    for (int x = 0; x < frame.labels.width(); ++x) {
      const std::uint32_t orig = frame.labels.at(x, y);
      const std::uint32_t got = corrupted.at(x, y);
      if (orig == 0) {
        REQUIRE(got == 0);
        continue;
      }
      ++labeled;
      if (got != orig) {
        ++changed;
        CHECK(got != 0);
      }
    }
  REQUIRE(labeled > 10000);
  const double rate = static_cast<double>(changed) / labeled;
  CHECK(rate == Catch::Approx(0.2).epsilon(0.05));
  // Zero probability leaves the image untouched.
  const auto untouched = corrupt_labels(frame.labels, 0.0, 77);
  CHECK(untouched.data() == frame.labels.data());
}

TEST_CASE("benchmarks construct valid scenes with pinned shapes", "[synth]") {
  const Benchmark two = make_benchmark("two-view");
  REQUIRE(two.sessions.size() == 2);
  CHECK(two.sessions[0].instances.size() == 1);
  CHECK(two.sessions[0].floor_instance == -1);
  CHECK(two.sessions[0].trajectory.size() == two.sessions[1].trajectory.size());

  const Benchmark rep = make_benchmark("repeat-3");
  REQUIRE(rep.sessions.size() == 1);
  const SceneSpec& r = rep.sessions[0];
  CHECK(r.instances.size() == 6);  // floor + 3 crates + barrel + ball
  CHECK(r.floor_instance == 0);
  int crates = 0;
  for (const auto& inst : r.instances)
    if (r.prototypes[inst.prototype].first == "crate") ++crates;
  CHECK(crates == 3);

  const Benchmark pair = make_benchmark("session-pair");
  REQUIRE(pair.sessions.size() == 2);
  REQUIRE(pair.sessions[0].instances.size() == pair.sessions[1].instances.size());
  bool rearranged = false;
  for (std::size_t i = 0; i < pair.sessions[0].instances.size(); ++i) {
    const Vec3 da = pair.sessions[0].instances[i].pose.translation;
    const Vec3 db = pair.sessions[1].instances[i].pose.translation;
    if ((da - db).norm() > 0.05 && static_cast<int>(i) != pair.sessions[0].floor_instance)
      rearranged = true;
  }
  CHECK(rearranged);

  CHECK_THROWS_AS(make_benchmark("nope"), SceneError);
}

TEST_CASE("two-view arcs each miss part of the surface but jointly cover it", "[synth]") {
  const Benchmark bench = make_benchmark("two-view");
  const PointCloud gt = instance_surface_points(bench.sessions[0], 0, 0.01);
  REQUIRE(gt.size() > 2000);

  auto observed_points = [](const SceneSpec& spec) {
    PointCloud cloud;
    for (std::size_t f = 0; f < spec.trajectory.size(); ++f) {
      const RenderedFrame frame = render_frame(spec, spec.trajectory[f], 0);
      for (int y = 0; y < frame.depth.height(); y += 2)
        for (int x = 0; x < frame.depth.width(); x += 2)
          if (frame.depth.valid_at(x, y))
            cloud.points.push_back(spec.trajectory[f] * frame.depth.backproject(x, y));
    }
    return cloud;
  };

  const PointCloud obs_a = observed_points(bench.sessions[0]);
  const PointCloud obs_b = observed_points(bench.sessions[1]);
  PointCloud obs_union = obs_a;
  obs_union.append(obs_b);

  const double tol = 0.015;
  const double cov_a = coverage_fraction(gt, obs_a, tol);
  const double cov_b = coverage_fraction(gt, obs_b, tol);
  const double cov_union = coverage_fraction(gt, obs_union, tol);
  INFO("coverage a=" << cov_a << " b=" << cov_b << " union=" << cov_union);
  CHECK(cov_a <= 0.70);
  CHECK(cov_b <= 0.70);
  CHECK(cov_a >= 0.40);
  CHECK(cov_b >= 0.40);
  CHECK(cov_union > 0.95);
}

TEST_CASE("overlapping instances are rejected", "[synth]") {
  SceneSpec spec;
  spec.prototypes.emplace_back("ball", make_sphere(0.2));
  Instance a, b;
  a.prototype = b.prototype = 0;
  a.pose = RigidTransform::identity();
  b.pose = RigidTransform::from_translation(Vec3(0.1, 0, 0));
  spec.instances = {a, b};
  CHECK_THROWS_AS(validate_scene(spec), SceneError);
  // Separated instances pass.
  spec.instances[1].pose = RigidTransform::from_translation(Vec3(0.6, 0, 0));
  CHECK_NOTHROW(validate_scene(spec));
}

TEST_CASE("analytic instance grids band the surface", "[synth]") {
  SceneSpec spec;
  spec.prototypes.emplace_back("ball", make_sphere(0.1));
  Instance inst;
  inst.prototype = 0;
  inst.pose = RigidTransform::from_translation(Vec3(0.3, -0.2, 0.5));
  spec.instances.push_back(inst);
  GridLayout layout;
  const TsdfGrid grid = analytic_instance_grid(spec, 0, layout);
  REQUIRE(grid.observed_voxel_count() > 1000);
  grid.for_each_observed([&](const VoxelIndex& v, const TsdfVoxel& voxel) {
    const double d = instance_sdf(spec, 0, grid.voxel_center(v));
    CHECK(std::abs(voxel.distance - d) < 1e-6);
    CHECK(std::abs(d) <= layout.truncation_distance + 1e-9);
  });
}

TEST_CASE("scene specs round-trip through the text format", "[synth]") {
  testutil::TempDir tmp("synth");
  for (const char* name : {"two-view", "repeat-3", "session-pair"}) {
    const Benchmark bench = make_benchmark(name);
    for (std::size_t s = 0; s < bench.sessions.size(); ++s) {
      const SceneSpec& spec = bench.sessions[s];
      const std::string path = tmp.file(spec.name + ".txt");
      write_scene_spec(spec, path);
      const SceneSpec back = read_scene_spec(path);
      CHECK(back.name == spec.name);
      CHECK(back.seed == spec.seed);
      CHECK(back.floor_instance == spec.floor_instance);
      REQUIRE(back.prototypes.size() == spec.prototypes.size());
      REQUIRE(back.instances.size() == spec.instances.size());
      REQUIRE(back.trajectory.size() == spec.trajectory.size());
      // Rendering from the reloaded spec is bit-identical.
      const RenderedFrame a = render_frame(spec, spec.trajectory[0], 5);
      const RenderedFrame b = render_frame(back, back.trajectory[0], 5);
      CHECK(a.depth.depth.data() == b.depth.depth.data());
      CHECK(a.labels.data() == b.labels.data());
    }
  }
}

TEST_CASE("datasets serialize depth and labels losslessly enough", "[synth]") {
  testutil::TempDir tmp("synth");
  Benchmark bench = make_benchmark("two-view");
  SceneSpec spec = bench.sessions[0];
  spec.trajectory.resize(2);
  generate_dataset(spec, tmp.path.string());

  const Trajectory traj = read_trajectory(tmp.file("trajectory.txt"));
  REQUIRE(traj.frames.size() == 2);
  CHECK(traj.intrinsics.fx == spec.sensor.intrinsics.fx);

  const auto depth_raw = read_pgm16(tmp.file("depth_0000.pgm"));
  const auto labels_raw = read_pgm16(tmp.file("labels_0000.pgm"));
  const Image<float> depth = decode_depth(depth_raw);
  const auto labels = decode_labels(labels_raw);
  const RenderedFrame direct = render_frame(spec, spec.trajectory[0], frame_noise_seed(spec.seed, 0));
  int valid = 0;
  for (int y = 0; y < depth.height(); ++y)
    for (int x = 0; x < depth.width(); ++x) {
      CHECK(std::abs(depth.at(x, y) - direct.depth.depth.at(x, y)) <= 0.5 / kDepthScale + 1e-7);
      CHECK(labels.at(x, y) == direct.labels.at(x, y));
      if (depth.at(x, y) > 0) ++valid;
    }
  CHECK(valid > 2000);
}
