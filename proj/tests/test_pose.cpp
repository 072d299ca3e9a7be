#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <stdexcept>
#include <vector>

#include "posemb/pose.hpp"
#include "posemb/rng.hpp"
#include "test_util.hpp"

using namespace posemb;
using namespace posemb::testutil;

TEST_CASE("distance of a pose to itself is exactly zero") {
  Rng rng = make_rng(11);
  for (int i = 0; i < 50; ++i) {
    Pose p = random_pose(rng, i);
    CHECK(pose_distance(p, p) == 0.0);
  }
}

TEST_CASE("distance is exactly symmetric") {
  Rng rng = make_rng(12);
  for (int i = 0; i < 50; ++i) {
    Pose a = random_pose(rng, 2 * i);
    Pose b = random_pose(rng, 2 * i + 1);
    CHECK(pose_distance(a, b) == pose_distance(b, a));
  }
}

TEST_CASE("non-root joints offset by (3,4) give mean distance 4.6875") {
  // 15 joints contribute exactly 5 each, the root contributes the zero term
  // of the 16-way mean: 75 / 16 = 4.6875, exact in double precision.
  Rng rng = make_rng(13);
  Pose a = grid_pose(rng, 0);
  Pose b = a;
  b.id = 1;
  for (int j = 0; j < kJointCount; ++j) {
    if (j == a.root_index) continue;
    b.joints[j].x += 3.0;
    b.joints[j].y += 4.0;
  }
  CHECK(pose_distance(a, b) == 4.6875);
}

TEST_CASE("translation invariance is exact on grid-aligned poses") {
  Rng rng = make_rng(14);
  for (int i = 0; i < 100; ++i) {
    Pose a = grid_pose(rng, 2 * i);
    Pose b = grid_pose(rng, 2 * i + 1);
    double base = pose_distance(a, b);
    double tx = grid_offset(rng);
    double ty = grid_offset(rng);
    CHECK(pose_distance(translated(a, tx, ty, 100), b) == base);
    CHECK(pose_distance(a, translated(b, tx, ty, 101)) == base);
  }
}

TEST_CASE("translation invariance holds to rounding for arbitrary offsets") {
  Rng rng = make_rng(15);
  for (int i = 0; i < 50; ++i) {
    Pose a = random_pose(rng, 2 * i);
    Pose b = random_pose(rng, 2 * i + 1);
    double base = pose_distance(a, b);
    double tx = uniform_in(rng, -500.0, 500.0);
    double ty = uniform_in(rng, -500.0, 500.0);
    CHECK(pose_distance(translated(a, tx, ty, 100), b) == doctest::Approx(base).epsilon(1e-12));
  }
}

TEST_CASE("triangle inequality within 1e-9 relative") {
  Rng rng = make_rng(16);
  for (int i = 0; i < 200; ++i) {
    Pose a = random_pose(rng, 0);
    Pose b = random_pose(rng, 1);
    Pose c = random_pose(rng, 2);
    double ab = pose_distance(a, b);
    double bc = pose_distance(b, c);
    double ac = pose_distance(a, c);
    CHECK(ac <= (ab + bc) * (1.0 + 1e-9));
  }
}

TEST_CASE("center_pose puts the root offset at exactly (0,0)") {
  Rng rng = make_rng(17);
  Pose p = random_pose(rng, 7);
  CenteredPose c = center_pose(p);
  CHECK(c[p.root_index].x == 0.0);
  CHECK(c[p.root_index].y == 0.0);
}

TEST_CASE("pose validation") {
  Pose p = point_pose(0, 1.0, 2.0);
  CHECK(pose_is_valid(p));

  SUBCASE("non-finite joint is invalid") {
    p.joints[3].x = std::nan("");
    std::string reason;
    CHECK_FALSE(pose_is_valid(p, &reason));
    CHECK(!reason.empty());
    CHECK_THROWS_AS(validate_pose(p), std::invalid_argument);
  }
  SUBCASE("infinite joint is invalid") {
    p.joints[9].y = std::numeric_limits<double>::infinity();
    CHECK_FALSE(pose_is_valid(p));
  }
  SUBCASE("root index out of range is invalid") {
    p.root_index = 16;
    CHECK_FALSE(pose_is_valid(p));
    p.root_index = -1;
    CHECK_FALSE(pose_is_valid(p));
  }
}

TEST_CASE("dataset rejects duplicate ids and invalid poses") {
  PoseDataset ds;
  ds.add(point_pose(5, 0, 0));
  CHECK_THROWS_AS(ds.add(point_pose(5, 1, 1)), std::invalid_argument);
  Pose bad = point_pose(6, 0, 0);
  bad.joints[0].x = std::nan("");
  CHECK_THROWS_AS(ds.add(bad), std::invalid_argument);
  CHECK(ds.size() == 1);
}

TEST_CASE("dataset lookup and split enumeration") {
  PoseDataset ds;
  ds.add(point_pose(30, 0, 0), Split::kQuery);
  ds.add(point_pose(10, 0, 0), Split::kTrain);
  ds.add(point_pose(20, 0, 0), Split::kTrain);
  ds.add(point_pose(25, 0, 0), Split::kDatabase);

  CHECK(ds.contains(20));
  CHECK_FALSE(ds.contains(21));
  CHECK_THROWS_AS(ds.index_of(21), std::out_of_range);
  CHECK(ds.pose_by_id(25).id == 25);
  CHECK(ds.split_of(30) == Split::kQuery);

  CHECK(ds.count_of(Split::kTrain) == 2);
  CHECK(ds.ids_of(Split::kTrain) == std::vector<PoseId>{10, 20});
  CHECK(ds.ids_of(Split::kDatabase) == std::vector<PoseId>{25});
  auto poses = ds.poses_of(Split::kTrain);
  REQUIRE(poses.size() == 2);
  CHECK(poses[0].id == 10);
  CHECK(poses[1].id == 20);
}

TEST_CASE("split tags round-trip through to_string") {
  for (Split s : {Split::kTrain, Split::kDatabase, Split::kQuery}) {
    auto back = split_from_string(to_string(s));
    REQUIRE(back.has_value());
    CHECK(*back == s);
  }
  CHECK_FALSE(split_from_string("holdout").has_value());
}

TEST_CASE("pairwise matrix equals the nested-loop distances exactly") {
  Rng rng = make_rng(18);
  PoseDataset ds;
  // Insert out of id order to exercise the ascending-id contract.
  for (int i = 0; i < 40; ++i) ds.add(random_pose(rng, (i * 17) % 40));
  DistanceMatrix m = pairwise_distance_matrix(ds);

  REQUIRE(m.size() == 40);
  for (std::size_t i = 1; i < m.ids.size(); ++i) CHECK(m.ids[i - 1] < m.ids[i]);
  for (std::size_t i = 0; i < m.size(); ++i) {
    const Pose& a = ds.pose_by_id(m.ids[i]);
    CHECK(m.at(i, i) == 0.0);
    for (std::size_t j = 0; j < m.size(); ++j) {
      const Pose& b = ds.pose_by_id(m.ids[j]);
      CHECK(m.at(i, j) == pose_distance(a, b));
      CHECK(m.at(i, j) == m.at(j, i));
    }
  }
}

TEST_CASE("pairwise matrix budget and empty-set errors") {
  PoseDataset empty;
  CHECK_THROWS_AS(pairwise_distance_matrix(empty), std::invalid_argument);

  Rng rng = make_rng(19);
  PoseDataset ds;
  for (int i = 0; i < 8; ++i) ds.add(random_pose(rng, i));
  CHECK_THROWS_AS(pairwise_distance_matrix(ds, 63), MatrixBudgetError);
  CHECK_NOTHROW(pairwise_distance_matrix(ds, 64));
}
