// Copyright 2026 The hpekd Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//    http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "hpekd/error.hpp"
#include "hpekd/pose_math.hpp"

#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

using namespace hpekd;

namespace {

using M3 = std::array<std::array<double, 3>, 3>;

// Hand-written elementary rotations, kept independent of the library code.
M3 mul(const M3& a, const M3& b)
{
    M3 c{};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            for (int k = 0; k < 3; ++k)
                c[i][j] += a[i][k] * b[k][j];
    return c;
}

M3 rx(double deg)
{
    const double t = deg * M_PI / 180.0, c = std::cos(t), s = std::sin(t);
    return {{{1, 0, 0}, {0, c, -s}, {0, s, c}}};
}

M3 ry(double deg)
{
    const double t = deg * M_PI / 180.0, c = std::cos(t), s = std::sin(t);
    return {{{c, 0, s}, {0, 1, 0}, {-s, 0, c}}};
}

M3 rz(double deg)
{
    const double t = deg * M_PI / 180.0, c = std::cos(t), s = std::sin(t);
    return {{{c, -s, 0}, {s, c, 0}, {0, 0, 1}}};
}

M3 oracle_matrix(const EulerPose& p)
{
    return mul(rz(p.roll), mul(ry(p.yaw), rx(p.pitch)));
}

double max_diff(const RotationMatrix& a, const M3& b)
{
    double d = 0.0;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            d = std::max(d, std::abs(a(i, j) - b[i][j]));
    return d;
}

double pose_diff(const EulerPose& a, const EulerPose& b)
{
    return std::max({std::abs(a.pitch - b.pitch), std::abs(a.yaw - b.yaw), std::abs(a.roll - b.roll)});
}

EulerPose random_pose(std::mt19937_64& rng, double max_yaw = 89.0)
{
    std::uniform_real_distribution<double> a(-179.0, 179.0);
    std::uniform_real_distribution<double> y(-max_yaw, max_yaw);
    return {a(rng), y(rng), a(rng)};
}

}   // namespace

TEST_CASE("mae examples")
{
    const std::vector<EulerPose> same{{1, 2, 3}, {4, 5, 6}};
    const auto zero = mae(same, same);
    CHECK(zero.per_angle == std::array<double, 3>{0, 0, 0});
    CHECK(zero.average == 0.0);

    const std::vector<EulerPose> pred{{13, 18, 30}};
    const std::vector<EulerPose> gt{{10, 20, 30}};
    const auto m = mae(pred, gt);
    CHECK(m.per_angle[0] == doctest::Approx(3.0));
    CHECK(m.per_angle[1] == doctest::Approx(2.0));
    CHECK(m.per_angle[2] == doctest::Approx(0.0));
    CHECK(m.average == doctest::Approx(5.0 / 3.0));

    const std::vector<EulerPose> pred2{{0, 0, 0}, {2, 0, 0}};
    const std::vector<EulerPose> gt2{{0, 0, 0}, {0, 0, 0}};
    const auto m2 = mae(pred2, gt2);
    CHECK(m2.per_angle[0] == doctest::Approx(1.0));
    CHECK(m2.average == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("mae errors")
{
    const std::vector<EulerPose> none;
    const std::vector<EulerPose> one{{1, 1, 1}};
    CHECK_THROWS_WITH_AS(mae(none, none), "empty evaluation set", Error);
    CHECK_THROWS_AS(mae(one, none), Error);
}

TEST_CASE("mae is non-negative and symmetric")
{
    std::mt19937_64 rng(1);
    std::vector<EulerPose> a, b;
    for (int i = 0; i < 100; ++i) {
        a.push_back(random_pose(rng));
        b.push_back(random_pose(rng));
    }
    const auto ab = mae(a, b);
    const auto ba = mae(b, a);
    CHECK(ab.average >= 0.0);
    CHECK(ab.per_angle == ba.per_angle);
    CHECK(ab.average == ba.average);
    // the sum over angles is the plain summed error of all components
    double total = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        for (int k = 0; k < 3; ++k)
            total += std::abs(a[i][k] - b[i][k]);
    CHECK(ab.per_angle[0] + ab.per_angle[1] + ab.per_angle[2] == doctest::Approx(total / a.size()));
}

TEST_CASE("pose_to_matrix matches hand-built rotations")
{
    CHECK(pose_to_matrix({0, 0, 0}).isApprox(RotationMatrix::Identity(), 1e-15));
    const RotationMatrix z90 = pose_to_matrix({0, 0, 90});
    CHECK(max_diff(z90, {{{0, -1, 0}, {1, 0, 0}, {0, 0, 1}}}) < 1e-12);

    std::mt19937_64 rng(2);
    for (int i = 0; i < 1000; ++i) {
        const EulerPose p = random_pose(rng);
        CHECK(max_diff(pose_to_matrix(p), oracle_matrix(p)) < 1e-12);
    }
}

TEST_CASE("matrix_to_pose examples")
{
    CHECK(pose_diff(matrix_to_pose(RotationMatrix::Identity()), {0, 0, 0}) < 1e-12);
    CHECK(pose_diff(matrix_to_pose(pose_to_matrix({10, 20, 30})), {10, 20, 30}) < 1e-6);
    CHECK(pose_diff(matrix_to_pose(pose_to_matrix({5, -40, 12})), {5, -40, 12}) < 1e-6);
    CHECK(pose_diff(matrix_to_pose(pose_to_matrix({0, 89.9, 0})), {0, 89.9, 0}) < 1e-3);
}

TEST_CASE("matrix_to_pose rejects gimbal lock and non-rotations")
{
    CHECK_THROWS_WITH_AS(matrix_to_pose(pose_to_matrix({0, 90, 0})), "degenerate Euler extraction", Error);
    RotationMatrix reflect = RotationMatrix::Identity();
    reflect(0, 0) = -1;
    CHECK_THROWS_AS(matrix_to_pose(reflect), Error);
    CHECK_THROWS_AS(matrix_to_pose(2.0 * RotationMatrix::Identity()), Error);
}

TEST_CASE("euler and matrix round trips")
{
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> a(-179.0, 179.0);
    for (int i = 0; i < 10000; ++i) {
        EulerPose p = random_pose(rng);
        // keep the wrapped representation unique
        p.pitch = std::uniform_real_distribution<double>(-179.0, 179.0)(rng);
        const RotationMatrix r = pose_to_matrix(p);
        CHECK(is_rotation(r));
        CHECK(pose_diff(matrix_to_pose(r), p) < 1e-6);
        CHECK((pose_to_matrix(matrix_to_pose(r)) - r).cwiseAbs().maxCoeff() < 1e-6);
    }
}

TEST_CASE("flip_pose agrees with mirroring the rotation matrix")
{
    CHECK(flip_pose({0, 0, 0}) == EulerPose{0, 0, 0});
    CHECK(flip_pose({10, 20, 30}) == EulerPose{10, -20, -30});

    // A horizontal flip conjugates the head rotation with x -> -x.
    RotationMatrix mirror = RotationMatrix::Identity();
    mirror(0, 0) = -1;
    std::mt19937_64 rng(4);
    for (int i = 0; i < 10000; ++i) {
        const EulerPose p = random_pose(rng);
        const RotationMatrix expected = mirror * pose_to_matrix(p) * mirror;
        CHECK((pose_to_matrix(flip_pose(p)) - expected).cwiseAbs().maxCoeff() < 1e-9);
        CHECK(flip_pose(flip_pose(p)) == p);
    }
}

TEST_CASE("rotate_pose examples and properties")
{
    CHECK(pose_diff(rotate_pose({0, 0, 10}, 5), {0, 0, 15}) < 1e-9);
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> phi(-30.0, 30.0);
    std::uniform_real_distribution<double> roll(-120.0, 120.0);
    for (int i = 0; i < 10000; ++i) {
        const EulerPose p = random_pose(rng, 85.0);
        const double f = phi(rng);
        CHECK(pose_diff(rotate_pose(p, 0.0), p) < 1e-9);
        CHECK(pose_diff(rotate_pose(rotate_pose(p, f), -f), p) < 1e-6);

        // matrix composition oracle
        const M3 expected = mul(rz(f), oracle_matrix(p));
        CHECK(max_diff(pose_to_matrix(rotate_pose(p, f)), expected) < 1e-9);

        const double r = roll(rng);
        CHECK(pose_diff(rotate_pose({0, 0, r}, f), {0, 0, r + f}) < 1e-9);
    }
}

TEST_CASE("project_axes follows the matrix columns")
{
    const auto flat = project_axes({0, 0, 0}, 50, 60, 10);
    CHECK(flat.axes[0].x == doctest::Approx(60));
    CHECK(flat.axes[0].y == doctest::Approx(60));
    CHECK(flat.axes[1].x == doctest::Approx(50));
    CHECK(flat.axes[1].y == doctest::Approx(70));
    CHECK(flat.axes[2].x == doctest::Approx(50));
    CHECK(flat.axes[2].y == doctest::Approx(60));
    CHECK(flat.axes[2].depth == doctest::Approx(1.0));

    std::mt19937_64 rng(6);
    for (int i = 0; i < 100; ++i) {
        const EulerPose p = random_pose(rng);
        const M3 r = oracle_matrix(p);
        const auto proj = project_axes(p, 100, 80, 25);
        for (int k = 0; k < 3; ++k) {
            CHECK(std::abs(proj.axes[k].x - (100 + 25 * r[0][k])) < 1e-9);
            CHECK(std::abs(proj.axes[k].y - (80 + 25 * r[1][k])) < 1e-9);
            CHECK(std::abs(proj.axes[k].depth - r[2][k]) < 1e-12);
        }
    }
}

TEST_CASE("angle range")
{
    const AngleRange r;
    CHECK(r.theta() == 99.0);
    CHECK(r.contains({99, -99, 0}));
    CHECK_FALSE(r.contains({0, 120, 0}));
    CHECK_THROWS_AS(AngleRange(0.0), Error);
}
