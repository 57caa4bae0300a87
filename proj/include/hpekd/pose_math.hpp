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

#pragma once

#include <Eigen/Core>

#include <array>
#include <span>

namespace hpekd {

/// Head pose as Euler angles in degrees.
///
/// Convention used everywhere in the project: the head rotation is
/// R = Rz(roll) * Ry(yaw) * Rx(pitch), expressed in a camera frame whose
/// x axis points right in the image, y axis points down and z axis points
/// into the scene. Roll is therefore the in-plane rotation, and a positive
/// roll turns the image x axis towards the image y axis (clockwise on
/// screen).
struct EulerPose
{
    double pitch = 0.0;
    double yaw = 0.0;
    double roll = 0.0;

    double& operator[](std::size_t i);
    double operator[](std::size_t i) const;

    bool finite() const noexcept;
    bool operator==(const EulerPose&) const = default;
};

/// Half-width of the supported angle interval [-theta, +theta].
class AngleRange
{
public:
    static constexpr double kDefaultTheta = 99.0;

    AngleRange() = default;
    explicit AngleRange(double theta);

    double theta() const noexcept { return theta_; }
    bool contains(const EulerPose& pose) const noexcept;

private:
    double theta_ = kDefaultTheta;
};

using RotationMatrix = Eigen::Matrix3d;

struct MaeReport
{
    std::array<double, 3> per_angle{};   // pitch, yaw, roll
    double average = 0.0;
};

/// Per-angle mean absolute error and their average.
MaeReport mae(std::span<const EulerPose> predictions, std::span<const EulerPose> ground_truth);

RotationMatrix pose_to_matrix(const EulerPose& pose);

/// Inverse of pose_to_matrix. Yaw is recovered in [-90, 90]; throws when
/// |cos(yaw)| < 1e-6 or when the matrix is not a proper rotation.
EulerPose matrix_to_pose(const RotationMatrix& rotation);

bool is_rotation(const RotationMatrix& m, double tol = 1e-6);

/// Pose of the mirrored head after a horizontal image flip.
EulerPose flip_pose(const EulerPose& pose);

/// Pose after rotating the image in-plane by phi degrees about the optical
/// axis (same sense as a positive roll).
EulerPose rotate_pose(const EulerPose& pose, double phi);

/// Rotation about the camera z axis by phi degrees.
RotationMatrix roll_matrix(double phi);

/// Orthographic projection of the three head axes drawn from an image point.
struct AxisProjection
{
    struct Axis
    {
        double x = 0.0, y = 0.0;   // endpoint in image pixels
        double depth = 0.0;        // z component of the unit axis
    };
    double cx = 0.0, cy = 0.0;
    std::array<Axis, 3> axes;      // x (pitch axis), y, z
};

AxisProjection project_axes(const EulerPose& pose, double cx, double cy, double length);

double deg2rad(double deg) noexcept;
double rad2deg(double rad) noexcept;

}   // hpekd
