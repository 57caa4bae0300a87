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

#include "hpekd/pose_math.hpp"
#include "hpekd/error.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <numbers>

namespace hpekd {

double& EulerPose::operator[](std::size_t i)
{
    switch (i) {
    case 0: return pitch;
    case 1: return yaw;
    case 2: return roll;
    default: throw Error("EulerPose index out of range");
    }
}

double EulerPose::operator[](std::size_t i) const
{
    return const_cast<EulerPose&>(*this)[i];
}

bool EulerPose::finite() const noexcept
{
    return std::isfinite(pitch) && std::isfinite(yaw) && std::isfinite(roll);
}

AngleRange::AngleRange(double theta) : theta_(theta)
{
    if (!(theta > 0.0) || !std::isfinite(theta)) {
        throw Error("angle range theta must be positive, got " + std::to_string(theta));
    }
}

bool AngleRange::contains(const EulerPose& pose) const noexcept
{
    return std::abs(pose.pitch) <= theta_ && std::abs(pose.yaw) <= theta_ && std::abs(pose.roll) <= theta_;
}

double deg2rad(double deg) noexcept
{
    return deg * std::numbers::pi / 180.0;
}

double rad2deg(double rad) noexcept
{
    return rad * 180.0 / std::numbers::pi;
}

MaeReport mae(std::span<const EulerPose> predictions, std::span<const EulerPose> ground_truth)
{
    if (predictions.empty() || ground_truth.empty()) {
        throw Error("empty evaluation set");
    }
    if (predictions.size() != ground_truth.size()) {
        throw Error("mae: " + std::to_string(predictions.size()) + " predictions for "
                    + std::to_string(ground_truth.size()) + " ground-truth poses");
    }

    MaeReport report;
    for (std::size_t k = 0; k < predictions.size(); ++k) {
        for (std::size_t i = 0; i < 3; ++i) {
            report.per_angle[i] += std::abs(predictions[k][i] - ground_truth[k][i]);
        }
    }
    const auto n = static_cast<double>(predictions.size());
    for (auto& v : report.per_angle) {
        v /= n;
    }
    report.average = (report.per_angle[0] + report.per_angle[1] + report.per_angle[2]) / 3.0;
    return report;
}

namespace {

RotationMatrix rot_x(double deg)
{
    const double c = std::cos(deg2rad(deg)), s = std::sin(deg2rad(deg));
    RotationMatrix m;
    m << 1, 0, 0,
         0, c, -s,
         0, s, c;
    return m;
}

RotationMatrix rot_y(double deg)
{
    const double c = std::cos(deg2rad(deg)), s = std::sin(deg2rad(deg));
    RotationMatrix m;
    m << c, 0, s,
         0, 1, 0,
         -s, 0, c;
    return m;
}

}   // namespace

RotationMatrix roll_matrix(double phi)
{
    const double c = std::cos(deg2rad(phi)), s = std::sin(deg2rad(phi));
    RotationMatrix m;
    m << c, -s, 0,
         s, c, 0,
         0, 0, 1;
    return m;
}

RotationMatrix pose_to_matrix(const EulerPose& pose)
{
    return roll_matrix(pose.roll) * rot_y(pose.yaw) * rot_x(pose.pitch);
}

bool is_rotation(const RotationMatrix& m, double tol)
{
    if (!m.allFinite()) {
        return false;
    }
    const RotationMatrix gram = m.transpose() * m;
    return (gram - RotationMatrix::Identity()).cwiseAbs().maxCoeff() <= tol
           && std::abs(m.determinant() - 1.0) <= tol;
}

EulerPose matrix_to_pose(const RotationMatrix& r)
{
    if (!is_rotation(r)) {
        throw Error("matrix_to_pose: input is not a proper rotation matrix");
    }

    // R = Rz(g) Ry(b) Rx(a):
    //   r10 = sin(g) cos(b), r00 = cos(g) cos(b), r20 = -sin(b)
    //   r21 = cos(b) sin(a), r22 = cos(b) cos(a)
    const double cos_yaw = std::hypot(r(0, 0), r(1, 0));
    if (cos_yaw < 1e-6) {
        throw Error("degenerate Euler extraction");
    }

    EulerPose pose;
    pose.yaw = rad2deg(std::atan2(-r(2, 0), cos_yaw));
    pose.pitch = rad2deg(std::atan2(r(2, 1), r(2, 2)));
    pose.roll = rad2deg(std::atan2(r(1, 0), r(0, 0)));
    return pose;
}

EulerPose flip_pose(const EulerPose& pose)
{
    return {pose.pitch, -pose.yaw, -pose.roll};
}

EulerPose rotate_pose(const EulerPose& pose, double phi)
{
    return matrix_to_pose(roll_matrix(phi) * pose_to_matrix(pose));
}

AxisProjection project_axes(const EulerPose& pose, double cx, double cy, double length)
{
    const RotationMatrix r = pose_to_matrix(pose);
    AxisProjection proj;
    proj.cx = cx;
    proj.cy = cy;
    for (int k = 0; k < 3; ++k) {
        proj.axes[k] = {cx + length * r(0, k), cy + length * r(1, k), r(2, k)};
    }
    return proj;
}

}   // hpekd
