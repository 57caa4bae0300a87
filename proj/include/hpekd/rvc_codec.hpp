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

#include "hpekd/pose_math.hpp"

#include <array>
#include <span>
#include <string>
#include <vector>

namespace hpekd {

/// Uniform, zero-symmetric grid of angle bins for one classification head.
///
/// bin_count = ceil(2 * theta / bin_size) and
/// centers[j] = -(bin_count * bin_size) / 2 + bin_size * (j + 0.5),
/// so the grid may overshoot +-theta slightly when bin_size does not divide
/// 2 * theta (bin size 4 at theta 99 spans +-100).
class BinSpec
{
public:
    BinSpec(double bin_size, double theta);

    double bin_size() const noexcept { return bin_size_; }
    int bin_count() const noexcept { return static_cast<int>(centers_.size()); }
    double theta() const noexcept { return theta_; }
    std::span<const double> centers() const noexcept { return centers_; }

    /// Stable identifier of the grid, stored with checkpoints and caches.
    std::string fingerprint() const;

    bool operator==(const BinSpec& other) const;

private:
    double bin_size_;
    double theta_;
    std::vector<double> centers_;
};

BinSpec make_bin_spec(double bin_size, double theta);

/// Classification heads (plus optional regression head) attached to a backbone.
struct HeadConfig
{
    std::vector<BinSpec> bin_specs;
    bool has_regression_head = false;

    /// Four heads with bin sizes {1,2,3,4} and a regression head.
    static HeadConfig stage1(double theta = AngleRange::kDefaultTheta);
    /// Single bin-size-1 head, no regression.
    static HeadConfig stage2(double theta = AngleRange::kDefaultTheta);

    /// Throws on empty/duplicate/non-positive bin sizes or mixed theta.
    void validate() const;
    double theta() const;
    /// Index of the head with the smallest bin size, used for prediction.
    std::size_t prediction_head() const;

    bool operator==(const HeadConfig& other) const;
};

/// Ground-truth class for an angle; throws "angle outside supported range"
/// when |angle| > theta.
int encode_class(double angle, const BinSpec& spec);

/// Same as encode_class after clamping the angle to [-theta, theta]. Used for
/// training targets, where in-plane rotation may push poses slightly out of
/// range.
int encode_class_clamped(double angle, const BinSpec& spec);

/// Numerically stable softmax.
std::vector<double> softmax(std::span<const double> logits);

/// <centers, softmax(logits)>.
double decode_expectation(std::span<const double> logits, const BinSpec& spec);

/// <centers, probabilities>.
double expectation(std::span<const double> probabilities, const BinSpec& spec);

/// theta * tanh(raw) per angle.
EulerPose decode_regression(const std::array<double, 3>& raw, double theta);

}   // hpekd
