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

#include "hpekd/data.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace hpekd {

/// Training-time augmentation schedule. Pose-affecting steps (flip, rotation)
/// run first, then the pose-invariant photometric steps, each group firing
/// with its own probability:
///   color:   one of hue/saturation shift, CLAHE, equalize, solarize
///   channel: one of channel shuffle, channel dropout
///   blur:    median blur
///   noise:   one of random shadow, sensor (ISO-like) noise
///   dropout: coarse dropout
struct AugmentationPlan
{
    double flip_prob = 0.5;
    double rotation_min = -15.0;
    double rotation_max = 15.0;
    double color_prob = 0.5;
    double channel_prob = 0.5;
    double blur_prob = 0.5;
    double noise_prob = 0.5;
    double dropout_prob = 0.5;

    /// Every step disabled (identity).
    static AugmentationPlan none();
    bool rotation_enabled() const noexcept { return rotation_min != 0.0 || rotation_max != 0.0; }
};

struct AugmentedSample
{
    Image image;
    EulerPose pose;
    BoundingBox bbox;
    std::vector<std::string> applied;   // names of the steps that fired
};

/// Applies the plan with a generator seeded from `seed`; the same seed always
/// replays the same transforms.
AugmentedSample augment(const Image& image, const DatasetRecord& record, const AugmentationPlan& plan,
                        std::uint64_t seed);

/// Mirrors an image and its bbox horizontally.
Image flip_image(const Image& image);
BoundingBox flip_bbox(const BoundingBox& bbox, int image_w);

/// Rotates the image by phi degrees about its centre (same sense as a
/// positive roll: clockwise on screen), keeping the size and zero-filling.
Image rotate_image(const Image& image, double phi);
/// Axis-aligned hull of the rotated bbox corners.
BoundingBox rotate_bbox(const BoundingBox& bbox, double phi, int image_w, int image_h);

/// Deterministic 64-bit seed mixing (splitmix64 finalizer).
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

}   // hpekd
