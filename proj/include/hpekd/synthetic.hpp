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
#include <filesystem>

namespace hpekd {

/// Renders the head-pose glyph: the x axis as a double-ended bar (mirror
/// symmetric), the y and z axes as single-ended bars. Each axis has its own
/// colour and thickness, and every end carries a disc whose radius grows as
/// the end comes towards the camera so that depth is unambiguous.
void draw_glyph(cv::Mat& canvas, const EulerPose& pose, double cx, double cy, double length);

/// Draws pose axes the way the evaluation renders them: x red, y green,
/// z blue, from the given centre.
void draw_pose_axes(cv::Mat& canvas, const EulerPose& pose, double cx, double cy, double length, int thickness);

struct SyntheticOptions
{
    int image_size = 192;
    double min_length = 28.0;   // glyph axis length in pixels
    double max_length = 42.0;
    double bbox_jitter = 0.08;  // relative jitter of bbox size
    double bbox_margin = 2.0;   // bbox half-width in glyph lengths
    // Bbox centre offset from the glyph, uniform in +-centre_jitter lengths.
    // Detector boxes are never perfectly centred; without this spread a model
    // never sees the shifted crops a convolutional ensemble feeds it.
    double centre_jitter = 0.75;
};

struct SyntheticSample
{
    DatasetRecord record;
    double cx = 0.0, cy = 0.0, length = 0.0;   // glyph placement
};

/// Renders one sample in memory (deterministic in seed).
std::pair<cv::Mat, SyntheticSample> render_synthetic(std::uint64_t seed, double theta,
                                                      const SyntheticOptions& options = {});

/// Writes count PNG images plus manifest.csv into out_dir; poses are uniform
/// in [-theta, theta] and rounded to 6 decimals so the manifest is exact.
Manifest generate_synthetic(std::size_t count, std::uint64_t seed, double theta,
                            const std::filesystem::path& out_dir, const SyntheticOptions& options = {});

}   // hpekd
