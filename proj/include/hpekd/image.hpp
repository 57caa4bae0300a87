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

#include "hpekd/nn.hpp"

#include <opencv2/core.hpp>

#include <array>
#include <filesystem>
#include <span>

namespace hpekd {

/// Images inside the pipeline are CV_32FC3, BGR channel order (as decoded by
/// OpenCV), values in [0, 1].
using Image = cv::Mat;

/// Per-channel input normalization in RGB order. Defaults to the usual
/// ImageNet statistics.
struct Normalization
{
    std::array<float, 3> mean{0.485f, 0.456f, 0.406f};
    std::array<float, 3> std{0.229f, 0.224f, 0.225f};

    bool operator==(const Normalization&) const = default;
};

/// Decodes an image file; throws FileNotFound when missing and Error when
/// the file cannot be decoded.
Image load_image(const std::filesystem::path& path);

/// Writes an 8-bit copy of the image (lossless formats recommended).
void save_image(const std::filesystem::path& path, const Image& image);

Image to_float_image(const cv::Mat& bgr8);
cv::Mat to_u8_image(const Image& image);

/// Packs equally sized images into an (N, 3, h, w) tensor in RGB plane order,
/// applying normalization.
nn::Tensor to_input_tensor(std::span<const Image> images, const Normalization& norm);

}   // hpekd
