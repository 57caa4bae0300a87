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

#include "hpekd/image.hpp"
#include "hpekd/error.hpp"

#include <opencv2/imgcodecs.hpp>

namespace hpekd {

Image to_float_image(const cv::Mat& bgr8)
{
    cv::Mat src = bgr8;
    if (src.channels() == 1) {
        cv::Mat merged;
        cv::merge(std::vector<cv::Mat>{src, src, src}, merged);
        src = merged;
    } else if (src.channels() == 4) {
        cv::Mat bgr;
        std::vector<cv::Mat> planes;
        cv::split(src, planes);
        planes.pop_back();
        cv::merge(planes, bgr);
        src = bgr;
    }
    Image out;
    const double scale = src.depth() == CV_8U ? 1.0 / 255.0 : (src.depth() == CV_16U ? 1.0 / 65535.0 : 1.0);
    src.convertTo(out, CV_32FC3, scale);
    return out;
}

cv::Mat to_u8_image(const Image& image)
{
    cv::Mat out;
    image.convertTo(out, CV_8UC3, 255.0);
    return out;
}

Image load_image(const std::filesystem::path& path)
{
    if (!std::filesystem::exists(path)) {
        throw FileNotFound(path.string());
    }
    cv::Mat raw = cv::imread(path.string(), cv::IMREAD_COLOR);
    if (raw.empty()) {
        throw Error("cannot decode image: " + path.string());
    }
    return to_float_image(raw);
}

void save_image(const std::filesystem::path& path, const Image& image)
{
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    const cv::Mat out = image.depth() == CV_8U ? image : to_u8_image(image);
    if (!cv::imwrite(path.string(), out)) {
        throw Error("cannot write image: " + path.string());
    }
}

nn::Tensor to_input_tensor(std::span<const Image> images, const Normalization& norm)
{
    if (images.empty()) {
        throw Error("empty image batch");
    }
    const int h = images.front().rows, w = images.front().cols;
    nn::Tensor t(static_cast<int>(images.size()), 3, h, w);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (std::size_t i = 0; i < images.size(); ++i) {
        const Image& img = images[i];
        if (img.rows != h || img.cols != w || img.type() != CV_32FC3) {
            throw Error("batch images must share size and be CV_32FC3");
        }
        float* dst = t.sample(static_cast<int>(i));
        for (int y = 0; y < h; ++y) {
            const auto* row = img.ptr<cv::Vec3f>(y);
            for (int x = 0; x < w; ++x) {
                const std::size_t o = static_cast<std::size_t>(y) * w + x;
                // BGR pixel -> RGB planes
                for (int c = 0; c < 3; ++c) {
                    dst[c * plane + o] = (row[x][2 - c] - norm.mean[c]) / norm.std[c];
                }
            }
        }
    }
    return t;
}

}   // hpekd
