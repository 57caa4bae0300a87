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

#include "hpekd/synthetic.hpp"
#include "hpekd/augment.hpp"
#include "hpekd/error.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

namespace hpekd {

namespace {

// BGR colours and bar thickness per axis; identity survives channel shuffles
// through thickness.
const std::array<cv::Scalar, 3> kGlyphColors = {cv::Scalar(70, 70, 250), cv::Scalar(70, 240, 70),
                                                cv::Scalar(250, 140, 60)};
constexpr std::array<int, 3> kGlyphThickness = {7, 5, 3};

cv::Point2d to_point(double x, double y)
{
    return {x, y};
}

double round6(double v)
{
    return std::round(v * 1e6) / 1e6;
}

}   // namespace

void draw_glyph(cv::Mat& canvas, const EulerPose& pose, double cx, double cy, double length)
{
    const AxisProjection proj = project_axes(pose, cx, cy, length);

    struct End
    {
        int axis;
        cv::Point2d from, to;
        double depth;
    };
    std::vector<End> ends;
    const auto& ax = proj.axes[0];
    const double dx = ax.x - cx, dy = ax.y - cy;
    ends.push_back({0, to_point(cx, cy), to_point(cx + dx, cy + dy), ax.depth});
    ends.push_back({0, to_point(cx, cy), to_point(cx - dx, cy - dy), -ax.depth});
    for (int k = 1; k < 3; ++k) {
        ends.push_back({k, to_point(cx, cy), to_point(proj.axes[k].x, proj.axes[k].y), proj.axes[k].depth});
    }
    // Far ends first; positive depth points away from the camera.
    std::stable_sort(ends.begin(), ends.end(), [](const End& a, const End& b) { return a.depth > b.depth; });

    constexpr int shift = 4;
    constexpr double scale = 1 << shift;
    auto fixed = [](const cv::Point2d& p) {
        return cv::Point(static_cast<int>(std::lround(p.x * scale)), static_cast<int>(std::lround(p.y * scale)));
    };
    for (const auto& e : ends) {
        cv::line(canvas, fixed(e.from), fixed(e.to), kGlyphColors[e.axis], kGlyphThickness[e.axis], cv::LINE_AA,
                 shift);
        const double radius = (kGlyphThickness[e.axis] + 2.0) * (1.0 - 0.45 * e.depth);
        cv::circle(canvas, fixed(e.to), static_cast<int>(std::lround(radius * scale)), kGlyphColors[e.axis],
                   cv::FILLED, cv::LINE_AA, shift);
    }
}

void draw_pose_axes(cv::Mat& canvas, const EulerPose& pose, double cx, double cy, double length, int thickness)
{
    static const std::array<cv::Scalar, 3> colors = {cv::Scalar(0, 0, 255), cv::Scalar(0, 255, 0),
                                                     cv::Scalar(255, 0, 0)};
    const AxisProjection proj = project_axes(pose, cx, cy, length);
    const cv::Point origin(static_cast<int>(std::lround(cx)), static_cast<int>(std::lround(cy)));
    for (int k = 0; k < 3; ++k) {
        const cv::Point end(static_cast<int>(std::lround(proj.axes[k].x)),
                            static_cast<int>(std::lround(proj.axes[k].y)));
        cv::line(canvas, origin, end, colors[k], thickness, cv::LINE_8);
    }
}

std::pair<cv::Mat, SyntheticSample> render_synthetic(std::uint64_t seed, double theta,
                                                      const SyntheticOptions& options)
{
    if (!(theta > 0.0)) {
        throw Error("synthetic theta must be positive");
    }
    std::mt19937_64 rng(seed);
    auto uni = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
    const int size = options.image_size;

    // Background: vertical gradient between two dark colours plus clutter.
    const cv::Vec3d top(uni(10, 110), uni(10, 110), uni(10, 110));
    const cv::Vec3d bottom(uni(10, 110), uni(10, 110), uni(10, 110));
    cv::Mat canvas(size, size, CV_8UC3);
    for (int y = 0; y < size; ++y) {
        const double t = static_cast<double>(y) / (size - 1);
        const cv::Vec3d c = top * (1.0 - t) + bottom * t;
        canvas.row(y).setTo(cv::Scalar(c[0], c[1], c[2]));
    }
    const int clutter = static_cast<int>(uni(2, 6));
    for (int i = 0; i < clutter; ++i) {
        const cv::Scalar color(uni(30, 160), uni(30, 160), uni(30, 160));
        const cv::Point c(static_cast<int>(uni(0, size)), static_cast<int>(uni(0, size)));
        if (uni(0, 1) < 0.5) {
            cv::circle(canvas, c, static_cast<int>(uni(4, size / 6.0)), color, cv::FILLED, cv::LINE_AA);
        } else {
            const int hw = static_cast<int>(uni(4, size / 6.0));
            cv::rectangle(canvas, cv::Rect(c.x - hw, c.y - hw, 2 * hw, hw), color, cv::FILLED);
        }
    }

    SyntheticSample sample;
    EulerPose pose{round6(uni(-theta, theta)), round6(uni(-theta, theta)), round6(uni(-theta, theta))};
    sample.length = uni(options.min_length, options.max_length);
    sample.cx = uni(0.3 * size, 0.7 * size);
    sample.cy = uni(0.3 * size, 0.7 * size);
    draw_glyph(canvas, pose, sample.cx, sample.cy, sample.length);

    std::normal_distribution<double> jitter(0.0, options.bbox_jitter);
    const double half = options.bbox_margin * sample.length * std::clamp(1.0 + jitter(rng), 0.8, 1.2);
    const double bx = sample.cx + sample.length * uni(-options.centre_jitter, options.centre_jitter);
    const double by = sample.cy + sample.length * uni(-options.centre_jitter, options.centre_jitter);
    sample.record.pose = pose;
    sample.record.bbox = {round6(bx - half), round6(by - half), round6(bx + half), round6(by + half)};
    return {canvas, sample};
}

Manifest generate_synthetic(std::size_t count, std::uint64_t seed, double theta, const std::filesystem::path& out_dir,
                            const SyntheticOptions& options)
{
    if (count == 0) {
        throw Error("synthetic dataset needs count > 0");
    }
    std::filesystem::create_directories(out_dir / "images");
    std::vector<DatasetRecord> records;
    records.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        auto [image, sample] = render_synthetic(mix_seed(seed, i), theta, options);
        char name[64];
        std::snprintf(name, sizeof(name), "images/glyph_%06zu.png", i);
        sample.record.image_path = name;
        if (!cv::imwrite((out_dir / name).string(), image)) {
            throw Error("cannot write " + (out_dir / name).string());
        }
        records.push_back(sample.record);
    }
    const auto manifest_path = out_dir / "manifest.csv";
    write_manifest(manifest_path, records);
    return load_manifest(manifest_path);
}

}   // hpekd
