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

#include "hpekd/augment.hpp"
#include "hpekd/error.hpp"

#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace hpekd {

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b)
{
    std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

AugmentationPlan AugmentationPlan::none()
{
    AugmentationPlan plan;
    plan.flip_prob = 0.0;
    plan.rotation_min = 0.0;
    plan.rotation_max = 0.0;
    plan.color_prob = 0.0;
    plan.channel_prob = 0.0;
    plan.blur_prob = 0.0;
    plan.noise_prob = 0.0;
    plan.dropout_prob = 0.0;
    return plan;
}

Image flip_image(const Image& image)
{
    Image out;
    cv::flip(image, out, 1);
    return out;
}

BoundingBox flip_bbox(const BoundingBox& bbox, int image_w)
{
    return {image_w - bbox.x2, bbox.y1, image_w - bbox.x1, bbox.y2};
}

namespace {

// (cx, cy) is the centre in the caller's coordinates: pixel indices for
// warpAffine, continuous pixel-edge coordinates for boxes.
cv::Matx23d rotation_affine(double phi, double cx, double cy)
{
    const double c = std::cos(deg2rad(phi)), s = std::sin(deg2rad(phi));
    // p' = centre + Rz(phi) (p - centre), image y axis pointing down
    return {c, -s, cx - c * cx + s * cy,
            s, c, cy - s * cx - c * cy};
}

}   // namespace

Image rotate_image(const Image& image, double phi)
{
    Image out;
    cv::warpAffine(image, out, cv::Mat(rotation_affine(phi, 0.5 * (image.cols - 1), 0.5 * (image.rows - 1))), image.size(), cv::INTER_LINEAR,
                   cv::BORDER_CONSTANT, cv::Scalar::all(0));
    return out;
}

BoundingBox rotate_bbox(const BoundingBox& bbox, double phi, int image_w, int image_h)
{
    const auto m = rotation_affine(phi, 0.5 * image_w, 0.5 * image_h);
    double x1 = INFINITY, y1 = INFINITY, x2 = -INFINITY, y2 = -INFINITY;
    for (double x : {bbox.x1, bbox.x2}) {
        for (double y : {bbox.y1, bbox.y2}) {
            const double u = m(0, 0) * x + m(0, 1) * y + m(0, 2);
            const double v = m(1, 0) * x + m(1, 1) * y + m(1, 2);
            x1 = std::min(x1, u);
            x2 = std::max(x2, u);
            y1 = std::min(y1, v);
            y2 = std::max(y2, v);
        }
    }
    return {x1, y1, x2, y2};
}

namespace {

using Rng = std::mt19937_64;

double uniform(Rng& rng, double lo, double hi)
{
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

bool chance(Rng& rng, double p)
{
    // Always draw so that the stream position does not depend on p.
    return uniform(rng, 0.0, 1.0) < p;
}

int pick(Rng& rng, int n)
{
    return std::uniform_int_distribution<int>(0, n - 1)(rng);
}

void hue_saturation_value(Image& img, Rng& rng)
{
    const double dh = uniform(rng, -20.0, 20.0);
    const double ds = uniform(rng, -0.3, 0.3);
    const double dv = uniform(rng, -0.2, 0.2);
    Image hsv;
    cv::cvtColor(img, hsv, cv::COLOR_BGR2HSV);   // H in [0, 360), S and V in [0, 1]
    for (int y = 0; y < hsv.rows; ++y) {
        auto* row = hsv.ptr<cv::Vec3f>(y);
        for (int x = 0; x < hsv.cols; ++x) {
            float h = row[x][0] + static_cast<float>(dh);
            h = h < 0.0f ? h + 360.0f : (h >= 360.0f ? h - 360.0f : h);
            row[x][0] = h;
            row[x][1] = std::clamp(row[x][1] + static_cast<float>(ds), 0.0f, 1.0f);
            row[x][2] = std::clamp(row[x][2] + static_cast<float>(dv), 0.0f, 1.0f);
        }
    }
    cv::cvtColor(hsv, img, cv::COLOR_HSV2BGR);
}

void clahe(Image& img, Rng& rng)
{
    const double clip = uniform(rng, 1.0, 4.0);
    cv::Mat u8, lab;
    img.convertTo(u8, CV_8UC3, 255.0);
    cv::cvtColor(u8, lab, cv::COLOR_BGR2Lab);
    std::vector<cv::Mat> planes;
    cv::split(lab, planes);
    cv::createCLAHE(clip, cv::Size(8, 8))->apply(planes[0], planes[0]);
    cv::merge(planes, lab);
    cv::cvtColor(lab, u8, cv::COLOR_Lab2BGR);
    u8.convertTo(img, CV_32FC3, 1.0 / 255.0);
}

void equalize(Image& img)
{
    cv::Mat u8;
    img.convertTo(u8, CV_8UC3, 255.0);
    std::vector<cv::Mat> planes;
    cv::split(u8, planes);
    for (auto& p : planes) {
        cv::equalizeHist(p, p);
    }
    cv::merge(planes, u8);
    u8.convertTo(img, CV_32FC3, 1.0 / 255.0);
}

void solarize(Image& img, Rng& rng)
{
    const auto threshold = static_cast<float>(uniform(rng, 0.5, 1.0));
    img.forEach<cv::Vec3f>([threshold](cv::Vec3f& px, const int*) {
        for (int c = 0; c < 3; ++c) {
            if (px[c] >= threshold) {
                px[c] = 1.0f - px[c];
            }
        }
    });
}

void channel_shuffle(Image& img, Rng& rng)
{
    std::array<int, 3> order{0, 1, 2};
    for (int i = 2; i > 0; --i) {
        std::swap(order[i], order[pick(rng, i + 1)]);
    }
    std::vector<cv::Mat> planes, shuffled(3);
    cv::split(img, planes);
    for (int c = 0; c < 3; ++c) {
        shuffled[c] = planes[order[c]];
    }
    cv::merge(shuffled, img);
}

void channel_dropout(Image& img, Rng& rng)
{
    const int drop = pick(rng, 3);
    std::vector<cv::Mat> planes;
    cv::split(img, planes);
    planes[drop].setTo(0.0f);
    cv::merge(planes, img);
}

void median_blur(Image& img)
{
    Image out;
    cv::medianBlur(img, out, 3);
    img = out;
}

void random_shadow(Image& img, Rng& rng)
{
    // Darkens a random quadrilateral in the lower half of the image.
    const int w = img.cols, h = img.rows;
    std::vector<cv::Point> poly;
    for (int i = 0; i < 4; ++i) {
        poly.emplace_back(static_cast<int>(uniform(rng, 0.0, w)), static_cast<int>(uniform(rng, 0.5 * h, h)));
    }
    const auto factor = static_cast<float>(uniform(rng, 0.4, 0.8));
    cv::Mat mask(h, w, CV_8UC1, cv::Scalar(0));
    cv::fillConvexPoly(mask, poly, cv::Scalar(255));
    for (int y = 0; y < h; ++y) {
        auto* row = img.ptr<cv::Vec3f>(y);
        const auto* m = mask.ptr<std::uint8_t>(y);
        for (int x = 0; x < w; ++x) {
            if (m[x]) {
                row[x] *= factor;
            }
        }
    }
}

void iso_noise(Image& img, Rng& rng)
{
    const double intensity = uniform(rng, 0.1, 0.5);
    const double color_shift = uniform(rng, 0.01, 0.05);
    cv::RNG cvrng(rng());
    cv::Mat lum(img.size(), CV_32FC1), chroma(img.size(), CV_32FC3);
    cvrng.fill(lum, cv::RNG::NORMAL, 0.0, 0.1 * intensity);
    cvrng.fill(chroma, cv::RNG::NORMAL, 0.0, color_shift);
    for (int y = 0; y < img.rows; ++y) {
        auto* row = img.ptr<cv::Vec3f>(y);
        const auto* l = lum.ptr<float>(y);
        const auto* c = chroma.ptr<cv::Vec3f>(y);
        for (int x = 0; x < img.cols; ++x) {
            for (int k = 0; k < 3; ++k) {
                row[x][k] = std::clamp(row[x][k] + l[x] + c[x][k], 0.0f, 1.0f);
            }
        }
    }
}

void coarse_dropout(Image& img, Rng& rng)
{
    const int holes = 1 + pick(rng, 8);
    const int max_w = std::max(1, img.cols / 12), max_h = std::max(1, img.rows / 12);
    for (int i = 0; i < holes; ++i) {
        const int hw = 1 + pick(rng, max_w), hh = 1 + pick(rng, max_h);
        const int x = pick(rng, std::max(1, img.cols - hw + 1));
        const int y = pick(rng, std::max(1, img.rows - hh + 1));
        img(cv::Rect(x, y, hw, hh)).setTo(cv::Scalar::all(0));
    }
}

}   // namespace

AugmentedSample augment(const Image& image, const DatasetRecord& record, const AugmentationPlan& plan,
                        std::uint64_t seed)
{
    if (image.empty() || image.type() != CV_32FC3) {
        throw Error("augment expects a non-empty CV_32FC3 image");
    }
    if (plan.rotation_min > plan.rotation_max) {
        throw Error("rotation range is empty");
    }
    Rng rng(seed);
    AugmentedSample out{image.clone(), record.pose, record.bbox, {}};

    // Pose-affecting transforms first.
    if (chance(rng, plan.flip_prob)) {
        out.image = flip_image(out.image);
        out.bbox = flip_bbox(out.bbox, out.image.cols);
        out.pose = flip_pose(out.pose);
        out.applied.emplace_back("flip");
    }
    const double phi = uniform(rng, 0.0, 1.0) * (plan.rotation_max - plan.rotation_min) + plan.rotation_min;
    if (plan.rotation_enabled() && phi != 0.0) {
        out.image = rotate_image(out.image, phi);
        out.bbox = rotate_bbox(out.bbox, phi, out.image.cols, out.image.rows);
        out.pose = rotate_pose(out.pose, phi);
        out.applied.emplace_back("rotate");
    }

    if (chance(rng, plan.color_prob)) {
        switch (pick(rng, 4)) {
        case 0: hue_saturation_value(out.image, rng); out.applied.emplace_back("hue_saturation_value"); break;
        case 1: clahe(out.image, rng); out.applied.emplace_back("clahe"); break;
        case 2: equalize(out.image); out.applied.emplace_back("equalize"); break;
        default: solarize(out.image, rng); out.applied.emplace_back("solarize"); break;
        }
    }
    if (chance(rng, plan.channel_prob)) {
        if (pick(rng, 2) == 0) {
            channel_shuffle(out.image, rng);
            out.applied.emplace_back("channel_shuffle");
        } else {
            channel_dropout(out.image, rng);
            out.applied.emplace_back("channel_dropout");
        }
    }
    if (chance(rng, plan.blur_prob)) {
        median_blur(out.image);
        out.applied.emplace_back("median_blur");
    }
    if (chance(rng, plan.noise_prob)) {
        if (pick(rng, 2) == 0) {
            random_shadow(out.image, rng);
            out.applied.emplace_back("random_shadow");
        } else {
            iso_noise(out.image, rng);
            out.applied.emplace_back("iso_noise");
        }
    }
    if (chance(rng, plan.dropout_prob)) {
        coarse_dropout(out.image, rng);
        out.applied.emplace_back("coarse_dropout");
    }
    return out;
}

}   // hpekd
