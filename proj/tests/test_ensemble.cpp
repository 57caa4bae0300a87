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

#include "hpekd/ensemble.hpp"
#include "hpekd/error.hpp"
#include "hpekd/training.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

using namespace hpekd;

namespace {

Image random_image(int w, int h, std::uint64_t seed)
{
    Image img(h, w, CV_32FC3);
    cv::RNG rng(seed);
    rng.fill(img, cv::RNG::UNIFORM, 0.0, 1.0);
    return img;
}

// Reference crop: scale the whole image, paste it on a zero canvas large
// enough for any padded region, then cut the region out.
Image oracle_crop(const Image& src, const BoundingBox& box, int w, int h, int p)
{
    const double rx = w / (box.x2 - box.x1);
    const double ry = h / (box.y2 - box.y1);
    const int sw = static_cast<int>(std::lround(src.cols * rx));
    const int sh = static_cast<int>(std::lround(src.rows * ry));
    Image scaled(sh, sw, CV_32FC3);
    for (int y = 0; y < sh; ++y) {
        for (int x = 0; x < sw; ++x) {
            double u = (x + 0.5) / rx - 0.5;
            double v = (y + 0.5) / ry - 0.5;
            u = std::min(std::max(u, 0.0), src.cols - 1.0);
            v = std::min(std::max(v, 0.0), src.rows - 1.0);
            const int xa = static_cast<int>(u), ya = static_cast<int>(v);
            const int xb = std::min(xa + 1, src.cols - 1), yb = std::min(ya + 1, src.rows - 1);
            const float fx = static_cast<float>(u - xa), fy = static_cast<float>(v - ya);
            for (int c = 0; c < 3; ++c) {
                const float top = (1.0f - fx) * src.at<cv::Vec3f>(ya, xa)[c] + fx * src.at<cv::Vec3f>(ya, xb)[c];
                const float bot = (1.0f - fx) * src.at<cv::Vec3f>(yb, xa)[c] + fx * src.at<cv::Vec3f>(yb, xb)[c];
                scaled.at<cv::Vec3f>(y, x)[c] = (1.0f - fy) * top + fy * bot;
            }
        }
    }
    const int x0 = static_cast<int>(std::lround(box.x1 * rx)) - p;
    const int y0 = static_cast<int>(std::lround(box.y1 * ry)) - p;
    const int border = 4 * (w + h + 2 * p) + sw + sh;
    Image canvas;
    cv::copyMakeBorder(scaled, canvas, border, border, border, border, cv::BORDER_CONSTANT, cv::Scalar::all(0));
    return canvas(cv::Rect(x0 + border, y0 + border, w + 2 * p, h + 2 * p)).clone();
}

bool identical(const Image& a, const Image& b)
{
    if (a.size() != b.size() || a.type() != b.type()) {
        return false;
    }
    for (int y = 0; y < a.rows; ++y) {
        if (std::memcmp(a.ptr(y), b.ptr(y), a.cols * a.elemSize()) != 0) {
            return false;
        }
    }
    return true;
}

TeacherDistribution hand_distribution(std::vector<double> p)
{
    TeacherDistribution d;
    for (auto& v : d.probs) {
        v = p;
    }
    return d;
}

}   // namespace

TEST_CASE("offset grid examples")
{
    const auto g = offset_grid({5, 15, 224, 224});
    CHECK(g.size() == 49);
    CHECK(g.front() == PixelRect{0, 0, 224, 224});
    CHECK(g.back() == PixelRect{30, 30, 254, 254});
    CHECK(g[1] == PixelRect{5, 0, 229, 224});   // row-major, x varies fastest
    CHECK(offset_grid({1, 0, 224, 224}) == std::vector<PixelRect>{{0, 0, 224, 224}});
    CHECK(offset_grid({1, 8, 224, 224}).size() == 289);
    CHECK_THROWS_WITH_AS(offset_grid({4, 6, 224, 224}), doctest::Contains("stride must divide padding"), Error);
    CHECK_THROWS_AS(offset_grid({0, 0, 224, 224}), Error);
}

TEST_CASE("offset grid size and containment over all valid configs")
{
    for (int s = 1; s <= 16; ++s) {
        for (int p = 0; p <= 64; p += s) {
            const EnsembleConfig cfg{s, p, 24, 20};
            const auto g = offset_grid(cfg);
            const int k = 2 * p / s + 1;
            CHECK(g.size() == static_cast<std::size_t>(k * k));
            CHECK(cfg.ensemble_size() == k * k);
            for (const auto& r : g) {
                CHECK(r.x1 >= 0);
                CHECK(r.y1 >= 0);
                CHECK(r.x2 <= 24 + 2 * p);
                CHECK(r.y2 <= 20 + 2 * p);
            }
        }
    }
}

TEST_CASE("crop geometry example")
{
    const auto geo = crop_geometry(400, 400, {100, 100, 212, 212}, {1, 15, 224, 224});
    CHECK(geo.scale_x == 2.0);
    CHECK(geo.scale_y == 2.0);
    CHECK(geo.padded_region == PixelRect{185, 185, 439, 439});
    const Image crop = prepare_padded_crop(random_image(400, 400, 1), {100, 100, 212, 212}, {1, 15, 224, 224});
    CHECK(crop.cols == 254);
    CHECK(crop.rows == 254);
    CHECK_THROWS_WITH_AS(crop_geometry(400, 400, {10, 10, 10, 50}, {1, 0, 224, 224}),
                         doctest::Contains("degenerate bounding box"), Error);
}

TEST_CASE("p = 0 gives exactly the resized bbox crop")
{
    const Image img = random_image(120, 90, 2);
    const BoundingBox box{20, 10, 80, 70};
    const Image crop = prepare_padded_crop(img, box, {1, 0, 30, 30});
    CHECK(crop.cols == 30);
    CHECK(crop.rows == 30);
    // downscale by 2: sample centres fall exactly between source pixels
    const cv::Vec3f expected = 0.25f * (img.at<cv::Vec3f>(10, 20) + img.at<cv::Vec3f>(10, 21)
                                        + img.at<cv::Vec3f>(11, 20) + img.at<cv::Vec3f>(11, 21));
    for (int c = 0; c < 3; ++c) {
        CHECK(crop.at<cv::Vec3f>(0, 0)[c] == doctest::Approx(expected[c]).epsilon(1e-6));
    }
}

TEST_CASE("corner bbox gets a zero border on two sides")
{
    const Image img = random_image(100, 100, 3) + cv::Scalar::all(0.5);
    const Image crop = prepare_padded_crop(img, {0, 0, 50, 50}, {1, 10, 50, 50});
    CHECK(crop.at<cv::Vec3f>(0, 0) == cv::Vec3f(0, 0, 0));
    CHECK(crop.at<cv::Vec3f>(5, 40) == cv::Vec3f(0, 0, 0));
    CHECK(crop.at<cv::Vec3f>(40, 5) == cv::Vec3f(0, 0, 0));
    CHECK(crop.at<cv::Vec3f>(10, 10)[0] > 0.0f);
    CHECK(crop.at<cv::Vec3f>(69, 69)[0] > 0.0f);
    CHECK(identical(crop, oracle_crop(img, {0, 0, 50, 50}, 50, 50, 10)));
}

TEST_CASE("prepare_padded_crop matches the scale-pad-crop oracle")
{
    std::mt19937_64 rng(11);
    std::uniform_int_distribution<int> dim(40, 160);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int trial = 0; trial < 50; ++trial) {
        const int W = dim(rng), H = dim(rng);
        const Image img = random_image(W, H, trial);
        const double bw = 8 + unit(rng) * W * 0.9, bh = 8 + unit(rng) * H * 0.9;
        const double x1 = -0.2 * bw + unit(rng) * (W - 0.6 * bw);
        const double y1 = -0.2 * bh + unit(rng) * (H - 0.6 * bh);
        const BoundingBox box{x1, y1, x1 + bw, y1 + bh};
        const int s = 1 + trial % 4;
        const int p = s * (trial % 5);
        const int w = 16 + trial % 3 * 8, h = 16 + trial % 2 * 8;
        INFO("trial " << trial);
        CHECK(identical(prepare_padded_crop(img, box, {s, p, w, h}), oracle_crop(img, box, w, h, p)));
    }
}

TEST_CASE("averaging distributions")
{
    const std::vector<TeacherDistribution> parts{hand_distribution({1.0, 0.0, 0.0, 0.0}),
                                                 hand_distribution({0.0, 1.0, 0.0, 0.0}),
                                                 hand_distribution({0.5, 0.5, 0.0, 0.0}),
                                                 hand_distribution({0.1, 0.2, 0.3, 0.4})};
    const auto avg = average_distributions(parts);
    const std::vector<double> expected{1.6 / 4, 1.7 / 4, 0.3 / 4, 0.4 / 4};
    for (int a = 0; a < 3; ++a) {
        for (int j = 0; j < 4; ++j) {
            CHECK(avg.probs[a][j] == doctest::Approx(expected[j]).epsilon(1e-15));
        }
    }
    CHECK_NOTHROW(avg.validate());

    auto reversed = parts;
    std::reverse(reversed.begin(), reversed.end());
    const auto avg2 = average_distributions(reversed);
    for (int a = 0; a < 3; ++a) {
        for (int j = 0; j < 4; ++j) {
            CHECK(avg2.probs[a][j] == doctest::Approx(avg.probs[a][j]).epsilon(1e-15));
        }
    }

    CHECK_THROWS_AS(hand_distribution({0.5, 0.6}).validate(), Error);
    CHECK_THROWS_AS(hand_distribution({1.5, -0.5}).validate(), Error);
    CHECK_THROWS_AS(average_distributions(std::span<const TeacherDistribution>{}), Error);
}

TEST_CASE("ensemble prediction")
{
    Model model(BackboneSpec::tiny_cnn(), HeadConfig::stage1(99.0), 7, {}, 32);
    const Image img = random_image(90, 90, 5);
    const BoundingBox box{20, 25, 60, 70};

    SUBCASE("p = 0 equals the single model prediction")
    {
        const EnsembleConfig cfg{1, 0, 32, 32};
        const Image padded = prepare_padded_crop(img, box, cfg);
        const auto ens = ensemble_predict(padded, model, cfg);
        const auto out = model.forward(to_input_tensor(std::span(&padded, 1), model.normalization()));
        const EulerPose single = predict(out[0], model.heads());
        for (int a = 0; a < 3; ++a) {
            CHECK(std::abs(ens.pose[a] - single[a]) < 1e-6);
        }
        ens.distribution.validate();
    }

    SUBCASE("average of per-crop softmax, independent of crop order")
    {
        const EnsembleConfig cfg{2, 4, 32, 32};
        const Image padded = prepare_padded_crop(img, box, cfg);
        const auto ens = ensemble_predict(padded, model, cfg);
        ens.distribution.validate();
        CHECK(ens.distribution.bin_count() == 198);

        std::vector<TeacherDistribution> parts;
        auto rects = offset_grid(cfg);
        std::reverse(rects.begin(), rects.end());
        for (const auto& r : rects) {
            const Image crop = padded(cv::Rect(r.x1, r.y1, r.width(), r.height())).clone();
            const auto out = model.forward(to_input_tensor(std::span(&crop, 1), model.normalization()));
            parts.push_back(head_distribution(out[0], model.heads()));
        }
        const auto manual = average_distributions(parts);
        for (int a = 0; a < 3; ++a) {
            for (int j = 0; j < 198; ++j) {
                CHECK(ens.distribution.probs[a][j] == doctest::Approx(manual.probs[a][j]).epsilon(1e-6));
            }
        }
    }

    SUBCASE("constant logits give exactly that softmax")
    {
        model.zero_parameters();
        const EnsembleConfig cfg{3, 6, 32, 32};
        const auto ens = ensemble_predict(prepare_padded_crop(img, box, cfg), model, cfg);
        for (int a = 0; a < 3; ++a) {
            for (double v : ens.distribution.probs[a]) {
                CHECK(v == doctest::Approx(1.0 / 198).epsilon(1e-15));
            }
        }
    }

    SUBCASE("size mismatch is an error")
    {
        const EnsembleConfig cfg{1, 2, 32, 32};
        CHECK_THROWS_AS(ensemble_predict(prepare_padded_crop(img, box, {1, 0, 32, 32}), model, cfg), Error);
    }
}

TEST_CASE("sweep keeps valid cells only and its p = 0 rows reproduce the baseline")
{
    Model model(BackboneSpec::tiny_cnn(), HeadConfig::stage1(99.0), 9, {}, 32);
    std::vector<Image> images;
    for (int i = 0; i < 4; ++i) {
        images.push_back(random_image(64, 64, 100 + i));
    }
    std::vector<EvalSample> samples;
    for (int i = 0; i < 4; ++i) {
        samples.push_back({&images[i], {8.0 + i, 10.0, 50.0, 52.0 - i}, {10.0 * i, -5.0, 3.0}});
    }
    const std::vector<int> s_values{1, 2, 3, 4, 6, 12};
    const std::vector<int> p_values{0, 3, 12};
    const auto rows = sweep(samples, model, s_values, p_values);

    // p = 0: every s; p = 3: s in {1, 3}; p = 12: all six strides
    CHECK(rows.size() == 6 + 2 + 6);
    const MaeReport base = evaluate_base(model, samples);
    for (const auto& row : rows) {
        CHECK(row.padding % row.stride == 0);
        CHECK(row.ensemble_size == (2 * row.padding / row.stride + 1) * (2 * row.padding / row.stride + 1));
        if (row.padding == 0) {
            for (int a = 0; a < 3; ++a) {
                CHECK(row.mae.per_angle[a] == base.per_angle[a]);
            }
        }
    }
    const auto direct = evaluate_ensemble(samples, model, {3, 3, 32, 32});
    for (const auto& row : rows) {
        if (row.stride == 3 && row.padding == 3) {
            CHECK(row.mae.average == doctest::Approx(direct.average).epsilon(1e-12));
        }
    }

    const auto dir = std::filesystem::temp_directory_path() / "hpekd_test_sweep";
    write_sweep_csv(dir / "sweep.csv", rows);
    render_sweep_heatmap(dir / "sweep.png", rows);
    std::ifstream is(dir / "sweep.csv");
    std::string header;
    std::getline(is, header);
    CHECK(header == "s,p,A,pitch_mae,yaw_mae,roll_mae,avg_mae");
    std::size_t lines = 0;
    for (std::string line; std::getline(is, line);) {
        ++lines;
    }
    CHECK(lines == rows.size());
    CHECK(std::filesystem::file_size(dir / "sweep.png") > 0);
    std::filesystem::remove_all(dir);
}

TEST_CASE("divisor structure of the sweep grid")
{
    std::vector<int> valid;
    for (int s = 1; s <= 15; ++s) {
        if (12 % s == 0) {
            valid.push_back(s);
        }
    }
    CHECK(valid == std::vector<int>{1, 2, 3, 4, 6, 12});
}
