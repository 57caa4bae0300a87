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

#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>

namespace hpekd {

void EnsembleConfig::validate() const
{
    if (stride < 1) {
        throw Error("ensemble stride must be >= 1, got " + std::to_string(stride));
    }
    if (padding < 0) {
        throw Error("ensemble padding must be >= 0, got " + std::to_string(padding));
    }
    if (padding % stride != 0) {
        throw Error("stride must divide padding (s=" + std::to_string(stride) + ", p=" + std::to_string(padding)
                    + ")");
    }
    if (input_w < 1 || input_h < 1) {
        throw Error("ensemble input size must be positive");
    }
}

CropGeometry crop_geometry(int image_w, int image_h, const BoundingBox& bbox, const EnsembleConfig& config)
{
    config.validate();
    if (!bbox.has_area()) {
        throw Error("degenerate bounding box (zero width or height)");
    }
    CropGeometry geo;
    geo.scale_x = config.input_w / bbox.width();
    geo.scale_y = config.input_h / bbox.height();
    geo.scaled_w = static_cast<int>(std::lround(image_w * geo.scale_x));
    geo.scaled_h = static_cast<int>(std::lround(image_h * geo.scale_y));
    const int x0 = static_cast<int>(std::lround(bbox.x1 * geo.scale_x)) - config.padding;
    const int y0 = static_cast<int>(std::lround(bbox.y1 * geo.scale_y)) - config.padding;
    geo.padded_region = {x0, y0, x0 + config.input_w + 2 * config.padding, y0 + config.input_h + 2 * config.padding};
    return geo;
}

std::vector<PixelRect> offset_grid(const EnsembleConfig& config)
{
    config.validate();
    const int steps = config.steps_per_axis();
    std::vector<PixelRect> rects;
    rects.reserve(static_cast<std::size_t>(steps) * steps);
    for (int j = 0; j < steps; ++j) {
        for (int i = 0; i < steps; ++i) {
            const int x = config.stride * i, y = config.stride * j;
            rects.push_back({x, y, x + config.input_w, y + config.input_h});
        }
    }
    return rects;
}

cv::Vec3f sample_scaled(const Image& image, double scale_x, double scale_y, int sx, int sy)
{
    const int w = image.cols, h = image.rows;
    const double u = std::clamp((sx + 0.5) / scale_x - 0.5, 0.0, static_cast<double>(w - 1));
    const double v = std::clamp((sy + 0.5) / scale_y - 0.5, 0.0, static_cast<double>(h - 1));
    const int x0 = static_cast<int>(std::floor(u));
    const int y0 = static_cast<int>(std::floor(v));
    const int x1 = std::min(x0 + 1, w - 1);
    const int y1 = std::min(y0 + 1, h - 1);
    const auto fx = static_cast<float>(u - x0);
    const auto fy = static_cast<float>(v - y0);

    const auto* r0 = image.ptr<cv::Vec3f>(y0);
    const auto* r1 = image.ptr<cv::Vec3f>(y1);
    cv::Vec3f out;
    for (int c = 0; c < 3; ++c) {
        const float top = (1.0f - fx) * r0[x0][c] + fx * r0[x1][c];
        const float bottom = (1.0f - fx) * r1[x0][c] + fx * r1[x1][c];
        out[c] = (1.0f - fy) * top + fy * bottom;
    }
    return out;
}

Image prepare_padded_crop(const Image& image, const BoundingBox& bbox, const EnsembleConfig& config)
{
    if (image.empty() || image.type() != CV_32FC3) {
        throw Error("prepare_padded_crop expects a non-empty CV_32FC3 image");
    }
    const CropGeometry geo = crop_geometry(image.cols, image.rows, bbox, config);
    const PixelRect& region = geo.padded_region;

    Image out(region.height(), region.width(), CV_32FC3, cv::Scalar::all(0));
    for (int y = 0; y < out.rows; ++y) {
        const int sy = region.y1 + y;
        if (sy < 0 || sy >= geo.scaled_h) {
            continue;
        }
        auto* row = out.ptr<cv::Vec3f>(y);
        for (int x = 0; x < out.cols; ++x) {
            const int sx = region.x1 + x;
            if (sx < 0 || sx >= geo.scaled_w) {
                continue;
            }
            row[x] = sample_scaled(image, geo.scale_x, geo.scale_y, sx, sy);
        }
    }
    return out;
}

void TeacherDistribution::validate(double tol) const
{
    for (const auto& p : probs) {
        if (p.empty() || p.size() != probs[0].size()) {
            throw Error("teacher distribution vectors must be non-empty and equally sized");
        }
        double sum = 0.0;
        for (double v : p) {
            if (!(v >= 0.0) || !std::isfinite(v)) {
                throw Error("teacher distribution has a negative or non-finite entry");
            }
            sum += v;
        }
        if (std::abs(sum - 1.0) > tol) {
            throw Error("teacher distribution does not sum to 1 (sum=" + std::to_string(sum) + ")");
        }
    }
}

TeacherDistribution average_distributions(std::span<const TeacherDistribution> parts)
{
    if (parts.empty()) {
        throw Error("cannot average an empty set of distributions");
    }
    TeacherDistribution avg;
    for (std::size_t a = 0; a < 3; ++a) {
        avg.probs[a].assign(parts.front().probs[a].size(), 0.0);
        for (const auto& part : parts) {
            if (part.probs[a].size() != avg.probs[a].size()) {
                throw Error("distribution size mismatch while averaging");
            }
            for (std::size_t j = 0; j < avg.probs[a].size(); ++j) {
                avg.probs[a][j] += part.probs[a][j];
            }
        }
        const auto count = static_cast<double>(parts.size());
        for (auto& v : avg.probs[a]) {
            v /= count;
        }
    }
    return avg;
}

TeacherDistribution head_distribution(const HeadOutputs& outputs, const HeadConfig& config)
{
    const std::size_t head = config.prediction_head();
    TeacherDistribution dist;
    for (std::size_t a = 0; a < 3; ++a) {
        dist.probs[a] = softmax(outputs.angle_logits(head, a));
    }
    return dist;
}

EulerPose distribution_pose(const TeacherDistribution& dist, const BinSpec& spec)
{
    EulerPose pose;
    for (std::size_t a = 0; a < 3; ++a) {
        pose[a] = expectation(dist.probs[a], spec);
    }
    return pose;
}

EnsemblePrediction ensemble_predict(const Image& padded, Model& model, const EnsembleConfig& config)
{
    config.validate();
    if (padded.cols != config.input_w + 2 * config.padding || padded.rows != config.input_h + 2 * config.padding) {
        throw Error("ensemble input must be " + std::to_string(config.input_w + 2 * config.padding) + "x"
                    + std::to_string(config.input_h + 2 * config.padding) + ", got "
                    + std::to_string(padded.cols) + "x" + std::to_string(padded.rows));
    }

    const auto rects = offset_grid(config);
    std::vector<Image> crops;
    crops.reserve(rects.size());
    for (const auto& r : rects) {
        crops.push_back(padded(cv::Rect(r.x1, r.y1, r.width(), r.height())));
    }
    const auto outputs = model.forward(to_input_tensor(crops, model.normalization()), false);

    std::vector<TeacherDistribution> parts;
    parts.reserve(outputs.size());
    for (const auto& out : outputs) {
        parts.push_back(head_distribution(out, model.heads()));
    }
    EnsemblePrediction result;
    result.distribution = average_distributions(parts);
    result.pose = distribution_pose(result.distribution, model.heads().bin_specs[model.heads().prediction_head()]);
    return result;
}

MaeReport evaluate_ensemble(std::span<const EvalSample> samples, Model& model, const EnsembleConfig& config,
                            std::vector<EulerPose>* predictions)
{
    if (samples.empty()) {
        throw Error("empty evaluation set");
    }
    std::vector<EulerPose> preds, gts;
    preds.reserve(samples.size());
    gts.reserve(samples.size());
    for (const auto& sample : samples) {
        const Image padded = prepare_padded_crop(*sample.image, sample.bbox, config);
        preds.push_back(ensemble_predict(padded, model, config).pose);
        gts.push_back(sample.pose);
    }
    const MaeReport report = mae(preds, gts);
    if (predictions) {
        *predictions = std::move(preds);
    }
    return report;
}

std::vector<SweepRow> sweep(std::span<const EvalSample> samples, Model& model, std::span<const int> s_values,
                            std::span<const int> p_values)
{
    if (samples.empty()) {
        throw Error("empty evaluation set");
    }
    const std::set<int> strides(s_values.begin(), s_values.end());
    const std::set<int> paddings(p_values.begin(), p_values.end());

    std::vector<EulerPose> gts;
    for (const auto& sample : samples) {
        gts.push_back(sample.pose);
    }

    // Keyed by (s, p). The padded crop depends on p only, so it is built once
    // per (sample, p).
    std::map<std::pair<int, int>, std::vector<EulerPose>> cells;
    for (int p : paddings) {
        std::vector<int> valid;
        for (int s : strides) {
            if (s >= 1 && p >= 0 && p % s == 0) {
                valid.push_back(s);
            }
        }
        if (valid.empty()) {
            continue;
        }
        for (const auto& sample : samples) {
            EnsembleConfig base{valid.front(), p, model.input_size(), model.input_size()};
            const Image padded = prepare_padded_crop(*sample.image, sample.bbox, base);
            std::optional<EulerPose> single;
            for (int s : valid) {
                EnsembleConfig cfg{s, p, model.input_size(), model.input_size()};
                if (p == 0) {
                    if (!single) {
                        single = ensemble_predict(padded, model, cfg).pose;
                    }
                    cells[{s, p}].push_back(*single);
                } else {
                    cells[{s, p}].push_back(ensemble_predict(padded, model, cfg).pose);
                }
            }
        }
    }

    std::vector<SweepRow> rows;
    for (const auto& [key, preds] : cells) {
        const EnsembleConfig cfg{key.first, key.second};
        rows.push_back({key.first, key.second, cfg.ensemble_size(), mae(preds, gts)});
    }
    return rows;
}

void write_sweep_csv(const std::filesystem::path& path, std::span<const SweepRow> rows)
{
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream os(path);
    if (!os) {
        throw Error("cannot write " + path.string());
    }
    os << kSweepCsvHeader << '\n';
    os.precision(6);
    os << std::fixed;
    for (const auto& row : rows) {
        os << row.stride << ',' << row.padding << ',' << row.ensemble_size << ',' << row.mae.per_angle[0] << ','
           << row.mae.per_angle[1] << ',' << row.mae.per_angle[2] << ',' << row.mae.average << '\n';
    }
}

void render_sweep_heatmap(const std::filesystem::path& path, std::span<const SweepRow> rows)
{
    if (rows.empty()) {
        throw Error("no sweep rows to render");
    }
    std::set<int> strides, paddings;
    double lo = rows.front().mae.average, hi = lo;
    for (const auto& row : rows) {
        strides.insert(row.stride);
        paddings.insert(row.padding);
        lo = std::min(lo, row.mae.average);
        hi = std::max(hi, row.mae.average);
    }
    const std::vector<int> s_axis(strides.begin(), strides.end());
    const std::vector<int> p_axis(paddings.begin(), paddings.end());

    constexpr int cell = 48, margin = 40;
    cv::Mat canvas(margin + cell * static_cast<int>(s_axis.size()), margin + cell * static_cast<int>(p_axis.size()),
                   CV_8UC3, cv::Scalar::all(255));

    for (const auto& row : rows) {
        const auto si = std::find(s_axis.begin(), s_axis.end(), row.stride) - s_axis.begin();
        const auto pi = std::find(p_axis.begin(), p_axis.end(), row.padding) - p_axis.begin();
        const double t = hi > lo ? (row.mae.average - lo) / (hi - lo) : 0.0;
        cv::Mat level(1, 1, CV_8UC1, cv::Scalar(static_cast<int>(std::lround(255.0 * t))));
        cv::Mat color;
        cv::applyColorMap(level, color, cv::COLORMAP_VIRIDIS);
        const cv::Rect box(margin + static_cast<int>(pi) * cell, margin + static_cast<int>(si) * cell, cell, cell);
        cv::rectangle(canvas, box, cv::Scalar(color.at<cv::Vec3b>(0, 0)), cv::FILLED);
        char text[16];
        std::snprintf(text, sizeof(text), "%.2f", row.mae.average);
        cv::putText(canvas, text, {box.x + 3, box.y + cell / 2 + 4}, cv::FONT_HERSHEY_SIMPLEX, 0.35,
                    t > 0.6 ? cv::Scalar(0, 0, 0) : cv::Scalar(255, 255, 255), 1, cv::LINE_AA);
    }
    for (std::size_t i = 0; i < p_axis.size(); ++i) {
        cv::putText(canvas, "p" + std::to_string(p_axis[i]), {margin + static_cast<int>(i) * cell + 8, 25},
                    cv::FONT_HERSHEY_SIMPLEX, 0.4, cv::Scalar(0, 0, 0), 1, cv::LINE_AA);
    }
    for (std::size_t i = 0; i < s_axis.size(); ++i) {
        cv::putText(canvas, "s" + std::to_string(s_axis[i]), {4, margin + static_cast<int>(i) * cell + cell / 2 + 4},
                    cv::FONT_HERSHEY_SIMPLEX, 0.4, cv::Scalar(0, 0, 0), 1, cv::LINE_AA);
    }
    save_image(path, canvas);
}

}   // hpekd
