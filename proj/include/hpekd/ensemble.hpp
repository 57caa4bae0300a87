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

#include "hpekd/geometry.hpp"
#include "hpekd/image.hpp"
#include "hpekd/model.hpp"

#include <array>
#include <filesystem>
#include <span>
#include <vector>

namespace hpekd {

/// Offset grid of the convolutional ensemble: stride s, padding p and the
/// network input size. The grid has A = (2p/s + 1)^2 crops.
struct EnsembleConfig
{
    int stride = 1;
    int padding = 0;
    int input_w = Model::kDefaultInputSize;
    int input_h = Model::kDefaultInputSize;

    /// Throws "stride must divide padding" and friends.
    void validate() const;
    int steps_per_axis() const { return 2 * padding / stride + 1; }
    int ensemble_size() const { return steps_per_axis() * steps_per_axis(); }

    bool operator==(const EnsembleConfig&) const = default;
};

/// Scale factors and the padded crop region in scaled-image pixels.
struct CropGeometry
{
    double scale_x = 1.0;
    double scale_y = 1.0;
    int scaled_w = 0;     // size of the whole scaled image
    int scaled_h = 0;
    PixelRect padded_region;
};

/// r_x = w / (x2 - x1), r_y = h / (y2 - y1); the padded region starts at the
/// rounded scaled bbox corner minus p and spans (w + 2p) x (h + 2p).
CropGeometry crop_geometry(int image_w, int image_h, const BoundingBox& bbox, const EnsembleConfig& config);

/// Rectangles (s*i, s*j, s*i + w, s*j + h) for 0 <= i, j <= 2p/s, row-major
/// (j is the row index).
std::vector<PixelRect> offset_grid(const EnsembleConfig& config);

/// Bilinear sample of the scaled image at integer scaled-image coordinates;
/// source coordinate u = (sx + 0.5) / r - 0.5 with edge clamping.
cv::Vec3f sample_scaled(const Image& image, double scale_x, double scale_y, int sx, int sy);

/// Scales the image by (r_x, r_y) and crops the padded region. Pixels outside
/// the scaled image are zero.
Image prepare_padded_crop(const Image& image, const BoundingBox& bbox, const EnsembleConfig& config);

/// Per-angle probability vectors over the prediction head's bins.
struct TeacherDistribution
{
    std::array<std::vector<double>, 3> probs;

    /// Throws unless every vector is non-negative and sums to 1 within tol.
    void validate(double tol = 1e-6) const;
    int bin_count() const { return static_cast<int>(probs[0].size()); }
};

/// Element-wise mean of per-crop softmax distributions.
TeacherDistribution average_distributions(std::span<const TeacherDistribution> parts);

/// Softmax of the prediction head of one output.
TeacherDistribution head_distribution(const HeadOutputs& outputs, const HeadConfig& config);

EulerPose distribution_pose(const TeacherDistribution& dist, const BinSpec& spec);

struct EnsemblePrediction
{
    TeacherDistribution distribution;
    EulerPose pose;
};

/// Crops the padded image at every grid offset, runs the model once on the
/// batch of A crops and averages the prediction head's softmax.
EnsemblePrediction ensemble_predict(const Image& padded, Model& model, const EnsembleConfig& config);

/// One labelled evaluation sample: a decoded image, its bbox and pose.
struct EvalSample
{
    const Image* image = nullptr;
    BoundingBox bbox;
    EulerPose pose;
};

struct SweepRow
{
    int stride = 0;
    int padding = 0;
    int ensemble_size = 0;
    MaeReport mae;
};

/// Evaluates ensemble MAE over the samples for every (s, p) pair with s | p;
/// other pairs are skipped. Rows are ordered by s, then p.
std::vector<SweepRow> sweep(std::span<const EvalSample> samples, Model& model, std::span<const int> s_values,
                            std::span<const int> p_values);

/// Ensemble MAE for one config (p = 0 gives the single-model baseline).
MaeReport evaluate_ensemble(std::span<const EvalSample> samples, Model& model, const EnsembleConfig& config,
                            std::vector<EulerPose>* predictions = nullptr);

inline constexpr const char* kSweepCsvHeader = "s,p,A,pitch_mae,yaw_mae,roll_mae,avg_mae";

void write_sweep_csv(const std::filesystem::path& path, std::span<const SweepRow> rows);

/// Heat map of average MAE, strides as rows and paddings as columns; invalid
/// cells are left white.
void render_sweep_heatmap(const std::filesystem::path& path, std::span<const SweepRow> rows);

}   // hpekd
