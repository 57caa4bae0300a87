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

#include "hpekd/image.hpp"
#include "hpekd/nn.hpp"
#include "hpekd/pose_math.hpp"
#include "hpekd/rvc_codec.hpp"

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace hpekd {

enum class BackboneFamily
{
    tiny_cnn,
    resnet18,
    resnet34,
    resnet50,
    resnet101,
    resnet152,
};

std::string to_string(BackboneFamily family);
BackboneFamily parse_backbone(const std::string& name);

struct BackboneSpec
{
    BackboneFamily family = BackboneFamily::tiny_cnn;
    int feature_dim = 128;
    bool pretrained = false;

    static BackboneSpec tiny_cnn() { return {}; }
    bool operator==(const BackboneSpec&) const = default;
};

/// Raw outputs of all heads for one image. Classification logits are stored
/// angle-major: logits[head][angle * bin_count + j], angle order pitch, yaw,
/// roll.
struct HeadOutputs
{
    std::vector<std::vector<double>> logits;
    std::optional<std::array<double, 3>> regression_raw;

    std::span<const double> angle_logits(std::size_t head, std::size_t angle) const;
    std::span<double> angle_logits(std::size_t head, std::size_t angle);

    /// Zero-valued outputs shaped like config.
    static HeadOutputs zeros_like(const HeadConfig& config);
};

/// Gradients have the same layout as the outputs they differentiate.
using HeadGradients = HeadOutputs;

enum class Stage
{
    base,       // multi-head stage-1 model
    student,    // single-head distilled model
};

std::string to_string(Stage stage);

/// Backbone plus head branches. Only the tiny_cnn backbone is built in:
///
///   conv 4x4/4 (3->16) relu maxpool2
///   conv 3x3 (16->32) relu maxpool2
///   conv 3x3 (32->64) relu maxpool2
///   conv 3x3 (64->128) relu
///   global average pool -> 128 features
///
/// Every head is a single fully connected layer on the pooled features.
class Model
{
public:
    static constexpr int kDefaultInputSize = 224;

    Model(BackboneSpec backbone, HeadConfig heads, std::uint64_t seed = 0,
          Normalization norm = {}, int input_size = kDefaultInputSize);

    Model(const Model&) = delete;
    Model& operator=(const Model&) = delete;
    Model(Model&&) noexcept = default;
    Model& operator=(Model&&) noexcept = default;

    /// One HeadOutputs per image of an (N, 3, h, w) batch. With train=true
    /// the activations needed by backward() are kept.
    std::vector<HeadOutputs> forward(const nn::Tensor& batch, bool train = false);

    /// Backpropagates per-image output gradients of the last training
    /// forward() and accumulates them into the parameter gradients.
    void backward(std::span<const HeadGradients> grads);

    std::vector<nn::Param*> params();
    std::size_t parameter_count();
    void zero_parameters();

    /// Copies backbone weights and any head with a matching bin grid from
    /// another model (student initialization from a teacher).
    void init_from(Model& other);

    const BackboneSpec& backbone() const noexcept { return backbone_; }
    const HeadConfig& heads() const noexcept { return heads_; }
    const Normalization& normalization() const noexcept { return norm_; }
    double theta() const { return heads_.theta(); }
    int input_size() const noexcept { return input_size_; }
    Stage stage() const noexcept { return heads_.has_regression_head ? Stage::base : Stage::student; }

    /// Checkpoint: magic, JSON metadata block, then every parameter tensor as
    /// little-endian float32. Loading is bit-exact.
    void save(const std::filesystem::path& path);
    static Model load(const std::filesystem::path& path);
    /// Loads and refuses a checkpoint whose head config differs from expected.
    static Model load(const std::filesystem::path& path, const HeadConfig& expected);

private:
    BackboneSpec backbone_;
    HeadConfig heads_;
    Normalization norm_;
    int input_size_;
    nn::Sequential trunk_;
    std::vector<nn::Linear> cls_heads_;
    std::optional<nn::Linear> reg_head_;
    nn::Tensor features_;
};

struct LossWithGrad
{
    double value = 0.0;
    HeadGradients grad;
};

/// Joint stage-1 objective for one image:
/// (L_reg + sum_j L_j) / (M + 1), with L_j the summed cross-entropy of head j
/// over the three angles and L_reg the mean absolute error (mean over the
/// three angles) of the tanh-decoded regression output.
double stage1_loss(const HeadOutputs& outputs, const EulerPose& gt, const HeadConfig& config, double theta);
LossWithGrad stage1_loss_with_grad(const HeadOutputs& outputs, const EulerPose& gt, const HeadConfig& config,
                                   double theta);

/// Cross-entropy of one angle's logits against a class index.
double cross_entropy(std::span<const double> logits, int target);

/// Test-time prediction from the smallest-bin-size head.
EulerPose predict(const HeadOutputs& outputs, const HeadConfig& config);

}   // hpekd
