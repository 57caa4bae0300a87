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

#include "hpekd/augment.hpp"
#include "hpekd/data.hpp"
#include "hpekd/ensemble.hpp"
#include "hpekd/model.hpp"

#include <functional>
#include <optional>
#include <span>
#include <vector>

namespace hpekd {

enum class LrSchedule
{
    constant,   // the same rate every epoch
    cosine,     // half a cosine from lr down towards 0 over the run
};

std::string to_string(LrSchedule schedule);
LrSchedule parse_lr_schedule(const std::string& name);

struct TrainOptions
{
    int epochs = 100;
    int batch_size = 128;
    double lr = 1e-4;
    LrSchedule schedule = LrSchedule::constant;
    std::uint64_t seed = 0;
    bool augment = true;
    AugmentationPlan plan;
};

struct EpochMetrics
{
    int epoch = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    std::optional<double> l_cls;    // stage 2 only
    std::optional<double> l_dist;   // stage 2 only
    std::optional<MaeReport> val_mae;
    double seconds = 0.0;
};

using EpochCallback = std::function<void(const EpochMetrics&)>;

/// Evaluation view over a loaded dataset (images decoded to float once).
class EvalSet
{
public:
    explicit EvalSet(const LoadedDataset& data);

    std::span<const EvalSample> samples() const noexcept { return samples_; }
    std::size_t size() const noexcept { return samples_.size(); }
    bool empty() const noexcept { return samples_.empty(); }

private:
    std::vector<Image> images_;
    std::vector<EvalSample> samples_;
};

/// Seed of the augmentation applied to record `index` in `epoch`.
std::uint64_t augmentation_seed(std::uint64_t base_seed, std::uint64_t epoch, std::size_t index);

/// Network input crop (p = 0) of one record after optional augmentation.
struct TrainingCrop
{
    Image crop;
    EulerPose pose;
};

TrainingCrop make_training_crop(const Image& image, const DatasetRecord& record, const AugmentationPlan* plan,
                                std::uint64_t seed, int input_size);

/// Single-model predictions (smallest bin head), batched.
std::vector<EulerPose> predict_batch(Model& model, std::span<const EvalSample> samples, int batch_size = 64);

/// MAE of single-model predictions.
MaeReport evaluate_base(Model& model, std::span<const EvalSample> samples,
                        std::vector<EulerPose>* predictions = nullptr);

/// Stage-1 multi-head training with Adam on the mean joint loss.
std::vector<EpochMetrics> train_stage1(Model& model, const LoadedDataset& train, const EvalSet* val,
                                       const TrainOptions& options, const EpochCallback& on_epoch = {});

/// Learning rate used during epoch (1-based).
double epoch_lr(const TrainOptions& options, int epoch);

/// Deterministic shuffled visiting order for one epoch.
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch);

}   // hpekd
