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

#include "hpekd/training.hpp"
#include "hpekd/error.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>

namespace hpekd {

EvalSet::EvalSet(const LoadedDataset& data)
{
    images_.reserve(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
        images_.push_back(data.image(i));
    }
    for (std::size_t i = 0; i < data.size(); ++i) {
        samples_.push_back({&images_[i], data.records[i].bbox, data.records[i].pose});
    }
}

std::uint64_t augmentation_seed(std::uint64_t base_seed, std::uint64_t epoch, std::size_t index)
{
    return mix_seed(mix_seed(base_seed, epoch), index);
}

TrainingCrop make_training_crop(const Image& image, const DatasetRecord& record, const AugmentationPlan* plan,
                                std::uint64_t seed, int input_size)
{
    const EnsembleConfig single{1, 0, input_size, input_size};
    if (!plan) {
        return {prepare_padded_crop(image, record.bbox, single), record.pose};
    }
    AugmentedSample aug = augment(image, record, *plan, seed);
    return {prepare_padded_crop(aug.image, aug.bbox, single), aug.pose};
}

std::vector<EulerPose> predict_batch(Model& model, std::span<const EvalSample> samples, int batch_size)
{
    const EnsembleConfig single{1, 0, model.input_size(), model.input_size()};
    std::vector<EulerPose> preds;
    preds.reserve(samples.size());
    for (std::size_t start = 0; start < samples.size(); start += batch_size) {
        const std::size_t end = std::min(samples.size(), start + static_cast<std::size_t>(batch_size));
        std::vector<Image> crops;
        for (std::size_t i = start; i < end; ++i) {
            crops.push_back(prepare_padded_crop(*samples[i].image, samples[i].bbox, single));
        }
        for (const auto& out : model.forward(to_input_tensor(crops, model.normalization()), false)) {
            preds.push_back(predict(out, model.heads()));
        }
    }
    return preds;
}

MaeReport evaluate_base(Model& model, std::span<const EvalSample> samples, std::vector<EulerPose>* predictions)
{
    if (samples.empty()) {
        throw Error("empty evaluation set");
    }
    auto preds = predict_batch(model, samples);
    std::vector<EulerPose> gts;
    for (const auto& s : samples) {
        gts.push_back(s.pose);
    }
    const MaeReport report = mae(preds, gts);
    if (predictions) {
        *predictions = std::move(preds);
    }
    return report;
}

std::string to_string(LrSchedule schedule)
{
    return schedule == LrSchedule::cosine ? "cosine" : "constant";
}

LrSchedule parse_lr_schedule(const std::string& name)
{
    if (name == "constant") return LrSchedule::constant;
    if (name == "cosine") return LrSchedule::cosine;
    throw Error("unknown lr schedule '" + name + "' (expected constant or cosine)");
}

double epoch_lr(const TrainOptions& options, int epoch)
{
    if (options.schedule == LrSchedule::constant || options.epochs <= 1) {
        return options.lr;
    }
    const double progress = static_cast<double>(epoch - 1) / options.epochs;
    return options.lr * 0.5 * (1.0 + std::cos(M_PI * progress));
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch)
{
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(mix_seed(seed ^ 0x5eedULL, static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng);
    return order;
}

std::vector<EpochMetrics> train_stage1(Model& model, const LoadedDataset& train, const EvalSet* val,
                                       const TrainOptions& options, const EpochCallback& on_epoch)
{
    if (options.epochs < 0 || options.batch_size < 1) {
        throw Error("epochs must be >= 0 and batch size >= 1");
    }
    if (!model.heads().has_regression_head) {
        throw Error("stage-1 training needs a model with a regression head");
    }
    if (train.size() == 0 && options.epochs > 0) {
        throw Error("empty training set");
    }

    nn::Adam optimizer(model.params(), {.lr = options.lr});
    const double theta = model.theta();
    std::vector<EpochMetrics> history;

    for (int epoch = 1; epoch <= options.epochs; ++epoch) {
        optimizer.set_lr(epoch_lr(options, epoch));
        const auto started = std::chrono::steady_clock::now();
        const auto order = epoch_order(train.size(), options.seed, epoch);
        double loss_sum = 0.0;

        for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(options.batch_size));
            std::vector<Image> crops;
            std::vector<EulerPose> poses;
            for (std::size_t k = start; k < end; ++k) {
                const std::size_t idx = order[k];
                auto sample = make_training_crop(train.image(idx), train.records[idx],
                                                 options.augment ? &options.plan : nullptr,
                                                 augmentation_seed(options.seed, epoch, idx), model.input_size());
                crops.push_back(std::move(sample.crop));
                poses.push_back(sample.pose);
            }

            optimizer.zero_grad();
            const auto outputs = model.forward(to_input_tensor(crops, model.normalization()), true);
            const double inv_n = 1.0 / static_cast<double>(outputs.size());
            std::vector<HeadGradients> grads;
            grads.reserve(outputs.size());
            for (std::size_t i = 0; i < outputs.size(); ++i) {
                auto lg = stage1_loss_with_grad(outputs[i], poses[i], model.heads(), theta);
                loss_sum += lg.value;
                for (auto& block : lg.grad.logits) {
                    for (auto& v : block) {
                        v *= inv_n;
                    }
                }
                for (auto& v : *lg.grad.regression_raw) {
                    v *= inv_n;
                }
                grads.push_back(std::move(lg.grad));
            }
            model.backward(grads);
            optimizer.step();
        }

        EpochMetrics m;
        m.epoch = epoch;
        m.lr = epoch_lr(options, epoch);
        m.train_loss = loss_sum / static_cast<double>(train.size());
        if (val && !val->empty()) {
            m.val_mae = evaluate_base(model, val->samples());
        }
        m.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        history.push_back(m);
        if (on_epoch) {
            on_epoch(m);
        }
    }
    return history;
}

}   // hpekd
