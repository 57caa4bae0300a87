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

#include "hpekd/model.hpp"
#include "hpekd/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>

namespace hpekd {

namespace {

constexpr char kCheckpointMagic[8] = {'H', 'P', 'E', 'K', 'D', 'C', 'K', '1'};

const std::map<BackboneFamily, std::string>& backbone_names()
{
    static const std::map<BackboneFamily, std::string> names = {
        {BackboneFamily::tiny_cnn, "tiny_cnn"},   {BackboneFamily::resnet18, "resnet18"},
        {BackboneFamily::resnet34, "resnet34"},   {BackboneFamily::resnet50, "resnet50"},
        {BackboneFamily::resnet101, "resnet101"}, {BackboneFamily::resnet152, "resnet152"},
    };
    return names;
}

}   // namespace

std::string to_string(BackboneFamily family)
{
    return backbone_names().at(family);
}

BackboneFamily parse_backbone(const std::string& name)
{
    for (const auto& [family, n] : backbone_names()) {
        if (n == name) {
            return family;
        }
    }
    throw Error("unknown backbone '" + name + "'");
}

std::string to_string(Stage stage)
{
    return stage == Stage::base ? "base" : "student";
}

// ---------------------------------------------------------------------------
// HeadOutputs

std::span<const double> HeadOutputs::angle_logits(std::size_t head, std::size_t angle) const
{
    const auto& block = logits.at(head);
    const std::size_t q = block.size() / 3;
    return std::span<const double>(block).subspan(angle * q, q);
}

std::span<double> HeadOutputs::angle_logits(std::size_t head, std::size_t angle)
{
    auto& block = logits.at(head);
    const std::size_t q = block.size() / 3;
    return std::span<double>(block).subspan(angle * q, q);
}

HeadOutputs HeadOutputs::zeros_like(const HeadConfig& config)
{
    HeadOutputs out;
    for (const auto& spec : config.bin_specs) {
        out.logits.emplace_back(3 * static_cast<std::size_t>(spec.bin_count()), 0.0);
    }
    if (config.has_regression_head) {
        out.regression_raw = std::array<double, 3>{0.0, 0.0, 0.0};
    }
    return out;
}

// ---------------------------------------------------------------------------
// Model

Model::Model(BackboneSpec backbone, HeadConfig heads, std::uint64_t seed, Normalization norm, int input_size)
    : backbone_(backbone), heads_(std::move(heads)), norm_(norm), input_size_(input_size)
{
    heads_.validate();
    if (backbone_.family != BackboneFamily::tiny_cnn) {
        throw Error("backbone '" + to_string(backbone_.family)
                    + "' is not built in; only tiny_cnn is available in this build");
    }
    if (backbone_.feature_dim != 128) {
        throw Error("tiny_cnn has feature_dim 128");
    }
    if (input_size_ < 32) {
        throw Error("input size must be at least 32 pixels");
    }

    std::mt19937_64 rng(seed);
    auto conv = [&](const char* name, int in, int out, int k, int stride, int pad) {
        auto layer = std::make_unique<nn::Conv2d>(name, in, out, k, stride, pad);
        layer->init_kaiming(rng);
        return layer;
    };

    auto stem = conv("block1.conv", 3, 16, 4, 4, 0);
    stem->set_input_grad(false);
    trunk_.add(std::move(stem));
    trunk_.add(std::make_unique<nn::ReLU>());
    trunk_.add(std::make_unique<nn::MaxPool2>());
    trunk_.add(conv("block2.conv", 16, 32, 3, 1, 1));
    trunk_.add(std::make_unique<nn::ReLU>());
    trunk_.add(std::make_unique<nn::MaxPool2>());
    trunk_.add(conv("block3.conv", 32, 64, 3, 1, 1));
    trunk_.add(std::make_unique<nn::ReLU>());
    trunk_.add(std::make_unique<nn::MaxPool2>());
    trunk_.add(conv("block4.conv", 64, 128, 3, 1, 1));
    trunk_.add(std::make_unique<nn::ReLU>());
    trunk_.add(std::make_unique<nn::GlobalAvgPool>());

    for (const auto& spec : heads_.bin_specs) {
        char name[64];
        std::snprintf(name, sizeof(name), "cls_head_b%g", spec.bin_size());
        cls_heads_.emplace_back(name, backbone_.feature_dim, 3 * spec.bin_count());
        cls_heads_.back().init_uniform(rng);
    }
    if (heads_.has_regression_head) {
        reg_head_.emplace("reg_head", backbone_.feature_dim, 3);
        reg_head_->init_uniform(rng);
    }
}

std::vector<HeadOutputs> Model::forward(const nn::Tensor& batch, bool train)
{
    if (batch.c() != 3 || batch.h() != input_size_ || batch.w() != input_size_) {
        throw Error("model expects (N, 3, " + std::to_string(input_size_) + ", " + std::to_string(input_size_)
                    + ") input, got (" + std::to_string(batch.n()) + ", " + std::to_string(batch.c()) + ", "
                    + std::to_string(batch.h()) + ", " + std::to_string(batch.w()) + ")");
    }
    nn::Tensor features = trunk_.forward(batch, train);

    const int n = batch.n();
    std::vector<HeadOutputs> outputs(n);
    for (std::size_t k = 0; k < cls_heads_.size(); ++k) {
        const nn::Tensor y = cls_heads_[k].forward(features, train);
        for (int i = 0; i < n; ++i) {
            outputs[i].logits.emplace_back(y.sample(i), y.sample(i) + y.sample_size());
        }
    }
    if (reg_head_) {
        const nn::Tensor y = reg_head_->forward(features, train);
        for (int i = 0; i < n; ++i) {
            outputs[i].regression_raw = std::array<double, 3>{y.sample(i)[0], y.sample(i)[1], y.sample(i)[2]};
        }
    }
    if (train) {
        features_ = std::move(features);
    }
    return outputs;
}

void Model::backward(std::span<const HeadGradients> grads)
{
    const int n = features_.n();
    if (static_cast<int>(grads.size()) != n) {
        throw Error("backward: gradient count does not match the last training batch");
    }

    nn::Tensor grad_features(features_.shape[0], features_.shape[1], features_.shape[2], features_.shape[3]);
    auto accumulate = [&](const nn::Tensor& g) {
        for (std::size_t i = 0; i < g.size(); ++i) {
            grad_features.data[i] += g.data[i];
        }
    };

    for (std::size_t k = 0; k < cls_heads_.size(); ++k) {
        nn::Tensor dy(n, cls_heads_[k].out_features(), 1, 1);
        for (int i = 0; i < n; ++i) {
            const auto& g = grads[i].logits.at(k);
            std::transform(g.begin(), g.end(), dy.sample(i), [](double v) { return static_cast<float>(v); });
        }
        accumulate(cls_heads_[k].backward(dy));
    }
    if (reg_head_) {
        nn::Tensor dy(n, 3, 1, 1);
        for (int i = 0; i < n; ++i) {
            const auto& g = grads[i].regression_raw;
            if (!g) {
                throw Error("backward: missing regression gradient");
            }
            for (int a = 0; a < 3; ++a) {
                dy.sample(i)[a] = static_cast<float>((*g)[a]);
            }
        }
        accumulate(reg_head_->backward(dy));
    }
    trunk_.backward(grad_features);
}

std::vector<nn::Param*> Model::params()
{
    auto out = trunk_.params();
    for (auto& head : cls_heads_) {
        for (auto* p : head.params()) {
            out.push_back(p);
        }
    }
    if (reg_head_) {
        for (auto* p : reg_head_->params()) {
            out.push_back(p);
        }
    }
    return out;
}

std::size_t Model::parameter_count()
{
    std::size_t total = 0;
    for (auto* p : params()) {
        total += p->value.size();
    }
    return total;
}

void Model::zero_parameters()
{
    for (auto* p : params()) {
        std::fill(p->value.begin(), p->value.end(), 0.0f);
    }
}

void Model::init_from(Model& other)
{
    if (other.backbone_ != backbone_ || other.input_size_ != input_size_) {
        throw Error("init_from: backbone or input size differs");
    }
    auto mine = trunk_.params();
    auto theirs = other.trunk_.params();
    for (std::size_t i = 0; i < mine.size(); ++i) {
        mine[i]->value = theirs[i]->value;
    }
    for (std::size_t k = 0; k < heads_.bin_specs.size(); ++k) {
        for (std::size_t j = 0; j < other.heads_.bin_specs.size(); ++j) {
            if (heads_.bin_specs[k] == other.heads_.bin_specs[j]) {
                auto dst = cls_heads_[k].params();
                auto src = other.cls_heads_[j].params();
                for (std::size_t p = 0; p < dst.size(); ++p) {
                    dst[p]->value = src[p]->value;
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

nlohmann::json head_config_json(const HeadConfig& cfg)
{
    nlohmann::json bins = nlohmann::json::array();
    for (const auto& spec : cfg.bin_specs) {
        bins.push_back({{"bin_size", spec.bin_size()},
                        {"bin_count", spec.bin_count()},
                        {"theta", spec.theta()},
                        {"centers", std::vector<double>(spec.centers().begin(), spec.centers().end())},
                        {"fingerprint", spec.fingerprint()}});
    }
    return {{"bin_specs", bins}, {"has_regression_head", cfg.has_regression_head}};
}

HeadConfig head_config_from_json(const nlohmann::json& j)
{
    HeadConfig cfg;
    for (const auto& b : j.at("bin_specs")) {
        BinSpec spec(b.at("bin_size").get<double>(), b.at("theta").get<double>());
        const auto centers = b.at("centers").get<std::vector<double>>();
        if (spec.bin_count() != b.at("bin_count").get<int>()
            || !std::equal(centers.begin(), centers.end(), spec.centers().begin(), spec.centers().end())) {
            throw Error("checkpoint bin grid for bin size " + std::to_string(spec.bin_size())
                        + " differs from this build's grid rule");
        }
        cfg.bin_specs.push_back(spec);
    }
    cfg.has_regression_head = j.at("has_regression_head").get<bool>();
    return cfg;
}

template <typename T>
void write_pod(std::ostream& os, const T& v)
{
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is)
{
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) {
        throw Error("truncated checkpoint");
    }
    return v;
}

}   // namespace

void Model::save(const std::filesystem::path& path)
{
    nlohmann::json meta = {
        {"format", "hpekd-checkpoint"},
        {"version", 1},
        {"stage", to_string(stage())},
        {"backbone",
         {{"family", to_string(backbone_.family)},
          {"feature_dim", backbone_.feature_dim},
          {"pretrained", backbone_.pretrained}}},
        {"heads", head_config_json(heads_)},
        {"theta", theta()},
        {"input_size", input_size_},
        {"normalization", {{"mean", norm_.mean}, {"std", norm_.std}, {"channel_order", "rgb"}}},
        {"bin_grid_rule", "count=ceil(2*theta/b), symmetric centers"},
        {"regression_loss", "mean of three absolute angle errors"},
    };
    nlohmann::json tensors = nlohmann::json::array();
    for (auto* p : params()) {
        tensors.push_back({{"name", p->name}, {"size", p->value.size()}});
    }
    meta["tensors"] = tensors;

    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream os(path, std::ios::binary);
    if (!os) {
        throw Error("cannot write checkpoint: " + path.string());
    }
    const std::string header = meta.dump();
    os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    write_pod<std::uint64_t>(os, header.size());
    os.write(header.data(), static_cast<std::streamsize>(header.size()));
    for (auto* p : params()) {
        os.write(reinterpret_cast<const char*>(p->value.data()),
                 static_cast<std::streamsize>(p->value.size() * sizeof(float)));
    }
    if (!os) {
        throw Error("failed writing checkpoint: " + path.string());
    }
}

Model Model::load(const std::filesystem::path& path)
{
    if (!std::filesystem::exists(path)) {
        throw FileNotFound(path.string());
    }
    std::ifstream is(path, std::ios::binary);
    char magic[sizeof(kCheckpointMagic)];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
        throw Error("not an hpekd checkpoint: " + path.string());
    }
    const auto header_size = read_pod<std::uint64_t>(is);
    std::string header(header_size, '\0');
    is.read(header.data(), static_cast<std::streamsize>(header_size));
    if (!is) {
        throw Error("truncated checkpoint header: " + path.string());
    }
    const auto meta = nlohmann::json::parse(header);

    BackboneSpec backbone;
    backbone.family = parse_backbone(meta.at("backbone").at("family").get<std::string>());
    backbone.feature_dim = meta.at("backbone").at("feature_dim").get<int>();
    backbone.pretrained = meta.at("backbone").at("pretrained").get<bool>();
    Normalization norm;
    norm.mean = meta.at("normalization").at("mean").get<std::array<float, 3>>();
    norm.std = meta.at("normalization").at("std").get<std::array<float, 3>>();

    Model model(backbone, head_config_from_json(meta.at("heads")), 0, norm, meta.at("input_size").get<int>());
    if (std::abs(model.theta() - meta.at("theta").get<double>()) > 0.0) {
        throw Error("checkpoint theta does not match its bin specs");
    }

    auto params = model.params();
    const auto& tensors = meta.at("tensors");
    if (tensors.size() != params.size()) {
        throw Error("checkpoint tensor count mismatch");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (tensors[i].at("name").get<std::string>() != params[i]->name
            || tensors[i].at("size").get<std::size_t>() != params[i]->value.size()) {
            throw Error("checkpoint tensor layout mismatch at " + params[i]->name);
        }
        is.read(reinterpret_cast<char*>(params[i]->value.data()),
                static_cast<std::streamsize>(params[i]->value.size() * sizeof(float)));
        if (!is) {
            throw Error("truncated checkpoint payload: " + path.string());
        }
    }
    return model;
}

Model Model::load(const std::filesystem::path& path, const HeadConfig& expected)
{
    Model model = load(path);
    if (!(model.heads() == expected)) {
        throw Error("checkpoint head config does not match the requested head config: " + path.string());
    }
    return model;
}

// ---------------------------------------------------------------------------
// Losses and prediction

double cross_entropy(std::span<const double> logits, int target)
{
    if (target < 0 || target >= static_cast<int>(logits.size())) {
        throw Error("cross_entropy: target class out of range");
    }
    const double mx = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (double v : logits) {
        sum += std::exp(v - mx);
    }
    return std::log(sum) + mx - logits[target];
}

namespace {

void check_outputs(const HeadOutputs& outputs, const HeadConfig& config)
{
    if (outputs.logits.size() != config.bin_specs.size()) {
        throw Error("head outputs do not match head config: expected " + std::to_string(config.bin_specs.size())
                    + " classification heads, got " + std::to_string(outputs.logits.size()));
    }
    for (std::size_t k = 0; k < config.bin_specs.size(); ++k) {
        if (outputs.logits[k].size() != 3 * static_cast<std::size_t>(config.bin_specs[k].bin_count())) {
            throw Error("head " + std::to_string(k) + " has wrong logit count");
        }
    }
    if (config.has_regression_head && !outputs.regression_raw) {
        throw Error("missing regression output");
    }
}

}   // namespace

LossWithGrad stage1_loss_with_grad(const HeadOutputs& outputs, const EulerPose& gt, const HeadConfig& config,
                                   double theta)
{
    check_outputs(outputs, config);
    const auto m = static_cast<double>(config.bin_specs.size());
    const double norm = 1.0 / (m + (config.has_regression_head ? 1.0 : 0.0));

    LossWithGrad out;
    out.grad = HeadOutputs::zeros_like(config);
    double total = 0.0;

    for (std::size_t k = 0; k < config.bin_specs.size(); ++k) {
        const auto& spec = config.bin_specs[k];
        for (std::size_t a = 0; a < 3; ++a) {
            const auto logits = outputs.angle_logits(k, a);
            const int target = encode_class_clamped(gt[a], spec);
            total += cross_entropy(logits, target);
            const auto probs = softmax(logits);
            auto g = out.grad.angle_logits(k, a);
            for (std::size_t j = 0; j < probs.size(); ++j) {
                g[j] = norm * (probs[j] - (static_cast<int>(j) == target ? 1.0 : 0.0));
            }
        }
    }

    if (config.has_regression_head) {
        const auto& raw = *outputs.regression_raw;
        const EulerPose pred = decode_regression(raw, theta);
        auto& g = *out.grad.regression_raw;
        for (std::size_t a = 0; a < 3; ++a) {
            const double diff = pred[a] - gt[a];
            total += std::abs(diff) / 3.0;
            const double t = std::tanh(raw[a]);
            const double sign = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
            g[a] = norm * sign / 3.0 * theta * (1.0 - t * t);
        }
    }
    out.value = total * norm;
    return out;
}

double stage1_loss(const HeadOutputs& outputs, const EulerPose& gt, const HeadConfig& config, double theta)
{
    return stage1_loss_with_grad(outputs, gt, config, theta).value;
}

EulerPose predict(const HeadOutputs& outputs, const HeadConfig& config)
{
    const std::size_t head = config.prediction_head();
    if (outputs.logits.size() <= head) {
        throw Error("predict: outputs lack the prediction head");
    }
    const auto& spec = config.bin_specs[head];
    EulerPose pose;
    for (std::size_t a = 0; a < 3; ++a) {
        pose[a] = decode_expectation(outputs.angle_logits(head, a), spec);
    }
    return pose;
}

}   // hpekd
