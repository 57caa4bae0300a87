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

#include <array>
#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace hpekd::nn {

/// Dense float tensor in NCHW layout. Two-dimensional data uses (N, C, 1, 1).
struct Tensor
{
    std::array<int, 4> shape{0, 0, 0, 0};
    std::vector<float> data;

    Tensor() = default;
    Tensor(int n, int c, int h, int w, float fill = 0.0f);

    int n() const noexcept { return shape[0]; }
    int c() const noexcept { return shape[1]; }
    int h() const noexcept { return shape[2]; }
    int w() const noexcept { return shape[3]; }
    std::size_t size() const noexcept { return data.size(); }
    /// Elements per sample (C*H*W).
    std::size_t sample_size() const noexcept { return static_cast<std::size_t>(shape[1]) * shape[2] * shape[3]; }

    float* sample(int i) noexcept { return data.data() + i * sample_size(); }
    const float* sample(int i) const noexcept { return data.data() + i * sample_size(); }
};

struct Param
{
    std::string name;
    std::vector<float> value;
    std::vector<float> grad;

    Param(std::string n, std::size_t size) : name(std::move(n)), value(size, 0.0f), grad(size, 0.0f) {}
};

class Layer
{
public:
    virtual ~Layer() = default;

    /// When train is true the layer keeps whatever it needs for backward().
    virtual Tensor forward(const Tensor& input, bool train) = 0;
    /// Accumulates parameter gradients and returns the input gradient.
    virtual Tensor backward(const Tensor& grad_output) = 0;
    virtual std::vector<Param*> params() { return {}; }
    virtual std::string kind() const = 0;
};

class Conv2d : public Layer
{
public:
    Conv2d(std::string name, int in_channels, int out_channels, int kernel, int stride, int padding);

    Tensor forward(const Tensor& input, bool train) override;
    Tensor backward(const Tensor& grad_output) override;
    std::vector<Param*> params() override { return {&weight_, &bias_}; }
    std::string kind() const override { return "conv2d"; }

    /// The first layer of a network does not need an input gradient.
    void set_input_grad(bool enabled) noexcept { input_grad_ = enabled; }
    void init_kaiming(std::mt19937_64& rng);

private:
    void im2col(const float* image, int h, int w, float* col) const;
    void col2im(const float* col, int h, int w, float* image) const;

    int in_, out_, k_, stride_, pad_;
    bool input_grad_ = true;
    Param weight_;   // out x (in*k*k)
    Param bias_;
    Tensor input_;
};

class ReLU : public Layer
{
public:
    Tensor forward(const Tensor& input, bool train) override;
    Tensor backward(const Tensor& grad_output) override;
    std::string kind() const override { return "relu"; }

private:
    Tensor output_;
};

/// 2x2 max pooling with stride 2 (odd trailing rows/cols are dropped).
class MaxPool2 : public Layer
{
public:
    Tensor forward(const Tensor& input, bool train) override;
    Tensor backward(const Tensor& grad_output) override;
    std::string kind() const override { return "maxpool2"; }

private:
    std::array<int, 4> in_shape_{};
    std::vector<std::uint32_t> argmax_;
};

class GlobalAvgPool : public Layer
{
public:
    Tensor forward(const Tensor& input, bool train) override;
    Tensor backward(const Tensor& grad_output) override;
    std::string kind() const override { return "gap"; }

private:
    std::array<int, 4> in_shape_{};
};

/// Fully connected layer on (N, in, 1, 1) tensors.
class Linear : public Layer
{
public:
    Linear(std::string name, int in_features, int out_features);

    Tensor forward(const Tensor& input, bool train) override;
    Tensor backward(const Tensor& grad_output) override;
    std::vector<Param*> params() override { return {&weight_, &bias_}; }
    std::string kind() const override { return "linear"; }

    int in_features() const noexcept { return in_; }
    int out_features() const noexcept { return out_; }
    void init_uniform(std::mt19937_64& rng);

private:
    int in_, out_;
    Param weight_;   // out x in
    Param bias_;
    Tensor input_;
};

class Sequential
{
public:
    void add(std::unique_ptr<Layer> layer) { layers_.push_back(std::move(layer)); }

    Tensor forward(const Tensor& input, bool train);
    Tensor backward(const Tensor& grad_output);
    std::vector<Param*> params();
    std::span<const std::unique_ptr<Layer>> layers() const noexcept { return layers_; }

private:
    std::vector<std::unique_ptr<Layer>> layers_;
};

struct AdamOptions
{
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

class Adam
{
public:
    Adam(std::vector<Param*> params, AdamOptions options);

    void zero_grad();
    void step();
    std::int64_t steps() const noexcept { return t_; }
    void set_lr(double lr) noexcept { opt_.lr = lr; }

private:
    std::vector<Param*> params_;
    AdamOptions opt_;
    std::vector<std::vector<float>> m_, v_;
    std::int64_t t_ = 0;
};

}   // hpekd::nn
