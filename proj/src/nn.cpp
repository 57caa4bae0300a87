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

#include "hpekd/nn.hpp"
#include "hpekd/error.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <limits>

namespace hpekd::nn {

Tensor::Tensor(int n, int c, int h, int w, float fill)
    : shape{n, c, h, w}, data(static_cast<std::size_t>(n) * c * h * w, fill)
{
}

// ---------------------------------------------------------------------------
// Conv2d

Conv2d::Conv2d(std::string name, int in_channels, int out_channels, int kernel, int stride, int padding)
    : in_(in_channels), out_(out_channels), k_(kernel), stride_(stride), pad_(padding),
      weight_(name + ".weight", static_cast<std::size_t>(out_channels) * in_channels * kernel * kernel),
      bias_(name + ".bias", static_cast<std::size_t>(out_channels))
{
    if (in_ <= 0 || out_ <= 0 || k_ <= 0 || stride_ <= 0 || pad_ < 0) {
        throw Error("invalid conv2d geometry for " + name);
    }
}

void Conv2d::init_kaiming(std::mt19937_64& rng)
{
    const double fan_in = static_cast<double>(in_) * k_ * k_;
    std::normal_distribution<float> dist(0.0f, static_cast<float>(std::sqrt(2.0 / fan_in)));
    for (auto& w : weight_.value) {
        w = dist(rng);
    }
    std::fill(bias_.value.begin(), bias_.value.end(), 0.0f);
}

void Conv2d::im2col(const float* image, int h, int w, float* col) const
{
    const int ho = (h + 2 * pad_ - k_) / stride_ + 1;
    const int wo = (w + 2 * pad_ - k_) / stride_ + 1;
    for (int c = 0; c < in_; ++c) {
        const float* plane = image + static_cast<std::size_t>(c) * h * w;
        for (int ki = 0; ki < k_; ++ki) {
            for (int kj = 0; kj < k_; ++kj) {
                float* row = col + ((static_cast<std::size_t>(c) * k_ + ki) * k_ + kj) * ho * wo;
                for (int oy = 0; oy < ho; ++oy) {
                    const int iy = oy * stride_ - pad_ + ki;
                    float* dst = row + static_cast<std::size_t>(oy) * wo;
                    if (iy < 0 || iy >= h) {
                        std::fill(dst, dst + wo, 0.0f);
                        continue;
                    }
                    const float* src = plane + static_cast<std::size_t>(iy) * w;
                    for (int ox = 0; ox < wo; ++ox) {
                        const int ix = ox * stride_ - pad_ + kj;
                        dst[ox] = (ix >= 0 && ix < w) ? src[ix] : 0.0f;
                    }
                }
            }
        }
    }
}

void Conv2d::col2im(const float* col, int h, int w, float* image) const
{
    const int ho = (h + 2 * pad_ - k_) / stride_ + 1;
    const int wo = (w + 2 * pad_ - k_) / stride_ + 1;
    std::fill(image, image + static_cast<std::size_t>(in_) * h * w, 0.0f);
    for (int c = 0; c < in_; ++c) {
        float* plane = image + static_cast<std::size_t>(c) * h * w;
        for (int ki = 0; ki < k_; ++ki) {
            for (int kj = 0; kj < k_; ++kj) {
                const float* row = col + ((static_cast<std::size_t>(c) * k_ + ki) * k_ + kj) * ho * wo;
                for (int oy = 0; oy < ho; ++oy) {
                    const int iy = oy * stride_ - pad_ + ki;
                    if (iy < 0 || iy >= h) {
                        continue;
                    }
                    const float* src = row + static_cast<std::size_t>(oy) * wo;
                    float* dst = plane + static_cast<std::size_t>(iy) * w;
                    for (int ox = 0; ox < wo; ++ox) {
                        const int ix = ox * stride_ - pad_ + kj;
                        if (ix >= 0 && ix < w) {
                            dst[ix] += src[ox];
                        }
                    }
                }
            }
        }
    }
}

Tensor Conv2d::forward(const Tensor& input, bool train)
{
    if (input.c() != in_) {
        throw Error("conv2d expects " + std::to_string(in_) + " channels, got " + std::to_string(input.c()));
    }
    const int h = input.h(), w = input.w();
    const int ho = (h + 2 * pad_ - k_) / stride_ + 1;
    const int wo = (w + 2 * pad_ - k_) / stride_ + 1;
    if (ho <= 0 || wo <= 0) {
        throw Error("conv2d input too small");
    }
    const int kk = in_ * k_ * k_;
    const int spatial = ho * wo;

    Tensor out(input.n(), out_, ho, wo);
    std::vector<float> col(static_cast<std::size_t>(kk) * spatial);
    for (int i = 0; i < input.n(); ++i) {
        im2col(input.sample(i), h, w, col.data());
        float* y = out.sample(i);
        for (int o = 0; o < out_; ++o) {
            std::fill(y + static_cast<std::size_t>(o) * spatial, y + static_cast<std::size_t>(o + 1) * spatial,
                      bias_.value[o]);
        }
        cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, out_, spatial, kk, 1.0f, weight_.value.data(), kk,
                    col.data(), spatial, 1.0f, y, spatial);
    }
    if (train) {
        input_ = input;
    }
    return out;
}

Tensor Conv2d::backward(const Tensor& grad_output)
{
    const int h = input_.h(), w = input_.w();
    const int ho = grad_output.h(), wo = grad_output.w();
    const int kk = in_ * k_ * k_;
    const int spatial = ho * wo;

    Tensor grad_input;
    if (input_grad_) {
        grad_input = Tensor(input_.n(), in_, h, w);
    }
    std::vector<float> dcol(input_grad_ ? static_cast<std::size_t>(kk) * spatial : 0);
    std::vector<float> col(static_cast<std::size_t>(kk) * spatial);

    for (int i = 0; i < input_.n(); ++i) {
        const float* dy = grad_output.sample(i);
        for (int o = 0; o < out_; ++o) {
            const float* row = dy + static_cast<std::size_t>(o) * spatial;
            double acc = 0.0;
            for (int s = 0; s < spatial; ++s) {
                acc += row[s];
            }
            bias_.grad[o] += static_cast<float>(acc);
        }
        im2col(input_.sample(i), h, w, col.data());
        cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasTrans, out_, kk, spatial, 1.0f, dy, spatial, col.data(),
                    spatial, 1.0f, weight_.grad.data(), kk);
        if (input_grad_) {
            cblas_sgemm(CblasRowMajor, CblasTrans, CblasNoTrans, kk, spatial, out_, 1.0f, weight_.value.data(), kk,
                        dy, spatial, 0.0f, dcol.data(), spatial);
            col2im(dcol.data(), h, w, grad_input.sample(i));
        }
    }
    return grad_input;
}

// ---------------------------------------------------------------------------
// ReLU

Tensor ReLU::forward(const Tensor& input, bool train)
{
    Tensor out = input;
    for (auto& v : out.data) {
        v = v > 0.0f ? v : 0.0f;
    }
    if (train) {
        output_ = out;
    }
    return out;
}

Tensor ReLU::backward(const Tensor& grad_output)
{
    Tensor grad = grad_output;
    for (std::size_t i = 0; i < grad.data.size(); ++i) {
        if (output_.data[i] <= 0.0f) {
            grad.data[i] = 0.0f;
        }
    }
    return grad;
}

// ---------------------------------------------------------------------------
// MaxPool2

Tensor MaxPool2::forward(const Tensor& input, bool train)
{
    const int n = input.n(), c = input.c(), h = input.h(), w = input.w();
    const int ho = h / 2, wo = w / 2;
    if (ho == 0 || wo == 0) {
        throw Error("maxpool input too small");
    }
    Tensor out(n, c, ho, wo);
    if (train) {
        in_shape_ = input.shape;
        argmax_.resize(out.size());
    }
    std::size_t o = 0;
    for (int p = 0; p < n * c; ++p) {
        const float* plane = input.data.data() + static_cast<std::size_t>(p) * h * w;
        for (int y = 0; y < ho; ++y) {
            for (int x = 0; x < wo; ++x, ++o) {
                std::uint32_t best = (2 * y) * w + 2 * x;
                for (std::uint32_t cand : {static_cast<std::uint32_t>((2 * y) * w + 2 * x + 1),
                                           static_cast<std::uint32_t>((2 * y + 1) * w + 2 * x),
                                           static_cast<std::uint32_t>((2 * y + 1) * w + 2 * x + 1)}) {
                    if (plane[cand] > plane[best]) {
                        best = cand;
                    }
                }
                out.data[o] = plane[best];
                if (train) {
                    argmax_[o] = best;
                }
            }
        }
    }
    return out;
}

Tensor MaxPool2::backward(const Tensor& grad_output)
{
    Tensor grad(in_shape_[0], in_shape_[1], in_shape_[2], in_shape_[3]);
    const std::size_t plane_in = static_cast<std::size_t>(in_shape_[2]) * in_shape_[3];
    const std::size_t plane_out = static_cast<std::size_t>(grad_output.h()) * grad_output.w();
    for (std::size_t o = 0; o < grad_output.size(); ++o) {
        const std::size_t p = o / plane_out;
        grad.data[p * plane_in + argmax_[o]] += grad_output.data[o];
    }
    return grad;
}

// ---------------------------------------------------------------------------
// GlobalAvgPool

Tensor GlobalAvgPool::forward(const Tensor& input, bool train)
{
    const int n = input.n(), c = input.c();
    const std::size_t plane = static_cast<std::size_t>(input.h()) * input.w();
    Tensor out(n, c, 1, 1);
    for (int p = 0; p < n * c; ++p) {
        const float* src = input.data.data() + p * plane;
        double acc = 0.0;
        for (std::size_t i = 0; i < plane; ++i) {
            acc += src[i];
        }
        out.data[p] = static_cast<float>(acc / static_cast<double>(plane));
    }
    if (train) {
        in_shape_ = input.shape;
    }
    return out;
}

Tensor GlobalAvgPool::backward(const Tensor& grad_output)
{
    Tensor grad(in_shape_[0], in_shape_[1], in_shape_[2], in_shape_[3]);
    const std::size_t plane = static_cast<std::size_t>(in_shape_[2]) * in_shape_[3];
    const float scale = 1.0f / static_cast<float>(plane);
    for (std::size_t p = 0; p < grad_output.size(); ++p) {
        std::fill(grad.data.begin() + p * plane, grad.data.begin() + (p + 1) * plane, grad_output.data[p] * scale);
    }
    return grad;
}

// ---------------------------------------------------------------------------
// Linear

Linear::Linear(std::string name, int in_features, int out_features)
    : in_(in_features), out_(out_features),
      weight_(name + ".weight", static_cast<std::size_t>(in_features) * out_features),
      bias_(name + ".bias", static_cast<std::size_t>(out_features))
{
}

void Linear::init_uniform(std::mt19937_64& rng)
{
    const float bound = 1.0f / std::sqrt(static_cast<float>(in_));
    std::uniform_real_distribution<float> dist(-bound, bound);
    for (auto& w : weight_.value) {
        w = dist(rng);
    }
    std::fill(bias_.value.begin(), bias_.value.end(), 0.0f);
}

Tensor Linear::forward(const Tensor& input, bool train)
{
    if (static_cast<int>(input.sample_size()) != in_) {
        throw Error("linear layer expects " + std::to_string(in_) + " features, got "
                    + std::to_string(input.sample_size()));
    }
    const int n = input.n();
    Tensor out(n, out_, 1, 1);
    // One product per sample keeps every output independent of the batch it
    // was computed in.
    for (int i = 0; i < n; ++i) {
        std::copy(bias_.value.begin(), bias_.value.end(), out.sample(i));
        cblas_sgemv(CblasRowMajor, CblasNoTrans, out_, in_, 1.0f, weight_.value.data(), in_, input.sample(i), 1,
                    1.0f, out.sample(i), 1);
    }
    if (train) {
        input_ = input;
    }
    return out;
}

Tensor Linear::backward(const Tensor& grad_output)
{
    const int n = input_.n();
    for (int i = 0; i < n; ++i) {
        const float* dy = grad_output.sample(i);
        for (int o = 0; o < out_; ++o) {
            bias_.grad[o] += dy[o];
        }
    }
    cblas_sgemm(CblasRowMajor, CblasTrans, CblasNoTrans, out_, in_, n, 1.0f, grad_output.data.data(), out_,
                input_.data.data(), in_, 1.0f, weight_.grad.data(), in_);
    Tensor grad(input_.shape[0], input_.shape[1], input_.shape[2], input_.shape[3]);
    cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, n, in_, out_, 1.0f, grad_output.data.data(), out_,
                weight_.value.data(), in_, 0.0f, grad.data.data(), in_);
    return grad;
}

// ---------------------------------------------------------------------------
// Sequential

Tensor Sequential::forward(const Tensor& input, bool train)
{
    Tensor x = input;
    for (auto& layer : layers_) {
        x = layer->forward(x, train);
    }
    return x;
}

Tensor Sequential::backward(const Tensor& grad_output)
{
    Tensor g = grad_output;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) {
        g = (*it)->backward(g);
    }
    return g;
}

std::vector<Param*> Sequential::params()
{
    std::vector<Param*> out;
    for (auto& layer : layers_) {
        for (auto* p : layer->params()) {
            out.push_back(p);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Adam

Adam::Adam(std::vector<Param*> params, AdamOptions options) : params_(std::move(params)), opt_(options)
{
    for (auto* p : params_) {
        m_.emplace_back(p->value.size(), 0.0f);
        v_.emplace_back(p->value.size(), 0.0f);
    }
}

void Adam::zero_grad()
{
    for (auto* p : params_) {
        std::fill(p->grad.begin(), p->grad.end(), 0.0f);
    }
}

void Adam::step()
{
    ++t_;
    const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
    const auto b1 = static_cast<float>(opt_.beta1);
    const auto b2 = static_cast<float>(opt_.beta2);
    const auto step = static_cast<float>(opt_.lr / bc1);
    const auto inv_bc2 = static_cast<float>(1.0 / bc2);
    const auto eps = static_cast<float>(opt_.eps);

    for (std::size_t k = 0; k < params_.size(); ++k) {
        auto& value = params_[k]->value;
        const auto& grad = params_[k]->grad;
        auto& m = m_[k];
        auto& v = v_[k];
        for (std::size_t i = 0; i < value.size(); ++i) {
            m[i] = b1 * m[i] + (1.0f - b1) * grad[i];
            v[i] = b2 * v[i] + (1.0f - b2) * grad[i] * grad[i];
            value[i] -= step * m[i] / (std::sqrt(v[i] * inv_bc2) + eps);
        }
    }
}

}   // hpekd::nn
