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

#include "hpekd/rvc_codec.hpp"
#include "hpekd/error.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

namespace hpekd {

BinSpec::BinSpec(double bin_size, double theta) : bin_size_(bin_size), theta_(theta)
{
    if (!(bin_size > 0.0) || !std::isfinite(bin_size)) {
        throw Error("bin size must be positive, got " + std::to_string(bin_size));
    }
    if (!(theta > 0.0) || !std::isfinite(theta)) {
        throw Error("theta must be positive, got " + std::to_string(theta));
    }

    const auto count = static_cast<int>(std::ceil(2.0 * theta / bin_size - 1e-9));
    const double first = -(count * bin_size) / 2.0;
    centers_.resize(count);
    for (int j = 0; j < count; ++j) {
        centers_[j] = first + bin_size * (j + 0.5);
    }
}

std::string BinSpec::fingerprint() const
{
    std::ostringstream os;
    os.precision(17);
    os << "bins:b=" << bin_size_ << ";q=" << bin_count() << ";theta=" << theta_
       << ";c0=" << centers_.front();
    return os.str();
}

bool BinSpec::operator==(const BinSpec& other) const
{
    return bin_size_ == other.bin_size_ && theta_ == other.theta_ && centers_ == other.centers_;
}

BinSpec make_bin_spec(double bin_size, double theta)
{
    return BinSpec(bin_size, theta);
}

HeadConfig HeadConfig::stage1(double theta)
{
    HeadConfig cfg;
    for (double b : {1.0, 2.0, 3.0, 4.0}) {
        cfg.bin_specs.emplace_back(b, theta);
    }
    cfg.has_regression_head = true;
    return cfg;
}

HeadConfig HeadConfig::stage2(double theta)
{
    HeadConfig cfg;
    cfg.bin_specs.emplace_back(1.0, theta);
    cfg.has_regression_head = false;
    return cfg;
}

void HeadConfig::validate() const
{
    if (bin_specs.empty()) {
        throw Error("head config needs at least one classification head");
    }
    std::set<double> sizes;
    for (const auto& spec : bin_specs) {
        if (!sizes.insert(spec.bin_size()).second) {
            throw Error("duplicate bin size " + std::to_string(spec.bin_size()));
        }
        if (spec.theta() != bin_specs.front().theta()) {
            throw Error("all heads must share the same theta");
        }
    }
}

double HeadConfig::theta() const
{
    validate();
    return bin_specs.front().theta();
}

std::size_t HeadConfig::prediction_head() const
{
    validate();
    auto it = std::min_element(bin_specs.begin(), bin_specs.end(),
                               [](const BinSpec& a, const BinSpec& b) { return a.bin_size() < b.bin_size(); });
    return static_cast<std::size_t>(it - bin_specs.begin());
}

bool HeadConfig::operator==(const HeadConfig& other) const
{
    return bin_specs == other.bin_specs && has_regression_head == other.has_regression_head;
}

int encode_class(double angle, const BinSpec& spec)
{
    if (!std::isfinite(angle) || std::abs(angle) > spec.theta()) {
        throw Error("angle outside supported range: " + std::to_string(angle));
    }
    return encode_class_clamped(angle, spec);
}

int encode_class_clamped(double angle, const BinSpec& spec)
{
    const double clamped = std::clamp(angle, -spec.theta(), spec.theta());
    const double lower = -(spec.bin_count() * spec.bin_size()) / 2.0;
    const auto idx = static_cast<int>(std::floor((clamped - lower) / spec.bin_size()));
    return std::clamp(idx, 0, spec.bin_count() - 1);
}

std::vector<double> softmax(std::span<const double> logits)
{
    std::vector<double> out(logits.begin(), logits.end());
    if (out.empty()) {
        return out;
    }
    const double mx = *std::max_element(out.begin(), out.end());
    double sum = 0.0;
    for (auto& v : out) {
        v = std::exp(v - mx);
        sum += v;
    }
    for (auto& v : out) {
        v /= sum;
    }
    return out;
}

double expectation(std::span<const double> probabilities, const BinSpec& spec)
{
    if (static_cast<int>(probabilities.size()) != spec.bin_count()) {
        throw Error("expected " + std::to_string(spec.bin_count()) + " probabilities, got "
                    + std::to_string(probabilities.size()));
    }
    const auto centers = spec.centers();
    double acc = 0.0;
    for (std::size_t j = 0; j < probabilities.size(); ++j) {
        acc += centers[j] * probabilities[j];
    }
    return acc;
}

double decode_expectation(std::span<const double> logits, const BinSpec& spec)
{
    if (static_cast<int>(logits.size()) != spec.bin_count()) {
        throw Error("expected " + std::to_string(spec.bin_count()) + " logits, got "
                    + std::to_string(logits.size()));
    }
    if (!std::all_of(logits.begin(), logits.end(), [](double v) { return std::isfinite(v); })) {
        throw Error("non-finite logits");
    }
    const auto probs = softmax(logits);
    return expectation(probs, spec);
}

EulerPose decode_regression(const std::array<double, 3>& raw, double theta)
{
    // tanh rounds to exactly +-1 for |raw| > ~19; keep the result inside the
    // open interval.
    const double bound = std::nextafter(theta, 0.0);
    EulerPose pose;
    for (std::size_t i = 0; i < 3; ++i) {
        pose[i] = std::clamp(theta * std::tanh(raw[i]), -bound, bound);
    }
    return pose;
}

}   // hpekd
