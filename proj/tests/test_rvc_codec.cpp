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

#include "hpekd/error.hpp"
#include "hpekd/rvc_codec.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace hpekd;

namespace {

// Enumeration oracle: walk the grid from the lower edge.
std::vector<double> oracle_centers(double b, double theta)
{
    const int q = static_cast<int>(std::ceil(2.0 * theta / b - 1e-12));
    std::vector<double> c;
    double x = -q * b / 2.0 + b / 2.0;
    for (int j = 0; j < q; ++j, x += b) {
        c.push_back(x);
    }
    return c;
}

std::vector<double> spike(int q, int j, double height = 80.0)
{
    std::vector<double> z(q, 0.0);
    z[j] = height;
    return z;
}

}   // namespace

TEST_CASE("make_bin_spec examples")
{
    const auto b3 = make_bin_spec(3, 99);
    CHECK(b3.bin_count() == 66);
    CHECK(b3.centers().front() == doctest::Approx(-97.5));
    CHECK(b3.centers().back() == doctest::Approx(97.5));

    const auto b1 = make_bin_spec(1, 99);
    CHECK(b1.bin_count() == 198);
    CHECK(b1.centers().front() == doctest::Approx(-98.5));
    CHECK(b1.centers().back() == doctest::Approx(98.5));

    const auto b4 = make_bin_spec(4, 99);
    CHECK(b4.bin_count() == 50);
    CHECK(b4.centers().front() == doctest::Approx(-98));
    CHECK(b4.centers().back() == doctest::Approx(98));

    CHECK(make_bin_spec(2, 99).bin_count() == 99);
    CHECK_THROWS_AS(make_bin_spec(0, 99), Error);
    CHECK_THROWS_AS(make_bin_spec(1, -1), Error);
}

TEST_CASE("bin grids match the enumeration oracle and are symmetric")
{
    for (double b : {0.5, 1.0, 2.0, 3.0, 4.0, 7.0}) {
        for (double theta : {10.0, 45.0, 90.0, 99.0}) {
            const auto spec = make_bin_spec(b, theta);
            const auto expected = oracle_centers(b, theta);
            REQUIRE(spec.bin_count() == static_cast<int>(expected.size()));
            for (int j = 0; j < spec.bin_count(); ++j) {
                CHECK(spec.centers()[j] == doctest::Approx(expected[j]).epsilon(1e-12));
                CHECK(spec.centers()[j] == doctest::Approx(-spec.centers()[spec.bin_count() - 1 - j]));
            }
        }
    }
}

TEST_CASE("fingerprints identify the grid")
{
    CHECK(make_bin_spec(1, 99).fingerprint() == make_bin_spec(1, 99).fingerprint());
    CHECK(make_bin_spec(1, 99).fingerprint() != make_bin_spec(1, 90).fingerprint());
    CHECK(make_bin_spec(1, 99).fingerprint() != make_bin_spec(2, 99).fingerprint());
}

TEST_CASE("head configs")
{
    const auto s1 = HeadConfig::stage1();
    REQUIRE(s1.bin_specs.size() == 4);
    CHECK(s1.has_regression_head);
    CHECK(s1.bin_specs[s1.prediction_head()].bin_size() == 1.0);
    const auto s2 = HeadConfig::stage2();
    REQUIRE(s2.bin_specs.size() == 1);
    CHECK_FALSE(s2.has_regression_head);

    HeadConfig dup;
    dup.bin_specs = {make_bin_spec(1, 99), make_bin_spec(1, 99)};
    CHECK_THROWS_AS(dup.validate(), Error);
    HeadConfig mixed;
    mixed.bin_specs = {make_bin_spec(1, 99), make_bin_spec(2, 90)};
    CHECK_THROWS_AS(mixed.validate(), Error);
    CHECK_THROWS_AS(HeadConfig{}.validate(), Error);
}

TEST_CASE("encode_class examples")
{
    const auto b3 = make_bin_spec(3, 99);
    CHECK(encode_class(0, b3) == 33);
    CHECK(encode_class(-99, b3) == 0);
    CHECK(encode_class(97.5, b3) == 65);
    CHECK(encode_class(99, b3) == 65);
    CHECK_THROWS_WITH_AS(encode_class(99.5, b3), doctest::Contains("angle outside supported range"), Error);
    CHECK(encode_class_clamped(120, b3) == 65);
    CHECK(encode_class_clamped(-120, b3) == 0);
}

TEST_CASE("encode_class picks the nearest center")
{
    std::mt19937_64 rng(1);
    for (double b : {1.0, 2.0, 3.0, 4.0}) {
        const auto spec = make_bin_spec(b, 99);
        std::uniform_real_distribution<double> u(-99, 99);
        for (int i = 0; i < 2000; ++i) {
            const double a = u(rng);
            const int j = encode_class(a, spec);
            for (int k = 0; k < spec.bin_count(); ++k) {
                CHECK(std::abs(spec.centers()[j] - a) <= std::abs(spec.centers()[k] - a) + 1e-9);
            }
        }
    }
}

TEST_CASE("decode_expectation examples")
{
    const auto b1 = make_bin_spec(1, 99);
    const std::vector<double> flat(198, 0.3);
    CHECK(std::abs(decode_expectation(flat, b1)) < 1e-9);
    CHECK(decode_expectation(spike(198, 120), b1) == doctest::Approx(b1.centers()[120]).epsilon(1e-3));

    // two bins with centers -1 and +1
    const auto wide = make_bin_spec(2, 2);
    REQUIRE(wide.bin_count() == 2);
    REQUIRE(wide.centers()[0] == doctest::Approx(-1.0));
    const std::vector<double> z{0.0, std::log(3.0)};
    CHECK(decode_expectation(z, wide) == doctest::Approx(0.5).epsilon(1e-12));

    CHECK_THROWS_AS(decode_expectation(std::vector<double>(10, 0.0), b1), Error);
    std::vector<double> bad(198, 0.0);
    bad[3] = std::nan("");
    CHECK_THROWS_AS(decode_expectation(bad, b1), Error);
}

TEST_CASE("codec round trip stays within half a bin")
{
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(-99, 99);
    for (double b : {1.0, 2.0, 3.0, 4.0}) {
        const auto spec = make_bin_spec(b, 99);
        for (int i = 0; i < 10000; ++i) {
            const double a = u(rng);
            const double back = decode_expectation(spike(spec.bin_count(), encode_class(a, spec)), spec);
            CHECK(std::abs(back - a) <= b / 2 + 1e-9);
        }
    }
}

TEST_CASE("decode_expectation shift invariance, bounds and monotonicity")
{
    std::mt19937_64 rng(3);
    std::normal_distribution<double> n(0.0, 3.0);
    const auto spec = make_bin_spec(2, 99);
    for (int i = 0; i < 200; ++i) {
        std::vector<double> z(spec.bin_count());
        for (auto& v : z) {
            v = n(rng);
        }
        const double base = decode_expectation(z, spec);
        CHECK(base >= spec.centers().front());
        CHECK(base <= spec.centers().back());

        auto shifted = z;
        for (auto& v : shifted) {
            v += 17.25;
        }
        CHECK(decode_expectation(shifted, spec) == doctest::Approx(base).epsilon(1e-9));

        // moving mass from a lower bin to a higher one never decreases the result
        auto p = softmax(z);
        const std::size_t lo = std::uniform_int_distribution<std::size_t>(0, p.size() - 2)(rng);
        const std::size_t hi = std::uniform_int_distribution<std::size_t>(lo + 1, p.size() - 1)(rng);
        const double before = expectation(p, spec);
        const double moved = p[lo] / 2;
        p[lo] -= moved;
        p[hi] += moved;
        CHECK(expectation(p, spec) >= before - 1e-12);
    }
}

TEST_CASE("softmax sums to one and survives large logits")
{
    const std::vector<double> z{1000.0, 999.0, -1000.0};
    const auto p = softmax(z);
    CHECK(p[0] + p[1] + p[2] == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(p[0] == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))));
}

TEST_CASE("decode_regression examples and containment")
{
    const auto zero = decode_regression({0, 0, 0}, 99);
    CHECK(zero == EulerPose{0, 0, 0});
    const auto sat = decode_regression({1e6, -1e6, 0}, 99);
    CHECK(sat.pitch == doctest::Approx(99).epsilon(1e-8));
    CHECK(sat.pitch < 99.0);
    CHECK(sat.yaw > -99.0);
    const auto half = decode_regression({std::atanh(0.5), 0, 0}, 99);
    CHECK(half.pitch == doctest::Approx(49.5).epsilon(1e-12));

    std::mt19937_64 rng(4);
    std::normal_distribution<double> n(0.0, 20.0);
    for (int i = 0; i < 10000; ++i) {
        const auto p = decode_regression({n(rng), n(rng), n(rng)}, 99);
        for (int k = 0; k < 3; ++k) {
            CHECK(std::abs(p[k]) < 99.0);
        }
    }
}
