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

#include "hpekd/distill.hpp"
#include "hpekd/error.hpp"
#include "hpekd/synthetic.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>

using namespace hpekd;
namespace fs = std::filesystem;

namespace {

std::vector<double> random_logits(std::size_t n, std::mt19937_64& rng, double scale = 2.0)
{
    std::normal_distribution<double> d(0.0, scale);
    std::vector<double> z(n);
    for (auto& v : z) {
        v = d(rng);
    }
    return z;
}

TeacherDistribution random_teacher(int q, std::mt19937_64& rng, bool with_zeros = false)
{
    TeacherDistribution t;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (auto& p : t.probs) {
        p.resize(q);
        double sum = 0.0;
        for (auto& v : p) {
            v = (with_zeros && u(rng) < 0.3) ? 0.0 : u(rng);
            sum += v;
        }
        if (sum == 0.0) {
            p[0] = sum = 1.0;
        }
        for (auto& v : p) {
            v /= sum;
        }
    }
    return t;
}

std::string read_bytes(const fs::path& p)
{
    std::ifstream is(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(is), {}};
}

// Written out independently of the library: sum_j t_j (ln t_j - ln s_j).
double oracle_kl(const std::vector<double>& t, const std::vector<double>& logits)
{
    double m = logits[0];
    for (double v : logits) {
        m = std::max(m, v);
    }
    double z = 0.0;
    for (double v : logits) {
        z += std::exp(v - m);
    }
    double kl = 0.0;
    for (std::size_t j = 0; j < t.size(); ++j) {
        if (t[j] > 0) {
            const double log_s = logits[j] - m - std::log(z);
            kl += t[j] * (std::log(t[j]) - log_s);
        }
    }
    return kl;
}

struct Fixture
{
    fs::path dir;
    Manifest manifest;

    explicit Fixture(std::size_t n, const std::string& name)
        : dir(fs::temp_directory_path() / name), manifest(generate_synthetic(n, 3, 60.0, dir))
    {
    }
    ~Fixture() { fs::remove_all(dir); }
};

}   // namespace

TEST_CASE("kd total weighting")
{
    CHECK(kd_total(2.0, 1.0) == 0.55);
    CHECK(kd_total(0.0, 0.0) == 0.0);
    // doubling l_cls moves the total by 0.05 * l_cls / 2
    CHECK(kd_total(4.0, 1.0) - kd_total(2.0, 1.0) == doctest::Approx(0.05 * 2.0 / 2.0).epsilon(1e-15));
}

TEST_CASE("kl divergence examples")
{
    const std::vector<double> t{0.75, 0.25};
    const std::vector<double> s{0.5, 0.5};
    const double expected = 0.75 * std::log(1.5) + 0.25 * std::log(0.5);
    CHECK(std::abs(kl_divergence(t, s) - expected) < 1e-12);
    CHECK(std::abs(expected - 0.13081) < 1e-5);
    CHECK(kl_divergence(t, t) == 0.0);

    // teacher zeros contribute nothing; student zeros are floored
    const std::vector<double> t0{1.0, 0.0};
    const std::vector<double> s0{0.5, 0.5};
    CHECK(kl_divergence(t0, s0) == doctest::Approx(std::log(2.0)));
    const std::vector<double> s_dead{0.0, 1.0};
    CHECK(std::isfinite(kl_divergence(t0, s_dead)));
    CHECK(kl_divergence(t0, s_dead) == doctest::Approx(-std::log(kProbFloor)));
}

TEST_CASE("kd_loss on a two-bin toy")
{
    const BinSpec spec(2.0, 2.0);
    REQUIRE(spec.bin_count() == 2);
    TeacherDistribution teacher;
    for (auto& p : teacher.probs) {
        p = {0.75, 0.25};
    }
    const std::vector<double> logits(6, 0.0);
    const auto loss = kd_loss(logits, teacher, {-1.0, -1.0, 1.0}, spec);
    const double kl = 0.75 * std::log(1.5) + 0.25 * std::log(0.5);
    CHECK(std::abs(loss.l_dist - 3 * kl) < 1e-9);
    CHECK(loss.l_cls == doctest::Approx(3 * std::log(2.0)).epsilon(1e-12));
    CHECK(loss.total == kd_total(loss.l_cls, loss.l_dist));

    // student softmax equal to the teacher: only the classification term remains
    std::vector<double> matched;
    for (int a = 0; a < 3; ++a) {
        matched.push_back(std::log(0.75));
        matched.push_back(std::log(0.25));
    }
    const auto same = kd_loss(matched, teacher, {-1.0, -1.0, 1.0}, spec);
    CHECK(std::abs(same.l_dist) < 1e-12);
    CHECK(same.total == doctest::Approx(0.025 * same.l_cls).epsilon(1e-12));

    CHECK_THROWS_AS(kd_loss(std::vector<double>(4, 0.0), teacher, {}, spec), Error);
}

TEST_CASE("kd_loss agrees with the independent oracle and is non-negative")
{
    std::mt19937_64 rng(5);
    const BinSpec spec(3.0, 30.0);
    const int q = spec.bin_count();
    std::uniform_real_distribution<double> angle(-30, 30);
    for (int i = 0; i < 10000; ++i) {
        const auto z = random_logits(3 * q, rng, 3.0);
        const auto t = random_teacher(q, rng, i % 2 == 0);
        const EulerPose gt{angle(rng), angle(rng), angle(rng)};
        const auto loss = kd_loss(z, t, gt, spec);
        CHECK(loss.l_dist >= 0.0);
        CHECK(loss.l_cls >= 0.0);
        double kl = 0.0;
        for (int a = 0; a < 3; ++a) {
            kl += oracle_kl(t.probs[a], std::vector<double>(z.begin() + a * q, z.begin() + (a + 1) * q));
        }
        CHECK(loss.l_dist == doctest::Approx(kl).epsilon(1e-9));
    }
}

TEST_CASE("kd_loss gradient matches central differences")
{
    std::mt19937_64 rng(6);
    const BinSpec spec(5.0, 25.0);
    const int q = spec.bin_count();
    std::uniform_real_distribution<double> angle(-25, 25);
    const double h = 1e-4;
    for (int trial = 0; trial < 50; ++trial) {
        auto z = random_logits(3 * q, rng);
        const auto t = random_teacher(q, rng, trial % 3 == 0);
        const EulerPose gt{angle(rng), angle(rng), angle(rng)};
        const auto lg = kd_loss_with_grad(z, t, gt, spec);
        for (std::size_t k = 0; k < z.size(); ++k) {
            const double keep = z[k];
            z[k] = keep + h;
            const double up = kd_loss(z, t, gt, spec).total;
            z[k] = keep - h;
            const double down = kd_loss(z, t, gt, spec).total;
            z[k] = keep;
            const double numeric = (up - down) / (2 * h);
            const double denom = std::max({std::abs(numeric), std::abs(lg.grad[k]), 1e-6});
            CHECK(std::abs(numeric - lg.grad[k]) / denom < 1e-4);
        }
    }
}

TEST_CASE("teacher modes parse")
{
    CHECK(parse_teacher_mode("clean") == TeacherMode::clean);
    CHECK(to_string(parse_teacher_mode("augmented")) == "augmented");
    CHECK_THROWS_AS(parse_teacher_mode("noisy"), Error);
}

TEST_CASE("teacher cache build, determinism and persistence")
{
    Fixture fx(10, "hpekd_test_cache");
    Model teacher(BackboneSpec::tiny_cnn(), HeadConfig::stage1(99.0), 4, {}, 32);

    SUBCASE("p = 0 clean cache equals the single-pass softmax")
    {
        CacheOptions opts;
        opts.ensemble = {1, 0, 32, 32};
        opts.mode = TeacherMode::clean;
        opts.variants = 3;   // clean mode always caches one view
        const auto cache = build_teacher_cache(fx.manifest, teacher, opts);
        REQUIRE(cache.size() == 10);
        CHECK(cache.options().variants == 1);
        for (std::size_t i = 0; i < fx.manifest.records.size(); ++i) {
            const auto& rec = fx.manifest.records[i];
            const Image img = load_image(fx.manifest.resolve(rec));
            const Image crop = prepare_padded_crop(img, rec.bbox, opts.ensemble);
            const auto out = teacher.forward(to_input_tensor(std::span(&crop, 1), teacher.normalization()));
            const auto expected = head_distribution(out[0], teacher.heads());
            const auto* entry = cache.find(rec.image_path, 0);
            REQUIRE(entry);
            entry->distribution.validate();
            for (int a = 0; a < 3; ++a) {
                for (int j = 0; j < 198; ++j) {
                    CHECK(entry->distribution.probs[a][j] == expected.probs[a][j]);
                }
            }
        }
    }

    SUBCASE("augmented rebuild is byte-identical and round-trips")
    {
        CacheOptions opts;
        opts.ensemble = {2, 2, 32, 32};
        opts.seed = 9;
        opts.variants = 2;
        const auto a = build_teacher_cache(fx.manifest, teacher, opts);
        const auto b = build_teacher_cache(fx.manifest, teacher, opts);
        CHECK(a.size() == 20);
        a.save(fx.dir / "a.bin");
        b.save(fx.dir / "b.bin");
        CHECK(read_bytes(fx.dir / "a.bin") == read_bytes(fx.dir / "b.bin"));

        const auto loaded = TeacherCache::load(fx.dir / "a.bin");
        CHECK(loaded.size() == a.size());
        CHECK(loaded.spec() == a.spec());
        CHECK(loaded.options().ensemble == a.options().ensemble);
        CHECK(loaded.options().variants == 2);
        for (const auto& e : a.entries()) {
            const auto* l = loaded.find(e.record_id, e.variant);
            REQUIRE(l);
            CHECK(l->aug_seed == e.aug_seed);
            CHECK_NOTHROW(l->distribution.validate());
            for (int k = 0; k < 3; ++k) {
                for (int j = 0; j < 198; ++j) {
                    CHECK(l->distribution.probs[k][j] == static_cast<float>(e.distribution.probs[k][j]));
                }
            }
        }
        loaded.save(fx.dir / "c.bin");
        CHECK(read_bytes(fx.dir / "a.bin") == read_bytes(fx.dir / "c.bin"));

        // a different seed changes the augmented views
        opts.seed = 10;
        const auto c = build_teacher_cache(fx.manifest, teacher, opts);
        CHECK(c.entries()[0].aug_seed != a.entries()[0].aug_seed);
    }

    SUBCASE("bin grid mismatch is refused")
    {
        CacheOptions opts;
        opts.ensemble = {1, 0, 32, 32};
        const auto cache = build_teacher_cache(fx.manifest, teacher, opts);
        CHECK_NOTHROW(cache.verify(BinSpec(1.0, 99.0)));
        CHECK_THROWS_AS(cache.verify(BinSpec(1.0, 90.0)), Error);
        CHECK_THROWS_AS(cache.verify(BinSpec(2.0, 99.0)), Error);

        Model other(BackboneSpec::tiny_cnn(), HeadConfig::stage2(90.0), 1, {}, 32);
        const LoadedDataset data = load_images(fx.manifest);
        TrainOptions t;
        t.epochs = 1;
        CHECK_THROWS_WITH_AS(train_stage2(other, data, cache, nullptr, t), doctest::Contains("does not match"),
                             Error);
    }

    SUBCASE("missing images are reported and skipped")
    {
        Manifest broken = fx.manifest;
        broken.records[3].image_path = "images/missing.png";
        CacheOptions opts;
        opts.ensemble = {1, 0, 32, 32};
        CacheBuildReport report;
        const auto cache = build_teacher_cache(broken, teacher, opts, &report);
        CHECK(cache.size() == 9);
        REQUIRE(report.failures.size() == 1);
        CHECK(report.failures[0].line == 3);

        Manifest empty = fx.manifest;
        empty.records.clear();
        CHECK(build_teacher_cache(empty, teacher, opts).size() == 0);
    }

    SUBCASE("a student model cannot be the teacher")
    {
        Model student(BackboneSpec::tiny_cnn(), HeadConfig::stage2(99.0), 1, {}, 32);
        CacheOptions opts;
        opts.ensemble = {1, 0, 32, 32};
        CHECK_THROWS_AS(build_teacher_cache(fx.manifest, student, opts), Error);
    }
}

TEST_CASE("stage-2 training")
{
    Fixture fx(6, "hpekd_test_stage2");
    Model teacher(BackboneSpec::tiny_cnn(), HeadConfig::stage1(99.0), 4, {}, 32);
    const LoadedDataset data = load_images(fx.manifest);

    SUBCASE("learning rate 0 leaves parameters unchanged and the loss constant")
    {
        CacheOptions opts;
        opts.ensemble = {1, 2, 32, 32};
        opts.variants = 1;
        const auto cache = build_teacher_cache(fx.manifest, teacher, opts);
        Model student(BackboneSpec::tiny_cnn(), HeadConfig::stage2(99.0), 8, {}, 32);
        std::vector<std::vector<float>> before;
        for (auto* p : student.params()) {
            before.push_back(p->value);
        }
        TrainOptions t;
        t.epochs = 3;
        t.batch_size = 4;
        t.lr = 0.0;
        const auto history = train_stage2(student, data, cache, nullptr, t);
        REQUIRE(history.size() == 3);
        auto params = student.params();
        for (std::size_t i = 0; i < params.size(); ++i) {
            CHECK(params[i]->value == before[i]);
        }
        // the same augmented views replay every epoch with one variant; only
        // the summation order changes
        CHECK(history[1].train_loss == doctest::Approx(history[0].train_loss).epsilon(1e-12));
        CHECK(history[2].train_loss == doctest::Approx(history[0].train_loss).epsilon(1e-12));
    }

    SUBCASE("a student started from the teacher on one record converges")
    {
        Manifest one = fx.manifest;
        one.records.resize(1);
        const LoadedDataset single = load_images(one);
        CacheOptions opts;
        opts.ensemble = {1, 0, 32, 32};
        opts.mode = TeacherMode::clean;
        const auto cache = build_teacher_cache(one, teacher, opts);
        Model student(BackboneSpec::tiny_cnn(), HeadConfig::stage2(99.0), 8, {}, 32);
        student.init_from(teacher);
        TrainOptions t;
        t.epochs = 5;
        t.batch_size = 1;
        t.lr = 1e-4;
        const auto history = train_stage2(student, single, cache, nullptr, t);
        // identical weights reproduce the teacher softmax: no distillation gap
        CHECK(*history[0].l_dist < 1e-6);
        for (std::size_t e = 1; e < history.size(); ++e) {
            CHECK(history[e].train_loss < history[e - 1].train_loss);
        }
    }

    SUBCASE("incomplete cache is an error before training")
    {
        Manifest partial = fx.manifest;
        partial.records.resize(3);
        CacheOptions opts;
        opts.ensemble = {1, 0, 32, 32};
        const auto cache = build_teacher_cache(partial, teacher, opts);
        Model student(BackboneSpec::tiny_cnn(), HeadConfig::stage2(99.0), 8, {}, 32);
        TrainOptions t;
        t.epochs = 1;
        CHECK_THROWS_WITH_AS(train_stage2(student, data, cache, nullptr, t), doctest::Contains("no entry"), Error);
    }
}

TEST_CASE("learning rate schedules")
{
    TrainOptions opts;
    opts.lr = 0.01;
    opts.epochs = 4;
    for (int e = 1; e <= 4; ++e) {
        CHECK(epoch_lr(opts, e) == 0.01);
    }
    opts.schedule = LrSchedule::cosine;
    CHECK(epoch_lr(opts, 1) == doctest::Approx(0.01));
    CHECK(epoch_lr(opts, 3) == doctest::Approx(0.005));
    CHECK(epoch_lr(opts, 4) == doctest::Approx(0.01 * 0.5 * (1 + std::cos(0.75 * M_PI))));
    for (int e = 2; e <= 4; ++e) {
        CHECK(epoch_lr(opts, e) < epoch_lr(opts, e - 1));
        CHECK(epoch_lr(opts, e) > 0.0);
    }
    CHECK(parse_lr_schedule("cosine") == LrSchedule::cosine);
    CHECK(to_string(LrSchedule::constant) == "constant");
    CHECK_THROWS_AS(parse_lr_schedule("step"), Error);
}
