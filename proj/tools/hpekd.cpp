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

// hpekd command-line entry point.

#include "hpekd/commands.hpp"
#include "hpekd/error.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <map>
#include <optional>

namespace {

using nlohmann::json;

// Flags left unset on the command line must not override the config file, so
// every option is an std::optional that only lands in the JSON when given.
struct Flags
{
    std::optional<std::string> out, backbone, protocol, protocol_config, train_manifest, test_manifest, checkpoint,
        teacher, cache, teacher_mode, data_dir, lr_schedule;
    std::optional<double> theta, lr, synthetic_theta, val_fraction;
    std::optional<std::uint64_t> seed;
    std::optional<int> epochs, batch_size, stride, padding, variants, synthetic, count, limit, input_size;
    std::optional<bool> init_from_teacher, augment;
    std::vector<int> s_values, p_values;
    std::string config;

    json to_json() const
    {
        json j = json::object();
        auto put = [&](const char* key, const auto& v) {
            if (v) {
                j[key] = *v;
            }
        };
        put("out", out);
        put("backbone", backbone);
        put("protocol", protocol);
        put("protocol_config", protocol_config);
        put("train_manifest", train_manifest);
        put("test_manifest", test_manifest);
        put("checkpoint", checkpoint);
        put("teacher", teacher);
        put("cache", cache);
        put("teacher_mode", teacher_mode);
        put("data_dir", data_dir);
        put("theta", theta);
        put("lr", lr);
        put("lr_schedule", lr_schedule);
        put("synthetic_theta", synthetic_theta);
        put("val_fraction", val_fraction);
        put("seed", seed);
        put("epochs", epochs);
        put("batch_size", batch_size);
        put("stride", stride);
        put("padding", padding);
        put("variants", variants);
        put("synthetic", synthetic);
        put("count", count);
        put("limit", limit);
        put("input_size", input_size);
        put("init_from_teacher", init_from_teacher);
        put("augment", augment);
        if (!s_values.empty()) {
            j["s_values"] = s_values;
        }
        if (!p_values.empty()) {
            j["p_values"] = p_values;
        }
        return j;
    }
};

void add_data_flags(CLI::App* c, Flags& f)
{
    c->add_option("--protocol", f.protocol, "Evaluation protocol")->check(CLI::IsMember({"p1", "p2", "p3"}));
    c->add_option("--protocol-config", f.protocol_config, "JSON file describing protocol datasets");
    c->add_option("--train-manifest", f.train_manifest, "Training manifest CSV");
    c->add_option("--test-manifest", f.test_manifest, "Test manifest CSV");
    c->add_option("--synthetic", f.synthetic, "Generate and use N synthetic glyph images");
    c->add_option("--synthetic-theta", f.synthetic_theta, "Pose range of generated glyphs (default: theta)");
    c->add_option("--data-dir", f.data_dir, "Where synthetic images are written");
    c->add_option("--val-fraction", f.val_fraction, "Held-out share of synthetic data");
}

void add_common_flags(CLI::App* c, Flags& f)
{
    c->add_option("--out", f.out, "Output directory");
    c->add_option("--seed", f.seed, "Random seed");
    c->add_option("--theta", f.theta, "Angle range half-width in degrees");
    c->add_option("--backbone", f.backbone, "Backbone family");
    c->add_option("--input-size", f.input_size, "Network input side length");
    c->add_option("--config", f.config, "JSON config file; flags override it");
}

void add_train_flags(CLI::App* c, Flags& f)
{
    c->add_option("--epochs", f.epochs, "Training epochs");
    c->add_option("--lr", f.lr, "Adam learning rate");
    c->add_option("--lr-schedule", f.lr_schedule, "constant or cosine (decays towards 0 over the epochs)")
        ->check(CLI::IsMember({"constant", "cosine"}));
    c->add_option("--batch-size", f.batch_size, "Mini-batch size");
    c->add_option("--augment", f.augment, "Enable training augmentation (true/false)");
}

void add_ensemble_flags(CLI::App* c, Flags& f)
{
    c->add_option("--stride", f.stride, "Ensemble crop stride s");
    c->add_option("--padding", f.padding, "Ensemble padding p");
}

void add_cache_flags(CLI::App* c, Flags& f)
{
    c->add_option("--variants", f.variants, "Augmented teacher variants per image");
    c->add_option("--teacher-mode", f.teacher_mode, "augmented or clean")
        ->check(CLI::IsMember({"augmented", "clean"}));
    c->add_option("--cache", f.cache, "Teacher cache file");
}

}   // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Head pose estimation with ensemble knowledge distillation"};
    app.require_subcommand(1);
    Flags f;

    auto* synth = app.add_subcommand("synth", "Write a synthetic glyph dataset");
    add_common_flags(synth, f);
    synth->add_option("--count", f.count, "Number of images")->required();
    synth->add_option("--synthetic-theta", f.synthetic_theta, "Pose range of generated glyphs (default: theta)");

    auto* train = app.add_subcommand("train", "Train a stage-1 model");
    add_common_flags(train, f);
    add_data_flags(train, f);
    add_train_flags(train, f);

    auto* sweep = app.add_subcommand("sweep", "Grid of ensemble MAE over stride and padding");
    add_common_flags(sweep, f);
    add_data_flags(sweep, f);
    sweep->add_option("--checkpoint", f.checkpoint, "Stage-1 checkpoint");
    sweep->add_option("--s-values", f.s_values, "Strides to try")->delimiter(',');
    sweep->add_option("--p-values", f.p_values, "Paddings to try")->delimiter(',');

    auto* cache = app.add_subcommand("cache", "Precompute ensemble teacher distributions");
    add_common_flags(cache, f);
    add_data_flags(cache, f);
    add_ensemble_flags(cache, f);
    add_cache_flags(cache, f);
    cache->add_option("--checkpoint", f.checkpoint, "Teacher checkpoint");

    auto* distill = app.add_subcommand("distill", "Train a stage-2 student from the ensemble teacher");
    add_common_flags(distill, f);
    add_data_flags(distill, f);
    add_train_flags(distill, f);
    add_ensemble_flags(distill, f);
    add_cache_flags(distill, f);
    distill->add_option("--teacher", f.teacher, "Teacher checkpoint");
    distill->add_option("--init-from-teacher", f.init_from_teacher, "Start the student from the teacher weights");

    auto* evaluate = app.add_subcommand("evaluate", "Report per-angle MAE");
    add_common_flags(evaluate, f);
    add_data_flags(evaluate, f);
    add_ensemble_flags(evaluate, f);
    evaluate->add_option("--checkpoint", f.checkpoint, "Checkpoint to evaluate");
    evaluate->add_option("--teacher", f.teacher, "Teacher checkpoint for base/ensemble rows of a student");

    auto* render = app.add_subcommand("render", "Draw predicted and ground-truth axes");
    add_common_flags(render, f);
    add_data_flags(render, f);
    render->add_option("--checkpoint", f.checkpoint, "Checkpoint");
    render->add_option("--limit", f.limit, "Maximum number of images");

    CLI11_PARSE(app, argc, argv);
    // Progress lines should show up promptly even when redirected to a file.
    std::cout << std::unitbuf;

    const std::string command = app.get_subcommands().front()->get_name();
    try {
        const auto config = hpekd::cli::RunConfig::resolve(command, f.to_json(), f.config);
        return hpekd::cli::run_main(config, std::cout, std::cerr);
    } catch (const hpekd::FileNotFound& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
