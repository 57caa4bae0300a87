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

#include "hpekd/commands.hpp"
#include "hpekd/distill.hpp"
#include "hpekd/error.hpp"
#include "hpekd/synthetic.hpp"
#include "hpekd/training.hpp"

#include <opencv2/imgproc.hpp>

#include <fstream>
#include <iomanip>
#include <ostream>

namespace hpekd::cli {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// RunConfig

RunConfig::RunConfig(std::string command, json values) : command_(std::move(command)), values_(std::move(values)) {}

nlohmann::json default_options(const std::string& command)
{
    json common = {
        {"out", "runs/" + command},
        {"seed", 0},
        {"theta", 99.0},
        {"backbone", "tiny_cnn"},
        {"input_size", 224},
        {"protocol", ""},
        {"protocol_config", "configs/protocols.json"},
        {"train_manifest", ""},
        {"test_manifest", ""},
        {"synthetic", 0},
        {"synthetic_theta", nullptr},
        {"data_dir", ""},
        {"val_fraction", 0.2},
    };
    json specific;
    if (command == "synth") {
        specific = {{"count", 0}};
    } else if (command == "train") {
        specific = {{"epochs", 100}, {"lr", 1e-4}, {"lr_schedule", "constant"}, {"batch_size", 128}, {"augment", true}};
    } else if (command == "sweep") {
        specific = {{"checkpoint", ""},
                    {"s_values", {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15}},
                    {"p_values", {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15}}};
    } else if (command == "cache") {
        specific = {{"checkpoint", ""}, {"stride", 5}, {"padding", 15}, {"variants", 1},
                    {"teacher_mode", "augmented"}, {"cache", ""}};
    } else if (command == "distill") {
        specific = {{"teacher", ""},        {"cache", ""},          {"stride", 5},
                    {"padding", 15},        {"variants", 1},        {"teacher_mode", "augmented"},
                    {"epochs", 100},        {"lr", 3e-4},           {"lr_schedule", "constant"},
                    {"batch_size", 128},    {"init_from_teacher", false}};
    } else if (command == "evaluate") {
        specific = {{"checkpoint", ""}, {"teacher", ""}, {"stride", 5}, {"padding", 15}};
    } else if (command == "render") {
        specific = {{"checkpoint", ""}, {"limit", 16}};
    } else {
        throw Error("unknown command '" + command + "'");
    }
    common.update(specific);
    return common;
}

RunConfig RunConfig::resolve(const std::string& command, const json& flags, const fs::path& config_file)
{
    json values = default_options(command);
    if (!config_file.empty()) {
        if (!fs::exists(config_file)) {
            throw FileNotFound(config_file.string());
        }
        std::ifstream is(config_file);
        json file;
        try {
            file = json::parse(is);
        } catch (const json::exception& e) {
            throw Error("cannot parse config file " + config_file.string() + ": " + e.what());
        }
        // Either a flat object or one section per command.
        if (file.contains(command) && file[command].is_object()) {
            json shared = file;
            for (const auto* c : {"synth", "train", "sweep", "cache", "distill", "evaluate", "render"}) {
                shared.erase(c);
            }
            values.update(shared);
            values.update(file[command]);
        } else {
            values.update(file);
        }
    }
    values.update(flags);
    return RunConfig(command, values);
}

bool RunConfig::has(const std::string& key) const
{
    return values_.contains(key) && !values_[key].is_null()
           && !(values_[key].is_string() && values_[key].get<std::string>().empty());
}

fs::path RunConfig::out_dir() const
{
    return fs::path(get<std::string>("out"));
}

void RunConfig::freeze() const
{
    fs::create_directories(out_dir());
    std::ofstream os(out_dir() / "run_config.json");
    os << json{{"command", command_}, {"options", values_}}.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Helpers

namespace {

json mae_json(const MaeReport& m)
{
    return {{"pitch", m.per_angle[0]}, {"yaw", m.per_angle[1]}, {"roll", m.per_angle[2]}, {"avg", m.average}};
}

class MetricsLog
{
public:
    explicit MetricsLog(const fs::path& path) : os_(path, std::ios::trunc) {}

    void write(const json& record)
    {
        os_ << record.dump() << '\n';
        os_.flush();
    }

private:
    std::ofstream os_;
};

json epoch_json(const EpochMetrics& m)
{
    json j = {{"epoch", m.epoch}, {"lr", m.lr}, {"train_loss", m.train_loss}, {"seconds", m.seconds}};
    if (m.l_cls) {
        j["l_cls"] = *m.l_cls;
        j["l_dist"] = *m.l_dist;
        j["total"] = m.train_loss;
    }
    if (m.val_mae) {
        j["val_mae"] = mae_json(*m.val_mae);
    }
    return j;
}

void report_issues(const Manifest& m, std::ostream& log)
{
    for (const auto& issue : m.malformed) {
        log << "warning: " << m.path.string() << ":" << issue.line << ": skipped row (" << issue.reason << ")\n";
    }
    for (const auto& issue : m.excluded) {
        log << "info: " << m.path.string() << ":" << issue.line << ": excluded by range filter, " << issue.reason
            << "\n";
    }
}

struct NamedManifest
{
    std::string name;
    Manifest manifest;
};

struct DataSources
{
    std::vector<NamedManifest> train;
    std::vector<NamedManifest> test;
};

Manifest concat(const std::vector<NamedManifest>& parts)
{
    if (parts.size() == 1) {
        return parts.front().manifest;
    }
    // Records keep their own directories: rewrite relative paths as absolute.
    Manifest all;
    for (const auto& p : parts) {
        for (const auto& r : p.manifest.records) {
            DatasetRecord rec = r;
            rec.image_path = p.manifest.resolve(r).string();
            all.records.push_back(rec);
        }
    }
    return all;
}

DataSources resolve_data(const RunConfig& cfg, std::ostream& log)
{
    DataSources src;
    const double theta = cfg.get<double>("theta");

    if (cfg.get<int>("synthetic") > 0) {
        const auto count = static_cast<std::size_t>(cfg.get<int>("synthetic"));
        const fs::path dir = cfg.has("data_dir") ? fs::path(cfg.get<std::string>("data_dir"))
                                                 : cfg.out_dir() / "synthetic";
        const double synth_theta = cfg.has("synthetic_theta") ? cfg.get<double>("synthetic_theta") : theta;
        Manifest all;
        if (fs::exists(dir / "manifest.csv")) {
            all = load_manifest(dir / "manifest.csv", theta);
            if (all.records.size() != count) {
                all = generate_synthetic(count, cfg.get<std::uint64_t>("seed"), synth_theta, dir);
            }
        } else {
            log << "generating " << count << " synthetic images in " << dir.string() << "\n";
            all = generate_synthetic(count, cfg.get<std::uint64_t>("seed"), synth_theta, dir);
        }
        const auto n_test = static_cast<std::size_t>(std::llround(cfg.get<double>("val_fraction") * count));
        Manifest train = all, test = all;
        train.records.assign(all.records.begin(), all.records.end() - static_cast<std::ptrdiff_t>(n_test));
        test.records.assign(all.records.end() - static_cast<std::ptrdiff_t>(n_test), all.records.end());
        src.train.push_back({"synthetic_train", std::move(train)});
        src.test.push_back({"synthetic_test", std::move(test)});
        return src;
    }

    if (cfg.has("train_manifest") || cfg.has("test_manifest")) {
        if (cfg.has("train_manifest")) {
            const fs::path p = cfg.get<std::string>("train_manifest");
            src.train.push_back({p.stem().string(), load_manifest(p, theta)});
            report_issues(src.train.back().manifest, log);
        }
        if (cfg.has("test_manifest")) {
            const fs::path p = cfg.get<std::string>("test_manifest");
            src.test.push_back({p.stem().string(), load_manifest(p, theta)});
            report_issues(src.test.back().manifest, log);
        }
        return src;
    }

    if (cfg.has("protocol")) {
        ProtocolSpec spec = load_protocol(cfg.get<std::string>("protocol_config"),
                                          parse_protocol(cfg.get<std::string>("protocol")));
        spec.theta = theta;
        ProtocolData data = resolve_protocol(spec);
        for (auto& m : data.train) {
            report_issues(m, log);
            src.train.push_back({m.path.stem().string(), std::move(m)});
        }
        for (auto& m : data.test) {
            report_issues(m, log);
            src.test.push_back({m.path.stem().string(), std::move(m)});
        }
        return src;
    }
    throw Error("no data source: pass --synthetic, --train-manifest/--test-manifest or --protocol");
}

LoadedDataset load_checked(const Manifest& m, std::ostream& log)
{
    LoadedDataset data = load_images(m);
    for (const auto& f : data.failures) {
        log << "warning: record " << f.line << ": " << f.reason << "\n";
    }
    return data;
}

TrainOptions train_options(const RunConfig& cfg)
{
    TrainOptions opts;
    opts.epochs = cfg.get<int>("epochs");
    opts.batch_size = cfg.get<int>("batch_size");
    opts.lr = cfg.get<double>("lr");
    opts.schedule = parse_lr_schedule(cfg.get<std::string>("lr_schedule"));
    opts.seed = cfg.get<std::uint64_t>("seed");
    if (cfg.values().contains("augment")) {
        opts.augment = cfg.get<bool>("augment");
    }
    return opts;
}

EnsembleConfig ensemble_config(const RunConfig& cfg, int input_size)
{
    EnsembleConfig e{cfg.get<int>("stride"), cfg.get<int>("padding"), input_size, input_size};
    e.validate();
    return e;
}

fs::path required_path(const RunConfig& cfg, const std::string& key)
{
    if (!cfg.has(key)) {
        throw Error("missing required option --" + key);
    }
    const fs::path p = cfg.get<std::string>(key);
    if (!fs::exists(p)) {
        throw FileNotFound(p.string());
    }
    return p;
}

void print_table(std::ostream& log, const std::string& dataset, const std::string& mode, const MaeReport& m)
{
    log << std::left << std::setw(20) << dataset << std::setw(10) << mode << std::right << std::fixed
        << std::setprecision(3) << std::setw(9) << m.per_angle[0] << std::setw(9) << m.per_angle[1] << std::setw(9)
        << m.per_angle[2] << std::setw(9) << m.average << "\n";
}

}   // namespace

// ---------------------------------------------------------------------------
// Commands

int cmd_synth(const RunConfig& cfg, std::ostream& log)
{
    const int count = cfg.get<int>("count");
    if (count <= 0) {
        throw Error("synthetic dataset needs count > 0");
    }
    cfg.freeze();
    const double theta = cfg.has("synthetic_theta") ? cfg.get<double>("synthetic_theta") : cfg.get<double>("theta");
    const Manifest m = generate_synthetic(static_cast<std::size_t>(count), cfg.get<std::uint64_t>("seed"), theta,
                                          cfg.out_dir());
    log << "wrote " << m.records.size() << " images and " << m.path.string() << "\n";
    return 0;
}

int cmd_train(const RunConfig& cfg, std::ostream& log)
{
    const DataSources src = resolve_data(cfg, log);
    if (src.train.empty()) {
        throw Error("no training manifest");
    }
    cfg.freeze();
    const LoadedDataset train = load_checked(concat(src.train), log);
    std::optional<LoadedDataset> val_data;
    std::optional<EvalSet> val;
    if (!src.test.empty()) {
        val_data = load_checked(concat(src.test), log);
        val.emplace(*val_data);
    }

    BackboneSpec backbone;
    backbone.family = parse_backbone(cfg.get<std::string>("backbone"));
    Model model(backbone, HeadConfig::stage1(cfg.get<double>("theta")), cfg.get<std::uint64_t>("seed"), {},
                cfg.get<int>("input_size"));

    MetricsLog metrics(cfg.out_dir() / "metrics.jsonl");
    log << "training stage 1 on " << train.size() << " images, " << model.parameter_count() << " parameters\n";
    train_stage1(model, train, val ? &*val : nullptr, train_options(cfg), [&](const EpochMetrics& m) {
        metrics.write(epoch_json(m));
        log << "epoch " << m.epoch << " loss " << m.train_loss;
        if (m.val_mae) {
            log << " val avg MAE " << m.val_mae->average;
        }
        log << " (" << std::setprecision(1) << std::fixed << m.seconds << " s)" << std::defaultfloat
            << std::setprecision(6) << "\n";
    });
    model.save(cfg.out_dir() / "checkpoint.ckpt");
    log << "wrote " << (cfg.out_dir() / "checkpoint.ckpt").string() << "\n";
    return 0;
}

int cmd_sweep(const RunConfig& cfg, std::ostream& log)
{
    Model model = Model::load(required_path(cfg, "checkpoint"));
    const DataSources src = resolve_data(cfg, log);
    if (src.test.empty()) {
        throw Error("sweep needs a test manifest");
    }
    cfg.freeze();
    const LoadedDataset data = load_checked(concat(src.test), log);
    const EvalSet eval(data);

    const auto s_values = cfg.get<std::vector<int>>("s_values");
    const auto p_values = cfg.get<std::vector<int>>("p_values");
    const auto rows = sweep(eval.samples(), model, s_values, p_values);
    write_sweep_csv(cfg.out_dir() / "sweep.csv", rows);
    render_sweep_heatmap(cfg.out_dir() / "sweep_heatmap.png", rows);
    log << rows.size() << " cells written to " << (cfg.out_dir() / "sweep.csv").string() << "\n";
    return 0;
}

namespace {

CacheOptions cache_options(const RunConfig& cfg, int input_size)
{
    CacheOptions opts;
    opts.ensemble = ensemble_config(cfg, input_size);
    opts.seed = cfg.get<std::uint64_t>("seed");
    opts.variants = cfg.get<int>("variants");
    opts.mode = parse_teacher_mode(cfg.get<std::string>("teacher_mode"));
    return opts;
}

fs::path build_cache_file(const RunConfig& cfg, Model& teacher, const Manifest& train, const fs::path& path,
                          std::ostream& log)
{
    CacheBuildReport report;
    const TeacherCache cache = build_teacher_cache(train, teacher, cache_options(cfg, teacher.input_size()), &report);
    for (const auto& f : report.failures) {
        log << "warning: record " << f.line << ": " << f.reason << "\n";
    }
    if (cache.size() == 0) {
        log << "warning: empty teacher cache\n";
    }
    cache.save(path);
    log << "cached " << cache.size() << " teacher distributions (" << report.failures.size() << " failures) in "
        << path.string() << "\n";
    return path;
}

}   // namespace

int cmd_cache(const RunConfig& cfg, std::ostream& log)
{
    Model teacher = Model::load(required_path(cfg, "checkpoint"));
    const DataSources src = resolve_data(cfg, log);
    if (src.train.empty()) {
        throw Error("cache needs a training manifest");
    }
    cfg.freeze();
    const fs::path path = cfg.has("cache") ? fs::path(cfg.get<std::string>("cache"))
                                           : cfg.out_dir() / "teacher_cache.bin";
    build_cache_file(cfg, teacher, concat(src.train), path, log);
    return 0;
}

int cmd_distill(const RunConfig& cfg, std::ostream& log)
{
    Model teacher = Model::load(required_path(cfg, "teacher"));
    const DataSources src = resolve_data(cfg, log);
    if (src.train.empty()) {
        throw Error("distill needs a training manifest");
    }
    cfg.freeze();
    const Manifest train_manifest = concat(src.train);

    fs::path cache_path = cfg.has("cache") ? fs::path(cfg.get<std::string>("cache"))
                                           : cfg.out_dir() / "teacher_cache.bin";
    if (!fs::exists(cache_path)) {
        build_cache_file(cfg, teacher, train_manifest, cache_path, log);
    }
    const TeacherCache cache = TeacherCache::load(cache_path);

    BackboneSpec backbone;
    backbone.family = parse_backbone(cfg.get<std::string>("backbone"));
    Model student(backbone, HeadConfig::stage2(cfg.get<double>("theta")), cfg.get<std::uint64_t>("seed") + 1, {},
                  teacher.input_size());
    cache.verify(student.heads().bin_specs.front());
    if (cfg.get<bool>("init_from_teacher")) {
        student.init_from(teacher);
    }

    const LoadedDataset train = load_checked(train_manifest, log);
    std::optional<LoadedDataset> val_data;
    std::optional<EvalSet> val;
    if (!src.test.empty()) {
        val_data = load_checked(concat(src.test), log);
        val.emplace(*val_data);
    }

    MetricsLog metrics(cfg.out_dir() / "metrics.jsonl");
    log << "distilling into a " << to_string(backbone.family) << " student on " << train.size() << " images\n";
    train_stage2(student, train, cache, val ? &*val : nullptr, train_options(cfg), [&](const EpochMetrics& m) {
        metrics.write(epoch_json(m));
        log << "epoch " << m.epoch << " l_cls " << *m.l_cls << " l_dist " << *m.l_dist << " total " << m.train_loss;
        if (m.val_mae) {
            log << " val avg MAE " << m.val_mae->average;
        }
        log << "\n";
    });
    student.save(cfg.out_dir() / "student.ckpt");
    log << "wrote " << (cfg.out_dir() / "student.ckpt").string() << "\n";
    return 0;
}

int cmd_evaluate(const RunConfig& cfg, std::ostream& log)
{
    Model model = Model::load(required_path(cfg, "checkpoint"));
    std::optional<Model> teacher;
    if (cfg.has("teacher")) {
        teacher.emplace(Model::load(required_path(cfg, "teacher")));
    }
    const DataSources src = resolve_data(cfg, log);
    if (src.test.empty()) {
        throw Error("evaluate needs a test manifest");
    }
    cfg.freeze();
    const EnsembleConfig ens = ensemble_config(cfg, model.input_size());

    json report = {{"checkpoint", cfg.get<std::string>("checkpoint")},
                   {"stage", to_string(model.stage())},
                   {"ensemble", {{"stride", ens.stride}, {"padding", ens.padding}, {"A", ens.ensemble_size()}}},
                   {"interpolation", "bilinear"},
                   {"datasets", json::array()}};

    log << std::left << std::setw(20) << "dataset" << std::setw(10) << "mode" << std::right << std::setw(9) << "pitch"
        << std::setw(9) << "yaw" << std::setw(9) << "roll" << std::setw(9) << "avg" << "\n";
    for (const auto& [name, manifest] : src.test) {
        if (manifest.records.empty()) {
            throw Error("empty evaluation set");
        }
        const LoadedDataset data = load_checked(manifest, log);
        const EvalSet eval(data);
        if (eval.empty()) {
            throw Error("empty evaluation set");
        }
        json modes;
        auto add = [&](const std::string& mode, const MaeReport& m) {
            modes[mode] = mae_json(m);
            print_table(log, name, mode, m);
        };
        if (model.stage() == Stage::base) {
            add("base", evaluate_base(model, eval.samples()));
            add("ensemble", evaluate_ensemble(eval.samples(), model, ens));
        } else {
            if (teacher) {
                add("base", evaluate_base(*teacher, eval.samples()));
                add("ensemble", evaluate_ensemble(eval.samples(), *teacher, ens));
            }
            add("kd", evaluate_base(model, eval.samples()));
        }
        report["datasets"].push_back({{"name", name}, {"count", eval.size()}, {"modes", modes}});
    }
    std::ofstream(cfg.out_dir() / "report.json") << report.dump(2) << '\n';
    return 0;
}

int cmd_render(const RunConfig& cfg, std::ostream& log)
{
    Model model = Model::load(required_path(cfg, "checkpoint"));
    const DataSources src = resolve_data(cfg, log);
    const auto& sources = src.test.empty() ? src.train : src.test;
    if (sources.empty()) {
        throw Error("render needs a manifest");
    }
    cfg.freeze();
    const fs::path dir = cfg.out_dir() / "render";
    fs::create_directories(dir);

    const auto limit = static_cast<std::size_t>(cfg.get<int>("limit"));
    const Manifest manifest = concat(sources);
    std::size_t written = 0;
    for (std::size_t i = 0; i < manifest.records.size() && written < limit; ++i) {
        const auto& rec = manifest.records[i];
        const Image image = load_image(manifest.resolve(rec));
        const Image crop = prepare_padded_crop(image, rec.bbox, {1, 0, model.input_size(), model.input_size()});
        const auto outputs = model.forward(to_input_tensor(std::span(&crop, 1), model.normalization()), false);
        const EulerPose pred = predict(outputs.front(), model.heads());

        cv::Mat canvas = to_u8_image(image);
        const double length = 0.5 * std::min(rec.bbox.width(), rec.bbox.height());
        draw_pose_axes(canvas, rec.pose, rec.bbox.cx(), rec.bbox.cy(), length, 1);
        draw_pose_axes(canvas, pred, rec.bbox.cx(), rec.bbox.cy(), length, 3);
        char name[32];
        std::snprintf(name, sizeof(name), "%06zu.png", i);
        save_image(dir / name, canvas);
        ++written;
    }
    log << "rendered " << written << " images into " << dir.string() << "\n";
    return 0;
}

int run(const RunConfig& config, std::ostream& log)
{
    const auto& c = config.command();
    if (c == "synth") return cmd_synth(config, log);
    if (c == "train") return cmd_train(config, log);
    if (c == "sweep") return cmd_sweep(config, log);
    if (c == "cache") return cmd_cache(config, log);
    if (c == "distill") return cmd_distill(config, log);
    if (c == "evaluate") return cmd_evaluate(config, log);
    if (c == "render") return cmd_render(config, log);
    throw Error("unknown command '" + c + "'");
}

int run_main(const RunConfig& config, std::ostream& log, std::ostream& err)
{
    try {
        return run(config, log);
    } catch (const FileNotFound& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
}

}   // hpekd::cli
