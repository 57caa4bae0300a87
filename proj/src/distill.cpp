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

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>

namespace hpekd {

double kd_total(double l_cls, double l_dist)
{
    return (kClsWeight * l_cls + l_dist) / 2.0;
}

double kl_divergence(std::span<const double> teacher, std::span<const double> student)
{
    if (teacher.size() != student.size()) {
        throw Error("kl_divergence: size mismatch");
    }
    double kl = 0.0;
    for (std::size_t j = 0; j < teacher.size(); ++j) {
        if (teacher[j] > 0.0) {
            kl += teacher[j] * (std::log(teacher[j]) - std::log(std::max(student[j], kProbFloor)));
        }
    }
    return kl;
}

KDLossWithGrad kd_loss_with_grad(std::span<const double> student_logits, const TeacherDistribution& teacher,
                                 const EulerPose& gt, const BinSpec& spec)
{
    const auto q = static_cast<std::size_t>(spec.bin_count());
    if (student_logits.size() != 3 * q) {
        throw Error("kd_loss: expected " + std::to_string(3 * q) + " student logits, got "
                    + std::to_string(student_logits.size()));
    }
    if (teacher.bin_count() != static_cast<int>(q)) {
        throw Error("kd_loss: teacher distribution has " + std::to_string(teacher.bin_count()) + " bins, student "
                    + std::to_string(q));
    }

    KDLossWithGrad out;
    out.grad.assign(3 * q, 0.0);
    for (std::size_t a = 0; a < 3; ++a) {
        const auto logits = student_logits.subspan(a * q, q);
        const auto& t = teacher.probs[a];
        const auto s = softmax(logits);
        const int target = encode_class_clamped(gt[a], spec);

        const double mx = *std::max_element(logits.begin(), logits.end());
        double lse = 0.0;
        for (double v : logits) {
            lse += std::exp(v - mx);
        }
        out.loss.l_cls += std::log(lse) + mx - logits[target];
        out.loss.l_dist += kl_divergence(t, s);

        // d KL / d z_k = s_k * sum_{j unclamped} t_j - [k unclamped] t_k
        double live_mass = 0.0;
        for (std::size_t j = 0; j < q; ++j) {
            if (s[j] >= kProbFloor) {
                live_mass += t[j];
            }
        }
        for (std::size_t k = 0; k < q; ++k) {
            const double d_cls = s[k] - (static_cast<int>(k) == target ? 1.0 : 0.0);
            const double d_dist = s[k] * live_mass - (s[k] >= kProbFloor ? t[k] : 0.0);
            out.grad[a * q + k] = (kClsWeight * d_cls + d_dist) / 2.0;
        }
    }
    out.loss.total = kd_total(out.loss.l_cls, out.loss.l_dist);
    return out;
}

KDLossBreakdown kd_loss(std::span<const double> student_logits, const TeacherDistribution& teacher,
                        const EulerPose& gt, const BinSpec& spec)
{
    return kd_loss_with_grad(student_logits, teacher, gt, spec).loss;
}

std::string to_string(TeacherMode mode)
{
    return mode == TeacherMode::augmented ? "augmented" : "clean";
}

TeacherMode parse_teacher_mode(const std::string& name)
{
    if (name == "augmented") return TeacherMode::augmented;
    if (name == "clean") return TeacherMode::clean;
    throw Error("unknown teacher mode '" + name + "' (expected augmented or clean)");
}

// ---------------------------------------------------------------------------
// TeacherCache

namespace {

constexpr char kCacheMagic[8] = {'H', 'P', 'E', 'K', 'D', 'T', 'C', '1'};

nlohmann::json plan_json(const AugmentationPlan& p)
{
    return {{"flip_prob", p.flip_prob},     {"rotation_min", p.rotation_min}, {"rotation_max", p.rotation_max},
            {"color_prob", p.color_prob},   {"channel_prob", p.channel_prob}, {"blur_prob", p.blur_prob},
            {"noise_prob", p.noise_prob},   {"dropout_prob", p.dropout_prob}};
}

AugmentationPlan plan_from_json(const nlohmann::json& j)
{
    AugmentationPlan p;
    p.flip_prob = j.at("flip_prob");
    p.rotation_min = j.at("rotation_min");
    p.rotation_max = j.at("rotation_max");
    p.color_prob = j.at("color_prob");
    p.channel_prob = j.at("channel_prob");
    p.blur_prob = j.at("blur_prob");
    p.noise_prob = j.at("noise_prob");
    p.dropout_prob = j.at("dropout_prob");
    return p;
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
        throw Error("truncated teacher cache");
    }
    return v;
}

}   // namespace

TeacherCache::TeacherCache(BinSpec spec, CacheOptions options) : spec_(std::move(spec)), options_(options)
{
    options_.ensemble.validate();
    if (options_.variants < 1) {
        throw Error("cache needs at least one variant per record");
    }
}

void TeacherCache::add(TeacherCacheEntry entry)
{
    if (entry.distribution.bin_count() != spec_.bin_count()) {
        throw Error("cache entry does not match the cache bin grid");
    }
    const auto key = std::make_pair(entry.record_id, entry.variant);
    if (index_.count(key)) {
        throw Error("duplicate cache entry for " + entry.record_id);
    }
    index_[key] = entries_.size();
    entries_.push_back(std::move(entry));
}

const TeacherCacheEntry* TeacherCache::find(const std::string& record_id, int variant) const
{
    const auto it = index_.find({record_id, variant});
    return it == index_.end() ? nullptr : &entries_[it->second];
}

void TeacherCache::verify(const BinSpec& student_spec) const
{
    if (!(student_spec == spec_)) {
        throw Error("teacher cache bin grid (" + spec_.fingerprint() + ") does not match the student head ("
                    + student_spec.fingerprint() + ")");
    }
}

std::uint64_t TeacherCache::variant_seed(std::uint64_t base_seed, std::size_t record_index, int variant)
{
    return augmentation_seed(base_seed, static_cast<std::uint64_t>(variant), record_index);
}

void TeacherCache::save(const std::filesystem::path& path) const
{
    const nlohmann::json header = {
        {"format", "hpekd-teacher-cache"},
        {"version", 1},
        {"bin_size", spec_.bin_size()},
        {"bin_count", spec_.bin_count()},
        {"theta", spec_.theta()},
        {"fingerprint", spec_.fingerprint()},
        {"ensemble",
         {{"stride", options_.ensemble.stride},
          {"padding", options_.ensemble.padding},
          {"input_w", options_.ensemble.input_w},
          {"input_h", options_.ensemble.input_h}}},
        {"seed", options_.seed},
        {"variants", options_.variants},
        {"mode", to_string(options_.mode)},
        {"plan", plan_json(options_.plan)},
        {"entries", entries_.size()},
    };
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream os(path, std::ios::binary);
    if (!os) {
        throw Error("cannot write teacher cache: " + path.string());
    }
    const std::string text = header.dump();
    os.write(kCacheMagic, sizeof(kCacheMagic));
    write_pod<std::uint64_t>(os, text.size());
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& e : entries_) {
        write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(e.record_id.size()));
        os.write(e.record_id.data(), static_cast<std::streamsize>(e.record_id.size()));
        write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(e.variant));
        write_pod<std::uint64_t>(os, e.aug_seed);
        for (const auto& p : e.distribution.probs) {
            for (double v : p) {
                write_pod<float>(os, static_cast<float>(v));
            }
        }
    }
    if (!os) {
        throw Error("failed writing teacher cache: " + path.string());
    }
}

TeacherCache TeacherCache::load(const std::filesystem::path& path)
{
    if (!std::filesystem::exists(path)) {
        throw FileNotFound(path.string());
    }
    std::ifstream is(path, std::ios::binary);
    char magic[sizeof(kCacheMagic)];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kCacheMagic, sizeof(magic)) != 0) {
        throw Error("not an hpekd teacher cache: " + path.string());
    }
    const auto len = read_pod<std::uint64_t>(is);
    std::string text(len, '\0');
    is.read(text.data(), static_cast<std::streamsize>(len));
    const auto header = nlohmann::json::parse(text);

    BinSpec spec(header.at("bin_size").get<double>(), header.at("theta").get<double>());
    if (spec.bin_count() != header.at("bin_count").get<int>()
        || spec.fingerprint() != header.at("fingerprint").get<std::string>()) {
        throw Error("teacher cache bin grid does not follow this build's grid rule");
    }
    CacheOptions options;
    const auto& ens = header.at("ensemble");
    options.ensemble = {ens.at("stride"), ens.at("padding"), ens.at("input_w"), ens.at("input_h")};
    options.seed = header.at("seed").get<std::uint64_t>();
    options.variants = header.at("variants").get<int>();
    options.mode = parse_teacher_mode(header.at("mode").get<std::string>());
    options.plan = plan_from_json(header.at("plan"));

    TeacherCache cache(spec, options);
    const auto count = header.at("entries").get<std::size_t>();
    const auto q = static_cast<std::size_t>(spec.bin_count());
    for (std::size_t i = 0; i < count; ++i) {
        TeacherCacheEntry e;
        const auto id_len = read_pod<std::uint32_t>(is);
        e.record_id.resize(id_len);
        is.read(e.record_id.data(), id_len);
        e.variant = static_cast<int>(read_pod<std::uint32_t>(is));
        e.aug_seed = read_pod<std::uint64_t>(is);
        for (auto& p : e.distribution.probs) {
            p.resize(q);
            for (auto& v : p) {
                v = read_pod<float>(is);
            }
        }
        cache.add(std::move(e));
    }
    return cache;
}

TeacherCache build_teacher_cache(const Manifest& manifest, Model& teacher, const CacheOptions& options,
                                 CacheBuildReport* report)
{
    if (teacher.stage() != Stage::base) {
        throw Error("the teacher must be a stage-1 (multi-head) model");
    }
    CacheOptions opts = options;
    if (opts.mode == TeacherMode::clean) {
        opts.variants = 1;
    }
    opts.ensemble.input_w = teacher.input_size();
    opts.ensemble.input_h = teacher.input_size();

    const auto& spec = teacher.heads().bin_specs[teacher.heads().prediction_head()];
    TeacherCache cache(spec, opts);

    for (std::size_t i = 0; i < manifest.records.size(); ++i) {
        const auto& rec = manifest.records[i];
        Image image;
        try {
            image = load_image(manifest.resolve(rec));
        } catch (const Error& e) {
            if (report) {
                report->failures.push_back({i, e.what()});
            }
            continue;
        }
        for (int v = 0; v < opts.variants; ++v) {
            TeacherCacheEntry entry;
            entry.record_id = rec.image_path;
            entry.variant = v;
            Image view = image;
            BoundingBox bbox = rec.bbox;
            if (opts.mode == TeacherMode::augmented) {
                entry.aug_seed = TeacherCache::variant_seed(opts.seed, i, v);
                auto aug = augment(image, rec, opts.plan, entry.aug_seed);
                view = std::move(aug.image);
                bbox = aug.bbox;
            }
            const Image padded = prepare_padded_crop(view, bbox, opts.ensemble);
            entry.distribution = ensemble_predict(padded, teacher, opts.ensemble).distribution;
            cache.add(std::move(entry));
        }
    }
    return cache;
}

// ---------------------------------------------------------------------------
// Stage 2

std::vector<EpochMetrics> train_stage2(Model& student, const LoadedDataset& train, const TeacherCache& cache,
                                       const EvalSet* val, const TrainOptions& options, const EpochCallback& on_epoch)
{
    const auto& heads = student.heads();
    if (heads.bin_specs.size() != 1 || heads.has_regression_head) {
        throw Error("the student must have exactly one classification head and no regression head");
    }
    const BinSpec& spec = heads.bin_specs.front();
    cache.verify(spec);
    if (options.epochs < 0 || options.batch_size < 1) {
        throw Error("epochs must be >= 0 and batch size >= 1");
    }
    if (cache.options().ensemble.input_w != student.input_size()) {
        throw Error("teacher cache was built for a different input size");
    }
    const int variants = cache.options().variants;
    for (const auto& rec : train.records) {
        for (int v = 0; v < variants; ++v) {
            if (!cache.find(rec.image_path, v)) {
                throw Error("teacher cache has no entry for " + rec.image_path + " (variant " + std::to_string(v)
                            + ")");
            }
        }
    }
    if (train.size() == 0 && options.epochs > 0) {
        throw Error("empty training set");
    }

    const bool augmented = cache.options().mode == TeacherMode::augmented;
    nn::Adam optimizer(student.params(), {.lr = options.lr});
    std::vector<EpochMetrics> history;

    for (int epoch = 1; epoch <= options.epochs; ++epoch) {
        optimizer.set_lr(epoch_lr(options, epoch));
        const auto started = std::chrono::steady_clock::now();
        const int variant = (epoch - 1) % variants;
        const auto order = epoch_order(train.size(), options.seed, epoch);
        KDLossBreakdown sums;

        for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(options.batch_size));
            std::vector<Image> crops;
            std::vector<EulerPose> poses;
            std::vector<const TeacherCacheEntry*> targets;
            for (std::size_t k = start; k < end; ++k) {
                const std::size_t idx = order[k];
                const auto* entry = cache.find(train.records[idx].image_path, variant);
                auto sample = make_training_crop(train.image(idx), train.records[idx],
                                                 augmented ? &cache.options().plan : nullptr, entry->aug_seed,
                                                 student.input_size());
                crops.push_back(std::move(sample.crop));
                poses.push_back(sample.pose);
                targets.push_back(entry);
            }

            optimizer.zero_grad();
            const auto outputs = student.forward(to_input_tensor(crops, student.normalization()), true);
            const double inv_n = 1.0 / static_cast<double>(outputs.size());
            std::vector<HeadGradients> grads(outputs.size());
            for (std::size_t i = 0; i < outputs.size(); ++i) {
                auto lg = kd_loss_with_grad(outputs[i].logits.front(), targets[i]->distribution, poses[i], spec);
                sums.l_cls += lg.loss.l_cls;
                sums.l_dist += lg.loss.l_dist;
                sums.total += lg.loss.total;
                for (auto& g : lg.grad) {
                    g *= inv_n;
                }
                grads[i].logits.push_back(std::move(lg.grad));
            }
            student.backward(grads);
            optimizer.step();
        }

        EpochMetrics m;
        m.epoch = epoch;
        m.lr = epoch_lr(options, epoch);
        const auto n = static_cast<double>(train.size());
        m.train_loss = sums.total / n;
        m.l_cls = sums.l_cls / n;
        m.l_dist = sums.l_dist / n;
        if (val && !val->empty()) {
            m.val_mae = evaluate_base(student, val->samples());
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
