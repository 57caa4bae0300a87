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

#include "hpekd/data.hpp"
#include "hpekd/error.hpp"

#include <json.hpp>
#include <opencv2/imgcodecs.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace hpekd {

namespace fs = std::filesystem;

namespace {

std::vector<std::string> split_csv(const std::string& line)
{
    std::vector<std::string> fields;
    std::string field;
    std::istringstream is(line);
    while (std::getline(is, field, ',')) {
        fields.push_back(field);
    }
    if (!line.empty() && line.back() == ',') {
        fields.emplace_back();
    }
    return fields;
}

std::optional<double> parse_double(const std::string& text)
{
    const char* begin = text.data();
    const char* end = text.data() + text.size();
    while (begin < end && (*begin == ' ' || *begin == '\t')) {
        ++begin;
    }
    while (end > begin && (end[-1] == ' ' || end[-1] == '\t' || end[-1] == '\r')) {
        --end;
    }
    double value = 0.0;
    const auto [ptr, ec] = std::from_chars(begin, end, value);
    if (ec != std::errc() || ptr != end || !std::isfinite(value)) {
        return std::nullopt;
    }
    return value;
}

}   // namespace

fs::path Manifest::resolve(const DatasetRecord& record) const
{
    const fs::path p(record.image_path);
    if (p.is_absolute()) {
        return p;
    }
    return path.parent_path() / p;
}

Manifest load_manifest(const fs::path& path, std::optional<double> theta)
{
    if (!fs::exists(path)) {
        throw FileNotFound(path.string());
    }
    std::ifstream is(path);
    if (!is) {
        throw Error("cannot open manifest: " + path.string());
    }

    Manifest manifest;
    manifest.path = path;
    std::string line;
    std::size_t lineno = 0;
    if (!std::getline(is, line)) {
        return manifest;
    }
    ++lineno;
    if (!line.empty() && line.back() == '\r') {
        line.pop_back();
    }
    if (line != kManifestHeader) {
        throw Error("manifest " + path.string() + " must start with header '" + kManifestHeader + "'");
    }

    while (std::getline(is, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (line.empty()) {
            continue;
        }
        const auto fields = split_csv(line);
        if (fields.size() != 8) {
            manifest.malformed.push_back({lineno, "expected 8 fields, got " + std::to_string(fields.size())});
            continue;
        }
        DatasetRecord rec;
        rec.image_path = fields[0];
        std::array<double, 7> values{};
        bool ok = !rec.image_path.empty();
        for (std::size_t i = 0; ok && i < 7; ++i) {
            const auto v = parse_double(fields[i + 1]);
            ok = v.has_value();
            if (ok) {
                values[i] = *v;
            }
        }
        if (!ok) {
            manifest.malformed.push_back({lineno, "unparseable field"});
            continue;
        }
        rec.pose = {values[0], values[1], values[2]};
        rec.bbox = {values[3], values[4], values[5], values[6]};
        if (!rec.bbox.has_area()) {
            manifest.malformed.push_back({lineno, "bounding box has no area"});
            continue;
        }
        if (theta && !AngleRange(*theta).contains(rec.pose)) {
            std::ostringstream reason;
            reason << "pose (" << rec.pose.pitch << ", " << rec.pose.yaw << ", " << rec.pose.roll
                   << ") outside [-" << *theta << ", " << *theta << "]";
            manifest.excluded.push_back({lineno, reason.str()});
            continue;
        }
        manifest.records.push_back(std::move(rec));
    }
    return manifest;
}

void write_manifest(const fs::path& path, std::span<const DatasetRecord> records)
{
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path());
    }
    std::ofstream os(path);
    if (!os) {
        throw Error("cannot write manifest: " + path.string());
    }
    os << kManifestHeader << '\n';
    char buf[512];
    for (const auto& r : records) {
        if (r.image_path.find(',') != std::string::npos) {
            throw Error("image paths must not contain commas: " + r.image_path);
        }
        std::snprintf(buf, sizeof(buf), ",%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n", r.pose.pitch, r.pose.yaw,
                      r.pose.roll, r.bbox.x1, r.bbox.y1, r.bbox.x2, r.bbox.y2);
        os << r.image_path << buf;
    }
}

std::vector<DatasetRecord> filter_range(std::span<const DatasetRecord> records, double theta)
{
    const AngleRange range(theta);
    std::vector<DatasetRecord> kept;
    std::copy_if(records.begin(), records.end(), std::back_inserter(kept),
                 [&](const DatasetRecord& r) { return range.contains(r.pose); });
    return kept;
}

LoadedDataset load_images(const Manifest& manifest)
{
    LoadedDataset data;
    for (std::size_t i = 0; i < manifest.records.size(); ++i) {
        const auto& rec = manifest.records[i];
        const auto file = manifest.resolve(rec);
        cv::Mat img = fs::exists(file) ? cv::imread(file.string(), cv::IMREAD_COLOR) : cv::Mat();
        if (img.empty()) {
            data.failures.push_back({i, "cannot read image " + file.string()});
            continue;
        }
        data.records.push_back(rec);
        data.images.push_back(std::move(img));
    }
    return data;
}

// ---------------------------------------------------------------------------
// Protocols

Protocol parse_protocol(const std::string& name)
{
    if (name == "p1") return Protocol::p1;
    if (name == "p2") return Protocol::p2;
    if (name == "p3") return Protocol::p3;
    throw Error("unknown protocol '" + name + "' (expected p1, p2 or p3)");
}

std::string to_string(Protocol protocol)
{
    switch (protocol) {
    case Protocol::p1: return "p1";
    case Protocol::p2: return "p2";
    case Protocol::p3: return "p3";
    }
    return "?";
}

ProtocolSpec load_protocol(const fs::path& config, Protocol name)
{
    if (!fs::exists(config)) {
        throw FileNotFound(config.string());
    }
    std::ifstream is(config);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(is);
    } catch (const nlohmann::json::exception& e) {
        throw Error("cannot parse protocol config " + config.string() + ": " + e.what());
    }
    const auto key = to_string(name);
    if (!j.contains("protocols") || !j["protocols"].contains(key)) {
        throw Error("protocol config " + config.string() + " has no entry for " + key);
    }
    const auto& p = j["protocols"][key];
    const fs::path base = config.parent_path();
    auto resolve = [&](const std::string& s) {
        const fs::path path(s);
        return path.is_absolute() ? path : base / path;
    };

    ProtocolSpec spec;
    spec.name = name;
    spec.theta = j.value("theta", AngleRange::kDefaultTheta);
    for (const auto& s : p.value("train", std::vector<std::string>{})) {
        spec.train_manifests.push_back(resolve(s));
    }
    for (const auto& s : p.value("test", std::vector<std::string>{})) {
        spec.test_manifests.push_back(resolve(s));
    }
    if (p.contains("source")) {
        spec.source_manifest = resolve(p["source"].get<std::string>());
    }
    if (name == Protocol::p1 && (spec.train_manifests.empty() || spec.test_manifests.empty())) {
        throw Error("protocol p1 needs explicit train and test manifests");
    }
    if (name != Protocol::p1 && !spec.source_manifest
        && (spec.train_manifests.empty() || spec.test_manifests.empty())) {
        throw Error("protocol " + key + " needs a source manifest or explicit train/test manifests");
    }
    return spec;
}

Split split_first_jpg(std::span<const DatasetRecord> records, std::size_t n)
{
    std::vector<std::size_t> jpg;
    for (std::size_t i = 0; i < records.size(); ++i) {
        const fs::path p(records[i].image_path);
        auto ext = p.extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
        if (ext == ".jpg") {
            jpg.push_back(i);
        }
    }
    std::stable_sort(jpg.begin(), jpg.end(), [&](std::size_t a, std::size_t b) {
        return fs::path(records[a].image_path).filename().string() < fs::path(records[b].image_path).filename().string();
    });
    std::set<std::size_t> test(jpg.begin(), jpg.begin() + static_cast<std::ptrdiff_t>(std::min(n, jpg.size())));

    Split split;
    for (std::size_t i = 0; i < records.size(); ++i) {
        (test.count(i) ? split.test : split.train).push_back(records[i]);
    }
    return split;
}

Split split_by_video(std::span<const DatasetRecord> records, double train_fraction)
{
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
        throw Error("train fraction must lie in (0, 1)");
    }
    std::set<std::string> videos;
    for (const auto& r : records) {
        videos.insert(fs::path(r.image_path).parent_path().string());
    }
    const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(videos.size())));
    std::set<std::string> train_videos;
    for (const auto& v : videos) {
        if (train_videos.size() >= n_train) {
            break;
        }
        train_videos.insert(v);
    }
    Split split;
    for (const auto& r : records) {
        (train_videos.count(fs::path(r.image_path).parent_path().string()) ? split.train : split.test).push_back(r);
    }
    return split;
}

ProtocolData resolve_protocol(const ProtocolSpec& spec)
{
    ProtocolData data;
    if (spec.source_manifest && spec.train_manifests.empty()) {
        Manifest source = load_manifest(*spec.source_manifest, spec.theta);
        const Split split = spec.name == Protocol::p2 ? split_first_jpg(source.records)
                                                      : split_by_video(source.records);
        Manifest train = source, test = source;
        train.records = split.train;
        test.records = split.test;
        data.train.push_back(std::move(train));
        data.test.push_back(std::move(test));
        return data;
    }
    for (const auto& m : spec.train_manifests) {
        data.train.push_back(load_manifest(m, spec.theta));
    }
    for (const auto& m : spec.test_manifests) {
        data.test.push_back(load_manifest(m, spec.theta));
    }
    return data;
}

}   // hpekd
