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

#include "hpekd/geometry.hpp"
#include "hpekd/image.hpp"
#include "hpekd/pose_math.hpp"

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace hpekd {

struct DatasetRecord
{
    std::string image_path;   // as written in the manifest
    EulerPose pose;
    BoundingBox bbox;

    bool operator==(const DatasetRecord&) const = default;
};

inline constexpr const char* kManifestHeader = "image_path,pitch,yaw,roll,x1,y1,x2,y2";

struct ManifestIssue
{
    std::size_t line = 0;
    std::string reason;
};

struct Manifest
{
    std::filesystem::path path;
    std::vector<DatasetRecord> records;
    std::vector<ManifestIssue> malformed;   // rows that could not be parsed
    std::vector<ManifestIssue> excluded;    // rows dropped by the range filter

    /// Absolute location of a record's image (relative paths resolve against
    /// the manifest directory).
    std::filesystem::path resolve(const DatasetRecord& record) const;
};

/// Parses a manifest CSV. Bad rows are skipped and reported. When theta is
/// given, rows with any |angle| > theta are excluded with a reason.
Manifest load_manifest(const std::filesystem::path& path, std::optional<double> theta = std::nullopt);

/// Writes records with poses as fixed-point degrees (6 fractional digits).
void write_manifest(const std::filesystem::path& path, std::span<const DatasetRecord> records);

/// Keeps records whose three angles all lie in [-theta, theta].
std::vector<DatasetRecord> filter_range(std::span<const DatasetRecord> records, double theta);

/// Records plus their decoded images, kept in memory as 8-bit BGR.
struct LoadedDataset
{
    std::vector<DatasetRecord> records;
    std::vector<cv::Mat> images;
    std::vector<ManifestIssue> failures;   // records whose image could not be read

    std::size_t size() const noexcept { return records.size(); }
    Image image(std::size_t i) const { return to_float_image(images.at(i)); }
};

LoadedDataset load_images(const Manifest& manifest);

// ---------------------------------------------------------------------------
// Test protocols

enum class Protocol
{
    p1,
    p2,
    p3,
};

Protocol parse_protocol(const std::string& name);
std::string to_string(Protocol protocol);

/// Manifests per split. Protocol 2 derives its split from a single AFLW
/// manifest, protocol 3 from a single BIWI manifest; the config may instead
/// name explicit train/test manifests.
struct ProtocolSpec
{
    Protocol name = Protocol::p1;
    std::vector<std::filesystem::path> train_manifests;
    std::vector<std::filesystem::path> test_manifests;
    std::optional<std::filesystem::path> source_manifest;   // p2/p3 split source
    double theta = AngleRange::kDefaultTheta;
};

/// Reads the protocol definition from a JSON file of the form
///   {"theta": 99, "protocols": {"p1": {"train": [...], "test": [...]},
///                                "p2": {"source": "aflw.csv"}, ...}}
/// Relative paths resolve against the file's directory.
ProtocolSpec load_protocol(const std::filesystem::path& config, Protocol name);

struct Split
{
    std::vector<DatasetRecord> train;
    std::vector<DatasetRecord> test;
};

/// Protocol 2 rule: the first n ".jpg" records in lexicographic filename
/// order form the test set, everything else trains.
Split split_first_jpg(std::span<const DatasetRecord> records, std::size_t n = 2000);

/// Protocol 3 rule: records are grouped by video (parent directory of the
/// image path); the first train_fraction of videos in sorted order train.
Split split_by_video(std::span<const DatasetRecord> records, double train_fraction = 0.7);

/// Resolved record lists for a protocol (range filter applied).
struct ProtocolData
{
    std::vector<Manifest> train;
    std::vector<Manifest> test;
};

ProtocolData resolve_protocol(const ProtocolSpec& spec);

}   // hpekd
