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

#include "hpekd/ensemble.hpp"
#include "hpekd/training.hpp"

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace hpekd {

struct KDLossBreakdown
{
    double l_cls = 0.0;    // summed cross-entropy over the three angles
    double l_dist = 0.0;   // summed KL(teacher || student) over the three angles
    double total = 0.0;    // (0.05 * l_cls + l_dist) / 2
};

inline constexpr double kClsWeight = 0.05;
/// Floor applied to student probabilities inside the KL logarithm.
inline constexpr double kProbFloor = 1e-12;

double kd_total(double l_cls, double l_dist);

/// D_KL(teacher || student) for one angle; teacher zeros contribute nothing.
double kl_divergence(std::span<const double> teacher, std::span<const double> student);

/// Distillation loss of one image; student logits are angle-major (3 x q).
KDLossBreakdown kd_loss(std::span<const double> student_logits, const TeacherDistribution& teacher,
                        const EulerPose& gt, const BinSpec& spec);

struct KDLossWithGrad
{
    KDLossBreakdown loss;
    std::vector<double> grad;   // d total / d logits, same layout as logits
};

KDLossWithGrad kd_loss_with_grad(std::span<const double> student_logits, const TeacherDistribution& teacher,
                                 const EulerPose& gt, const BinSpec& spec);

enum class TeacherMode
{
    augmented,   // teacher sees the same replayable augmented pixels as the student
    clean,       // teacher sees the unaugmented image; the student then trains unaugmented
};

std::string to_string(TeacherMode mode);
TeacherMode parse_teacher_mode(const std::string& name);

struct CacheOptions
{
    EnsembleConfig ensemble;
    std::uint64_t seed = 0;
    int variants = 1;              // augmentation variants cached per record
    TeacherMode mode = TeacherMode::augmented;
    AugmentationPlan plan;
};

struct TeacherCacheEntry
{
    std::string record_id;
    int variant = 0;
    std::uint64_t aug_seed = 0;
    TeacherDistribution distribution;
};

/// Write-once store of ensemble teacher distributions.
///
/// File layout: magic "HPEKDTC1", u64 header length, JSON header (bin spec,
/// fingerprint, ensemble config, seeds, mode, augmentation plan, entry count),
/// then per entry: u32 id length, id bytes, u32 variant, u64 seed and
/// 3 * bin_count float32 probabilities (pitch, yaw, roll).
class TeacherCache
{
public:
    TeacherCache(BinSpec spec, CacheOptions options);

    const BinSpec& spec() const noexcept { return spec_; }
    const CacheOptions& options() const noexcept { return options_; }
    std::span<const TeacherCacheEntry> entries() const noexcept { return entries_; }
    std::size_t size() const noexcept { return entries_.size(); }

    void add(TeacherCacheEntry entry);
    const TeacherCacheEntry* find(const std::string& record_id, int variant) const;

    /// Throws when the cache was produced for a different bin grid.
    void verify(const BinSpec& student_spec) const;

    void save(const std::filesystem::path& path) const;
    static TeacherCache load(const std::filesystem::path& path);

    /// Seed of the augmentation replayed for (record index, variant).
    static std::uint64_t variant_seed(std::uint64_t base_seed, std::size_t record_index, int variant);

private:
    BinSpec spec_;
    CacheOptions options_;
    std::vector<TeacherCacheEntry> entries_;
    std::map<std::pair<std::string, int>, std::size_t> index_;
};

struct CacheBuildReport
{
    std::vector<ManifestIssue> failures;
};

/// Runs the ensemble over every record (and augmentation variant). Records
/// whose image cannot be read are reported and skipped.
TeacherCache build_teacher_cache(const Manifest& manifest, Model& teacher, const CacheOptions& options,
                                 CacheBuildReport* report = nullptr);

/// Stage-2 training of a single-head student against cached teacher
/// distributions, minimizing the mean kd_loss with Adam.
std::vector<EpochMetrics> train_stage2(Model& student, const LoadedDataset& train, const TeacherCache& cache,
                                       const EvalSet* val, const TrainOptions& options,
                                       const EpochCallback& on_epoch = {});

}   // hpekd
