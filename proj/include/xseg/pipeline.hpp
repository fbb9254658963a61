#pragma once

#include <array>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "xseg/manifest.hpp"
#include "xseg/metrics.hpp"
#include "xseg/trainer.hpp"
#include "xseg/unet.hpp"

namespace xseg {

struct SplitFractions {
    double train = 0.6;
    double val = 0.2;
    double test = 0.2;

    void validate() const;  // positive, sum 1 within 1e-9
};

struct StageSettings {
    TrainConfig train;
    OptimizerConfig optimizer;
};

struct ExperimentConfig {
    int schema_version = 1;
    int repetitions = 25;
    std::uint64_t master_seed = 0;
    SplitFractions split;
    ModelConfig model;
    std::string source_manifest;
    std::string general_manifest;
    std::string portable_manifest;
    std::string stage0_checkpoint;  // when empty, stage 0 trains on the source domain
    StageSettings stage0;
    StageSettings stage1;
    StageSettings stage2;

    void validate() const;
};

ExperimentConfig load_experiment_config(const std::string& path);
void save_experiment_config(const ExperimentConfig& config, const std::string& path);

// Config for a single training stage (cmd_train).
struct SingleStageConfig {
    int schema_version = 1;
    std::uint64_t seed = 0;
    ModelConfig model;
    SplitFractions split;
    StageSettings stage;

    void validate() const;
};

SingleStageConfig load_single_stage_config(const std::string& path);
void save_single_stage_config(const SingleStageConfig& config, const std::string& path);

// CSV of a stratified table: one row per class plus an overall row,
// mean/std column pair per metric.
std::string stratified_table_csv(const StratifiedTable& table);

// The same table as a structured JSON record (machine consumption).
std::string stratified_table_json(const StratifiedTable& table);

// Seeded stratified split. Global bucket sizes are floor(n*train) and
// floor(n*val) with the remainder going to test; per-class allocations use
// largest remainders so each split preserves class proportions within +-1.
// Rejects datasets smaller than 5 and splits that would starve a present
// class out of any bucket.
struct SplitResult {
    DatasetManifest train;
    DatasetManifest val;
    DatasetManifest test;
};

SplitResult split_manifest(const DatasetManifest& manifest, const SplitFractions& fractions,
                           std::uint64_t seed);

// Stratified 50/50 halving; the held-out half is reserved for stage
// comparison and tagged portable-heldout. Odd class counts fall back to
// largest-remainder assignment and set odd_class_warning.
struct HalveResult {
    DatasetManifest transfer_half;
    DatasetManifest heldout_half;
    bool odd_class_warning = false;
};

HalveResult halve_portable(const DatasetManifest& portable, std::uint64_t seed);

// Per-image evaluation of a predictor over a dataset. The predictor maps a
// sample to a probability map at network resolution; metrics compare it with
// the nearest-resized mask.
struct PerImageMetrics {
    std::string image_path;
    PathologyClass label = PathologyClass::Normal;
    MetricsRecord record;
};

using Predictor = std::function<Tensor(const Sample&)>;

Predictor model_predictor(const UNet& model);
std::vector<PerImageMetrics> evaluate_dataset(const Predictor& predict,
                                              const DatasetManifest& manifest, int eval_size,
                                              double threshold = 0.5);

// One training repetition of one stage: split, fine-tune from the initial
// checkpoint, evaluate on the repetition's test split.
struct RepetitionResult {
    std::vector<EpochLog> logs;
    int best_epoch = 0;
    MetricsRecord test_metrics;
    std::string checkpoint_path;
};

// forbidden_paths (absolute image paths) makes training refuse any split that
// touches them; the pipeline passes the held-out half here.
RepetitionResult run_stage(const std::string& initial_checkpoint, const DatasetManifest& domain,
                           const ModelConfig& model_config, const StageSettings& settings,
                           const SplitFractions& fractions, std::uint64_t rep_seed,
                           const std::string& out_checkpoint, const std::string& stage_id,
                           const std::set<std::string>* forbidden_paths = nullptr);

// Same, but starting from an in-memory model (from-scratch training).
RepetitionResult run_stage_from(UNet model, const DatasetManifest& domain,
                                const StageSettings& settings, const SplitFractions& fractions,
                                std::uint64_t rep_seed, const std::string& out_checkpoint,
                                const std::string& stage_id,
                                const std::set<std::string>* forbidden_paths = nullptr);

// Absolute (weakly canonical) image paths of a manifest; identity sets for
// overlap checks.
std::set<std::string> manifest_image_paths(const DatasetManifest& manifest);

struct StageResult {
    std::string stage_id;
    std::vector<RepetitionResult> repetitions;
    MetricTable aggregated;
};

// Held-out comparison of one stage-1/stage-2 checkpoint pair.
struct StagePairComparison {
    StratifiedTable stage1;
    StratifiedTable stage2;
    std::map<PathologyClass, std::array<double, 9>> class_deltas;  // stage2 - stage1
    std::array<double, 9> overall_delta{};
};

StagePairComparison compare_stages(const std::string& stage1_checkpoint,
                                   const std::string& stage2_checkpoint,
                                   const DatasetManifest& heldout, int eval_size);

// Aggregated across repetitions: per-stage stratified tables of per-repetition
// class means, plus per-class and overall deltas of the means.
struct ComparisonReport {
    StratifiedTable stage1;
    StratifiedTable stage2;
    std::map<PathologyClass, std::array<double, 9>> class_deltas;
    std::array<double, 9> overall_delta{};
};

struct PipelineReport {
    StageResult stage1;
    StageResult stage2;
    ComparisonReport comparison;
    PhaseTiming stage1_timing;  // pooled over all repetitions' epochs
    PhaseTiming stage2_timing;
    bool halve_warning = false;
};

// The full two-stage methodology: obtain stage-0 weights (external checkpoint
// or source-domain training), then per repetition fine-tune stage 1 on the
// general domain and stage 2 on the portable transfer half, aggregate, and
// compare both stages on the untouched held-out half. Writes the report
// directory (tables, epoch logs, checkpoints, run manifest) under out_dir.
PipelineReport run_pipeline(const ExperimentConfig& config, const std::string& out_dir);

// FNV-1a 64 of a file's bytes, hex-encoded; recorded in run manifests.
std::string file_hash_hex(const std::string& path);

inline constexpr const char* kToolVersion = "xseg 0.1.0";

}  // namespace xseg
