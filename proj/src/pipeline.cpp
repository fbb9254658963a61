#include "xseg/pipeline.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "xseg/checkpoint.hpp"
#include "xseg/error.hpp"

namespace xseg {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::uint64_t kSplitTag = 0x73706c6974;
constexpr std::uint64_t kTrainTag = 0x747261696e;
constexpr std::uint64_t kRepTag = 0x726570;
constexpr std::uint64_t kHalveTag = 0x68616c7665;
constexpr std::uint64_t kStage0Tag = 0x733074;
constexpr std::uint64_t kInitTag = 0x696e6974;

std::string fmt(double v, const char* spec = "%.6f") {
    char buf[64];
    std::snprintf(buf, sizeof(buf), spec, v);
    return buf;
}

void write_text_atomic(const fs::path& path, const std::string& content) {
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw DataError(DataError::Kind::MissingFile, "cannot write '" + path.string() + "'");
        f.write(content.data(), static_cast<std::streamsize>(content.size()));
    }
    fs::rename(tmp, path);
}

}  // namespace

void SplitFractions::validate() const {
    if (train <= 0.0 || val <= 0.0 || test <= 0.0)
        throw ConfigError("split fractions must all be positive");
    if (std::abs(train + val + test - 1.0) > 1e-9)
        throw ConfigError("split fractions must sum to 1");
}

void ExperimentConfig::validate() const {
    if (schema_version != 1)
        throw ConfigError("unsupported experiment schema version " + std::to_string(schema_version));
    if (repetitions < 1) throw ConfigError("repetitions must be >= 1");
    split.validate();
    model.validate();
    stage1.train.validate();
    stage1.optimizer.validate();
    stage2.train.validate();
    stage2.optimizer.validate();
    if (stage0_checkpoint.empty()) {
        stage0.train.validate();
        stage0.optimizer.validate();
    }
    if (general_manifest.empty() || portable_manifest.empty())
        throw ConfigError("general and portable dataset manifests are required");
}

namespace {

TrainConfig train_config_from_json(const json& j) {
    TrainConfig t;
    t.max_epochs = j.value("max_epochs", t.max_epochs);
    t.early_stop_patience = j.value("early_stop_patience", t.early_stop_patience);
    t.batch_size = j.value("batch_size", t.batch_size);
    t.augment.rotation_probability = j.value("rotation_probability", t.augment.rotation_probability);
    if (j.contains("rotation_range")) {
        t.augment.rotation_min_deg = j["rotation_range"].at(0).get<double>();
        t.augment.rotation_max_deg = j["rotation_range"].at(1).get<double>();
    }
    t.dice.lambda = j.value("dice_lambda", t.dice.lambda);
    const std::string form = j.value("dice_form", "paper-eq1");
    if (form == "paper-eq1") {
        t.dice.form = DiceConfig::Form::PaperEq1;
    } else if (form == "standard") {
        t.dice.form = DiceConfig::Form::Standard;
    } else {
        throw ConfigError("unknown dice_form '" + form + "' (expected paper-eq1|standard)");
    }
    return t;
}

json train_config_to_json(const TrainConfig& t) {
    return {{"max_epochs", t.max_epochs},
            {"early_stop_patience", t.early_stop_patience},
            {"batch_size", t.batch_size},
            {"rotation_probability", t.augment.rotation_probability},
            {"rotation_range", {t.augment.rotation_min_deg, t.augment.rotation_max_deg}},
            {"dice_lambda", t.dice.lambda},
            {"dice_form", t.dice.form == DiceConfig::Form::PaperEq1 ? "paper-eq1" : "standard"}};
}

OptimizerConfig optimizer_config_from_json(const json& j) {
    OptimizerConfig o;
    o.learning_rate = j.value("learning_rate", o.learning_rate);
    o.beta1 = j.value("beta1", o.beta1);
    o.beta2 = j.value("beta2", o.beta2);
    o.epsilon = j.value("epsilon", o.epsilon);
    o.plateau_factor = j.value("plateau_factor", o.plateau_factor);
    o.plateau_patience = j.value("plateau_patience", o.plateau_patience);
    o.min_lr = j.value("min_lr", o.min_lr);
    return o;
}

json optimizer_config_to_json(const OptimizerConfig& o) {
    return {{"learning_rate", o.learning_rate}, {"beta1", o.beta1},
            {"beta2", o.beta2},                 {"epsilon", o.epsilon},
            {"plateau_factor", o.plateau_factor}, {"plateau_patience", o.plateau_patience},
            {"min_lr", o.min_lr}};
}

StageSettings stage_from_json(const json& j) {
    StageSettings s;
    if (j.contains("train")) s.train = train_config_from_json(j["train"]);
    if (j.contains("optimizer")) s.optimizer = optimizer_config_from_json(j["optimizer"]);
    return s;
}

json stage_to_json(const StageSettings& s) {
    return {{"train", train_config_to_json(s.train)},
            {"optimizer", optimizer_config_to_json(s.optimizer)}};
}

}  // namespace

ExperimentConfig load_experiment_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DataError(DataError::Kind::MissingFile, "cannot open config '" + path + "'");
    json j;
    try {
        f >> j;
    } catch (const json::exception& e) {
        throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
    }
    try {
        ExperimentConfig c;
        c.schema_version = j.value("schema_version", 1);
        c.repetitions = j.value("repetitions", c.repetitions);
        c.master_seed = j.value("master_seed", c.master_seed);
        if (j.contains("split")) {
            c.split.train = j["split"].value("train", c.split.train);
            c.split.val = j["split"].value("val", c.split.val);
            c.split.test = j["split"].value("test", c.split.test);
        }
        if (j.contains("model")) {
            const json& m = j["model"];
            c.model.in_channels = m.value("in_channels", c.model.in_channels);
            c.model.out_channels = m.value("out_channels", c.model.out_channels);
            c.model.base_width = m.value("base_width", c.model.base_width);
            c.model.depth = m.value("depth", c.model.depth);
            c.model.input_size = m.value("input_size", c.model.input_size);
        }
        if (j.contains("datasets")) {
            const json& d = j["datasets"];
            c.source_manifest = d.value("source", "");
            c.general_manifest = d.value("general", "");
            c.portable_manifest = d.value("portable", "");
        }
        if (j.contains("stage0")) {
            c.stage0_checkpoint = j["stage0"].value("checkpoint", "");
            c.stage0 = stage_from_json(j["stage0"]);
        }
        if (j.contains("stage1")) c.stage1 = stage_from_json(j["stage1"]);
        if (j.contains("stage2")) c.stage2 = stage_from_json(j["stage2"]);
        c.validate();
        return c;
    } catch (const json::exception& e) {
        throw ConfigError("config '" + path + "' is malformed: " + e.what());
    }
}

void save_experiment_config(const ExperimentConfig& config, const std::string& path) {
    json j = {{"schema_version", config.schema_version},
              {"repetitions", config.repetitions},
              {"master_seed", config.master_seed},
              {"split", {{"train", config.split.train}, {"val", config.split.val}, {"test", config.split.test}}},
              {"model",
               {{"in_channels", config.model.in_channels},
                {"out_channels", config.model.out_channels},
                {"base_width", config.model.base_width},
                {"depth", config.model.depth},
                {"input_size", config.model.input_size}}},
              {"datasets",
               {{"source", config.source_manifest},
                {"general", config.general_manifest},
                {"portable", config.portable_manifest}}},
              {"stage1", stage_to_json(config.stage1)},
              {"stage2", stage_to_json(config.stage2)}};
    json s0 = stage_to_json(config.stage0);
    s0["checkpoint"] = config.stage0_checkpoint;
    j["stage0"] = s0;
    write_text_atomic(path, j.dump(2) + "\n");
}

namespace {

// Largest-remainder allocation of `target` picks across class group sizes.
std::vector<int> allocate_largest_remainder(const std::vector<int>& sizes,
                                            const std::vector<int>& available, double fraction,
                                            int target) {
    const std::size_t k = sizes.size();
    std::vector<int> out(k);
    std::vector<std::pair<double, std::size_t>> rema(k);
    int assigned = 0;
    for (std::size_t c = 0; c < k; ++c) {
        const double ideal = sizes[c] * fraction;
        out[c] = std::min(static_cast<int>(std::floor(ideal)), available[c]);
        rema[c] = {ideal - std::floor(ideal), c};
        assigned += out[c];
    }
    std::stable_sort(rema.begin(), rema.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    std::size_t i = 0;
    while (assigned < target && i < 4 * k) {  // round-robin over remainder order
        const std::size_t c = rema[i % k].second;
        if (out[c] < available[c]) {
            ++out[c];
            ++assigned;
        }
        ++i;
    }
    return out;
}

std::map<PathologyClass, std::vector<std::size_t>> group_by_class(const DatasetManifest& m) {
    std::map<PathologyClass, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < m.size(); ++i) groups[m.entries[i].label].push_back(i);
    return groups;
}

DatasetManifest manifest_subset(const DatasetManifest& src, const std::vector<std::size_t>& idx,
                                const std::string& provenance) {
    DatasetManifest out;
    out.version = src.version;
    out.provenance = provenance.empty() ? src.provenance : provenance;
    out.base_dir = src.base_dir;
    for (std::size_t i : idx) out.entries.push_back(src.entries[i]);
    return out;
}

}  // namespace

SplitResult split_manifest(const DatasetManifest& manifest, const SplitFractions& fractions,
                           std::uint64_t seed) {
    fractions.validate();
    const int n = static_cast<int>(manifest.size());
    if (n < 5) throw ConfigError("split needs at least 5 samples, got " + std::to_string(n));

    auto groups = group_by_class(manifest);
    Rng rng(derive_seed(seed, kSplitTag));
    std::vector<PathologyClass> classes;
    std::vector<std::vector<std::size_t>> members;
    for (auto& [cls, idx] : groups) {  // map iteration is ordered by enum value
        rng.shuffle(idx);
        classes.push_back(cls);
        members.push_back(idx);
    }

    const int train_target = static_cast<int>(std::floor(n * fractions.train));
    const int val_target = static_cast<int>(std::floor(n * fractions.val));
    std::vector<int> sizes;
    for (const auto& m : members) sizes.push_back(static_cast<int>(m.size()));

    const std::vector<int> train_c = allocate_largest_remainder(sizes, sizes, fractions.train, train_target);
    std::vector<int> avail(sizes.size());
    for (std::size_t c = 0; c < sizes.size(); ++c) avail[c] = sizes[c] - train_c[c];
    const std::vector<int> val_c = allocate_largest_remainder(sizes, avail, fractions.val, val_target);

    std::vector<std::size_t> train_idx, val_idx, test_idx;
    for (std::size_t c = 0; c < members.size(); ++c) {
        const int tc = train_c[c], vc = val_c[c];
        const int total = sizes[c];
        if (tc == 0 || vc == 0 || total - tc - vc <= 0)
            throw ConfigError("class '" + class_label_name(classes[c]) +
                              "' would be starved under stratification (" + std::to_string(total) +
                              " samples)");
        for (int i = 0; i < tc; ++i) train_idx.push_back(members[c][static_cast<std::size_t>(i)]);
        for (int i = tc; i < tc + vc; ++i) val_idx.push_back(members[c][static_cast<std::size_t>(i)]);
        for (int i = tc + vc; i < total; ++i) test_idx.push_back(members[c][static_cast<std::size_t>(i)]);
    }

    return {manifest_subset(manifest, train_idx, ""), manifest_subset(manifest, val_idx, ""),
            manifest_subset(manifest, test_idx, "")};
}

HalveResult halve_portable(const DatasetManifest& portable, std::uint64_t seed) {
    const int n = static_cast<int>(portable.size());
    if (n < 2 || n % 2 != 0)
        throw ConfigError("halving needs an even-sized manifest, got " + std::to_string(n));

    auto groups = group_by_class(portable);
    Rng rng(derive_seed(seed, kHalveTag));
    HalveResult result;
    std::vector<std::vector<std::size_t>> members;
    std::vector<int> sizes;
    for (auto& [cls, idx] : groups) {
        rng.shuffle(idx);
        result.odd_class_warning = result.odd_class_warning || idx.size() % 2 != 0;
        sizes.push_back(static_cast<int>(idx.size()));
        members.push_back(idx);
    }
    const std::vector<int> take = allocate_largest_remainder(sizes, sizes, 0.5, n / 2);

    std::vector<std::size_t> transfer_idx, heldout_idx;
    for (std::size_t c = 0; c < members.size(); ++c) {
        for (int i = 0; i < sizes[c]; ++i) {
            (i < take[c] ? transfer_idx : heldout_idx).push_back(members[c][static_cast<std::size_t>(i)]);
        }
    }
    result.transfer_half = manifest_subset(portable, transfer_idx, "portable-transfer");
    result.heldout_half = manifest_subset(portable, heldout_idx, "portable-heldout");
    return result;
}

Predictor model_predictor(const UNet& model) {
    return [&model](const Sample& s) {
        return model.forward_eval(
            sample_to_input(s.image, model.config().input_size, model.config().in_channels));
    };
}

std::vector<PerImageMetrics> evaluate_dataset(const Predictor& predict,
                                              const DatasetManifest& manifest, int eval_size,
                                              double threshold) {
    if (manifest.size() == 0) throw ConfigError("evaluation needs a non-empty manifest");
    std::vector<PerImageMetrics> out;
    out.reserve(manifest.size());
    MetricsConfig mcfg;
    mcfg.threshold = threshold;
    for (std::size_t i = 0; i < manifest.size(); ++i) {
        const Sample s = load_sample(manifest, i);
        const Tensor pred = predict(s);
        const Tensor target = mask_to_target(s.mask, eval_size);
        out.push_back({manifest.entries[i].image_path, s.label, compute_metrics(pred, target, mcfg)});
    }
    return out;
}

namespace {

std::vector<TrainSample> to_train_samples(const DatasetManifest& manifest) {
    std::vector<TrainSample> out;
    out.reserve(manifest.size());
    for (const Sample& s : load_all_samples(manifest)) out.push_back({s.image, s.mask, s.label});
    return out;
}

}  // namespace

namespace {

void check_disjoint_sets(const std::set<std::string>& a, const std::set<std::string>& b,
                         const std::string& what) {
    for (const std::string& p : a)
        if (b.count(p)) throw ConfigError("identity violation: '" + p + "' appears in " + what);
}

}  // namespace

std::set<std::string> manifest_image_paths(const DatasetManifest& manifest) {
    std::set<std::string> out;
    for (const ManifestEntry& e : manifest.entries)
        out.insert(fs::weakly_canonical(manifest.base_dir / e.image_path).string());
    return out;
}

RepetitionResult run_stage_from(UNet model, const DatasetManifest& domain,
                                const StageSettings& settings, const SplitFractions& fractions,
                                std::uint64_t rep_seed, const std::string& out_checkpoint,
                                const std::string& stage_id,
                                const std::set<std::string>* forbidden_paths) {
    if (domain.provenance == "portable-heldout")
        throw ConfigError("refusing to train on the held-out half (provenance portable-heldout)");

    const SplitResult split = split_manifest(domain, fractions, derive_seed(rep_seed, kSplitTag));
    const auto train_paths = manifest_image_paths(split.train);
    const auto val_paths = manifest_image_paths(split.val);
    const auto test_paths = manifest_image_paths(split.test);
    check_disjoint_sets(train_paths, val_paths, "both train and validation splits");
    check_disjoint_sets(train_paths, test_paths, "both train and test splits");
    check_disjoint_sets(val_paths, test_paths, "both validation and test splits");
    if (forbidden_paths) {
        for (const auto* paths : {&train_paths, &val_paths, &test_paths})
            check_disjoint_sets(*paths, *forbidden_paths, "both a " + stage_id + " split and the held-out half");
    }

    TrainConfig tcfg = settings.train;
    tcfg.seed = derive_seed(rep_seed, kTrainTag);
    const TrainResult tr =
        train(model, to_train_samples(split.train), to_train_samples(split.val), tcfg, settings.optimizer);

    save_checkpoint(model, out_checkpoint, stage_id);

    const auto per_image =
        evaluate_dataset(model_predictor(model), split.test, model.config().input_size);
    std::vector<MetricsRecord> records;
    for (const PerImageMetrics& p : per_image) records.push_back(p.record);

    RepetitionResult result;
    result.logs = tr.logs;
    result.best_epoch = tr.best_epoch;
    result.test_metrics = mean_records(records);
    result.checkpoint_path = out_checkpoint;
    return result;
}

RepetitionResult run_stage(const std::string& initial_checkpoint, const DatasetManifest& domain,
                           const ModelConfig& model_config, const StageSettings& settings,
                           const SplitFractions& fractions, std::uint64_t rep_seed,
                           const std::string& out_checkpoint, const std::string& stage_id,
                           const std::set<std::string>* forbidden_paths) {
    if (domain.provenance == "portable-heldout")
        throw ConfigError("refusing to train on the held-out half (provenance portable-heldout)");
    return run_stage_from(load_checkpoint(initial_checkpoint, model_config), domain, settings,
                          fractions, rep_seed, out_checkpoint, stage_id, forbidden_paths);
}

namespace {

StratifiedTable stratify_per_image(const std::vector<PerImageMetrics>& per_image) {
    std::vector<MetricsRecord> records;
    std::vector<PathologyClass> labels;
    for (const PerImageMetrics& p : per_image) {
        records.push_back(p.record);
        labels.push_back(p.label);
    }
    return aggregate(records, labels);
}


std::array<double, 9> delta_of(const MetricTable& a, const MetricTable& b) {  // a - b
    std::array<double, 9> out{};
    for (std::size_t i = 0; i < 9; ++i) out[i] = a[i].mean - b[i].mean;
    return out;
}

}  // namespace

StagePairComparison compare_stages(const std::string& stage1_checkpoint,
                                   const std::string& stage2_checkpoint,
                                   const DatasetManifest& heldout, int eval_size) {
    if (heldout.provenance != "portable-heldout")
        throw ConfigError("stage comparison requires the held-out half (provenance portable-heldout), got '" +
                          heldout.provenance + "'");
    const UNet m1 = load_checkpoint(stage1_checkpoint);
    const UNet m2 = load_checkpoint(stage2_checkpoint);
    if (!(m1.config() == m2.config()))
        throw ConfigError("stage checkpoints have different model configs");

    StagePairComparison cmp;
    const auto e1 = evaluate_dataset(model_predictor(m1), heldout, eval_size);
    const auto e2 = evaluate_dataset(model_predictor(m2), heldout, eval_size);
    cmp.stage1 = stratify_per_image(e1);
    cmp.stage2 = stratify_per_image(e2);
    for (const auto& [cls, table] : cmp.stage2.per_class) {
        if (cmp.stage1.per_class.count(cls))
            cmp.class_deltas[cls] = delta_of(table, cmp.stage1.per_class.at(cls));
    }
    cmp.overall_delta = delta_of(cmp.stage2.overall, cmp.stage1.overall);
    return cmp;
}

namespace {

std::string timestamp_utc() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    char buf[32];
    std::tm tm_utc;
    gmtime_r(&now, &tm_utc);
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
    return buf;
}

const char* kMetricCsvNames[9] = {"acc", "auc", "dice", "jacc", "prec", "reca", "f1", "sens", "spec"};

std::string stage_table_csv(const MetricTable& table) {
    std::string csv = "stat";
    for (const char* name : kMetricNames) csv += std::string(",") + name;
    csv += "\nmean";
    for (const MeanStd& m : table) csv += "," + fmt(m.mean);
    csv += "\nstd";
    for (const MeanStd& m : table) csv += "," + fmt(m.std);
    csv += "\n";
    return csv;
}

void append_table_row(std::string& csv, const std::string& row_name, const MetricTable& t) {
    csv += row_name;
    for (const MeanStd& m : t) csv += "," + fmt(m.mean) + "," + fmt(m.std);
    csv += "\n";
}

std::string deltas_csv(const ComparisonReport& cmp) {
    std::string csv = "class";
    for (const char* name : kMetricCsvNames) csv += std::string(",") + name;
    csv += "\n";
    for (const auto& [cls, d] : cmp.class_deltas) {
        csv += class_label_name(cls);
        for (double v : d) csv += "," + fmt(v);
        csv += "\n";
    }
    csv += "overall";
    for (double v : cmp.overall_delta) csv += "," + fmt(v);
    csv += "\n";
    return csv;
}

std::string epochs_csv(const std::vector<EpochLog>& logs) {
    std::string csv = "epoch,train_loss,val_loss,lr,train_ms,val_ms\n";
    for (const EpochLog& log : logs) {
        csv += std::to_string(log.epoch) + "," + fmt(log.train_loss, "%.9f") + "," +
               fmt(log.val_loss, "%.9f") + "," + fmt(log.lr, "%.9g") + "," +
               fmt(log.train_ms, "%.3f") + "," + fmt(log.val_ms, "%.3f") + "\n";
    }
    return csv;
}

std::string repetitions_csv(const StageResult& stage) {
    std::string csv = "repetition";
    for (const char* name : kMetricCsvNames) csv += std::string(",") + name;
    csv += ",best_epoch,epochs\n";
    for (std::size_t r = 0; r < stage.repetitions.size(); ++r) {
        const RepetitionResult& rep = stage.repetitions[r];
        csv += std::to_string(r + 1);
        const auto vals = metric_values(rep.test_metrics);
        for (const auto& v : vals) csv += "," + (v ? fmt(*v) : std::string("nan"));
        csv += "," + std::to_string(rep.best_epoch) + "," + std::to_string(rep.logs.size()) + "\n";
    }
    return csv;
}

std::string timing_csv(const PhaseTiming& s1, const PhaseTiming& s2) {
    std::string csv = "phase,stage1_mean_ms,stage1_std_ms,stage2_mean_ms,stage2_std_ms\n";
    csv += "training," + fmt(s1.train_ms.mean, "%.3f") + "," + fmt(s1.train_ms.std, "%.3f") + "," +
           fmt(s2.train_ms.mean, "%.3f") + "," + fmt(s2.train_ms.std, "%.3f") + "\n";
    csv += "validation," + fmt(s1.val_ms.mean, "%.3f") + "," + fmt(s1.val_ms.std, "%.3f") + "," +
           fmt(s2.val_ms.mean, "%.3f") + "," + fmt(s2.val_ms.std, "%.3f") + "\n";
    return csv;
}

void save_manifest_absolute(const DatasetManifest& m, const fs::path& path) {
    DatasetManifest abs = m;
    for (ManifestEntry& e : abs.entries) {
        e.image_path = fs::weakly_canonical(m.base_dir / e.image_path).string();
        e.mask_path = fs::weakly_canonical(m.base_dir / e.mask_path).string();
    }
    abs.base_dir = path.parent_path();
    save_manifest(abs, path.string());
}

}  // namespace

std::string stratified_table_csv(const StratifiedTable& table) {
    std::string csv = "class";
    for (const char* name : kMetricCsvNames)
        csv += std::string(",") + name + "_mean," + name + "_std";
    csv += "\n";
    for (const auto& [cls, t] : table.per_class) append_table_row(csv, class_label_name(cls), t);
    append_table_row(csv, "overall", table.overall);
    return csv;
}

namespace {

json table_to_json(const MetricTable& t) {
    json out;
    for (std::size_t i = 0; i < kMetricNames.size(); ++i)
        out[kMetricNames[i]] = {{"mean", t[i].mean}, {"std", t[i].std}, {"n", t[i].n}};
    return out;
}

json stratified_to_json(const StratifiedTable& table) {
    json out;
    for (const auto& [cls, t] : table.per_class) out[class_label_name(cls)] = table_to_json(t);
    out["overall"] = table_to_json(table.overall);
    return out;
}

}  // namespace

std::string stratified_table_json(const StratifiedTable& table) {
    return stratified_to_json(table).dump(2) + "\n";
}

void SingleStageConfig::validate() const {
    if (schema_version != 1)
        throw ConfigError("unsupported stage config schema version " + std::to_string(schema_version));
    model.validate();
    split.validate();
    stage.train.validate();
    stage.optimizer.validate();
}

SingleStageConfig load_single_stage_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DataError(DataError::Kind::MissingFile, "cannot open config '" + path + "'");
    json j;
    try {
        f >> j;
    } catch (const json::exception& e) {
        throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
    }
    try {
        SingleStageConfig c;
        c.schema_version = j.value("schema_version", 1);
        c.seed = j.value("seed", c.seed);
        if (j.contains("model")) {
            const json& m = j["model"];
            c.model.in_channels = m.value("in_channels", c.model.in_channels);
            c.model.out_channels = m.value("out_channels", c.model.out_channels);
            c.model.base_width = m.value("base_width", c.model.base_width);
            c.model.depth = m.value("depth", c.model.depth);
            c.model.input_size = m.value("input_size", c.model.input_size);
        }
        if (j.contains("split")) {
            c.split.train = j["split"].value("train", c.split.train);
            c.split.val = j["split"].value("val", c.split.val);
            c.split.test = j["split"].value("test", c.split.test);
        }
        if (j.contains("train")) c.stage.train = train_config_from_json(j["train"]);
        if (j.contains("optimizer")) c.stage.optimizer = optimizer_config_from_json(j["optimizer"]);
        c.validate();
        return c;
    } catch (const json::exception& e) {
        throw ConfigError("config '" + path + "' is malformed: " + e.what());
    }
}

void save_single_stage_config(const SingleStageConfig& config, const std::string& path) {
    const json j = {{"schema_version", config.schema_version},
                    {"seed", config.seed},
                    {"model",
                     {{"in_channels", config.model.in_channels},
                      {"out_channels", config.model.out_channels},
                      {"base_width", config.model.base_width},
                      {"depth", config.model.depth},
                      {"input_size", config.model.input_size}}},
                    {"split",
                     {{"train", config.split.train},
                      {"val", config.split.val},
                      {"test", config.split.test}}},
                    {"train", train_config_to_json(config.stage.train)},
                    {"optimizer", optimizer_config_to_json(config.stage.optimizer)}};
    write_text_atomic(path, j.dump(2) + "\n");
}

std::string file_hash_hex(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError(DataError::Kind::MissingFile, "cannot hash missing file '" + path + "'");
    std::uint64_t h = 1469598103934665603ULL;
    char c;
    while (f.get(c)) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

PipelineReport run_pipeline(const ExperimentConfig& config, const std::string& out_dir) {
    config.validate();
    fs::create_directories(out_dir);
    const std::string started = timestamp_utc();

    // resolve every dataset up front
    const DatasetManifest general = load_manifest(config.general_manifest);
    const DatasetManifest portable = load_manifest(config.portable_manifest);

    // stage 0 weights: external checkpoint or source-domain training
    std::string stage0_path;
    if (!config.stage0_checkpoint.empty()) {
        load_checkpoint(config.stage0_checkpoint, config.model);
        stage0_path = config.stage0_checkpoint;
        std::printf("[pipeline] stage0: using external checkpoint %s\n", stage0_path.c_str());
    } else {
        if (config.source_manifest.empty())
            throw ConfigError(
                "stage 0 needs either stage0.checkpoint or datasets.source to train the source model");
        const DatasetManifest source = load_manifest(config.source_manifest);
        const SplitResult ssp =
            split_manifest(source, config.split, derive_seed(config.master_seed, kStage0Tag, 1));
        UNet model = UNet::build(config.model, derive_seed(config.master_seed, kInitTag));
        TrainConfig tcfg = config.stage0.train;
        tcfg.seed = derive_seed(config.master_seed, kStage0Tag, 2);
        const TrainResult tr = train(model, to_train_samples(ssp.train), to_train_samples(ssp.val),
                                     tcfg, config.stage0.optimizer);
        stage0_path = (fs::path(out_dir) / "stage0.ckpt").string();
        save_checkpoint(model, stage0_path, "stage0-source");
        std::printf("[pipeline] stage0: trained on source domain, %zu epochs, best %d\n",
                    tr.logs.size(), tr.best_epoch);
    }

    const HalveResult halves = halve_portable(portable, config.master_seed);
    if (halves.odd_class_warning)
        std::printf("[pipeline] warning: odd class counts in portable dataset, halves assigned by largest remainder\n");
    save_manifest_absolute(halves.transfer_half, fs::path(out_dir) / "portable_transfer.txt");
    save_manifest_absolute(halves.heldout_half, fs::path(out_dir) / "portable_heldout.txt");
    const std::set<std::string> heldout_paths = manifest_image_paths(halves.heldout_half);

    PipelineReport report;
    report.halve_warning = halves.odd_class_warning;
    report.stage1.stage_id = "stage1";
    report.stage2.stage_id = "stage2";

    std::map<PathologyClass, std::vector<MetricsRecord>> s1_class, s2_class;
    std::vector<MetricsRecord> s1_overall, s2_overall;

    for (int r = 0; r < config.repetitions; ++r) {
        const std::uint64_t rep_seed = derive_seed(config.master_seed, kRepTag, static_cast<std::uint64_t>(r));
        char rep_name[32];
        std::snprintf(rep_name, sizeof(rep_name), "rep_%03d", r + 1);
        const fs::path rep_dir = fs::path(out_dir) / "repetitions" / rep_name;
        fs::create_directories(rep_dir);

        RepetitionResult s1 = run_stage(stage0_path, general, config.model, config.stage1,
                                        config.split, derive_seed(rep_seed, 1),
                                        (rep_dir / "stage1_best.ckpt").string(), "stage1",
                                        &heldout_paths);
        RepetitionResult s2 = run_stage(s1.checkpoint_path, halves.transfer_half, config.model,
                                        config.stage2, config.split, derive_seed(rep_seed, 2),
                                        (rep_dir / "stage2_best.ckpt").string(), "stage2",
                                        &heldout_paths);

        write_text_atomic(rep_dir / "stage1_epochs.csv", epochs_csv(s1.logs));
        write_text_atomic(rep_dir / "stage2_epochs.csv", epochs_csv(s2.logs));

        // held-out evaluation of this repetition's pair
        const UNet m1 = load_checkpoint(s1.checkpoint_path);
        const UNet m2 = load_checkpoint(s2.checkpoint_path);
        const auto e1 = evaluate_dataset(model_predictor(m1), halves.heldout_half, config.model.input_size);
        const auto e2 = evaluate_dataset(model_predictor(m2), halves.heldout_half, config.model.input_size);
        for (PathologyClass cls : all_classes()) {
            std::vector<MetricsRecord> r1, r2;
            for (const auto& p : e1)
                if (p.label == cls) r1.push_back(p.record);
            for (const auto& p : e2)
                if (p.label == cls) r2.push_back(p.record);
            if (!r1.empty()) s1_class[cls].push_back(mean_records(r1));
            if (!r2.empty()) s2_class[cls].push_back(mean_records(r2));
        }
        {
            std::vector<MetricsRecord> r1, r2;
            for (const auto& p : e1) r1.push_back(p.record);
            for (const auto& p : e2) r2.push_back(p.record);
            s1_overall.push_back(mean_records(r1));
            s2_overall.push_back(mean_records(r2));
        }

        std::printf("[pipeline] rep %d/%d: stage1 %zu epochs (dice %.4f), stage2 %zu epochs (dice %.4f), held-out dice %.4f -> %.4f\n",
                    r + 1, config.repetitions, s1.logs.size(), s1.test_metrics.dice, s2.logs.size(),
                    s2.test_metrics.dice, s1_overall.back().dice, s2_overall.back().dice);
        std::fflush(stdout);

        report.stage1.repetitions.push_back(std::move(s1));
        report.stage2.repetitions.push_back(std::move(s2));
    }

    // Tables 3/4-style aggregation over per-repetition test records
    std::vector<MetricsRecord> s1_recs, s2_recs;
    std::vector<EpochLog> s1_logs, s2_logs;
    for (const RepetitionResult& r : report.stage1.repetitions) {
        s1_recs.push_back(r.test_metrics);
        s1_logs.insert(s1_logs.end(), r.logs.begin(), r.logs.end());
    }
    for (const RepetitionResult& r : report.stage2.repetitions) {
        s2_recs.push_back(r.test_metrics);
        s2_logs.insert(s2_logs.end(), r.logs.begin(), r.logs.end());
    }
    report.stage1.aggregated = aggregate_records(s1_recs);
    report.stage2.aggregated = aggregate_records(s2_recs);
    report.stage1_timing = bench(s1_logs);
    report.stage2_timing = bench(s2_logs);

    for (PathologyClass cls : all_classes()) {
        if (!s1_class[cls].empty()) report.comparison.stage1.per_class[cls] = aggregate_records(s1_class[cls]);
        if (!s2_class[cls].empty()) report.comparison.stage2.per_class[cls] = aggregate_records(s2_class[cls]);
    }
    report.comparison.stage1.overall = aggregate_records(s1_overall);
    report.comparison.stage2.overall = aggregate_records(s2_overall);
    for (const auto& [cls, table] : report.comparison.stage2.per_class)
        if (report.comparison.stage1.per_class.count(cls))
            report.comparison.class_deltas[cls] =
                delta_of(table, report.comparison.stage1.per_class.at(cls));
    report.comparison.overall_delta =
        delta_of(report.comparison.stage2.overall, report.comparison.stage1.overall);

    // report directory
    write_text_atomic(fs::path(out_dir) / "stage1_table.csv", stage_table_csv(report.stage1.aggregated));
    write_text_atomic(fs::path(out_dir) / "stage2_table.csv", stage_table_csv(report.stage2.aggregated));
    write_text_atomic(fs::path(out_dir) / "stage1_repetitions.csv", repetitions_csv(report.stage1));
    write_text_atomic(fs::path(out_dir) / "stage2_repetitions.csv", repetitions_csv(report.stage2));
    write_text_atomic(fs::path(out_dir) / "comparison_stage1.csv", stratified_table_csv(report.comparison.stage1));
    write_text_atomic(fs::path(out_dir) / "comparison_stage2.csv", stratified_table_csv(report.comparison.stage2));
    write_text_atomic(fs::path(out_dir) / "comparison_delta.csv", deltas_csv(report.comparison));
    write_text_atomic(fs::path(out_dir) / "timing_summary.csv",
                      timing_csv(report.stage1_timing, report.stage2_timing));
    {
        json tables = {{"stage1", table_to_json(report.stage1.aggregated)},
                       {"stage2", table_to_json(report.stage2.aggregated)},
                       {"comparison_stage1", stratified_to_json(report.comparison.stage1)},
                       {"comparison_stage2", stratified_to_json(report.comparison.stage2)}};
        json deltas;
        for (const auto& [cls, d] : report.comparison.class_deltas) {
            json row;
            for (std::size_t i = 0; i < kMetricNames.size(); ++i) row[kMetricNames[i]] = d[i];
            deltas[class_label_name(cls)] = row;
        }
        json overall;
        for (std::size_t i = 0; i < kMetricNames.size(); ++i)
            overall[kMetricNames[i]] = report.comparison.overall_delta[i];
        deltas["overall"] = overall;
        tables["comparison_delta"] = deltas;
        write_text_atomic(fs::path(out_dir) / "tables.json", tables.dump(2) + "\n");
    }
    save_experiment_config(config, (fs::path(out_dir) / "config.json").string());

    json manifest = {{"tool_version", kToolVersion},
                     {"master_seed", config.master_seed},
                     {"config_hash", file_hash_hex((fs::path(out_dir) / "config.json").string())},
                     {"started", started},
                     {"finished", timestamp_utc()},
                     {"outputs",
                      {"stage1_table.csv", "stage2_table.csv", "stage1_repetitions.csv",
                       "stage2_repetitions.csv", "comparison_stage1.csv", "comparison_stage2.csv",
                       "comparison_delta.csv", "tables.json", "timing_summary.csv",
                       "portable_transfer.txt", "portable_heldout.txt", "repetitions/"}}};
    write_text_atomic(fs::path(out_dir) / "run_manifest.json", manifest.dump(2) + "\n");

    return report;
}

}  // namespace xseg
