// Acceptance suite: one pass/fail line per criterion, nonzero exit when any
// criterion fails. Criteria marked with runtime budgets are timed.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "xseg/augment.hpp"
#include "xseg/checkpoint.hpp"
#include "xseg/cli.hpp"
#include "xseg/error.hpp"
#include "xseg/gradcheck.hpp"
#include "xseg/graph.hpp"
#include "xseg/metrics.hpp"
#include "xseg/pipeline.hpp"
#include "xseg/rng.hpp"
#include "xseg/synthetic.hpp"
#include "xseg/trainer.hpp"

using namespace xseg;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

void report(const std::string& name, bool pass, const std::string& detail) {
    std::printf("[%s] %s%s%s\n", pass ? "PASS" : "FAIL", name.c_str(),
                detail.empty() ? "" : " - ", detail.c_str());
    std::fflush(stdout);
    if (!pass) ++g_failures;
}

void run_criterion(const std::string& name, const std::function<std::pair<bool, std::string>()>& fn) {
    try {
        const auto [pass, detail] = fn();
        report(name, pass, detail);
    } catch (const std::exception& e) {
        report(name, false, std::string("exception: ") + e.what());
    }
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string file_bytes(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

int cli(const std::vector<std::string>& args) {
    std::vector<const char*> argv = {"xseg"};
    for (const std::string& a : args) argv.push_back(a.c_str());
    return run_cli(static_cast<int>(argv.size()), argv.data());
}

fs::path work_dir() {
    static const fs::path dir = [] {
        fs::path d = fs::temp_directory_path() / "xseg_acceptance";
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

// ---- criterion 1: gradient correctness -----------------------------------

std::pair<bool, std::string> gradient_correctness() {
    const auto t0 = std::chrono::steady_clock::now();
    double worst = 0.0;
    std::string worst_op;
    for (const std::string& op : grad_check_op_names()) {
        for (int trial = 0; trial < 10; ++trial) {
            const GradCheckReport r = grad_check(op, derive_seed(42, 0x7472, static_cast<std::uint64_t>(trial)));
            if (r.max_rel_error > worst) {
                worst = r.max_rel_error;
                worst_op = op;
            }
            if (!r.pass)
                return {false, op + " failed at trial " + std::to_string(trial) + " (rel err " +
                                   std::to_string(r.max_rel_error) + ")"};
        }
    }
    const double secs = seconds_since(t0);
    if (secs >= 60.0) return {false, "took " + std::to_string(secs) + "s (budget 60s)"};
    char buf[160];
    std::snprintf(buf, sizeof(buf), "9 ops x 10 trials, worst rel err %.2e (%s), %.1fs", worst,
                  worst_op.c_str(), secs);
    return {true, buf};
}

// ---- criterion 2: metric oracle equivalence -------------------------------

struct BruteMetrics {
    double acc, dice, jacc, prec, reca, f1, sens, spec;
};

BruteMetrics brute_force_metrics(const Tensor& pred, const Tensor& target, double thr) {
    long long tp = 0, tn = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < pred.data.size(); ++i) {
        const bool p = pred.data[i] >= thr;
        const bool t = target.data[i] != 0.0;
        tp += p && t;
        tn += !p && !t;
        fp += p && !t;
        fn += !p && t;
    }
    auto ratio = [](long long num, long long den) {
        return den > 0 ? static_cast<double>(num) / static_cast<double>(den) : 0.0;
    };
    BruteMetrics m{};
    m.acc = ratio(tp + tn, tp + tn + fp + fn);
    m.dice = 2 * tp + fp + fn > 0
                 ? 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn)
                 : 1.0;
    m.jacc = tp + fp + fn > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp + fn) : 1.0;
    const double pp = ratio(tp, tp + fp), rp = ratio(tp, tp + fn);
    const double pn = ratio(tn, tn + fn), rn = ratio(tn, tn + fp);
    const double f1p = pp + rp > 0 ? 2 * pp * rp / (pp + rp) : 0.0;
    const double f1n = pn + rn > 0 ? 2 * pn * rn / (pn + rn) : 0.0;
    m.prec = 0.5 * (pp + pn);
    m.reca = 0.5 * (rp + rn);
    m.f1 = 0.5 * (f1p + f1n);
    m.sens = rp;
    m.spec = rn;
    return m;
}

double brute_force_auc(const std::vector<double>& scores, const std::vector<unsigned char>& labels) {
    double wins = 0.0;
    long long pairs = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (!labels[i]) continue;
        for (std::size_t j = 0; j < scores.size(); ++j) {
            if (labels[j]) continue;
            ++pairs;
            if (scores[i] > scores[j])
                wins += 1.0;
            else if (scores[i] == scores[j])
                wins += 0.5;
        }
    }
    return pairs > 0 ? wins / static_cast<double>(pairs) : -1.0;
}

std::pair<bool, std::string> metric_oracle_equivalence() {
    Rng rng(2025);
    double max_auc_diff = 0.0;
    for (int trial = 0; trial < 500; ++trial) {
        Tensor pred({1, 1, 16, 16});
        Tensor target({1, 1, 16, 16});
        const bool tie_heavy = trial % 3 == 0;  // coarse grid forces score ties
        for (double& v : pred.data)
            v = tie_heavy ? static_cast<double>(rng.uniform_int(12)) / 12.0 : rng.uniform();
        for (double& v : target.data) v = rng.uniform() < 0.5 ? 0.0 : 1.0;
        target.data[0] = 1.0;
        target.data[1] = 0.0;

        const MetricsRecord r = compute_metrics(pred, target);
        const BruteMetrics b = brute_force_metrics(pred, target, 0.5);
        if (r.acc != b.acc || r.dice != b.dice || r.jacc != b.jacc || r.prec != b.prec ||
            r.reca != b.reca || r.f1 != b.f1 || r.sens != b.sens || r.spec != b.spec)
            return {false, "count-based mismatch at trial " + std::to_string(trial)};

        std::vector<unsigned char> labels(target.data.size());
        for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = target.data[i] != 0.0;
        const double auc_bf = brute_force_auc(pred.data, labels);
        if (!r.auc) return {false, "AUC undefined with both classes present"};
        max_auc_diff = std::max(max_auc_diff, std::abs(*r.auc - auc_bf));
        if (std::abs(*r.auc - auc_bf) >= 1e-9)
            return {false, "AUC mismatch at trial " + std::to_string(trial)};
    }
    char buf[120];
    std::snprintf(buf, sizeof(buf), "500 pairs exact, max AUC deviation %.2e", max_auc_diff);
    return {true, buf};
}

// ---- criterion 3: Eq.1 closed forms ---------------------------------------

std::pair<bool, std::string> eq1_closed_forms() {
    DiceConfig paper;
    DiceConfig standard;
    standard.form = DiceConfig::Form::Standard;
    const Tensor ones({1, 1, 2, 2}, 1.0);
    const Tensor zeros({1, 1, 2, 2}, 0.0);

    struct Case {
        double got, want;
        const char* what;
    } cases[] = {
        {smooth_dice_loss(ones, ones, paper), -1.0 / 9.0, "paper perfect match"},
        {smooth_dice_loss(zeros, ones, paper), 0.6, "paper disjoint"},
        {smooth_dice_loss(zeros, zeros, paper), -1.0, "paper both empty"},
        {smooth_dice_loss(zeros, zeros, standard), 0.0, "standard both empty"},
    };
    for (const Case& c : cases)
        if (std::abs(c.got - c.want) > 1e-12)
            return {false, std::string(c.what) + ": got " + std::to_string(c.got)};
    return {true, "all four closed forms exact to 1e-12"};
}

// ---- criterion 4: worked metrics example ----------------------------------

std::pair<bool, std::string> worked_metrics_example() {
    const Tensor target({4}, {1, 1, 0, 0});
    const Tensor pred({4}, {1, 0, 0, 0});
    const MetricsRecord r = compute_metrics(pred, target);
    struct Case {
        double got, want;
        const char* what;
    } cases[] = {{r.acc, 0.75, "ACC"},   {r.dice, 0.6667, "DICE"}, {r.jacc, 0.5, "JACC"},
                 {r.sens, 0.5, "SENS"},  {r.spec, 1.0, "SPEC"},    {r.prec, 0.8333, "PREC"},
                 {r.reca, 0.75, "RECA"}, {r.f1, 0.7333, "F1"}};
    for (const Case& c : cases)
        if (std::abs(c.got - c.want) > 1e-4)
            return {false, std::string(c.what) + " = " + std::to_string(c.got) + ", want " +
                               std::to_string(c.want)};
    return {true, "all eight hand-derived values within 1e-4"};
}

// ---- criterion 5: early stopping semantics --------------------------------

class ScriptedClient : public TrainerClient {
public:
    explicit ScriptedClient(std::vector<double> losses) : losses_(std::move(losses)) {}
    double train_epoch(int epoch) override {
        current_epoch_ = epoch;
        return 1.0;
    }
    double validate_epoch(int epoch) override { return losses_.at(static_cast<std::size_t>(epoch - 1)); }
    std::vector<std::uint8_t> snapshot_state() const override {
        std::vector<std::uint8_t> bytes(sizeof(int));
        std::memcpy(bytes.data(), &current_epoch_, sizeof(int));
        return bytes;
    }
    void restore_state(const std::vector<std::uint8_t>& bytes) override { restored_ = bytes; }
    void set_learning_rate(double) override {}
    const std::vector<std::uint8_t>& restored() const { return restored_; }

private:
    std::vector<double> losses_;
    int current_epoch_ = 0;
    std::vector<std::uint8_t> restored_;
};

std::pair<bool, std::string> early_stopping_semantics() {
    for (int patience : {1, 2, 20}) {
        const int improving = 5;
        std::vector<double> losses;
        for (int i = 0; i < improving; ++i) losses.push_back(10.0 - i);
        for (int i = 0; i < patience + 30; ++i) losses.push_back(losses[improving - 1]);

        TrainConfig tcfg;
        tcfg.max_epochs = 200;
        tcfg.early_stop_patience = patience;
        OptimizerConfig ocfg;
        ScriptedClient client(losses);
        const TrainResult r = run_training_loop(client, tcfg, ocfg);

        if (static_cast<int>(r.logs.size()) != improving + patience)
            return {false, "patience " + std::to_string(patience) + ": ran " +
                               std::to_string(r.logs.size()) + " epochs, want " +
                               std::to_string(improving + patience)};
        if (r.best_epoch != improving)
            return {false, "patience " + std::to_string(patience) + ": best epoch " +
                               std::to_string(r.best_epoch)};
        // restored snapshot must be the best epoch's snapshot, byte for byte
        std::vector<std::uint8_t> want(sizeof(int));
        std::memcpy(want.data(), &improving, sizeof(int));
        if (client.restored() != want)
            return {false, "patience " + std::to_string(patience) + ": restored wrong snapshot"};
    }
    return {true, "halt = last improvement + patience, best snapshot restored (patience 1, 2, 20)"};
}

// ---- criterion 6: overfit one sample --------------------------------------

std::pair<bool, std::string> overfit_one_sample() {
    const auto t0 = std::chrono::steady_clock::now();
    SynthSpec spec;
    spec.image_size = 64;
    spec.seed = 11;
    const Sample sample = render_synthetic_sample(spec, PathologyClass::Normal, 0);

    ModelConfig mc;
    mc.depth = 2;
    mc.base_width = 8;
    mc.input_size = 64;
    UNet model = UNet::build(mc, 3);

    TrainConfig tcfg;
    tcfg.max_epochs = 200;
    tcfg.early_stop_patience = 200;
    tcfg.batch_size = 1;
    tcfg.augment.rotation_probability = 0.0;
    tcfg.dice.form = DiceConfig::Form::Standard;
    tcfg.seed = 5;
    OptimizerConfig ocfg;
    ocfg.learning_rate = 0.005;
    ocfg.plateau_patience = 200;  // single-sample loss oscillates; let ADAM run at full rate

    std::vector<TrainSample> one = {{sample.image, sample.mask, sample.label}};
    const TrainResult r = train(model, one, one, tcfg, ocfg);
    const double secs = seconds_since(t0);
    if (secs >= 600.0) return {false, "took " + std::to_string(secs) + "s (budget 600s)"};
    if (!(r.best_val_loss < 0.05))
        return {false, "best standard dice loss " + std::to_string(r.best_val_loss) + " after " +
                           std::to_string(r.logs.size()) + " epochs"};
    char buf[120];
    std::snprintf(buf, sizeof(buf), "loss %.4f within %zu epochs, %.0fs", r.best_val_loss,
                  r.logs.size(), secs);
    return {true, buf};
}

// ---- criterion 7: transfer effect -----------------------------------------

void write_synth(const fs::path& dir, SynthSpec::Domain domain, int covid, int normal, int patho,
                 std::uint64_t seed) {
    SynthSpec spec;
    spec.domain = domain;
    spec.image_size = 64;
    spec.seed = seed;
    spec.count_per_class = {{PathologyClass::Covid, covid},
                            {PathologyClass::Normal, normal},
                            {PathologyClass::Pathological, patho}};
    generate_synthetic(spec, dir.string());
}

ExperimentConfig transfer_config(const fs::path& root) {
    ExperimentConfig cfg;
    cfg.repetitions = 5;
    cfg.master_seed = 7;
    cfg.model.base_width = 8;
    cfg.model.depth = 3;
    cfg.model.input_size = 64;
    cfg.source_manifest = (root / "source" / "manifest.txt").string();
    cfg.general_manifest = (root / "general" / "manifest.txt").string();
    cfg.portable_manifest = (root / "portable" / "manifest.txt").string();
    cfg.stage0.train.max_epochs = 30;
    cfg.stage0.train.early_stop_patience = 10;
    cfg.stage1.train.max_epochs = 40;
    cfg.stage2.train.max_epochs = 40;
    return cfg;
}

std::pair<bool, std::string> transfer_effect() {
    const auto t0 = std::chrono::steady_clock::now();
    const fs::path root = work_dir() / "transfer";
    write_synth(root / "source", SynthSpec::Domain::Source, 10, 10, 10, 101);
    write_synth(root / "general", SynthSpec::Domain::General, 20, 20, 20, 102);
    write_synth(root / "portable", SynthSpec::Domain::Portable, 27, 27, 26, 103);

    const ExperimentConfig cfg = transfer_config(root);
    const PipelineReport report = run_pipeline(cfg, (root / "run").string());

    const double s1 = report.comparison.stage1.overall[2].mean;  // DICE column
    const double s2 = report.comparison.stage2.overall[2].mean;
    const double delta = report.comparison.overall_delta[2];
    const double secs = seconds_since(t0);
    if (secs >= 2700.0) return {false, "took " + std::to_string(secs) + "s (budget 2700s)"};
    char buf[200];
    std::snprintf(buf, sizeof(buf),
                  "held-out DICE %.4f -> %.4f, delta %+.4f (need >= +0.02), 5 reps, %.0fs", s1, s2,
                  delta, secs);
    return {delta >= 0.02, buf};
}

// ---- criterion 8: pipeline determinism ------------------------------------

std::pair<bool, std::string> pipeline_determinism() {
    const fs::path root = work_dir() / "determinism";
    write_synth(root / "source", SynthSpec::Domain::Source, 5, 5, 5, 31);
    write_synth(root / "general", SynthSpec::Domain::General, 5, 5, 5, 32);
    write_synth(root / "portable", SynthSpec::Domain::Portable, 10, 10, 10, 33);

    ExperimentConfig cfg;
    cfg.repetitions = 2;
    cfg.master_seed = 77;
    cfg.model.base_width = 2;
    cfg.model.depth = 2;
    cfg.model.input_size = 16;
    cfg.source_manifest = (root / "source" / "manifest.txt").string();
    cfg.general_manifest = (root / "general" / "manifest.txt").string();
    cfg.portable_manifest = (root / "portable" / "manifest.txt").string();
    for (StageSettings* s : {&cfg.stage0, &cfg.stage1, &cfg.stage2}) {
        s->train.max_epochs = 3;
        s->train.batch_size = 4;
    }
    save_experiment_config(cfg, (root / "exp.json").string());

    for (const char* out : {"run_a", "run_b"}) {
        const int rc = cli({"pipeline", "--config", (root / "exp.json").string(), "--out",
                            (root / out).string()});
        if (rc != 0) return {false, std::string("cmd_pipeline exited ") + std::to_string(rc)};
    }
    for (const char* name : {"stage1_table.csv", "stage2_table.csv", "comparison_stage1.csv",
                             "comparison_stage2.csv", "comparison_delta.csv"}) {
        if (file_bytes(root / "run_a" / name) != file_bytes(root / "run_b" / name))
            return {false, std::string(name) + " differs between identical runs"};
    }
    return {true, "stage and comparison tables byte-identical across two cmd_pipeline runs"};
}

// ---- criterion 9: augmentation statistics ----------------------------------

std::pair<bool, std::string> augmentation_statistics() {
    AugmentConfig cfg;
    Tensor img({8, 8}, 0.5);
    Tensor mask({8, 8}, 0.0);
    int applied = 0;
    double lo = 1e9, hi = -1e9;
    for (int i = 0; i < 10000; ++i) {
        Rng rng(derive_seed(99, 0x616363, static_cast<std::uint64_t>(i)));
        Tensor im = img, mk = mask;
        const AugmentOutcome o = augment_sample(im, mk, cfg, rng);
        if (o.rotated) {
            ++applied;
            lo = std::min(lo, o.degrees);
            hi = std::max(hi, o.degrees);
        }
    }
    char buf[140];
    std::snprintf(buf, sizeof(buf), "rotated %d/10000 (need 7500 +- 150), angles [%.3f, %.3f]",
                  applied, lo, hi);
    const bool pass = applied >= 7350 && applied <= 7650 && lo >= -10.0 && hi <= 10.0;
    return {pass, buf};
}

// ---- criterion 10: checkpoint round trip -----------------------------------

std::pair<bool, std::string> checkpoint_round_trip() {
    const fs::path dir = work_dir() / "checkpoint";
    fs::create_directories(dir);
    ModelConfig mc;
    mc.base_width = 4;
    mc.depth = 2;
    mc.input_size = 32;
    UNet model = UNet::build(mc, 9);
    {
        Graph g;
        Rng rng(1);
        Tensor batch({2, 3, 32, 32});
        for (double& v : batch.data) v = rng.uniform();
        model.forward_train(g, batch);
    }
    const std::string p1 = (dir / "a.ckpt").string();
    const std::string p2 = (dir / "b.ckpt").string();
    save_checkpoint(model, p1, "stage1");
    UNet loaded = load_checkpoint(p1);
    save_checkpoint(loaded, p2, "stage1");
    if (file_bytes(p1) != file_bytes(p2)) return {false, "save -> load -> save changed bytes"};

    ModelConfig other = mc;
    other.depth = 3;
    other.input_size = 32;
    try {
        load_checkpoint(p1, other);
        return {false, "mismatched config accepted"};
    } catch (const CheckpointError& e) {
        if (e.kind != CheckpointError::Kind::ConfigMismatch)
            return {false, "wrong error kind for config mismatch"};
    }
    return {true, "byte-identical round trip; mismatched config rejected"};
}

// ---- criterion 11: timing harness -----------------------------------------

std::pair<bool, std::string> timing_harness() {
    const fs::path dir = work_dir() / "bench";
    fs::create_directories(dir / "repetitions" / "rep_001");
    fs::create_directories(dir / "repetitions" / "rep_002");
    {
        std::ofstream f(dir / "repetitions" / "rep_001" / "stage1_epochs.csv");
        f << "epoch,train_loss,val_loss,lr,train_ms,val_ms\n"
             "1,0.5,0.6,0.001,10.000,5.000\n"
             "2,0.4,0.5,0.001,20.000,5.000\n";
    }
    {
        std::ofstream f(dir / "repetitions" / "rep_002" / "stage1_epochs.csv");
        f << "epoch,train_loss,val_loss,lr,train_ms,val_ms\n"
             "1,0.5,0.6,0.001,30.000,5.000\n";
    }
    const int rc = cli({"bench", "--logs", dir.string(), "--out", (dir / "bench.csv").string()});
    if (rc != 0) return {false, "cmd_bench exited " + std::to_string(rc)};
    const std::string csv = file_bytes(dir / "bench.csv");
    // hand computation over the joined pool {10,20,30}: mean 20, sample std 10
    if (csv.find("stage1,training,20.000,10.000,3") == std::string::npos)
        return {false, "training row wrong: " + csv};
    if (csv.find("stage1,validation,5.000,0.000,3") == std::string::npos)
        return {false, "validation row wrong: " + csv};
    return {true, "pooled mean/std match hand computation exactly"};
}

}  // namespace

int main() {
    std::printf("xseg acceptance suite\n=====================\n");
    const auto t0 = std::chrono::steady_clock::now();

    run_criterion("gradient-correctness", gradient_correctness);
    run_criterion("metric-oracle-equivalence", metric_oracle_equivalence);
    run_criterion("eq1-closed-forms", eq1_closed_forms);
    run_criterion("worked-metrics-example", worked_metrics_example);
    run_criterion("early-stopping-semantics", early_stopping_semantics);
    run_criterion("overfit-one-sample", overfit_one_sample);
    run_criterion("transfer-effect", transfer_effect);
    run_criterion("pipeline-determinism", pipeline_determinism);
    run_criterion("augmentation-statistics", augmentation_statistics);
    run_criterion("checkpoint-round-trip", checkpoint_round_trip);
    run_criterion("timing-harness", timing_harness);

    std::printf("=====================\n%s (%d failure%s, %.0fs total)\n",
                g_failures == 0 ? "ALL CRITERIA PASS" : "CRITERIA FAILED", g_failures,
                g_failures == 1 ? "" : "s", seconds_since(t0));
    return g_failures == 0 ? 0 : 1;
}
