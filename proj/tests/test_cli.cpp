#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "xseg/checkpoint.hpp"
#include "xseg/cli.hpp"
#include "xseg/graph.hpp"
#include "xseg/kernels.hpp"
#include "xseg/pipeline.hpp"
#include "xseg/report.hpp"
#include "xseg/rng.hpp"
#include "xseg/synthetic.hpp"

using namespace xseg;
namespace fs = std::filesystem;

namespace {

int cli(const std::vector<std::string>& args) {
    std::vector<const char*> argv = {"xseg"};
    for (const std::string& a : args) argv.push_back(a.c_str());
    return run_cli(static_cast<int>(argv.size()), argv.data());
}

fs::path temp_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string file_bytes(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

void write_tiny_synth_spec(const fs::path& path, SynthSpec::Domain domain, int per_class,
                           std::uint64_t seed) {
    SynthSpec spec;
    spec.domain = domain;
    spec.image_size = 16;
    spec.seed = seed;
    spec.count_per_class = {{PathologyClass::Covid, per_class},
                            {PathologyClass::Normal, per_class},
                            {PathologyClass::Pathological, per_class}};
    save_synth_spec(spec, path.string());
}

SingleStageConfig tiny_stage_config(std::uint64_t seed) {
    SingleStageConfig c;
    c.seed = seed;
    c.model.base_width = 2;
    c.model.depth = 2;
    c.model.input_size = 16;
    c.stage.train.max_epochs = 2;
    c.stage.train.batch_size = 4;
    return c;
}

}  // namespace

TEST_CASE("cli usage errors exit 2") {
    CHECK(cli({}) == 2);
    CHECK(cli({"synth"}) == 2);               // missing required options
    CHECK(cli({"no_such_command"}) == 2);
    CHECK(cli({"--help"}) == 0);
}

TEST_CASE("XSEG_THREADS caps the kernel thread count") {
    const int before = kernels::thread_count();
    setenv("XSEG_THREADS", "1", 1);
    kernels::configure_threads_from_env();
    CHECK(kernels::thread_count() == 1);
    setenv("XSEG_THREADS", std::to_string(before).c_str(), 1);
    kernels::configure_threads_from_env();
    CHECK(kernels::thread_count() == before);
    unsetenv("XSEG_THREADS");
}

TEST_CASE("cli synth: refusal and force semantics") {
    const fs::path dir = temp_dir("xseg_cli_synth");
    const fs::path spec = dir / "spec.json";
    write_tiny_synth_spec(spec, SynthSpec::Domain::General, 2, 3);

    CHECK(cli({"synth", "--spec", spec.string(), "--out", (dir / "data").string()}) == 0);
    CHECK(fs::exists(dir / "data" / "manifest.txt"));
    CHECK(fs::exists(dir / "data" / "run_manifest.json"));

    CHECK(cli({"synth", "--spec", spec.string(), "--out", (dir / "data").string()}) == 3);
    CHECK(cli({"synth", "--spec", spec.string(), "--out", (dir / "data").string(), "--force"}) == 0);

    std::ofstream bad(dir / "bad.json");
    bad << "{ nope";
    bad.close();
    CHECK(cli({"synth", "--spec", (dir / "bad.json").string(), "--out", (dir / "x").string()}) == 2);
    fs::remove_all(dir);
}

TEST_CASE("cli train: artifacts, determinism, init mismatch, numeric abort") {
    const fs::path dir = temp_dir("xseg_cli_train");
    write_tiny_synth_spec(dir / "spec.json", SynthSpec::Domain::General, 5, 4);
    REQUIRE(cli({"synth", "--spec", (dir / "spec.json").string(), "--out", (dir / "data").string()}) == 0);

    save_single_stage_config(tiny_stage_config(11), (dir / "train.json").string());
    const std::string manifest = (dir / "data" / "manifest.txt").string();

    SUBCASE("writes checkpoint, logs, metrics; identical bytes across runs") {
        REQUIRE(cli({"train", "--config", (dir / "train.json").string(), "--data", manifest,
                     "--out", (dir / "out1").string()}) == 0);
        CHECK(fs::exists(dir / "out1" / "rep_001" / "best.ckpt"));
        CHECK(fs::exists(dir / "out1" / "rep_001" / "epochs.csv"));
        CHECK(fs::exists(dir / "out1" / "metrics.csv"));
        CHECK(fs::exists(dir / "out1" / "run_manifest.json"));

        REQUIRE(cli({"train", "--config", (dir / "train.json").string(), "--data", manifest,
                     "--out", (dir / "out2").string()}) == 0);
        CHECK(file_bytes(dir / "out1" / "metrics.csv") == file_bytes(dir / "out2" / "metrics.csv"));
        CHECK(file_bytes(dir / "out1" / "rep_001" / "best.ckpt") ==
              file_bytes(dir / "out2" / "rep_001" / "best.ckpt"));
    }

    SUBCASE("mismatched init checkpoint exits 2") {
        ModelConfig other;
        other.base_width = 4;
        other.depth = 1;
        other.input_size = 16;
        UNet model = UNet::build(other, 1);
        save_checkpoint(model, (dir / "other.ckpt").string(), "x");
        CHECK(cli({"train", "--config", (dir / "train.json").string(), "--data", manifest, "--init",
                   (dir / "other.ckpt").string(), "--out", (dir / "out3").string()}) == 2);
    }

    SUBCASE("non-finite loss aborts with exit 4") {
        ModelConfig mc = tiny_stage_config(0).model;
        UNet model = UNet::build(mc, 1);
        // a NaN in the head reaches the loss through sigmoid (relu would
        // flush a NaN in an inner layer to zero)
        model.named_parameters().back().tensor->data[0] = std::nan("");
        save_checkpoint(model, (dir / "nan.ckpt").string(), "x");
        CHECK(cli({"train", "--config", (dir / "train.json").string(), "--data", manifest, "--init",
                   (dir / "nan.ckpt").string(), "--out", (dir / "out4").string()}) == 4);
    }
    fs::remove_all(dir);
}

TEST_CASE("cli gradcheck surfaces") {
    CHECK(cli({"gradcheck", "--trials", "1"}) == 0);
    CHECK(cli({"gradcheck", "--ops", "conv2d", "--trials", "1"}) == 0);
    CHECK(cli({"gradcheck", "--ops", "smooth_dice_loss", "--trials", "1"}) == 0);
    CHECK(cli({"gradcheck", "--ops", "conv2d", "--trials", "1", "--inject-bug"}) == 1);
    CHECK(cli({"gradcheck", "--ops", "not_an_op", "--trials", "1"}) == 2);
}

TEST_CASE("cli bench pools fixture logs exactly") {
    const fs::path dir = temp_dir("xseg_cli_bench");
    fs::create_directories(dir / "repetitions" / "rep_001");
    fs::create_directories(dir / "repetitions" / "rep_002");
    std::ofstream f1(dir / "repetitions" / "rep_001" / "stage1_epochs.csv");
    f1 << "epoch,train_loss,val_loss,lr,train_ms,val_ms\n"
          "1,0.5,0.6,0.001,10.000,1.000\n"
          "2,0.4,0.5,0.001,20.000,2.000\n";
    f1.close();
    std::ofstream f2(dir / "repetitions" / "rep_002" / "stage1_epochs.csv");
    f2 << "epoch,train_loss,val_loss,lr,train_ms,val_ms\n"
          "1,0.5,0.6,0.001,30.000,3.000\n";
    f2.close();

    REQUIRE(cli({"bench", "--logs", dir.string(), "--out", (dir / "bench.csv").string()}) == 0);
    const std::string csv = file_bytes(dir / "bench.csv");
    // epochs pooled across repetitions into one group: times 10,20,30 -> mean 20, std 10
    CHECK(csv.find("stage1,training,20.000,10.000,3") != std::string::npos);
    CHECK(csv.find("stage1,validation,2.000,1.000,3") != std::string::npos);

    CHECK(cli({"bench", "--logs", (dir / "missing").string()}) == 2);
    fs::remove_all(dir);
}

TEST_CASE("cli pipeline, eval and report work end to end at desk scale") {
    const fs::path dir = temp_dir("xseg_cli_pipe");
    write_tiny_synth_spec(dir / "source.json", SynthSpec::Domain::Source, 5, 31);
    write_tiny_synth_spec(dir / "general.json", SynthSpec::Domain::General, 5, 32);
    write_tiny_synth_spec(dir / "portable.json", SynthSpec::Domain::Portable, 10, 33);
    REQUIRE(cli({"synth", "--spec", (dir / "source.json").string(), "--out", (dir / "source").string()}) == 0);
    REQUIRE(cli({"synth", "--spec", (dir / "general.json").string(), "--out", (dir / "general").string()}) == 0);
    REQUIRE(cli({"synth", "--spec", (dir / "portable.json").string(), "--out", (dir / "portable").string()}) == 0);

    ExperimentConfig cfg;
    cfg.repetitions = 2;
    cfg.master_seed = 7;
    cfg.model.base_width = 2;
    cfg.model.depth = 2;
    cfg.model.input_size = 16;
    cfg.source_manifest = (dir / "source" / "manifest.txt").string();
    cfg.general_manifest = (dir / "general" / "manifest.txt").string();
    cfg.portable_manifest = (dir / "portable" / "manifest.txt").string();
    for (StageSettings* s : {&cfg.stage0, &cfg.stage1, &cfg.stage2}) {
        s->train.max_epochs = 2;
        s->train.batch_size = 4;
    }
    save_experiment_config(cfg, (dir / "exp.json").string());

    REQUIRE(cli({"pipeline", "--config", (dir / "exp.json").string(), "--out", (dir / "run").string()}) == 0);
    CHECK(fs::exists(dir / "run" / "comparison_delta.csv"));

    SUBCASE("eval on a produced checkpoint, aggregate equals hand-average of per-image rows") {
        REQUIRE(cli({"eval", "--checkpoint",
                     (dir / "run" / "repetitions" / "rep_001" / "stage2_best.ckpt").string(),
                     "--data", (dir / "run" / "portable_heldout.txt").string(), "--out",
                     (dir / "evalout").string()}) == 0);
        CHECK(fs::exists(dir / "evalout" / "per_image_metrics.csv"));
        CHECK(fs::exists(dir / "evalout" / "aggregate.csv"));
        CHECK(fs::exists(dir / "evalout" / "aggregate.json"));
        CHECK(fs::exists(dir / "run" / "tables.json"));

        // recompute the overall dice mean from the per-image rows
        std::ifstream f(dir / "evalout" / "per_image_metrics.csv");
        std::string line;
        std::getline(f, line);  // header: image,class,acc,auc,dice,...
        double sum = 0.0;
        int n = 0;
        while (std::getline(f, line)) {
            std::stringstream ss(line);
            std::string tok;
            for (int i = 0; i < 5; ++i) std::getline(ss, tok, ',');
            sum += std::stod(tok);
            ++n;
        }
        REQUIRE(n > 0);
        const double dice_mean = sum / n;

        std::ifstream fa(dir / "evalout" / "aggregate.csv");
        std::getline(fa, line);
        std::string overall_row;
        while (std::getline(fa, line))
            if (line.rfind("overall,", 0) == 0) overall_row = line;
        REQUIRE_FALSE(overall_row.empty());
        std::stringstream ss(overall_row);
        std::string tok;
        for (int i = 0; i < 6; ++i) std::getline(ss, tok, ',');  // overall,acc_m,acc_s,auc_m,auc_s,dice_m
        CHECK(std::stod(tok) == doctest::Approx(dice_mean).epsilon(1e-6));
    }

    SUBCASE("report dice deltas equal a recomputation through cmd_eval") {
        auto overall_dice_mean = [&](const std::string& ckpt, const fs::path& out) {
            REQUIRE(cli({"eval", "--checkpoint", ckpt, "--data",
                         (dir / "run" / "portable_heldout.txt").string(), "--out", out.string()}) == 0);
            std::ifstream f(out / "aggregate.csv");
            std::string line, overall_row;
            std::getline(f, line);
            while (std::getline(f, line))
                if (line.rfind("overall,", 0) == 0) overall_row = line;
            REQUIRE_FALSE(overall_row.empty());
            std::stringstream ss(overall_row);
            std::string tok;
            for (int i = 0; i < 6; ++i) std::getline(ss, tok, ',');  // dice_mean column
            return std::stod(tok);
        };
        double s1 = 0.0, s2 = 0.0;
        for (const char* rep : {"rep_001", "rep_002"}) {
            s1 += overall_dice_mean(
                (dir / "run" / "repetitions" / rep / "stage1_best.ckpt").string(),
                dir / (std::string("xeval_s1_") + rep));
            s2 += overall_dice_mean(
                (dir / "run" / "repetitions" / rep / "stage2_best.ckpt").string(),
                dir / (std::string("xeval_s2_") + rep));
        }
        const double recomputed_delta = s2 / 2.0 - s1 / 2.0;

        std::ifstream f(dir / "run" / "comparison_delta.csv");
        std::string line, overall_row;
        std::getline(f, line);
        while (std::getline(f, line))
            if (line.rfind("overall,", 0) == 0) overall_row = line;
        REQUIRE_FALSE(overall_row.empty());
        std::stringstream ss(overall_row);
        std::string tok;
        for (int i = 0; i < 4; ++i) std::getline(ss, tok, ',');  // overall,acc,auc,dice
        CHECK(std::stod(tok) == doctest::Approx(recomputed_delta).epsilon(1e-5));
    }

    SUBCASE("eval of an empty manifest exits 2") {
        std::ofstream empty(dir / "empty.txt");
        empty << "xseg-manifest v1\nprovenance general\n";
        empty.close();
        CHECK(cli({"eval", "--checkpoint", (dir / "run" / "stage0.ckpt").string(), "--data",
                   (dir / "empty.txt").string(), "--out", (dir / "evalempty").string()}) == 2);
    }

    SUBCASE("pipeline fails fast when a dataset manifest is missing") {
        ExperimentConfig broken = cfg;
        broken.portable_manifest = (dir / "gone.txt").string();
        save_experiment_config(broken, (dir / "broken.json").string());
        CHECK(cli({"pipeline", "--config", (dir / "broken.json").string(), "--out",
                   (dir / "run_broken").string()}) == 2);
        CHECK_FALSE(fs::exists(dir / "run_broken" / "stage1_table.csv"));
    }

    SUBCASE("report emits curve data matching a recomputation, and plots") {
        REQUIRE(cli({"report", "--run", (dir / "run").string(), "--plots"}) == 0);
        CHECK(fs::exists(dir / "run" / "plots" / "loss_curves_stage1.csv"));
        CHECK(fs::exists(dir / "run" / "plots" / "loss_stage1.svg"));
        CHECK(fs::exists(dir / "run" / "plots" / "loss_stage2.svg"));
        CHECK(fs::exists(dir / "run" / "plots" / "comparison_covid.svg"));

        // recompute epoch means from the raw logs
        std::vector<std::vector<EpochLog>> runs;
        for (const char* rep : {"rep_001", "rep_002"})
            runs.push_back(parse_epochs_csv(
                (dir / "run" / "repetitions" / rep / "stage1_epochs.csv").string()));
        const LossCurves expect = pool_loss_curves(runs);

        std::ifstream f(dir / "run" / "plots" / "loss_curves_stage1.csv");
        std::string line;
        std::getline(f, line);
        std::size_t idx = 0;
        while (std::getline(f, line)) {
            std::stringstream ss(line);
            std::string tok;
            std::getline(ss, tok, ',');
            CHECK(std::stoi(tok) == expect.epoch.at(idx));
            std::getline(ss, tok, ',');
            CHECK(std::stoi(tok) == expect.n.at(idx));
            std::getline(ss, tok, ',');
            CHECK(std::stod(tok) == doctest::Approx(expect.train_mean.at(idx)).epsilon(1e-6));
            ++idx;
        }
        CHECK(idx == expect.epoch.size());

        const std::string svg = file_bytes(dir / "run" / "plots" / "loss_stage1.svg");
        CHECK(svg.find("<svg") != std::string::npos);
        CHECK(svg.find(kToolVersion) != std::string::npos);
    }
    fs::remove_all(dir);
}
