#include "xseg/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "xseg/checkpoint.hpp"
#include "xseg/error.hpp"
#include "xseg/gradcheck.hpp"
#include "xseg/kernels.hpp"
#include "xseg/pipeline.hpp"
#include "xseg/report.hpp"
#include "xseg/synthetic.hpp"

namespace xseg {

namespace fs = std::filesystem;

namespace {

std::string fmt(double v, const char* spec = "%.6f") {
    char buf[64];
    std::snprintf(buf, sizeof(buf), spec, v);
    return buf;
}

void write_file(const fs::path& path, const std::string& content) {
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw DataError(DataError::Kind::MissingFile, "cannot write '" + path.string() + "'");
        f.write(content.data(), static_cast<std::streamsize>(content.size()));
    }
    fs::rename(tmp, path);
}

std::string timestamp_utc() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    char buf[32];
    std::tm tm_utc;
    gmtime_r(&now, &tm_utc);
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
    return buf;
}

void write_run_manifest(const fs::path& out_dir, const std::string& config_hash,
                        std::uint64_t seed, const std::string& started,
                        const std::vector<std::string>& outputs) {
    const nlohmann::json j = {{"tool_version", kToolVersion}, {"config_hash", config_hash},
                              {"master_seed", seed},          {"started", started},
                              {"finished", timestamp_utc()},  {"outputs", outputs}};
    write_file(out_dir / "run_manifest.json", j.dump(2) + "\n");
}

void require_empty_or_force(const fs::path& out_dir, bool force) {
    if (force || !fs::exists(out_dir)) return;
    if (fs::is_directory(out_dir) && fs::directory_iterator(out_dir) == fs::directory_iterator())
        return;  // empty directory is fine
    throw RefusalError("output '" + out_dir.string() + "' exists and is not empty (use --force)");
}

const char* kMetricCsvNames[9] = {"acc", "auc", "dice", "jacc", "prec", "reca", "f1", "sens", "spec"};

int cmd_synth(const std::string& spec_path, const std::string& out_dir, bool force) {
    const std::string started = timestamp_utc();
    const SynthSpec spec = load_synth_spec(spec_path);
    require_empty_or_force(out_dir, force);
    const DatasetManifest manifest = generate_synthetic(spec, out_dir);
    std::printf("wrote %zu samples (%s domain) under %s\n", manifest.size(),
                domain_name(spec.domain).c_str(), out_dir.c_str());
    write_run_manifest(out_dir, file_hash_hex(spec_path), spec.seed, started,
                       {"manifest.txt", "images/", "masks/"});
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& data_path,
              const std::string& init_ckpt, const std::string& out_dir, int repetitions) {
    const std::string started = timestamp_utc();
    const SingleStageConfig config = load_single_stage_config(config_path);
    if (repetitions < 1) throw ConfigError("--repetitions must be >= 1");
    const DatasetManifest data = load_manifest(data_path);
    fs::create_directories(out_dir);

    StageResult stage;
    stage.stage_id = "train";
    for (int r = 0; r < repetitions; ++r) {
        const std::uint64_t rep_seed = derive_seed(config.seed, 0x726570, static_cast<std::uint64_t>(r));
        char rep_name[32];
        std::snprintf(rep_name, sizeof(rep_name), "rep_%03d", r + 1);
        const fs::path rep_dir = fs::path(out_dir) / rep_name;
        fs::create_directories(rep_dir);

        RepetitionResult rep;
        const std::string ckpt = (rep_dir / "best.ckpt").string();
        if (init_ckpt.empty()) {
            UNet model = UNet::build(config.model, derive_seed(config.seed, 0x696e6974,
                                                               static_cast<std::uint64_t>(r)));
            rep = run_stage_from(std::move(model), data, config.stage, config.split, rep_seed, ckpt,
                                 "train");
        } else {
            rep = run_stage(init_ckpt, data, config.model, config.stage, config.split, rep_seed,
                            ckpt, "train");
        }
        std::string epochs = "epoch,train_loss,val_loss,lr,train_ms,val_ms\n";
        for (const EpochLog& log : rep.logs)
            epochs += std::to_string(log.epoch) + "," + fmt(log.train_loss, "%.9f") + "," +
                      fmt(log.val_loss, "%.9f") + "," + fmt(log.lr, "%.9g") + "," +
                      fmt(log.train_ms, "%.3f") + "," + fmt(log.val_ms, "%.3f") + "\n";
        write_file(rep_dir / "epochs.csv", epochs);
        std::printf("[train] rep %d/%d: %zu epochs, best %d, test dice %.4f\n", r + 1, repetitions,
                    rep.logs.size(), rep.best_epoch, rep.test_metrics.dice);
        std::fflush(stdout);
        stage.repetitions.push_back(std::move(rep));
    }

    std::string csv = "repetition";
    for (const char* name : kMetricCsvNames) csv += std::string(",") + name;
    csv += ",best_epoch,epochs\n";
    std::vector<MetricsRecord> records;
    for (std::size_t r = 0; r < stage.repetitions.size(); ++r) {
        const RepetitionResult& rep = stage.repetitions[r];
        records.push_back(rep.test_metrics);
        csv += std::to_string(r + 1);
        for (const auto& v : metric_values(rep.test_metrics))
            csv += "," + (v ? fmt(*v) : std::string("nan"));
        csv += "," + std::to_string(rep.best_epoch) + "," + std::to_string(rep.logs.size()) + "\n";
    }
    const MetricTable agg = aggregate_records(records);
    csv += "mean";
    for (const MeanStd& m : agg) csv += "," + fmt(m.mean);
    csv += ",,\nstd";
    for (const MeanStd& m : agg) csv += "," + fmt(m.std);
    csv += ",,\n";
    write_file(fs::path(out_dir) / "metrics.csv", csv);
    write_run_manifest(out_dir, file_hash_hex(config_path), config.seed, started,
                       {"metrics.csv", "rep_*/best.ckpt", "rep_*/epochs.csv"});
    return 0;
}

int cmd_pipeline(const std::string& config_path, const std::string& out_dir) {
    const ExperimentConfig config = load_experiment_config(config_path);
    const PipelineReport report = run_pipeline(config, out_dir);
    std::printf("pipeline done: held-out dice %.4f -> %.4f (delta %+.4f), report under %s\n",
                report.comparison.stage1.overall[2].mean, report.comparison.stage2.overall[2].mean,
                report.comparison.overall_delta[2], out_dir.c_str());
    return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_path, const std::string& out_dir,
             double threshold) {
    const std::string started = timestamp_utc();
    const UNet model = load_checkpoint(ckpt_path);
    const DatasetManifest data = load_manifest(data_path);
    fs::create_directories(out_dir);

    const auto per_image =
        evaluate_dataset(model_predictor(model), data, model.config().input_size, threshold);

    std::string csv = "image,class";
    for (const char* name : kMetricCsvNames) csv += std::string(",") + name;
    csv += "\n";
    std::vector<MetricsRecord> records;
    std::vector<PathologyClass> labels;
    for (const PerImageMetrics& p : per_image) {
        records.push_back(p.record);
        labels.push_back(p.label);
        csv += p.image_path + "," + class_label_name(p.label);
        for (const auto& v : metric_values(p.record))
            csv += "," + (v ? fmt(*v) : std::string("nan"));
        csv += "\n";
    }
    const StratifiedTable table = aggregate(records, labels);
    write_file(fs::path(out_dir) / "per_image_metrics.csv", csv);
    write_file(fs::path(out_dir) / "aggregate.csv", stratified_table_csv(table));
    write_file(fs::path(out_dir) / "aggregate.json", stratified_table_json(table));
    std::printf("evaluated %zu images, mean dice %.4f\n", per_image.size(),
                mean_records(records).dice);
    write_run_manifest(out_dir, file_hash_hex(ckpt_path), 0, started,
                       {"per_image_metrics.csv", "aggregate.csv", "aggregate.json"});
    return 0;
}

int cmd_gradcheck(const std::string& ops_arg, std::uint64_t seed, int trials, double tolerance,
                  bool inject_bug) {
    std::vector<std::string> ops;
    if (ops_arg == "all") {
        ops = grad_check_op_names();
    } else {
        std::stringstream ss(ops_arg);
        std::string tok;
        while (std::getline(ss, tok, ',')) {
            if (tok == "smooth_dice_loss") {  // shorthand for both forms
                ops.push_back("smooth_dice_loss_paper");
                ops.push_back("smooth_dice_loss_standard");
            } else {
                ops.push_back(tok);
            }
        }
    }
    if (trials < 1) throw ConfigError("--trials must be >= 1");

    GradCheckOptions options;
    options.tolerance = tolerance;
    options.corrupt_backward = inject_bug;

    std::printf("%-28s %14s %10s  %s\n", "op", "max_rel_error", "tolerance", "pass");
    bool all_pass = true;
    for (const std::string& op : ops) {
        double worst = 0.0;
        bool pass = true;
        for (int t = 0; t < trials; ++t) {
            const GradCheckReport r = grad_check(op, derive_seed(seed, 0x7472, static_cast<std::uint64_t>(t)), options);
            worst = std::max(worst, r.max_rel_error);
            pass = pass && r.pass;
        }
        std::printf("%-28s %14.3e %10.1e  %s\n", op.c_str(), worst, tolerance,
                    pass ? "yes" : "NO");
        all_pass = all_pass && pass;
    }
    return all_pass ? 0 : 1;
}

int cmd_bench(const std::string& logs_dir, const std::string& out_csv) {
    if (!fs::exists(logs_dir))
        throw DataError(DataError::Kind::MissingFile, "logs directory '" + logs_dir + "' does not exist");

    // pool epochs per stage across every repetition found under the tree
    std::map<std::string, std::vector<EpochLog>> pools;
    for (const auto& entry : fs::recursive_directory_iterator(logs_dir)) {
        if (!entry.is_regular_file()) continue;
        const std::string name = entry.path().filename().string();
        std::string group;
        if (name == "epochs.csv")
            group = "all";
        else if (name.size() > 11 && name.substr(name.size() - 11) == "_epochs.csv")
            group = name.substr(0, name.size() - 11);
        else
            continue;
        const auto logs = parse_epochs_csv(entry.path().string());
        auto& pool = pools[group];
        pool.insert(pool.end(), logs.begin(), logs.end());
    }
    if (pools.empty())
        throw DataError(DataError::Kind::MissingFile,
                        "no epoch logs (*_epochs.csv) found under '" + logs_dir + "'");

    std::printf("%-12s %-12s %14s %14s %10s\n", "group", "phase", "mean_ms", "std_ms", "epochs");
    std::string csv = "group,phase,mean_ms,std_ms,epochs\n";
    for (const auto& [group, logs] : pools) {
        const PhaseTiming t = bench(logs);
        std::printf("%-12s %-12s %14.3f %14.3f %10zu\n", group.c_str(), "training",
                    t.train_ms.mean, t.train_ms.std, logs.size());
        std::printf("%-12s %-12s %14.3f %14.3f %10zu\n", group.c_str(), "validation",
                    t.val_ms.mean, t.val_ms.std, logs.size());
        csv += group + ",training," + fmt(t.train_ms.mean, "%.3f") + "," + fmt(t.train_ms.std, "%.3f") +
               "," + std::to_string(logs.size()) + "\n";
        csv += group + ",validation," + fmt(t.val_ms.mean, "%.3f") + "," + fmt(t.val_ms.std, "%.3f") +
               "," + std::to_string(logs.size()) + "\n";
    }
    if (!out_csv.empty()) {
        write_file(out_csv, csv);
    } else {
        std::fputs(csv.c_str(), stdout);
    }
    return 0;
}

int cmd_report(const std::string& run_dir, bool plots) {
    write_run_report(run_dir, plots);
    std::printf("report artifacts written under %s/plots\n", run_dir.c_str());
    return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
    kernels::configure_threads_from_env();

    CLI::App app{"lung-field segmentation trainer and two-stage transfer experiment runner"};
    app.require_subcommand(1);
    int rc = 0;

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic dataset from a spec file");
    std::string synth_spec, synth_out;
    bool synth_force = false;
    synth->add_option("--spec", synth_spec, "synthetic spec (json)")->required();
    synth->add_option("--out", synth_out, "output dataset directory")->required();
    synth->add_flag("--force", synth_force, "write into a non-empty directory");
    synth->callback([&] { rc = cmd_synth(synth_spec, synth_out, synth_force); });

    // train
    auto* train_cmd = app.add_subcommand("train", "train one stage on one dataset");
    std::string train_config, train_data, train_init, train_out = "train_out";
    int train_reps = 1;
    train_cmd->add_option("--config", train_config, "stage config (json)")->required();
    train_cmd->add_option("--data", train_data, "dataset manifest")->required();
    train_cmd->add_option("--init", train_init, "initial checkpoint (omit to train from scratch)");
    train_cmd->add_option("--out", train_out, "output directory");
    train_cmd->add_option("--repetitions", train_reps, "randomized holdout repetitions");
    train_cmd->callback([&] { rc = cmd_train(train_config, train_data, train_init, train_out, train_reps); });

    // pipeline
    auto* pipe = app.add_subcommand("pipeline", "run the full two-stage transfer experiment");
    std::string pipe_config, pipe_out = "pipeline_out";
    pipe->add_option("--config", pipe_config, "experiment config (json)")->required();
    pipe->add_option("--out", pipe_out, "report directory");
    pipe->callback([&] { rc = cmd_pipeline(pipe_config, pipe_out); });

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
    std::string eval_ckpt, eval_data, eval_out = "eval_out";
    double eval_threshold = 0.5;
    eval_cmd->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
    eval_cmd->add_option("--data", eval_data, "dataset manifest")->required();
    eval_cmd->add_option("--out", eval_out, "output directory");
    eval_cmd->add_option("--threshold", eval_threshold, "binarization threshold");
    eval_cmd->callback([&] { rc = cmd_eval(eval_ckpt, eval_data, eval_out, eval_threshold); });

    // gradcheck
    auto* grad = app.add_subcommand("gradcheck", "finite-difference check of every backward rule");
    std::string grad_ops = "all";
    std::uint64_t grad_seed = 42;
    int grad_trials = 10;
    double grad_tol = 1e-4;
    bool inject_bug = false;
    grad->add_option("--ops", grad_ops, "all or a comma-separated op list");
    grad->add_option("--seed", grad_seed, "base seed");
    grad->add_option("--trials", grad_trials, "seeded trials per op");
    grad->add_option("--tol", grad_tol, "relative error tolerance");
    grad->add_flag("--inject-bug", inject_bug)->group("");  // negative-control hook, hidden
    grad->callback([&] { rc = cmd_gradcheck(grad_ops, grad_seed, grad_trials, grad_tol, inject_bug); });

    // bench
    auto* bench_cmd = app.add_subcommand("bench", "pool epoch timings from run logs");
    std::string bench_logs, bench_out;
    bench_cmd->add_option("--logs", bench_logs, "run directory containing epoch logs")->required();
    bench_cmd->add_option("--out", bench_out, "write the CSV summary here instead of stdout");
    bench_cmd->callback([&] { rc = cmd_bench(bench_logs, bench_out); });

    // report
    auto* report_cmd = app.add_subcommand("report", "loss-curve data and SVG plots for a pipeline run");
    std::string report_run;
    bool report_plots = false;
    report_cmd->add_option("--run", report_run, "pipeline report directory")->required();
    report_cmd->add_flag("--plots", report_plots, "emit SVG plots");
    report_cmd->callback([&] { rc = cmd_report(report_run, report_plots); });

    try {
        app.parse(argc, argv);
        return rc;
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const RefusalError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    } catch (const NumericError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 4;
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "internal error: %s\n", e.what());
        return 1;
    }
}

}  // namespace xseg
