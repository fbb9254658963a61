#pragma once

#include <string>
#include <vector>

#include "xseg/trainer.hpp"

namespace xseg {

std::vector<EpochLog> parse_epochs_csv(const std::string& path);

// Per-epoch mean and sample std across repetitions; epochs past a shorter
// run's early stop simply drop out of that epoch's pool (n tracks how many
// runs reached it).
struct LossCurves {
    std::vector<int> epoch;
    std::vector<double> train_mean, train_std, val_mean, val_std;
    std::vector<int> n;
};

LossCurves pool_loss_curves(const std::vector<std::vector<EpochLog>>& runs);
std::string loss_curves_csv(const LossCurves& curves);

// Self-contained SVG: mean curves for train/validation loss with a shaded
// +-1 std band each.
std::string loss_curves_svg(const LossCurves& curves, const std::string& title);

// Grouped bar chart comparing stage-1 and stage-2 values per metric.
struct ComparisonBars {
    std::string title;
    std::vector<std::string> metric_names;
    std::vector<double> stage1;
    std::vector<double> stage2;
};

std::string comparison_bars_svg(const ComparisonBars& bars);

// Reads a pipeline run directory, writes loss-curve CSVs (always) and SVG
// plots (when with_plots) under <run>/plots/.
void write_run_report(const std::string& run_dir, bool with_plots);

}  // namespace xseg
