#include "xseg/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "xseg/error.hpp"
#include "xseg/metrics.hpp"
#include "xseg/pipeline.hpp"

namespace xseg {

namespace fs = std::filesystem;

std::vector<EpochLog> parse_epochs_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DataError(DataError::Kind::MissingFile, "cannot open epoch log '" + path + "'");
    std::vector<EpochLog> out;
    std::string line;
    if (!std::getline(f, line) || line.rfind("epoch,", 0) != 0)
        throw DataError(DataError::Kind::BadManifest, "'" + path + "' is not an epoch log");
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        EpochLog log;
        std::stringstream ss(line);
        std::string tok;
        double* fields[5] = {&log.train_loss, &log.val_loss, &log.lr, &log.train_ms, &log.val_ms};
        if (!std::getline(ss, tok, ',')) break;
        log.epoch = std::stoi(tok);
        for (double* field : fields) {
            if (!std::getline(ss, tok, ','))
                throw DataError(DataError::Kind::BadManifest, "short row in epoch log '" + path + "'");
            *field = std::stod(tok);
        }
        out.push_back(log);
    }
    return out;
}

namespace {

MeanStd pooled(const std::vector<double>& xs) {
    MeanStd m;
    m.n = static_cast<int>(xs.size());
    if (xs.empty()) return m;
    double s = 0.0;
    for (double x : xs) s += x;
    m.mean = s / static_cast<double>(xs.size());
    if (xs.size() >= 2) {
        double sq = 0.0;
        for (double x : xs) sq += (x - m.mean) * (x - m.mean);
        m.std = std::sqrt(sq / static_cast<double>(xs.size() - 1));
    }
    return m;
}

std::string fmt(double v, const char* spec = "%.6f") {
    char buf[64];
    std::snprintf(buf, sizeof(buf), spec, v);
    return buf;
}

}  // namespace

LossCurves pool_loss_curves(const std::vector<std::vector<EpochLog>>& runs) {
    if (runs.empty()) throw ConfigError("no epoch logs to pool");
    std::size_t max_epochs = 0;
    for (const auto& r : runs) max_epochs = std::max(max_epochs, r.size());
    LossCurves curves;
    for (std::size_t e = 0; e < max_epochs; ++e) {
        std::vector<double> train, val;
        for (const auto& r : runs) {
            if (e < r.size()) {
                train.push_back(r[e].train_loss);
                val.push_back(r[e].val_loss);
            }
        }
        const MeanStd t = pooled(train), v = pooled(val);
        curves.epoch.push_back(static_cast<int>(e + 1));
        curves.train_mean.push_back(t.mean);
        curves.train_std.push_back(t.std);
        curves.val_mean.push_back(v.mean);
        curves.val_std.push_back(v.std);
        curves.n.push_back(t.n);
    }
    return curves;
}

std::string loss_curves_csv(const LossCurves& curves) {
    std::string csv = "epoch,n,train_mean,train_std,val_mean,val_std\n";
    for (std::size_t i = 0; i < curves.epoch.size(); ++i) {
        csv += std::to_string(curves.epoch[i]) + "," + std::to_string(curves.n[i]) + "," +
               fmt(curves.train_mean[i]) + "," + fmt(curves.train_std[i]) + "," +
               fmt(curves.val_mean[i]) + "," + fmt(curves.val_std[i]) + "\n";
    }
    return csv;
}

namespace {

constexpr int kW = 640, kH = 400;
constexpr int kMarginL = 60, kMarginR = 20, kMarginT = 40, kMarginB = 45;

struct Scale {
    double x0, x1, y0, y1;
    double px(double x) const {
        return kMarginL + (x - x0) / (x1 - x0) * (kW - kMarginL - kMarginR);
    }
    double py(double y) const {
        return kH - kMarginB - (y - y0) / (y1 - y0) * (kH - kMarginT - kMarginB);
    }
};

std::string svg_header(const std::string& title, int w = kW, int h = kH) {
    std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(w) +
                    "\" height=\"" + std::to_string(h) + "\" viewBox=\"0 0 " + std::to_string(w) +
                    " " + std::to_string(h) + "\">\n";
    s += "<!-- generated by ";
    s += kToolVersion;
    s += " -->\n";
    s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    s += "<text x=\"" + std::to_string(w / 2) +
         "\" y=\"20\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">" + title +
         "</text>\n";
    return s;
}

std::string band_path(const LossCurves& c, const std::vector<double>& mean,
                      const std::vector<double>& sd, const Scale& sc, const std::string& color) {
    std::string d = "M";
    for (std::size_t i = 0; i < c.epoch.size(); ++i)
        d += " " + fmt(sc.px(c.epoch[i]), "%.2f") + " " + fmt(sc.py(mean[i] + sd[i]), "%.2f");
    for (std::size_t i = c.epoch.size(); i-- > 0;)
        d += " " + fmt(sc.px(c.epoch[i]), "%.2f") + " " + fmt(sc.py(mean[i] - sd[i]), "%.2f");
    return "<path d=\"" + d + " Z\" fill=\"" + color + "\" fill-opacity=\"0.2\" stroke=\"none\"/>\n";
}

std::string polyline(const LossCurves& c, const std::vector<double>& mean, const Scale& sc,
                     const std::string& color) {
    std::string pts;
    for (std::size_t i = 0; i < c.epoch.size(); ++i)
        pts += fmt(sc.px(c.epoch[i]), "%.2f") + "," + fmt(sc.py(mean[i]), "%.2f") + " ";
    return "<polyline points=\"" + pts + "\" fill=\"none\" stroke=\"" + color +
           "\" stroke-width=\"1.5\"/>\n";
}

std::string axes(const Scale& sc, const std::string& x_label, const std::string& y_label) {
    std::string s;
    s += "<line x1=\"" + std::to_string(kMarginL) + "\" y1=\"" + std::to_string(kH - kMarginB) +
         "\" x2=\"" + std::to_string(kW - kMarginR) + "\" y2=\"" + std::to_string(kH - kMarginB) +
         "\" stroke=\"black\"/>\n";
    s += "<line x1=\"" + std::to_string(kMarginL) + "\" y1=\"" + std::to_string(kMarginT) +
         "\" x2=\"" + std::to_string(kMarginL) + "\" y2=\"" + std::to_string(kH - kMarginB) +
         "\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        const double xv = sc.x0 + (sc.x1 - sc.x0) * i / 4.0;
        const double yv = sc.y0 + (sc.y1 - sc.y0) * i / 4.0;
        s += "<text x=\"" + fmt(sc.px(xv), "%.1f") + "\" y=\"" + std::to_string(kH - kMarginB + 16) +
             "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">" +
             fmt(xv, "%.0f") + "</text>\n";
        s += "<text x=\"" + std::to_string(kMarginL - 6) + "\" y=\"" + fmt(sc.py(yv) + 3, "%.1f") +
             "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">" + fmt(yv, "%.2f") +
             "</text>\n";
    }
    s += "<text x=\"" + std::to_string((kMarginL + kW - kMarginR) / 2) + "\" y=\"" +
         std::to_string(kH - 8) +
         "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" + x_label +
         "</text>\n";
    s += "<text x=\"14\" y=\"" + std::to_string((kMarginT + kH - kMarginB) / 2) +
         "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\" transform=\"rotate(-90 14 " +
         std::to_string((kMarginT + kH - kMarginB) / 2) + ")\">" + y_label + "</text>\n";
    return s;
}

}  // namespace

std::string loss_curves_svg(const LossCurves& curves, const std::string& title) {
    if (curves.epoch.empty()) throw ConfigError("empty loss curves");
    double lo = 1e300, hi = -1e300;
    for (std::size_t i = 0; i < curves.epoch.size(); ++i) {
        lo = std::min({lo, curves.train_mean[i] - curves.train_std[i],
                       curves.val_mean[i] - curves.val_std[i]});
        hi = std::max({hi, curves.train_mean[i] + curves.train_std[i],
                       curves.val_mean[i] + curves.val_std[i]});
    }
    if (hi <= lo) hi = lo + 1.0;
    const double pad = 0.05 * (hi - lo);
    Scale sc{1.0, static_cast<double>(std::max(2, curves.epoch.back())), lo - pad, hi + pad};

    std::string svg = svg_header(title);
    svg += axes(sc, "epoch", "loss");
    svg += band_path(curves, curves.train_mean, curves.train_std, sc, "#1f77b4");
    svg += band_path(curves, curves.val_mean, curves.val_std, sc, "#d62728");
    svg += polyline(curves, curves.train_mean, sc, "#1f77b4");
    svg += polyline(curves, curves.val_mean, sc, "#d62728");
    svg += "<text x=\"" + std::to_string(kW - kMarginR - 150) + "\" y=\"" +
           std::to_string(kMarginT + 8) +
           "\" font-family=\"sans-serif\" font-size=\"11\" fill=\"#1f77b4\">train (mean &#177; std)</text>\n";
    svg += "<text x=\"" + std::to_string(kW - kMarginR - 150) + "\" y=\"" +
           std::to_string(kMarginT + 24) +
           "\" font-family=\"sans-serif\" font-size=\"11\" fill=\"#d62728\">validation (mean &#177; std)</text>\n";
    svg += "</svg>\n";
    return svg;
}

std::string comparison_bars_svg(const ComparisonBars& bars) {
    const int w = 720, h = 360;
    const int ml = 55, mr = 20, mt = 40, mb = 60;
    const std::size_t groups = bars.metric_names.size();
    std::string svg = svg_header(bars.title, w, h);

    const double plot_w = w - ml - mr, plot_h = h - mt - mb;
    const double group_w = plot_w / static_cast<double>(groups);
    const double bar_w = group_w * 0.32;
    auto bar_y = [&](double v) { return mt + plot_h * (1.0 - std::clamp(v, 0.0, 1.0)); };

    for (int i = 0; i <= 4; ++i) {
        const double v = i / 4.0;
        svg += "<line x1=\"" + std::to_string(ml) + "\" y1=\"" + fmt(bar_y(v), "%.1f") + "\" x2=\"" +
               std::to_string(w - mr) + "\" y2=\"" + fmt(bar_y(v), "%.1f") +
               "\" stroke=\"#dddddd\"/>\n";
        svg += "<text x=\"" + std::to_string(ml - 6) + "\" y=\"" + fmt(bar_y(v) + 3, "%.1f") +
               "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">" + fmt(v, "%.2f") +
               "</text>\n";
    }
    for (std::size_t g = 0; g < groups; ++g) {
        const double x0 = ml + group_w * static_cast<double>(g) + group_w / 2.0;
        const double v1 = bars.stage1[g], v2 = bars.stage2[g];
        svg += "<rect x=\"" + fmt(x0 - bar_w, "%.1f") + "\" y=\"" + fmt(bar_y(v1), "%.1f") +
               "\" width=\"" + fmt(bar_w, "%.1f") + "\" height=\"" +
               fmt(mt + plot_h - bar_y(v1), "%.1f") + "\" fill=\"#d62728\"/>\n";
        svg += "<rect x=\"" + fmt(x0, "%.1f") + "\" y=\"" + fmt(bar_y(v2), "%.1f") + "\" width=\"" +
               fmt(bar_w, "%.1f") + "\" height=\"" + fmt(mt + plot_h - bar_y(v2), "%.1f") +
               "\" fill=\"#1f77b4\"/>\n";
        svg += "<text x=\"" + fmt(x0, "%.1f") + "\" y=\"" + std::to_string(h - mb + 16) +
               "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">" +
               bars.metric_names[g] + "</text>\n";
    }
    svg += "<text x=\"" + std::to_string(ml) + "\" y=\"" + std::to_string(h - 14) +
           "\" font-family=\"sans-serif\" font-size=\"11\" fill=\"#d62728\">stage 1</text>\n";
    svg += "<text x=\"" + std::to_string(ml + 70) + "\" y=\"" + std::to_string(h - 14) +
           "\" font-family=\"sans-serif\" font-size=\"11\" fill=\"#1f77b4\">stage 2</text>\n";
    svg += "</svg>\n";
    return svg;
}

namespace {

// class -> per-metric means, parsed from a stratified table CSV
std::map<std::string, std::vector<double>> parse_stratified_means(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DataError(DataError::Kind::MissingFile, "cannot open table '" + path + "'");
    std::map<std::string, std::vector<double>> out;
    std::string line;
    std::getline(f, line);  // header: class,<m>_mean,<m>_std,...
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cls, tok;
        std::getline(ss, cls, ',');
        std::vector<double> means;
        int col = 0;
        while (std::getline(ss, tok, ',')) {
            if (col % 2 == 0) means.push_back(std::stod(tok));  // mean columns
            ++col;
        }
        out[cls] = means;
    }
    return out;
}

void write_file(const fs::path& path, const std::string& content) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError(DataError::Kind::MissingFile, "cannot write '" + path.string() + "'");
    f.write(content.data(), static_cast<std::streamsize>(content.size()));
}

}  // namespace

void write_run_report(const std::string& run_dir, bool with_plots) {
    const fs::path root(run_dir);
    const fs::path reps = root / "repetitions";
    if (!fs::exists(reps))
        throw ConfigError("'" + run_dir + "' does not look like a pipeline run (no repetitions/)");
    const fs::path plots = root / "plots";
    fs::create_directories(plots);

    for (const std::string stage : {"stage1", "stage2"}) {
        std::vector<fs::path> files;
        for (const auto& rep : fs::directory_iterator(reps)) {
            const fs::path f = rep.path() / (stage + "_epochs.csv");
            if (fs::exists(f)) files.push_back(f);
        }
        std::sort(files.begin(), files.end());
        if (files.empty()) throw ConfigError("no " + stage + " epoch logs under '" + reps.string() + "'");
        std::vector<std::vector<EpochLog>> runs;
        for (const fs::path& f : files) runs.push_back(parse_epochs_csv(f.string()));
        const LossCurves curves = pool_loss_curves(runs);
        write_file(plots / ("loss_curves_" + stage + ".csv"), loss_curves_csv(curves));
        if (with_plots)
            write_file(plots / ("loss_" + stage + ".svg"),
                       loss_curves_svg(curves, stage + " training/validation loss across repetitions"));
    }

    if (with_plots) {
        const auto s1 = parse_stratified_means((root / "comparison_stage1.csv").string());
        const auto s2 = parse_stratified_means((root / "comparison_stage2.csv").string());
        for (const auto& [cls, means1] : s1) {
            if (!s2.count(cls)) continue;
            ComparisonBars bars;
            bars.title = "held-out comparison: " + cls;
            for (const char* name : kMetricNames) bars.metric_names.push_back(name);
            bars.stage1 = means1;
            bars.stage2 = s2.at(cls);
            write_file(plots / ("comparison_" + cls + ".svg"), comparison_bars_svg(bars));
        }
    }
}

}  // namespace xseg
