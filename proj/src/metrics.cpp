#include "xseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "xseg/error.hpp"

namespace xseg {

PathologyClass parse_class_label(const std::string& label) {
    if (label == "covid") return PathologyClass::Covid;
    if (label == "normal") return PathologyClass::Normal;
    if (label == "pathological") return PathologyClass::Pathological;
    throw DataError(DataError::Kind::UnknownLabel,
                    "unknown class label '" + label + "' (expected covid|normal|pathological)");
}

std::string class_label_name(PathologyClass c) {
    switch (c) {
        case PathologyClass::Covid: return "covid";
        case PathologyClass::Normal: return "normal";
        case PathologyClass::Pathological: return "pathological";
    }
    return "?";
}

std::vector<PathologyClass> all_classes() {
    return {PathologyClass::Covid, PathologyClass::Normal, PathologyClass::Pathological};
}

std::array<std::optional<double>, 9> metric_values(const MetricsRecord& r) {
    return {r.acc, r.auc, r.dice, r.jacc, r.prec, r.reca, r.f1, r.sens, r.spec};
}

ConfusionCounts confusion(const Tensor& pred, const Tensor& target, double threshold) {
    if (!pred.same_shape(target))
        throw ConfigError("confusion shape mismatch: pred " + shape_to_string(pred.shape) +
                          " vs target " + shape_to_string(target.shape));
    ConfusionCounts c;
    for (std::size_t i = 0; i < pred.data.size(); ++i) {
        const bool p = pred.data[i] >= threshold;
        const bool t = target.data[i] != 0.0;
        if (p && t)
            ++c.tp;
        else if (p && !t)
            ++c.fp;
        else if (!p && t)
            ++c.fn;
        else
            ++c.tn;
    }
    return c;
}

std::optional<double> auc_rank(const std::vector<double>& scores,
                               const std::vector<unsigned char>& labels) {
    std::size_t p = 0;
    for (unsigned char l : labels) p += l ? 1 : 0;
    const std::size_t n = labels.size() - p;
    if (p == 0 || n == 0) return std::nullopt;

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    double rank_sum_pos = 0.0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
        const double avg_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
        for (std::size_t k = i; k < j; ++k)
            if (labels[order[k]]) rank_sum_pos += avg_rank;
        i = j;
    }
    const double u = rank_sum_pos - 0.5 * static_cast<double>(p) * (static_cast<double>(p) + 1.0);
    return u / (static_cast<double>(p) * static_cast<double>(n));
}

namespace {

struct ClassTerms {
    double prec = 0.0;
    double reca = 0.0;
    double f1 = 0.0;
    bool degenerate = false;
};

ClassTerms class_terms(long long tp, long long fp, long long fn) {
    ClassTerms t;
    if (tp + fp > 0) {
        t.prec = static_cast<double>(tp) / static_cast<double>(tp + fp);
    } else {
        t.degenerate = true;
    }
    if (tp + fn > 0) {
        t.reca = static_cast<double>(tp) / static_cast<double>(tp + fn);
    } else {
        t.degenerate = true;
    }
    if (t.prec + t.reca > 0.0) {
        t.f1 = 2.0 * t.prec * t.reca / (t.prec + t.reca);
    } else {
        t.degenerate = true;
    }
    return t;
}

}  // namespace

MetricsRecord compute_metrics(const Tensor& pred, const Tensor& target, const MetricsConfig& cfg) {
    if (pred.numel() == 0) throw ConfigError("metrics need at least one pixel");
    const ConfusionCounts c = confusion(pred, target, cfg.threshold);

    MetricsRecord r;
    r.acc = static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());

    if (cfg.soft_overlap) {
        double spt = 0.0, sp = 0.0, st = 0.0;
        for (std::size_t i = 0; i < pred.data.size(); ++i) {
            spt += pred.data[i] * target.data[i];
            sp += pred.data[i];
            st += target.data[i];
        }
        r.dice = sp + st > 0.0 ? 2.0 * spt / (sp + st) : 1.0;
        r.jacc = sp + st - spt > 0.0 ? spt / (sp + st - spt) : 1.0;
    } else {
        const long long overlap2 = 2 * c.tp + c.fp + c.fn;
        r.dice = overlap2 > 0 ? 2.0 * static_cast<double>(c.tp) / static_cast<double>(overlap2) : 1.0;
        const long long uni = c.tp + c.fp + c.fn;
        r.jacc = uni > 0 ? static_cast<double>(c.tp) / static_cast<double>(uni) : 1.0;
    }

    const ClassTerms pos = class_terms(c.tp, c.fp, c.fn);
    const ClassTerms neg = class_terms(c.tn, c.fn, c.fp);
    r.prec = 0.5 * (pos.prec + neg.prec);
    r.reca = 0.5 * (pos.reca + neg.reca);
    r.f1 = 0.5 * (pos.f1 + neg.f1);
    r.degenerate = pos.degenerate || neg.degenerate;

    r.sens = c.tp + c.fn > 0 ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn) : 0.0;
    r.spec = c.tn + c.fp > 0 ? static_cast<double>(c.tn) / static_cast<double>(c.tn + c.fp) : 0.0;
    if (c.tp + c.fn == 0 || c.tn + c.fp == 0) r.degenerate = true;

    std::vector<unsigned char> labels(target.data.size());
    for (std::size_t i = 0; i < target.data.size(); ++i) labels[i] = target.data[i] != 0.0 ? 1 : 0;
    r.auc = auc_rank(pred.data, labels);
    return r;
}

namespace {

MeanStd mean_std(const std::vector<double>& xs) {
    MeanStd m;
    m.n = static_cast<int>(xs.size());
    if (xs.empty()) return m;
    bool all_equal = true;
    for (double x : xs) all_equal = all_equal && x == xs[0];
    if (all_equal) {  // exact: identical observations have zero spread
        m.mean = xs[0];
        return m;
    }
    double s = 0.0;
    for (double x : xs) s += x;
    m.mean = s / static_cast<double>(xs.size());
    if (xs.size() >= 2) {
        double sq = 0.0;
        for (double x : xs) {
            const double d = x - m.mean;
            sq += d * d;
        }
        m.std = std::sqrt(sq / static_cast<double>(xs.size() - 1));
    }
    return m;
}

}  // namespace

MetricTable aggregate_records(const std::vector<MetricsRecord>& records) {
    if (records.empty()) throw ConfigError("aggregate needs at least one record");
    MetricTable table;
    for (std::size_t m = 0; m < kMetricNames.size(); ++m) {
        std::vector<double> xs;
        xs.reserve(records.size());
        for (const MetricsRecord& r : records) {
            const auto v = metric_values(r)[m];
            if (v) xs.push_back(*v);
        }
        table[m] = mean_std(xs);
    }
    return table;
}

MetricsRecord mean_records(const std::vector<MetricsRecord>& records) {
    if (records.empty()) throw ConfigError("mean_records needs at least one record");
    MetricsRecord out;
    double auc_sum = 0.0;
    int auc_n = 0;
    for (const MetricsRecord& r : records) {
        out.acc += r.acc;
        out.dice += r.dice;
        out.jacc += r.jacc;
        out.prec += r.prec;
        out.reca += r.reca;
        out.f1 += r.f1;
        out.sens += r.sens;
        out.spec += r.spec;
        out.degenerate = out.degenerate || r.degenerate;
        if (r.auc) {
            auc_sum += *r.auc;
            ++auc_n;
        }
    }
    const double inv = 1.0 / static_cast<double>(records.size());
    out.acc *= inv;
    out.dice *= inv;
    out.jacc *= inv;
    out.prec *= inv;
    out.reca *= inv;
    out.f1 *= inv;
    out.sens *= inv;
    out.spec *= inv;
    if (auc_n > 0) out.auc = auc_sum / auc_n;
    return out;
}

StratifiedTable aggregate(const std::vector<MetricsRecord>& records,
                          const std::vector<PathologyClass>& labels) {
    if (records.empty()) throw ConfigError("aggregate needs at least one record");
    if (records.size() != labels.size())
        throw ConfigError("aggregate label count " + std::to_string(labels.size()) +
                          " does not match record count " + std::to_string(records.size()));
    StratifiedTable out;
    for (PathologyClass c : all_classes()) {
        std::vector<MetricsRecord> subset;
        for (std::size_t i = 0; i < records.size(); ++i)
            if (labels[i] == c) subset.push_back(records[i]);
        if (!subset.empty()) out.per_class[c] = aggregate_records(subset);
    }
    out.overall = aggregate_records(records);
    return out;
}

}  // namespace xseg
