#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "xseg/tensor.hpp"

namespace xseg {

enum class PathologyClass { Covid, Normal, Pathological };

PathologyClass parse_class_label(const std::string& label);  // throws DataError on unknown
std::string class_label_name(PathologyClass c);
std::vector<PathologyClass> all_classes();

struct ConfusionCounts {
    long long tp = 0;
    long long tn = 0;
    long long fp = 0;
    long long fn = 0;
    long long total() const { return tp + tn + fp + fn; }
};

// The nine per-evaluation metrics. PREC/RECA/F1 are macro averages over the
// positive and negative pixel classes (per-class F1 first, then averaged).
// auc is absent when the target contains a single class. degenerate marks
// records where an empty denominator forced a per-class term to 0.
struct MetricsRecord {
    double acc = 0.0;
    std::optional<double> auc;
    double dice = 0.0;
    double jacc = 0.0;
    double prec = 0.0;
    double reca = 0.0;
    double f1 = 0.0;
    double sens = 0.0;
    double spec = 0.0;
    bool degenerate = false;
};

inline constexpr std::array<const char*, 9> kMetricNames = {
    "ACC", "AUC", "DICE", "JACC", "PREC", "RECA", "F1-SC", "SENS", "SPEC"};

std::array<std::optional<double>, 9> metric_values(const MetricsRecord& r);

struct MetricsConfig {
    double threshold = 0.5;
    bool soft_overlap = false;  // Eqs. for DICE/JACC on raw probabilities instead of binarized
};

ConfusionCounts confusion(const Tensor& pred, const Tensor& target, double threshold = 0.5);

MetricsRecord compute_metrics(const Tensor& pred, const Tensor& target,
                              const MetricsConfig& cfg = {});

// Rank-based AUC (average ranks over tie groups, O((P+N) log(P+N))).
// Absent when either class is missing.
std::optional<double> auc_rank(const std::vector<double>& scores,
                               const std::vector<unsigned char>& labels);

struct MeanStd {
    double mean = 0.0;
    double std = 0.0;
    int n = 0;
};

// Per-metric mean and sample standard deviation (n-1 denominator; n==1 gives
// std 0). Records with absent AUC are excluded from the AUC cell only.
using MetricTable = std::array<MeanStd, 9>;

MetricTable aggregate_records(const std::vector<MetricsRecord>& records);

// Plain per-metric mean of records (AUC averaged over the records where it
// is defined, absent if none). Used to condense per-image results into one
// record per evaluation run.
MetricsRecord mean_records(const std::vector<MetricsRecord>& records);

struct StratifiedTable {
    std::map<PathologyClass, MetricTable> per_class;
    MetricTable overall;
};

StratifiedTable aggregate(const std::vector<MetricsRecord>& records,
                          const std::vector<PathologyClass>& labels);

}  // namespace xseg
