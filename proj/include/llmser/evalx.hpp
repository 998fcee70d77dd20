#pragma once

#include "llmser/backbone.hpp"
#include "llmser/catalog.hpp"

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace llmser {

// 1-based position of `target` in the full-catalog score ordering after
// removing `exclude`; score ties break by ascending vocab index.
std::size_t rank_of_target(const TrainedBackbone& model, const std::vector<std::string>& context,
                           const std::string& target, const std::set<std::string>& exclude);

double hit_rate_at_k(const std::vector<std::size_t>& ranks, std::size_t k);

// Single-relevant-item NDCG: mean of 1/log2(rank+1) inside the window, 0 outside.
double ndcg_at_k(const std::vector<std::size_t>& ranks, std::size_t k);

// Two-sided paired t-test p-value. Zero-variance conventions: identical
// vectors give p = 1, constant nonzero differences give p = 0.
double paired_t_test(const std::vector<double>& a, const std::vector<double>& b);

struct MetricValues {
    std::size_t user_count = 0;
    std::map<std::string, double> values;  // "H@10", "N@10", ...
};

struct MetricsReport {
    std::vector<std::size_t> ks;
    MetricValues overall;
    std::map<std::string, MetricValues> groups;
    std::uint64_t seed = 0;
    std::string config_digest;
    std::string model_tag;

    void write_json(const std::string& path) const;
    void write_csv(const std::string& path) const;
    static MetricsReport read_json(const std::string& path);
    std::string to_json_string() const;
};

struct EvalResult {
    MetricsReport report;
    std::map<std::string, std::size_t> per_user_rank;  // evaluated users only
};

// Ranks each user's test target given context train + valid (prepended with
// that user's entry from `context_prefix` when present), excluding the context
// items from the ordering. Users without a test target are skipped. Groups are
// keyed by full interaction length.
EvalResult evaluate(const TrainedBackbone& model, const Catalog& catalog,
                    const DatasetSplit& split, const GroupingConfig& grouping,
                    const std::vector<std::size_t>& ks = {10, 20},
                    const std::map<std::string, std::vector<std::string>>* context_prefix = nullptr);

}  // namespace llmser
