#include "llmser/evalx.hpp"

#include "llmser/common.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>

namespace llmser {

using nlohmann::json;

std::size_t rank_of_target(const TrainedBackbone& model, const std::vector<std::string>& context,
                           const std::string& target, const std::set<std::string>& exclude) {
    if (exclude.count(target)) throw ConfigError("target must not be excluded");
    const int target_idx = model.vocab_index(target);
    const std::vector<double> scores = model.score_all(context);
    const double target_score = scores[static_cast<std::size_t>(target_idx) - 1];

    std::set<int> excluded;
    for (const auto& id : exclude) {
        auto it = std::find(model.vocab().begin(), model.vocab().end(), id);
        if (it != model.vocab().end()) {
            excluded.insert(static_cast<int>(it - model.vocab().begin()) + 1);
        }
    }
    std::size_t rank = 1;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const int idx = static_cast<int>(i) + 1;
        if (idx == target_idx || excluded.count(idx)) continue;
        if (scores[i] > target_score || (scores[i] == target_score && idx < target_idx)) ++rank;
    }
    return rank;
}

double hit_rate_at_k(const std::vector<std::size_t>& ranks, std::size_t k) {
    if (ranks.empty()) throw DataError("hit_rate_at_k: no ranks");
    std::size_t hits = 0;
    for (std::size_t r : ranks) {
        if (r <= k) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(ranks.size());
}

double ndcg_at_k(const std::vector<std::size_t>& ranks, std::size_t k) {
    if (ranks.empty()) throw DataError("ndcg_at_k: no ranks");
    double sum = 0.0;
    for (std::size_t r : ranks) {
        if (r <= k) sum += 1.0 / std::log2(static_cast<double>(r) + 1.0);
    }
    return sum / static_cast<double>(ranks.size());
}

namespace {

// Regularized incomplete beta via the standard continued fraction (good to
// ~1e-12 over the range used here).
double betacf(double a, double b, double x) {
    const int max_iter = 300;
    const double eps = 3e-14;
    const double fpmin = 1e-300;
    const double qab = a + b;
    const double qap = a + 1.0;
    const double qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::fabs(d) < fpmin) d = fpmin;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= max_iter; ++m) {
        const int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < fpmin) d = fpmin;
        c = 1.0 + aa / c;
        if (std::fabs(c) < fpmin) c = fpmin;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < fpmin) d = fpmin;
        c = 1.0 + aa / c;
        if (std::fabs(c) < fpmin) c = fpmin;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < eps) break;
    }
    return h;
}

double betai(double a, double b, double x) {
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    const double ln_beta = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b);
    const double front = std::exp(ln_beta + a * std::log(x) + b * std::log(1.0 - x));
    if (x < (a + 1.0) / (a + b + 2.0)) {
        return front * betacf(a, b, x) / a;
    }
    return 1.0 - front * betacf(b, a, 1.0 - x) / b;
}

}  // namespace

double paired_t_test(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw DataError("paired_t_test: length mismatch");
    const std::size_t n = a.size();
    if (n < 2) throw DataError("paired_t_test: need at least 2 pairs");
    std::vector<double> d(n);
    for (std::size_t i = 0; i < n; ++i) d[i] = a[i] - b[i];
    double mean = 0.0;
    for (double x : d) mean += x;
    mean /= static_cast<double>(n);
    double ss = 0.0;
    for (double x : d) ss += (x - mean) * (x - mean);
    const double var = ss / static_cast<double>(n - 1);
    if (var == 0.0) {
        return mean == 0.0 ? 1.0 : 0.0;  // degenerate-run conventions
    }
    const double t = mean / std::sqrt(var / static_cast<double>(n));
    const double df = static_cast<double>(n - 1);
    return betai(df / 2.0, 0.5, df / (df + t * t));
}

// --- report io ----------------------------------------------------------------

namespace {

json metric_values_to_json(const MetricValues& mv) {
    json values = json::object();
    for (const auto& [k, v] : mv.values) values[k] = v;
    return json{{"users", mv.user_count}, {"metrics", values}};
}

MetricValues metric_values_from_json(const json& j) {
    MetricValues mv;
    mv.user_count = j.at("users").get<std::size_t>();
    for (const auto& [k, v] : j.at("metrics").items()) mv.values[k] = v.get<double>();
    return mv;
}

}  // namespace

std::string MetricsReport::to_json_string() const {
    json out = {{"kind", "llmser-metrics"},
                {"version", 1},
                {"model", model_tag},
                {"seed", seed},
                {"config_digest", config_digest},
                {"ks", ks},
                {"overall", metric_values_to_json(overall)}};
    json groups_json = json::object();
    for (const auto& [label, mv] : groups) groups_json[label] = metric_values_to_json(mv);
    out["groups"] = std::move(groups_json);
    return out.dump(2);
}

void MetricsReport::write_json(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw DataError("cannot write metrics file: " + path);
    f << to_json_string() << "\n";
}

void MetricsReport::write_csv(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw DataError("cannot write metrics csv: " + path);
    f << "group,metric,value,users\n";
    auto emit = [&](const std::string& label, const MetricValues& mv) {
        for (const auto& [metric, value] : mv.values) {
            f << label << "," << metric << "," << json(value).dump() << "," << mv.user_count << "\n";
        }
    };
    emit("overall", overall);
    for (const auto& [label, mv] : groups) emit(label, mv);
}

MetricsReport MetricsReport::read_json(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DataError("cannot read metrics file: " + path);
    json in = json::parse(f);
    MetricsReport r;
    r.model_tag = in.at("model").get<std::string>();
    r.seed = in.at("seed").get<std::uint64_t>();
    r.config_digest = in.at("config_digest").get<std::string>();
    r.ks = in.at("ks").get<std::vector<std::size_t>>();
    r.overall = metric_values_from_json(in.at("overall"));
    for (const auto& [label, mv] : in.at("groups").items()) {
        r.groups[label] = metric_values_from_json(mv);
    }
    return r;
}

EvalResult evaluate(const TrainedBackbone& model, const Catalog& catalog,
                    const DatasetSplit& split, const GroupingConfig& grouping,
                    const std::vector<std::size_t>& ks,
                    const std::map<std::string, std::vector<std::string>>* context_prefix) {
    grouping.validate();
    if (model.direction() != Direction::Forward) {
        throw ConfigError("evaluation needs a forward-direction model");
    }
    if (model.vocab_size() != catalog.item_count()) {
        throw DataError("model vocab does not cover the catalog");
    }
    EvalResult result;
    result.report.ks = ks;

    std::map<std::string, std::vector<std::size_t>> group_ranks;
    std::vector<std::size_t> all_ranks;
    for (const auto& [user_id, entry] : split.per_user) {
        if (!entry.test) continue;
        std::vector<std::string> context;
        if (context_prefix) {
            auto it = context_prefix->find(user_id);
            if (it != context_prefix->end()) context = it->second;
        }
        context.insert(context.end(), entry.train.begin(), entry.train.end());
        if (entry.valid) context.push_back(*entry.valid);
        if (context.empty()) continue;

        std::set<std::string> exclude(context.begin(), context.end());
        exclude.erase(*entry.test);  // repeat interactions stay rankable
        const std::size_t rank = rank_of_target(model, context, *entry.test, exclude);
        result.per_user_rank[user_id] = rank;
        all_ranks.push_back(rank);
        group_ranks[grouping.label_of(entry.full_length)].push_back(rank);
    }

    auto fill = [&](const std::vector<std::size_t>& ranks, MetricValues& mv) {
        mv.user_count = ranks.size();
        for (std::size_t k : ks) {
            const std::string suffix = "@" + std::to_string(k);
            if (ranks.empty()) {
                mv.values["H" + suffix] = 0.0;
                mv.values["N" + suffix] = 0.0;
            } else {
                mv.values["H" + suffix] = hit_rate_at_k(ranks, k);
                mv.values["N" + suffix] = ndcg_at_k(ranks, k);
            }
        }
    };
    if (!all_ranks.empty()) fill(all_ranks, result.report.overall);
    for (const auto& label : grouping.labels) {
        auto it = group_ranks.find(label);
        MetricValues mv;
        if (it != group_ranks.end()) {
            fill(it->second, mv);
        } else {
            fill({}, mv);
        }
        result.report.groups[label] = std::move(mv);
    }
    return result;
}

}  // namespace llmser
