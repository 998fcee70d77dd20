#include "llmser/synthetic.hpp"

#include "llmser/common.hpp"
#include "llmser/rng.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <unordered_map>

namespace llmser {

using nlohmann::json;

namespace {

const char* kThemes[] = {
    "classic blue denim jacket", "rugged brown leather boot", "elegant red silk scarf",
    "cozy gray wool sweater",    "sporty white canvas shoe",  "vintage black felt hat",
    "bright green rain coat",    "soft purple knit glove",
};

const char* kWords[] = {"alpha",   "bravo", "charlie", "delta", "echo",  "foxtrot", "golf",
                        "hotel",   "india", "juliet",  "kilo",  "lima",  "mike",    "november",
                        "oscar",   "papa",  "quebec",  "romeo", "sierra", "tango",  "uniform",
                        "victor",  "whiskey", "xray",  "yankee", "zulu"};

std::string theme_of(std::size_t cluster) {
    const std::size_t n = sizeof(kThemes) / sizeof(kThemes[0]);
    std::string t = kThemes[cluster % n];
    if (cluster >= n) t += " series " + std::to_string(cluster / n + 1);
    return t;
}

std::string word_of(std::size_t i) {
    const std::size_t n = sizeof(kWords) / sizeof(kWords[0]);
    std::string w = kWords[i % n];
    if (i >= n) w += std::to_string(i / n + 1);
    return w;
}

std::string item_id_of(std::size_t i) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "i%04zu", i);
    return buf;
}

std::string user_id_of(std::size_t u) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "u%04zu", u);
    return buf;
}

}  // namespace

SyntheticData generate_synthetic(const SyntheticConfig& cfg) {
    if (cfg.num_clusters < 2) throw ConfigError("synthetic corpus needs at least 2 clusters");
    if (cfg.true_len_min < 2 || cfg.true_len_max < cfg.true_len_min) {
        throw ConfigError("invalid true length range");
    }
    if (cfg.tail_visible_min < 1 || cfg.tail_visible_max < cfg.tail_visible_min) {
        throw ConfigError("invalid tail visible range");
    }

    SyntheticData data;
    const std::size_t k = cfg.num_clusters;

    // items: per cluster, exclusive then shared-with-next
    std::vector<std::vector<std::string>> exclusive(k), shared(k);
    std::size_t item_counter = 0;
    for (std::size_t c = 0; c < k; ++c) {
        for (std::size_t i = 0; i < cfg.exclusive_per_cluster; ++i) {
            const std::string id = item_id_of(item_counter);
            data.items.push_back(Item{id, theme_of(c) + " edition " + word_of(item_counter)});
            data.truth.item_clusters[id] = {c};
            exclusive[c].push_back(id);
            ++item_counter;
        }
        for (std::size_t i = 0; i < cfg.shared_per_cluster; ++i) {
            const std::string id = item_id_of(item_counter);
            const std::size_t next = (c + 1) % k;
            data.items.push_back(
                Item{id, theme_of(c) + " crossover " + word_of(item_counter)});
            data.truth.item_clusters[id] = {c, next};
            shared[c].push_back(id);
            ++item_counter;
        }
    }

    // per-cluster rings: exclusive + own shared + shared inherited from the
    // previous cluster, in a seeded deterministic order
    data.truth.rings.resize(k);
    for (std::size_t c = 0; c < k; ++c) {
        auto& ring = data.truth.rings[c];
        ring = exclusive[c];
        ring.insert(ring.end(), shared[c].begin(), shared[c].end());
        const std::size_t prev = (c + k - 1) % k;
        ring.insert(ring.end(), shared[prev].begin(), shared[prev].end());
        SeededRng rng(derive_seed(cfg.seed, "ring", c));
        rng.shuffle(ring);
    }

    const std::size_t tail_count =
        static_cast<std::size_t>(cfg.tail_fraction * static_cast<double>(cfg.num_users));
    for (std::size_t u = 0; u < cfg.num_users; ++u) {
        const std::string uid = user_id_of(u);
        const std::size_t cluster = u % k;
        data.truth.user_cluster[uid] = cluster;
        const auto& ring = data.truth.rings[cluster];
        std::unordered_map<std::string, std::size_t> pos;
        for (std::size_t i = 0; i < ring.size(); ++i) pos[ring[i]] = i;

        SeededRng rng(derive_seed(cfg.seed, "walk", u));
        const std::size_t true_len =
            cfg.true_len_min + rng.below(cfg.true_len_max - cfg.true_len_min + 1);
        std::size_t at = rng.below(ring.size());
        std::vector<std::string> walk;
        walk.push_back(ring[at]);
        while (walk.size() < true_len) {
            if (rng.next_double() < cfg.ring_follow_prob) {
                at = (at + 1) % ring.size();
            } else {
                at = rng.below(ring.size());
            }
            walk.push_back(ring[at]);
        }

        std::size_t visible_from = 0;
        if (u < tail_count) {
            data.truth.tail_users.insert(uid);
            const std::size_t keep =
                cfg.tail_visible_min + rng.below(cfg.tail_visible_max - cfg.tail_visible_min + 1);
            visible_from = walk.size() > keep ? walk.size() - keep : 0;
        }
        for (std::size_t i = visible_from; i < walk.size(); ++i) {
            data.interactions.push_back(
                Interaction{uid, walk[i], 1600000000 + static_cast<std::int64_t>(i)});
        }
    }
    return data;
}

void write_synthetic(const SyntheticData& data, const std::string& dir) {
    std::filesystem::create_directories(dir);
    {
        std::ofstream out(dir + "/items.jsonl");
        if (!out) throw DataError("cannot write items file under " + dir);
        for (const auto& it : data.items) {
            out << json{{"item_id", it.item_id}, {"title", it.title}}.dump() << "\n";
        }
    }
    {
        std::ofstream out(dir + "/interactions.jsonl");
        if (!out) throw DataError("cannot write interactions file under " + dir);
        for (const auto& ia : data.interactions) {
            out << json{{"user_id", ia.user_id},
                        {"item_id", ia.item_id},
                        {"timestamp", ia.timestamp}}
                       .dump()
                << "\n";
        }
    }
    data.truth.save(dir + "/truth.json");
}

void SyntheticTruth::save(const std::string& path) const {
    json out;
    out["kind"] = "llmser-synthetic-truth";
    json ic = json::object();
    for (const auto& [id, clusters] : item_clusters) {
        ic[id] = std::vector<std::size_t>(clusters.begin(), clusters.end());
    }
    out["item_clusters"] = std::move(ic);
    json uc = json::object();
    for (const auto& [id, c] : user_cluster) uc[id] = c;
    out["user_cluster"] = std::move(uc);
    out["tail_users"] = std::vector<std::string>(tail_users.begin(), tail_users.end());
    out["rings"] = rings;
    std::ofstream f(path);
    if (!f) throw DataError("cannot write truth file: " + path);
    f << out.dump(2) << "\n";
}

SyntheticTruth SyntheticTruth::load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DataError("cannot read truth file: " + path);
    json in = json::parse(f);
    SyntheticTruth t;
    for (const auto& [id, clusters] : in.at("item_clusters").items()) {
        auto v = clusters.get<std::vector<std::size_t>>();
        t.item_clusters[id] = std::set<std::size_t>(v.begin(), v.end());
    }
    for (const auto& [id, c] : in.at("user_cluster").items()) {
        t.user_cluster[id] = c.get<std::size_t>();
    }
    auto tails = in.at("tail_users").get<std::vector<std::string>>();
    t.tail_users = std::set<std::string>(tails.begin(), tails.end());
    t.rings = in.at("rings").get<std::vector<std::vector<std::string>>>();
    return t;
}

OracleScorer make_truth_scorer(const SyntheticTruth& truth, const Catalog& catalog,
                               std::size_t prior_window) {
    auto title_to_item = std::make_shared<std::unordered_map<std::string, std::string>>();
    for (const auto& it : catalog.items()) {
        title_to_item->emplace(it.title, it.item_id);
    }
    // snapshot the truth so the scorer owns its data
    auto truth_copy = std::make_shared<SyntheticTruth>(truth);

    return [title_to_item, truth_copy, prior_window](const PromptView& view) {
        std::vector<double> scores(view.candidate_titles.size(), -1e9);
        auto item_of = [&](const std::string& title) -> std::string {
            auto it = title_to_item->find(title);
            return it == title_to_item->end() ? std::string() : it->second;
        };

        std::vector<std::string> history_items;
        for (const auto& t : view.history_titles) {
            const std::string id = item_of(t);
            if (!id.empty()) history_items.push_back(id);
        }

        // latent interest: the tagged user's true cluster when known,
        // otherwise a majority vote over the visible history
        std::size_t cluster = 0;
        auto uit = truth_copy->user_cluster.find(view.user_id);
        if (uit != truth_copy->user_cluster.end()) {
            cluster = uit->second;
        } else {
            std::map<std::size_t, std::size_t> votes;
            for (const auto& id : history_items) {
                auto it = truth_copy->item_clusters.find(id);
                if (it == truth_copy->item_clusters.end()) continue;
                for (std::size_t c : it->second) ++votes[c];
            }
            std::size_t best_votes = 0;
            for (const auto& [c, n] : votes) {
                if (n > best_votes) {
                    best_votes = n;
                    cluster = c;
                }
            }
        }
        if (cluster >= truth_copy->rings.size()) return scores;
        const auto& ring = truth_copy->rings[cluster];
        std::unordered_map<std::string, std::size_t> pos;
        for (std::size_t i = 0; i < ring.size(); ++i) pos[ring[i]] = i;

        // anchor: last history line. Prior selection renders newest-first, so
        // the last line is the oldest visible item; masked-item inference
        // renders oldest-first, so it is the most recent context item.
        std::string anchor;
        if (!history_items.empty()) anchor = history_items.back();
        const bool predecessors = view.kind == "select-priors";

        for (std::size_t i = 0; i < view.candidate_titles.size(); ++i) {
            const std::string id = item_of(view.candidate_titles[i]);
            if (id.empty()) continue;
            auto cit = truth_copy->item_clusters.find(id);
            const bool in_cluster =
                cit != truth_copy->item_clusters.end() && cit->second.count(cluster);
            if (!in_cluster) {
                scores[i] = -1000.0;
                continue;
            }
            auto pa = anchor.empty() ? pos.end() : pos.find(anchor);
            auto pc = pos.find(id);
            double dist = 0.0;
            if (pa != pos.end() && pc != pos.end()) {
                const std::size_t n = ring.size();
                dist = predecessors
                           ? static_cast<double>((pa->second + n - pc->second) % n)
                           : static_cast<double>((pc->second + n - pa->second) % n);
            }
            if (predecessors) {
                // the nearest `prior_window` predecessors are the plausible
                // earlier walk; rank them farthest first so the selection
                // reads in timeline order once prepended
                if (dist >= 1.0 && dist <= static_cast<double>(prior_window)) {
                    scores[i] = 1000.0 + dist;
                } else {
                    scores[i] = 900.0 - dist;
                }
            } else {
                scores[i] = 1000.0 - dist;
            }
        }
        return scores;
    };
}

}  // namespace llmser
