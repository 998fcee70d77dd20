#pragma once

#include "llmser/catalog.hpp"
#include "llmser/llmio.hpp"

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace llmser {

// Latent-interest Markov corpus. Items belong to themed clusters; each cluster
// walks a ring over its exclusive items plus the items it shares with the
// neighboring clusters, so a single shared item is ambiguous without more
// context. A designated tail cohort keeps only the last 1-3 interactions of
// its true sequence visible.
struct SyntheticConfig {
    std::size_t num_users = 200;
    std::size_t num_clusters = 4;
    std::size_t exclusive_per_cluster = 11;
    std::size_t shared_per_cluster = 4;  // shared with the next cluster
    std::size_t true_len_min = 8;
    std::size_t true_len_max = 12;
    double tail_fraction = 0.6;
    std::size_t tail_visible_min = 1;
    std::size_t tail_visible_max = 3;
    double ring_follow_prob = 0.75;
    std::uint64_t seed = 7;

    std::size_t num_items() const {
        return num_clusters * (exclusive_per_cluster + shared_per_cluster);
    }
};

struct SyntheticTruth {
    std::map<std::string, std::set<std::size_t>> item_clusters;  // shared items map to two
    std::map<std::string, std::size_t> user_cluster;
    std::set<std::string> tail_users;
    // ring position per cluster: cluster -> ordered item ids
    std::vector<std::vector<std::string>> rings;

    void save(const std::string& path) const;
    static SyntheticTruth load(const std::string& path);
};

struct SyntheticData {
    std::vector<Item> items;
    std::vector<Interaction> interactions;
    SyntheticTruth truth;
};

SyntheticData generate_synthetic(const SyntheticConfig& cfg);

// Writes items.jsonl, interactions.jsonl and truth.json under dir.
void write_synthetic(const SyntheticData& data, const std::string& dir);

// Ground-truth scorer for the oracle mock: prefers candidates from the user's
// latent cluster (majority-vote fallback when the prompt names no known user).
// Masked-item inference ranks nearer ring successors first; prior selection
// ranks the nearest `prior_window` predecessors farthest-first so the chosen
// items read in timeline order once prepended.
OracleScorer make_truth_scorer(const SyntheticTruth& truth, const Catalog& catalog,
                               std::size_t prior_window = 12);

}  // namespace llmser
