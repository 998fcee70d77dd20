#pragma once

#include "llmser/backbone.hpp"
#include "llmser/catalog.hpp"
#include "llmser/llmio.hpp"

#include <optional>
#include <string>
#include <vector>

namespace llmser {

struct PoolEntry {
    std::string item_id;
    std::string title;
    int rank = 0;  // 1-based
};

// Ranked candidate list for one user; never contains items from the user's
// own history.
struct CandidatePool {
    std::string user_id;
    std::vector<PoolEntry> entries;

    std::size_t size() const { return entries.size(); }
    std::vector<std::string> item_ids() const;
};

// Pseudo-prior items prepended to a user's history. reliability/weight are
// filled by validation and training respectively.
struct AugmentedSequence {
    std::string user_id;
    std::vector<std::string> pseudo_items;
    UserSequence original;
    std::vector<std::string> combined;
    std::optional<double> reliability;  // omega
    std::optional<double> weight;       // alpha
};

// Top-N of the reverse-trained generator for the items preceding the user's
// earliest interaction, with the user's own history excluded.
CandidatePool generate_candidate_pool(const TrainedBackbone& ccg, const Catalog& catalog,
                                      const UserSequence& s, std::size_t n);

// Four-part selection prompt: task description naming the count, history
// titles (most recent first), candidate titles by rank, output format.
std::string build_sia_prompt(const std::vector<std::string>& history_titles_recent_first,
                             const CandidatePool& pool, std::size_t m);

struct SelectionResult {
    std::vector<std::string> item_ids;  // selection order, first = earliest pseudo item
    bool fallback_used = false;
    std::string prompt_hash;
};

// LLM filtering of the candidate pool down to m items. Unparseable or short
// responses fall back to pool rank order.
SelectionResult filter_candidates(LLMClient& llm, const Catalog& catalog, const UserSequence& s,
                                  const CandidatePool& pool, std::size_t m);

AugmentedSequence augment_sequence(const Catalog& catalog, const UserSequence& s,
                                   const std::vector<std::string>& pseudo_items);

// Augmentation record as written to the augmentation output file.
struct AugmentRecord {
    std::string user_id;
    std::vector<std::string> pseudo_items;
    std::vector<std::string> pool;
    std::string prompt_hash;
    bool fallback_used = false;
};

void write_augment_records(const std::string& path, std::vector<AugmentRecord> records);
std::vector<AugmentRecord> read_augment_records(const std::string& path);

}  // namespace llmser
