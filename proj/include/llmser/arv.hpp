#pragma once

#include "llmser/backbone.hpp"
#include "llmser/catalog.hpp"
#include "llmser/embed.hpp"
#include "llmser/llmio.hpp"
#include "llmser/sia.hpp"

#include <optional>
#include <string>
#include <vector>

namespace llmser {

// Masked validation instance: the newest real interaction is held out as
// ground truth, the remaining context keeps the pseudo-prior items.
struct MaskedInstance {
    std::string user_id;
    std::vector<std::string> masked_context;
    std::string masked_item;                // the ground truth
    std::optional<std::string> prediction;  // filled by reasoning
    std::optional<double> reliability;
};

MaskedInstance mask_sequence(const AugmentedSequence& a);

// Top-H of the forward model given the masked context, context items excluded.
CandidatePool generate_reason_pool(const TrainedBackbone& rcs, const Catalog& catalog,
                                   const MaskedInstance& m, std::size_t h);

std::string build_arv_prompt(const std::vector<std::string>& context_titles,
                             const CandidatePool& pool);

struct ReasonResult {
    std::string item_id;
    bool fallback_used = false;
};

// Single-item inference over the reason pool; same parser family as the
// selection path with want = 1, falling back to the rank-1 pool item.
ReasonResult reason_masked_item(LLMClient& llm, const Catalog& catalog, const MaskedInstance& m,
                                const CandidatePool& pool);

// omega = max(0, cos(embed(a), embed(b))); identical titles score exactly 1.
double score_reliability(const Embedder& embedder, const std::string& predicted_title,
                         const std::string& masked_title);

// Validation record as written to the validation output file.
struct ValidationRecord {
    std::string user_id;
    std::string masked_item;
    std::optional<std::string> predicted_item;
    double omega = 0.0;
    bool fallback_used = false;
};

void write_validation_records(const std::string& path, std::vector<ValidationRecord> records);
std::vector<ValidationRecord> read_validation_records(const std::string& path);

}  // namespace llmser
