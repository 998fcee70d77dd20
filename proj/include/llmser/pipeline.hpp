#pragma once

#include "llmser/backbone.hpp"
#include "llmser/catalog.hpp"
#include "llmser/embed.hpp"
#include "llmser/evalx.hpp"
#include "llmser/llmio.hpp"

#include <nlohmann/json.hpp>

#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace llmser {

// Ablation switches; each one disables a single component so every variant is
// one flag away from the full run.
struct AblationFlags {
    bool no_ccg = false;     // candidate pool drawn uniformly instead of generator-ranked
    bool no_snf = false;     // take top-M of the pool, no semantic filtering
    bool no_arv = false;     // skip validation, every alpha = 1
    bool no_rcs = false;     // reason pool drawn uniformly
    bool no_reason = false;  // masked-item prediction = reason-pool rank 1
    bool no_wd = false;      // alpha = omega for all users (decay disabled)
};

struct PipelineConfig {
    std::uint64_t seed = 42;
    std::string work_dir = "runs/out";

    std::string interactions_path;
    std::string items_path;
    std::size_t min_interactions = 1;

    BackboneConfig backbone;  // seed field is filled per stage from `seed`

    std::size_t candidate_pool_size = 20;  // N
    std::size_t reason_pool_size = 10;     // H
    std::size_t pseudo_items = 12;         // M

    double beta = 0.5;
    int tail_threshold = 3;

    std::string llm_provider = "mock-first";  // mock-first | synthetic-oracle | http
    LLMConfig llm;
    std::string truth_path;   // synthetic-oracle provider
    bool adversarial = false; // invert the oracle ranking

    std::string embedder_provider = "trigram";  // trigram | http
    LLMConfig embedder_http;

    GroupingConfig grouping;

    std::vector<std::size_t> eval_ks = {10, 20};
    bool emit_csv = false;
    // pseudo items join a user's evaluation context only when the training
    // weight cleared this gate
    double context_alpha_gate = 0.5;

    AblationFlags ablation;

    static PipelineConfig from_json(const nlohmann::json& j);
    static PipelineConfig from_file(const std::string& path);
    nlohmann::json to_json() const;
    void apply_override(const std::string& key_eq_value);
    void validate() const;

    // digest over semantic fields only (paths excluded), so reports from
    // different working directories still compare byte-for-byte
    std::string semantic_digest() const;

    // artifact locations under work_dir
    std::string catalog_path() const;
    std::string histogram_path() const;
    std::string ccg_path() const;
    std::string rcs_path() const;
    std::string augmented_path() const;
    std::string validated_path() const;
    std::string alphas_path() const;
    std::string model_path(const std::string& mode) const;
    std::string metrics_path(const std::string& mode) const;
    std::string manifest_path(const std::string& stage) const;
    std::string resolved_cache_path() const;
};

// Builds the configured client (mock-first, synthetic-oracle or http), wrapped
// in the shared response cache and concurrency bound.
std::shared_ptr<LLMClient> make_pipeline_llm(const PipelineConfig& cfg);
std::unique_ptr<Embedder> make_pipeline_embedder(const PipelineConfig& cfg);

// Runs one stage; `mode` selects the model for train/evaluate ("llmser" or
// "none"). Returns the manifest. llm_override replaces the configured client
// as-is (no extra caching).
nlohmann::json run_stage(const PipelineConfig& cfg, const std::string& stage,
                         const std::string& mode = "llmser", LLMClient* llm_override = nullptr);

struct PipelineOutcome {
    MetricsReport baseline;
    MetricsReport llmser;
    EvalResult baseline_result;
    EvalResult llmser_result;
    nlohmann::json comparison;
    std::string table;  // printable summary
};

PipelineOutcome run_pipeline(const PipelineConfig& cfg, LLMClient* llm_override = nullptr);

// fnv1a64 of a file's bytes, hex-encoded; used in stage manifests.
std::string file_digest(const std::string& path);

}  // namespace llmser
