#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace llmser {

struct LLMConfig {
    std::string endpoint_url;        // base URL, e.g. http://127.0.0.1:8089
    std::string model_name = "glm-4-flash";
    double temperature = 0.0;        // 0 by default for reproducibility
    int max_retries = 3;             // retries after the first attempt
    double backoff_base = 0.25;      // seconds; doubles per retry
    int concurrency_limit = 1;       // in-flight remote calls
    std::string cache_path;          // empty disables caching
    std::string api_key_env = "LLMSER_API_KEY";

    void validate() const;
};

// Append-only response cache keyed by hash(model_name, prompt). Hits return
// byte-identical responses. The on-disk form is newline-delimited
// {"key": hex, "response": str}; duplicate keys are compacted on startup.
class ResponseCache {
public:
    explicit ResponseCache(std::string path);

    static std::string key_for(const std::string& model_name, const std::string& prompt);

    std::optional<std::string> lookup(const std::string& key) const;
    void store(const std::string& key, const std::string& response);
    std::size_t size() const;

private:
    std::string path_;
    mutable std::mutex mu_;
    std::map<std::string, std::string> entries_;
};

// Prompt-in, text-out completion client.
class LLMClient {
public:
    virtual ~LLMClient() = default;
    virtual std::string complete(const std::string& prompt) = 0;
    virtual std::string model_name() const = 0;
};

// Raw transport: returns response text or throws. Injected so retry behavior
// is testable without sockets; the default posts an OpenAI-style
// chat-completions body to <endpoint_url>/v1/chat/completions.
using Transport = std::function<std::string(const LLMConfig&, const std::string& prompt)>;

Transport make_http_transport();

// Remote client with exponential backoff. Attempt count = 1 + retries used.
class HttpLLMClient final : public LLMClient {
public:
    explicit HttpLLMClient(LLMConfig cfg, Transport transport = make_http_transport());

    std::string complete(const std::string& prompt) override;
    std::string model_name() const override { return cfg_.model_name; }
    int last_attempts() const { return last_attempts_; }

private:
    LLMConfig cfg_;
    Transport transport_;
    int last_attempts_ = 0;
};

// Wraps any client with the shared cache and the in-flight concurrency bound.
// Cache hits bypass both the bound and the inner client.
class CachingLLMClient final : public LLMClient {
public:
    CachingLLMClient(std::shared_ptr<LLMClient> inner, std::shared_ptr<ResponseCache> cache,
                     int concurrency_limit);

    std::string complete(const std::string& prompt) override;
    std::string model_name() const override { return inner_->model_name(); }

private:
    std::shared_ptr<LLMClient> inner_;
    std::shared_ptr<ResponseCache> cache_;
    int limit_;
    int in_flight_ = 0;
    std::mutex mu_;
    std::condition_variable cv_;
};

// --- structured-response parsing ---------------------------------------

// Pulls candidate indices out of a model response. Prefers the first
// bracketed integer list; otherwise falls back to every integer in the text.
// Keeps first occurrences, drops values outside [1, pool_size].
std::vector<int> extract_indices(const std::string& text, int pool_size);

// Total selection parse: up to `want` valid indices from the text, padded
// with the lowest unused indices so exactly `want` come back.
std::vector<int> parse_selection(const std::string& text, int pool_size, int want);

// --- deterministic test doubles -----------------------------------------

// Prompt view handed to oracle scorers. History/candidate titles appear in
// prompt order; `kind` names which prompt family produced the text.
struct PromptView {
    std::string kind;  // "select-priors" or "infer-masked"
    std::string user_id;
    std::vector<std::string> history_titles;
    std::vector<std::string> candidate_titles;
};

// Parses prompts built by build_sia_prompt / build_arv_prompt.
PromptView parse_prompt(const std::string& prompt);

// Always answers with ascending indices 1..list_len.
std::shared_ptr<LLMClient> make_mock_first_k(int list_len = 64);

// Scores candidates with the injected ground-truth function and answers with
// the full index ranking, best first. `invert` flips the ranking (adversarial).
using OracleScorer = std::function<std::vector<double>(const PromptView&)>;
std::shared_ptr<LLMClient> make_mock_oracle(OracleScorer scorer, bool invert = false);

// Replays scripted responses in order, repeating the last one; counts calls.
class ScriptedLLMClient final : public LLMClient {
public:
    explicit ScriptedLLMClient(std::vector<std::string> responses,
                               std::string model = "mock-scripted");
    std::string complete(const std::string& prompt) override;
    std::string model_name() const override { return model_; }
    int calls() const { return calls_.load(); }
    std::string last_prompt() const;

private:
    std::vector<std::string> responses_;
    std::string model_;
    std::atomic<int> calls_{0};
    mutable std::mutex mu_;
    std::string last_prompt_;
};

// Counts concurrent in-flight complete() calls; used to observe the bound.
class InstrumentedLLMClient final : public LLMClient {
public:
    InstrumentedLLMClient(std::shared_ptr<LLMClient> inner, double hold_seconds = 0.0);
    std::string complete(const std::string& prompt) override;
    std::string model_name() const override { return inner_->model_name(); }
    int max_in_flight() const { return max_in_flight_.load(); }
    int calls() const { return calls_.load(); }

private:
    std::shared_ptr<LLMClient> inner_;
    double hold_seconds_;
    std::atomic<int> in_flight_{0};
    std::atomic<int> max_in_flight_{0};
    std::atomic<int> calls_{0};
};

}  // namespace llmser
