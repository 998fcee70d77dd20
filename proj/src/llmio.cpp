#include "llmser/llmio.hpp"

#include "llmser/common.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

namespace llmser {

using nlohmann::json;

void LLMConfig::validate() const {
    if (temperature < 0.0) throw ConfigError("llm temperature must be >= 0");
    if (max_retries < 0) throw ConfigError("llm max_retries must be >= 0");
    if (backoff_base < 0.0) throw ConfigError("llm backoff_base must be >= 0");
    if (concurrency_limit < 1) throw ConfigError("llm concurrency_limit must be >= 1");
}

// --- cache ----------------------------------------------------------------

ResponseCache::ResponseCache(std::string path) : path_(std::move(path)) {
    if (path_.empty()) return;
    std::ifstream in(path_);
    if (!in) return;  // fresh cache
    std::string line;
    bool duplicates = false;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        json rec = json::parse(line, nullptr, false);
        if (rec.is_discarded() || !rec.contains("key") || !rec.contains("response")) continue;
        auto [it, inserted] =
            entries_.insert_or_assign(rec["key"].get<std::string>(), rec["response"].get<std::string>());
        (void)it;
        if (!inserted) duplicates = true;
    }
    if (duplicates) {  // compaction
        std::ofstream out(path_, std::ios::trunc);
        for (const auto& [k, v] : entries_) {
            out << json{{"key", k}, {"response", v}}.dump() << "\n";
        }
    }
}

std::string ResponseCache::key_for(const std::string& model_name, const std::string& prompt) {
    std::uint64_t h = fnv1a64(model_name);
    h = fnv1a64("\x1f", h);
    h = fnv1a64(prompt, h);
    return to_hex(h);
}

std::optional<std::string> ResponseCache::lookup(const std::string& key) const {
    std::lock_guard lock(mu_);
    auto it = entries_.find(key);
    if (it == entries_.end()) return std::nullopt;
    return it->second;
}

void ResponseCache::store(const std::string& key, const std::string& response) {
    std::lock_guard lock(mu_);
    auto [it, inserted] = entries_.emplace(key, response);
    (void)it;
    if (!inserted) return;  // identical by construction
    if (!path_.empty()) {
        std::ofstream out(path_, std::ios::app);
        out << json{{"key", key}, {"response", response}}.dump() << "\n";
    }
}

std::size_t ResponseCache::size() const {
    std::lock_guard lock(mu_);
    return entries_.size();
}

// --- transport ------------------------------------------------------------

Transport make_http_transport() {
    return [](const LLMConfig& cfg, const std::string& prompt) -> std::string {
        httplib::Client client(cfg.endpoint_url);
        client.set_read_timeout(120, 0);
        httplib::Headers headers;
        if (!cfg.api_key_env.empty()) {
            if (const char* key = std::getenv(cfg.api_key_env.c_str())) {
                headers.emplace("Authorization", std::string("Bearer ") + key);
            }
        }
        json body = {{"model", cfg.model_name},
                     {"messages", json::array({json{{"role", "user"}, {"content", prompt}}})},
                     {"temperature", cfg.temperature}};
        auto res = client.Post("/v1/chat/completions", headers, body.dump(), "application/json");
        if (!res) {
            throw TransportError("connection to " + cfg.endpoint_url + " failed", 1);
        }
        if (res->status < 200 || res->status >= 300) {
            throw TransportError("HTTP " + std::to_string(res->status) + " from " + cfg.endpoint_url, 1);
        }
        json parsed = json::parse(res->body, nullptr, false);
        if (parsed.is_discarded() || !parsed.contains("choices") || parsed["choices"].empty()) {
            throw TransportError("malformed completion body from " + cfg.endpoint_url, 1);
        }
        return parsed["choices"][0]["message"]["content"].get<std::string>();
    };
}

HttpLLMClient::HttpLLMClient(LLMConfig cfg, Transport transport)
    : cfg_(std::move(cfg)), transport_(std::move(transport)) {
    cfg_.validate();
}

std::string HttpLLMClient::complete(const std::string& prompt) {
    if (prompt.empty()) throw ConfigError("empty prompt");
    std::string last_error;
    for (int attempt = 1; attempt <= cfg_.max_retries + 1; ++attempt) {
        last_attempts_ = attempt;
        try {
            return transport_(cfg_, prompt);
        } catch (const std::exception& e) {
            last_error = e.what();
        }
        if (attempt <= cfg_.max_retries && cfg_.backoff_base > 0.0) {
            const double delay = cfg_.backoff_base * static_cast<double>(1ull << (attempt - 1));
            std::this_thread::sleep_for(std::chrono::duration<double>(delay));
        }
    }
    throw TransportError("completion failed after " + std::to_string(last_attempts_) +
                             " attempts: " + last_error,
                         last_attempts_);
}

CachingLLMClient::CachingLLMClient(std::shared_ptr<LLMClient> inner,
                                   std::shared_ptr<ResponseCache> cache, int concurrency_limit)
    : inner_(std::move(inner)), cache_(std::move(cache)), limit_(std::max(1, concurrency_limit)) {}

std::string CachingLLMClient::complete(const std::string& prompt) {
    const std::string key = ResponseCache::key_for(inner_->model_name(), prompt);
    if (cache_) {
        if (auto hit = cache_->lookup(key)) return *hit;
    }
    {
        std::unique_lock lock(mu_);
        cv_.wait(lock, [&] { return in_flight_ < limit_; });
        ++in_flight_;
    }
    std::string response;
    try {
        response = inner_->complete(prompt);
    } catch (...) {
        std::lock_guard lock(mu_);
        --in_flight_;
        cv_.notify_one();
        throw;
    }
    {
        std::lock_guard lock(mu_);
        --in_flight_;
    }
    cv_.notify_one();
    if (cache_) cache_->store(key, response);  // persisted before return
    return response;
}

// --- parsing ----------------------------------------------------------------

namespace {

std::vector<int> ints_in(std::string_view text, int pool_size) {
    std::vector<int> out;
    std::set<int> seen;
    std::size_t i = 0;
    while (i < text.size()) {
        if (std::isdigit(static_cast<unsigned char>(text[i]))) {
            std::size_t j = i;
            while (j < text.size() && std::isdigit(static_cast<unsigned char>(text[j]))) ++j;
            if (j - i <= 9) {
                int v = std::stoi(std::string(text.substr(i, j - i)));
                if (v >= 1 && v <= pool_size && seen.insert(v).second) out.push_back(v);
            }
            i = j;
        } else {
            ++i;
        }
    }
    return out;
}

}  // namespace

std::vector<int> extract_indices(const std::string& text, int pool_size) {
    // Prefer the first bracketed list that actually contains integers.
    std::size_t pos = 0;
    while ((pos = text.find('[', pos)) != std::string::npos) {
        std::size_t close = text.find(']', pos);
        if (close == std::string::npos) break;
        auto inside = std::string_view(text).substr(pos + 1, close - pos - 1);
        bool has_digit = std::any_of(inside.begin(), inside.end(), [](char c) {
            return std::isdigit(static_cast<unsigned char>(c));
        });
        if (has_digit) {
            auto in_brackets = ints_in(inside, pool_size);
            if (!in_brackets.empty()) return in_brackets;
        }
        pos = close + 1;
    }
    return ints_in(text, pool_size);
}

std::vector<int> parse_selection(const std::string& text, int pool_size, int want) {
    if (want < 1 || want > pool_size) {
        throw ConfigError("parse_selection: want must be in [1, pool_size]");
    }
    std::vector<int> picked = extract_indices(text, pool_size);
    if (static_cast<int>(picked.size()) > want) picked.resize(static_cast<std::size_t>(want));
    std::set<int> used(picked.begin(), picked.end());
    for (int idx = 1; static_cast<int>(picked.size()) < want; ++idx) {
        if (used.insert(idx).second) picked.push_back(idx);
    }
    return picked;
}

// --- prompt view / mocks ------------------------------------------------------

PromptView parse_prompt(const std::string& prompt) {
    PromptView view;
    if (prompt.find("earlier interactions") != std::string::npos) {
        view.kind = "select-priors";
    } else if (prompt.find("masked item") != std::string::npos) {
        view.kind = "infer-masked";
    }
    std::istringstream in(prompt);
    std::string line;
    while (std::getline(in, line)) {
        auto grab = [&](const char* prefix) -> std::optional<std::string> {
            const std::string_view p(prefix);
            if (line.rfind(prefix, 0) != 0) return std::nullopt;
            auto colon = line.find(": ", p.size());
            if (colon == std::string::npos) return std::nullopt;
            return line.substr(colon + 2);
        };
        if (auto t = grab("His Item")) {
            view.history_titles.push_back(*t);
        } else if (auto t = grab("Cand Item")) {
            view.candidate_titles.push_back(*t);
        } else if (line.rfind("User: ", 0) == 0) {
            view.user_id = line.substr(6);
        }
    }
    return view;
}

namespace {

class FirstKLLMClient final : public LLMClient {
public:
    explicit FirstKLLMClient(int list_len) : list_len_(list_len) {}
    std::string complete(const std::string&) override {
        std::ostringstream out;
        out << "[";
        for (int i = 1; i <= list_len_; ++i) {
            if (i > 1) out << ", ";
            out << i;
        }
        out << "]";
        return out.str();
    }
    std::string model_name() const override { return "mock-first"; }

private:
    int list_len_;
};

class OracleLLMClient final : public LLMClient {
public:
    OracleLLMClient(OracleScorer scorer, bool invert)
        : scorer_(std::move(scorer)), invert_(invert) {}

    std::string complete(const std::string& prompt) override {
        PromptView view = parse_prompt(prompt);
        std::vector<double> scores = scorer_(view);
        std::vector<int> order(view.candidate_titles.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i) + 1;
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
            double sa = a - 1 < static_cast<int>(scores.size()) ? scores[a - 1] : 0.0;
            double sb = b - 1 < static_cast<int>(scores.size()) ? scores[b - 1] : 0.0;
            if (invert_) return sa < sb;
            return sa > sb;
        });
        std::ostringstream out;
        out << "[";
        for (std::size_t i = 0; i < order.size(); ++i) {
            if (i) out << ", ";
            out << order[i];
        }
        out << "]";
        return out.str();
    }
    std::string model_name() const override { return invert_ ? "mock-oracle-adversarial" : "mock-oracle"; }

private:
    OracleScorer scorer_;
    bool invert_;
};

}  // namespace

std::shared_ptr<LLMClient> make_mock_first_k(int list_len) {
    return std::make_shared<FirstKLLMClient>(list_len);
}

std::shared_ptr<LLMClient> make_mock_oracle(OracleScorer scorer, bool invert) {
    return std::make_shared<OracleLLMClient>(std::move(scorer), invert);
}

ScriptedLLMClient::ScriptedLLMClient(std::vector<std::string> responses, std::string model)
    : responses_(std::move(responses)), model_(std::move(model)) {
    if (responses_.empty()) responses_.push_back("");
}

std::string ScriptedLLMClient::complete(const std::string& prompt) {
    const int n = calls_.fetch_add(1);
    {
        std::lock_guard lock(mu_);
        last_prompt_ = prompt;
    }
    const std::size_t i = std::min(static_cast<std::size_t>(n), responses_.size() - 1);
    return responses_[i];
}

std::string ScriptedLLMClient::last_prompt() const {
    std::lock_guard lock(mu_);
    return last_prompt_;
}

InstrumentedLLMClient::InstrumentedLLMClient(std::shared_ptr<LLMClient> inner, double hold_seconds)
    : inner_(std::move(inner)), hold_seconds_(hold_seconds) {}

std::string InstrumentedLLMClient::complete(const std::string& prompt) {
    const int now = in_flight_.fetch_add(1) + 1;
    int prev = max_in_flight_.load();
    while (now > prev && !max_in_flight_.compare_exchange_weak(prev, now)) {
    }
    calls_.fetch_add(1);
    if (hold_seconds_ > 0.0) {
        std::this_thread::sleep_for(std::chrono::duration<double>(hold_seconds_));
    }
    std::string out = inner_->complete(prompt);
    in_flight_.fetch_sub(1);
    return out;
}

}  // namespace llmser
