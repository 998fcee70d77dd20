#include "llmser/embed.hpp"

#include "llmser/common.hpp"
#include "llmser/llmio.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <cctype>
#include <chrono>
#include <cmath>
#include <mutex>
#include <stdexcept>
#include <thread>

namespace llmser {

std::vector<double> TrigramEmbedder::embed_title(const std::string& text) const {
    if (trim(text).empty()) throw DataError("cannot embed empty title");
    std::string folded;
    folded.reserve(text.size());
    for (unsigned char c : text) {
        folded.push_back(static_cast<char>(std::tolower(c)));
    }
    std::vector<double> v(kDimension, 0.0);
    if (folded.size() >= 3) {
        for (std::size_t i = 0; i + 3 <= folded.size(); ++i) {
            std::uint64_t h = fnv1a64(std::string_view(folded).substr(i, 3),
                                      kFnvOffset ^ kHashSeed);
            v[h % kDimension] += 1.0;
        }
    }
    double norm2 = 0.0;
    for (double x : v) norm2 += x * x;
    if (norm2 > 0.0) {
        const double inv = 1.0 / std::sqrt(norm2);
        for (double& x : v) x *= inv;
    }
    return v;
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw std::invalid_argument("cosine: dimension mismatch");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

std::unique_ptr<Embedder> make_trigram_embedder() {
    return std::make_unique<TrigramEmbedder>();
}

namespace {

class RemoteEmbedder final : public Embedder {
public:
    explicit RemoteEmbedder(const LLMConfig& cfg) : cfg_(cfg) { cfg_.validate(); }

    std::vector<double> embed_title(const std::string& text) const override {
        if (trim(text).empty()) throw DataError("cannot embed empty title");
        const std::string body = embed_request_body(cfg_, text);
        std::string last_error;
        int attempts = 0;
        for (int attempt = 1; attempt <= cfg_.max_retries + 1; ++attempt) {
            attempts = attempt;
            try {
                auto v = post_embedding(cfg_, body);
                double norm2 = 0.0;
                for (double x : v) norm2 += x * x;
                if (norm2 > 0.0) {
                    const double inv = 1.0 / std::sqrt(norm2);
                    for (double& x : v) x *= inv;
                }
                {
                    std::lock_guard lock(mu_);
                    if (dim_ == 0) dim_ = v.size();
                }
                return v;
            } catch (const std::exception& e) {
                last_error = e.what();
            }
            if (attempt <= cfg_.max_retries && cfg_.backoff_base > 0.0) {
                const double delay = cfg_.backoff_base * static_cast<double>(1ull << (attempt - 1));
                std::this_thread::sleep_for(std::chrono::duration<double>(delay));
            }
        }
        throw TransportError("embedding failed after " + std::to_string(attempts) +
                                 " attempts: " + last_error,
                             attempts);
    }

    std::size_t dimension() const override {
        std::lock_guard lock(mu_);
        return dim_;
    }
    std::string name() const override { return "http:" + cfg_.model_name; }

private:
    static std::string embed_request_body(const LLMConfig& cfg, const std::string& text);
    static std::vector<double> post_embedding(const LLMConfig& cfg, const std::string& body);

    LLMConfig cfg_;
    mutable std::mutex mu_;
    mutable std::size_t dim_ = 0;
};

std::string RemoteEmbedder::embed_request_body(const LLMConfig& cfg, const std::string& text) {
    return nlohmann::json{{"model", cfg.model_name}, {"input", text}}.dump();
}

std::vector<double> RemoteEmbedder::post_embedding(const LLMConfig& cfg, const std::string& body) {
    httplib::Client client(cfg.endpoint_url);
    client.set_read_timeout(120, 0);
    httplib::Headers headers;
    if (!cfg.api_key_env.empty()) {
        if (const char* key = std::getenv(cfg.api_key_env.c_str())) {
            headers.emplace("Authorization", std::string("Bearer ") + key);
        }
    }
    auto res = client.Post("/v1/embeddings", headers, body, "application/json");
    if (!res) throw TransportError("connection to " + cfg.endpoint_url + " failed", 1);
    if (res->status < 200 || res->status >= 300) {
        throw TransportError("HTTP " + std::to_string(res->status) + " from " + cfg.endpoint_url, 1);
    }
    auto parsed = nlohmann::json::parse(res->body, nullptr, false);
    if (parsed.is_discarded() || !parsed.contains("data") || parsed["data"].empty()) {
        throw TransportError("malformed embedding body from " + cfg.endpoint_url, 1);
    }
    return parsed["data"][0]["embedding"].get<std::vector<double>>();
}

}  // namespace

std::unique_ptr<Embedder> make_remote_embedder(const LLMConfig& cfg) {
    return std::make_unique<RemoteEmbedder>(cfg);
}

}  // namespace llmser
