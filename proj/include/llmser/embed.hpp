#pragma once

#include <memory>
#include <string>
#include <vector>

namespace llmser {

// Title embedding provider. Implementations must be deterministic per input
// and safely callable from concurrent validation tasks.
class Embedder {
public:
    virtual ~Embedder() = default;
    // Returns an L2-normalized vector; the zero vector only when the input has
    // no features. Empty (post-trim) text is an error.
    virtual std::vector<double> embed_title(const std::string& text) const = 0;
    virtual std::size_t dimension() const = 0;
    virtual std::string name() const = 0;
};

// Offline fallback: counts of case-folded character trigrams hashed into a
// fixed number of bins, L2-normalized. Exists for determinism, not semantic
// fidelity.
class TrigramEmbedder final : public Embedder {
public:
    static constexpr std::size_t kDimension = 1024;
    static constexpr std::uint64_t kHashSeed = 0x6c6c6d736572ull;  // fixed, documented

    std::vector<double> embed_title(const std::string& text) const override;
    std::size_t dimension() const override { return kDimension; }
    std::string name() const override { return "trigram"; }
};

// Inner-product cosine. Zero-norm operands yield 0 so degenerate titles never
// fault validation.
double cosine(const std::vector<double>& a, const std::vector<double>& b);

std::unique_ptr<Embedder> make_trigram_embedder();

struct LLMConfig;

// Posts {"model", "input"} to <endpoint_url>/v1/embeddings with the same
// retry/backoff policy as the completion client; vectors are L2-normalized on
// receipt.
std::unique_ptr<Embedder> make_remote_embedder(const LLMConfig& cfg);

}  // namespace llmser
