#include "llmser/embed.hpp"

#include "llmser/common.hpp"
#include "llmser/llmio.hpp"
#include "llmser/rng.hpp"

#include <doctest.h>
#include <httplib.h>
#include <nlohmann/json.hpp>

#include <cmath>
#include <set>
#include <thread>

using namespace llmser;

namespace {

// independent oracle: enumerate case-folded trigrams and compute the count
// cosine directly
std::map<std::string, int> trigrams_of(std::string s) {
    for (auto& ch : s) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    std::map<std::string, int> out;
    if (s.size() < 3) return out;
    for (std::size_t i = 0; i + 3 <= s.size(); ++i) ++out[s.substr(i, 3)];
    return out;
}

double trigram_cosine_oracle(const std::string& a, const std::string& b) {
    auto ta = trigrams_of(a), tb = trigrams_of(b);
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (const auto& [k, v] : ta) {
        na += static_cast<double>(v) * v;
        auto it = tb.find(k);
        if (it != tb.end()) dot += static_cast<double>(v) * it->second;
    }
    for (const auto& [k, v] : tb) nb += static_cast<double>(v) * v;
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

std::string random_word(SeededRng& rng) {
    const std::size_t len = 1 + rng.below(12);
    std::string s;
    for (std::size_t i = 0; i < len; ++i) {
        s.push_back(static_cast<char>('a' + rng.below(26)));
    }
    return s;
}

}  // namespace

TEST_CASE("embedding is deterministic") {
    TrigramEmbedder e;
    CHECK(e.embed_title("red cotton shirt") == e.embed_title("red cotton shirt"));
}

TEST_CASE("single-trigram input has one nonzero bin and unit norm") {
    TrigramEmbedder e;
    auto v = e.embed_title("abc");
    int nonzero = 0;
    double norm2 = 0.0;
    for (double x : v) {
        if (x != 0.0) ++nonzero;
        norm2 += x * x;
    }
    CHECK(nonzero == 1);
    CHECK(std::abs(norm2 - 1.0) < 1e-9);
}

TEST_CASE("abcd vs bcde shared-trigram cosine is one half") {
    // trigram sets {abc, bcd} and {bcd, cde} overlap in exactly one of two
    TrigramEmbedder e;
    CHECK(cosine(e.embed_title("abcd"), e.embed_title("bcde")) == doctest::Approx(0.5).epsilon(1e-9));
}

TEST_CASE("hashed cosine matches the enumeration oracle on plural titles") {
    TrigramEmbedder e;
    const std::string a = "red cotton shirt", b = "red cotton shirts";
    const double expected = trigram_cosine_oracle(a, b);
    CHECK(cosine(e.embed_title(a), e.embed_title(b)) == doctest::Approx(expected).epsilon(1e-9));
}

TEST_CASE("disjoint trigram sets give zero cosine") {
    TrigramEmbedder e;
    CHECK(cosine(e.embed_title("aaaa"), e.embed_title("zzzz")) == doctest::Approx(0.0));
}

TEST_CASE("empty title is rejected; sub-trigram titles embed to zero vector") {
    TrigramEmbedder e;
    CHECK_THROWS_AS(e.embed_title("  "), DataError);
    auto v = e.embed_title("ab");
    for (double x : v) CHECK(x == 0.0);
}

TEST_CASE("cosine basics") {
    std::vector<double> x{1.0, 0.0}, y{0.0, 1.0}, nx{-1.0, 0.0};
    CHECK(cosine(x, x) == doctest::Approx(1.0));
    CHECK(cosine(x, y) == doctest::Approx(0.0));
    CHECK(cosine(x, nx) == doctest::Approx(-1.0));
    CHECK(cosine(std::vector<double>{0.0, 0.0}, x) == 0.0);
}

TEST_CASE("fallback embeddings: unit norm, symmetry, cosine in [0,1]") {
    TrigramEmbedder e;
    SeededRng rng(2024);
    for (int i = 0; i < 60; ++i) {
        const std::string a = random_word(rng) + " " + random_word(rng);
        const std::string b = random_word(rng);
        auto va = e.embed_title(a), vb = e.embed_title(b);
        double norm2 = 0.0;
        for (double x : va) norm2 += x * x;
        if (a.size() >= 3) CHECK(std::abs(norm2 - 1.0) < 1e-9);
        const double cab = cosine(va, vb), cba = cosine(vb, va);
        CHECK(cab == doctest::Approx(cba));
        CHECK(cab >= 0.0);
        CHECK(cab <= 1.0 + 1e-12);
        CHECK(cosine(va, va) == doctest::Approx(a.size() >= 3 ? 1.0 : 0.0));
    }
}

TEST_CASE("remote embedder round-trips through an embeddings endpoint") {
    httplib::Server srv;
    srv.Post("/v1/embeddings", [](const httplib::Request& req, httplib::Response& res) {
        auto body = nlohmann::json::parse(req.body);
        const std::string input = body.at("input").get<std::string>();
        // toy deterministic embedding: [len, 1]
        nlohmann::json out = {
            {"data", {{{"embedding", {static_cast<double>(input.size()), 1.0}}}}}};
        res.set_content(out.dump(), "application/json");
    });
    const int port = srv.bind_to_any_port("127.0.0.1");
    std::thread server([&] { srv.listen_after_bind(); });
    srv.wait_until_ready();

    LLMConfig cfg;
    cfg.endpoint_url = "http://127.0.0.1:" + std::to_string(port);
    cfg.model_name = "toy-embed";
    cfg.max_retries = 1;
    cfg.backoff_base = 0.0;
    auto embedder = make_remote_embedder(cfg);
    auto v = embedder->embed_title("abcd");
    REQUIRE(v.size() == 2);
    const double norm = std::sqrt(16.0 + 1.0);
    CHECK(v[0] == doctest::Approx(4.0 / norm));
    CHECK(v[1] == doctest::Approx(1.0 / norm));
    CHECK(embedder->dimension() == 2);

    srv.stop();
    server.join();
}
