#include "llmser/sia.hpp"

#include "llmser/common.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_set>

namespace llmser {

using nlohmann::json;

std::vector<std::string> CandidatePool::item_ids() const {
    std::vector<std::string> out;
    out.reserve(entries.size());
    for (const auto& e : entries) out.push_back(e.item_id);
    return out;
}

CandidatePool generate_candidate_pool(const TrainedBackbone& ccg, const Catalog& catalog,
                                      const UserSequence& s, std::size_t n) {
    if (ccg.direction() != Direction::Reverse) {
        throw ConfigError("candidate generator must be reverse-direction");
    }
    std::set<std::string> exclude(s.items.begin(), s.items.end());
    const std::size_t rankable = ccg.vocab_size() - exclude.size();
    if (n < 1 || n > rankable) {
        throw ConfigError("candidate pool size " + std::to_string(n) + " outside [1, " +
                          std::to_string(rankable) + "]");
    }
    // score_all reverses internally for reverse models, so the encoder consumes
    // the history newest-first and predicts the item before the oldest one
    auto ids = ccg.top_k(s.items, n, exclude);
    CandidatePool pool;
    pool.user_id = s.user_id;
    pool.entries.reserve(ids.size());
    int rank = 1;
    for (auto& id : ids) {
        pool.entries.push_back(PoolEntry{id, catalog.title(id), rank++});
    }
    return pool;
}

std::string build_sia_prompt(const std::vector<std::string>& history_titles_recent_first,
                             const CandidatePool& pool, std::size_t m) {
    std::ostringstream out;
    out << "Task: a user's interaction history is listed below, most recent first. "
        << "From the candidate list, select the " << m
        << " candidates that best match the user's interests as likely earlier interactions "
        << "of this user, ordered from earliest to latest.\n";
    out << "User: " << pool.user_id << "\n";
    out << "User history (most recent first):\n";
    int i = 1;
    for (const auto& title : history_titles_recent_first) {
        if (trim(title).empty()) throw DataError("empty title in history");
        out << "His Item" << i++ << "_title: " << title << "\n";
    }
    out << "Candidates:\n";
    for (const auto& e : pool.entries) {
        if (trim(e.title).empty()) throw DataError("empty title in candidate pool");
        out << "Cand Item" << e.rank << "_title: " << e.title << "\n";
    }
    out << "Output format: a JSON array of exactly " << m
        << " distinct candidate indices between 1 and " << pool.size()
        << ", e.g. [2, 5]. Output the array only.\n";
    return out.str();
}

namespace {

std::string normalize_title(const std::string& s) {
    std::string out;
    out.reserve(s.size());
    for (unsigned char c : s) {
        if (std::isalnum(c)) {
            out.push_back(static_cast<char>(std::tolower(c)));
        } else if (std::isspace(c)) {
            if (!out.empty() && out.back() != ' ') out.push_back(' ');
        }
    }
    return trim(out);
}

std::size_t longest_common_substring(const std::string& a, const std::string& b) {
    if (a.empty() || b.empty()) return 0;
    std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
    std::size_t best = 0;
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j) {
            cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : 0;
            best = std::max(best, cur[j]);
        }
        std::swap(prev, cur);
    }
    return best;
}

// Secondary parse path: match response lines against pool titles, case-folded
// exact first, then longest common substring covering >= 80% of the shorter
// title.
void match_titles(const std::string& text, const CandidatePool& pool, std::size_t want,
                  std::vector<int>& picked) {
    std::set<int> used(picked.begin(), picked.end());
    std::vector<std::string> pool_norm;
    pool_norm.reserve(pool.size());
    for (const auto& e : pool.entries) pool_norm.push_back(normalize_title(e.title));

    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line) && picked.size() < want) {
        const std::string norm = normalize_title(line);
        if (norm.empty()) continue;
        for (std::size_t p = 0; p < pool_norm.size() && picked.size() < want; ++p) {
            const int rank = static_cast<int>(p) + 1;
            if (used.count(rank)) continue;
            bool matched = norm == pool_norm[p];
            if (!matched) {
                const std::size_t shorter = std::min(norm.size(), pool_norm[p].size());
                if (shorter >= 3) {
                    const std::size_t lcs = longest_common_substring(norm, pool_norm[p]);
                    matched = 5 * lcs >= 4 * shorter;
                }
            }
            if (matched) {
                used.insert(rank);
                picked.push_back(rank);
            }
        }
    }
}

}  // namespace

SelectionResult filter_candidates(LLMClient& llm, const Catalog& catalog, const UserSequence& s,
                                  const CandidatePool& pool, std::size_t m) {
    if (pool.size() < m || m < 1) {
        throw ConfigError("pool of " + std::to_string(pool.size()) + " cannot yield " +
                          std::to_string(m) + " selections");
    }
    std::vector<std::string> history_titles;
    const UserSequence rev = reverse_sequence(s);
    history_titles.reserve(rev.items.size());
    for (const auto& id : rev.items) history_titles.push_back(catalog.title(id));

    const std::string prompt = build_sia_prompt(history_titles, pool, m);
    const std::string response = llm.complete(prompt);

    std::vector<int> picked = extract_indices(response, static_cast<int>(pool.size()));
    if (picked.size() > m) picked.resize(m);
    if (picked.size() < m) match_titles(response, pool, m, picked);

    SelectionResult result;
    result.fallback_used = picked.size() < m;
    std::set<int> used(picked.begin(), picked.end());
    for (int rank = 1; picked.size() < m; ++rank) {
        if (used.insert(rank).second) picked.push_back(rank);
    }
    result.item_ids.reserve(m);
    for (int rank : picked) {
        result.item_ids.push_back(pool.entries[static_cast<std::size_t>(rank) - 1].item_id);
    }
    result.prompt_hash = to_hex(fnv1a64(prompt));
    return result;
}

AugmentedSequence augment_sequence(const Catalog& catalog, const UserSequence& s,
                                   const std::vector<std::string>& pseudo_items) {
    for (const auto& id : pseudo_items) {
        if (!catalog.item_index(id)) throw DataError("pseudo item not in catalog: " + id);
    }
    AugmentedSequence out;
    out.user_id = s.user_id;
    out.pseudo_items = pseudo_items;
    out.original = s;
    out.combined = pseudo_items;
    out.combined.insert(out.combined.end(), s.items.begin(), s.items.end());
    return out;
}

void write_augment_records(const std::string& path, std::vector<AugmentRecord> records) {
    std::sort(records.begin(), records.end(),
              [](const AugmentRecord& a, const AugmentRecord& b) { return a.user_id < b.user_id; });
    std::ofstream out(path);
    if (!out) throw DataError("cannot write augmentation file: " + path);
    for (const auto& r : records) {
        out << json{{"user_id", r.user_id},
                    {"pseudo_items", r.pseudo_items},
                    {"pool", r.pool},
                    {"prompt_hash", r.prompt_hash},
                    {"fallback_used", r.fallback_used}}
                   .dump()
            << "\n";
    }
}

std::vector<AugmentRecord> read_augment_records(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read augmentation file: " + path);
    std::vector<AugmentRecord> out;
    std::string line;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        json rec = json::parse(line);
        AugmentRecord r;
        r.user_id = rec.at("user_id").get<std::string>();
        r.pseudo_items = rec.at("pseudo_items").get<std::vector<std::string>>();
        r.pool = rec.at("pool").get<std::vector<std::string>>();
        r.prompt_hash = rec.at("prompt_hash").get<std::string>();
        r.fallback_used = rec.at("fallback_used").get<bool>();
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace llmser
