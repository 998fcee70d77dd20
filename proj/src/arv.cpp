#include "llmser/arv.hpp"

#include "llmser/common.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

namespace llmser {

using nlohmann::json;

MaskedInstance mask_sequence(const AugmentedSequence& a) {
    if (a.original.items.empty()) throw DataError("cannot mask an empty sequence");
    MaskedInstance m;
    m.user_id = a.user_id;
    m.masked_context = a.pseudo_items;
    m.masked_context.insert(m.masked_context.end(), a.original.items.begin(),
                            a.original.items.end() - 1);
    m.masked_item = a.original.items.back();
    return m;
}

CandidatePool generate_reason_pool(const TrainedBackbone& rcs, const Catalog& catalog,
                                   const MaskedInstance& m, std::size_t h) {
    if (rcs.direction() != Direction::Forward) {
        throw ConfigError("reason candidate selector must be forward-direction");
    }
    if (m.masked_context.empty()) throw DataError("empty context");
    std::set<std::string> exclude(m.masked_context.begin(), m.masked_context.end());
    const std::size_t rankable = rcs.vocab_size() - exclude.size();
    if (h < 1 || h > rankable) {
        throw ConfigError("reason pool size " + std::to_string(h) + " outside [1, " +
                          std::to_string(rankable) + "]");
    }
    auto ids = rcs.top_k(m.masked_context, h, exclude);
    CandidatePool pool;
    pool.user_id = m.user_id;
    pool.entries.reserve(ids.size());
    int rank = 1;
    for (auto& id : ids) {
        pool.entries.push_back(PoolEntry{id, catalog.title(id), rank++});
    }
    return pool;
}

std::string build_arv_prompt(const std::vector<std::string>& context_titles,
                             const CandidatePool& pool) {
    std::ostringstream out;
    out << "Task: a user's interaction history is listed below in order, with the most "
        << "recent interaction masked out. From the candidate list, select the single "
        << "candidate most likely to be the masked item.\n";
    out << "User: " << pool.user_id << "\n";
    out << "User history (oldest first, last item masked):\n";
    int i = 1;
    for (const auto& title : context_titles) {
        if (trim(title).empty()) throw DataError("empty title in context");
        out << "His Item" << i++ << "_title: " << title << "\n";
    }
    out << "Candidates:\n";
    for (const auto& e : pool.entries) {
        if (trim(e.title).empty()) throw DataError("empty title in candidate pool");
        out << "Cand Item" << e.rank << "_title: " << e.title << "\n";
    }
    out << "Output format: a JSON array with exactly 1 candidate index between 1 and "
        << pool.size() << ", e.g. [3]. Output the array only.\n";
    return out.str();
}

ReasonResult reason_masked_item(LLMClient& llm, const Catalog& catalog, const MaskedInstance& m,
                                const CandidatePool& pool) {
    if (pool.size() < 1) throw ConfigError("reason pool is empty");
    std::vector<std::string> context_titles;
    context_titles.reserve(m.masked_context.size());
    for (const auto& id : m.masked_context) context_titles.push_back(catalog.title(id));

    const std::string prompt = build_arv_prompt(context_titles, pool);
    const std::string response = llm.complete(prompt);

    std::vector<int> picked = extract_indices(response, static_cast<int>(pool.size()));
    ReasonResult result;
    if (!picked.empty()) {
        result.item_id = pool.entries[static_cast<std::size_t>(picked.front()) - 1].item_id;
    } else {
        result.item_id = pool.entries.front().item_id;
        result.fallback_used = true;
    }
    return result;
}

double score_reliability(const Embedder& embedder, const std::string& predicted_title,
                         const std::string& masked_title) {
    if (trim(predicted_title).empty() || trim(masked_title).empty()) {
        throw DataError("reliability scoring needs non-empty titles");
    }
    // identical titles short-circuit to 1 so sub-feature-length titles still
    // satisfy the perfect-prediction identity
    if (predicted_title == masked_title) return 1.0;
    const double c = cosine(embedder.embed_title(predicted_title),
                            embedder.embed_title(masked_title));
    return std::max(0.0, c);
}

void write_validation_records(const std::string& path, std::vector<ValidationRecord> records) {
    std::sort(records.begin(), records.end(), [](const ValidationRecord& a, const ValidationRecord& b) {
        return a.user_id < b.user_id;
    });
    std::ofstream out(path);
    if (!out) throw DataError("cannot write validation file: " + path);
    for (const auto& r : records) {
        json rec = {{"user_id", r.user_id},
                    {"masked_item", r.masked_item},
                    {"omega", r.omega},
                    {"fallback_used", r.fallback_used}};
        rec["predicted_item"] = r.predicted_item ? json(*r.predicted_item) : json(nullptr);
        out << rec.dump() << "\n";
    }
}

std::vector<ValidationRecord> read_validation_records(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read validation file: " + path);
    std::vector<ValidationRecord> out;
    std::string line;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        json rec = json::parse(line);
        ValidationRecord r;
        r.user_id = rec.at("user_id").get<std::string>();
        r.masked_item = rec.at("masked_item").get<std::string>();
        if (!rec.at("predicted_item").is_null()) {
            r.predicted_item = rec.at("predicted_item").get<std::string>();
        }
        r.omega = rec.at("omega").get<double>();
        r.fallback_used = rec.at("fallback_used").get<bool>();
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace llmser
