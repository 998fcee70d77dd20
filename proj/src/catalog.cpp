#include "llmser/catalog.hpp"

#include "llmser/common.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <fstream>
#include <sstream>

namespace llmser {

using nlohmann::json;

UserSequence reverse_sequence(const UserSequence& s) {
    UserSequence out = s;
    std::reverse(out.items.begin(), out.items.end());
    return out;
}

namespace {

json parse_record(const std::string& line, const std::string& path, std::size_t line_no) {
    json rec = json::parse(line, nullptr, false);
    if (rec.is_discarded() || !rec.is_object()) {
        throw DataError(path + ":" + std::to_string(line_no) + ": malformed record");
    }
    return rec;
}

std::vector<Item> read_items(const std::string& path, IngestStats& stats,
                             std::vector<Item>* raw_order = nullptr) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read items file: " + path);
    std::vector<Item> items;
    std::unordered_map<std::string, bool> seen;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        json rec = parse_record(line, path, line_no);
        if (!rec.contains("item_id") || !rec.contains("title")) {
            throw DataError(path + ":" + std::to_string(line_no) + ": item record needs item_id and title");
        }
        Item it{rec["item_id"].get<std::string>(), rec["title"].get<std::string>()};
        if (raw_order) raw_order->push_back(it);
        if (trim(it.title).empty()) {
            ++stats.items_dropped_empty_title;
            continue;
        }
        if (seen.count(it.item_id)) {
            ++stats.duplicate_items;
            continue;
        }
        seen[it.item_id] = true;
        items.push_back(std::move(it));
    }
    return items;
}

std::vector<Interaction> read_interactions(const std::string& path, IngestStats& stats) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read interactions file: " + path);
    std::vector<Interaction> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        json rec = parse_record(line, path, line_no);
        if (!rec.contains("user_id") || !rec.contains("item_id") || !rec.contains("timestamp")) {
            throw DataError(path + ":" + std::to_string(line_no) +
                            ": interaction record needs user_id, item_id, timestamp");
        }
        out.push_back(Interaction{rec["user_id"].get<std::string>(),
                                  rec["item_id"].get<std::string>(),
                                  rec["timestamp"].get<std::int64_t>()});
        ++stats.interactions_read;
    }
    return out;
}

}  // namespace

Catalog build_catalog(std::vector<Item> items, std::vector<Interaction> interactions,
                      std::size_t min_interactions, IngestStats stats) {
    Catalog c;
    c.items_ = std::move(items);
    for (std::size_t i = 0; i < c.items_.size(); ++i) {
        c.item_index_.emplace(c.items_[i].item_id, i);
    }

    if (interactions.empty()) throw DataError("no interactions");

    struct Row {
        std::string item_id;
        std::int64_t ts;
    };
    std::vector<std::string> user_order;
    std::unordered_map<std::string, std::vector<Row>> per_user;
    for (const auto& ia : interactions) {
        if (!c.item_index_.count(ia.item_id)) {
            ++stats.interactions_dropped;
            continue;
        }
        auto [it, inserted] = per_user.try_emplace(ia.user_id);
        if (inserted) user_order.push_back(ia.user_id);
        it->second.push_back(Row{ia.item_id, ia.timestamp});
    }

    const std::size_t kept = stats.interactions_read >= stats.interactions_dropped
                                 ? stats.interactions_read - stats.interactions_dropped
                                 : 0;
    if (stats.interactions_read > 0 && stats.interactions_dropped * 2 > stats.interactions_read) {
        std::ostringstream msg;
        msg << "more than half of interactions are unresolvable (" << stats.interactions_dropped
            << " of " << stats.interactions_read << "); item and interaction files likely mismatch";
        throw DataError(msg.str());
    }
    if (kept == 0) throw DataError("no interactions");

    for (const auto& uid : user_order) {
        auto& rows = per_user[uid];
        if (rows.size() < min_interactions) {
            ++stats.users_dropped_min_interactions;
            continue;
        }
        std::stable_sort(rows.begin(), rows.end(),
                         [](const Row& a, const Row& b) { return a.ts < b.ts; });
        UserSequence seq;
        seq.user_id = uid;
        std::vector<std::int64_t> ts;
        for (const auto& r : rows) {
            seq.items.push_back(r.item_id);
            ts.push_back(r.ts);
        }
        c.user_index_.emplace(uid, c.sequences_.size());
        c.sequences_.push_back(std::move(seq));
        c.timestamps_.push_back(std::move(ts));
    }
    c.stats_ = stats;
    return c;
}

Catalog Catalog::ingest(const std::string& interactions_file, const std::string& items_file,
                        std::size_t min_interactions) {
    IngestStats stats;
    auto items = read_items(items_file, stats);
    auto interactions = read_interactions(interactions_file, stats);
    return build_catalog(std::move(items), std::move(interactions), min_interactions, stats);
}

std::optional<std::size_t> Catalog::item_index(const std::string& item_id) const {
    auto it = item_index_.find(item_id);
    if (it == item_index_.end()) return std::nullopt;
    return it->second;
}

const std::string& Catalog::title(const std::string& item_id) const {
    auto it = item_index_.find(item_id);
    if (it == item_index_.end()) throw DataError("unknown item: " + item_id);
    return items_[it->second].title;
}

const UserSequence* Catalog::find_sequence(const std::string& user_id) const {
    auto it = user_index_.find(user_id);
    if (it == user_index_.end()) return nullptr;
    return &sequences_[it->second];
}

bool Catalog::operator==(const Catalog& other) const {
    if (items_.size() != other.items_.size() || sequences_.size() != other.sequences_.size())
        return false;
    for (std::size_t i = 0; i < items_.size(); ++i) {
        if (items_[i].item_id != other.items_[i].item_id || items_[i].title != other.items_[i].title)
            return false;
    }
    for (std::size_t i = 0; i < sequences_.size(); ++i) {
        if (sequences_[i].user_id != other.sequences_[i].user_id ||
            sequences_[i].items != other.sequences_[i].items ||
            timestamps_[i] != other.timestamps_[i])
            return false;
    }
    return true;
}

void Catalog::serialize(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write catalog file: " + path);
    std::size_t n_inter = 0;
    for (const auto& s : sequences_) n_inter += s.items.size();
    json header = {{"kind", "llmser-catalog"},
                   {"version", 1},
                   {"item_count", items_.size()},
                   {"interaction_count", n_inter}};
    out << header.dump() << "\n";
    for (const auto& it : items_) {
        out << json{{"item_id", it.item_id}, {"title", it.title}}.dump() << "\n";
    }
    for (std::size_t u = 0; u < sequences_.size(); ++u) {
        for (std::size_t i = 0; i < sequences_[u].items.size(); ++i) {
            out << json{{"user_id", sequences_[u].user_id},
                        {"item_id", sequences_[u].items[i]},
                        {"timestamp", timestamps_[u][i]}}
                       .dump()
                << "\n";
        }
    }
    if (!out) throw DataError("failed writing catalog file: " + path);
}

Catalog Catalog::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read catalog file: " + path);
    std::string line;
    if (!std::getline(in, line)) throw DataError("empty catalog file: " + path);
    json header = parse_record(line, path, 1);
    if (header.value("kind", "") != "llmser-catalog") {
        throw DataError(path + ": not a catalog file");
    }
    const auto item_count = header.at("item_count").get<std::size_t>();
    const auto inter_count = header.at("interaction_count").get<std::size_t>();

    std::vector<Item> items;
    std::vector<Interaction> interactions;
    IngestStats stats;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        json rec = parse_record(line, path, line_no);
        if (rec.contains("title")) {
            items.push_back(Item{rec.at("item_id").get<std::string>(),
                                 rec.at("title").get<std::string>()});
        } else {
            interactions.push_back(Interaction{rec.at("user_id").get<std::string>(),
                                               rec.at("item_id").get<std::string>(),
                                               rec.at("timestamp").get<std::int64_t>()});
            ++stats.interactions_read;
        }
    }
    if (items.size() != item_count || interactions.size() != inter_count) {
        throw DataError(path + ": integrity counts do not match record streams");
    }
    return build_catalog(std::move(items), std::move(interactions), 1, stats);
}

DatasetSplit leave_one_out_split(const Catalog& catalog) {
    DatasetSplit split;
    for (const auto& s : catalog.sequences()) {
        SplitEntry e;
        e.full_length = s.items.size();
        const std::size_t n = s.items.size();
        if (n >= 3) {
            e.train.assign(s.items.begin(), s.items.end() - 2);
            e.valid = s.items[n - 2];
            e.test = s.items[n - 1];
        } else if (n == 2) {
            e.train.assign(s.items.begin(), s.items.end() - 1);
            e.test = s.items[n - 1];
        } else {
            e.train = s.items;
        }
        split.per_user.emplace(s.user_id, std::move(e));
    }
    return split;
}

void GroupingConfig::validate() const {
    if (cuts.empty()) throw ConfigError("grouping needs at least one cut");
    for (std::size_t i = 0; i < cuts.size(); ++i) {
        if (cuts[i] < 1) throw ConfigError("grouping cuts must be >= 1");
        if (i > 0 && cuts[i] <= cuts[i - 1]) throw ConfigError("grouping cuts must be strictly increasing");
    }
    if (labels.size() != cuts.size() + 1) {
        throw ConfigError("grouping needs one label per interval (cuts + 1)");
    }
    if (tail_threshold < 1) throw ConfigError("tail_threshold must be >= 1");
}

std::size_t GroupingConfig::group_of(std::size_t n_u) const {
    std::size_t g = 0;
    for (int cut : cuts) {
        if (static_cast<long long>(n_u) >= cut) ++g;
    }
    return g;
}

std::map<std::string, std::set<std::string>> group_users(const Catalog& catalog,
                                                         const GroupingConfig& g) {
    g.validate();
    std::map<std::string, std::set<std::string>> out;
    for (const auto& label : g.labels) out[label];  // keep empty groups visible
    for (const auto& s : catalog.sequences()) {
        out[g.label_of(s.items.size())].insert(s.user_id);
    }
    return out;
}

std::vector<HistogramBucket> length_histogram(const Catalog& catalog,
                                              const std::vector<std::size_t>& bounds) {
    std::vector<HistogramBucket> out;
    if (catalog.user_count() == 0) return out;
    std::vector<std::size_t> counts(bounds.size() + 1, 0);
    for (const auto& s : catalog.sequences()) {
        std::size_t b = 0;
        while (b < bounds.size() && s.items.size() > bounds[b]) ++b;
        ++counts[b];
    }
    const double total = static_cast<double>(catalog.user_count());
    std::size_t prev = 0;
    for (std::size_t b = 0; b < counts.size(); ++b) {
        HistogramBucket bucket;
        if (b < bounds.size()) {
            bucket.label = "(" + std::to_string(prev) + "," + std::to_string(bounds[b]) + "]";
            prev = bounds[b];
        } else {
            bucket.label = ">" + std::to_string(prev);
        }
        bucket.user_count = counts[b];
        bucket.fraction = static_cast<double>(counts[b]) / total;
        out.push_back(std::move(bucket));
    }
    return out;
}

}  // namespace llmser
