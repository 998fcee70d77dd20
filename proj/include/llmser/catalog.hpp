#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

namespace llmser {

struct Item {
    std::string item_id;
    std::string title;  // non-empty after trim
};

struct Interaction {
    std::string user_id;
    std::string item_id;
    std::int64_t timestamp = 0;
};

// A user's interactions ordered oldest-first. Timestamp ties keep input order.
struct UserSequence {
    std::string user_id;
    std::vector<std::string> items;

    std::size_t length() const { return items.size(); }
};

UserSequence reverse_sequence(const UserSequence& s);

struct IngestStats {
    std::size_t interactions_read = 0;
    std::size_t interactions_dropped = 0;  // unresolvable item references
    std::size_t duplicate_items = 0;
    std::size_t items_dropped_empty_title = 0;
    std::size_t users_dropped_min_interactions = 0;
};

// Immutable store of items and per-user sequences. Construction is
// single-threaded; readers may share a built catalog freely.
class Catalog {
public:
    // Record formats: newline-delimited JSON.
    //   interactions: {"user_id": str, "item_id": str, "timestamp": int}
    //   items:        {"item_id": str, "title": str}
    // Interactions referencing unknown items are dropped and counted; more than
    // 50% dropped is treated as mismatched files and fails.
    static Catalog ingest(const std::string& interactions_file,
                          const std::string& items_file,
                          std::size_t min_interactions = 1);

    // Single-file form: count header line, then item records, then interaction
    // records. Reloading yields a catalog equal to the one serialized.
    void serialize(const std::string& path) const;
    static Catalog load(const std::string& path);

    const std::vector<Item>& items() const { return items_; }
    const std::vector<UserSequence>& sequences() const { return sequences_; }
    std::size_t item_count() const { return items_.size(); }
    std::size_t user_count() const { return sequences_.size(); }

    // 0-based position in items(); nullopt for unknown ids.
    std::optional<std::size_t> item_index(const std::string& item_id) const;
    const std::string& title(const std::string& item_id) const;
    const UserSequence* find_sequence(const std::string& user_id) const;

    const IngestStats& stats() const { return stats_; }

    bool operator==(const Catalog& other) const;

private:
    friend Catalog build_catalog(std::vector<Item> items,
                                 std::vector<Interaction> interactions,
                                 std::size_t min_interactions, IngestStats stats);

    std::vector<Item> items_;  // vocab order: first appearance in the items file
    std::unordered_map<std::string, std::size_t> item_index_;
    std::vector<UserSequence> sequences_;  // first-appearance order
    std::unordered_map<std::string, std::size_t> user_index_;
    std::vector<std::vector<std::int64_t>> timestamps_;  // parallel to sequences_
    IngestStats stats_;
};

// Builds a catalog from already-parsed records; used by ingest/load and tests.
Catalog build_catalog(std::vector<Item> items, std::vector<Interaction> interactions,
                      std::size_t min_interactions = 1, IngestStats stats = {});

// Leave-one-out protocol: last item is the test target, second-to-last the
// validation target, the rest the train prefix. Users with two interactions get
// a test target only; single-interaction users are train-only.
struct SplitEntry {
    std::vector<std::string> train;
    std::optional<std::string> valid;
    std::optional<std::string> test;
    std::size_t full_length = 0;
};

struct DatasetSplit {
    std::map<std::string, SplitEntry> per_user;  // keyed by user_id
};

DatasetSplit leave_one_out_split(const Catalog& catalog);

// Half-open length groups. cuts {4, 6} gives (0,4), [4,6), [6,inf) — the
// short/medium/long split used for long-tail analysis.
struct GroupingConfig {
    int tail_threshold = 3;
    std::vector<int> cuts = {4, 6};
    std::vector<std::string> labels = {"short", "medium", "long"};

    void validate() const;
    std::size_t group_of(std::size_t n_u) const;
    const std::string& label_of(std::size_t n_u) const { return labels[group_of(n_u)]; }
};

std::map<std::string, std::set<std::string>> group_users(const Catalog& catalog,
                                                         const GroupingConfig& g);

struct HistogramBucket {
    std::string label;
    std::size_t user_count = 0;
    double fraction = 0.0;
};

// Buckets are (prev, bound] ranges over sequence length plus one overflow
// bucket; fractions sum to 1 over a non-empty catalog.
std::vector<HistogramBucket> length_histogram(
    const Catalog& catalog,
    const std::vector<std::size_t>& bounds = {1, 2, 3, 4, 8, 16, 32, 64});

}  // namespace llmser
