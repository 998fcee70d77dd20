#include "llmser/catalog.hpp"

#include "llmser/common.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <cmath>

using namespace llmser;
using test::TempDir;

namespace {

const char* kItems3 = R"({"item_id": "a", "title": "apple pie"}
{"item_id": "b", "title": "banana bread"}
{"item_id": "c", "title": "cherry cake"}
)";

}  // namespace

TEST_CASE("ingest builds one sequence from three interactions") {
    TempDir dir("ingest");
    test::write_file(dir.file("items.jsonl"), kItems3);
    test::write_file(dir.file("inter.jsonl"),
                     R"({"user_id": "u1", "item_id": "a", "timestamp": 3}
{"user_id": "u1", "item_id": "b", "timestamp": 1}
{"user_id": "u1", "item_id": "c", "timestamp": 2}
)");
    Catalog c = Catalog::ingest(dir.file("inter.jsonl"), dir.file("items.jsonl"));
    REQUIRE(c.user_count() == 1);
    CHECK(c.sequences()[0].items == std::vector<std::string>{"b", "c", "a"});
    CHECK(c.stats().interactions_dropped == 0);
}

TEST_CASE("unknown item is dropped and counted") {
    TempDir dir("drop");
    test::write_file(dir.file("items.jsonl"), kItems3);
    test::write_file(dir.file("inter.jsonl"),
                     R"({"user_id": "u1", "item_id": "a", "timestamp": 1}
{"user_id": "u1", "item_id": "zzz", "timestamp": 2}
{"user_id": "u1", "item_id": "b", "timestamp": 3}
)");
    Catalog c = Catalog::ingest(dir.file("inter.jsonl"), dir.file("items.jsonl"));
    CHECK(c.stats().interactions_dropped == 1);
    CHECK(c.sequences()[0].items == std::vector<std::string>{"a", "b"});
}

TEST_CASE("empty interactions file is an error") {
    TempDir dir("empty");
    test::write_file(dir.file("items.jsonl"), kItems3);
    test::write_file(dir.file("inter.jsonl"), "");
    CHECK_THROWS_AS(Catalog::ingest(dir.file("inter.jsonl"), dir.file("items.jsonl")), DataError);
}

TEST_CASE("mostly-unresolvable interactions fail loudly") {
    TempDir dir("mismatch");
    test::write_file(dir.file("items.jsonl"), kItems3);
    std::string lines;
    for (int i = 0; i < 10; ++i) {
        lines += R"({"user_id": "u1", "item_id": "x)" + std::to_string(i) + R"(", "timestamp": 1})" "\n";
    }
    lines += R"({"user_id": "u1", "item_id": "a", "timestamp": 2})" "\n";
    test::write_file(dir.file("inter.jsonl"), lines);
    CHECK_THROWS_AS(Catalog::ingest(dir.file("inter.jsonl"), dir.file("items.jsonl")), DataError);
}

TEST_CASE("timestamp ties keep input order") {
    TempDir dir("ties");
    test::write_file(dir.file("items.jsonl"), kItems3);
    test::write_file(dir.file("inter.jsonl"),
                     R"({"user_id": "u1", "item_id": "c", "timestamp": 5}
{"user_id": "u1", "item_id": "a", "timestamp": 5}
{"user_id": "u1", "item_id": "b", "timestamp": 5}
)");
    Catalog c = Catalog::ingest(dir.file("inter.jsonl"), dir.file("items.jsonl"));
    CHECK(c.sequences()[0].items == std::vector<std::string>{"c", "a", "b"});
}

TEST_CASE("reverse_sequence definition, fixed point, involution") {
    UserSequence s{"u", {"a", "b", "c"}};
    CHECK(reverse_sequence(s).items == std::vector<std::string>{"c", "b", "a"});
    UserSequence one{"u", {"a"}};
    CHECK(reverse_sequence(one).items == std::vector<std::string>{"a"});
    UserSequence two{"u", {"a", "b"}};
    CHECK(reverse_sequence(reverse_sequence(two)).items == two.items);
}

TEST_CASE("reverse_sequence is an involution on random sequences") {
    auto userdata = test::random_user_items(50, 20, 12, 99);
    for (std::size_t u = 0; u < userdata.size(); ++u) {
        UserSequence s{"u" + std::to_string(u), userdata[u]};
        CHECK(reverse_sequence(reverse_sequence(s)).items == s.items);
    }
}

TEST_CASE("leave-one-out split protocol and degenerate rules") {
    Catalog c = test::make_catalog(6, {{"i0", "i1", "i2", "i3"}, {"i0", "i1"}, {"i5"}});
    DatasetSplit split = leave_one_out_split(c);

    const auto& u0 = split.per_user.at("u0");
    CHECK(u0.train == std::vector<std::string>{"i0", "i1"});
    CHECK(u0.valid.value() == "i2");
    CHECK(u0.test.value() == "i3");

    const auto& u1 = split.per_user.at("u1");
    CHECK(u1.train == std::vector<std::string>{"i0"});
    CHECK_FALSE(u1.valid.has_value());
    CHECK(u1.test.value() == "i1");

    const auto& u2 = split.per_user.at("u2");
    CHECK(u2.train == std::vector<std::string>{"i5"});
    CHECK_FALSE(u2.valid.has_value());
    CHECK_FALSE(u2.test.has_value());
}

TEST_CASE("split reconstructs the original sequence for n >= 3") {
    auto userdata = test::random_user_items(30, 15, 10, 17);
    Catalog c = test::make_catalog(15, userdata);
    DatasetSplit split = leave_one_out_split(c);
    for (const auto& s : c.sequences()) {
        const auto& e = split.per_user.at(s.user_id);
        if (s.items.size() < 3) continue;
        std::vector<std::string> rebuilt = e.train;
        rebuilt.push_back(e.valid.value());
        rebuilt.push_back(e.test.value());
        CHECK(rebuilt == s.items);
    }
}

TEST_CASE("grouping matches the short/medium/long convention") {
    GroupingConfig g;
    CHECK(g.label_of(3) == "short");
    CHECK(g.label_of(4) == "medium");
    CHECK(g.label_of(5) == "medium");
    CHECK(g.label_of(6) == "long");
    CHECK(g.label_of(100) == "long");
}

TEST_CASE("group_users forms a partition") {
    auto userdata = test::random_user_items(60, 20, 12, 3);
    Catalog c = test::make_catalog(20, userdata);
    GroupingConfig g;
    auto groups = group_users(c, g);
    std::size_t total = 0;
    std::set<std::string> seen;
    for (const auto& [label, users] : groups) {
        total += users.size();
        for (const auto& u : users) CHECK(seen.insert(u).second);
    }
    CHECK(total == c.user_count());
}

TEST_CASE("grouping config validation") {
    GroupingConfig bad;
    bad.cuts = {6, 4};
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    GroupingConfig wrong_labels;
    wrong_labels.labels = {"a", "b"};
    CHECK_THROWS_AS(wrong_labels.validate(), ConfigError);
}

TEST_CASE("length histogram fractions") {
    Catalog c = test::make_catalog(
        12, {{"i0"}, {"i1"}, {"i0", "i1"}, {"i0", "i1", "i2", "i3", "i4", "i5", "i6", "i7", "i8"}});
    auto hist = length_histogram(c, {8});
    REQUIRE(hist.size() == 2);
    CHECK(hist[0].label == "(0,8]");
    CHECK(hist[0].user_count == 3);
    CHECK(hist[0].fraction == doctest::Approx(0.75));
    CHECK(hist[1].user_count == 1);

    double sum = 0.0;
    for (const auto& b : length_histogram(c)) sum += b.fraction;
    CHECK(std::abs(sum - 1.0) < 1e-9);

    Catalog single = test::make_catalog(3, {{"i0", "i1"}});
    auto h1 = length_histogram(single, {8});
    CHECK(h1[0].fraction == doctest::Approx(1.0));
}

TEST_CASE("serialize then load round-trips the catalog") {
    TempDir dir("roundtrip");
    auto userdata = test::random_user_items(25, 18, 9, 41);
    Catalog c = test::make_catalog(18, userdata);
    c.serialize(dir.file("catalog.jsonl"));
    Catalog loaded = Catalog::load(dir.file("catalog.jsonl"));
    CHECK(c == loaded);

    loaded.serialize(dir.file("catalog2.jsonl"));
    Catalog again = Catalog::load(dir.file("catalog2.jsonl"));
    CHECK(loaded == again);
}

TEST_CASE("min_interactions drops sparse users") {
    std::vector<Item> items{{"a", "t a"}, {"b", "t b"}};
    std::vector<Interaction> inter{{"u1", "a", 1}, {"u2", "a", 1}, {"u2", "b", 2}};
    IngestStats stats;
    stats.interactions_read = inter.size();
    Catalog c = build_catalog(items, inter, 2, stats);
    CHECK(c.user_count() == 1);
    CHECK(c.stats().users_dropped_min_interactions == 1);
}
