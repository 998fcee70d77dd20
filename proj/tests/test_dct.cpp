#include "llmser/dct.hpp"

#include "llmser/common.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <cmath>

using namespace llmser;

namespace {

DCTConfig make_cfg(double beta = 0.5, int t = 3) {
    DCTConfig cfg;
    cfg.beta = beta;
    cfg.tail_threshold = t;
    cfg.backbone.embedding_dim = 8;
    cfg.backbone.max_seq_len = 12;
    cfg.backbone.epochs = 3;
    cfg.backbone.seed = 31;
    return cfg;
}

}  // namespace

TEST_CASE("decay weight direct evaluations") {
    CHECK(decay_weight(0.8, 10, make_cfg(0.5, 3)) == doctest::Approx(0.4));
    CHECK(decay_weight(0.8, 3, make_cfg(0.5, 3)) == doctest::Approx(0.8));  // boundary: tail branch
    CHECK(decay_weight(0.0, 1, make_cfg(0.5, 3)) == 0.0);
    CHECK(decay_weight(0.0, 10, make_cfg(0.5, 3)) == 0.0);
    CHECK_THROWS_AS(decay_weight(1.5, 2, make_cfg()), DataError);
}

TEST_CASE("decay branch is exhaustively correct over a small grid") {
    for (double omega : {0.0, 0.25, 0.5, 0.75, 1.0}) {
        for (std::size_t n = 1; n <= 10; ++n) {
            for (int t : {1, 3, 5}) {
                for (double beta : {0.1, 0.3, 0.5, 0.8}) {
                    const double alpha = decay_weight(omega, n, make_cfg(beta, t));
                    const double expected = n > static_cast<std::size_t>(t) ? beta * omega : omega;
                    CHECK(alpha == doctest::Approx(expected).epsilon(1e-15));
                    CHECK(alpha >= 0.0);
                    CHECK(alpha <= 1.0);
                }
            }
        }
    }
}

TEST_CASE("alpha is non-decreasing in omega within a branch") {
    const auto cfg = make_cfg(0.4, 3);
    for (std::size_t n : {2ul, 8ul}) {
        double prev = -1.0;
        for (double omega = 0.0; omega <= 1.0; omega += 0.05) {
            const double alpha = decay_weight(omega, n, cfg);
            CHECK(alpha >= prev);
            prev = alpha;
        }
    }
}

TEST_CASE("weighted loss identities and convexity") {
    CHECK(weighted_loss(2.0, 4.0, 0.0) == 2.0);
    CHECK(weighted_loss(2.0, 4.0, 1.0) == 4.0);
    CHECK(weighted_loss(2.0, 4.0, 0.5) == doctest::Approx(3.0));
    SeededRng rng(12);
    for (int i = 0; i < 100; ++i) {
        const double lo = rng.next_double() * 5.0;
        const double la = rng.next_double() * 5.0;
        const double alpha = rng.next_double();
        const double w = weighted_loss(lo, la, alpha);
        CHECK(w >= std::min(lo, la) - 1e-12);
        CHECK(w <= std::max(lo, la) + 1e-12);
    }
    CHECK_THROWS_AS(weighted_loss(1.0, 1.0, 1.5), DataError);
}

TEST_CASE("alpha=0 collapses to training on original sequences bit-for-bit") {
    auto userdata = test::random_user_items(10, 12, 6, 61);
    Catalog catalog = test::make_catalog(12, userdata);
    const auto cfg = make_cfg();

    std::vector<AugmentedSequence> augmented;
    SeededRng rng(3);
    for (const auto& s : catalog.sequences()) {
        std::vector<std::string> pseudo;
        for (int i = 0; i < 2; ++i) {
            pseudo.push_back(catalog.items()[rng.below(catalog.item_count())].item_id);
        }
        AugmentedSequence a = augment_sequence(catalog, s, pseudo);
        a.weight = 0.0;
        augmented.push_back(std::move(a));
    }
    TrainedBackbone dual = train_dual_channel(catalog, augmented, cfg);
    TrainedBackbone plain =
        train_backbone(catalog, catalog.sequences(), cfg.backbone, Direction::Forward);
    CHECK(dual.params().data == plain.params().data);
}

TEST_CASE("alpha=1 collapses to training on augmented sequences bit-for-bit") {
    auto userdata = test::random_user_items(10, 12, 6, 62);
    Catalog catalog = test::make_catalog(12, userdata);
    const auto cfg = make_cfg();

    std::vector<AugmentedSequence> augmented;
    std::vector<UserSequence> combined;
    SeededRng rng(4);
    for (const auto& s : catalog.sequences()) {
        std::vector<std::string> pseudo;
        for (int i = 0; i < 2; ++i) {
            pseudo.push_back(catalog.items()[rng.below(catalog.item_count())].item_id);
        }
        AugmentedSequence a = augment_sequence(catalog, s, pseudo);
        a.weight = 1.0;
        combined.push_back(UserSequence{s.user_id, a.combined});
        augmented.push_back(std::move(a));
    }
    TrainedBackbone dual = train_dual_channel(catalog, augmented, cfg);
    TrainedBackbone plain = train_backbone(catalog, combined, cfg.backbone, Direction::Forward);
    CHECK(dual.params().data == plain.params().data);
}

TEST_CASE("missing reliability is fatal") {
    Catalog catalog = test::make_catalog(6, {{"i0", "i1", "i2"}});
    std::vector<AugmentedSequence> augmented{
        augment_sequence(catalog, catalog.sequences()[0], {"i4"})};
    CHECK_THROWS_AS(train_dual_channel(catalog, augmented, make_cfg()), DataError);
}

TEST_CASE("reliabilities are turned into decayed alphas during training") {
    Catalog catalog = test::make_catalog(
        8, {{"i0", "i1"}, {"i0", "i1", "i2", "i3", "i4", "i5"}});
    auto cfg = make_cfg(0.5, 3);
    cfg.backbone.epochs = 1;
    std::vector<AugmentedSequence> augmented;
    for (const auto& s : catalog.sequences()) {
        AugmentedSequence a = augment_sequence(catalog, s, {"i6"});
        a.reliability = 0.8;
        augmented.push_back(std::move(a));
    }
    train_dual_channel(catalog, augmented, cfg);
    CHECK(augmented[0].weight.value() == doctest::Approx(0.8));  // n_u=2 <= T
    CHECK(augmented[1].weight.value() == doctest::Approx(0.4));  // n_u=6 > T decays
}

TEST_CASE("config validation") {
    CHECK_THROWS_AS(make_cfg(0.0).validate(), ConfigError);
    CHECK_THROWS_AS(make_cfg(1.2).validate(), ConfigError);
    CHECK_THROWS_AS(make_cfg(0.5, 0).validate(), ConfigError);
}
