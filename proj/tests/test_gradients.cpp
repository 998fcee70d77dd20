#include "llmser/backbone.hpp"
#include "llmser/encoder.hpp"

#include "test_support.hpp"

#include <doctest.h>

#include <cmath>

using namespace llmser;

namespace {

struct FdInstance {
    Catalog catalog;
    BackboneConfig cfg;
    TrainedBackbone model;
    std::vector<int> items;
    std::vector<std::vector<int>> negatives;
};

FdInstance make_instance(EncoderKind kind, std::uint64_t seed, int layers = 2) {
    FdInstance inst{test::make_catalog(8, {{"i0"}}), {}, {}, {}, {}};
    inst.cfg.encoder_kind = kind;
    inst.cfg.embedding_dim = 6;
    inst.cfg.max_seq_len = 8;
    inst.cfg.num_layers = layers;
    inst.cfg.num_heads = 3;
    inst.cfg.seed = seed;
    inst.model = initialize_backbone(inst.catalog, inst.cfg, Direction::Forward);
    inst.items = {3, 1, 7, 2, 5, 4};
    SeededRng rng(derive_seed(seed, "fd-negs"));
    inst.negatives = sample_negatives(inst.items, 8, inst.cfg, rng);
    return inst;
}

double loss_at(const FdInstance& inst, const ModelParams& params, double weight) {
    return sequence_loss_with_negatives(params, *make_encoder(inst.cfg), inst.cfg, inst.items,
                                        inst.negatives, weight, nullptr);
}

// relative L2 distance between analytic and central-difference gradients
double fd_relative_error(FdInstance& inst, double weight) {
    std::vector<double> grad(inst.model.params().data.size(), 0.0);
    sequence_loss_with_negatives(inst.model.params(), *make_encoder(inst.cfg), inst.cfg,
                                 inst.items, inst.negatives, weight, &grad);
    ModelParams probe = inst.model.params();
    const double h = 1e-5;
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < probe.data.size(); ++i) {
        const double saved = probe.data[i];
        probe.data[i] = saved + h;
        const double up = loss_at(inst, probe, weight);
        probe.data[i] = saved - h;
        const double dn = loss_at(inst, probe, weight);
        probe.data[i] = saved;
        const double fd = (up - dn) / (2.0 * h);
        num += (fd - grad[i]) * (fd - grad[i]);
        den += fd * fd;
    }
    return std::sqrt(num) / std::max(1e-12, std::sqrt(den));
}

}  // namespace

TEST_CASE("recurrent encoder gradient matches finite differences") {
    auto inst = make_instance(EncoderKind::Recurrent, 5);
    CHECK(fd_relative_error(inst, 1.0) < 1e-5);
    CHECK(fd_relative_error(inst, 0.37) < 1e-5);
}

TEST_CASE("gradient stays correct with several negatives per step") {
    auto inst = make_instance(EncoderKind::Recurrent, 15);
    inst.cfg.negatives_per_positive = 3;
    SeededRng rng(derive_seed(15, "fd-negs-multi"));
    inst.negatives = sample_negatives(inst.items, 8, inst.cfg, rng);
    CHECK(fd_relative_error(inst, 0.8) < 1e-5);
}

TEST_CASE("attention encoder gradient matches finite differences") {
    auto inst = make_instance(EncoderKind::CausalSelfAttention, 6);
    CHECK(fd_relative_error(inst, 1.0) < 1e-5);
    auto single = make_instance(EncoderKind::CausalSelfAttention, 7, 1);
    CHECK(fd_relative_error(single, 0.61) < 1e-5);
}

TEST_CASE("two-channel gradient is the weighted sum of channel gradients") {
    auto inst = make_instance(EncoderKind::Recurrent, 8);
    const std::vector<int> orig{3, 1, 7, 2};
    const std::vector<int> aug{6, 4, 3, 1, 7, 2};
    SeededRng rng(41);
    auto negs_orig = sample_negatives(orig, 8, inst.cfg, rng);
    auto negs_aug = sample_negatives(aug, 8, inst.cfg, rng);
    const double alpha = 0.3;
    auto enc = make_encoder(inst.cfg);
    const std::size_t n = inst.model.params().data.size();

    std::vector<double> combined(n, 0.0), g_orig(n, 0.0), g_aug(n, 0.0);
    sequence_loss_with_negatives(inst.model.params(), *enc, inst.cfg, orig, negs_orig, 1.0 - alpha,
                                 &combined);
    sequence_loss_with_negatives(inst.model.params(), *enc, inst.cfg, aug, negs_aug, alpha,
                                 &combined);
    sequence_loss_with_negatives(inst.model.params(), *enc, inst.cfg, orig, negs_orig, 1.0, &g_orig);
    sequence_loss_with_negatives(inst.model.params(), *enc, inst.cfg, aug, negs_aug, 1.0, &g_aug);

    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double expected = (1.0 - alpha) * g_orig[i] + alpha * g_aug[i];
        num += (combined[i] - expected) * (combined[i] - expected);
        den += expected * expected;
    }
    CHECK(std::sqrt(num) / std::max(1e-12, std::sqrt(den)) < 1e-9);
}

TEST_CASE("dual-channel total loss gradient matches finite differences") {
    auto inst = make_instance(EncoderKind::Recurrent, 9);
    const std::vector<int> orig{5, 2, 6};
    const std::vector<int> aug{1, 4, 5, 2, 6};
    SeededRng rng(42);
    auto negs_orig = sample_negatives(orig, 8, inst.cfg, rng);
    auto negs_aug = sample_negatives(aug, 8, inst.cfg, rng);
    const double alpha = 0.7;
    auto enc = make_encoder(inst.cfg);
    const std::size_t n = inst.model.params().data.size();

    std::vector<double> grad(n, 0.0);
    sequence_loss_with_negatives(inst.model.params(), *enc, inst.cfg, orig, negs_orig, 1.0 - alpha,
                                 &grad);
    sequence_loss_with_negatives(inst.model.params(), *enc, inst.cfg, aug, negs_aug, alpha, &grad);

    auto total = [&](const ModelParams& p) {
        return sequence_loss_with_negatives(p, *enc, inst.cfg, orig, negs_orig, 1.0 - alpha,
                                            nullptr) +
               sequence_loss_with_negatives(p, *enc, inst.cfg, aug, negs_aug, alpha, nullptr);
    };
    ModelParams probe = inst.model.params();
    const double h = 1e-5;
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double saved = probe.data[i];
        probe.data[i] = saved + h;
        const double up = total(probe);
        probe.data[i] = saved - h;
        const double dn = total(probe);
        probe.data[i] = saved;
        const double fd = (up - dn) / (2.0 * h);
        num += (fd - grad[i]) * (fd - grad[i]);
        den += fd * fd;
    }
    CHECK(std::sqrt(num) / std::max(1e-12, std::sqrt(den)) < 1e-4);
}
