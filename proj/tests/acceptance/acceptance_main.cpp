// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Everything runs on synthetic data with deterministic providers.

#include "llmser/arv.hpp"
#include "llmser/backbone.hpp"
#include "llmser/catalog.hpp"
#include "llmser/dct.hpp"
#include "llmser/embed.hpp"
#include "llmser/evalx.hpp"
#include "llmser/llmio.hpp"
#include "llmser/pipeline.hpp"
#include "llmser/sia.hpp"
#include "llmser/synthetic.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <sstream>

using namespace llmser;
namespace fs = std::filesystem;

namespace {

std::string g_root;

std::string scratch(const std::string& name) {
    const std::string path = g_root + "/" + name;
    fs::remove_all(path);
    fs::create_directories(path);
    return path;
}

std::string slurp(const std::string& path) {
    std::ifstream f(path);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

Catalog make_random_catalog(std::size_t num_items, std::size_t users, SeededRng& rng) {
    std::vector<Item> items;
    for (std::size_t i = 0; i < num_items; ++i) {
        items.push_back(Item{"i" + std::to_string(i), "title word " + std::to_string(i)});
    }
    std::vector<Interaction> inter;
    for (std::size_t u = 0; u < users; ++u) {
        const std::size_t len = 1 + rng.below(std::min<std::size_t>(6, num_items - 1));
        std::vector<std::size_t> pool(num_items);
        std::iota(pool.begin(), pool.end(), 0);
        rng.shuffle(pool);
        for (std::size_t t = 0; t < len; ++t) {
            inter.push_back(Interaction{"u" + std::to_string(u), "i" + std::to_string(pool[t]),
                                        static_cast<std::int64_t>(t)});
        }
    }
    IngestStats stats;
    stats.interactions_read = inter.size();
    return build_catalog(std::move(items), std::move(inter), 1, stats);
}

// ---- criterion 1: equation suite ------------------------------------------------

bool criterion_equations(std::string& detail) {
    // BCE against a term-by-term oracle
    SeededRng rng(100);
    for (int round = 0; round < 20; ++round) {
        std::vector<double> pos, neg;
        const int steps = 1 + static_cast<int>(rng.below(8));
        for (int i = 0; i < steps; ++i) {
            pos.push_back(rng.normal(0.0, 3.0));
            neg.push_back(rng.normal(0.0, 3.0));
        }
        double oracle = 0.0;
        for (int i = 0; i < steps; ++i) {
            double sp = 1.0 / (1.0 + std::exp(-pos[static_cast<std::size_t>(i)]));
            double sn = 1.0 / (1.0 + std::exp(-neg[static_cast<std::size_t>(i)]));
            sp = std::min(1.0 - 1e-7, std::max(1e-7, sp));
            sn = std::min(1.0 - 1e-7, std::max(1e-7, sn));
            oracle += -std::log(sp) - std::log(1.0 - sn);
        }
        if (std::abs(bce_loss(pos, neg) - oracle) > 1e-9) {
            detail = "bce mismatch vs term-by-term oracle";
            return false;
        }
    }
    if (std::abs(bce_loss({0.0}, {0.0}) - 2.0 * std::log(2.0)) > 1e-12) {
        detail = "bce(0,0) != 2 ln 2";
        return false;
    }

    // decay grid
    DCTConfig dcfg;
    dcfg.backbone.embedding_dim = 4;
    for (double omega : {0.0, 0.25, 0.5, 0.75, 1.0}) {
        for (std::size_t n = 1; n <= 10; ++n) {
            for (int t : {1, 3, 5}) {
                for (double beta : {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8}) {
                    dcfg.beta = beta;
                    dcfg.tail_threshold = t;
                    const double alpha = decay_weight(omega, n, dcfg);
                    const double expected = n > static_cast<std::size_t>(t) ? beta * omega : omega;
                    if (alpha != expected) {
                        detail = "decay branch mismatch";
                        return false;
                    }
                }
            }
        }
    }

    // loss-weighting collapse identities, scalar and full-training
    if (weighted_loss(2.5, 7.0, 0.0) != 2.5 || weighted_loss(2.5, 7.0, 1.0) != 7.0) {
        detail = "weighted_loss collapse not exact";
        return false;
    }
    SeededRng crng(7);
    Catalog catalog = make_random_catalog(12, 10, crng);
    DCTConfig tcfg;
    tcfg.backbone.embedding_dim = 8;
    tcfg.backbone.epochs = 2;
    tcfg.backbone.seed = 5;
    for (double alpha : {0.0, 1.0}) {
        std::vector<AugmentedSequence> augmented;
        std::vector<UserSequence> reference;
        for (const auto& s : catalog.sequences()) {
            AugmentedSequence a = augment_sequence(catalog, s, {"i11"});
            a.weight = alpha;
            reference.push_back(alpha == 0.0 ? s : UserSequence{s.user_id, a.combined});
            augmented.push_back(std::move(a));
        }
        TrainedBackbone dual = train_dual_channel(catalog, augmented, tcfg);
        TrainedBackbone plain =
            train_backbone(catalog, reference, tcfg.backbone, Direction::Forward);
        if (dual.params().data != plain.params().data) {
            detail = "channel collapse at alpha=" + std::to_string(alpha) + " not bit-exact";
            return false;
        }
    }
    return true;
}

// ---- criterion 2: brute-force oracle equivalence ---------------------------------

bool criterion_oracle_equivalence(std::string& detail) {
    SeededRng rng(200);
    for (int round = 0; round < 100; ++round) {
        const std::size_t num_items = 5 + rng.below(26);  // <= 30
        Catalog catalog = make_random_catalog(num_items, 4 + rng.below(4), rng);
        BackboneConfig cfg;
        cfg.encoder_kind =
            round % 2 == 0 ? EncoderKind::Recurrent : EncoderKind::CausalSelfAttention;
        cfg.embedding_dim = 8;
        cfg.num_heads = 2;
        cfg.max_seq_len = 10;
        cfg.seed = rng.next_u64();
        TrainedBackbone fwd = initialize_backbone(catalog, cfg, Direction::Forward);
        cfg.seed = rng.next_u64();
        TrainedBackbone rev = initialize_backbone(catalog, cfg, Direction::Reverse);

        const UserSequence& s = catalog.sequences()[rng.below(catalog.user_count())];
        auto brute = [&](const TrainedBackbone& model, const std::vector<std::string>& ctx,
                         const std::set<std::string>& exclude) {
            const auto scores = model.score_all(ctx);
            std::vector<int> order;
            for (std::size_t i = 0; i < scores.size(); ++i) {
                if (!exclude.count(catalog.items()[i].item_id)) order.push_back(static_cast<int>(i));
            }
            std::sort(order.begin(), order.end(), [&](int a, int b) {
                if (scores[a] != scores[b]) return scores[a] > scores[b];
                return a < b;
            });
            std::vector<std::string> ids;
            for (int i : order) ids.push_back(catalog.items()[static_cast<std::size_t>(i)].item_id);
            return ids;
        };

        // top_k
        const std::size_t k = 1 + rng.below(num_items);
        auto expected = brute(fwd, s.items, {});
        expected.resize(k);
        if (fwd.top_k(s.items, k, {}) != expected) {
            detail = "top_k disagrees with sorted score_all";
            return false;
        }

        // candidate pool (reverse model, history excluded)
        std::set<std::string> history(s.items.begin(), s.items.end());
        const std::size_t n_pool = std::min<std::size_t>(5, num_items - history.size());
        if (n_pool >= 1) {
            auto pool = generate_candidate_pool(rev, catalog, s, n_pool);
            auto exp_pool = brute(rev, s.items, history);
            exp_pool.resize(n_pool);
            if (pool.item_ids() != exp_pool) {
                detail = "candidate pool disagrees with brute force";
                return false;
            }
        }

        // reason pool (forward model over the masked context)
        if (s.items.size() >= 2) {
            AugmentedSequence a = augment_sequence(catalog, s, {});
            MaskedInstance m = mask_sequence(a);
            std::set<std::string> ctx(m.masked_context.begin(), m.masked_context.end());
            const std::size_t h = std::min<std::size_t>(5, num_items - ctx.size());
            if (h >= 1) {
                auto pool = generate_reason_pool(fwd, catalog, m, h);
                auto exp_pool = brute(fwd, m.masked_context, ctx);
                exp_pool.resize(h);
                if (pool.item_ids() != exp_pool) {
                    detail = "reason pool disagrees with brute force";
                    return false;
                }
            }
        }

        // rank_of_target
        const std::string target = catalog.items()[rng.below(num_items)].item_id;
        std::set<std::string> exclude;
        for (int i = 0; i < 3; ++i) {
            const auto& id = catalog.items()[rng.below(num_items)].item_id;
            if (id != target) exclude.insert(id);
        }
        auto ordered = brute(fwd, s.items, exclude);
        const auto pos = std::find(ordered.begin(), ordered.end(), target);
        const auto expected_rank = static_cast<std::size_t>(pos - ordered.begin()) + 1;
        if (rank_of_target(fwd, s.items, target, exclude) != expected_rank) {
            detail = "rank_of_target disagrees with brute force";
            return false;
        }
    }
    return true;
}

// ---- criterion 3: gradient checks ------------------------------------------------

bool criterion_gradients(std::string& detail) {
    // BCE scores
    {
        SeededRng rng(300);
        std::vector<double> pos, neg;
        for (int i = 0; i < 8; ++i) {
            pos.push_back(rng.normal(0.0, 1.5));
            neg.push_back(rng.normal(0.0, 1.5));
        }
        std::vector<double> d_pos, d_neg;
        bce_loss_grad(pos, neg, d_pos, d_neg);
        const double h = 1e-6;
        for (std::size_t i = 0; i < pos.size(); ++i) {
            auto p = pos;
            p[i] += h;
            double up = bce_loss(p, neg);
            p[i] -= 2 * h;
            double dn = bce_loss(p, neg);
            const double fd = (up - dn) / (2 * h);
            if (std::abs(fd - d_pos[i]) > 1e-4 * std::max(1.0, std::abs(fd))) {
                detail = "bce positive-score gradient off";
                return false;
            }
        }
    }

    // dual-channel total loss vs finite differences, both encoders
    for (auto kind : {EncoderKind::Recurrent, EncoderKind::CausalSelfAttention}) {
        SeededRng rng(kind == EncoderKind::Recurrent ? 301 : 302);
        Catalog catalog = make_random_catalog(9, 4, rng);
        BackboneConfig cfg;
        cfg.encoder_kind = kind;
        cfg.embedding_dim = 6;
        cfg.num_heads = 2;
        cfg.num_layers = 2;
        cfg.max_seq_len = 8;
        cfg.seed = 77;
        TrainedBackbone model = initialize_backbone(catalog, cfg, Direction::Forward);
        auto enc = make_encoder(cfg);
        const std::vector<int> orig{3, 1, 7, 2};
        const std::vector<int> aug{6, 4, 3, 1, 7, 2};
        auto negs_orig = sample_negatives(orig, 9, cfg, rng);
        auto negs_aug = sample_negatives(aug, 9, cfg, rng);
        const double alpha = 0.35;

        std::vector<double> grad(model.params().data.size(), 0.0);
        sequence_loss_with_negatives(model.params(), *enc, cfg, orig, negs_orig, 1.0 - alpha, &grad);
        sequence_loss_with_negatives(model.params(), *enc, cfg, aug, negs_aug, alpha, &grad);
        auto total = [&](const ModelParams& p) {
            return sequence_loss_with_negatives(p, *enc, cfg, orig, negs_orig, 1.0 - alpha,
                                                nullptr) +
                   sequence_loss_with_negatives(p, *enc, cfg, aug, negs_aug, alpha, nullptr);
        };
        ModelParams probe = model.params();
        const double h = 1e-5;
        double num = 0.0, den = 0.0;
        for (std::size_t i = 0; i < probe.data.size(); ++i) {
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
        const double rel = std::sqrt(num) / std::max(1e-12, std::sqrt(den));
        if (rel > 1e-4) {
            detail = "dual-channel gradient rel error " + std::to_string(rel) + " for " +
                     to_string(kind);
            return false;
        }
    }
    return true;
}

// ---- criterion 4: metric oracle --------------------------------------------------

bool criterion_metrics(std::string& detail) {
    SeededRng rng(400);
    for (int round = 0; round < 1000; ++round) {
        std::vector<std::size_t> ranks;
        const std::size_t n = 1 + rng.below(50);
        for (std::size_t i = 0; i < n; ++i) ranks.push_back(1 + rng.below(80));
        double prev_h = 0.0, prev_nd = 0.0;
        for (std::size_t k : {5ul, 10ul, 20ul, 80ul}) {
            double naive_h = 0.0, naive_n = 0.0;
            for (std::size_t r : ranks) {
                if (r <= k) {
                    naive_h += 1.0;
                    naive_n += 1.0 / std::log2(static_cast<double>(r) + 1.0);
                }
            }
            naive_h /= static_cast<double>(n);
            naive_n /= static_cast<double>(n);
            const double h = hit_rate_at_k(ranks, k);
            const double nd = ndcg_at_k(ranks, k);
            if (h != naive_h || std::abs(nd - naive_n) > 1e-15) {
                detail = "metric recomputation mismatch";
                return false;
            }
            if (nd > h + 1e-12 || h < prev_h || nd < prev_nd - 1e-12) {
                detail = "metric ordering law violated";
                return false;
            }
            prev_h = h;
            prev_nd = nd;
        }
    }

    const std::vector<double> a{2.0, 4.0, 6.0, 8.0, 10.0};
    const std::vector<double> b{1.0, 2.0, 3.0, 4.0, 5.0};
    const double p = paired_t_test(a, b);
    if (std::abs(p - 0.0132) > 0.0005) {
        detail = "t-test example p=" + std::to_string(p);
        return false;
    }
    // quadrature oracle for the same statistic
    auto pdf = [](double x) {
        const double v = 4.0;
        const double logc = std::lgamma(2.5) - std::lgamma(2.0) - 0.5 * std::log(v * std::acos(-1.0));
        return std::exp(logc - 2.5 * std::log1p(x * x / v));
    };
    const double t = 3.0 / std::sqrt(2.5 / 5.0);
    const int steps = 40000;
    const double hh = t / steps;
    double area = pdf(0.0) + pdf(t);
    for (int i = 1; i < steps; ++i) area += (i % 2 == 0 ? 2.0 : 4.0) * pdf(i * hh);
    area *= hh / 3.0;
    const double p_oracle = 2.0 * (0.5 - area);
    if (std::abs(p - p_oracle) > 1e-6) {
        detail = "t-test disagrees with quadrature oracle";
        return false;
    }
    return true;
}

// ---- criterion 5: reliability identities -----------------------------------------

bool criterion_reliability(std::string& detail) {
    TrigramEmbedder embed;
    if (std::abs(score_reliability(embed, "soft gray wool sweater", "soft gray wool sweater") -
                 1.0) > 1e-6) {
        detail = "identical titles do not score 1";
        return false;
    }
    struct SignEmbedder final : Embedder {
        std::vector<double> embed_title(const std::string& text) const override {
            return text == "pos" ? std::vector<double>{1.0, 0.0} : std::vector<double>{-1.0, 0.0};
        }
        std::size_t dimension() const override { return 2; }
        std::string name() const override { return "sign"; }
    } sign;
    if (score_reliability(sign, "pos", "neg") != 0.0) {
        detail = "negative cosine did not clamp to 0";
        return false;
    }

    // degenerate user: single interaction, no pseudo items -> omega 0
    std::vector<Item> items{{"a", "alpha title"}, {"b", "beta title"}};
    std::vector<Interaction> inter{{"u1", "a", 1}};
    IngestStats stats;
    stats.interactions_read = 1;
    Catalog catalog = build_catalog(items, inter, 1, stats);
    const std::string dir = scratch("c5");
    catalog.serialize(dir + "/catalog.jsonl");

    PipelineConfig cfg;
    cfg.seed = 1;
    cfg.work_dir = dir;
    cfg.interactions_path = "unused";
    cfg.items_path = "unused";
    cfg.backbone.embedding_dim = 4;
    cfg.backbone.epochs = 1;
    cfg.candidate_pool_size = 1;
    cfg.reason_pool_size = 1;
    cfg.pseudo_items = 0;
    run_stage(cfg, "pretrain-ccg");
    run_stage(cfg, "pretrain-rcs");
    run_stage(cfg, "augment");
    run_stage(cfg, "validate");
    auto records = read_validation_records(cfg.validated_path());
    if (records.size() != 1 || records[0].omega != 0.0 || records[0].predicted_item) {
        detail = "degenerate user did not receive omega=0";
        return false;
    }
    return true;
}

// ---- criteria 6-8: end-to-end on the synthetic corpus -----------------------------

SyntheticConfig e2e_synth(std::uint64_t seed) {
    SyntheticConfig s;
    s.seed = seed;
    return s;  // defaults: 200 users, 60 items, true length 8-12, tail 1-3 visible
}

PipelineConfig e2e_pipeline(const std::string& data_dir, const std::string& work_dir,
                            std::uint64_t seed) {
    PipelineConfig cfg;
    cfg.seed = seed;
    cfg.work_dir = work_dir;
    cfg.interactions_path = data_dir + "/interactions.jsonl";
    cfg.items_path = data_dir + "/items.jsonl";
    cfg.backbone.encoder_kind = EncoderKind::Recurrent;
    cfg.backbone.embedding_dim = 32;
    cfg.backbone.epochs = 25;
    cfg.backbone.learning_rate = 0.005;
    cfg.backbone.batch_size = 32;
    cfg.candidate_pool_size = 40;  // room for the oracle and the adversary alike
    cfg.llm_provider = "synthetic-oracle";
    cfg.truth_path = data_dir + "/truth.json";
    return cfg;
}

bool criterion_determinism(std::string& detail) {
    const std::string root = scratch("c6");
    SyntheticData data = generate_synthetic(e2e_synth(901));
    write_synthetic(data, root + "/data");

    PipelineConfig a = e2e_pipeline(root + "/data", root + "/work_a", 77);
    PipelineConfig b = e2e_pipeline(root + "/data", root + "/work_b", 77);
    run_pipeline(a);
    run_pipeline(b);
    if (slurp(a.metrics_path("llmser")) != slurp(b.metrics_path("llmser")) ||
        slurp(a.metrics_path("none")) != slurp(b.metrics_path("none"))) {
        detail = "metrics reports differ between identical runs";
        return false;
    }

    // warm-cache rerun: zero inner calls, byte-identical augmentation file
    const std::string before = slurp(a.augmented_path());
    Catalog catalog = Catalog::load(a.catalog_path());
    SyntheticTruth truth = SyntheticTruth::load(a.truth_path);
    auto inner = make_mock_oracle(make_truth_scorer(truth, catalog));
    auto probe = std::make_shared<InstrumentedLLMClient>(inner);
    auto cache = std::make_shared<ResponseCache>(a.resolved_cache_path());
    CachingLLMClient cached(probe, cache, a.llm.concurrency_limit);
    run_stage(a, "augment", "llmser", &cached);
    if (probe->calls() != 0) {
        detail = "warm-cache rerun issued " + std::to_string(probe->calls()) + " remote calls";
        return false;
    }
    if (slurp(a.augmented_path()) != before) {
        detail = "warm-cache rerun changed the augmentation file";
        return false;
    }
    return true;
}

struct CohortMeans {
    double tail_llmser = 0.0, tail_base = 0.0, head_llmser = 0.0, head_base = 0.0;
};

CohortMeans run_seeds(const std::string& tag, bool adversarial, bool no_arv,
                      const std::vector<std::uint64_t>& seeds) {
    CohortMeans m;
    for (std::uint64_t seed : seeds) {
        const std::string root = scratch(tag + "_" + std::to_string(seed));
        SyntheticData data = generate_synthetic(e2e_synth(1000 + seed));
        write_synthetic(data, root + "/data");
        PipelineConfig cfg = e2e_pipeline(root + "/data", root + "/work", seed);
        cfg.adversarial = adversarial;
        cfg.ablation.no_arv = no_arv;
        PipelineOutcome out = run_pipeline(cfg);
        m.tail_llmser += out.llmser.groups.at("short").values.at("H@10");
        m.tail_base += out.baseline.groups.at("short").values.at("H@10");
        m.head_llmser += out.llmser.groups.at("long").values.at("H@10");
        m.head_base += out.baseline.groups.at("long").values.at("H@10");
    }
    const double n = static_cast<double>(seeds.size());
    m.tail_llmser /= n;
    m.tail_base /= n;
    m.head_llmser /= n;
    m.head_base /= n;
    return m;
}

const std::vector<std::uint64_t> kSeeds{201, 202, 203, 204, 205};

bool criterion_efficacy(std::string& detail, CohortMeans& oracle_means) {
    oracle_means = run_seeds("c7", /*adversarial=*/false, /*no_arv=*/false, kSeeds);
    std::ostringstream note;
    note << "tail H@10 " << oracle_means.tail_base << " -> " << oracle_means.tail_llmser
         << ", head " << oracle_means.head_base << " -> " << oracle_means.head_llmser;
    detail = note.str();
    if (oracle_means.tail_llmser < oracle_means.tail_base) return false;
    if (oracle_means.head_base - oracle_means.head_llmser >= 0.02) return false;
    return true;
}

bool criterion_ablation(std::string& detail) {
    CohortMeans full = run_seeds("c8_full", /*adversarial=*/true, /*no_arv=*/false, kSeeds);
    CohortMeans ablated = run_seeds("c8_noarv", /*adversarial=*/true, /*no_arv=*/true, kSeeds);
    std::ostringstream note;
    note << "adversarial tail H@10: full " << full.tail_llmser << " vs no-arv "
         << ablated.tail_llmser;
    detail = note.str();
    return ablated.tail_llmser < full.tail_llmser;
}

}  // namespace

int main() {
    g_root = (fs::temp_directory_path() / "llmser_acceptance").string();
    fs::remove_all(g_root);
    fs::create_directories(g_root);

    struct Criterion {
        const char* name;
        std::function<bool(std::string&)> run;
    };
    CohortMeans means;
    std::vector<Criterion> criteria = {
        {"1 equation suite (bce / decay grid / channel collapse)", criterion_equations},
        {"2 ranking ops match brute-force sorting on 100 random models", criterion_oracle_equivalence},
        {"3 gradients match central finite differences (<= 1e-4 rel)", criterion_gradients},
        {"4 metric recomputation, ordering laws, t-test oracle", criterion_metrics},
        {"5 reliability identities and degenerate-user rule", criterion_reliability},
        {"6 byte-identical reruns and silent warm cache", criterion_determinism},
        {"7 tail gain without head loss on the synthetic corpus",
         [&](std::string& d) { return criterion_efficacy(d, means); }},
        {"8 reliability weighting beats alpha=1 under an adversarial filter", criterion_ablation},
    };

    // per-criterion wall-clock budgets (seconds); 0 = covered by the suite cap
    const double budgets[] = {10.0, 60.0, 0.0, 0.0, 0.0, 0.0, 600.0, 0.0};
    int failures = 0;
    std::size_t index = 0;
    for (auto& c : criteria) {
        const auto start = std::chrono::steady_clock::now();
        std::string detail;
        bool ok = false;
        try {
            ok = c.run(detail);
        } catch (const std::exception& e) {
            detail = std::string("exception: ") + e.what();
        }
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        const double budget = budgets[index++];
        if (ok && budget > 0.0 && secs > budget) {
            ok = false;
            detail += (detail.empty() ? "" : "; ") + std::string("over the ") +
                      std::to_string(static_cast<int>(budget)) + "s budget";
        }
        std::printf("[%s] criterion %s (%.1fs)%s%s\n", ok ? "PASS" : "FAIL", c.name, secs,
                    detail.empty() ? "" : " — ", detail.c_str());
        std::fflush(stdout);
        if (!ok) ++failures;
    }
    fs::remove_all(g_root);
    if (failures > 0) {
        std::printf("%d criterion(s) failed\n", failures);
        return 1;
    }
    std::printf("all acceptance criteria passed\n");
    return 0;
}
