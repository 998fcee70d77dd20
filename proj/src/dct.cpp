#include "llmser/dct.hpp"

#include "llmser/common.hpp"

#include <algorithm>

namespace llmser {

void DCTConfig::validate() const {
    if (beta <= 0.0 || beta > 1.0) throw ConfigError("beta must be in (0, 1]");
    if (tail_threshold < 1) throw ConfigError("tail_threshold must be >= 1");
    backbone.validate();
}

double decay_weight(double omega, std::size_t n_u, const DCTConfig& cfg) {
    cfg.validate();
    if (omega < 0.0 || omega > 1.0) {
        throw DataError("omega outside [0, 1]; upstream clamp violated");
    }
    if (n_u > static_cast<std::size_t>(cfg.tail_threshold)) return cfg.beta * omega;
    return omega;
}

double weighted_loss(double loss_orig, double loss_aug, double alpha) {
    if (alpha < 0.0 || alpha > 1.0) throw DataError("alpha outside [0, 1]");
    return (1.0 - alpha) * loss_orig + alpha * loss_aug;
}

TrainedBackbone train_dual_channel(const Catalog& catalog,
                                   std::vector<AugmentedSequence>& augmented,
                                   const DCTConfig& cfg) {
    cfg.validate();
    if (augmented.empty()) throw DataError("no augmented sequences");

    auto map_ids = [&](const std::vector<std::string>& ids) {
        std::vector<int> idx;
        idx.reserve(ids.size());
        for (const auto& id : ids) {
            auto i = catalog.item_index(id);
            if (!i) throw DataError("sequence item not in catalog: " + id);
            idx.push_back(static_cast<int>(*i) + 1);
        }
        return idx;
    };

    std::vector<TrainExample> examples;
    examples.reserve(augmented.size());
    for (auto& a : augmented) {
        double alpha;
        if (a.weight) {
            alpha = *a.weight;
            if (alpha < 0.0 || alpha > 1.0) throw DataError("alpha outside [0, 1]");
        } else {
            if (!a.reliability) {
                throw DataError("augmented sequence for user " + a.user_id +
                                " carries no reliability; run validation first");
            }
            alpha = decay_weight(*a.reliability, a.original.items.size(), cfg);
            a.weight = alpha;
        }
        TrainExample ex;
        TrainChannel orig;
        orig.items = map_ids(a.original.items);
        orig.weight = 1.0 - alpha;
        TrainChannel aug;
        aug.items = map_ids(a.combined);
        aug.weight = alpha;
        ex.channels.push_back(std::move(orig));
        ex.channels.push_back(std::move(aug));
        examples.push_back(std::move(ex));
    }
    return train_core(catalog, cfg.backbone, Direction::Forward, examples);
}

}  // namespace llmser
