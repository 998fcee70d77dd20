#pragma once

#include "llmser/backbone.hpp"
#include "llmser/sia.hpp"

#include <string>
#include <vector>

namespace llmser {

struct DCTConfig {
    double beta = 0.5;
    int tail_threshold = 3;
    BackboneConfig backbone;

    void validate() const;
};

// alpha = beta * omega for head users (n_u > T), omega unchanged for tail
// users (n_u <= T).
double decay_weight(double omega, std::size_t n_u, const DCTConfig& cfg);

// Per-user convex combination (1-alpha) * L(S_u) + alpha * L(augmented).
double weighted_loss(double loss_orig, double loss_aug, double alpha);

// Trains a forward-direction model where each user contributes both channels,
// weighted (1-alpha) / alpha. Each record must carry a reliability unless its
// weight is already set. Alphas are computed with decay_weight over the
// original (train) sequence length; records with weight preset keep it.
TrainedBackbone train_dual_channel(const Catalog& catalog,
                                   std::vector<AugmentedSequence>& augmented,
                                   const DCTConfig& cfg);

}  // namespace llmser
