#pragma once

#include "llmser/catalog.hpp"
#include "llmser/encoder.hpp"
#include "llmser/rng.hpp"

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace llmser {

enum class EncoderKind { Recurrent, CausalSelfAttention };
enum class Direction { Forward, Reverse };

std::string to_string(EncoderKind k);
std::string to_string(Direction d);
EncoderKind encoder_kind_from_string(const std::string& s);
Direction direction_from_string(const std::string& s);

struct BackboneConfig {
    EncoderKind encoder_kind = EncoderKind::Recurrent;
    int embedding_dim = 32;
    int max_seq_len = 50;
    int num_layers = 1;   // attention blocks; the recurrent encoder is a single GRU layer
    int num_heads = 2;    // ignored for recurrent
    double dropout = 0.0;
    double learning_rate = 0.005;
    int epochs = 30;
    int negatives_per_positive = 1;
    int batch_size = 32;
    std::uint64_t seed = 42;

    void validate() const;
};

// A trained sequence encoder plus the shared item embedding table. Vocab index
// i (1-based) maps to vocab()[i-1]; index 0 is padding with a zeroed embedding
// row, excluded from loss and ranking.
class TrainedBackbone {
public:
    TrainedBackbone() = default;

    const BackboneConfig& config() const { return config_; }
    Direction direction() const { return direction_; }
    const std::vector<std::string>& vocab() const { return vocab_; }
    std::size_t vocab_size() const { return vocab_.size(); }
    const ModelParams& params() const { return params_; }
    ModelParams& mutable_params() { return params_; }
    const std::vector<double>& epoch_losses() const { return epoch_losses_; }

    std::span<const double> embedding_row(int vocab_index) const;
    int vocab_index(const std::string& item_id) const;  // 1-based; throws on unknown

    // Final-position sequence representation. Reverse-direction models reverse
    // the context internally, then the encoder input keeps its most recent
    // max_seq_len positions.
    std::vector<double> encode_last(const std::vector<std::string>& context) const;

    // One finite score per vocab item (dot products of the final representation
    // with item embeddings), in vocab order.
    std::vector<double> score_all(const std::vector<std::string>& context) const;
    std::vector<double> score_all(const UserSequence& s) const;

    // Top-k item ids by score, ties broken by ascending vocab index; items in
    // `exclude` never appear. k must fit the rankable set.
    std::vector<std::string> top_k(const std::vector<std::string>& context, std::size_t k,
                                   const std::set<std::string>& exclude) const;
    std::vector<std::string> top_k(const UserSequence& s, std::size_t k,
                                   const std::set<std::string>& exclude) const;

    void save(const std::string& path) const;
    static TrainedBackbone load(const std::string& path);

private:
    friend TrainedBackbone initialize_backbone(const Catalog&, const BackboneConfig&, Direction);
    friend TrainedBackbone train_core(const Catalog&, const BackboneConfig&, Direction,
                                      const std::vector<struct TrainExample>&);

    static TrainedBackbone make_empty(const BackboneConfig& config, Direction direction,
                                      std::vector<std::string> vocab);
    std::vector<int> map_items(const std::vector<std::string>& items) const;

    BackboneConfig config_;
    Direction direction_ = Direction::Forward;
    std::vector<std::string> vocab_;
    std::unordered_map<std::string, int> index_;
    ModelParams params_;
    std::shared_ptr<const Encoder> encoder_;
    std::vector<double> epoch_losses_;
};

// Fresh model with seeded initial parameters (vocab from the catalog).
TrainedBackbone initialize_backbone(const Catalog& catalog, const BackboneConfig& config,
                                    Direction direction);

// One weighted training channel: a full item-index sequence plus the loss
// weight it contributes. Channels with weight exactly 0 are skipped entirely,
// including their negative-sampling draws.
struct TrainChannel {
    std::vector<int> items;  // vocab indices, direction already applied
    double weight = 1.0;
};

struct TrainExample {
    std::vector<TrainChannel> channels;
};

// Shared deterministic trainer: binary cross-entropy over next-item steps with
// uniform negative sampling (never the positive or any item of the channel's
// own sequence), Adam updates, fixed per-stream seeds.
TrainedBackbone train_core(const Catalog& catalog, const BackboneConfig& config,
                           Direction direction, const std::vector<TrainExample>& examples);

// Next-item training on one sequence per user. Reverse direction reverses each
// sequence internally. per_user_weight scales each user's loss contribution
// (missing users default to 1).
TrainedBackbone train_backbone(const Catalog& catalog, const std::vector<UserSequence>& sequences,
                               const BackboneConfig& config, Direction direction,
                               const std::map<std::string, double>* per_user_weight = nullptr);

// --- loss primitives --------------------------------------------------------

// Logistic function with outputs clamped into [1e-7, 1-1e-7] before any log.
double clamped_sigmoid(double x);

// L = -sum_t [log sig(pos_t) + log(1 - sig(neg_t))] over equal-length step lists.
double bce_loss(const std::vector<double>& positive_scores,
                const std::vector<double>& negative_scores);
void bce_loss_grad(const std::vector<double>& positive_scores,
                   const std::vector<double>& negative_scores, std::vector<double>& d_pos,
                   std::vector<double>& d_neg);

// Loss (and optionally gradient) of one channel given pre-drawn negatives,
// negatives[t] holding the draws for step t. Pure in params, so it is the
// function finite-difference checks probe. Inputs are the channel's items
// after direction transform; the training window is the last max_seq_len
// steps.
double sequence_loss_with_negatives(const ModelParams& params, const Encoder& encoder,
                                    const BackboneConfig& config, std::span<const int> items,
                                    const std::vector<std::vector<int>>& negatives, double weight,
                                    std::vector<double>* grad, bool training = false,
                                    SeededRng* dropout_rng = nullptr);

// Draws the negatives for a channel: negatives_per_positive uniform draws per
// step, excluding every item that appears in the channel.
std::vector<std::vector<int>> sample_negatives(std::span<const int> items, std::size_t vocab_size,
                                               const BackboneConfig& config, SeededRng& rng);

// Number of next-item steps the trainer derives from a channel of length n.
std::size_t train_steps(std::size_t n, const BackboneConfig& config);

}  // namespace llmser
