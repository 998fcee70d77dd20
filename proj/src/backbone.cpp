#include "llmser/backbone.hpp"

#include "llmser/common.hpp"
#include "llmser/detail/smallmath.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <optional>
#include <unordered_set>

namespace llmser {

using nlohmann::json;

std::unique_ptr<Encoder> make_gru_encoder(const BackboneConfig& cfg);
std::unique_ptr<Encoder> make_attn_encoder(const BackboneConfig& cfg);

std::string to_string(EncoderKind k) {
    return k == EncoderKind::Recurrent ? "recurrent" : "causal-self-attention";
}

std::string to_string(Direction d) { return d == Direction::Forward ? "forward" : "reverse"; }

EncoderKind encoder_kind_from_string(const std::string& s) {
    if (s == "recurrent") return EncoderKind::Recurrent;
    if (s == "causal-self-attention" || s == "attention") return EncoderKind::CausalSelfAttention;
    throw ConfigError("unknown encoder_kind: " + s);
}

Direction direction_from_string(const std::string& s) {
    if (s == "forward") return Direction::Forward;
    if (s == "reverse") return Direction::Reverse;
    throw ConfigError("unknown direction: " + s);
}

void BackboneConfig::validate() const {
    if (embedding_dim < 1) throw ConfigError("embedding_dim must be positive");
    if (max_seq_len < 1) throw ConfigError("max_seq_len must be positive");
    if (num_layers < 1) throw ConfigError("num_layers must be positive");
    if (num_heads < 1) throw ConfigError("num_heads must be positive");
    if (encoder_kind == EncoderKind::CausalSelfAttention && embedding_dim % num_heads != 0) {
        throw ConfigError("embedding_dim must be divisible by num_heads");
    }
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must be in [0, 1)");
    if (learning_rate <= 0.0) throw ConfigError("learning_rate must be positive");
    if (epochs < 1) throw ConfigError("epochs must be positive");
    if (negatives_per_positive < 1) throw ConfigError("negatives_per_positive must be positive");
    if (batch_size < 1) throw ConfigError("batch_size must be positive");
}

std::size_t ParamLayout::add(const std::string& name, std::size_t rows, std::size_t cols) {
    Entry e{name, total, rows, cols};
    entries.push_back(e);
    total += rows * cols;
    return e.offset;
}

const ParamLayout::Entry& ParamLayout::find(const std::string& name) const {
    for (const auto& e : entries) {
        if (e.name == name) return e;
    }
    throw std::logic_error("unknown parameter: " + name);
}

std::span<double> ModelParams::view(const std::string& name) {
    const auto& e = layout.find(name);
    return {data.data() + e.offset, e.size()};
}

std::span<const double> ModelParams::view(const std::string& name) const {
    const auto& e = layout.find(name);
    return {data.data() + e.offset, e.size()};
}

std::unique_ptr<Encoder> make_encoder(const BackboneConfig& config) {
    if (config.encoder_kind == EncoderKind::Recurrent) return make_gru_encoder(config);
    return make_attn_encoder(config);
}

// --- loss primitives --------------------------------------------------------

namespace {
constexpr double kSigmoidFloor = 1e-7;
constexpr double kSigmoidCeil = 1.0 - 1e-7;
}  // namespace

double clamped_sigmoid(double x) {
    const double s = 1.0 / (1.0 + std::exp(-x));
    return std::min(kSigmoidCeil, std::max(kSigmoidFloor, s));
}

double bce_loss(const std::vector<double>& positive_scores,
                const std::vector<double>& negative_scores) {
    if (positive_scores.size() != negative_scores.size()) {
        throw ConfigError("bce_loss: step lists must have equal length");
    }
    double loss = 0.0;
    for (std::size_t t = 0; t < positive_scores.size(); ++t) {
        loss += -std::log(clamped_sigmoid(positive_scores[t]));
        loss += -std::log(1.0 - clamped_sigmoid(negative_scores[t]));
    }
    return loss;
}

namespace {

// d(-log sig_clamped(s))/ds and d(-log(1 - sig_clamped(s)))/ds; zero where the
// clamp is active, matching the piecewise-constant forward there.
double d_pos_term(double s) {
    const double sig = 1.0 / (1.0 + std::exp(-s));
    if (sig <= kSigmoidFloor || sig >= kSigmoidCeil) return 0.0;
    return sig - 1.0;
}

double d_neg_term(double s) {
    const double sig = 1.0 / (1.0 + std::exp(-s));
    if (sig <= kSigmoidFloor || sig >= kSigmoidCeil) return 0.0;
    return sig;
}

}  // namespace

void bce_loss_grad(const std::vector<double>& positive_scores,
                   const std::vector<double>& negative_scores, std::vector<double>& d_pos,
                   std::vector<double>& d_neg) {
    if (positive_scores.size() != negative_scores.size()) {
        throw ConfigError("bce_loss: step lists must have equal length");
    }
    d_pos.resize(positive_scores.size());
    d_neg.resize(negative_scores.size());
    for (std::size_t t = 0; t < positive_scores.size(); ++t) {
        d_pos[t] = d_pos_term(positive_scores[t]);
        d_neg[t] = d_neg_term(negative_scores[t]);
    }
}

// --- model construction ------------------------------------------------------

namespace {

std::uint64_t hash_items(std::span<const int> items) {
    std::uint64_t h = kFnvOffset;
    for (int v : items) h = fnv1a64_mix(static_cast<std::uint64_t>(v), h);
    return h;
}

}  // namespace

TrainedBackbone initialize_backbone(const Catalog& catalog, const BackboneConfig& config,
                                    Direction direction) {
    config.validate();
    std::vector<std::string> vocab;
    vocab.reserve(catalog.item_count());
    for (const auto& it : catalog.items()) vocab.push_back(it.item_id);
    if (vocab.empty()) throw DataError("catalog has no items");
    TrainedBackbone model = TrainedBackbone::make_empty(config, direction, std::move(vocab));

    SeededRng rng(derive_seed(config.seed, "init"));
    auto emb = model.params_.view("emb");
    const std::size_t d = static_cast<std::size_t>(config.embedding_dim);
    for (std::size_t i = d; i < emb.size(); ++i) emb[i] = rng.normal(0.0, 0.1);  // row 0 = padding
    model.encoder_->init_params(model.params_, rng);
    return model;
}

int TrainedBackbone::vocab_index(const std::string& item_id) const {
    auto it = index_.find(item_id);
    if (it == index_.end()) throw DataError("item not in model vocab: " + item_id);
    return it->second;
}

std::span<const double> TrainedBackbone::embedding_row(int vocab_index) const {
    const std::size_t d = static_cast<std::size_t>(config_.embedding_dim);
    auto emb = params_.view("emb");
    return emb.subspan(static_cast<std::size_t>(vocab_index) * d, d);
}

std::vector<int> TrainedBackbone::map_items(const std::vector<std::string>& items) const {
    std::vector<int> idx;
    idx.reserve(items.size());
    for (const auto& id : items) idx.push_back(vocab_index(id));
    return idx;
}

std::vector<double> TrainedBackbone::encode_last(const std::vector<std::string>& context) const {
    if (context.empty()) throw DataError("empty context");
    std::vector<int> idx = map_items(context);
    if (direction_ == Direction::Reverse) std::reverse(idx.begin(), idx.end());
    const std::size_t max_len = static_cast<std::size_t>(config_.max_seq_len);
    if (idx.size() > max_len) idx.erase(idx.begin(), idx.end() - static_cast<long>(max_len));
    std::vector<double> reps;
    encoder_->forward(params_, idx, /*training=*/false, nullptr, reps);
    const std::size_t d = static_cast<std::size_t>(config_.embedding_dim);
    return std::vector<double>(reps.end() - static_cast<long>(d), reps.end());
}

std::vector<double> TrainedBackbone::score_all(const std::vector<std::string>& context) const {
    const std::vector<double> rep = encode_last(context);
    const std::size_t d = rep.size();
    auto emb = params_.view("emb");
    std::vector<double> scores(vocab_.size(), 0.0);
    for (std::size_t i = 0; i < vocab_.size(); ++i) {
        const double* row = emb.data() + (i + 1) * d;
        double s = 0.0;
        for (std::size_t a = 0; a < d; ++a) s += rep[a] * row[a];
        scores[i] = s;
    }
    return scores;
}

std::vector<double> TrainedBackbone::score_all(const UserSequence& s) const {
    return score_all(s.items);
}

std::vector<std::string> TrainedBackbone::top_k(const std::vector<std::string>& context,
                                                std::size_t k,
                                                const std::set<std::string>& exclude) const {
    std::unordered_set<int> excluded;
    for (const auto& id : exclude) {
        auto it = index_.find(id);
        if (it != index_.end()) excluded.insert(it->second);
    }
    const std::size_t rankable = vocab_.size() - excluded.size();
    if (k < 1 || k > rankable) {
        throw ConfigError("top_k: k=" + std::to_string(k) + " outside [1, " +
                          std::to_string(rankable) + "]");
    }
    const std::vector<double> scores = score_all(context);
    std::vector<int> order;
    order.reserve(rankable);
    for (std::size_t i = 0; i < vocab_.size(); ++i) {
        if (!excluded.count(static_cast<int>(i) + 1)) order.push_back(static_cast<int>(i));
    }
    std::partial_sort(order.begin(), order.begin() + static_cast<long>(k), order.end(),
                      [&](int a, int b) {
                          if (scores[a] != scores[b]) return scores[a] > scores[b];
                          return a < b;
                      });
    std::vector<std::string> out;
    out.reserve(k);
    for (std::size_t i = 0; i < k; ++i) out.push_back(vocab_[static_cast<std::size_t>(order[i])]);
    return out;
}

std::vector<std::string> TrainedBackbone::top_k(const UserSequence& s, std::size_t k,
                                                const std::set<std::string>& exclude) const {
    return top_k(s.items, k, exclude);
}

// --- training ----------------------------------------------------------------

std::size_t train_steps(std::size_t n, const BackboneConfig& config) {
    if (n < 2) return 0;
    return std::min(n - 1, static_cast<std::size_t>(config.max_seq_len));
}

std::vector<std::vector<int>> sample_negatives(std::span<const int> items, std::size_t vocab_size,
                                               const BackboneConfig& config, SeededRng& rng) {
    std::unordered_set<int> own(items.begin(), items.end());
    if (own.size() >= vocab_size) {
        throw DataError("cannot sample negatives: sequence covers the catalog");
    }
    const std::size_t steps = train_steps(items.size(), config);
    std::vector<std::vector<int>> negs(steps);
    for (std::size_t t = 0; t < steps; ++t) {
        negs[t].reserve(static_cast<std::size_t>(config.negatives_per_positive));
        for (int j = 0; j < config.negatives_per_positive; ++j) {
            int draw;
            do {
                draw = static_cast<int>(rng.below(vocab_size)) + 1;
            } while (own.count(draw));
            negs[t].push_back(draw);
        }
    }
    return negs;
}

double sequence_loss_with_negatives(const ModelParams& params, const Encoder& encoder,
                                    const BackboneConfig& config, std::span<const int> items,
                                    const std::vector<std::vector<int>>& negatives, double weight,
                                    std::vector<double>* grad, bool training,
                                    SeededRng* dropout_rng) {
    const std::size_t steps = train_steps(items.size(), config);
    if (steps == 0) return 0.0;
    if (negatives.size() != steps) {
        throw std::logic_error("negatives do not match training steps");
    }
    const std::size_t d = static_cast<std::size_t>(config.embedding_dim);
    const std::size_t start = items.size() - 1 - steps;
    std::span<const int> inputs = items.subspan(start, steps);

    std::vector<double> reps;
    auto cache = encoder.forward(params, inputs, training, dropout_rng, reps);
    auto emb = params.view("emb");

    std::vector<double> d_reps;
    std::span<double> gemb;
    if (grad) {
        d_reps.assign(steps * d, 0.0);
        const auto& e = params.layout.find("emb");
        gemb = std::span<double>(grad->data() + e.offset, e.size());
    }

    double loss = 0.0;
    for (std::size_t t = 0; t < steps; ++t) {
        const double* rep = reps.data() + t * d;
        const int pos = items[start + 1 + t];
        const double* prow = emb.data() + static_cast<std::size_t>(pos) * d;
        double s_pos = 0.0;
        for (std::size_t a = 0; a < d; ++a) s_pos += rep[a] * prow[a];
        loss += -std::log(clamped_sigmoid(s_pos));
        if (grad) {
            const double dp = weight * d_pos_term(s_pos);
            for (std::size_t a = 0; a < d; ++a) {
                d_reps[t * d + a] += dp * prow[a];
                gemb[static_cast<std::size_t>(pos) * d + a] += dp * rep[a];
            }
        }
        for (int neg : negatives[t]) {
            const double* nrow = emb.data() + static_cast<std::size_t>(neg) * d;
            double s_neg = 0.0;
            for (std::size_t a = 0; a < d; ++a) s_neg += rep[a] * nrow[a];
            loss += -std::log(1.0 - clamped_sigmoid(s_neg));
            if (grad) {
                const double dn = weight * d_neg_term(s_neg);
                for (std::size_t a = 0; a < d; ++a) {
                    d_reps[t * d + a] += dn * nrow[a];
                    gemb[static_cast<std::size_t>(neg) * d + a] += dn * rep[a];
                }
            }
        }
    }
    if (grad) {
        encoder.backward(params, *cache, inputs, d_reps, *grad);
    }
    return weight * loss;
}

TrainedBackbone train_core(const Catalog& catalog, const BackboneConfig& config,
                           Direction direction, const std::vector<TrainExample>& examples) {
    if (examples.empty()) throw DataError("no training sequences");
    TrainedBackbone model = initialize_backbone(catalog, config, direction);
    const std::size_t vocab_size = model.vocab_.size();
    const std::size_t psize = model.params_.data.size();

    std::vector<double> grad(psize, 0.0);
    std::vector<double> m(psize, 0.0), v(psize, 0.0);
    const double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    long adam_t = 0;

    std::vector<std::size_t> perm(examples.size());
    for (std::size_t e = 0; e < static_cast<std::size_t>(config.epochs); ++e) {
        for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
        SeededRng shuffle_rng(derive_seed(config.seed, "shuffle", e));
        shuffle_rng.shuffle(perm);

        double epoch_loss = 0.0;
        for (std::size_t batch_start = 0; batch_start < perm.size();
             batch_start += static_cast<std::size_t>(config.batch_size)) {
            const std::size_t batch_end =
                std::min(perm.size(), batch_start + static_cast<std::size_t>(config.batch_size));
            std::fill(grad.begin(), grad.end(), 0.0);
            for (std::size_t bi = batch_start; bi < batch_end; ++bi) {
                const TrainExample& ex = examples[perm[bi]];
                for (const TrainChannel& ch : ex.channels) {
                    // weight-0 channels contribute nothing and draw nothing,
                    // so collapsing a channel reproduces the single-channel
                    // trainer bit for bit
                    if (ch.weight == 0.0 || train_steps(ch.items.size(), config) == 0) continue;
                    const std::uint64_t chash = hash_items(ch.items);
                    SeededRng neg_rng(derive_seed(config.seed, "neg", e, chash));
                    auto negs = sample_negatives(ch.items, vocab_size, config, neg_rng);
                    std::optional<SeededRng> drop_rng;
                    if (config.dropout > 0.0) {
                        drop_rng.emplace(derive_seed(config.seed, "drop", e, chash));
                    }
                    epoch_loss += sequence_loss_with_negatives(
                        model.params_, *model.encoder_, config, ch.items, negs, ch.weight, &grad,
                        /*training=*/true, drop_rng ? &*drop_rng : nullptr);
                }
            }
            const double inv_batch = 1.0 / static_cast<double>(batch_end - batch_start);
            ++adam_t;
            const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(adam_t));
            const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(adam_t));
            for (std::size_t i = 0; i < psize; ++i) {
                const double g = grad[i] * inv_batch;
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                const double mh = m[i] / bc1;
                const double vh = v[i] / bc2;
                model.params_.data[i] -= config.learning_rate * mh / (std::sqrt(vh) + eps);
            }
        }
        model.epoch_losses_.push_back(epoch_loss / static_cast<double>(examples.size()));
    }
    return model;
}

TrainedBackbone train_backbone(const Catalog& catalog, const std::vector<UserSequence>& sequences,
                               const BackboneConfig& config, Direction direction,
                               const std::map<std::string, double>* per_user_weight) {
    if (sequences.empty()) throw DataError("no training sequences");
    std::vector<TrainExample> examples;
    examples.reserve(sequences.size());
    for (const auto& s : sequences) {
        TrainChannel ch;
        ch.items.reserve(s.items.size());
        for (const auto& id : s.items) {
            auto idx = catalog.item_index(id);
            if (!idx) throw DataError("sequence item not in catalog: " + id);
            ch.items.push_back(static_cast<int>(*idx) + 1);
        }
        if (direction == Direction::Reverse) std::reverse(ch.items.begin(), ch.items.end());
        if (per_user_weight) {
            auto it = per_user_weight->find(s.user_id);
            if (it != per_user_weight->end()) {
                if (it->second < 0.0) throw ConfigError("per_user_weight must be >= 0");
                ch.weight = it->second;
            }
        }
        TrainExample ex;
        ex.channels.push_back(std::move(ch));
        examples.push_back(std::move(ex));
    }
    return train_core(catalog, config, direction, examples);
}

// --- checkpoint io -------------------------------------------------------------

namespace {

json config_to_json(const BackboneConfig& c) {
    return json{{"encoder_kind", to_string(c.encoder_kind)},
                {"embedding_dim", c.embedding_dim},
                {"max_seq_len", c.max_seq_len},
                {"num_layers", c.num_layers},
                {"num_heads", c.num_heads},
                {"dropout", c.dropout},
                {"learning_rate", c.learning_rate},
                {"epochs", c.epochs},
                {"negatives_per_positive", c.negatives_per_positive},
                {"batch_size", c.batch_size},
                {"seed", c.seed}};
}

BackboneConfig config_from_json(const json& j) {
    BackboneConfig c;
    c.encoder_kind = encoder_kind_from_string(j.at("encoder_kind").get<std::string>());
    c.embedding_dim = j.at("embedding_dim").get<int>();
    c.max_seq_len = j.at("max_seq_len").get<int>();
    c.num_layers = j.at("num_layers").get<int>();
    c.num_heads = j.at("num_heads").get<int>();
    c.dropout = j.at("dropout").get<double>();
    c.learning_rate = j.at("learning_rate").get<double>();
    c.epochs = j.at("epochs").get<int>();
    c.negatives_per_positive = j.at("negatives_per_positive").get<int>();
    c.batch_size = j.at("batch_size").get<int>();
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
}

}  // namespace

TrainedBackbone TrainedBackbone::make_empty(const BackboneConfig& config, Direction direction,
                                            std::vector<std::string> vocab) {
    TrainedBackbone model;
    model.config_ = config;
    model.direction_ = direction;
    model.vocab_ = std::move(vocab);
    for (std::size_t i = 0; i < model.vocab_.size(); ++i) {
        model.index_.emplace(model.vocab_[i], static_cast<int>(i) + 1);
    }
    model.encoder_ = make_encoder(config);
    model.params_.layout.add("emb", model.vocab_.size() + 1,
                             static_cast<std::size_t>(config.embedding_dim));
    model.encoder_->register_params(model.params_.layout);
    model.params_.data.assign(model.params_.layout.total, 0.0);
    return model;
}

void TrainedBackbone::save(const std::string& path) const {
    json out = {{"kind", "llmser-backbone"},
                {"version", 1},
                {"config", config_to_json(config_)},
                {"direction", to_string(direction_)},
                {"vocab", vocab_},
                {"epoch_losses", epoch_losses_}};
    json tensors = json::array();
    for (const auto& e : params_.layout.entries) {
        json t = {{"name", e.name}, {"rows", e.rows}, {"cols", e.cols}};
        t["data"] = std::vector<double>(params_.data.begin() + static_cast<long>(e.offset),
                                        params_.data.begin() + static_cast<long>(e.offset + e.size()));
        tensors.push_back(std::move(t));
    }
    out["params"] = std::move(tensors);
    std::ofstream f(path);
    if (!f) throw DataError("cannot write checkpoint: " + path);
    f << out.dump();
    if (!f) throw DataError("failed writing checkpoint: " + path);
}

TrainedBackbone TrainedBackbone::load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DataError("cannot read checkpoint: " + path);
    json in = json::parse(f, nullptr, false);
    if (in.is_discarded() || in.value("kind", "") != "llmser-backbone") {
        throw DataError(path + ": not a backbone checkpoint");
    }
    BackboneConfig config = config_from_json(in.at("config"));
    Direction direction = direction_from_string(in.at("direction").get<std::string>());
    auto vocab = in.at("vocab").get<std::vector<std::string>>();
    TrainedBackbone model = make_empty(config, direction, std::move(vocab));
    model.epoch_losses_ = in.value("epoch_losses", std::vector<double>{});
    for (const auto& t : in.at("params")) {
        const auto& e = model.params_.layout.find(t.at("name").get<std::string>());
        if (e.rows != t.at("rows").get<std::size_t>() || e.cols != t.at("cols").get<std::size_t>()) {
            throw DataError(path + ": tensor shape mismatch for " + e.name);
        }
        auto data = t.at("data").get<std::vector<double>>();
        if (data.size() != e.size()) throw DataError(path + ": tensor size mismatch for " + e.name);
        std::copy(data.begin(), data.end(), model.params_.data.begin() + static_cast<long>(e.offset));
    }
    return model;
}

}  // namespace llmser
