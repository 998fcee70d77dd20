#include "llmser/backbone.hpp"
#include "llmser/detail/smallmath.hpp"
#include "llmser/encoder.hpp"

#include <cmath>

namespace llmser {

namespace {

using detail::dot;
using detail::matvec;
using detail::matvec_add;
using detail::matvec_t_add;
using detail::outer_add;

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct GruCache final : EncodeCache {
    std::size_t n = 0;
    std::vector<double> e;   // n x d, embedded inputs after input dropout
    std::vector<double> z;   // n x d
    std::vector<double> r;   // n x d
    std::vector<double> c;   // n x d
    std::vector<double> h;   // n x d, hidden states before output dropout
    std::vector<double> rh;  // n x d, r ⊙ h_prev
    std::vector<double> in_mask;   // dropout masks (empty when dropout == 0)
    std::vector<double> out_mask;
};

// Single gated recurrent layer over item embeddings; representation at step t
// is the hidden state h_t.
class GruEncoder final : public Encoder {
public:
    explicit GruEncoder(const BackboneConfig& cfg) : d_(static_cast<std::size_t>(cfg.embedding_dim)), dropout_(cfg.dropout) {}

    void register_params(ParamLayout& layout) const override {
        for (const char* gate : {"z", "r", "c"}) {
            layout.add(std::string("gru.W") + gate, d_, d_);
            layout.add(std::string("gru.U") + gate, d_, d_);
            layout.add(std::string("gru.b") + gate, d_, 1);
        }
    }

    void init_params(ModelParams& params, SeededRng& rng) const override {
        const double limit = std::sqrt(6.0 / static_cast<double>(d_ + d_));
        for (const char* gate : {"z", "r", "c"}) {
            for (double& w : params.view(std::string("gru.W") + gate)) w = rng.uniform_sym(limit);
            for (double& w : params.view(std::string("gru.U") + gate)) w = rng.uniform_sym(limit);
            for (double& b : params.view(std::string("gru.b") + gate)) b = 0.0;
        }
    }

    std::unique_ptr<EncodeCache> forward(const ModelParams& params, std::span<const int> items,
                                         bool training, SeededRng* dropout_rng,
                                         std::vector<double>& reps) const override {
        const std::size_t n = items.size();
        const std::size_t d = d_;
        auto cache = std::make_unique<GruCache>();
        cache->n = n;
        cache->e.assign(n * d, 0.0);
        cache->z.assign(n * d, 0.0);
        cache->r.assign(n * d, 0.0);
        cache->c.assign(n * d, 0.0);
        cache->h.assign(n * d, 0.0);
        cache->rh.assign(n * d, 0.0);
        const bool drop = training && dropout_ > 0.0 && dropout_rng != nullptr;
        if (drop) {
            cache->in_mask.assign(n * d, 1.0);
            cache->out_mask.assign(n * d, 1.0);
        }
        const double keep_inv = dropout_ > 0.0 ? 1.0 / (1.0 - dropout_) : 1.0;

        auto emb = params.view("emb");
        auto Wz = params.view("gru.Wz"), Uz = params.view("gru.Uz"), bz = params.view("gru.bz");
        auto Wr = params.view("gru.Wr"), Ur = params.view("gru.Ur"), br = params.view("gru.br");
        auto Wc = params.view("gru.Wc"), Uc = params.view("gru.Uc"), bc = params.view("gru.bc");

        std::vector<double> h_prev(d, 0.0);
        std::vector<double> a(d);
        reps.assign(n * d, 0.0);
        for (std::size_t t = 0; t < n; ++t) {
            double* e = cache->e.data() + t * d;
            const double* row = emb.data() + static_cast<std::size_t>(items[t]) * d;
            for (std::size_t i = 0; i < d; ++i) e[i] = row[i];
            if (drop) {
                for (std::size_t i = 0; i < d; ++i) {
                    const double m = dropout_rng->next_double() < dropout_ ? 0.0 : keep_inv;
                    cache->in_mask[t * d + i] = m;
                    e[i] *= m;
                }
            }
            std::span<const double> es(e, d);
            std::span<const double> hs(h_prev.data(), d);

            double* z = cache->z.data() + t * d;
            matvec(Wz, es, a, d, d);
            matvec_add(Uz, hs, a, d, d);
            for (std::size_t i = 0; i < d; ++i) z[i] = sigmoid(a[i] + bz[i]);

            double* r = cache->r.data() + t * d;
            matvec(Wr, es, a, d, d);
            matvec_add(Ur, hs, a, d, d);
            for (std::size_t i = 0; i < d; ++i) r[i] = sigmoid(a[i] + br[i]);

            double* rh = cache->rh.data() + t * d;
            for (std::size_t i = 0; i < d; ++i) rh[i] = r[i] * h_prev[i];

            double* c = cache->c.data() + t * d;
            matvec(Wc, es, a, d, d);
            matvec_add(Uc, std::span<const double>(rh, d), a, d, d);
            for (std::size_t i = 0; i < d; ++i) c[i] = std::tanh(a[i] + bc[i]);

            double* h = cache->h.data() + t * d;
            for (std::size_t i = 0; i < d; ++i) {
                h[i] = (1.0 - z[i]) * h_prev[i] + z[i] * c[i];
                h_prev[i] = h[i];
            }
            double* rep = reps.data() + t * d;
            for (std::size_t i = 0; i < d; ++i) rep[i] = h[i];
            if (drop) {
                for (std::size_t i = 0; i < d; ++i) {
                    const double m = dropout_rng->next_double() < dropout_ ? 0.0 : keep_inv;
                    cache->out_mask[t * d + i] = m;
                    rep[i] *= m;
                }
            }
        }
        return cache;
    }

    void backward(const ModelParams& params, const EncodeCache& cache_base,
                  std::span<const int> items, const std::vector<double>& d_reps,
                  std::vector<double>& grad) const override {
        const auto& cache = static_cast<const GruCache&>(cache_base);
        const std::size_t n = cache.n;
        const std::size_t d = d_;
        const bool drop = !cache.in_mask.empty();

        auto view_of = [&](const char* name) {
            const auto& e = params.layout.find(name);
            return std::span<const double>(params.data.data() + e.offset, e.size());
        };
        auto grad_of = [&](const char* name) {
            const auto& e = params.layout.find(name);
            return std::span<double>(grad.data() + e.offset, e.size());
        };
        auto Wz = view_of("gru.Wz"), Uz = view_of("gru.Uz");
        auto Wr = view_of("gru.Wr"), Ur = view_of("gru.Ur");
        auto Wc = view_of("gru.Wc"), Uc = view_of("gru.Uc");
        auto gWz = grad_of("gru.Wz"), gUz = grad_of("gru.Uz"), gbz = grad_of("gru.bz");
        auto gWr = grad_of("gru.Wr"), gUr = grad_of("gru.Ur"), gbr = grad_of("gru.br");
        auto gWc = grad_of("gru.Wc"), gUc = grad_of("gru.Uc"), gbc = grad_of("gru.bc");
        auto gemb = grad_of("emb");

        std::vector<double> dh(d, 0.0);         // gradient flowing into h_t
        std::vector<double> dh_prev(d, 0.0);
        std::vector<double> da(d), de(d), drh(d);
        for (std::size_t t = n; t-- > 0;) {
            const double* z = cache.z.data() + t * d;
            const double* r = cache.r.data() + t * d;
            const double* c = cache.c.data() + t * d;
            const double* rh = cache.rh.data() + t * d;
            const double* e = cache.e.data() + t * d;
            const double* h_prev = t > 0 ? cache.h.data() + (t - 1) * d : nullptr;

            for (std::size_t i = 0; i < d; ++i) {
                double g = d_reps[t * d + i];
                if (drop) g *= cache.out_mask[t * d + i];
                dh[i] += g;
            }
            std::fill(dh_prev.begin(), dh_prev.end(), 0.0);
            std::fill(de.begin(), de.end(), 0.0);

            // candidate gate
            for (std::size_t i = 0; i < d; ++i) {
                const double dc = dh[i] * z[i];
                da[i] = dc * (1.0 - c[i] * c[i]);
                dh_prev[i] += dh[i] * (1.0 - z[i]);
            }
            outer_add(gWc, da, std::span<const double>(e, d));
            outer_add(gUc, da, std::span<const double>(rh, d));
            for (std::size_t i = 0; i < d; ++i) gbc[i] += da[i];
            std::fill(drh.begin(), drh.end(), 0.0);
            matvec_t_add(Uc, da, drh, d, d);
            matvec_t_add(Wc, da, de, d, d);

            // reset gate (through r ⊙ h_prev)
            for (std::size_t i = 0; i < d; ++i) {
                const double hp = h_prev ? h_prev[i] : 0.0;
                const double dr = drh[i] * hp;
                dh_prev[i] += drh[i] * r[i];
                da[i] = dr * r[i] * (1.0 - r[i]);
            }
            outer_add(gWr, da, std::span<const double>(e, d));
            if (h_prev) outer_add(gUr, da, std::span<const double>(h_prev, d));
            for (std::size_t i = 0; i < d; ++i) gbr[i] += da[i];
            matvec_t_add(Ur, da, dh_prev, d, d);
            matvec_t_add(Wr, da, de, d, d);

            // update gate
            for (std::size_t i = 0; i < d; ++i) {
                const double hp = h_prev ? h_prev[i] : 0.0;
                const double dz = dh[i] * (c[i] - hp);
                da[i] = dz * z[i] * (1.0 - z[i]);
            }
            outer_add(gWz, da, std::span<const double>(e, d));
            if (h_prev) outer_add(gUz, da, std::span<const double>(h_prev, d));
            for (std::size_t i = 0; i < d; ++i) gbz[i] += da[i];
            matvec_t_add(Uz, da, dh_prev, d, d);
            matvec_t_add(Wz, da, de, d, d);

            double* ge = gemb.data() + static_cast<std::size_t>(items[t]) * d;
            for (std::size_t i = 0; i < d; ++i) {
                ge[i] += drop ? de[i] * cache.in_mask[t * d + i] : de[i];
            }
            dh = dh_prev;
        }
    }

private:
    std::size_t d_;
    double dropout_;
};

}  // namespace

std::unique_ptr<Encoder> make_gru_encoder(const BackboneConfig& cfg);
std::unique_ptr<Encoder> make_gru_encoder(const BackboneConfig& cfg) {
    return std::make_unique<GruEncoder>(cfg);
}

}  // namespace llmser
