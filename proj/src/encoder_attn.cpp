#include "llmser/backbone.hpp"
#include "llmser/detail/smallmath.hpp"
#include "llmser/encoder.hpp"

#include <cmath>

namespace llmser {

namespace {

using detail::matmul;
using detail::matmul_grad_w;
using detail::matmul_grad_x;

constexpr double kLnEps = 1e-5;

struct LnCache {
    std::vector<double> xhat;     // n x d
    std::vector<double> inv_std;  // n
    std::vector<double> out;      // n x d
};

struct LayerCache {
    LnCache ln1, ln2;
    std::vector<double> q, k, v;    // n x d
    std::vector<double> probs;      // heads x n x n, causal-masked softmax rows
    std::vector<double> att_concat; // n x d, heads concatenated before Wo
    std::vector<double> ffn_pre;    // n x d, W1 preactivation + b1
    std::vector<double> ffn_act;    // n x d, after ReLU
    std::vector<double> att_mask, ffn_mask;  // dropout
};

struct AttnCache final : EncodeCache {
    std::size_t n = 0;
    std::vector<double> x0_mask;  // input dropout
    std::vector<LayerCache> layers;
    LnCache lnf;
};

void layer_norm_forward(std::span<const double> x, std::span<const double> g,
                        std::span<const double> b, std::size_t n, std::size_t d, LnCache& c) {
    c.xhat.assign(n * d, 0.0);
    c.inv_std.assign(n, 0.0);
    c.out.assign(n * d, 0.0);
    for (std::size_t t = 0; t < n; ++t) {
        const double* xr = x.data() + t * d;
        double mean = 0.0;
        for (std::size_t i = 0; i < d; ++i) mean += xr[i];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            const double dv = xr[i] - mean;
            var += dv * dv;
        }
        var /= static_cast<double>(d);
        const double inv = 1.0 / std::sqrt(var + kLnEps);
        c.inv_std[t] = inv;
        for (std::size_t i = 0; i < d; ++i) {
            const double xh = (xr[i] - mean) * inv;
            c.xhat[t * d + i] = xh;
            c.out[t * d + i] = g[i] * xh + b[i];
        }
    }
}

// dx += backward(dy); also accumulates dg, db.
void layer_norm_backward(const LnCache& c, std::span<const double> g, std::size_t n, std::size_t d,
                         const std::vector<double>& dy, std::vector<double>& dx,
                         std::span<double> dg, std::span<double> db) {
    for (std::size_t t = 0; t < n; ++t) {
        const double* xh = c.xhat.data() + t * d;
        const double* dyr = dy.data() + t * d;
        double mean_dxhat = 0.0;
        double mean_dxhat_xhat = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            const double dxh = dyr[i] * g[i];
            mean_dxhat += dxh;
            mean_dxhat_xhat += dxh * xh[i];
            dg[i] += dyr[i] * xh[i];
            db[i] += dyr[i];
        }
        mean_dxhat /= static_cast<double>(d);
        mean_dxhat_xhat /= static_cast<double>(d);
        const double inv = c.inv_std[t];
        for (std::size_t i = 0; i < d; ++i) {
            const double dxh = dyr[i] * g[i];
            dx[t * d + i] += inv * (dxh - mean_dxhat - xh[i] * mean_dxhat_xhat);
        }
    }
}

// Pre-norm causal transformer: learned positions, multi-head attention with a
// causal mask, pointwise FFN, shared input/output embedding table, final norm.
class AttnEncoder final : public Encoder {
public:
    explicit AttnEncoder(const BackboneConfig& cfg)
        : d_(static_cast<std::size_t>(cfg.embedding_dim)),
          heads_(static_cast<std::size_t>(cfg.num_heads)),
          layers_(static_cast<std::size_t>(cfg.num_layers)),
          max_len_(static_cast<std::size_t>(cfg.max_seq_len)),
          dropout_(cfg.dropout) {}

    void register_params(ParamLayout& layout) const override {
        layout.add("pos", max_len_, d_);
        for (std::size_t l = 0; l < layers_; ++l) {
            const std::string p = "l" + std::to_string(l) + ".";
            layout.add(p + "ln1.g", d_, 1);
            layout.add(p + "ln1.b", d_, 1);
            layout.add(p + "Wq", d_, d_);
            layout.add(p + "Wk", d_, d_);
            layout.add(p + "Wv", d_, d_);
            layout.add(p + "Wo", d_, d_);
            layout.add(p + "ln2.g", d_, 1);
            layout.add(p + "ln2.b", d_, 1);
            layout.add(p + "ff.W1", d_, d_);
            layout.add(p + "ff.b1", d_, 1);
            layout.add(p + "ff.W2", d_, d_);
            layout.add(p + "ff.b2", d_, 1);
        }
        layout.add("lnf.g", d_, 1);
        layout.add("lnf.b", d_, 1);
    }

    void init_params(ModelParams& params, SeededRng& rng) const override {
        for (double& x : params.view("pos")) x = rng.normal(0.0, 0.1);
        const double limit = std::sqrt(6.0 / static_cast<double>(d_ + d_));
        for (std::size_t l = 0; l < layers_; ++l) {
            const std::string p = "l" + std::to_string(l) + ".";
            for (const char* name : {"Wq", "Wk", "Wv", "Wo", "ff.W1", "ff.W2"}) {
                for (double& x : params.view(p + name)) x = rng.uniform_sym(limit);
            }
            for (const char* name : {"ln1.g", "ln2.g"}) {
                for (double& x : params.view(p + name)) x = 1.0;
            }
            for (const char* name : {"ln1.b", "ln2.b", "ff.b1", "ff.b2"}) {
                for (double& x : params.view(p + name)) x = 0.0;
            }
        }
        for (double& x : params.view("lnf.g")) x = 1.0;
        for (double& x : params.view("lnf.b")) x = 0.0;
    }

    std::unique_ptr<EncodeCache> forward(const ModelParams& params, std::span<const int> items,
                                         bool training, SeededRng* dropout_rng,
                                         std::vector<double>& reps) const override {
        const std::size_t n = items.size();
        const std::size_t d = d_;
        const std::size_t dh = d / heads_;
        const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
        const bool drop = training && dropout_ > 0.0 && dropout_rng != nullptr;
        const double keep_inv = dropout_ > 0.0 ? 1.0 / (1.0 - dropout_) : 1.0;
        auto draw_mask = [&](std::vector<double>& mask) {
            mask.assign(n * d, 1.0);
            for (double& m : mask) m = dropout_rng->next_double() < dropout_ ? 0.0 : keep_inv;
        };

        auto cache = std::make_unique<AttnCache>();
        cache->n = n;
        cache->layers.resize(layers_);

        auto emb = params.view("emb");
        auto pos = params.view("pos");
        std::vector<double> x(n * d);
        for (std::size_t t = 0; t < n; ++t) {
            const double* row = emb.data() + static_cast<std::size_t>(items[t]) * d;
            for (std::size_t i = 0; i < d; ++i) x[t * d + i] = row[i] + pos[t * d + i];
        }
        if (drop) {
            draw_mask(cache->x0_mask);
            for (std::size_t i = 0; i < n * d; ++i) x[i] *= cache->x0_mask[i];
        }

        std::vector<double> tmp(n * d);
        for (std::size_t l = 0; l < layers_; ++l) {
            LayerCache& lc = cache->layers[l];
            const std::string p = "l" + std::to_string(l) + ".";
            layer_norm_forward(x, params.view(p + "ln1.g"), params.view(p + "ln1.b"), n, d, lc.ln1);

            lc.q.assign(n * d, 0.0);
            lc.k.assign(n * d, 0.0);
            lc.v.assign(n * d, 0.0);
            matmul(lc.ln1.out, params.view(p + "Wq"), lc.q, n, d, d);
            matmul(lc.ln1.out, params.view(p + "Wk"), lc.k, n, d, d);
            matmul(lc.ln1.out, params.view(p + "Wv"), lc.v, n, d, d);

            lc.probs.assign(heads_ * n * n, 0.0);
            lc.att_concat.assign(n * d, 0.0);
            std::vector<double> row(n);
            for (std::size_t h = 0; h < heads_; ++h) {
                const std::size_t off = h * dh;
                for (std::size_t i = 0; i < n; ++i) {
                    double best = -1e300;
                    for (std::size_t j = 0; j <= i; ++j) {
                        double s = 0.0;
                        for (std::size_t a = 0; a < dh; ++a) {
                            s += lc.q[i * d + off + a] * lc.k[j * d + off + a];
                        }
                        row[j] = s * scale;
                        if (row[j] > best) best = row[j];
                    }
                    double denom = 0.0;
                    for (std::size_t j = 0; j <= i; ++j) {
                        row[j] = std::exp(row[j] - best);
                        denom += row[j];
                    }
                    double* pr = lc.probs.data() + (h * n + i) * n;
                    for (std::size_t j = 0; j <= i; ++j) pr[j] = row[j] / denom;
                    double* out = lc.att_concat.data() + i * d + off;
                    for (std::size_t a = 0; a < dh; ++a) {
                        double s = 0.0;
                        for (std::size_t j = 0; j <= i; ++j) s += pr[j] * lc.v[j * d + off + a];
                        out[a] = s;
                    }
                }
            }
            matmul(lc.att_concat, params.view(p + "Wo"), tmp, n, d, d);
            if (drop) {
                draw_mask(lc.att_mask);
                for (std::size_t i = 0; i < n * d; ++i) tmp[i] *= lc.att_mask[i];
            }
            for (std::size_t i = 0; i < n * d; ++i) x[i] += tmp[i];

            layer_norm_forward(x, params.view(p + "ln2.g"), params.view(p + "ln2.b"), n, d, lc.ln2);
            lc.ffn_pre.assign(n * d, 0.0);
            matmul(lc.ln2.out, params.view(p + "ff.W1"), lc.ffn_pre, n, d, d);
            auto b1 = params.view(p + "ff.b1");
            lc.ffn_act.assign(n * d, 0.0);
            for (std::size_t t = 0; t < n; ++t) {
                for (std::size_t i = 0; i < d; ++i) {
                    const double v = lc.ffn_pre[t * d + i] + b1[i];
                    lc.ffn_pre[t * d + i] = v;
                    lc.ffn_act[t * d + i] = v > 0.0 ? v : 0.0;
                }
            }
            matmul(lc.ffn_act, params.view(p + "ff.W2"), tmp, n, d, d);
            auto b2 = params.view(p + "ff.b2");
            for (std::size_t t = 0; t < n; ++t) {
                for (std::size_t i = 0; i < d; ++i) tmp[t * d + i] += b2[i];
            }
            if (drop) {
                draw_mask(lc.ffn_mask);
                for (std::size_t i = 0; i < n * d; ++i) tmp[i] *= lc.ffn_mask[i];
            }
            for (std::size_t i = 0; i < n * d; ++i) x[i] += tmp[i];
        }

        layer_norm_forward(x, params.view("lnf.g"), params.view("lnf.b"), n, d, cache->lnf);
        reps = cache->lnf.out;
        return cache;
    }

    void backward(const ModelParams& params, const EncodeCache& cache_base,
                  std::span<const int> items, const std::vector<double>& d_reps,
                  std::vector<double>& grad) const override {
        const auto& cache = static_cast<const AttnCache&>(cache_base);
        const std::size_t n = cache.n;
        const std::size_t d = d_;
        const std::size_t dh = d / heads_;
        const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
        const bool drop = !cache.x0_mask.empty();

        auto view_of = [&](const std::string& name) {
            const auto& e = params.layout.find(name);
            return std::span<const double>(params.data.data() + e.offset, e.size());
        };
        auto grad_of = [&](const std::string& name) {
            const auto& e = params.layout.find(name);
            return std::span<double>(grad.data() + e.offset, e.size());
        };

        std::vector<double> dx(n * d, 0.0);
        layer_norm_backward(cache.lnf, view_of("lnf.g"), n, d, d_reps, dx, grad_of("lnf.g"),
                            grad_of("lnf.b"));

        std::vector<double> dtmp(n * d), dh2(n * d), dact(n * d), dpre(n * d);
        std::vector<double> datt(n * d), dq(n * d), dk(n * d), dv(n * d), dh1(n * d);
        std::vector<double> dprow(n);
        for (std::size_t l = layers_; l-- > 0;) {
            const LayerCache& lc = cache.layers[l];
            const std::string p = "l" + std::to_string(l) + ".";

            // FFN sublayer: x_out = x_mid + dropout(W2 relu(W1 ln2(x_mid) + b1) + b2)
            dtmp = dx;
            if (drop) {
                for (std::size_t i = 0; i < n * d; ++i) dtmp[i] *= lc.ffn_mask[i];
            }
            auto gb2 = grad_of(p + "ff.b2");
            for (std::size_t t = 0; t < n; ++t) {
                for (std::size_t i = 0; i < d; ++i) gb2[i] += dtmp[t * d + i];
            }
            std::fill(dact.begin(), dact.end(), 0.0);
            matmul_grad_w(lc.ffn_act, dtmp, grad_of(p + "ff.W2"), n, d, d);
            matmul_grad_x(dtmp, view_of(p + "ff.W2"), dact, n, d, d);
            auto gb1 = grad_of(p + "ff.b1");
            for (std::size_t t = 0; t < n; ++t) {
                for (std::size_t i = 0; i < d; ++i) {
                    dpre[t * d + i] = lc.ffn_pre[t * d + i] > 0.0 ? dact[t * d + i] : 0.0;
                    gb1[i] += dpre[t * d + i];
                }
            }
            std::fill(dh2.begin(), dh2.end(), 0.0);
            matmul_grad_w(lc.ln2.out, dpre, grad_of(p + "ff.W1"), n, d, d);
            matmul_grad_x(dpre, view_of(p + "ff.W1"), dh2, n, d, d);
            layer_norm_backward(lc.ln2, view_of(p + "ln2.g"), n, d, dh2, dx, grad_of(p + "ln2.g"),
                                grad_of(p + "ln2.b"));

            // attention sublayer: x_mid = x_in + dropout(concat(heads) Wo)
            dtmp = dx;
            if (drop) {
                for (std::size_t i = 0; i < n * d; ++i) dtmp[i] *= lc.att_mask[i];
            }
            std::fill(datt.begin(), datt.end(), 0.0);
            matmul_grad_w(lc.att_concat, dtmp, grad_of(p + "Wo"), n, d, d);
            matmul_grad_x(dtmp, view_of(p + "Wo"), datt, n, d, d);

            std::fill(dq.begin(), dq.end(), 0.0);
            std::fill(dk.begin(), dk.end(), 0.0);
            std::fill(dv.begin(), dv.end(), 0.0);
            for (std::size_t h = 0; h < heads_; ++h) {
                const std::size_t off = h * dh;
                for (std::size_t i = 0; i < n; ++i) {
                    const double* pr = lc.probs.data() + (h * n + i) * n;
                    const double* dout = datt.data() + i * d + off;
                    double dot_dp_p = 0.0;
                    for (std::size_t j = 0; j <= i; ++j) {
                        double dp = 0.0;
                        for (std::size_t a = 0; a < dh; ++a) dp += dout[a] * lc.v[j * d + off + a];
                        dprow[j] = dp;
                        dot_dp_p += dp * pr[j];
                        for (std::size_t a = 0; a < dh; ++a) {
                            dv[j * d + off + a] += pr[j] * dout[a];
                        }
                    }
                    for (std::size_t j = 0; j <= i; ++j) {
                        const double ds = pr[j] * (dprow[j] - dot_dp_p) * scale;
                        for (std::size_t a = 0; a < dh; ++a) {
                            dq[i * d + off + a] += ds * lc.k[j * d + off + a];
                            dk[j * d + off + a] += ds * lc.q[i * d + off + a];
                        }
                    }
                }
            }
            std::fill(dh1.begin(), dh1.end(), 0.0);
            matmul_grad_w(lc.ln1.out, dq, grad_of(p + "Wq"), n, d, d);
            matmul_grad_x(dq, view_of(p + "Wq"), dh1, n, d, d);
            matmul_grad_w(lc.ln1.out, dk, grad_of(p + "Wk"), n, d, d);
            matmul_grad_x(dk, view_of(p + "Wk"), dh1, n, d, d);
            matmul_grad_w(lc.ln1.out, dv, grad_of(p + "Wv"), n, d, d);
            matmul_grad_x(dv, view_of(p + "Wv"), dh1, n, d, d);
            layer_norm_backward(lc.ln1, view_of(p + "ln1.g"), n, d, dh1, dx, grad_of(p + "ln1.g"),
                                grad_of(p + "ln1.b"));
        }

        auto gemb = grad_of("emb");
        auto gpos = grad_of("pos");
        for (std::size_t t = 0; t < n; ++t) {
            for (std::size_t i = 0; i < d; ++i) {
                double g = dx[t * d + i];
                if (drop) g *= cache.x0_mask[t * d + i];
                gemb[static_cast<std::size_t>(items[t]) * d + i] += g;
                gpos[t * d + i] += g;
            }
        }
    }

private:
    std::size_t d_;
    std::size_t heads_;
    std::size_t layers_;
    std::size_t max_len_;
    double dropout_;
};

}  // namespace

std::unique_ptr<Encoder> make_attn_encoder(const BackboneConfig& cfg);
std::unique_ptr<Encoder> make_attn_encoder(const BackboneConfig& cfg) {
    return std::make_unique<AttnEncoder>(cfg);
}

}  // namespace llmser
