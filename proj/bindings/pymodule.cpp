#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "llmser/arv.hpp"
#include "llmser/common.hpp"
#include "llmser/backbone.hpp"
#include "llmser/catalog.hpp"
#include "llmser/dct.hpp"
#include "llmser/embed.hpp"
#include "llmser/evalx.hpp"
#include "llmser/llmio.hpp"
#include "llmser/pipeline.hpp"
#include "llmser/sia.hpp"
#include "llmser/synthetic.hpp"

#include <nlohmann/json.hpp>

namespace py = pybind11;
using namespace llmser;

namespace {

PipelineConfig config_from_path(const std::string& path,
                                const std::vector<std::string>& overrides) {
    PipelineConfig cfg = PipelineConfig::from_file(path);
    for (const auto& kv : overrides) cfg.apply_override(kv);
    cfg.validate();
    return cfg;
}

py::dict metrics_to_dict(const MetricsReport& r) {
    py::dict out;
    out["model"] = r.model_tag;
    out["seed"] = r.seed;
    py::dict overall;
    overall["users"] = r.overall.user_count;
    for (const auto& [k, v] : r.overall.values) overall[py::str(k)] = v;
    out["overall"] = overall;
    py::dict groups;
    for (const auto& [label, mv] : r.groups) {
        py::dict g;
        g["users"] = mv.user_count;
        for (const auto& [k, v] : mv.values) g[py::str(k)] = v;
        groups[py::str(label)] = g;
    }
    out["groups"] = groups;
    return out;
}

}  // namespace

PYBIND11_MODULE(_llmser, m) {
    m.doc() = "sequential-recommendation data augmentation core";

    py::register_exception<ConfigError>(m, "ConfigError");
    py::register_exception<DataError>(m, "DataError");
    py::register_exception<TransportError>(m, "TransportError");
    py::register_exception<StageError>(m, "StageError");

    py::class_<Catalog>(m, "Catalog")
        .def_static("ingest", &Catalog::ingest, py::arg("interactions_file"),
                    py::arg("items_file"), py::arg("min_interactions") = 1)
        .def_static("load", &Catalog::load, py::arg("path"))
        .def("serialize", &Catalog::serialize, py::arg("path"))
        .def_property_readonly("num_items", &Catalog::item_count)
        .def_property_readonly("num_users", &Catalog::user_count)
        .def("title", &Catalog::title, py::arg("item_id"))
        .def("user_ids",
             [](const Catalog& c) {
                 std::vector<std::string> out;
                 for (const auto& s : c.sequences()) out.push_back(s.user_id);
                 return out;
             })
        .def("sequence",
             [](const Catalog& c, const std::string& user_id) {
                 const UserSequence* s = c.find_sequence(user_id);
                 if (!s) throw DataError("unknown user: " + user_id);
                 return s->items;
             })
        .def("__repr__", [](const Catalog& c) {
            return "<Catalog items=" + std::to_string(c.item_count()) +
                   " users=" + std::to_string(c.user_count()) + ">";
        });

    m.def("reverse_sequence", [](const std::vector<std::string>& items) {
        UserSequence s{"", items};
        return reverse_sequence(s).items;
    });

    m.def("leave_one_out_split", [](const Catalog& c) {
        py::dict out;
        for (const auto& [user, e] : leave_one_out_split(c).per_user) {
            py::dict entry;
            entry["train"] = e.train;
            entry["valid"] = e.valid ? py::cast(*e.valid) : py::none();
            entry["test"] = e.test ? py::cast(*e.test) : py::none();
            out[py::str(user)] = entry;
        }
        return out;
    });

    m.def(
        "length_histogram",
        [](const Catalog& c, const std::vector<std::size_t>& bounds) {
            py::list out;
            for (const auto& b : length_histogram(c, bounds)) {
                out.append(py::make_tuple(b.label, b.user_count, b.fraction));
            }
            return out;
        },
        py::arg("catalog"), py::arg("bounds") = std::vector<std::size_t>{1, 2, 3, 4, 8, 16, 32, 64});

    py::class_<BackboneConfig>(m, "BackboneConfig")
        .def(py::init([](const std::string& encoder_kind, int embedding_dim, int max_seq_len,
                         int num_layers, int num_heads, double dropout, double learning_rate,
                         int epochs, int negatives_per_positive, int batch_size,
                         std::uint64_t seed) {
                 BackboneConfig c;
                 c.encoder_kind = encoder_kind_from_string(encoder_kind);
                 c.embedding_dim = embedding_dim;
                 c.max_seq_len = max_seq_len;
                 c.num_layers = num_layers;
                 c.num_heads = num_heads;
                 c.dropout = dropout;
                 c.learning_rate = learning_rate;
                 c.epochs = epochs;
                 c.negatives_per_positive = negatives_per_positive;
                 c.batch_size = batch_size;
                 c.seed = seed;
                 c.validate();
                 return c;
             }),
             py::arg("encoder_kind") = "recurrent", py::arg("embedding_dim") = 32,
             py::arg("max_seq_len") = 50, py::arg("num_layers") = 1, py::arg("num_heads") = 2,
             py::arg("dropout") = 0.0, py::arg("learning_rate") = 0.005, py::arg("epochs") = 30,
             py::arg("negatives_per_positive") = 1, py::arg("batch_size") = 32,
             py::arg("seed") = 42);

    py::class_<TrainedBackbone>(m, "Backbone")
        .def_static("load", &TrainedBackbone::load, py::arg("path"))
        .def("save", &TrainedBackbone::save, py::arg("path"))
        .def_property_readonly("direction",
                               [](const TrainedBackbone& b) { return to_string(b.direction()); })
        .def_property_readonly("vocab", &TrainedBackbone::vocab)
        .def_property_readonly("epoch_losses", &TrainedBackbone::epoch_losses)
        .def("score_all",
             [](const TrainedBackbone& b, const std::vector<std::string>& context) {
                 return b.score_all(context);
             },
             py::arg("context"))
        .def("top_k",
             [](const TrainedBackbone& b, const std::vector<std::string>& context, std::size_t k,
                const std::set<std::string>& exclude) { return b.top_k(context, k, exclude); },
             py::arg("context"), py::arg("k"), py::arg("exclude") = std::set<std::string>{});

    m.def(
        "train_backbone",
        [](const Catalog& catalog, const BackboneConfig& cfg, const std::string& direction,
           const std::optional<std::map<std::string, double>>& per_user_weight) {
            std::vector<UserSequence> seqs = catalog.sequences();
            return train_backbone(catalog, seqs, cfg, direction_from_string(direction),
                                  per_user_weight ? &*per_user_weight : nullptr);
        },
        py::arg("catalog"), py::arg("config"), py::arg("direction") = "forward",
        py::arg("per_user_weight") = py::none(),
        py::call_guard<py::gil_scoped_release>());

    m.def("bce_loss", &bce_loss, py::arg("positive_scores"), py::arg("negative_scores"));
    m.def(
        "decay_weight",
        [](double omega, std::size_t n_u, double beta, int tail_threshold) {
            DCTConfig cfg;
            cfg.beta = beta;
            cfg.tail_threshold = tail_threshold;
            return decay_weight(omega, n_u, cfg);
        },
        py::arg("omega"), py::arg("n_u"), py::arg("beta") = 0.5, py::arg("tail_threshold") = 3);
    m.def("weighted_loss", &weighted_loss, py::arg("loss_orig"), py::arg("loss_aug"),
          py::arg("alpha"));

    m.def("hit_rate_at_k", &hit_rate_at_k, py::arg("ranks"), py::arg("k"));
    m.def("ndcg_at_k", &ndcg_at_k, py::arg("ranks"), py::arg("k"));
    m.def("paired_t_test", &paired_t_test, py::arg("a"), py::arg("b"));
    m.def("parse_selection", &parse_selection, py::arg("text"), py::arg("pool_size"),
          py::arg("want"));

    m.def("embed_title", [](const std::string& text) {
        TrigramEmbedder e;
        return e.embed_title(text);
    });
    m.def("cosine", &cosine, py::arg("a"), py::arg("b"));
    m.def("score_reliability", [](const std::string& a, const std::string& b) {
        TrigramEmbedder e;
        return score_reliability(e, a, b);
    });

    m.def(
        "generate_synthetic",
        [](const std::string& out_dir, std::size_t users, std::size_t clusters,
           std::uint64_t seed, double tail_fraction) {
            SyntheticConfig cfg;
            cfg.num_users = users;
            cfg.num_clusters = clusters;
            cfg.seed = seed;
            cfg.tail_fraction = tail_fraction;
            SyntheticData data = generate_synthetic(cfg);
            write_synthetic(data, out_dir);
            return data.items.size();
        },
        py::arg("out_dir"), py::arg("users") = 200, py::arg("clusters") = 4, py::arg("seed") = 7,
        py::arg("tail_fraction") = 0.6);

    m.def(
        "run_stage",
        [](const std::string& config_path, const std::string& stage, const std::string& mode,
           const std::vector<std::string>& overrides) {
            const PipelineConfig cfg = config_from_path(config_path, overrides);
            py::gil_scoped_release release;
            run_stage(cfg, stage, mode);
        },
        py::arg("config_path"), py::arg("stage"), py::arg("mode") = "llmser",
        py::arg("overrides") = std::vector<std::string>{});

    m.def(
        "run_pipeline",
        [](const std::string& config_path, const std::vector<std::string>& overrides) {
            const PipelineConfig cfg = config_from_path(config_path, overrides);
            PipelineOutcome outcome;
            {
                py::gil_scoped_release release;
                outcome = run_pipeline(cfg);
            }
            py::dict out;
            out["baseline"] = metrics_to_dict(outcome.baseline);
            out["llmser"] = metrics_to_dict(outcome.llmser);
            out["table"] = outcome.table;
            out["p_value_hit"] = outcome.comparison.at("p_value_hit").get<double>();
            return out;
        },
        py::arg("config_path"), py::arg("overrides") = std::vector<std::string>{});
}
