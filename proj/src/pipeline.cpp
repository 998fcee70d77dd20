#include "llmser/pipeline.hpp"

#include "llmser/arv.hpp"
#include "llmser/common.hpp"
#include "llmser/dct.hpp"
#include "llmser/rng.hpp"
#include "llmser/sia.hpp"
#include "llmser/synthetic.hpp"

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <thread>
#include <unordered_set>

namespace llmser {

namespace fs = std::filesystem;
using nlohmann::json;

// --- config ---------------------------------------------------------------------

namespace {

LLMConfig llm_config_from_json(const json& j) {
    LLMConfig c;
    c.endpoint_url = j.value("endpoint_url", c.endpoint_url);
    c.model_name = j.value("model_name", c.model_name);
    c.temperature = j.value("temperature", c.temperature);
    c.max_retries = j.value("max_retries", c.max_retries);
    c.backoff_base = j.value("backoff_base", c.backoff_base);
    c.concurrency_limit = j.value("concurrency_limit", c.concurrency_limit);
    c.cache_path = j.value("cache_path", std::string("auto"));
    c.api_key_env = j.value("api_key_env", c.api_key_env);
    return c;
}

json llm_config_to_json(const LLMConfig& c) {
    return json{{"endpoint_url", c.endpoint_url},     {"model_name", c.model_name},
                {"temperature", c.temperature},       {"max_retries", c.max_retries},
                {"backoff_base", c.backoff_base},     {"concurrency_limit", c.concurrency_limit},
                {"cache_path", c.cache_path.empty() ? "auto" : c.cache_path},
                {"api_key_env", c.api_key_env}};
}

}  // namespace

PipelineConfig PipelineConfig::from_json(const json& j) {
    PipelineConfig c;
    c.seed = j.value("seed", c.seed);
    c.work_dir = j.value("work_dir", c.work_dir);

    if (j.contains("data")) {
        const auto& d = j.at("data");
        c.interactions_path = d.value("interactions", "");
        c.items_path = d.value("items", "");
        c.min_interactions = d.value("min_interactions", c.min_interactions);
    }
    if (j.contains("backbone")) {
        const auto& b = j.at("backbone");
        c.backbone.encoder_kind =
            encoder_kind_from_string(b.value("encoder_kind", std::string("recurrent")));
        c.backbone.embedding_dim = b.value("embedding_dim", c.backbone.embedding_dim);
        c.backbone.max_seq_len = b.value("max_seq_len", c.backbone.max_seq_len);
        c.backbone.num_layers = b.value("num_layers", c.backbone.num_layers);
        c.backbone.num_heads = b.value("num_heads", c.backbone.num_heads);
        c.backbone.dropout = b.value("dropout", c.backbone.dropout);
        c.backbone.learning_rate = b.value("learning_rate", c.backbone.learning_rate);
        c.backbone.epochs = b.value("epochs", c.backbone.epochs);
        c.backbone.negatives_per_positive =
            b.value("negatives_per_positive", c.backbone.negatives_per_positive);
        c.backbone.batch_size = b.value("batch_size", c.backbone.batch_size);
    }
    if (j.contains("augment")) {
        const auto& a = j.at("augment");
        c.candidate_pool_size = a.value("candidate_pool_size", c.candidate_pool_size);
        c.reason_pool_size = a.value("reason_pool_size", c.reason_pool_size);
        c.pseudo_items = a.value("pseudo_items", c.pseudo_items);
    }
    if (j.contains("dct")) {
        const auto& d = j.at("dct");
        c.beta = d.value("beta", c.beta);
        c.tail_threshold = d.value("tail_threshold", c.tail_threshold);
    }
    if (j.contains("llm")) {
        const auto& l = j.at("llm");
        c.llm_provider = l.value("provider", c.llm_provider);
        c.llm = llm_config_from_json(l);
        c.truth_path = l.value("truth_path", "");
        c.adversarial = l.value("adversarial", false);
    }
    if (j.contains("embedder")) {
        const auto& e = j.at("embedder");
        c.embedder_provider = e.value("provider", c.embedder_provider);
        c.embedder_http = llm_config_from_json(e);
    }
    if (j.contains("grouping")) {
        const auto& g = j.at("grouping");
        c.grouping.tail_threshold = g.value("tail_threshold", c.grouping.tail_threshold);
        c.grouping.cuts = g.value("cuts", c.grouping.cuts);
        c.grouping.labels = g.value("labels", c.grouping.labels);
    }
    if (j.contains("eval")) {
        const auto& e = j.at("eval");
        c.eval_ks = e.value("ks", c.eval_ks);
        c.emit_csv = e.value("emit_csv", c.emit_csv);
        c.context_alpha_gate = e.value("context_alpha_gate", c.context_alpha_gate);
    }
    if (j.contains("ablation")) {
        const auto& a = j.at("ablation");
        c.ablation.no_ccg = a.value("no_ccg", false);
        c.ablation.no_snf = a.value("no_snf", false);
        c.ablation.no_arv = a.value("no_arv", false);
        c.ablation.no_rcs = a.value("no_rcs", false);
        c.ablation.no_reason = a.value("no_reason", false);
        c.ablation.no_wd = a.value("no_wd", false);
    }
    return c;
}

PipelineConfig PipelineConfig::from_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot read config file: " + path);
    json j = json::parse(f, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw ConfigError("config is not a JSON object: " + path);
    return from_json(j);
}

json PipelineConfig::to_json() const {
    json j;
    j["seed"] = seed;
    j["work_dir"] = work_dir;
    j["data"] = {{"interactions", interactions_path},
                 {"items", items_path},
                 {"min_interactions", min_interactions}};
    j["backbone"] = {{"encoder_kind", to_string(backbone.encoder_kind)},
                     {"embedding_dim", backbone.embedding_dim},
                     {"max_seq_len", backbone.max_seq_len},
                     {"num_layers", backbone.num_layers},
                     {"num_heads", backbone.num_heads},
                     {"dropout", backbone.dropout},
                     {"learning_rate", backbone.learning_rate},
                     {"epochs", backbone.epochs},
                     {"negatives_per_positive", backbone.negatives_per_positive},
                     {"batch_size", backbone.batch_size}};
    j["augment"] = {{"candidate_pool_size", candidate_pool_size},
                    {"reason_pool_size", reason_pool_size},
                    {"pseudo_items", pseudo_items}};
    j["dct"] = {{"beta", beta}, {"tail_threshold", tail_threshold}};
    json l = llm_config_to_json(llm);
    l["provider"] = llm_provider;
    l["truth_path"] = truth_path;
    l["adversarial"] = adversarial;
    j["llm"] = std::move(l);
    json e = llm_config_to_json(embedder_http);
    e["provider"] = embedder_provider;
    j["embedder"] = std::move(e);
    j["grouping"] = {{"tail_threshold", grouping.tail_threshold},
                     {"cuts", grouping.cuts},
                     {"labels", grouping.labels}};
    j["eval"] = {{"ks", eval_ks}, {"emit_csv", emit_csv}, {"context_alpha_gate", context_alpha_gate}};
    j["ablation"] = {{"no_ccg", ablation.no_ccg},   {"no_snf", ablation.no_snf},
                     {"no_arv", ablation.no_arv},   {"no_rcs", ablation.no_rcs},
                     {"no_reason", ablation.no_reason}, {"no_wd", ablation.no_wd}};
    return j;
}

void PipelineConfig::apply_override(const std::string& key_eq_value) {
    const auto eq = key_eq_value.find('=');
    if (eq == std::string::npos) {
        throw ConfigError("--set expects key=value, got: " + key_eq_value);
    }
    std::string key = key_eq_value.substr(0, eq);
    const std::string value = key_eq_value.substr(eq + 1);
    std::replace(key.begin(), key.end(), '.', '/');
    json j = to_json();
    json parsed = json::parse(value, nullptr, false);
    if (parsed.is_discarded()) parsed = value;
    try {
        j[json::json_pointer("/" + key)] = parsed;
    } catch (const json::exception& e) {
        throw ConfigError("bad override key '" + key + "': " + e.what());
    }
    *this = from_json(j);
}

void PipelineConfig::validate() const {
    backbone.validate();
    grouping.validate();
    llm.validate();
    if (pseudo_items > candidate_pool_size) {
        throw ConfigError("pseudo_items (M) must not exceed candidate_pool_size (N)");
    }
    if (reason_pool_size < 1) throw ConfigError("reason_pool_size must be >= 1");
    if (beta <= 0.0 || beta > 1.0) throw ConfigError("beta must be in (0, 1]");
    if (tail_threshold < 1) throw ConfigError("tail_threshold must be >= 1");
    if (context_alpha_gate < 0.0 || context_alpha_gate > 1.0) {
        throw ConfigError("context_alpha_gate must be in [0, 1]");
    }
    if (llm_provider != "mock-first" && llm_provider != "synthetic-oracle" &&
        llm_provider != "http") {
        throw ConfigError("unknown llm provider: " + llm_provider);
    }
    if (llm_provider == "synthetic-oracle" && truth_path.empty()) {
        throw ConfigError("synthetic-oracle provider needs llm.truth_path");
    }
    if (llm_provider == "http" && llm.endpoint_url.empty()) {
        throw ConfigError("http provider needs llm.endpoint_url");
    }
    if (embedder_provider != "trigram" && embedder_provider != "http") {
        throw ConfigError("unknown embedder provider: " + embedder_provider);
    }
    for (std::size_t k : eval_ks) {
        if (k < 1) throw ConfigError("eval ks must be >= 1");
    }
}

std::string PipelineConfig::semantic_digest() const {
    json j = to_json();
    j.erase("work_dir");
    j["data"].erase("interactions");
    j["data"].erase("items");
    j["llm"].erase("cache_path");
    j["llm"].erase("truth_path");
    j["llm"].erase("endpoint_url");
    j["embedder"].erase("cache_path");
    j["embedder"].erase("endpoint_url");
    return to_hex(fnv1a64(j.dump()));
}

std::string PipelineConfig::catalog_path() const { return work_dir + "/catalog.jsonl"; }
std::string PipelineConfig::histogram_path() const { return work_dir + "/histogram.json"; }
std::string PipelineConfig::ccg_path() const { return work_dir + "/ccg.json"; }
std::string PipelineConfig::rcs_path() const { return work_dir + "/rcs.json"; }
std::string PipelineConfig::augmented_path() const { return work_dir + "/augmented.jsonl"; }
std::string PipelineConfig::validated_path() const { return work_dir + "/validated.jsonl"; }
std::string PipelineConfig::alphas_path() const { return work_dir + "/alphas.jsonl"; }
std::string PipelineConfig::model_path(const std::string& mode) const {
    return work_dir + "/model_" + mode + ".json";
}
std::string PipelineConfig::metrics_path(const std::string& mode) const {
    return work_dir + "/metrics_" + mode + ".json";
}
std::string PipelineConfig::manifest_path(const std::string& stage) const {
    return work_dir + "/manifests/" + stage + ".json";
}
std::string PipelineConfig::resolved_cache_path() const {
    if (llm.cache_path == "auto" || llm.cache_path.empty()) return work_dir + "/llm_cache.jsonl";
    if (llm.cache_path == "off") return "";
    return llm.cache_path;
}

// --- clients -----------------------------------------------------------------------

std::shared_ptr<LLMClient> make_pipeline_llm(const PipelineConfig& cfg) {
    std::shared_ptr<LLMClient> inner;
    if (cfg.llm_provider == "mock-first") {
        inner = make_mock_first_k();
    } else if (cfg.llm_provider == "synthetic-oracle") {
        SyntheticTruth truth = SyntheticTruth::load(cfg.truth_path);
        Catalog catalog = Catalog::load(cfg.catalog_path());
        inner = make_mock_oracle(
            make_truth_scorer(truth, catalog, std::max<std::size_t>(1, cfg.pseudo_items)),
            cfg.adversarial);
    } else if (cfg.llm_provider == "http") {
        inner = std::make_shared<HttpLLMClient>(cfg.llm);
    } else {
        throw ConfigError("unknown llm provider: " + cfg.llm_provider);
    }
    auto cache = std::make_shared<ResponseCache>(cfg.resolved_cache_path());
    return std::make_shared<CachingLLMClient>(inner, cache, cfg.llm.concurrency_limit);
}

std::unique_ptr<Embedder> make_pipeline_embedder(const PipelineConfig& cfg) {
    if (cfg.embedder_provider == "trigram") return make_trigram_embedder();
    if (cfg.embedder_provider == "http") return make_remote_embedder(cfg.embedder_http);
    throw ConfigError("unknown embedder provider: " + cfg.embedder_provider);
}

// --- helpers -----------------------------------------------------------------------

std::string file_digest(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot hash missing file: " + path);
    std::uint64_t h = kFnvOffset;
    char buf[4096];
    while (f.read(buf, sizeof(buf)) || f.gcount() > 0) {
        h = fnv1a64(std::string_view(buf, static_cast<std::size_t>(f.gcount())), h);
        if (!f) break;
    }
    return to_hex(h);
}

namespace {

void require_artifact(const std::string& stage, const std::string& path,
                      const std::string& producer) {
    if (!fs::exists(path)) {
        throw StageError(stage, "missing artifact " + path + "; run '" + producer + "' first");
    }
}

void write_manifest(const PipelineConfig& cfg, const std::string& stage, json manifest) {
    fs::create_directories(cfg.work_dir + "/manifests");
    manifest["stage"] = stage;
    manifest["config_digest"] = cfg.semantic_digest();
    std::ofstream f(cfg.manifest_path(stage));
    if (!f) throw DataError("cannot write manifest for stage " + stage);
    f << manifest.dump(2) << "\n";
}

json input_entry(const std::string& path) {
    return json{{"path", path}, {"fnv64", file_digest(path)}};
}

// Per-user tasks run on a small pool; exceptions surface after join.
template <typename Fn>
void parallel_for(std::size_t n, int workers, Fn&& fn) {
    workers = std::max(1, std::min(workers, 8));
    if (workers == 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mu;
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            while (true) {
                const std::size_t i = next.fetch_add(1);
                if (i >= n) return;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(error_mu);
                    if (!error) error = std::current_exception();
                    return;
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

std::vector<UserSequence> train_sequences(const Catalog& catalog, const DatasetSplit& split) {
    std::vector<UserSequence> out;
    out.reserve(catalog.user_count());
    for (const auto& s : catalog.sequences()) {
        const auto& entry = split.per_user.at(s.user_id);
        out.push_back(UserSequence{s.user_id, entry.train});
    }
    return out;
}

// uniform distinct items excluding `exclude`, in draw order
std::vector<std::string> random_pool(const Catalog& catalog, std::size_t n,
                                     const std::unordered_set<std::string>& exclude,
                                     SeededRng& rng) {
    std::vector<std::string> out;
    std::unordered_set<std::string> used;
    const auto& items = catalog.items();
    std::size_t distinct_excluded = 0;
    for (const auto& id : exclude) {
        if (catalog.item_index(id)) ++distinct_excluded;
    }
    const std::size_t available = items.size() - distinct_excluded;
    n = std::min(n, available);
    while (out.size() < n) {
        const auto& id = items[rng.below(items.size())].item_id;
        if (exclude.count(id) || used.count(id)) continue;
        used.insert(id);
        out.push_back(id);
    }
    return out;
}

BackboneConfig stage_backbone_config(const PipelineConfig& cfg, const std::string& stage) {
    BackboneConfig b = cfg.backbone;
    b.seed = derive_seed(cfg.seed, stage);
    return b;
}

// --- stages ------------------------------------------------------------------------

json stage_ingest(const PipelineConfig& cfg) {
    if (cfg.interactions_path.empty() || cfg.items_path.empty()) {
        throw ConfigError("data.interactions and data.items must be set");
    }
    require_artifact("ingest", cfg.interactions_path, "produce the interactions file");
    require_artifact("ingest", cfg.items_path, "produce the items file");
    fs::create_directories(cfg.work_dir);
    Catalog catalog = Catalog::ingest(cfg.interactions_path, cfg.items_path, cfg.min_interactions);
    catalog.serialize(cfg.catalog_path());
    json manifest = {{"inputs",
                      {{"interactions", input_entry(cfg.interactions_path)},
                       {"items", input_entry(cfg.items_path)}}},
                     {"outputs", {{"catalog", input_entry(cfg.catalog_path())}}},
                     {"stats",
                      {{"users", catalog.user_count()},
                       {"items", catalog.item_count()},
                       {"interactions_read", catalog.stats().interactions_read},
                       {"interactions_dropped", catalog.stats().interactions_dropped},
                       {"duplicate_items", catalog.stats().duplicate_items}}}};
    write_manifest(cfg, "ingest", manifest);
    return manifest;
}

json stage_stats(const PipelineConfig& cfg) {
    require_artifact("stats", cfg.catalog_path(), "ingest");
    Catalog catalog = Catalog::load(cfg.catalog_path());
    auto hist = length_histogram(catalog);
    json rows = json::array();
    for (const auto& b : hist) {
        rows.push_back({{"bucket", b.label}, {"users", b.user_count}, {"fraction", b.fraction}});
    }
    json out = {{"kind", "llmser-histogram"}, {"buckets", rows}};
    {
        std::ofstream f(cfg.histogram_path());
        f << out.dump(2) << "\n";
    }
    if (cfg.emit_csv) {
        std::ofstream f(cfg.work_dir + "/histogram.csv");
        f << "bucket,users,fraction\n";
        for (const auto& b : hist) {
            f << b.label << "," << b.user_count << "," << json(b.fraction).dump() << "\n";
        }
    }
    json manifest = {{"inputs", {{"catalog", input_entry(cfg.catalog_path())}}},
                     {"outputs", {{"histogram", input_entry(cfg.histogram_path())}}}};
    write_manifest(cfg, "stats", manifest);
    return manifest;
}

json stage_pretrain(const PipelineConfig& cfg, const std::string& stage, Direction direction) {
    require_artifact(stage, cfg.catalog_path(), "ingest");
    Catalog catalog = Catalog::load(cfg.catalog_path());
    DatasetSplit split = leave_one_out_split(catalog);
    BackboneConfig bcfg = stage_backbone_config(cfg, stage);
    TrainedBackbone model = train_backbone(catalog, train_sequences(catalog, split), bcfg, direction);
    const std::string out_path = direction == Direction::Reverse ? cfg.ccg_path() : cfg.rcs_path();
    model.save(out_path);
    json manifest = {{"inputs", {{"catalog", input_entry(cfg.catalog_path())}}},
                     {"outputs", {{"checkpoint", input_entry(out_path)}}},
                     {"seed", bcfg.seed},
                     {"direction", to_string(direction)},
                     {"final_epoch_loss", model.epoch_losses().empty() ? 0.0 : model.epoch_losses().back()}};
    write_manifest(cfg, stage, manifest);
    return manifest;
}

json stage_augment(const PipelineConfig& cfg, LLMClient* llm_override) {
    require_artifact("augment", cfg.catalog_path(), "ingest");
    if (!cfg.ablation.no_ccg) require_artifact("augment", cfg.ccg_path(), "pretrain-ccg");
    Catalog catalog = Catalog::load(cfg.catalog_path());
    DatasetSplit split = leave_one_out_split(catalog);

    std::optional<TrainedBackbone> ccg;
    if (!cfg.ablation.no_ccg) ccg = TrainedBackbone::load(cfg.ccg_path());

    std::shared_ptr<LLMClient> owned;
    LLMClient* llm = llm_override;
    if (!llm && !cfg.ablation.no_snf && cfg.pseudo_items > 0) {
        owned = make_pipeline_llm(cfg);
        llm = owned.get();
    }

    std::vector<UserSequence> users = train_sequences(catalog, split);
    std::vector<AugmentRecord> records(users.size());
    const std::string empty_prompt_hash = to_hex(fnv1a64(""));
    const std::size_t vocab = catalog.item_count();

    parallel_for(users.size(), cfg.llm.concurrency_limit, [&](std::size_t i) {
        const UserSequence& s = users[i];
        std::unordered_set<std::string> history(s.items.begin(), s.items.end());
        CandidatePool pool;
        if (cfg.ablation.no_ccg) {
            SeededRng rng(derive_seed(cfg.seed, "no-ccg-pool", fnv1a64(s.user_id)));
            auto ids = random_pool(catalog, cfg.candidate_pool_size, history, rng);
            pool.user_id = s.user_id;
            int rank = 1;
            for (auto& id : ids) pool.entries.push_back(PoolEntry{id, catalog.title(id), rank++});
        } else {
            const std::size_t n_eff =
                std::min(cfg.candidate_pool_size, vocab - history.size());
            pool = generate_candidate_pool(*ccg, catalog, s, n_eff);
        }
        if (pool.size() < cfg.pseudo_items) {
            throw StageError("augment", "user " + s.user_id + " pool of " +
                                            std::to_string(pool.size()) +
                                            " cannot yield M=" + std::to_string(cfg.pseudo_items));
        }
        AugmentRecord rec;
        rec.user_id = s.user_id;
        rec.pool = pool.item_ids();
        if (cfg.ablation.no_snf || cfg.pseudo_items == 0) {
            rec.pseudo_items.assign(rec.pool.begin(),
                                    rec.pool.begin() + static_cast<long>(cfg.pseudo_items));
            rec.prompt_hash = empty_prompt_hash;
            rec.fallback_used = false;
        } else {
            SelectionResult sel = filter_candidates(*llm, catalog, s, pool, cfg.pseudo_items);
            rec.pseudo_items = sel.item_ids;
            rec.prompt_hash = sel.prompt_hash;
            rec.fallback_used = sel.fallback_used;
        }
        records[i] = std::move(rec);
    });

    write_augment_records(cfg.augmented_path(), std::move(records));
    json inputs = {{"catalog", input_entry(cfg.catalog_path())}};
    if (!cfg.ablation.no_ccg) inputs["ccg"] = input_entry(cfg.ccg_path());
    json manifest = {{"inputs", std::move(inputs)},
                     {"outputs", {{"augmented", input_entry(cfg.augmented_path())}}},
                     {"settings",
                      {{"N", cfg.candidate_pool_size},
                       {"M", cfg.pseudo_items},
                       {"provider", cfg.llm_provider},
                       {"no_ccg", cfg.ablation.no_ccg},
                       {"no_snf", cfg.ablation.no_snf}}}};
    write_manifest(cfg, "augment", manifest);
    return manifest;
}

json stage_validate(const PipelineConfig& cfg, LLMClient* llm_override) {
    require_artifact("validate", cfg.catalog_path(), "ingest");
    require_artifact("validate", cfg.augmented_path(), "augment");
    if (!cfg.ablation.no_rcs) require_artifact("validate", cfg.rcs_path(), "pretrain-rcs");
    Catalog catalog = Catalog::load(cfg.catalog_path());
    DatasetSplit split = leave_one_out_split(catalog);
    auto aug_records = read_augment_records(cfg.augmented_path());

    std::optional<TrainedBackbone> rcs;
    if (!cfg.ablation.no_rcs) rcs = TrainedBackbone::load(cfg.rcs_path());

    std::shared_ptr<LLMClient> owned;
    LLMClient* llm = llm_override;
    if (!llm && !cfg.ablation.no_reason) {
        owned = make_pipeline_llm(cfg);
        llm = owned.get();
    }
    auto embedder = make_pipeline_embedder(cfg);
    const std::size_t vocab = catalog.item_count();

    std::vector<ValidationRecord> records(aug_records.size());
    parallel_for(aug_records.size(), cfg.llm.concurrency_limit, [&](std::size_t i) {
        const AugmentRecord& ar = aug_records[i];
        auto it = split.per_user.find(ar.user_id);
        if (it == split.per_user.end()) {
            throw StageError("validate", "augment record for unknown user " + ar.user_id);
        }
        UserSequence original{ar.user_id, it->second.train};
        AugmentedSequence a = augment_sequence(catalog, original, ar.pseudo_items);
        MaskedInstance m = mask_sequence(a);

        ValidationRecord rec;
        rec.user_id = ar.user_id;
        rec.masked_item = m.masked_item;
        if (m.masked_context.empty()) {
            rec.omega = 0.0;  // nothing to validate against
            records[i] = std::move(rec);
            return;
        }
        std::unordered_set<std::string> ctx(m.masked_context.begin(), m.masked_context.end());
        CandidatePool pool;
        if (cfg.ablation.no_rcs) {
            SeededRng rng(derive_seed(cfg.seed, "no-rcs-pool", fnv1a64(ar.user_id)));
            auto ids = random_pool(catalog, cfg.reason_pool_size, ctx, rng);
            pool.user_id = ar.user_id;
            int rank = 1;
            for (auto& id : ids) pool.entries.push_back(PoolEntry{id, catalog.title(id), rank++});
        } else {
            std::size_t distinct = 0;
            for (const auto& id : ctx) {
                if (catalog.item_index(id)) ++distinct;
            }
            const std::size_t h_eff = std::min(cfg.reason_pool_size, vocab - distinct);
            if (h_eff == 0) {
                rec.omega = 0.0;
                records[i] = std::move(rec);
                return;
            }
            pool = generate_reason_pool(*rcs, catalog, m, h_eff);
        }
        if (pool.size() == 0) {
            rec.omega = 0.0;
            records[i] = std::move(rec);
            return;
        }
        std::string predicted;
        bool fallback = false;
        if (cfg.ablation.no_reason) {
            predicted = pool.entries.front().item_id;
        } else {
            ReasonResult rr = reason_masked_item(*llm, catalog, m, pool);
            predicted = rr.item_id;
            fallback = rr.fallback_used;
        }
        rec.predicted_item = predicted;
        rec.fallback_used = fallback;
        rec.omega = score_reliability(*embedder, catalog.title(predicted),
                                      catalog.title(m.masked_item));
        records[i] = std::move(rec);
    });

    write_validation_records(cfg.validated_path(), std::move(records));
    json inputs = {{"catalog", input_entry(cfg.catalog_path())},
                   {"augmented", input_entry(cfg.augmented_path())}};
    if (!cfg.ablation.no_rcs) inputs["rcs"] = input_entry(cfg.rcs_path());
    json manifest = {{"inputs", std::move(inputs)},
                     {"outputs", {{"validated", input_entry(cfg.validated_path())}}},
                     {"settings",
                      {{"H", cfg.reason_pool_size},
                       {"embedder", cfg.embedder_provider},
                       {"no_rcs", cfg.ablation.no_rcs},
                       {"no_reason", cfg.ablation.no_reason}}}};
    write_manifest(cfg, "validate", manifest);
    return manifest;
}

json stage_train(const PipelineConfig& cfg, const std::string& mode) {
    require_artifact("train", cfg.catalog_path(), "ingest");
    Catalog catalog = Catalog::load(cfg.catalog_path());
    DatasetSplit split = leave_one_out_split(catalog);
    BackboneConfig bcfg = stage_backbone_config(cfg, "train");

    if (mode == "none") {
        TrainedBackbone model =
            train_backbone(catalog, train_sequences(catalog, split), bcfg, Direction::Forward);
        model.save(cfg.model_path("none"));
        json manifest = {{"inputs", {{"catalog", input_entry(cfg.catalog_path())}}},
                         {"outputs", {{"checkpoint", input_entry(cfg.model_path("none"))}}},
                         {"mode", "none"},
                         {"seed", bcfg.seed}};
        write_manifest(cfg, "train-none", manifest);
        return manifest;
    }
    if (mode != "llmser") throw ConfigError("train mode must be 'llmser' or 'none'");

    require_artifact("train", cfg.augmented_path(), "augment");
    auto aug_records = read_augment_records(cfg.augmented_path());
    std::map<std::string, double> omegas;
    if (!cfg.ablation.no_arv) {
        require_artifact("train", cfg.validated_path(), "validate");
        for (const auto& v : read_validation_records(cfg.validated_path())) {
            omegas[v.user_id] = v.omega;
        }
    }

    DCTConfig dcfg;
    dcfg.beta = cfg.beta;
    dcfg.tail_threshold = cfg.tail_threshold;
    dcfg.backbone = bcfg;

    std::vector<AugmentedSequence> augmented;
    augmented.reserve(aug_records.size());
    // keep catalog sequence order so the two-channel run shuffles exactly like
    // the single-channel baseline
    std::map<std::string, const AugmentRecord*> by_user;
    for (const auto& r : aug_records) by_user[r.user_id] = &r;
    for (const auto& s : catalog.sequences()) {
        auto rit = by_user.find(s.user_id);
        if (rit == by_user.end()) {
            throw StageError("train", "no augment record for user " + s.user_id);
        }
        const AugmentRecord& ar = *rit->second;
        UserSequence original{s.user_id, split.per_user.at(s.user_id).train};
        AugmentedSequence a = augment_sequence(catalog, original, ar.pseudo_items);
        if (cfg.ablation.no_arv) {
            a.weight = 1.0;
        } else {
            auto oit = omegas.find(s.user_id);
            if (oit == omegas.end()) {
                throw StageError("train", "no reliability for user " + s.user_id +
                                              "; run 'validate' first");
            }
            a.reliability = oit->second;
            if (cfg.ablation.no_wd) a.weight = oit->second;
        }
        augmented.push_back(std::move(a));
    }

    TrainedBackbone model = train_dual_channel(catalog, augmented, dcfg);
    model.save(cfg.model_path("llmser"));
    {
        std::ofstream f(cfg.alphas_path());
        if (!f) throw DataError("cannot write alphas file");
        for (const auto& a : augmented) {
            json rec = {{"user_id", a.user_id},
                        {"n_u", a.original.items.size()},
                        {"alpha", a.weight.value_or(0.0)}};
            rec["omega"] = a.reliability ? json(*a.reliability) : json(nullptr);
            f << rec.dump() << "\n";
        }
    }
    json inputs = {{"catalog", input_entry(cfg.catalog_path())},
                   {"augmented", input_entry(cfg.augmented_path())}};
    if (!cfg.ablation.no_arv) inputs["validated"] = input_entry(cfg.validated_path());
    json manifest = {{"inputs", std::move(inputs)},
                     {"outputs",
                      {{"checkpoint", input_entry(cfg.model_path("llmser"))},
                       {"per_user_alpha", input_entry(cfg.alphas_path())}}},
                     {"mode", "llmser"},
                     {"beta", cfg.beta},
                     {"T", cfg.tail_threshold},
                     {"seed", bcfg.seed},
                     {"no_arv", cfg.ablation.no_arv},
                     {"no_wd", cfg.ablation.no_wd}};
    write_manifest(cfg, "train-llmser", manifest);
    return manifest;
}

EvalResult stage_evaluate(const PipelineConfig& cfg, const std::string& mode) {
    require_artifact("evaluate", cfg.catalog_path(), "ingest");
    require_artifact("evaluate", cfg.model_path(mode), "train --mode " + mode);
    Catalog catalog = Catalog::load(cfg.catalog_path());
    DatasetSplit split = leave_one_out_split(catalog);
    TrainedBackbone model = TrainedBackbone::load(cfg.model_path(mode));

    std::map<std::string, std::vector<std::string>> prefixes;
    if (mode == "llmser") {
        require_artifact("evaluate", cfg.augmented_path(), "augment");
        require_artifact("evaluate", cfg.alphas_path(), "train");
        std::map<std::string, double> alphas;
        {
            std::ifstream f(cfg.alphas_path());
            std::string line;
            while (std::getline(f, line)) {
                if (trim(line).empty()) continue;
                json rec = json::parse(line);
                alphas[rec.at("user_id").get<std::string>()] = rec.at("alpha").get<double>();
            }
        }
        for (const auto& ar : read_augment_records(cfg.augmented_path())) {
            auto it = alphas.find(ar.user_id);
            if (it != alphas.end() && it->second >= cfg.context_alpha_gate) {
                prefixes[ar.user_id] = ar.pseudo_items;
            }
        }
    }

    EvalResult result = evaluate(model, catalog, split, cfg.grouping, cfg.eval_ks,
                                 mode == "llmser" ? &prefixes : nullptr);
    result.report.seed = cfg.seed;
    result.report.config_digest = cfg.semantic_digest();
    result.report.model_tag = mode;
    result.report.write_json(cfg.metrics_path(mode));
    if (cfg.emit_csv) {
        result.report.write_csv(cfg.work_dir + "/metrics_" + mode + ".csv");
    }
    json manifest = {{"inputs",
                      {{"catalog", input_entry(cfg.catalog_path())},
                       {"checkpoint", input_entry(cfg.model_path(mode))}}},
                     {"outputs", {{"metrics", input_entry(cfg.metrics_path(mode))}}},
                     {"mode", mode}};
    write_manifest(cfg, "evaluate-" + mode, manifest);
    return result;
}

}  // namespace

json run_stage(const PipelineConfig& cfg, const std::string& stage, const std::string& mode,
               LLMClient* llm_override) {
    cfg.validate();
    fs::create_directories(cfg.work_dir);
    if (stage == "ingest") return stage_ingest(cfg);
    if (stage == "stats") return stage_stats(cfg);
    if (stage == "pretrain-ccg") return stage_pretrain(cfg, "pretrain-ccg", Direction::Reverse);
    if (stage == "pretrain-rcs") return stage_pretrain(cfg, "pretrain-rcs", Direction::Forward);
    if (stage == "augment") return stage_augment(cfg, llm_override);
    if (stage == "validate") return stage_validate(cfg, llm_override);
    if (stage == "train") return stage_train(cfg, mode);
    if (stage == "evaluate") {
        stage_evaluate(cfg, mode);
        std::ifstream f(cfg.manifest_path("evaluate-" + mode));
        return json::parse(f);
    }
    throw ConfigError("unknown stage: " + stage);
}

PipelineOutcome run_pipeline(const PipelineConfig& cfg, LLMClient* llm_override) {
    cfg.validate();
    fs::create_directories(cfg.work_dir);
    stage_ingest(cfg);
    stage_stats(cfg);
    if (!cfg.ablation.no_ccg) stage_pretrain(cfg, "pretrain-ccg", Direction::Reverse);
    if (!cfg.ablation.no_rcs) stage_pretrain(cfg, "pretrain-rcs", Direction::Forward);
    stage_augment(cfg, llm_override);
    if (!cfg.ablation.no_arv) stage_validate(cfg, llm_override);
    stage_train(cfg, "llmser");
    PipelineOutcome out;
    out.llmser_result = stage_evaluate(cfg, "llmser");
    stage_train(cfg, "none");
    out.baseline_result = stage_evaluate(cfg, "none");
    out.baseline = out.baseline_result.report;
    out.llmser = out.llmser_result.report;

    // paired per-user hit indicators at the first K
    const std::size_t k0 = cfg.eval_ks.empty() ? 10 : cfg.eval_ks.front();
    std::vector<double> base_hits, llm_hits;
    for (const auto& [user, rank] : out.baseline_result.per_user_rank) {
        auto it = out.llmser_result.per_user_rank.find(user);
        if (it == out.llmser_result.per_user_rank.end()) continue;
        base_hits.push_back(rank <= k0 ? 1.0 : 0.0);
        llm_hits.push_back(it->second <= k0 ? 1.0 : 0.0);
    }
    double p_value = 1.0;
    if (base_hits.size() >= 2) p_value = paired_t_test(llm_hits, base_hits);

    json comparison = {{"kind", "llmser-comparison"},
                       {"k", k0},
                       {"p_value_hit", p_value},
                       {"baseline", json::parse(out.baseline.to_json_string())},
                       {"llmser", json::parse(out.llmser.to_json_string())}};
    {
        std::ofstream f(cfg.work_dir + "/comparison.json");
        f << comparison.dump(2) << "\n";
    }
    out.comparison = comparison;

    std::ostringstream table;
    table << std::fixed << std::setprecision(4);
    table << "metric            baseline    llmser      delta\n";
    auto row = [&](const std::string& label, double b, double l) {
        table << std::left << std::setw(18) << label << std::setw(12) << b << std::setw(12) << l
              << std::showpos << l - b << std::noshowpos << "\n";
    };
    for (const auto& [metric, value] : out.baseline.overall.values) {
        row("overall " + metric, value, out.llmser.overall.values.at(metric));
    }
    for (const auto& [group, mv] : out.baseline.groups) {
        for (const auto& [metric, value] : mv.values) {
            row(group + " " + metric, value, out.llmser.groups.at(group).values.at(metric));
        }
    }
    table << "paired t-test on H@" << k0 << " indicators: p = " << p_value << "\n";
    out.table = table.str();
    return out;
}

}  // namespace llmser
