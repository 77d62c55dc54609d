#include "stower/pipeline.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

namespace stower {

RunSettings RunSettings::from_config(const ConfigMap& config) {
    RunSettings s;
    s.seed = config.get_u64("seed");
    s.max_len = config.get_int("corpus.max_len");
    s.min_count = config.get_int("corpus.min_count");
    s.n_per_style = config.get_int("data.n_per_style");
    s.transfer_max_len = config.get_int("transfer.max_len");

    const std::string mode = config.get("backbone.mode");
    if (mode == "mlm") {
        s.backbone.mode = BackboneConfig::Mode::kMlm;
    } else if (mode == "identity") {
        s.backbone.mode = BackboneConfig::Mode::kIdentity;
    } else {
        throw UsageError("backbone.mode must be 'mlm' or 'identity', got '" + mode + "'");
    }
    s.backbone.trainable = config.get_bool("backbone.trainable");
    s.backbone.layers = config.get_int("backbone.layers");
    s.backbone.d_model = config.get_int("backbone.d_model");
    s.backbone.heads = config.get_int("backbone.heads");
    s.backbone.ffn_dim = config.get_int("backbone.ffn_dim");
    s.backbone.mask_rate = static_cast<float>(config.get_num("backbone.mask_rate"));
    s.backbone.epochs = config.get_int("backbone.epochs");
    s.backbone.lr = static_cast<float>(config.get_num("backbone.lr"));
    s.backbone.token_budget = config.get_int("backbone.token_budget");
    s.backbone.max_len = s.max_len;

    s.vae.d_latent = config.get_int("vae.d_latent");
    s.vae.layers = config.get_int("vae.layers");
    s.vae.heads = config.get_int("vae.heads");
    s.vae.ffn_dim = config.get_int("vae.ffn_dim");
    s.vae.max_len = s.max_len;

    auto fill_train = [&config, &s](TrainConfig& t, int epochs) {
        t.lambda_vae = static_cast<float>(config.get_num("train.lambda_vae"));
        t.lambda_style = static_cast<float>(config.get_num("train.lambda_style"));
        t.beta = static_cast<float>(config.get_num("train.beta"));
        t.lr = static_cast<float>(config.get_num("train.lr"));
        t.token_budget = config.get_int("train.token_budget");
        t.epochs = epochs;
        t.seed = s.seed;
        t.stage2_mask_fraction = static_cast<float>(config.get_num("train.stage2_mask_fraction"));
        t.stage2_lr_scale = static_cast<float>(config.get_num("train.stage2_lr_scale"));
        t.kl_warmup_frac = static_cast<float>(config.get_num("train.kl_warmup_frac"));
        t.clip_norm = static_cast<float>(config.get_num("train.clip_norm"));
        t.patience = config.get_int("train.patience");
        t.holdout_frac = static_cast<float>(config.get_num("train.holdout_frac"));
        t.early_stop = config.get_bool("train.early_stop");
    };
    fill_train(s.stage1, config.get_int("train.stage1_epochs"));
    fill_train(s.stage2, config.get_int("train.stage2_epochs"));

    s.scorer.heads = config.get_int("scorer.heads");
    s.scorer.ffn_dim = config.get_int("scorer.ffn_dim");
    s.scorer.gamma = static_cast<float>(config.get_num("scorer.gamma"));
    s.scorer.epochs = config.get_int("scorer.epochs");
    s.scorer.lr = static_cast<float>(config.get_num("scorer.lr"));
    s.scorer.token_budget = config.get_int("scorer.token_budget");
    s.scorer.holdout_frac = static_cast<float>(config.get_num("scorer.holdout_frac"));

    s.charlm.hidden = config.get_int("charlm.hidden");
    s.charlm.embed = config.get_int("charlm.embed");
    s.charlm.epochs = config.get_int("charlm.epochs");
    s.charlm.lr = static_cast<float>(config.get_num("charlm.lr"));
    s.charlm.batch = config.get_int("charlm.batch");

    s.evalcls.hash_bits = config.get_int("evalcls.hash_bits");
    s.evalcls.epochs = config.get_int("evalcls.epochs");
    s.evalcls.lr = static_cast<float>(config.get_num("evalcls.lr"));
    s.evalcls.holdout_frac = static_cast<float>(config.get_num("evalcls.holdout_frac"));
    return s;
}

// ---- component conversions -----------------------------------------------------

namespace {

void copy_named_params(const ParamMap& dst, const ParamMap& src, const std::string& component) {
    if (dst.size() != src.size()) {
        throw IoError("component '" + component + "': expected " + std::to_string(dst.size()) +
                      " parameters, checkpoint has " + std::to_string(src.size()));
    }
    std::map<std::string, Tensor> by_name;
    for (const auto& [name, tensor] : src) by_name.emplace(name, tensor);
    for (const auto& [name, tensor] : dst) {
        auto it = by_name.find(name);
        if (it == by_name.end()) {
            throw IoError("component '" + component + "': checkpoint lacks parameter '" + name + "'");
        }
        if (it->second.shape() != tensor.shape()) {
            throw IoError("component '" + component + "': parameter '" + name + "' shape mismatch");
        }
        Tensor mut = tensor;
        std::copy(it->second.data().begin(), it->second.data().end(), mut.data().begin());
    }
}

nlohmann::json parse_meta(const CheckpointComponent& comp) {
    return nlohmann::json::parse(comp.meta_json.empty() ? "{}" : comp.meta_json);
}

} // namespace

CheckpointComponent backbone_component(const BackboneModel& model) {
    CheckpointComponent comp;
    comp.name = "backbone";
    nlohmann::json meta;
    meta["mode"] = model.config().mode == BackboneConfig::Mode::kMlm ? "mlm" : "identity";
    meta["layers"] = model.config().layers;
    meta["d_model"] = model.config().d_model;
    meta["heads"] = model.config().heads;
    meta["ffn_dim"] = model.config().ffn_dim;
    meta["max_len"] = model.config().max_len;
    meta["vocab_size"] = model.vocab_size();
    meta["frozen"] = model.frozen();
    comp.meta_json = meta.dump();
    comp.params = model.params();
    return comp;
}

BackboneModel backbone_from_component(const CheckpointComponent& comp) {
    const nlohmann::json meta = parse_meta(comp);
    BackboneConfig config;
    config.mode = meta.at("mode").get<std::string>() == "mlm" ? BackboneConfig::Mode::kMlm
                                                              : BackboneConfig::Mode::kIdentity;
    config.layers = meta.at("layers").get<int>();
    config.d_model = meta.at("d_model").get<int>();
    config.heads = meta.at("heads").get<int>();
    config.ffn_dim = meta.at("ffn_dim").get<int>();
    config.max_len = meta.at("max_len").get<int>();
    Rng rng(0);
    BackboneModel model = BackboneModel::init(config, meta.at("vocab_size").get<int>(), rng);
    copy_named_params(model.params(), comp.params, comp.name);
    model.set_frozen(meta.value("frozen", true));
    return model;
}

CheckpointComponent vae_component(const VaeModel& model, int backbone_dim) {
    CheckpointComponent comp;
    comp.name = "vae";
    nlohmann::json meta;
    meta["d_latent"] = model.config().d_latent;
    meta["layers"] = model.config().layers;
    meta["heads"] = model.config().heads;
    meta["ffn_dim"] = model.config().ffn_dim;
    meta["max_len"] = model.config().max_len;
    meta["vocab_size"] = model.vocab_size();
    meta["backbone_dim"] = backbone_dim;
    comp.meta_json = meta.dump();
    comp.params = model.params();
    return comp;
}

VaeModel vae_from_component(const CheckpointComponent& comp) {
    const nlohmann::json meta = parse_meta(comp);
    VaeConfig config;
    config.d_latent = meta.at("d_latent").get<int>();
    config.layers = meta.at("layers").get<int>();
    config.heads = meta.at("heads").get<int>();
    config.ffn_dim = meta.at("ffn_dim").get<int>();
    config.max_len = meta.at("max_len").get<int>();
    Rng rng(0);
    VaeModel model = VaeModel::init(config, meta.at("vocab_size").get<int>(),
                                    meta.at("backbone_dim").get<int>(), rng);
    copy_named_params(model.params(), comp.params, comp.name);
    return model;
}

CheckpointComponent style_table_component(const StyleEmbeddingTable& table) {
    CheckpointComponent comp;
    comp.name = "style_table";
    nlohmann::json meta;
    meta["styles"] = table.styles();
    meta["dim"] = table.dim();
    meta["frozen"] = table.frozen();
    comp.meta_json = meta.dump();
    comp.params = table.params();
    return comp;
}

StyleEmbeddingTable style_table_from_component(const CheckpointComponent& comp) {
    const nlohmann::json meta = parse_meta(comp);
    Rng rng(0);
    StyleEmbeddingTable table =
        StyleEmbeddingTable::init(meta.at("styles").get<int>(), meta.at("dim").get<int>(), rng);
    copy_named_params(table.params(), comp.params, comp.name);
    table.set_frozen(meta.value("frozen", false));
    return table;
}

CheckpointComponent scorer_component(const ScorerModel& model) {
    CheckpointComponent comp;
    comp.name = "scorer";
    nlohmann::json meta;
    meta["heads"] = model.config().heads;
    meta["ffn_dim"] = model.config().ffn_dim;
    meta["gamma"] = model.config().gamma;
    meta["styles"] = model.styles();
    comp.meta_json = meta.dump();
    comp.params = model.params();
    return comp;
}

ScorerModel scorer_from_component(const CheckpointComponent& comp,
                                  std::shared_ptr<const BackboneModel> backbone) {
    const nlohmann::json meta = parse_meta(comp);
    ScorerConfig config;
    config.heads = meta.at("heads").get<int>();
    config.ffn_dim = meta.at("ffn_dim").get<int>();
    config.gamma = meta.at("gamma").get<float>();
    Rng rng(0);
    ScorerModel model = ScorerModel::init(std::move(backbone), meta.at("styles").get<int>(), config, rng);
    copy_named_params(model.params(), comp.params, comp.name);
    model.set_frozen(true);
    return model;
}

CheckpointComponent char_lm_component(const CharLm& lm) {
    CheckpointComponent comp;
    comp.name = "char_lm";
    nlohmann::json meta;
    meta["hidden"] = lm.config().hidden;
    meta["embed"] = lm.config().embed;
    meta["char_vocab"] = lm.char_vocab();
    comp.meta_json = meta.dump();
    comp.params = lm.params();
    return comp;
}

CharLm char_lm_from_component(const CheckpointComponent& comp) {
    const nlohmann::json meta = parse_meta(comp);
    CharLmConfig config;
    config.hidden = meta.at("hidden").get<int>();
    config.embed = meta.at("embed").get<int>();
    Rng rng(0);
    CharLm lm = CharLm::init(meta.at("char_vocab").get<std::vector<std::string>>(), config, rng);
    copy_named_params(lm.params(), comp.params, comp.name);
    return lm;
}

CheckpointComponent eval_classifier_component(const EvalClassifier& model) {
    CheckpointComponent comp;
    comp.name = "eval_classifier";
    nlohmann::json meta;
    meta["styles"] = model.styles();
    meta["hash_bits"] = model.hash_bits();
    comp.meta_json = meta.dump();
    comp.params = model.params();
    return comp;
}

EvalClassifier eval_classifier_from_component(const CheckpointComponent& comp) {
    const nlohmann::json meta = parse_meta(comp);
    return EvalClassifier::from_params(meta.at("styles").get<int>(), meta.at("hash_bits").get<int>(),
                                       comp.params);
}

// ---- manifests --------------------------------------------------------------------

std::uint64_t file_checksum(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string() + " for checksumming");
    std::uint64_t h = 1469598103934665603ull;
    char buffer[65536];
    while (in.read(buffer, sizeof(buffer)) || in.gcount() > 0) {
        const std::streamsize n = in.gcount();
        for (std::streamsize i = 0; i < n; ++i) {
            h ^= static_cast<unsigned char>(buffer[i]);
            h *= 1099511628211ull;
        }
        if (!in) break;
    }
    return h;
}

std::string checksum_hex(std::uint64_t checksum) {
    char buf[19];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(checksum));
    return buf;
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw IoError("cannot write " + tmp.string());
        out << text;
    }
    std::filesystem::rename(tmp, path);
}

void write_run_manifest(const std::filesystem::path& dir, const std::string& command,
                        const ConfigMap& config, std::uint64_t seed,
                        const std::vector<std::filesystem::path>& inputs,
                        const std::vector<std::filesystem::path>& outputs) {
    nlohmann::json j;
    j["command"] = command;
    j["seed"] = seed;
    j["config"] = nlohmann::json::parse(config.echo_json());
    nlohmann::json jin = nlohmann::json::array();
    for (const auto& p : inputs) jin.push_back(p.string());
    j["inputs"] = std::move(jin);
    nlohmann::json jout;
    for (const auto& p : outputs) jout[p.filename().string()] = checksum_hex(file_checksum(p));
    j["outputs"] = std::move(jout);
    write_text_file(dir / ("manifest-" + command + ".json"), j.dump(2) + "\n");
}

// ---- pipeline -----------------------------------------------------------------------

void Pipeline::load_data(const RawCorpus& raw) {
    const std::vector<std::string> lines = raw.all_lines();
    vocab = Vocab::build(lines, settings_.min_count);
    corpus = tokenize_corpus(raw, vocab, settings_.max_len);
}

void Pipeline::pretrain() {
    backbone = std::make_shared<BackboneModel>(
        pretrain_backbone_mlm(corpus, vocab.size(), settings_.backbone, settings_.seed, &mlm_log));
}

void Pipeline::init_stage1_models() {
    if (!backbone) throw UsageError("pipeline: pretrain the backbone first");
    Rng vae_rng = derive_rng(settings_.seed, "vae.init");
    vae = std::make_shared<VaeModel>(
        VaeModel::init(settings_.vae, vocab.size(), backbone->d_model(), vae_rng));
    Rng table_rng = derive_rng(settings_.seed, "style.init");
    table = std::make_shared<StyleEmbeddingTable>(
        StyleEmbeddingTable::init(corpus.k, settings_.vae.d_latent, table_rng));
}

void Pipeline::run_stage1() {
    if (!vae) init_stage1_models();
    stage1_log = train_stage1(*vae, *table, *backbone, corpus, settings_.stage1);
}

void Pipeline::run_scorer() {
    if (!backbone) throw UsageError("pipeline: pretrain the backbone first");
    ScorerTrainResult result = train_style_classifier(corpus, backbone, settings_.scorer, settings_.seed);
    scorer = std::make_shared<ScorerModel>(std::move(result.model));
    scorer_holdout_accuracy = result.holdout_accuracy;
}

void Pipeline::run_stage2() {
    if (!vae || !scorer) throw UsageError("pipeline: stage I and the scorer must run before stage II");
    stage2_log = train_stage2(*vae, *table, *backbone, *scorer, corpus, settings_.stage2);
}

void Pipeline::train_eval_models(const RawCorpus& raw) {
    std::vector<std::pair<std::string, int>> labeled;
    for (std::size_t style = 0; style < raw.lines_per_style.size(); ++style) {
        for (const std::string& line : raw.lines_per_style[style]) {
            labeled.emplace_back(line, static_cast<int>(style));
        }
    }
    EvalClassifierTrainResult result = EvalClassifier::train(
        labeled, static_cast<int>(raw.lines_per_style.size()), settings_.evalcls, settings_.seed);
    classifier = std::make_shared<EvalClassifier>(std::move(result.model));
    classifier_holdout_accuracy = result.holdout_accuracy;
    const std::vector<std::string> lines = raw.all_lines();
    char_lm = std::make_shared<CharLm>(train_char_lm(lines, settings_.charlm, settings_.seed));
}

SweepModels Pipeline::sweep_models() const {
    SweepModels models;
    models.backbone = backbone.get();
    models.vae = vae.get();
    models.table = table.get();
    models.vocab = &vocab;
    models.classifier = classifier.get();
    models.char_lm = char_lm.get();
    return models;
}

} // namespace stower
