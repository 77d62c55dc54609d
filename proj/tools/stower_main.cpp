#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "stower/pipeline.hpp"

namespace fs = std::filesystem;
using namespace stower;

namespace {

struct CommonOpts {
    std::string config_path;
    std::optional<std::uint64_t> seed_flag;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
    cmd->add_option("--config", opts.config_path, "run configuration file (section.key = value)");
    cmd->add_option("--seed", opts.seed_flag, "override the run seed");
}

// precedence: defaults < config file < STOWER_SEED < --seed
ConfigMap resolve_config(const CommonOpts& opts) {
    ConfigMap config = opts.config_path.empty() ? ConfigMap::defaults()
                                                : ConfigMap::from_file(opts.config_path);
    if (const char* env = std::getenv("STOWER_SEED")) {
        config.set("seed", env);
    }
    if (opts.seed_flag) config.set("seed", std::to_string(*opts.seed_flag));
    return config;
}

void write_train_log(const fs::path& path, const TrainResult& result) {
    std::string text;
    for (const StepLog& s : result.steps) {
        nlohmann::json j;
        j["step"] = s.step;
        j["nll"] = s.nll;
        j["kl"] = s.kl;
        j["style"] = s.style;
        j["total"] = s.total;
        text += j.dump();
        text += '\n';
    }
    write_text_file(path, text);
}

Checkpoint base_checkpoint(const ConfigMap& config, const Vocab& vocab) {
    Checkpoint ckpt;
    ckpt.seed = config.get_u64("seed");
    ckpt.config_json = config.echo_json();
    ckpt.vocab_tokens = vocab.tokens();
    return ckpt;
}

struct LoadedBackbone {
    Vocab vocab;
    std::shared_ptr<BackboneModel> model;
};

LoadedBackbone load_backbone(const fs::path& path) {
    Checkpoint ckpt = load_checkpoint(path, {"backbone"});
    LoadedBackbone out;
    out.vocab = Vocab::from_tokens(ckpt.vocab_tokens);
    out.model = std::make_shared<BackboneModel>(backbone_from_component(ckpt.require("backbone")));
    return out;
}

int cmd_gen_data(const CommonOpts& opts, int n_override, const std::string& out_dir) {
    ConfigMap config = resolve_config(opts);
    if (n_override > 0) config.set("data.n_per_style", std::to_string(n_override));
    RunSettings settings = RunSettings::from_config(config);

    SyntheticCorpus corpus = gen_synthetic_corpus(settings.seed, settings.n_per_style,
                                                  default_synthetic_spec());
    fs::create_directories(out_dir);
    std::vector<fs::path> outputs;
    for (std::size_t style = 0; style < corpus.lines_per_style.size(); ++style) {
        const fs::path file = fs::path(out_dir) / (std::to_string(style) + ".txt");
        write_lines(file, corpus.lines_per_style[style]);
        outputs.push_back(file);
    }
    const fs::path manifest = fs::path(out_dir) / "manifest.jsonl";
    write_text_file(manifest, synthetic_manifest_jsonl(corpus));
    outputs.push_back(manifest);
    write_run_manifest(out_dir, "gen-data", config, settings.seed, {}, outputs);
    std::printf("wrote %d sentences per style to %s\n", settings.n_per_style, out_dir.c_str());
    return 0;
}

int cmd_pretrain(const CommonOpts& opts, const std::string& data_dir, const std::string& out_path,
                 const std::string& log_path) {
    ConfigMap config = resolve_config(opts);
    RunSettings settings = RunSettings::from_config(config);

    Pipeline pipeline(settings);
    pipeline.load_data(load_raw_corpus(data_dir));
    pipeline.pretrain();

    Checkpoint ckpt = base_checkpoint(config, pipeline.vocab);
    ckpt.components.push_back(backbone_component(*pipeline.backbone));
    save_checkpoint(ckpt, out_path);
    if (!log_path.empty()) {
        TrainResult as_result;
        for (std::size_t i = 0; i < pipeline.mlm_log.step_losses.size(); ++i) {
            as_result.steps.push_back({static_cast<int>(i + 1), pipeline.mlm_log.step_losses[i], 0.0f,
                                       0.0f, pipeline.mlm_log.step_losses[i]});
        }
        write_train_log(log_path, as_result);
    }
    write_run_manifest(fs::path(out_path).parent_path(), "pretrain", config, settings.seed,
                       {data_dir}, {out_path});
    const float final_loss = pipeline.mlm_log.final_loss;
    std::printf("backbone pretrained, final mlm loss %.4f, saved to %s\n",
                static_cast<double>(final_loss), out_path.c_str());
    return 0;
}

int cmd_train_stage1(const CommonOpts& opts, const std::string& data_dir,
                     const std::string& backbone_path, const std::string& out_path,
                     const std::string& log_path) {
    ConfigMap config = resolve_config(opts);
    RunSettings settings = RunSettings::from_config(config);

    LoadedBackbone backbone = load_backbone(backbone_path);
    Pipeline pipeline(settings);
    pipeline.vocab = backbone.vocab;
    pipeline.corpus = tokenize_corpus(load_raw_corpus(data_dir), pipeline.vocab, settings.max_len);
    pipeline.backbone = backbone.model;
    pipeline.run_stage1();

    Checkpoint ckpt = base_checkpoint(config, pipeline.vocab);
    ckpt.components.push_back(vae_component(*pipeline.vae, pipeline.backbone->d_model()));
    ckpt.components.push_back(style_table_component(*pipeline.table));
    save_checkpoint(ckpt, out_path);
    if (!log_path.empty()) write_train_log(log_path, pipeline.stage1_log);
    write_run_manifest(fs::path(out_path).parent_path(), "train-stage1", config, settings.seed,
                       {data_dir, backbone_path}, {out_path});
    std::printf("stage I done: %d epochs, final epoch loss %.4f, saved to %s\n",
                pipeline.stage1_log.epochs_run,
                pipeline.stage1_log.epoch_mean_total.empty()
                    ? 0.0
                    : static_cast<double>(pipeline.stage1_log.epoch_mean_total.back()),
                out_path.c_str());
    return 0;
}

int cmd_train_scorer(const CommonOpts& opts, const std::string& data_dir,
                     const std::string& backbone_path, const std::string& out_path) {
    ConfigMap config = resolve_config(opts);
    RunSettings settings = RunSettings::from_config(config);

    LoadedBackbone backbone = load_backbone(backbone_path);
    Pipeline pipeline(settings);
    pipeline.vocab = backbone.vocab;
    pipeline.corpus = tokenize_corpus(load_raw_corpus(data_dir), pipeline.vocab, settings.max_len);
    pipeline.backbone = backbone.model;
    pipeline.run_scorer();

    Checkpoint ckpt = base_checkpoint(config, pipeline.vocab);
    ckpt.components.push_back(scorer_component(*pipeline.scorer));
    save_checkpoint(ckpt, out_path);
    write_run_manifest(fs::path(out_path).parent_path(), "train-scorer", config, settings.seed,
                       {data_dir, backbone_path}, {out_path});
    std::printf("scorer trained, holdout accuracy %.3f, saved to %s\n",
                static_cast<double>(pipeline.scorer_holdout_accuracy), out_path.c_str());
    return 0;
}

int cmd_train_stage2(const CommonOpts& opts, const std::string& data_dir,
                     const std::string& backbone_path, const std::string& stage1_path,
                     const std::string& scorer_path, const std::string& out_path,
                     const std::string& log_path) {
    ConfigMap config = resolve_config(opts);
    RunSettings settings = RunSettings::from_config(config);

    LoadedBackbone backbone = load_backbone(backbone_path);
    Checkpoint stage1 = load_checkpoint(stage1_path, {"vae", "style_table"});
    Checkpoint scorer_ckpt = load_checkpoint(scorer_path, {"scorer"});

    Pipeline pipeline(settings);
    pipeline.vocab = backbone.vocab;
    pipeline.corpus = tokenize_corpus(load_raw_corpus(data_dir), pipeline.vocab, settings.max_len);
    pipeline.backbone = backbone.model;
    pipeline.vae = std::make_shared<VaeModel>(vae_from_component(stage1.require("vae")));
    pipeline.table = std::make_shared<StyleEmbeddingTable>(
        style_table_from_component(stage1.require("style_table")));
    pipeline.scorer = std::make_shared<ScorerModel>(
        scorer_from_component(scorer_ckpt.require("scorer"), pipeline.backbone));
    pipeline.run_stage2();

    Checkpoint ckpt = base_checkpoint(config, pipeline.vocab);
    ckpt.components.push_back(vae_component(*pipeline.vae, pipeline.backbone->d_model()));
    ckpt.components.push_back(style_table_component(*pipeline.table));
    save_checkpoint(ckpt, out_path);
    if (!log_path.empty()) write_train_log(log_path, pipeline.stage2_log);
    write_run_manifest(fs::path(out_path).parent_path(), "train-stage2", config, settings.seed,
                       {data_dir, backbone_path, stage1_path, scorer_path}, {out_path});
    std::printf("stage II done: %d epochs, %ld/%ld sentences masked, saved to %s\n",
                pipeline.stage2_log.epochs_run, pipeline.stage2_log.mask_sentences_selected,
                pipeline.stage2_log.mask_sentences_seen, out_path.c_str());
    return 0;
}

int cmd_train_eval_models(const CommonOpts& opts, const std::string& data_dir,
                          const std::string& out_path) {
    ConfigMap config = resolve_config(opts);
    RunSettings settings = RunSettings::from_config(config);

    RawCorpus raw = load_raw_corpus(data_dir);
    Pipeline pipeline(settings);
    pipeline.train_eval_models(raw);

    Checkpoint ckpt;
    ckpt.seed = settings.seed;
    ckpt.config_json = config.echo_json();
    ckpt.components.push_back(eval_classifier_component(*pipeline.classifier));
    ckpt.components.push_back(char_lm_component(*pipeline.char_lm));
    save_checkpoint(ckpt, out_path);
    write_run_manifest(fs::path(out_path).parent_path(), "train-eval-models", config, settings.seed,
                       {data_dir}, {out_path});
    std::printf("eval models trained, classifier holdout accuracy %.3f, saved to %s\n",
                static_cast<double>(pipeline.classifier_holdout_accuracy), out_path.c_str());
    return 0;
}

int cmd_score(const CommonOpts& opts, const std::string& backbone_path, const std::string& scorer_path,
              const std::string& input_path, const std::string& output_path) {
    ConfigMap config = resolve_config(opts);
    RunSettings settings = RunSettings::from_config(config);

    LoadedBackbone backbone = load_backbone(backbone_path);
    Checkpoint scorer_ckpt = load_checkpoint(scorer_path, {"scorer"});
    ScorerModel scorer = scorer_from_component(scorer_ckpt.require("scorer"), backbone.model);

    std::string out;
    for (const std::string& line : read_lines(input_path)) {
        Sentence sentence = tokenize(line, backbone.vocab, settings.max_len);
        ImportanceScores scores = scorer.importance_scores(sentence);
        const std::vector<std::string> words = split_tokens(line);
        for (std::size_t i = 0; i < scores.alpha.size(); ++i) {
            char buf[64];
            std::snprintf(buf, sizeof(buf), "\t%.6f\n", static_cast<double>(scores.alpha[i]));
            out += (i < words.size() ? words[i] : "<unk>");
            out += buf;
        }
        out += '\n';
    }
    write_text_file(output_path, out);
    return 0;
}

TransferRequest make_request(const RunSettings& settings, int from, int to, float weight, bool sample) {
    TransferRequest request;
    request.source_style = from;
    request.target_style = to;
    request.weight = weight;
    request.max_len = settings.transfer_max_len;
    request.sample = sample;
    return request;
}

int cmd_transfer(const CommonOpts& opts, const std::string& backbone_path, const std::string& model_path,
                 int from, int to, float weight, const std::string& input_path,
                 const std::string& output_path, bool sample) {
    ConfigMap config = resolve_config(opts);
    RunSettings settings = RunSettings::from_config(config);

    LoadedBackbone backbone = load_backbone(backbone_path);
    Checkpoint model_ckpt = load_checkpoint(model_path, {"vae", "style_table"});
    VaeModel vae = vae_from_component(model_ckpt.require("vae"));
    StyleEmbeddingTable table = style_table_from_component(model_ckpt.require("style_table"));

    TransferRequest request = make_request(settings, from, to, weight, sample);
    Rng sample_rng = derive_rng(settings.seed, "transfer.sample");
    std::vector<std::string> outputs;
    for (const std::string& line : read_lines(input_path)) {
        outputs.push_back(transfer_sentence(*backbone.model, vae, table, backbone.vocab, line, request,
                                            sample ? &sample_rng : nullptr));
    }
    write_lines(output_path, outputs);
    write_run_manifest(fs::path(output_path).parent_path(), "transfer", config, settings.seed,
                       {backbone_path, model_path, input_path}, {output_path});
    std::printf("transferred %zu sentences (style %d -> %d, w=%.3g) to %s\n", outputs.size(), from, to,
                static_cast<double>(weight), output_path.c_str());
    return 0;
}

struct EvalSetup {
    LoadedBackbone backbone;
    VaeModel vae;
    StyleEmbeddingTable table;
    EvalClassifier classifier;
    CharLm char_lm;
    std::vector<Sentence> test_set;
};

EvalSetup load_eval_setup(const std::string& backbone_path, const std::string& model_path,
                          const std::string& eval_path, const std::string& data_dir, int max_len) {
    EvalSetup setup;
    setup.backbone = load_backbone(backbone_path);
    Checkpoint model_ckpt = load_checkpoint(model_path, {"vae", "style_table"});
    setup.vae = vae_from_component(model_ckpt.require("vae"));
    setup.table = style_table_from_component(model_ckpt.require("style_table"));
    Checkpoint eval_ckpt = load_checkpoint(eval_path, {"eval_classifier", "char_lm"});
    setup.classifier = eval_classifier_from_component(eval_ckpt.require("eval_classifier"));
    setup.char_lm = char_lm_from_component(eval_ckpt.require("char_lm"));
    StyleCorpus corpus = tokenize_corpus(load_raw_corpus(data_dir), setup.backbone.vocab, max_len);
    setup.test_set = std::move(corpus.sentences);
    return setup;
}

SweepModels to_sweep_models(const EvalSetup& setup) {
    SweepModels models;
    models.backbone = setup.backbone.model.get();
    models.vae = &setup.vae;
    models.table = &setup.table;
    models.vocab = &setup.backbone.vocab;
    models.classifier = &setup.classifier;
    models.char_lm = &setup.char_lm;
    return models;
}

int cmd_evaluate(const CommonOpts& opts, const std::string& backbone_path, const std::string& model_path,
                 const std::string& eval_path, const std::string& data_dir, float weight,
                 const std::string& json_path) {
    ConfigMap config = resolve_config(opts);
    RunSettings settings = RunSettings::from_config(config);

    EvalSetup setup = load_eval_setup(backbone_path, model_path, eval_path, data_dir, settings.max_len);
    SweepRow row = evaluate_transfer(to_sweep_models(setup), setup.test_set, weight,
                                     settings.transfer_max_len);

    nlohmann::json j;
    j["acc"] = row.acc;
    j["ppl"] = row.ppl;
    j["bleu"] = row.bleu;
    j["gm"] = row.gm;
    j["n"] = static_cast<int>(setup.test_set.size());
    if (!json_path.empty()) write_text_file(json_path, j.dump(2) + "\n");

    std::printf("  w     Acc    PPL     BLEU   GM\n");
    std::printf("%5.2f  %6.2f  %6.2f  %6.2f  %5.2f   (n=%zu)\n", static_cast<double>(weight), row.acc,
                row.ppl, row.bleu, row.gm, setup.test_set.size());
    return 0;
}

int cmd_sweep(const CommonOpts& opts, const std::string& backbone_path, const std::string& model_path,
              const std::string& eval_path, const std::string& data_dir,
              const std::string& weights_csv, const std::string& out_path) {
    ConfigMap config = resolve_config(opts);
    RunSettings settings = RunSettings::from_config(config);

    std::vector<float> weights;
    std::stringstream ss(weights_csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) weights.push_back(std::stof(item));
    }

    EvalSetup setup = load_eval_setup(backbone_path, model_path, eval_path, data_dir, settings.max_len);
    std::vector<SweepRow> rows = sweep_style_weight(to_sweep_models(setup), setup.test_set, weights,
                                                    settings.transfer_max_len);
    write_text_file(out_path, sweep_csv(rows));
    write_run_manifest(fs::path(out_path).parent_path(), "sweep", config, settings.seed,
                       {backbone_path, model_path, eval_path, data_dir}, {out_path});
    std::printf("%s", sweep_csv(rows).c_str());
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"VAE text style transfer with external style embeddings and pivot-word masking"};
    app.require_subcommand(1);

    CommonOpts opts;
    int gen_n = 0;
    std::string data_dir, out_path, log_path, backbone_path, stage1_path, scorer_path, model_path;
    std::string eval_path, input_path, output_path, weights_csv = "0.5,1.0,1.5,2.0,2.5", json_path;
    int from_style = 0, to_style = 1;
    float weight = 1.0f;
    bool sample = false;

    CLI::App* gen = app.add_subcommand("gen-data", "generate a synthetic two-style corpus");
    add_common(gen, opts);
    gen->add_option("--n", gen_n, "sentences per style");
    gen->add_option("--out", out_path, "output directory")->required();

    CLI::App* pre = app.add_subcommand("pretrain", "masked-token pretraining of the backbone");
    add_common(pre, opts);
    pre->add_option("--data", data_dir, "corpus directory (0.txt, 1.txt)")->required();
    pre->add_option("--out", out_path, "checkpoint path")->required();
    pre->add_option("--log", log_path, "JSON-lines step log");

    CLI::App* s1 = app.add_subcommand("train-stage1", "train the VAE and style embeddings");
    add_common(s1, opts);
    s1->add_option("--data", data_dir)->required();
    s1->add_option("--backbone", backbone_path)->required();
    s1->add_option("--out", out_path)->required();
    s1->add_option("--log", log_path);

    CLI::App* sc = app.add_subcommand("train-scorer", "train the pivot-word style classifier");
    add_common(sc, opts);
    sc->add_option("--data", data_dir)->required();
    sc->add_option("--backbone", backbone_path)->required();
    sc->add_option("--out", out_path)->required();

    CLI::App* s2 = app.add_subcommand("train-stage2", "fine-tune with pivot-word masking");
    add_common(s2, opts);
    s2->add_option("--data", data_dir)->required();
    s2->add_option("--backbone", backbone_path)->required();
    s2->add_option("--stage1", stage1_path)->required();
    s2->add_option("--scorer", scorer_path)->required();
    s2->add_option("--out", out_path)->required();
    s2->add_option("--log", log_path);

    CLI::App* ev = app.add_subcommand("train-eval-models", "train the evaluation classifier and char LM");
    add_common(ev, opts);
    ev->add_option("--data", data_dir)->required();
    ev->add_option("--out", out_path)->required();

    CLI::App* scr = app.add_subcommand("score", "dump per-token importance scores");
    add_common(scr, opts);
    scr->add_option("--backbone", backbone_path)->required();
    scr->add_option("--scorer", scorer_path)->required();
    scr->add_option("--input", input_path)->required();
    scr->add_option("--output", output_path)->required();

    CLI::App* tr = app.add_subcommand("transfer", "transfer sentences to a target style");
    add_common(tr, opts);
    tr->add_option("--backbone", backbone_path)->required();
    tr->add_option("--model", model_path, "stage I or II checkpoint")->required();
    tr->add_option("--from", from_style)->required();
    tr->add_option("--to", to_style)->required();
    tr->add_option("--weight", weight)->required();
    tr->add_option("--input", input_path)->required();
    tr->add_option("--output", output_path)->required();
    tr->add_flag("--sample", sample, "sample z stochastically instead of using the posterior mean");

    CLI::App* evl = app.add_subcommand("evaluate", "score transferred text (Acc/PPL/BLEU/GM)");
    add_common(evl, opts);
    evl->add_option("--backbone", backbone_path)->required();
    evl->add_option("--model", model_path)->required();
    evl->add_option("--eval", eval_path)->required();
    evl->add_option("--data", data_dir, "test corpus directory")->required();
    evl->add_option("--weight", weight)->required();
    evl->add_option("--json", json_path, "write the report as JSON");

    CLI::App* sw = app.add_subcommand("sweep", "style-weight sweep, CSV output");
    add_common(sw, opts);
    sw->add_option("--backbone", backbone_path)->required();
    sw->add_option("--model", model_path)->required();
    sw->add_option("--eval", eval_path)->required();
    sw->add_option("--data", data_dir)->required();
    sw->add_option("--weights", weights_csv, "comma-separated style weights");
    sw->add_option("--out", out_path)->required();

    try {
        app.parse(argc, argv);
        if (gen->parsed()) return cmd_gen_data(opts, gen_n, out_path);
        if (pre->parsed()) return cmd_pretrain(opts, data_dir, out_path, log_path);
        if (s1->parsed()) return cmd_train_stage1(opts, data_dir, backbone_path, out_path, log_path);
        if (sc->parsed()) return cmd_train_scorer(opts, data_dir, backbone_path, out_path);
        if (s2->parsed()) {
            return cmd_train_stage2(opts, data_dir, backbone_path, stage1_path, scorer_path, out_path,
                                    log_path);
        }
        if (ev->parsed()) return cmd_train_eval_models(opts, data_dir, out_path);
        if (scr->parsed()) return cmd_score(opts, backbone_path, scorer_path, input_path, output_path);
        if (tr->parsed()) {
            return cmd_transfer(opts, backbone_path, model_path, from_style, to_style, weight,
                                input_path, output_path, sample);
        }
        if (evl->parsed()) {
            return cmd_evaluate(opts, backbone_path, model_path, eval_path, data_dir, weight, json_path);
        }
        if (sw->parsed()) {
            return cmd_sweep(opts, backbone_path, model_path, eval_path, data_dir, weights_csv, out_path);
        }
        return 0;
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const UsageError& e) {
        std::fprintf(stderr, "usage error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
