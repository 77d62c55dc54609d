#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "stower/checkpoint.hpp"
#include "stower/config.hpp"
#include "stower/metrics.hpp"
#include "stower/trainer.hpp"
#include "stower/transfer.hpp"

namespace stower {

/// Typed view of the flat run configuration.
struct RunSettings {
    std::uint64_t seed = 7;
    int max_len = 64;
    int min_count = 1;
    int n_per_style = 1000;
    int transfer_max_len = 64;
    BackboneConfig backbone;
    VaeConfig vae;
    TrainConfig stage1;
    TrainConfig stage2;
    ScorerConfig scorer;
    CharLmConfig charlm;
    EvalClassifier::TrainOptions evalcls;

    static RunSettings from_config(const ConfigMap& config);
};

// ---- model <-> checkpoint component conversions ---------------------------

CheckpointComponent backbone_component(const BackboneModel& model);
BackboneModel backbone_from_component(const CheckpointComponent& comp);

CheckpointComponent vae_component(const VaeModel& model, int backbone_dim);
VaeModel vae_from_component(const CheckpointComponent& comp);

CheckpointComponent style_table_component(const StyleEmbeddingTable& table);
StyleEmbeddingTable style_table_from_component(const CheckpointComponent& comp);

CheckpointComponent scorer_component(const ScorerModel& model);
ScorerModel scorer_from_component(const CheckpointComponent& comp,
                                  std::shared_ptr<const BackboneModel> backbone);

CheckpointComponent char_lm_component(const CharLm& lm);
CharLm char_lm_from_component(const CheckpointComponent& comp);

CheckpointComponent eval_classifier_component(const EvalClassifier& model);
EvalClassifier eval_classifier_from_component(const CheckpointComponent& comp);

// ---- manifests -------------------------------------------------------------

std::uint64_t file_checksum(const std::filesystem::path& path);
std::string checksum_hex(std::uint64_t checksum);

/// Every command records enough to reproduce itself: config echo, seed,
/// inputs, and output checksums. Written to `<dir>/manifest-<command>.json`.
void write_run_manifest(const std::filesystem::path& dir, const std::string& command,
                        const ConfigMap& config, std::uint64_t seed,
                        const std::vector<std::filesystem::path>& inputs,
                        const std::vector<std::filesystem::path>& outputs);

void write_text_file(const std::filesystem::path& path, const std::string& text);

// ---- in-memory end-to-end pipeline ------------------------------------------

/// Drives the whole flow (pretrain -> stage I -> scorer -> stage II ->
/// eval models) without touching the filesystem; the acceptance suite and
/// tests run on this, the CLI adds checkpointing around the same calls.
class Pipeline {
public:
    explicit Pipeline(RunSettings settings) : settings_(std::move(settings)) {}

    void load_data(const RawCorpus& raw);
    void pretrain();
    void init_stage1_models();
    void run_stage1();
    void run_scorer();
    void run_stage2();
    void train_eval_models(const RawCorpus& raw);

    SweepModels sweep_models() const;

    const RunSettings& settings() const { return settings_; }

    Vocab vocab;
    StyleCorpus corpus;
    std::shared_ptr<BackboneModel> backbone;
    std::shared_ptr<VaeModel> vae;
    std::shared_ptr<StyleEmbeddingTable> table;
    std::shared_ptr<ScorerModel> scorer;
    std::shared_ptr<CharLm> char_lm;
    std::shared_ptr<EvalClassifier> classifier;

    MlmTrainLog mlm_log;
    TrainResult stage1_log;
    TrainResult stage2_log;
    float scorer_holdout_accuracy = 0.0f;
    float classifier_holdout_accuracy = 0.0f;

private:
    RunSettings settings_;
};

} // namespace stower
