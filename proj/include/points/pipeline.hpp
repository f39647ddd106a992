#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "points/chat_template.hpp"
#include "points/instruct_filter.hpp"
#include "points/model_client.hpp"
#include "points/packer.hpp"

namespace points::pipeline {

using Json = nlohmann::json;

enum class Stage { kCapfuse, kPpl, kBuild, kFilter, kTemplate, kPack };

std::string_view to_string(Stage s);
Stage parse_stage(std::string_view s);
const std::vector<Stage>& all_stages();

/// Effective pipeline configuration. Relative paths are resolved against
/// the config file's directory.
struct PipelineConfig {
  std::filesystem::path base_dir;
  std::filesystem::path output_root;
  Json raw;  // as loaded, used for hashing

  std::map<std::string, Json> clients;  // role -> client document

  std::optional<std::filesystem::path> caption_manifest;
  std::optional<std::filesystem::path> fusion_prompts;

  int ppl_order = 2;
  double ppl_smoothing = 1.0;
  double ppl_fraction = 0.2;

  std::vector<std::filesystem::path> translate_manifests;
  std::vector<std::filesystem::path> question_translate_manifests;

  std::vector<std::filesystem::path> filter_manifests;
  filter::GrammarPolicy grammar_policy = filter::GrammarPolicy::kDrop;
  filter::AnswerableAction answerable_action = filter::AnswerableAction::kLabel;
  std::optional<std::filesystem::path> judge_prompts;

  chat_template::TemplateKind template_kind = chat_template::TemplateKind::kConversation;
  std::optional<std::filesystem::path> template_config;
  std::optional<std::filesystem::path> prompt_pool;
  std::uint64_t template_seed = 0;

  std::optional<std::filesystem::path> image_sizes;
  int patch_size = packer::kDefaultPatchSize;
  int merge = packer::kDefaultMerge;
  std::size_t capacity = packer::kDefaultCapacity;

  std::string config_hash() const;
};

// Parses and validates: every referenced path must exist and every seed must
// be given explicitly.
PipelineConfig load_config(const std::filesystem::path& path);
PipelineConfig parse_config(const Json& doc, const std::filesystem::path& base_dir);

struct StageSummary {
  std::string stage;
  std::string status;  // ok | failed | skipped
  std::size_t records_in = 0;
  std::size_t records_out = 0;
  std::size_t failures = 0;
  std::size_t backend_calls = 0;
  std::size_t cache_hits = 0;
  std::string error;
};

struct RunSummary {
  std::string config_hash;
  std::vector<StageSummary> stages;
  bool ok = true;

  Json to_json() const;
};

/// Runs the requested stages in dependency order
/// (capfuse -> ppl -> build -> filter -> template -> pack). A stage reads its
/// inputs from the previous stage's outputs under output_root, so any suffix
/// of the chain can be re-run on its own. The first failing stage stops the
/// run; the summary names it. Writes <output_root>/summary.json.
RunSummary run_pipeline(const PipelineConfig& config, std::vector<Stage> stages = all_stages());

// Whitespace separated "<image_ref> <width> <height>" lines.
std::map<std::string, std::pair<long, long>> read_image_sizes(const std::filesystem::path& path);

enum class TrainStage { kPretrain, kInstructionTune };

TrainStage parse_train_stage(std::string_view s);

/// Hyperparameters handed to an external trainer.
struct TrainingPlan {
  TrainStage stage = TrainStage::kPretrain;
  std::vector<std::string> trainable;
  int batch_size = 32;
  std::size_t context_length = 4096;
  double learning_rate = 0.0;
  double weight_decay = 0.0;
  double gradient_clip = 1.0;
  std::string scheduler = "cosine";
  std::string token_budget;
  double token_budget_approx = 0.0;

  void validate(std::size_t packer_capacity = packer::kDefaultCapacity) const;
  Json to_json() const;
};

TrainingPlan emit_training_plan(TrainStage stage);
TrainingPlan emit_training_plan(std::string_view stage);

}  // namespace points::pipeline
