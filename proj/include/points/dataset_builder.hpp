#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "points/corpus.hpp"
#include "points/model_client.hpp"
#include "points/review.hpp"

namespace points::builder {

using corpus::ConversationSample;
using corpus::DatasetManifest;

enum class TranslateScope { kFull, kQuestionsOnly };

struct SampleIssue {
  std::string id;
  std::string message;
};

struct BuildResult {
  std::vector<ConversationSample> samples;
  std::vector<SampleIssue> failures;  // samples dropped because of errors
  std::vector<SampleIssue> notices;   // samples passed through untouched
};

/// System instruction for translation requests; `{language}` is substituted.
/// The text to translate travels alone in the user message.
struct TranslationPrompt {
  std::string instruction =
      "Translate the user's message into {language}. Keep answer-option letters (A, B, C, ...), numbers, "
      "formulas and code exactly as they are. Reply with the translation only.";

  std::string render(std::string_view language) const;
};

std::string language_name(corpus::Language language);

// Full scope translates every turn; questions-only translates user turns and
// leaves answers for the VLM step. Samples already in the target language are
// passed through with a notice.
BuildResult translate_samples(std::span<const ConversationSample> samples, model::ModelClient& llm,
                              corpus::Language target, TranslateScope scope, const TranslationPrompt& prompt = {});

// Replaces (or appends) the final assistant answer with the VLM's response to
// the final user question and the sample's images.
BuildResult vlm_answer_samples(std::span<const ConversationSample> samples, model::ModelClient& vlm);

// Checks that an operation is allowed on a manifest given its recorded
// strategy, and returns the strategy the output manifest must carry.
corpus::Strategy strategy_for(TranslateScope scope);
void check_strategy(const DatasetManifest& manifest, corpus::Strategy operation);

struct OcrTask {
  std::string id;
  std::string image_ref;
  std::string question;
  std::optional<std::string> vlm_answer;
  enum class ReviewStatus { kUnreviewed, kQueued } review_status = ReviewStatus::kUnreviewed;
};

struct OcrPromptPool {
  std::vector<std::string> questions;

  // Placeholder pool; ship your own list in config.
  static OcrPromptPool defaults();
  static OcrPromptPool load(const std::filesystem::path& path);
};

struct OcrBuildResult {
  std::vector<OcrTask> tasks;
  std::vector<SampleIssue> failures;
  review::EnqueueResult enqueue;
};

std::string ocr_task_id(const std::string& image_ref);

// One seeded uniform question per image, answered by the VLM, then queued for
// human verification. Only tasks with an answer reach the queue.
OcrBuildResult build_ocr_tasks(std::span<const std::string> images, const OcrPromptPool& pool,
                               model::ModelClient& vlm, std::uint64_t seed, review::ReviewStore* queue_store,
                               const std::string& queue_name);

std::vector<review::EnqueueTask> to_enqueue_tasks(std::span<const OcrTask> tasks);
nlohmann::json to_json(const OcrTask& task);

// Manifest-level wrappers: read, transform, and write `<out_dir>/<name>`.
struct ManifestBuild {
  DatasetManifest manifest;
  BuildResult result;
};

ManifestBuild translate_manifest(const DatasetManifest& in, model::ModelClient& llm, corpus::Language target,
                                 TranslateScope scope, const std::filesystem::path& out_dir, const std::string& name,
                                 const TranslationPrompt& prompt = {});

ManifestBuild vlm_answer_manifest(const DatasetManifest& in, model::ModelClient& vlm,
                                  const std::filesystem::path& out_dir, const std::string& name);

}  // namespace points::builder
