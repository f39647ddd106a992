#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "points/corpus.hpp"
#include "points/model_client.hpp"

namespace points::filter {

using corpus::ConversationSample;
using corpus::DatasetManifest;

enum class FilterKind { kGrammar, kAnswerableWithoutImage };
enum class Verdict { kPass, kFlagged };
enum class ActionTaken { kKept, kDropped, kFixed, kLabeled };
enum class GrammarPolicy { kDrop, kFix };
enum class AnswerableAction { kLabel, kDrop };

std::string_view to_string(FilterKind v);
std::string_view to_string(Verdict v);
std::string_view to_string(ActionTaken v);
GrammarPolicy parse_grammar_policy(std::string_view s);
AnswerableAction parse_answerable_action(std::string_view s);

/// Audit record written for every judged sample.
struct FilterDecision {
  std::string sample_id;
  FilterKind filter = FilterKind::kGrammar;
  Verdict verdict = Verdict::kPass;
  ActionTaken action_taken = ActionTaken::kKept;
  std::string judge_output;
  std::string note;
};

nlohmann::json to_json(const FilterDecision& d);

/// Judge instructions. Both ask for a machine-readable first line.
struct JudgePrompts {
  std::string grammar =
      "You review training conversations for grammatical errors. The user message is a JSON array of turns. "
      "Answer PASS on the first line if every turn is grammatical. Otherwise answer FLAG on the first line, then "
      "a JSON array with the corrected text of every turn, in order.";
  std::string answer =
      "Answer the question. No image is available, so rely on the text alone. Reply with the answer only; for "
      "multiple-choice questions reply with the option letter.";

  static JudgePrompts load(const std::filesystem::path& path);
};

struct GrammarVerdict {
  Verdict verdict = Verdict::kPass;
  bool parsed = true;
  std::optional<std::vector<std::string>> corrected_turns;
  std::string judge_output;
};

GrammarVerdict parse_grammar_verdict(const std::string& judge_output, std::size_t turn_count);

model::ChatRequest grammar_request(const ConversationSample& sample, const model::ModelClient& judge,
                                   const JudgePrompts& prompts);

// Unparseable or failed judgements come back as an unparsed pass so the
// sample is kept.
GrammarVerdict detect_grammar(const ConversationSample& sample, model::ModelClient& judge,
                              const JudgePrompts& prompts = {});

struct SkippedSample {
  std::string id;
  std::string reason;
};

struct FilterOutcome {
  std::vector<ConversationSample> samples;
  std::vector<FilterDecision> decisions;
  std::vector<SkippedSample> skipped;
  std::size_t total = 0;

  std::size_t kept() const { return samples.size(); }
  double retention() const;
};

FilterOutcome apply_grammar_policy(std::span<const ConversationSample> samples, model::ModelClient& judge,
                                   GrammarPolicy policy = GrammarPolicy::kDrop, const JudgePrompts& prompts = {});

// Lowercase, trim, collapse whitespace, strip terminal punctuation.
std::string normalize_answer(std::string_view answer);

// Normalized exact match; multiple-choice answers compare by option letter.
bool answers_match(std::string_view gold, std::string_view predicted);

struct QuestionAnswer {
  std::string question;
  std::string gold;
};

// The final assistant turn and the user turn before it.
std::optional<QuestionAnswer> gold_pair(const ConversationSample& sample);

// Asks the judge the question with the image withheld. Refuses samples from
// datasets without fixed answers.
std::string answer_without_image(const ConversationSample& sample, bool fixed_answers, model::ModelClient& judge,
                                 const JudgePrompts& prompts = {});

FilterOutcome filter_text_answerable(std::span<const ConversationSample> samples, bool fixed_answers,
                                     model::ModelClient& judge, AnswerableAction action = AnswerableAction::kLabel,
                                     const JudgePrompts& prompts = {});

struct ManifestFilter {
  DatasetManifest manifest;
  FilterOutcome outcome;
};

ManifestFilter grammar_manifest(const DatasetManifest& in, model::ModelClient& judge, GrammarPolicy policy,
                                const std::filesystem::path& out_dir, const std::string& name,
                                const JudgePrompts& prompts = {});

ManifestFilter answerable_manifest(const DatasetManifest& in, model::ModelClient& judge, AnswerableAction action,
                                   const std::filesystem::path& out_dir, const std::string& name,
                                   const JudgePrompts& prompts = {});

// One JSON object per line.
void write_decisions(const std::filesystem::path& path, std::span<const FilterDecision> decisions);

}  // namespace points::filter
