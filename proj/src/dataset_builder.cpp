#include "points/dataset_builder.hpp"

#include "points/util.hpp"

namespace points::builder {

namespace {

using corpus::Role;

bool in_scope(Role role, TranslateScope scope) {
  if (role == Role::kSystem) return false;
  return scope == TranslateScope::kFull || role == Role::kUser;
}

std::string error_text(const model::CompletionResult& r) {
  return r.error ? r.error->what() : std::string("unknown error");
}

}  // namespace

std::string TranslationPrompt::render(std::string_view language) const {
  std::string out = instruction;
  constexpr std::string_view kSlot = "{language}";
  for (auto pos = out.find(kSlot); pos != std::string::npos; pos = out.find(kSlot, pos + language.size())) {
    out.replace(pos, kSlot.size(), language);
  }
  return out;
}

std::string language_name(corpus::Language language) {
  return language == corpus::Language::kZh ? "Simplified Chinese" : "English";
}

BuildResult translate_samples(std::span<const ConversationSample> samples, model::ModelClient& llm,
                              corpus::Language target, TranslateScope scope, const TranslationPrompt& prompt) {
  BuildResult result;
  const auto system = prompt.render(language_name(target));

  // One request per in-scope turn, flattened so the client can batch them.
  std::vector<model::ChatRequest> requests;
  std::vector<std::pair<std::size_t, std::size_t>> where;  // (sample, turn)
  std::vector<bool> skip(samples.size(), false);
  for (std::size_t s = 0; s < samples.size(); ++s) {
    if (samples[s].language == target) {
      skip[s] = true;
      continue;
    }
    for (std::size_t t = 0; t < samples[s].turns.size(); ++t) {
      if (!in_scope(samples[s].turns[t].role, scope)) continue;
      requests.push_back(llm.make_request(
          {{Role::kSystem, system, std::nullopt}, {Role::kUser, samples[s].turns[t].content, std::nullopt}}));
      where.emplace_back(s, t);
    }
  }
  std::vector<model::CompletionResult> outs;
  if (!requests.empty()) outs = llm.complete_batch(requests);

  std::vector<ConversationSample> translated(samples.begin(), samples.end());
  std::vector<std::optional<std::string>> failed(samples.size());
  for (std::size_t q = 0; q < outs.size(); ++q) {
    const auto [s, t] = where[q];
    if (failed[s]) continue;
    if (!outs[q].ok()) {
      failed[s] = error_text(outs[q]);
    } else if (trim(*outs[q].text).empty()) {
      failed[s] = "empty translation for turn " + std::to_string(t);
    } else {
      translated[s].turns[t].content = *outs[q].text;
    }
  }
  for (std::size_t s = 0; s < samples.size(); ++s) {
    if (skip[s]) {
      result.notices.push_back({samples[s].id, "already in target language, passed through"});
      result.samples.push_back(samples[s]);
      continue;
    }
    if (failed[s]) {
      result.failures.push_back({samples[s].id, *failed[s]});
      continue;
    }
    translated[s].language = target;
    translated[s].provenance = corpus::Provenance::kTranslated;
    result.samples.push_back(std::move(translated[s]));
  }
  return result;
}

BuildResult vlm_answer_samples(std::span<const ConversationSample> samples, model::ModelClient& vlm) {
  BuildResult result;
  std::vector<model::ChatRequest> requests;
  std::vector<std::size_t> where;
  std::vector<std::optional<std::string>> failed(samples.size());
  for (std::size_t s = 0; s < samples.size(); ++s) {
    const auto& sample = samples[s];
    if (sample.image_refs.empty()) {
      failed[s] = "sample has no image";
      continue;
    }
    std::optional<std::size_t> question;
    for (std::size_t t = sample.turns.size(); t-- > 0;) {
      if (sample.turns[t].role == Role::kUser) {
        question = t;
        break;
      }
    }
    if (!question) {
      failed[s] = "sample has no user question";
      continue;
    }
    requests.push_back(vlm.make_request({{Role::kUser, sample.turns[*question].content, sample.image_refs.front()}}));
    where.push_back(s);
  }
  std::vector<model::CompletionResult> outs;
  if (!requests.empty()) outs = vlm.complete_batch(requests);

  std::vector<std::optional<ConversationSample>> answered(samples.size());
  for (std::size_t q = 0; q < outs.size(); ++q) {
    const auto s = where[q];
    if (!outs[q].ok()) {
      failed[s] = error_text(outs[q]);
      continue;
    }
    if (trim(*outs[q].text).empty()) {
      failed[s] = "VLM returned an empty answer";
      continue;
    }
    auto sample = samples[s];
    if (sample.turns.back().role == Role::kAssistant) {
      sample.turns.back().content = *outs[q].text;
    } else {
      sample.turns.push_back({Role::kAssistant, *outs[q].text});
    }
    sample.provenance = corpus::Provenance::kVlmGenerated;
    answered[s] = std::move(sample);
  }
  for (std::size_t s = 0; s < samples.size(); ++s) {
    if (answered[s]) {
      result.samples.push_back(std::move(*answered[s]));
    } else {
      result.failures.push_back({samples[s].id, failed[s].value_or("not answered")});
    }
  }
  return result;
}

corpus::Strategy strategy_for(TranslateScope scope) {
  return scope == TranslateScope::kFull ? corpus::Strategy::kTranslate : corpus::Strategy::kQuestionTranslateVlm;
}

void check_strategy(const DatasetManifest& manifest, corpus::Strategy operation) {
  if (manifest.kind != corpus::ManifestKind::kConversation) {
    fail(ErrorCode::kPrecondition, "manifest " + manifest.name + " is not a conversation dataset");
  }
  if (manifest.strategy && *manifest.strategy != operation) {
    fail(ErrorCode::kPrecondition, "manifest " + manifest.name + " is assigned strategy " +
                                       std::string(corpus::to_string(*manifest.strategy)) + ", not " +
                                       std::string(corpus::to_string(operation)));
  }
}

OcrPromptPool OcrPromptPool::defaults() {
  return {{
      "请识别图中的所有文字。",
      "请提取这张图片中的文字内容。",
      "图片里写了什么？请完整转写。",
      "请按阅读顺序输出图中的全部文字。",
      "请读出图中的文字，并保持原有的换行。",
  }};
}

OcrPromptPool OcrPromptPool::load(const std::filesystem::path& path) {
  const auto doc = nlohmann::json::parse(read_file(path));
  const auto& list = doc.is_array() ? doc : doc.at("questions");
  return {list.get<std::vector<std::string>>()};
}

std::string ocr_task_id(const std::string& image_ref) { return "ocr-" + sha256_hex(image_ref).substr(0, 16); }

OcrBuildResult build_ocr_tasks(std::span<const std::string> images, const OcrPromptPool& pool,
                               model::ModelClient& vlm, std::uint64_t seed, review::ReviewStore* queue_store,
                               const std::string& queue_name) {
  if (pool.questions.empty()) fail(ErrorCode::kPrecondition, "OCR question pool is empty");
  for (const auto& q : pool.questions) {
    if (q.empty()) fail(ErrorCode::kValidation, "OCR question pool contains an empty question");
  }
  OcrBuildResult result;
  std::vector<model::ChatRequest> requests;
  for (std::size_t i = 0; i < images.size(); ++i) {
    OcrTask task;
    task.id = ocr_task_id(images[i]);
    task.image_ref = images[i];
    task.question = pool.questions[seeded_index(seed, i, pool.questions.size())];
    requests.push_back(vlm.make_request({{Role::kUser, task.question, task.image_ref}}));
    result.tasks.push_back(std::move(task));
  }
  if (requests.empty()) return result;
  const auto outs = vlm.complete_batch(requests);
  for (std::size_t i = 0; i < outs.size(); ++i) {
    if (outs[i].ok() && !trim(*outs[i].text).empty()) {
      result.tasks[i].vlm_answer = *outs[i].text;
    } else {
      result.failures.push_back({result.tasks[i].id, outs[i].ok() ? "empty VLM answer" : error_text(outs[i])});
    }
  }
  if (queue_store) {
    std::vector<OcrTask> answered;
    for (const auto& t : result.tasks) {
      if (t.vlm_answer) answered.push_back(t);
    }
    result.enqueue = queue_store->enqueue(queue_name, to_enqueue_tasks(answered));
    for (auto& t : result.tasks) {
      if (t.vlm_answer) t.review_status = OcrTask::ReviewStatus::kQueued;
    }
  }
  return result;
}

std::vector<review::EnqueueTask> to_enqueue_tasks(std::span<const OcrTask> tasks) {
  std::vector<review::EnqueueTask> out;
  for (const auto& t : tasks) out.push_back({t.id, t.image_ref, t.question, t.vlm_answer});
  return out;
}

nlohmann::json to_json(const OcrTask& task) {
  return {{"id", task.id},
          {"image_ref", task.image_ref},
          {"question", task.question},
          {"vlm_answer", task.vlm_answer ? nlohmann::json(*task.vlm_answer) : nlohmann::json(nullptr)},
          {"review_status", task.review_status == OcrTask::ReviewStatus::kQueued ? "queued" : "unreviewed"}};
}

ManifestBuild translate_manifest(const DatasetManifest& in, model::ModelClient& llm, corpus::Language target,
                                 TranslateScope scope, const std::filesystem::path& out_dir, const std::string& name,
                                 const TranslationPrompt& prompt) {
  const auto strategy = strategy_for(scope);
  check_strategy(in, strategy);
  const auto samples = corpus::read_all<ConversationSample>(in);
  ManifestBuild out;
  out.result = translate_samples(samples, llm, target, scope, prompt);
  out.manifest = corpus::write_dataset<ConversationSample>(out_dir, name, out.result.samples, strategy,
                                                           in.fixed_answers);
  return out;
}

ManifestBuild vlm_answer_manifest(const DatasetManifest& in, model::ModelClient& vlm,
                                  const std::filesystem::path& out_dir, const std::string& name) {
  check_strategy(in, corpus::Strategy::kQuestionTranslateVlm);
  const auto samples = corpus::read_all<ConversationSample>(in);
  ManifestBuild out;
  out.result = vlm_answer_samples(samples, vlm);
  out.manifest = corpus::write_dataset<ConversationSample>(out_dir, name, out.result.samples,
                                                           corpus::Strategy::kQuestionTranslateVlm, in.fixed_answers);
  return out;
}

}  // namespace points::builder
