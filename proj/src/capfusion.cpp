#include "points/capfusion.hpp"

#include <fstream>
#include <unordered_map>
#include <unordered_set>

#include "points/util.hpp"

namespace points::capfusion {

namespace {

constexpr std::string_view kOriginalSlot = "{original_caption}";
constexpr std::string_view kVlmSlot = "{vlm_caption}";

std::size_t count_occurrences(const std::string& text, std::string_view needle) {
  std::size_t n = 0;
  for (auto pos = text.find(needle); pos != std::string::npos; pos = text.find(needle, pos + needle.size())) ++n;
  return n;
}

void replace_once(std::string& text, std::string_view slot, const std::string& value) {
  const auto pos = text.find(slot);
  text.replace(pos, slot.size(), value);
}

void append_lines(const std::filesystem::path& path, const std::vector<CaptionRecord>& records) {
  std::ofstream out(path, std::ios::binary | std::ios::app);
  if (!out) fail(ErrorCode::kIo, "cannot append to " + path.string());
  for (const auto& r : records) out << corpus::serialize(r) << '\n';
  out.flush();
}

constexpr std::size_t kResumeChunk = 64;

}  // namespace

FusionPrompts FusionPrompts::defaults() {
  return {
      "Describe this image in detail. Mention the main objects, their attributes, any visible text, and the scene.",
      "Here are two captions for the same image.\n"
      "Caption A (from the web, may contain real names and background knowledge): {original_caption}\n"
      "Caption B (from a vision-language model, describes the visual content): {vlm_caption}\n"
      "Merge them into one fluent caption that keeps the real-world knowledge of A and the visual detail of B. "
      "Do not add facts found in neither. Reply with the merged caption only.",
  };
}

FusionPrompts FusionPrompts::load(const std::filesystem::path& path) {
  const auto doc = nlohmann::json::parse(read_file(path));
  auto p = defaults();
  p.vlm_caption_prompt = doc.value("vlm_caption_prompt", p.vlm_caption_prompt);
  p.fusion_prompt = doc.value("fusion_prompt", p.fusion_prompt);
  p.validate();
  return p;
}

void FusionPrompts::validate() const {
  if (vlm_caption_prompt.empty()) fail(ErrorCode::kValidation, "vlm_caption_prompt is empty");
  if (count_occurrences(fusion_prompt, kOriginalSlot) != 1 || count_occurrences(fusion_prompt, kVlmSlot) != 1) {
    fail(ErrorCode::kValidation, "fusion_prompt must contain {original_caption} and {vlm_caption} exactly once");
  }
}

std::string FusionPrompts::render_fusion(const std::string& original_caption, const std::string& vlm_caption) const {
  validate();
  // Substitute the later slot first so inserted text is never rescanned.
  std::string out = fusion_prompt;
  const auto a = out.find(kOriginalSlot);
  const auto b = out.find(kVlmSlot);
  if (a > b) {
    replace_once(out, kOriginalSlot, original_caption);
    replace_once(out, kVlmSlot, vlm_caption);
  } else {
    replace_once(out, kVlmSlot, vlm_caption);
    replace_once(out, kOriginalSlot, original_caption);
  }
  return out;
}

model::ChatRequest vlm_request(const CaptionRecord& record, const model::ModelClient& vlm,
                               const FusionPrompts& prompts) {
  if (record.image_ref.empty()) fail(ErrorCode::kPrecondition, "record " + record.id + " has no image_ref");
  return vlm.make_request({{corpus::Role::kUser, prompts.vlm_caption_prompt, record.image_ref}});
}

model::ChatRequest fusion_request(const CaptionRecord& record, const model::ModelClient& llm,
                                  const FusionPrompts& prompts) {
  if (!record.vlm_caption) fail(ErrorCode::kPrecondition, "record " + record.id + " has no vlm_caption to fuse");
  return llm.make_request(
      {{corpus::Role::kUser, prompts.render_fusion(record.original_caption, *record.vlm_caption), std::nullopt}});
}

namespace {

CaptionRecord with_vlm_text(const CaptionRecord& record, std::string text) {
  if (trim(text).empty()) fail(ErrorCode::kEmptyResponse, "VLM returned an empty caption for " + record.id);
  auto out = record;
  out.vlm_caption = std::move(text);
  return out;
}

CaptionRecord with_fused_text(const CaptionRecord& record, std::string text) {
  if (trim(text).empty()) fail(ErrorCode::kEmptyResponse, "LLM returned an empty fusion for " + record.id);
  auto out = record;
  out.fused_caption = std::move(text);
  return out;
}

}  // namespace

CaptionRecord generate_vlm_caption(const CaptionRecord& record, model::ModelClient& vlm, const FusionPrompts& prompts,
                                   bool overwrite) {
  if (record.vlm_caption && !overwrite) return record;
  return with_vlm_text(record, vlm.complete(vlm_request(record, vlm, prompts)));
}

CaptionRecord fuse_captions(const CaptionRecord& record, model::ModelClient& llm, const FusionPrompts& prompts) {
  return with_fused_text(record, llm.complete(fusion_request(record, llm, prompts)));
}

RunResult run_capfusion(const DatasetManifest& manifest, model::ModelClient& vlm, model::ModelClient& llm,
                        const FusionPrompts& prompts, const std::filesystem::path& out_dir,
                        const std::string& out_name, RunOptions options) {
  if (manifest.kind != corpus::ManifestKind::kCaption) {
    fail(ErrorCode::kPrecondition, "capfusion needs a caption manifest; " + manifest.name + " is " +
                                       std::string(corpus::to_string(manifest.kind)));
  }
  prompts.validate();
  const auto input = corpus::read_all<CaptionRecord>(manifest);
  std::filesystem::create_directories(out_dir);
  const auto records_path = std::filesystem::absolute(out_dir / (out_name + ".jsonl"));

  RunResult result;
  result.input_count = input.size();

  std::unordered_map<std::string, CaptionRecord> done;
  if (options.resume && std::filesystem::exists(records_path)) {
    for (auto& r : corpus::read_all<CaptionRecord>(records_path, {.strict = false})) {
      if (r.fused_caption) done.emplace(r.id, std::move(r));
    }
    // Rewrite without any torn trailing line before appending.
    std::vector<CaptionRecord> kept;
    for (const auto& r : input) {
      if (auto it = done.find(r.id); it != done.end()) kept.push_back(it->second);
    }
    corpus::write_records(records_path, kept);
    result.resumed = kept.size();
  } else if (options.resume) {
    corpus::write_records(records_path, std::span<const CaptionRecord>{});
  }

  std::vector<std::size_t> todo;
  for (std::size_t i = 0; i < input.size(); ++i) {
    if (!done.contains(input[i].id)) todo.push_back(i);
  }

  std::vector<std::optional<CaptionRecord>> fused(input.size());
  const std::size_t chunk = options.resume ? kResumeChunk : std::max<std::size_t>(todo.size(), 1);
  for (std::size_t start = 0; start < todo.size(); start += chunk) {
    const auto end = std::min(todo.size(), start + chunk);

    // Step one: VLM captions for records that still need one.
    std::vector<std::size_t> need_vlm;
    std::vector<model::ChatRequest> vlm_reqs;
    std::vector<std::optional<CaptionRecord>> staged(end - start);
    for (std::size_t k = start; k < end; ++k) {
      const auto& rec = input[todo[k]];
      if (rec.vlm_caption && !options.overwrite_vlm) {
        staged[k - start] = rec;
        continue;
      }
      try {
        vlm_reqs.push_back(vlm_request(rec, vlm, prompts));
        need_vlm.push_back(k);
      } catch (const Error& e) {
        result.failures.push_back({rec.id, "vlm", e.what()});
      }
    }
    if (!vlm_reqs.empty()) {
      const auto outs = vlm.complete_batch(vlm_reqs);
      for (std::size_t q = 0; q < outs.size(); ++q) {
        const auto& rec = input[todo[need_vlm[q]]];
        try {
          if (!outs[q].ok()) throw *outs[q].error;
          staged[need_vlm[q] - start] = with_vlm_text(rec, *outs[q].text);
        } catch (const Error& e) {
          result.failures.push_back({rec.id, "vlm", e.what()});
        }
      }
    }

    // Step two: fuse.
    std::vector<std::size_t> need_fuse;
    std::vector<model::ChatRequest> fuse_reqs;
    for (std::size_t k = start; k < end; ++k) {
      if (!staged[k - start]) continue;
      fuse_reqs.push_back(fusion_request(*staged[k - start], llm, prompts));
      need_fuse.push_back(k);
    }
    std::vector<CaptionRecord> finished;
    if (!fuse_reqs.empty()) {
      const auto outs = llm.complete_batch(fuse_reqs);
      for (std::size_t q = 0; q < outs.size(); ++q) {
        const auto k = need_fuse[q];
        const auto& rec = *staged[k - start];
        try {
          if (!outs[q].ok()) throw *outs[q].error;
          fused[todo[k]] = with_fused_text(rec, *outs[q].text);
          finished.push_back(*fused[todo[k]]);
        } catch (const Error& e) {
          result.failures.push_back({rec.id, "fusion", e.what()});
        }
      }
    }
    if (options.resume) append_lines(records_path, finished);
  }

  std::vector<CaptionRecord> output;
  for (std::size_t i = 0; i < input.size(); ++i) {
    if (fused[i]) {
      output.push_back(std::move(*fused[i]));
    } else if (auto it = done.find(input[i].id); it != done.end()) {
      output.push_back(it->second);
    }
  }
  // Failures are reported in input order regardless of which step failed.
  std::unordered_map<std::string, std::size_t> position;
  for (std::size_t i = 0; i < input.size(); ++i) position.emplace(input[i].id, i);
  std::stable_sort(result.failures.begin(), result.failures.end(),
                   [&](const RecordFailure& a, const RecordFailure& b) { return position[a.id] < position[b.id]; });

  result.manifest = corpus::write_dataset<CaptionRecord>(out_dir, out_name, output);
  std::string report;
  for (const auto& f : result.failures) {
    report += nlohmann::json{{"id", f.id}, {"stage", f.stage}, {"error", f.message}}.dump() + "\n";
  }
  write_file_atomic(out_dir / (out_name + ".failures.jsonl"), report);
  return result;
}

}  // namespace points::capfusion
