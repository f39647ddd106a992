#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "points/corpus.hpp"
#include "points/model_client.hpp"

namespace points::capfusion {

using corpus::CaptionRecord;
using corpus::DatasetManifest;

/// Prompt texts for the two model calls. `fusion_prompt` must contain each of
/// `{original_caption}` and `{vlm_caption}` exactly once.
struct FusionPrompts {
  std::string vlm_caption_prompt;
  std::string fusion_prompt;

  static FusionPrompts defaults();
  static FusionPrompts load(const std::filesystem::path& path);

  void validate() const;
  std::string render_fusion(const std::string& original_caption, const std::string& vlm_caption) const;
};

// Fills `vlm_caption` by asking the VLM to describe the record's image.
// A record that already has one is returned untouched unless `overwrite`.
CaptionRecord generate_vlm_caption(const CaptionRecord& record, model::ModelClient& vlm,
                                   const FusionPrompts& prompts, bool overwrite = false);

// fused = LLM(original, vlm). The LLM never sees the image.
CaptionRecord fuse_captions(const CaptionRecord& record, model::ModelClient& llm, const FusionPrompts& prompts);

model::ChatRequest vlm_request(const CaptionRecord& record, const model::ModelClient& vlm,
                               const FusionPrompts& prompts);
model::ChatRequest fusion_request(const CaptionRecord& record, const model::ModelClient& llm,
                                  const FusionPrompts& prompts);

struct RecordFailure {
  std::string id;
  std::string stage;  // "vlm" or "fusion"
  std::string message;
};

struct RunOptions {
  bool resume = false;
  bool overwrite_vlm = false;
};

struct RunResult {
  DatasetManifest manifest;
  std::size_t input_count = 0;
  std::size_t resumed = 0;  // records carried over from a previous partial run
  std::vector<RecordFailure> failures;
};

/// Fuses every record of a caption manifest. Writes `<out_dir>/<name>.jsonl`,
/// its manifest, and `<name>.failures.jsonl`. Per-record failures are
/// reported, never fatal. In resume mode records are appended as they finish
/// and ids already present in the output are skipped.
RunResult run_capfusion(const DatasetManifest& manifest, model::ModelClient& vlm, model::ModelClient& llm,
                        const FusionPrompts& prompts, const std::filesystem::path& out_dir,
                        const std::string& out_name, RunOptions options = {});

}  // namespace points::capfusion
