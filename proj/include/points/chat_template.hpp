#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "points/corpus.hpp"

namespace points::chat_template {

using corpus::CaptionRecord;

enum class TemplateKind { kContinuation, kConversation };

std::string_view to_string(TemplateKind kind);
TemplateKind parse_kind(std::string_view s);

struct TurnMarkers {
  std::string begin;  // "{role}" is replaced by the role name
  std::string end;
};

/// Text scaffolding for pre-training samples. Defaults follow the ChatML
/// layout of Qwen2.5 instruct models; every literal is overridable.
struct TemplateConfig {
  TemplateKind kind = TemplateKind::kConversation;
  std::string system_text = "You are a helpful assistant.";
  std::string image_prefix_token = "<img>";
  std::string image_suffix_token = "</img>";
  std::string image_placeholder = "<image>";
  TurnMarkers markers{"<|im_start|>{role}\n", "<|im_end|>\n"};

  void validate() const;
  std::string begin_marker(corpus::Role role) const;

  static TemplateConfig load(const std::filesystem::path& path);
  nlohmann::json to_json() const;
};

struct PromptPool {
  std::vector<std::string> prompts;

  static PromptPool defaults();
  static PromptPool load(const std::filesystem::path& path);
  void validate() const;
};

// Deterministic in (seed, index), uniform over the pool.
const std::string& sample_prompt(const PromptPool& pool, std::uint64_t seed, std::uint64_t index);

enum class CaptionField { kFusedOrOriginal, kFused, kOriginal };

std::string render(const CaptionRecord& record, const TemplateConfig& config, const PromptPool& pool,
                   std::uint64_t seed, std::uint64_t index, CaptionField field = CaptionField::kFusedOrOriginal);

struct ParsedSample {
  std::string system;  // empty for continuation
  std::string prompt;  // empty for continuation
  std::string caption;
  std::size_t image_count = 0;
};

// Inverse of render for a given config.
ParsedSample parse_rendered(const std::string& text, const TemplateConfig& config);

struct RenderedRecord {
  std::string id;
  std::string image_ref;
  std::string text;
};

std::vector<RenderedRecord> render_all(std::span<const CaptionRecord> records, const TemplateConfig& config,
                                       const PromptPool& pool, std::uint64_t seed,
                                       CaptionField field = CaptionField::kFusedOrOriginal);

void write_rendered(const std::filesystem::path& path, std::span<const RenderedRecord> rendered);

}  // namespace points::chat_template
