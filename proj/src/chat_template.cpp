#include "points/chat_template.hpp"

#include <set>

#include "points/util.hpp"

namespace points::chat_template {

namespace {

using corpus::Role;

void replace_all(std::string& text, std::string_view from, std::string_view to) {
  for (auto pos = text.find(from); pos != std::string::npos; pos = text.find(from, pos + to.size())) {
    text.replace(pos, from.size(), to);
  }
}

std::vector<std::string> reserved_literals(const TemplateConfig& c) {
  std::vector<std::string> out{c.image_prefix_token, c.image_suffix_token, c.image_placeholder};
  if (c.kind == TemplateKind::kConversation) {
    out.push_back(c.markers.end);
    for (auto role : {Role::kSystem, Role::kUser, Role::kAssistant}) out.push_back(c.begin_marker(role));
  }
  return out;
}

void check_free_of_literals(const std::string& text, const TemplateConfig& c, std::string_view what) {
  for (const auto& lit : reserved_literals(c)) {
    if (!lit.empty() && text.find(lit) != std::string::npos) {
      fail(ErrorCode::kValidation, std::string(what) + " contains reserved template literal '" + lit + "'");
    }
  }
}

// Consumes `expected` at `pos` or fails.
void expect(const std::string& text, std::size_t& pos, const std::string& expected) {
  if (text.compare(pos, expected.size(), expected) != 0) {
    fail(ErrorCode::kParse, "rendered text does not match template at offset " + std::to_string(pos));
  }
  pos += expected.size();
}

std::string take_until(const std::string& text, std::size_t& pos, const std::string& terminator) {
  const auto end = text.find(terminator, pos);
  if (end == std::string::npos) fail(ErrorCode::kParse, "unterminated turn at offset " + std::to_string(pos));
  auto out = text.substr(pos, end - pos);
  pos = end + terminator.size();
  return out;
}

const std::string& pick_caption(const CaptionRecord& r, CaptionField field) {
  const std::string* text = nullptr;
  switch (field) {
    case CaptionField::kFused: text = r.fused_caption ? &*r.fused_caption : nullptr; break;
    case CaptionField::kOriginal: text = &r.original_caption; break;
    case CaptionField::kFusedOrOriginal: text = r.fused_caption ? &*r.fused_caption : &r.original_caption; break;
  }
  if (text == nullptr || text->empty()) fail(ErrorCode::kPrecondition, "record " + r.id + " has no caption to render");
  return *text;
}

}  // namespace

std::string_view to_string(TemplateKind kind) {
  return kind == TemplateKind::kConversation ? "conversation" : "continuation";
}

TemplateKind parse_kind(std::string_view s) {
  if (s == "conversation") return TemplateKind::kConversation;
  if (s == "continuation") return TemplateKind::kContinuation;
  fail(ErrorCode::kUnknownKind, "unknown template kind '" + std::string(s) + "'");
}

void TemplateConfig::validate() const {
  if (image_prefix_token.empty() || image_suffix_token.empty() || image_placeholder.empty()) {
    fail(ErrorCode::kValidation, "image prefix, suffix and placeholder must be non-empty");
  }
  if (image_prefix_token == image_suffix_token) fail(ErrorCode::kValidation, "image prefix equals suffix");
  if (kind == TemplateKind::kConversation) {
    if (markers.end.empty()) fail(ErrorCode::kValidation, "end-of-turn marker is empty");
    std::set<std::string> begins;
    for (auto role : {Role::kSystem, Role::kUser, Role::kAssistant}) begins.insert(begin_marker(role));
    if (begins.size() != 3) fail(ErrorCode::kValidation, "begin markers must differ per role (use {role})");
    check_free_of_literals(system_text, *this, "system text");
  }
}

std::string TemplateConfig::begin_marker(Role role) const {
  auto out = markers.begin;
  replace_all(out, "{role}", corpus::to_string(role));
  return out;
}

TemplateConfig TemplateConfig::load(const std::filesystem::path& path) {
  const auto doc = nlohmann::json::parse(read_file(path));
  TemplateConfig c;
  if (doc.contains("kind")) c.kind = parse_kind(doc["kind"].get<std::string>());
  c.system_text = doc.value("system_text", c.system_text);
  c.image_prefix_token = doc.value("image_prefix_token", c.image_prefix_token);
  c.image_suffix_token = doc.value("image_suffix_token", c.image_suffix_token);
  c.image_placeholder = doc.value("image_placeholder", c.image_placeholder);
  if (auto it = doc.find("turn_markers"); it != doc.end()) {
    c.markers.begin = it->value("begin", c.markers.begin);
    c.markers.end = it->value("end", c.markers.end);
  }
  c.validate();
  return c;
}

nlohmann::json TemplateConfig::to_json() const {
  return {{"kind", to_string(kind)},
          {"system_text", system_text},
          {"image_prefix_token", image_prefix_token},
          {"image_suffix_token", image_suffix_token},
          {"image_placeholder", image_placeholder},
          {"turn_markers", {{"begin", markers.begin}, {"end", markers.end}}}};
}

PromptPool PromptPool::defaults() {
  return {{
      "Please describe this image.",
      "Describe this image.",
      "What is shown in this picture? Please describe it.",
      "Give a description of this image.",
      "Can you describe the content of this image?",
      "Provide a brief description of the picture.",
      "Tell me what you see in this image.",
      "Write a caption for this image.",
  }};
}

PromptPool PromptPool::load(const std::filesystem::path& path) {
  const auto doc = nlohmann::json::parse(read_file(path));
  PromptPool pool;
  const auto& list = doc.is_array() ? doc : doc.at("prompts");
  pool.prompts = list.get<std::vector<std::string>>();
  pool.validate();
  return pool;
}

void PromptPool::validate() const {
  if (prompts.empty()) fail(ErrorCode::kPrecondition, "prompt pool is empty");
  std::set<std::string> uniq(prompts.begin(), prompts.end());
  if (uniq.size() != prompts.size()) fail(ErrorCode::kValidation, "prompt pool has duplicate entries");
}

const std::string& sample_prompt(const PromptPool& pool, std::uint64_t seed, std::uint64_t index) {
  pool.validate();
  return pool.prompts[seeded_index(seed, index, pool.prompts.size())];
}

std::string render(const CaptionRecord& record, const TemplateConfig& config, const PromptPool& pool,
                   std::uint64_t seed, std::uint64_t index, CaptionField field) {
  config.validate();
  const auto& caption = pick_caption(record, field);
  check_free_of_literals(caption, config, "caption of " + record.id);
  const std::string image = config.image_prefix_token + config.image_placeholder + config.image_suffix_token;

  if (config.kind == TemplateKind::kContinuation) return image + caption;

  const auto& prompt = sample_prompt(pool, seed, index);
  check_free_of_literals(prompt, config, "prompt");
  std::string out;
  out += config.begin_marker(Role::kSystem) + config.system_text + config.markers.end;
  out += config.begin_marker(Role::kUser) + image + prompt + config.markers.end;
  out += config.begin_marker(Role::kAssistant) + caption + config.markers.end;
  return out;
}

ParsedSample parse_rendered(const std::string& text, const TemplateConfig& config) {
  config.validate();
  const std::string image = config.image_prefix_token + config.image_placeholder + config.image_suffix_token;
  ParsedSample parsed;
  std::size_t pos = 0;
  auto take_images = [&] {
    while (text.compare(pos, image.size(), image) == 0) {
      pos += image.size();
      ++parsed.image_count;
    }
  };

  if (config.kind == TemplateKind::kContinuation) {
    take_images();
    parsed.caption = text.substr(pos);
    return parsed;
  }
  expect(text, pos, config.begin_marker(Role::kSystem));
  parsed.system = take_until(text, pos, config.markers.end);
  expect(text, pos, config.begin_marker(Role::kUser));
  take_images();
  parsed.prompt = take_until(text, pos, config.markers.end);
  expect(text, pos, config.begin_marker(Role::kAssistant));
  parsed.caption = take_until(text, pos, config.markers.end);
  if (pos != text.size()) fail(ErrorCode::kParse, "trailing text after assistant turn");
  return parsed;
}

std::vector<RenderedRecord> render_all(std::span<const CaptionRecord> records, const TemplateConfig& config,
                                       const PromptPool& pool, std::uint64_t seed, CaptionField field) {
  std::vector<RenderedRecord> out;
  out.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    out.push_back({records[i].id, records[i].image_ref, render(records[i], config, pool, seed, i, field)});
  }
  return out;
}

void write_rendered(const std::filesystem::path& path, std::span<const RenderedRecord> rendered) {
  std::string out;
  for (const auto& r : rendered) {
    out += nlohmann::json{{"id", r.id}, {"image_ref", r.image_ref}, {"text", r.text}}.dump();
    out += '\n';
  }
  write_file_atomic(path, out);
}

}  // namespace points::chat_template
