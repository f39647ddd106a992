#pragma once

#include <cstddef>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "json.hpp"
#include "points/error.hpp"

namespace points::corpus {

using Json = nlohmann::json;

enum class Language { kEn, kZh };
enum class Role { kSystem, kUser, kAssistant };
enum class Provenance { kOriginal, kTranslated, kVlmGenerated, kHumanVerified };
enum class ManifestKind { kCaption, kConversation };

// Chinese-dataset construction strategies.
enum class Strategy { kTranslate, kQuestionTranslateVlm, kVlmHumanCheck };

std::string_view to_string(Language v);
std::string_view to_string(Role v);
std::string_view to_string(Provenance v);
std::string_view to_string(ManifestKind v);
std::string_view to_string(Strategy v);

Language parse_language(std::string_view s);
Role parse_role(std::string_view s);
Provenance parse_provenance(std::string_view s);
ManifestKind parse_kind(std::string_view s);
Strategy parse_strategy(std::string_view s);

/// One image-caption pre-training sample.
///
/// `vlm_caption` is the VLM description of the image and `fused_caption` the
/// LLM merge of it with `original_caption`.
struct CaptionRecord {
  std::string id;
  std::string image_ref;
  std::string original_caption;
  std::optional<std::string> vlm_caption;
  std::optional<std::string> fused_caption;
  std::optional<double> perplexity;
  Language language = Language::kEn;

  bool operator==(const CaptionRecord&) const = default;
};

struct Turn {
  Role role = Role::kUser;
  std::string content;

  bool operator==(const Turn&) const = default;
};

struct ConversationSample {
  std::string id;
  std::vector<std::string> image_refs;
  std::vector<Turn> turns;
  std::string dataset;
  std::string category;
  Language language = Language::kEn;
  std::set<std::string> labels;
  Provenance provenance = Provenance::kOriginal;

  bool operator==(const ConversationSample&) const = default;
};

inline constexpr std::string_view kAnswerableWithoutImage = "answerable-without-image";

/// Closed set of instruction-data categories. Defaults to nine tags; any
/// other set can be loaded from config.
class CategorySet {
 public:
  CategorySet();
  explicit CategorySet(std::vector<std::string> names);

  bool contains(std::string_view name) const;
  const std::vector<std::string>& names() const { return names_; }

 private:
  std::vector<std::string> names_;
};

struct DatasetManifest {
  std::string name;
  std::filesystem::path records_path;  // absolute once loaded
  ManifestKind kind = ManifestKind::kConversation;
  std::optional<Strategy> strategy;
  std::size_t count = 0;
  bool fixed_answers = false;
};

void to_json(Json& j, const CaptionRecord& r);
void from_json(const Json& j, CaptionRecord& r);
void to_json(Json& j, const Turn& t);
void from_json(const Json& j, Turn& t);
void to_json(Json& j, const ConversationSample& s);
void from_json(const Json& j, ConversationSample& s);

// Type invariants. Throw Error(kInvariant) naming the violated rule.
void validate(const CaptionRecord& r);
void validate(const ConversationSample& s, const CategorySet& categories);

std::string serialize(const CaptionRecord& r);
std::string serialize(const ConversationSample& s);

DatasetManifest load_manifest(const std::filesystem::path& path);

// Writes the manifest document; records_path is stored relative to the
// manifest's directory when possible.
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

struct StreamOptions {
  bool strict = true;
  CategorySet categories;
};

struct SkippedLine {
  std::size_t line = 0;
  std::string reason;
};

namespace detail {
inline void check(const CaptionRecord& r, const CategorySet&) { validate(r); }
inline void check(const ConversationSample& s, const CategorySet& c) { validate(s, c); }
}  // namespace detail

/// Single-consumer reader over a JSONL record file. Yields records in file
/// order; malformed lines abort (strict) or are recorded and skipped.
template <typename Record>
class RecordStream {
 public:
  RecordStream(const std::filesystem::path& records_path, StreamOptions options = {})
      : in_(records_path, std::ios::binary), options_(std::move(options)) {
    if (!in_) fail(ErrorCode::kIo, "cannot open records file " + records_path.string());
  }

  std::optional<Record> next() {
    std::string line;
    while (std::getline(in_, line)) {
      ++line_no_;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.find_first_not_of(" \t") == std::string::npos) continue;
      try {
        auto rec = Json::parse(line).get<Record>();
        detail::check(rec, options_.categories);
        if (!seen_ids_.insert(rec.id).second) {
          fail(ErrorCode::kInvariant, "duplicate id '" + rec.id + "'");
        }
        return rec;
      } catch (const std::exception& e) {
        if (options_.strict) {
          fail(ErrorCode::kParse, "malformed record at line " + std::to_string(line_no_) + ": " + e.what());
        }
        skipped_.push_back({line_no_, e.what()});
      }
    }
    return std::nullopt;
  }

  const std::vector<SkippedLine>& skipped() const { return skipped_; }

 private:
  std::ifstream in_;
  StreamOptions options_;
  std::size_t line_no_ = 0;
  std::unordered_set<std::string> seen_ids_;
  std::vector<SkippedLine> skipped_;
};

template <typename Record>
std::vector<Record> read_all(const std::filesystem::path& records_path, StreamOptions options = {},
                             std::vector<SkippedLine>* skipped = nullptr) {
  RecordStream<Record> stream(records_path, std::move(options));
  std::vector<Record> out;
  while (auto rec = stream.next()) out.push_back(std::move(*rec));
  if (skipped) *skipped = stream.skipped();
  return out;
}

template <typename Record>
std::vector<Record> read_all(const DatasetManifest& manifest, StreamOptions options = {},
                             std::vector<SkippedLine>* skipped = nullptr) {
  return read_all<Record>(manifest.records_path, std::move(options), skipped);
}

void write_records(const std::filesystem::path& path, std::span<const CaptionRecord> records);
void write_records(const std::filesystem::path& path, std::span<const ConversationSample> records);

/// Writes `<dir>/<name>.jsonl` plus `<dir>/<name>.manifest.json` and returns
/// the manifest.
template <typename Record>
DatasetManifest write_dataset(const std::filesystem::path& dir, const std::string& name,
                              std::span<const Record> records, std::optional<Strategy> strategy = {},
                              bool fixed_answers = false) {
  DatasetManifest m;
  m.name = name;
  m.records_path = std::filesystem::absolute(dir / (name + ".jsonl"));
  m.kind = std::is_same_v<Record, CaptionRecord> ? ManifestKind::kCaption : ManifestKind::kConversation;
  m.strategy = strategy;
  m.count = records.size();
  m.fixed_answers = fixed_answers;
  write_records(m.records_path, records);
  save_manifest(m, dir / (name + ".manifest.json"));
  return m;
}

std::filesystem::path manifest_path_for(const std::filesystem::path& dir, const std::string& name);

struct ValidationReport {
  std::size_t records = 0;
  std::vector<SkippedLine> errors;
  std::vector<std::string> warnings;  // e.g. missing local image files

  bool ok() const { return errors.empty(); }
};

// Full lenient pass over a manifest: collects every malformed line and
// missing local image instead of stopping at the first.
ValidationReport validate_manifest(const DatasetManifest& manifest, const CategorySet& categories = {});

struct DistributionReport {
  std::size_t total = 0;
  std::map<std::string, std::size_t> by_category;
  std::map<std::string, std::size_t> by_language;

  double category_percent(const std::string& category) const;
  double language_percent(const std::string& language) const;
  std::string to_text() const;
  Json to_json() const;
};

DistributionReport distribution_report(std::span<const DatasetManifest> manifests,
                                       const CategorySet& categories = {});

}  // namespace points::corpus
