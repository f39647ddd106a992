#include "points/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "points/util.hpp"

namespace points::corpus {

namespace {

template <typename E, std::size_t N>
E parse_enum(std::string_view s, const std::pair<E, std::string_view> (&table)[N], std::string_view what,
             ErrorCode code = ErrorCode::kParse) {
  for (const auto& [value, name] : table) {
    if (name == s) return value;
  }
  fail(code, "unknown " + std::string(what) + " '" + std::string(s) + "'");
}

template <typename E, std::size_t N>
std::string_view enum_name(E v, const std::pair<E, std::string_view> (&table)[N]) {
  for (const auto& [value, name] : table) {
    if (value == v) return name;
  }
  return "?";
}

constexpr std::pair<Language, std::string_view> kLanguages[] = {{Language::kEn, "en"}, {Language::kZh, "zh"}};
constexpr std::pair<Role, std::string_view> kRoles[] = {
    {Role::kSystem, "system"}, {Role::kUser, "user"}, {Role::kAssistant, "assistant"}};
constexpr std::pair<Provenance, std::string_view> kProvenances[] = {{Provenance::kOriginal, "original"},
                                                                    {Provenance::kTranslated, "translated"},
                                                                    {Provenance::kVlmGenerated, "vlm_generated"},
                                                                    {Provenance::kHumanVerified, "human_verified"}};
constexpr std::pair<ManifestKind, std::string_view> kKinds[] = {{ManifestKind::kCaption, "caption"},
                                                               {ManifestKind::kConversation, "conversation"}};
constexpr std::pair<Strategy, std::string_view> kStrategies[] = {
    {Strategy::kTranslate, "translate"},
    {Strategy::kQuestionTranslateVlm, "question_translate_vlm"},
    {Strategy::kVlmHumanCheck, "vlm_human_check"}};

std::size_t count_records(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot open records file " + path.string());
  std::size_t n = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") != std::string::npos) ++n;
  }
  return n;
}

bool is_remote(std::string_view ref) { return ref.find("://") != std::string_view::npos; }

template <typename Record>
void write_jsonl(const std::filesystem::path& path, std::span<const Record> records) {
  std::string out;
  for (const auto& r : records) {
    out += serialize(r);
    out += '\n';
  }
  write_file_atomic(path, out);
}

}  // namespace

std::string_view to_string(Language v) { return enum_name(v, kLanguages); }
std::string_view to_string(Role v) { return enum_name(v, kRoles); }
std::string_view to_string(Provenance v) { return enum_name(v, kProvenances); }
std::string_view to_string(ManifestKind v) { return enum_name(v, kKinds); }
std::string_view to_string(Strategy v) { return enum_name(v, kStrategies); }

Language parse_language(std::string_view s) { return parse_enum(s, kLanguages, "language"); }
Role parse_role(std::string_view s) { return parse_enum(s, kRoles, "role"); }
Provenance parse_provenance(std::string_view s) { return parse_enum(s, kProvenances, "provenance"); }
ManifestKind parse_kind(std::string_view s) { return parse_enum(s, kKinds, "kind", ErrorCode::kUnknownKind); }
Strategy parse_strategy(std::string_view s) { return parse_enum(s, kStrategies, "strategy"); }

CategorySet::CategorySet()
    : names_{"general QA", "OCR", "caption", "chart", "math", "science", "grounding", "knowledge", "conversation"} {}

CategorySet::CategorySet(std::vector<std::string> names) : names_(std::move(names)) {
  if (names_.empty()) fail(ErrorCode::kValidation, "category set is empty");
  std::set<std::string> uniq(names_.begin(), names_.end());
  if (uniq.size() != names_.size()) fail(ErrorCode::kValidation, "duplicate category name");
}

bool CategorySet::contains(std::string_view name) const {
  return std::find(names_.begin(), names_.end(), name) != names_.end();
}

void to_json(Json& j, const CaptionRecord& r) {
  j = Json::object();
  j["id"] = r.id;
  j["image_ref"] = r.image_ref;
  j["original_caption"] = r.original_caption;
  if (r.vlm_caption) j["vlm_caption"] = *r.vlm_caption;
  if (r.fused_caption) j["fused_caption"] = *r.fused_caption;
  if (r.perplexity) j["perplexity"] = *r.perplexity;
  j["language"] = to_string(r.language);
}

void from_json(const Json& j, CaptionRecord& r) {
  r = CaptionRecord{};
  j.at("id").get_to(r.id);
  j.at("image_ref").get_to(r.image_ref);
  j.at("original_caption").get_to(r.original_caption);
  if (auto it = j.find("vlm_caption"); it != j.end() && !it->is_null()) r.vlm_caption = it->get<std::string>();
  if (auto it = j.find("fused_caption"); it != j.end() && !it->is_null()) r.fused_caption = it->get<std::string>();
  if (auto it = j.find("perplexity"); it != j.end() && !it->is_null()) r.perplexity = it->get<double>();
  r.language = parse_language(j.value("language", std::string("en")));
}

void to_json(Json& j, const Turn& t) { j = Json{{"role", to_string(t.role)}, {"content", t.content}}; }

void from_json(const Json& j, Turn& t) {
  t.role = parse_role(j.at("role").get<std::string>());
  j.at("content").get_to(t.content);
}

void to_json(Json& j, const ConversationSample& s) {
  j = Json::object();
  j["id"] = s.id;
  j["image_refs"] = s.image_refs;
  j["turns"] = s.turns;
  j["dataset"] = s.dataset;
  j["category"] = s.category;
  j["language"] = to_string(s.language);
  j["labels"] = s.labels;
  j["provenance"] = to_string(s.provenance);
}

void from_json(const Json& j, ConversationSample& s) {
  s = ConversationSample{};
  j.at("id").get_to(s.id);
  if (auto it = j.find("image_refs"); it != j.end()) it->get_to(s.image_refs);
  j.at("turns").get_to(s.turns);
  s.dataset = j.value("dataset", std::string());
  j.at("category").get_to(s.category);
  s.language = parse_language(j.value("language", std::string("en")));
  if (auto it = j.find("labels"); it != j.end()) it->get_to(s.labels);
  s.provenance = parse_provenance(j.value("provenance", std::string("original")));
}

void validate(const CaptionRecord& r) {
  if (r.id.empty()) fail(ErrorCode::kInvariant, "caption record has empty id");
  if (r.perplexity && (!std::isfinite(*r.perplexity) || *r.perplexity <= 0.0)) {
    fail(ErrorCode::kInvariant, "record " + r.id + ": perplexity must be finite and > 0");
  }
  if (r.fused_caption && !r.vlm_caption) {
    fail(ErrorCode::kInvariant, "record " + r.id + ": fused_caption without vlm_caption");
  }
}

void validate(const ConversationSample& s, const CategorySet& categories) {
  if (s.id.empty()) fail(ErrorCode::kInvariant, "conversation sample has empty id");
  if (s.turns.empty()) fail(ErrorCode::kInvariant, "sample " + s.id + ": no turns");
  if (!categories.contains(s.category)) {
    fail(ErrorCode::kInvariant, "sample " + s.id + ": unknown category '" + s.category + "'");
  }
  std::size_t i = 0;
  if (s.turns.front().role == Role::kSystem) ++i;
  if (i == s.turns.size()) fail(ErrorCode::kInvariant, "sample " + s.id + ": system turn only");
  for (std::size_t k = 0; i < s.turns.size(); ++i, ++k) {
    const Role expected = (k % 2 == 0) ? Role::kUser : Role::kAssistant;
    if (s.turns[i].role != expected) {
      fail(ErrorCode::kInvariant, "sample " + s.id + ": turn " + std::to_string(i) + " should be " +
                                      std::string(to_string(expected)));
    }
  }
}

std::string serialize(const CaptionRecord& r) { return Json(r).dump(); }
std::string serialize(const ConversationSample& s) { return Json(s).dump(); }

DatasetManifest load_manifest(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) fail(ErrorCode::kIo, "manifest not found: " + path.string());
  Json doc;
  try {
    doc = Json::parse(read_file(path));
  } catch (const Json::parse_error& e) {
    fail(ErrorCode::kParse, "manifest " + path.string() + ": " + e.what());
  }
  DatasetManifest m;
  try {
    m.name = doc.at("name").get<std::string>();
    m.kind = parse_kind(doc.at("kind").get<std::string>());
    std::filesystem::path rp = doc.at("records_path").get<std::string>();
    m.records_path = rp.is_absolute() ? rp : std::filesystem::absolute(path).parent_path() / rp;
    m.records_path = m.records_path.lexically_normal();
    if (auto it = doc.find("strategy"); it != doc.end() && !it->is_null()) {
      m.strategy = parse_strategy(it->get<std::string>());
    }
    m.count = doc.at("counts").get<std::size_t>();
    m.fixed_answers = doc.value("fixed_answers", false);
  } catch (const Json::exception& e) {
    fail(ErrorCode::kParse, "manifest " + path.string() + ": " + e.what());
  }
  if (m.strategy && m.kind != ManifestKind::kConversation) {
    fail(ErrorCode::kInvariant, "manifest " + m.name + ": strategy only applies to conversation datasets");
  }
  const auto actual = count_records(m.records_path);
  if (actual != m.count) {
    fail(ErrorCode::kCountMismatch, "manifest " + m.name + " declares " + std::to_string(m.count) +
                                        " records but " + m.records_path.string() + " holds " +
                                        std::to_string(actual));
  }
  return m;
}

void save_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
  const auto dir = std::filesystem::absolute(path).parent_path();
  auto rel = std::filesystem::absolute(m.records_path).lexically_relative(dir);
  Json doc;
  doc["name"] = m.name;
  doc["records_path"] = (rel.empty() ? m.records_path : rel).generic_string();
  doc["kind"] = to_string(m.kind);
  doc["strategy"] = m.strategy ? Json(to_string(*m.strategy)) : Json(nullptr);
  doc["counts"] = m.count;
  doc["fixed_answers"] = m.fixed_answers;
  write_file_atomic(path, doc.dump(2) + "\n");
}

std::filesystem::path manifest_path_for(const std::filesystem::path& dir, const std::string& name) {
  return dir / (name + ".manifest.json");
}

void write_records(const std::filesystem::path& path, std::span<const CaptionRecord> records) {
  write_jsonl(path, records);
}

void write_records(const std::filesystem::path& path, std::span<const ConversationSample> records) {
  write_jsonl(path, records);
}

ValidationReport validate_manifest(const DatasetManifest& manifest, const CategorySet& categories) {
  ValidationReport report;
  const auto base = manifest.records_path.parent_path();
  auto check_image = [&](const std::string& id, const std::string& ref) {
    if (ref.empty() || is_remote(ref)) return;
    std::filesystem::path p = ref;
    if (p.is_relative()) p = base / p;
    if (!std::filesystem::exists(p)) report.warnings.push_back("record " + id + ": image not found: " + ref);
  };
  StreamOptions opts{.strict = false, .categories = categories};
  if (manifest.kind == ManifestKind::kCaption) {
    RecordStream<CaptionRecord> stream(manifest.records_path, opts);
    while (auto r = stream.next()) {
      ++report.records;
      check_image(r->id, r->image_ref);
    }
    report.errors = stream.skipped();
  } else {
    RecordStream<ConversationSample> stream(manifest.records_path, opts);
    while (auto s = stream.next()) {
      ++report.records;
      for (const auto& ref : s->image_refs) check_image(s->id, ref);
    }
    report.errors = stream.skipped();
  }
  return report;
}

double DistributionReport::category_percent(const std::string& category) const {
  if (total == 0) return 0.0;
  auto it = by_category.find(category);
  return it == by_category.end() ? 0.0 : 100.0 * static_cast<double>(it->second) / static_cast<double>(total);
}

double DistributionReport::language_percent(const std::string& language) const {
  if (total == 0) return 0.0;
  auto it = by_language.find(language);
  return it == by_language.end() ? 0.0 : 100.0 * static_cast<double>(it->second) / static_cast<double>(total);
}

std::string DistributionReport::to_text() const {
  std::ostringstream out;
  out << "total " << total << "\n";
  out << std::fixed << std::setprecision(2);
  out << "categories:\n";
  for (const auto& [name, n] : by_category) {
    out << "  " << name << "\t" << n << "\t" << category_percent(name) << "%\n";
  }
  out << "languages:\n";
  for (const auto& [name, n] : by_language) {
    out << "  " << name << "\t" << n << "\t" << language_percent(name) << "%\n";
  }
  return out.str();
}

Json DistributionReport::to_json() const {
  Json j;
  j["total"] = total;
  j["categories"] = Json::object();
  for (const auto& [name, n] : by_category) {
    j["categories"][name] = {{"count", n}, {"percent", category_percent(name)}};
  }
  j["languages"] = Json::object();
  for (const auto& [name, n] : by_language) {
    j["languages"][name] = {{"count", n}, {"percent", language_percent(name)}};
  }
  return j;
}

DistributionReport distribution_report(std::span<const DatasetManifest> manifests, const CategorySet& categories) {
  for (const auto& m : manifests) {
    if (m.kind != ManifestKind::kConversation) {
      fail(ErrorCode::kPrecondition, "distribution report needs conversation manifests; " + m.name + " is " +
                                         std::string(to_string(m.kind)));
    }
  }
  DistributionReport report;
  for (const auto& m : manifests) {
    RecordStream<ConversationSample> stream(m.records_path, {.strict = true, .categories = categories});
    while (auto s = stream.next()) {
      ++report.total;
      ++report.by_category[s->category];
      ++report.by_language[std::string(to_string(s->language))];
    }
  }
  return report;
}

}  // namespace points::corpus
