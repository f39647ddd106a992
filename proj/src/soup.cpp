#include "points/soup.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "points/error.hpp"
#include "points/util.hpp"

namespace points::soup {

namespace {

constexpr char kMagic[8] = {'P', 'T', 'S', 'O', 'U', 'P', '0', '1'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::string data) : data_(std::move(data)) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string bytes(std::size_t n) {
    need(n);
    auto s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) fail(ErrorCode::kParse, "checkpoint truncated");
  }

  std::string data_;
  std::size_t pos_ = 0;
};

std::string shape_string(const std::vector<std::int64_t>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) s += (i ? "," : "") + std::to_string(shape[i]);
  return s + "]";
}

}  // namespace

std::size_t Tensor::element_count() const {
  std::size_t n = 1;
  for (auto d : shape) {
    if (d < 0) fail(ErrorCode::kInvariant, "negative tensor dimension");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

void ParameterMap::validate() const {
  for (const auto& [name, t] : entries) {
    if (t.values.size() != t.element_count()) {
      fail(ErrorCode::kInvariant, "tensor '" + name + "' holds " + std::to_string(t.values.size()) +
                                      " values for shape " + shape_string(t.shape));
    }
  }
}

std::vector<const ParameterMap*> select_members(std::span<const Candidate> candidates, std::size_t k) {
  if (k == 0) fail(ErrorCode::kPrecondition, "select at least one member");
  if (k > candidates.size()) {
    fail(ErrorCode::kPrecondition, "asked for " + std::to_string(k) + " members from " +
                                       std::to_string(candidates.size()) + " candidates");
  }
  std::vector<Candidate> sorted(candidates.begin(), candidates.end());
  std::sort(sorted.begin(), sorted.end(), [](const Candidate& a, const Candidate& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.map->source_id < b.map->source_id;
  });
  std::vector<const ParameterMap*> out;
  for (std::size_t i = 0; i < k; ++i) out.push_back(sorted[i].map);
  return out;
}

ParameterMap average(std::span<const ParameterMap> maps) {
  std::vector<const ParameterMap*> ptrs;
  for (const auto& m : maps) ptrs.push_back(&m);
  return average(std::span<const ParameterMap* const>(ptrs));
}

ParameterMap average(std::span<const ParameterMap* const> maps) {
  if (maps.size() < 2) fail(ErrorCode::kPrecondition, "a soup needs at least two members");
  std::vector<const ParameterMap*> sorted(maps.begin(), maps.end());
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const ParameterMap* a, const ParameterMap* b) { return a->source_id < b->source_id; });
  for (const auto* m : sorted) m->validate();

  const auto& ref = *sorted.front();
  for (const auto* m : sorted) {
    for (const auto& [name, t] : m->entries) {
      auto it = ref.entries.find(name);
      if (it == ref.entries.end()) {
        fail(ErrorCode::kNameMismatch, "tensor '" + name + "' in " + m->source_id + " is missing from " +
                                           ref.source_id);
      }
      if (it->second.shape != t.shape) {
        fail(ErrorCode::kShapeMismatch, "tensor '" + name + "' has shape " + shape_string(t.shape) + " in " +
                                            m->source_id + " but " + shape_string(it->second.shape) + " in " +
                                            ref.source_id);
      }
    }
    for (const auto& [name, _] : ref.entries) {
      if (!m->entries.contains(name)) {
        fail(ErrorCode::kNameMismatch, "tensor '" + name + "' is missing from " + m->source_id);
      }
    }
  }

  ParameterMap out;
  const double n = static_cast<double>(sorted.size());
  for (const auto& [name, t] : ref.entries) {
    Tensor avg{t.shape, std::vector<float>(t.values.size())};
    for (std::size_t i = 0; i < t.values.size(); ++i) {
      double sum = 0.0;
      for (const auto* m : sorted) sum += static_cast<double>(m->entries.at(name).values[i]);
      avg.values[i] = static_cast<float>(sum / n);
    }
    out.entries.emplace(name, std::move(avg));
  }
  for (const auto* m : sorted) {
    if (m->sources.empty()) {
      out.sources.push_back(m->source_id);
    } else {
      out.sources.insert(out.sources.end(), m->sources.begin(), m->sources.end());
    }
  }
  std::sort(out.sources.begin(), out.sources.end());
  out.sources.erase(std::unique(out.sources.begin(), out.sources.end()), out.sources.end());
  out.source_id = "soup(";
  for (std::size_t i = 0; i < out.sources.size(); ++i) out.source_id += (i ? "," : "") + out.sources[i];
  out.source_id += ")";
  return out;
}

std::string soup_report(std::span<const ParameterMap* const> members, const ParameterMap& result) {
  if (members.empty()) fail(ErrorCode::kPrecondition, "soup report needs at least one member");
  std::ostringstream out;
  out << "model soup: uniform average of " << members.size() << " checkpoints\n";
  out << "members:\n";
  for (const auto* m : members) {
    out << "  " << m->source_id << "\tscore ";
    if (m->score) {
      out << *m->score;
    } else {
      out << "n/a";
    }
    out << "\n";
  }
  std::size_t params = 0;
  for (const auto& [_, t] : result.entries) params += t.values.size();
  out << "result: " << result.source_id << " (" << result.entries.size() << " tensors, " << params
      << " parameters)\n";
  out << "the souped checkpoint has not been scored; re-run the external evaluation to measure it\n";
  out << "reference (OpenCompass, best single model → souped model): 66.5 → 67.4; published result, not computed "
         "here\n";
  return out.str();
}

void write_checkpoint(const std::filesystem::path& path, const ParameterMap& map) {
  map.validate();
  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(map.source_id.size()));
  out += map.source_id;
  put<std::uint32_t>(out, static_cast<std::uint32_t>(map.entries.size()));
  for (const auto& [name, t] : map.entries) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) put<std::int64_t>(out, d);
  }
  for (const auto& [_, t] : map.entries) {
    out.append(reinterpret_cast<const char*>(t.values.data()), t.values.size() * sizeof(float));
  }
  write_file_atomic(path, out);
}

ParameterMap read_checkpoint(const std::filesystem::path& path) {
  Reader in(read_file(path));
  if (in.bytes(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic))) {
    fail(ErrorCode::kParse, path.string() + " is not a soup checkpoint");
  }
  ParameterMap map;
  map.source_id = in.bytes(in.get<std::uint32_t>());
  const auto n = in.get<std::uint32_t>();
  std::vector<std::string> order;
  for (std::uint32_t i = 0; i < n; ++i) {
    auto name = in.bytes(in.get<std::uint32_t>());
    Tensor t;
    const auto ndim = in.get<std::uint32_t>();
    for (std::uint32_t d = 0; d < ndim; ++d) t.shape.push_back(in.get<std::int64_t>());
    if (!map.entries.emplace(name, std::move(t)).second) {
      fail(ErrorCode::kParse, "duplicate tensor name '" + name + "'");
    }
    order.push_back(std::move(name));
  }
  for (const auto& name : order) {
    auto& t = map.entries.at(name);
    const auto count = t.element_count();
    const auto raw = in.bytes(count * sizeof(float));
    t.values.resize(count);
    std::memcpy(t.values.data(), raw.data(), raw.size());
  }
  if (!in.done()) fail(ErrorCode::kParse, "trailing bytes in " + path.string());
  if (map.source_id.empty()) map.source_id = path.stem().string();
  return map;
}

void write_checkpoint_manifest(const std::filesystem::path& ckpt_path, const ParameterMap& map) {
  nlohmann::json tensors = nlohmann::json::object();
  for (const auto& [name, t] : map.entries) tensors[name] = t.shape;
  nlohmann::json doc{{"source", map.source_id},
                     {"score", map.score ? nlohmann::json(*map.score) : nlohmann::json(nullptr)},
                     {"members", map.sources},
                     {"tensors", tensors},
                     {"format", "PTSOUP01"},
                     {"sha256", sha256_hex(read_file(ckpt_path))}};
  auto out = ckpt_path;
  out += ".manifest.json";
  write_file_atomic(out, doc.dump(2) + "\n");
}

std::map<std::string, double> read_scores(const std::filesystem::path& path) {
  std::map<std::string, double> out;
  for (const auto& raw : split_lines(read_file(path))) {
    auto line = trim(raw.substr(0, raw.find('#')));
    if (line.empty()) continue;
    std::istringstream in(line);
    std::string id;
    double score = 0;
    if (!(in >> id >> score)) fail(ErrorCode::kParse, "bad score line: " + raw);
    out[id] = score;
  }
  return out;
}

}  // namespace points::soup
