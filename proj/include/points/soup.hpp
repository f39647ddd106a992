#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace points::soup {

struct Tensor {
  std::vector<std::int64_t> shape;
  std::vector<float> values;

  std::size_t element_count() const;
  bool operator==(const Tensor&) const = default;
};

/// One checkpoint: named tensors plus where it came from. `sources` lists
/// every member id when the map is itself a soup.
struct ParameterMap {
  std::map<std::string, Tensor> entries;
  std::string source_id;
  std::optional<double> score;
  std::vector<std::string> sources;

  void validate() const;
  bool same_tensors(const ParameterMap& other) const { return entries == other.entries; }
};

struct Candidate {
  const ParameterMap* map = nullptr;
  double score = 0.0;
};

// Top-k by score, ties broken by smaller source id.
std::vector<const ParameterMap*> select_members(std::span<const Candidate> candidates, std::size_t k);

// Uniform mean of every tensor, summed in double over inputs sorted by
// source id so the result does not depend on argument order.
ParameterMap average(std::span<const ParameterMap> maps);
ParameterMap average(std::span<const ParameterMap* const> maps);

std::string soup_report(std::span<const ParameterMap* const> members, const ParameterMap& result);

// Binary checkpoint layout, all integers little-endian:
//   magic "PTSOUP01" | u32 len + source id bytes | u32 tensor count
//   per tensor: u32 name len, name bytes, u32 ndim, i64 dims[ndim]
//   then, in the same order, every tensor's float32 values.
void write_checkpoint(const std::filesystem::path& path, const ParameterMap& map);
ParameterMap read_checkpoint(const std::filesystem::path& path);

// Text sidecar: source, score, members, tensor shapes and the checkpoint's
// sha256. Written next to the checkpoint as `<path>.manifest.json`.
void write_checkpoint_manifest(const std::filesystem::path& ckpt_path, const ParameterMap& map);

// Whitespace separated "<id> <score>" lines; '#' starts a comment.
std::map<std::string, double> read_scores(const std::filesystem::path& path);

}  // namespace points::soup
