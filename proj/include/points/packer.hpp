#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace points::packer {

inline constexpr int kDefaultPatchSize = 14;
inline constexpr int kDefaultMerge = 2;
inline constexpr std::size_t kDefaultCapacity = 4096;

struct ImageGeometry {
  long width = 0;
  long height = 0;
  int patch_size = kDefaultPatchSize;
  int merge = kDefaultMerge;
};

// Rounds a side to the nearest multiple of `unit` (halves round up), never
// below one unit.
long round_to_unit(long side, long unit);

// Visual tokens produced for an image at native resolution after the resize
// rule: (w' / unit) * (h' / unit) with unit = patch_size * merge.
std::size_t patch_count(const ImageGeometry& geom);

struct PackEntry {
  std::string image_id;
  std::size_t token_count = 0;

  bool operator==(const PackEntry&) const = default;
};

/// Several images' token runs laid end to end. `boundaries` holds cumulative
/// offsets, so image k owns [boundaries[k], boundaries[k+1]).
struct PackedSequence {
  std::vector<PackEntry> entries;
  std::vector<std::size_t> boundaries{0};
  std::size_t capacity = kDefaultCapacity;
  std::size_t total = 0;

  // Throws Error(kInvariant) if any bookkeeping invariant is broken.
  void check() const;
};

// Greedy first-fit in arrival order: a new sequence starts whenever the next
// image would overflow the current one.
std::vector<PackedSequence> pack(std::span<const PackEntry> counts, std::size_t capacity = kDefaultCapacity);

using Mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

// mask(i, j) is true iff tokens i and j belong to the same image.
Mask block_mask(const PackedSequence& seq);

/// Single- or multi-head dense self-attention with fixed projections.
struct AttentionWeights {
  Eigen::MatrixXd wq;
  Eigen::MatrixXd wk;
  Eigen::MatrixXd wv;
  int heads = 1;

  static AttentionWeights random(int dim, int heads, std::uint64_t seed);
};

// softmax(Q K^T / sqrt(d_head) restricted to `mask`) V. Masked positions get
// exactly zero weight.
Eigen::MatrixXd masked_attention(const Eigen::MatrixXd& x, const Mask& mask, const AttentionWeights& weights);

Eigen::MatrixXd full_attention(const Eigen::MatrixXd& x, const AttentionWeights& weights);

/// Runs attention once over the packed sequence under `mask` (block_mask when
/// empty) and once per image, returning max |packed - per-image|.
double attention_equiv_check(std::span<const Eigen::MatrixXd> embeddings, const PackedSequence& seq,
                             const AttentionWeights& weights, const Mask* mask_override = nullptr);

nlohmann::json to_json(const PackedSequence& seq);
nlohmann::json plan_to_json(std::span<const PackedSequence> plan);

}  // namespace points::packer
