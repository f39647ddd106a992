#include "points/packer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "points/error.hpp"

namespace points::packer {

long round_to_unit(long side, long unit) {
  const long units = (side + unit / 2) / unit;
  return std::max(1L, units) * unit;
}

std::size_t patch_count(const ImageGeometry& g) {
  if (g.width <= 0 || g.height <= 0) fail(ErrorCode::kPrecondition, "image dimensions must be positive");
  if (g.patch_size < 1 || g.merge < 1) fail(ErrorCode::kPrecondition, "patch_size and merge must be >= 1");
  const long unit = static_cast<long>(g.patch_size) * g.merge;
  const long w = round_to_unit(g.width, unit);
  const long h = round_to_unit(g.height, unit);
  return static_cast<std::size_t>((w / unit) * (h / unit));
}

void PackedSequence::check() const {
  if (boundaries.size() != entries.size() + 1) fail(ErrorCode::kInvariant, "boundary count != entries + 1");
  if (boundaries.front() != 0) fail(ErrorCode::kInvariant, "first boundary must be 0");
  std::size_t sum = 0;
  for (std::size_t k = 0; k < entries.size(); ++k) {
    if (boundaries[k + 1] <= boundaries[k]) fail(ErrorCode::kInvariant, "boundaries not strictly increasing");
    if (boundaries[k + 1] - boundaries[k] != entries[k].token_count) {
      fail(ErrorCode::kInvariant, "boundary span disagrees with token count of " + entries[k].image_id);
    }
    sum += entries[k].token_count;
  }
  if (sum != total) fail(ErrorCode::kInvariant, "total != sum of token counts");
  if (boundaries.back() != total) fail(ErrorCode::kInvariant, "last boundary != total");
  if (total > capacity) fail(ErrorCode::kInvariant, "total exceeds capacity");
}

std::vector<PackedSequence> pack(std::span<const PackEntry> counts, std::size_t capacity) {
  if (capacity == 0) fail(ErrorCode::kPrecondition, "capacity must be positive");
  for (const auto& e : counts) {
    if (e.token_count == 0) fail(ErrorCode::kPrecondition, "image " + e.image_id + " has zero tokens");
    if (e.token_count > capacity) {
      fail(ErrorCode::kOversized, "image " + e.image_id + " needs " + std::to_string(e.token_count) +
                                      " tokens, capacity is " + std::to_string(capacity));
    }
  }
  std::vector<PackedSequence> out;
  for (const auto& e : counts) {
    if (out.empty() || out.back().total + e.token_count > capacity) {
      out.emplace_back();
      out.back().capacity = capacity;
    }
    auto& seq = out.back();
    seq.entries.push_back(e);
    seq.total += e.token_count;
    seq.boundaries.push_back(seq.total);
  }
  return out;
}

Mask block_mask(const PackedSequence& seq) {
  const auto n = static_cast<Eigen::Index>(seq.total);
  Mask mask = Mask::Constant(n, n, false);
  for (std::size_t k = 0; k + 1 < seq.boundaries.size(); ++k) {
    const auto b = static_cast<Eigen::Index>(seq.boundaries[k]);
    const auto len = static_cast<Eigen::Index>(seq.boundaries[k + 1]) - b;
    mask.block(b, b, len, len).setConstant(true);
  }
  return mask;
}

AttentionWeights AttentionWeights::random(int dim, int heads, std::uint64_t seed) {
  if (dim < 1 || heads < 1 || dim % heads != 0) {
    fail(ErrorCode::kPrecondition, "dim must be a positive multiple of heads");
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(dim)));
  auto draw = [&] {
    Eigen::MatrixXd m(dim, dim);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
    return m;
  };
  AttentionWeights w;
  w.wq = draw();
  w.wk = draw();
  w.wv = draw();
  w.heads = heads;
  return w;
}

Eigen::MatrixXd masked_attention(const Eigen::MatrixXd& x, const Mask& mask, const AttentionWeights& w) {
  const auto n = x.rows();
  const auto dim = x.cols();
  if (w.wq.rows() != dim || mask.rows() != n || mask.cols() != n) {
    fail(ErrorCode::kShapeMismatch, "attention inputs have inconsistent shapes");
  }
  const Eigen::MatrixXd q = x * w.wq;
  const Eigen::MatrixXd k = x * w.wk;
  const Eigen::MatrixXd v = x * w.wv;
  const auto head_dim = dim / w.heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));

  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(n, dim);
  for (int h = 0; h < w.heads; ++h) {
    const auto off = static_cast<Eigen::Index>(h) * head_dim;
    const Eigen::MatrixXd scores = q.middleCols(off, head_dim) * k.middleCols(off, head_dim).transpose() * scale;
    for (Eigen::Index i = 0; i < n; ++i) {
      double row_max = -std::numeric_limits<double>::infinity();
      for (Eigen::Index j = 0; j < n; ++j) {
        if (mask(i, j)) row_max = std::max(row_max, scores(i, j));
      }
      if (!std::isfinite(row_max)) continue;  // fully masked row attends to nothing
      Eigen::RowVectorXd weights = Eigen::RowVectorXd::Zero(n);
      double denom = 0.0;
      for (Eigen::Index j = 0; j < n; ++j) {
        if (!mask(i, j)) continue;
        weights(j) = std::exp(scores(i, j) - row_max);
        denom += weights(j);
      }
      weights /= denom;
      out.row(i).segment(off, head_dim) = weights * v.middleCols(off, head_dim);
    }
  }
  return out;
}

Eigen::MatrixXd full_attention(const Eigen::MatrixXd& x, const AttentionWeights& w) {
  return masked_attention(x, Mask::Constant(x.rows(), x.rows(), true), w);
}

double attention_equiv_check(std::span<const Eigen::MatrixXd> embeddings, const PackedSequence& seq,
                             const AttentionWeights& weights, const Mask* mask_override) {
  seq.check();
  if (embeddings.size() != seq.entries.size()) {
    fail(ErrorCode::kShapeMismatch, "got " + std::to_string(embeddings.size()) + " embedding blocks for " +
                                        std::to_string(seq.entries.size()) + " images");
  }
  if (embeddings.empty()) return 0.0;
  const auto dim = embeddings.front().cols();
  for (std::size_t k = 0; k < embeddings.size(); ++k) {
    if (static_cast<std::size_t>(embeddings[k].rows()) != seq.entries[k].token_count || embeddings[k].cols() != dim) {
      fail(ErrorCode::kShapeMismatch, "embedding shape mismatch for image " + seq.entries[k].image_id);
    }
  }

  Eigen::MatrixXd packed_in(static_cast<Eigen::Index>(seq.total), dim);
  for (std::size_t k = 0; k < embeddings.size(); ++k) {
    packed_in.middleRows(static_cast<Eigen::Index>(seq.boundaries[k]), embeddings[k].rows()) = embeddings[k];
  }
  const Mask mask = mask_override ? *mask_override : block_mask(seq);
  const Eigen::MatrixXd packed_out = masked_attention(packed_in, mask, weights);

  double max_diff = 0.0;
  for (std::size_t k = 0; k < embeddings.size(); ++k) {
    const Eigen::MatrixXd alone = full_attention(embeddings[k], weights);
    const auto block = packed_out.middleRows(static_cast<Eigen::Index>(seq.boundaries[k]), alone.rows());
    max_diff = std::max(max_diff, (block - alone).cwiseAbs().maxCoeff());
  }
  return max_diff;
}

nlohmann::json to_json(const PackedSequence& seq) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : seq.entries) entries.push_back({{"image_id", e.image_id}, {"tokens", e.token_count}});
  return {{"entries", entries}, {"boundaries", seq.boundaries}, {"capacity", seq.capacity}, {"total", seq.total}};
}

nlohmann::json plan_to_json(std::span<const PackedSequence> plan) {
  nlohmann::json seqs = nlohmann::json::array();
  for (const auto& s : plan) seqs.push_back(to_json(s));
  return {{"sequences", seqs}};
}

}  // namespace points::packer
