#pragma once

#include <cstddef>
#include <map>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "points/corpus.hpp"

namespace points::ppl {

using corpus::CaptionRecord;

struct TokenSequence {
  std::vector<std::string> tokens;

  std::size_t size() const { return tokens.size(); }
};

TokenSequence make_sequence(std::initializer_list<std::string_view> tokens);

struct TokenizerConfig {
  bool split_punctuation = true;
  bool cjk_per_char = true;
  bool lowercase = false;
};

// Whitespace split; punctuation marks become their own tokens and CJK text
// falls back to one token per character.
TokenSequence tokenize(std::string_view text, const TokenizerConfig& config = {});

/// Conditional token model P(token | history). Implementations must be
/// immutable after construction so one instance can be shared across threads.
class Scorer {
 public:
  virtual ~Scorer() = default;
  virtual double log_prob(std::span<const std::string> history, const std::string& token) const = 0;
};

class UniformScorer final : public Scorer {
 public:
  explicit UniformScorer(std::size_t vocab_size);
  double log_prob(std::span<const std::string> history, const std::string& token) const override;

 private:
  double log_p_;
};

/// Add-k smoothed n-gram model. For every observed context the conditional
/// distribution over the vocabulary sums to one; unseen contexts fall back
/// to the uniform distribution, and tokens outside the vocabulary receive the
/// zero-count mass.
class NgramScorer final : public Scorer {
 public:
  NgramScorer(int order, double smoothing);

  double prob(std::span<const std::string> history, const std::string& token) const;
  double log_prob(std::span<const std::string> history, const std::string& token) const override;

  int order() const { return order_; }
  double smoothing() const { return smoothing_; }
  const std::set<std::string>& vocab() const { return vocab_; }
  std::vector<std::vector<std::string>> contexts() const;
  std::size_t count(std::span<const std::string> context, const std::string& token) const;

  nlohmann::json to_json() const;
  static NgramScorer from_json(const nlohmann::json& doc);

 private:
  friend NgramScorer train_ngram(std::span<const TokenSequence>, int, double);

  struct ContextCounts {
    std::map<std::string, std::size_t> next;
    std::size_t total = 0;
  };

  static std::string context_key(std::span<const std::string> context);

  int order_;
  double smoothing_;
  std::set<std::string> vocab_;
  std::map<std::string, ContextCounts> table_;
};

NgramScorer train_ngram(std::span<const TokenSequence> corpus, int order, double smoothing = 1.0);

// exp(-(1/N) * sum_i log P(w_i | w_<i)), accumulated in log space.
double perplexity(const TokenSequence& sequence, const Scorer& scorer);

enum class CaptionSource { kFusedOrOriginal, kFused, kOriginal };

const std::string& caption_text(const CaptionRecord& record, CaptionSource source);

std::vector<CaptionRecord> score_records(std::span<const CaptionRecord> records, const Scorer& scorer,
                                         const TokenizerConfig& tokenizer = {},
                                         CaptionSource source = CaptionSource::kFusedOrOriginal);

std::size_t keep_count(std::size_t total, double fraction);

/// Keeps the ceil(fraction * n) records with the lowest perplexity, breaking
/// ties by id. Survivors keep their input order.
std::vector<CaptionRecord> filter_by_perplexity(std::span<const CaptionRecord> records, double fraction = 0.2);

}  // namespace points::ppl
