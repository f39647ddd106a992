#include "points/ppl_filter.hpp"

#include <algorithm>
#include <cmath>
#include <cwctype>
#include <numeric>

#include "points/error.hpp"
#include "points/util.hpp"

namespace points::ppl {

namespace {

constexpr char kSep = '\x1f';

bool is_space(char32_t cp) { return cp == U' ' || cp == U'\t' || cp == U'\n' || cp == U'\r' || cp == 0x3000; }

bool is_punct(char32_t cp) {
  if (cp < 0x80) return std::ispunct(static_cast<int>(cp)) != 0;
  return (cp >= 0x3001 && cp <= 0x303F) || (cp >= 0xFF01 && cp <= 0xFF0F) || (cp >= 0xFF1A && cp <= 0xFF20) ||
         (cp >= 0x2010 && cp <= 0x205E);
}

}  // namespace

TokenSequence make_sequence(std::initializer_list<std::string_view> tokens) {
  TokenSequence s;
  for (auto t : tokens) s.tokens.emplace_back(t);
  return s;
}

TokenSequence tokenize(std::string_view text, const TokenizerConfig& config) {
  TokenSequence out;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) out.tokens.push_back(std::move(current));
    current.clear();
  };
  for (char32_t cp : utf8_decode(text)) {
    if (is_space(cp)) {
      flush();
    } else if ((config.split_punctuation && is_punct(cp)) || (config.cjk_per_char && is_cjk(cp))) {
      flush();
      out.tokens.push_back(utf8_encode(cp));
    } else {
      if (config.lowercase && cp < 0x80) cp = static_cast<char32_t>(std::tolower(static_cast<int>(cp)));
      current += utf8_encode(cp);
    }
  }
  flush();
  return out;
}

UniformScorer::UniformScorer(std::size_t vocab_size) {
  if (vocab_size == 0) fail(ErrorCode::kPrecondition, "uniform scorer needs a non-empty vocabulary");
  log_p_ = -std::log(static_cast<double>(vocab_size));
}

double UniformScorer::log_prob(std::span<const std::string>, const std::string&) const { return log_p_; }

NgramScorer::NgramScorer(int order, double smoothing) : order_(order), smoothing_(smoothing) {
  if (order < 1) fail(ErrorCode::kPrecondition, "n-gram order must be >= 1");
  if (!(smoothing > 0.0) || !std::isfinite(smoothing)) {
    fail(ErrorCode::kPrecondition, "smoothing constant must be positive");
  }
}

std::string NgramScorer::context_key(std::span<const std::string> context) {
  std::string key;
  for (const auto& t : context) {
    key += t;
    key += kSep;
  }
  return key;
}

double NgramScorer::prob(std::span<const std::string> history, const std::string& token) const {
  const auto keep = std::min<std::size_t>(history.size(), static_cast<std::size_t>(order_ - 1));
  const auto context = history.subspan(history.size() - keep);
  const double v = static_cast<double>(vocab_.size());
  const auto it = table_.find(context_key(context));
  if (it == table_.end()) return 1.0 / v;
  const auto& cc = it->second;
  const auto nx = cc.next.find(token);
  const double c = nx == cc.next.end() ? 0.0 : static_cast<double>(nx->second);
  return (c + smoothing_) / (static_cast<double>(cc.total) + smoothing_ * v);
}

double NgramScorer::log_prob(std::span<const std::string> history, const std::string& token) const {
  return std::log(prob(history, token));
}

std::vector<std::vector<std::string>> NgramScorer::contexts() const {
  std::vector<std::vector<std::string>> out;
  for (const auto& [key, _] : table_) {
    std::vector<std::string> ctx;
    std::string cur;
    for (char c : key) {
      if (c == kSep) {
        ctx.push_back(std::move(cur));
        cur.clear();
      } else {
        cur += c;
      }
    }
    out.push_back(std::move(ctx));
  }
  return out;
}

std::size_t NgramScorer::count(std::span<const std::string> context, const std::string& token) const {
  const auto it = table_.find(context_key(context));
  if (it == table_.end()) return 0;
  const auto nx = it->second.next.find(token);
  return nx == it->second.next.end() ? 0 : nx->second;
}

nlohmann::json NgramScorer::to_json() const {
  nlohmann::json tables = nlohmann::json::object();
  for (const auto& [key, cc] : table_) tables[key] = cc.next;
  return {{"order", order_}, {"smoothing", smoothing_}, {"vocab", vocab_}, {"counts", tables}};
}

NgramScorer NgramScorer::from_json(const nlohmann::json& doc) {
  NgramScorer s(doc.at("order").get<int>(), doc.at("smoothing").get<double>());
  s.vocab_ = doc.at("vocab").get<std::set<std::string>>();
  for (const auto& [key, next] : doc.at("counts").items()) {
    auto& cc = s.table_[key];
    cc.next = next.get<std::map<std::string, std::size_t>>();
    for (const auto& [_, n] : cc.next) cc.total += n;
  }
  if (s.vocab_.empty()) fail(ErrorCode::kParse, "n-gram model has an empty vocabulary");
  return s;
}

NgramScorer train_ngram(std::span<const TokenSequence> corpus, int order, double smoothing) {
  NgramScorer s(order, smoothing);
  for (const auto& seq : corpus) {
    const auto& t = seq.tokens;
    for (std::size_t i = 0; i < t.size(); ++i) {
      s.vocab_.insert(t[i]);
      const auto max_ctx = std::min<std::size_t>(i, static_cast<std::size_t>(order - 1));
      for (std::size_t len = 0; len <= max_ctx; ++len) {
        auto& cc = s.table_[NgramScorer::context_key(std::span(t).subspan(i - len, len))];
        ++cc.next[t[i]];
        ++cc.total;
      }
    }
  }
  if (s.vocab_.empty()) fail(ErrorCode::kPrecondition, "cannot train an n-gram model on an empty corpus");
  return s;
}

double perplexity(const TokenSequence& sequence, const Scorer& scorer) {
  const auto n = sequence.size();
  if (n == 0) fail(ErrorCode::kPrecondition, "perplexity of an empty sequence");
  const std::span<const std::string> toks(sequence.tokens);
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double lp = scorer.log_prob(toks.first(i), toks[i]);
    if (!std::isfinite(lp)) fail(ErrorCode::kInvariant, "token '" + toks[i] + "' has zero probability");
    sum += lp;
  }
  return std::exp(-sum / static_cast<double>(n));
}

const std::string& caption_text(const CaptionRecord& record, CaptionSource source) {
  switch (source) {
    case CaptionSource::kFused:
      if (!record.fused_caption) fail(ErrorCode::kPrecondition, "record " + record.id + " has no fused caption");
      return *record.fused_caption;
    case CaptionSource::kOriginal:
      return record.original_caption;
    case CaptionSource::kFusedOrOriginal:
      break;
  }
  return record.fused_caption ? *record.fused_caption : record.original_caption;
}

std::vector<CaptionRecord> score_records(std::span<const CaptionRecord> records, const Scorer& scorer,
                                         const TokenizerConfig& tokenizer, CaptionSource source) {
  std::vector<CaptionRecord> out(records.begin(), records.end());
  for (auto& r : out) {
    const auto seq = tokenize(caption_text(r, source), tokenizer);
    if (seq.size() == 0) fail(ErrorCode::kPrecondition, "record " + r.id + " has an empty caption");
    r.perplexity = perplexity(seq, scorer);
  }
  return out;
}

std::size_t keep_count(std::size_t total, double fraction) {
  if (!(fraction > 0.0 && fraction <= 1.0)) fail(ErrorCode::kPrecondition, "fraction must lie in (0, 1]");
  // Absorb binary representation error so 0.2 * 10000 keeps exactly 2000.
  const double raw = fraction * static_cast<double>(total);
  const auto kept = static_cast<std::size_t>(std::ceil(raw - 1e-9 * std::max(1.0, raw)));
  return std::min(total, kept);
}

std::vector<CaptionRecord> filter_by_perplexity(std::span<const CaptionRecord> records, double fraction) {
  const auto keep = keep_count(records.size(), fraction);
  for (const auto& r : records) {
    if (!r.perplexity) fail(ErrorCode::kPrecondition, "record " + r.id + " has no perplexity score");
  }
  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (*records[a].perplexity != *records[b].perplexity) return *records[a].perplexity < *records[b].perplexity;
    return records[a].id < records[b].id;
  });
  order.resize(keep);
  std::sort(order.begin(), order.end());
  std::vector<CaptionRecord> out;
  out.reserve(keep);
  for (auto i : order) out.push_back(records[i]);
  return out;
}

}  // namespace points::ppl
