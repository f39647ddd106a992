#include "points/ppl_filter.hpp"

#include <cmath>
#include <map>
#include <random>

#include "test_support.hpp"

using namespace points;
using namespace points::ppl;

namespace {

// Brute-force add-k n-gram probability: count every occurrence of
// context+token by scanning the corpus directly.
double oracle_prob(const std::vector<TokenSequence>& corpus, int order, double k,
                   const std::vector<std::string>& history, const std::string& token) {
  std::set<std::string> vocab;
  for (const auto& s : corpus) vocab.insert(s.tokens.begin(), s.tokens.end());
  const std::size_t ctx_len = std::min<std::size_t>(history.size(), static_cast<std::size_t>(order - 1));
  const std::vector<std::string> ctx(history.end() - static_cast<std::ptrdiff_t>(ctx_len), history.end());
  double c_ctx = 0;
  double c_tok = 0;
  for (const auto& s : corpus) {
    for (std::size_t i = ctx_len; i < s.tokens.size(); ++i) {
      if (!std::equal(ctx.begin(), ctx.end(), s.tokens.begin() + static_cast<std::ptrdiff_t>(i - ctx_len))) continue;
      c_ctx += 1;
      if (s.tokens[i] == token) c_tok += 1;
    }
  }
  const double v = static_cast<double>(vocab.size());
  if (c_ctx == 0) return 1.0 / v;
  return (c_tok + k) / (c_ctx + k * v);
}

double direct_perplexity(const TokenSequence& s, const Scorer& scorer) {
  double product = 1.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    std::span<const std::string> hist(s.tokens.data(), i);
    product *= std::exp(scorer.log_prob(hist, s.tokens[i]));
  }
  return std::pow(product, -1.0 / static_cast<double>(s.size()));
}

std::vector<CaptionRecord> scored(const std::vector<double>& scores) {
  std::vector<CaptionRecord> out;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    CaptionRecord r{std::string(1, static_cast<char>('a' + i)), "img", "cap"};
    r.perplexity = scores[i];
    out.push_back(r);
  }
  return out;
}

std::vector<std::string> ids(const std::vector<CaptionRecord>& rs) {
  std::vector<std::string> out;
  for (const auto& r : rs) out.push_back(r.id);
  return out;
}

}  // namespace

TEST_CASE("train_ngram matches hand-derived values") {
  const std::vector<TokenSequence> corpus{make_sequence({"a", "b", "a", "b"})};
  const auto uni = train_ngram(corpus, 1);
  CHECK(uni.prob({}, "a") == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(uni.prob({}, "b") == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(perplexity(make_sequence({"a", "b"}), uni) == doctest::Approx(2.0).epsilon(1e-12));

  const auto bi = train_ngram(corpus, 2);
  const std::vector<std::string> a{"a"};
  CHECK(bi.prob(a, "b") == doctest::Approx(0.75).epsilon(1e-12));
  CHECK(bi.prob(a, "a") == doctest::Approx(0.25).epsilon(1e-12));

  CHECK(test::code_of([] { train_ngram({}, 2); }) == ErrorCode::kPrecondition);
  CHECK(test::code_of([&] { train_ngram(corpus, 0); }) == ErrorCode::kPrecondition);
}

TEST_CASE("n-gram probabilities agree with a brute-force count") {
  std::mt19937_64 rng(11);
  const std::vector<std::string> words{"the", "cat", "sat", "on", "mat", "."};
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<TokenSequence> corpus;
    for (int s = 0; s < 5; ++s) {
      TokenSequence seq;
      const int len = 1 + static_cast<int>(rng() % 8);
      for (int i = 0; i < len; ++i) seq.tokens.push_back(words[rng() % words.size()]);
      corpus.push_back(seq);
    }
    const int order = 1 + static_cast<int>(rng() % 3);
    const double k = trial % 2 ? 1.0 : 0.5;
    const auto model = train_ngram(corpus, order, k);
    for (int q = 0; q < 30; ++q) {
      std::vector<std::string> hist;
      const int h = static_cast<int>(rng() % 4);
      for (int i = 0; i < h; ++i) hist.push_back(words[rng() % words.size()]);
      const auto& tok = words[rng() % words.size()];
      CHECK(model.prob(hist, tok) == doctest::Approx(oracle_prob(corpus, order, k, hist, tok)).epsilon(1e-12));
    }
  }
}

TEST_CASE("conditional distributions are normalized for every observed context") {
  const std::vector<TokenSequence> corpus{tokenize("the cat sat on the mat ."), tokenize("the dog sat on the cat .")};
  for (int order : {1, 2, 3}) {
    const auto model = train_ngram(corpus, order, 1.0);
    for (const auto& ctx : model.contexts()) {
      double sum = 0;
      for (const auto& w : model.vocab()) sum += model.prob(ctx, w);
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
}

TEST_CASE("perplexity") {
  SUBCASE("uniform scorer gives the vocabulary size") {
    const UniformScorer four(4);
    CHECK(std::abs(perplexity(make_sequence({"x", "y", "z"}), four) - 4.0) < 1e-12);
  }
  SUBCASE("certain token") {
    const UniformScorer one(1);
    CHECK(perplexity(make_sequence({"x"}), one) == 1.0);
  }
  SUBCASE("log-space equals the direct product") {
    std::mt19937_64 rng(5);
    const std::vector<TokenSequence> corpus{tokenize("a b c a b d a c c b"), tokenize("d d a b")};
    const auto model = train_ngram(corpus, 2);
    for (int t = 0; t < 200; ++t) {
      TokenSequence s;
      const int len = 1 + static_cast<int>(rng() % 10);
      for (int i = 0; i < len; ++i) s.tokens.push_back(std::string(1, static_cast<char>('a' + rng() % 5)));
      CHECK(std::abs(perplexity(s, model) - direct_perplexity(s, model)) < 1e-9);
    }
  }
  SUBCASE("lower-probability tokens never lower perplexity") {
    const std::vector<TokenSequence> corpus{tokenize("a a a a b b c")};
    const auto model = train_ngram(corpus, 1);
    const auto base = make_sequence({"a", "b", "a"});
    auto worse = base;
    worse.tokens[1] = "c";
    CHECK(model.prob({}, "c") < model.prob({}, "b"));
    CHECK(perplexity(worse, model) >= perplexity(base, model));
    worse.tokens[0] = "zzz";  // out of vocabulary: smallest mass of all
    CHECK(perplexity(worse, model) >= perplexity(base, model));
  }
  SUBCASE("empty sequence") {
    CHECK(test::code_of([] { perplexity({}, UniformScorer(3)); }) == ErrorCode::kPrecondition);
  }
}

TEST_CASE("serialized n-gram models score identically") {
  const std::vector<TokenSequence> corpus{tokenize("a b c a b"), tokenize("c c b a")};
  const auto model = train_ngram(corpus, 3, 0.5);
  const auto back = NgramScorer::from_json(nlohmann::json::parse(model.to_json().dump()));
  const auto s = tokenize("a b c c a x");
  CHECK(perplexity(s, back) == perplexity(s, model));
}

TEST_CASE("tokenize") {
  CHECK(tokenize("A cat, sitting.").tokens == std::vector<std::string>{"A", "cat", ",", "sitting", "."});
  CHECK(tokenize("红色 car").tokens == std::vector<std::string>{"红", "色", "car"});
  CHECK(tokenize("  ").size() == 0);
  TokenizerConfig lower;
  lower.lowercase = true;
  CHECK(tokenize("Big Dog", lower).tokens == std::vector<std::string>{"big", "dog"});
}

TEST_CASE("filter_by_perplexity") {
  CHECK(ids(filter_by_perplexity(scored({1, 2, 3, 4, 5}), 0.2)) == std::vector<std::string>{"a"});
  CHECK(filter_by_perplexity(scored({1, 2, 3, 4, 5}), 1.0).size() == 5);
  // Tie at score 2 between "b" and "c": the smaller id wins.
  CHECK(ids(filter_by_perplexity(scored({1, 2, 2, 9, 9}), 0.4)) == std::vector<std::string>{"a", "b"});
  // Original order is restored.
  CHECK(ids(filter_by_perplexity(scored({5, 1, 4, 2, 3}), 0.6)) == std::vector<std::string>{"b", "d", "e"});

  CHECK(keep_count(10, 0.2) == 2);
  CHECK(keep_count(7, 0.2) == 2);
  CHECK(keep_count(1, 0.01) == 1);
  CHECK(keep_count(0, 0.5) == 0);

  auto unscored = scored({1, 2});
  unscored[1].perplexity.reset();
  CHECK(test::code_of([&] { filter_by_perplexity(unscored, 0.5); }) == ErrorCode::kPrecondition);
  CHECK(test::code_of([] { filter_by_perplexity(scored({1}), 0.0); }) == ErrorCode::kPrecondition);
  CHECK(test::code_of([] { filter_by_perplexity(scored({1}), 1.5); }) == ErrorCode::kPrecondition);
}

TEST_CASE("score_records attaches perplexity from the chosen caption") {
  std::vector<CaptionRecord> recs{{"r1", "i1", "a b"}, {"r2", "i2", "b b"}};
  recs[1].fused_caption = "a a a";
  const auto model = train_ngram(std::vector<TokenSequence>{tokenize("a a a b")}, 1);
  const auto out = score_records(recs, model);
  REQUIRE(out.size() == 2);
  CHECK(*out[0].perplexity == doctest::Approx(perplexity(tokenize("a b"), model)));
  CHECK(*out[1].perplexity == doctest::Approx(perplexity(tokenize("a a a"), model)));
  const auto orig = score_records(recs, model, {}, CaptionSource::kOriginal);
  CHECK(*orig[1].perplexity == doctest::Approx(perplexity(tokenize("b b"), model)));
}
