#include "points/packer.hpp"

#include <cmath>
#include <numeric>
#include <random>

#include "test_support.hpp"

using namespace points;
using namespace points::packer;

namespace {

std::vector<PackEntry> entries(const std::vector<std::size_t>& counts) {
  std::vector<PackEntry> out;
  for (std::size_t i = 0; i < counts.size(); ++i) out.push_back({"img" + std::to_string(i), counts[i]});
  return out;
}

std::vector<std::vector<std::size_t>> shape_of(const std::vector<PackedSequence>& plan) {
  std::vector<std::vector<std::size_t>> out;
  for (const auto& s : plan) {
    out.emplace_back();
    for (const auto& e : s.entries) out.back().push_back(e.token_count);
  }
  return out;
}

// Scalar single-image attention written out loop by loop, sharing nothing
// with the library except the projection matrices.
Eigen::MatrixXd naive_attention(const Eigen::MatrixXd& x, const AttentionWeights& w) {
  const auto n = x.rows();
  const auto dim = x.cols();
  const auto hd = dim / w.heads;
  Eigen::MatrixXd q = x * w.wq, k = x * w.wk, v = x * w.wv;
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(n, dim);
  for (int h = 0; h < w.heads; ++h) {
    for (Eigen::Index i = 0; i < n; ++i) {
      std::vector<double> s(static_cast<std::size_t>(n));
      for (Eigen::Index j = 0; j < n; ++j) {
        double dot = 0;
        for (Eigen::Index c = 0; c < hd; ++c) dot += q(i, h * hd + c) * k(j, h * hd + c);
        s[static_cast<std::size_t>(j)] = dot / std::sqrt(static_cast<double>(hd));
      }
      double total = 0;
      for (auto& e : s) total += (e = std::exp(e));
      for (Eigen::Index j = 0; j < n; ++j) {
        for (Eigen::Index c = 0; c < hd; ++c) out(i, h * hd + c) += s[static_cast<std::size_t>(j)] / total * v(j, h * hd + c);
      }
    }
  }
  return out;
}

Eigen::MatrixXd random_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
  return m;
}

}  // namespace

TEST_CASE("patch_count") {
  CHECK(patch_count({28, 28, 14, 1}) == 4);
  CHECK(patch_count({224, 224, 14, 2}) == 64);
  CHECK(patch_count({30, 30, 14, 1}) == 4);
  CHECK(patch_count({5, 5, 14, 2}) == 1);  // never below one unit
  CHECK(patch_count({42, 28, 14, 1}) == 6);
  CHECK(round_to_unit(35, 14) == 42);  // 2.5 units: halves round up
  CHECK(round_to_unit(34, 14) == 28);
  CHECK(test::code_of([] { patch_count({0, 10, 14, 2}); }) == ErrorCode::kPrecondition);
  CHECK(test::code_of([] { patch_count({10, -1, 14, 2}); }) == ErrorCode::kPrecondition);
}

TEST_CASE("pack follows the greedy rule") {
  const auto a = pack(entries({4, 4, 4}), 8);
  CHECK(shape_of(a) == std::vector<std::vector<std::size_t>>{{4, 4}, {4}});
  CHECK(a[0].boundaries == std::vector<std::size_t>{0, 4, 8});
  CHECK(a[1].boundaries == std::vector<std::size_t>{0, 4});
  CHECK(shape_of(pack(entries({3, 5, 2}), 8)) == std::vector<std::vector<std::size_t>>{{3, 5}, {2}});
  CHECK(pack(entries({}), 8).empty());

  const auto msg = test::message_of([] { pack(entries({1, 10}), 8); });
  CHECK(msg.find("img1") != std::string::npos);
  CHECK(test::code_of([] { pack(entries({1, 10}), 8); }) == ErrorCode::kOversized);
  CHECK(test::code_of([] { pack(entries({0}), 8); }) == ErrorCode::kPrecondition);
}

TEST_CASE("pack properties over random inputs") {
  std::mt19937_64 rng(1234);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t capacity = 1 + rng() % 64;
    std::vector<std::size_t> counts(rng() % 30);
    for (auto& c : counts) c = 1 + rng() % capacity;
    const auto in = entries(counts);
    const auto plan = pack(in, capacity);

    std::size_t total = 0;
    std::vector<PackEntry> flat;
    for (std::size_t s = 0; s < plan.size(); ++s) {
      CHECK_NOTHROW(plan[s].check());
      total += plan[s].total;
      flat.insert(flat.end(), plan[s].entries.begin(), plan[s].entries.end());
      // Greedy: the first image of the next sequence did not fit here.
      if (s + 1 < plan.size()) CHECK(plan[s].total + plan[s + 1].entries.front().token_count > capacity);
      const auto mask = block_mask(plan[s]);
      CHECK((mask == mask.transpose()).all());
      for (std::size_t k = 0; k < plan[s].entries.size(); ++k) {
        for (std::size_t t = plan[s].boundaries[k]; t < plan[s].boundaries[k + 1]; ++t) {
          const auto row = static_cast<Eigen::Index>(t);
          CHECK(static_cast<std::size_t>(mask.row(row).count()) == plan[s].entries[k].token_count);
        }
      }
    }
    CHECK(flat == in);
    CHECK(total == std::accumulate(counts.begin(), counts.end(), std::size_t{0}));
  }
}

TEST_CASE("PackedSequence::check catches broken bookkeeping") {
  auto seq = pack(entries({2, 3}), 8)[0];
  auto bad = seq;
  bad.boundaries[1] = 3;
  CHECK(test::code_of([&] { bad.check(); }) == ErrorCode::kInvariant);
  bad = seq;
  bad.total = 4;
  CHECK(test::code_of([&] { bad.check(); }) == ErrorCode::kInvariant);
  bad = seq;
  bad.capacity = 4;
  CHECK(test::code_of([&] { bad.check(); }) == ErrorCode::kInvariant);
  bad = seq;
  bad.boundaries.pop_back();
  CHECK(test::code_of([&] { bad.check(); }) == ErrorCode::kInvariant);
}

TEST_CASE("block_mask") {
  const auto two = pack(entries({2, 2}), 8)[0];
  Mask expected = Mask::Constant(4, 4, false);
  expected.block(0, 0, 2, 2).setConstant(true);
  expected.block(2, 2, 2, 2).setConstant(true);
  CHECK((block_mask(two) == expected).all());
  CHECK(block_mask(pack(entries({5}), 8)[0]).all());
  const auto ones = block_mask(pack(entries({1, 1, 1}), 8)[0]);
  CHECK((ones == Mask(Eigen::MatrixXd::Identity(3, 3).cast<bool>())).all());
}

TEST_CASE("attention agrees with a scalar oracle") {
  std::mt19937_64 rng(3);
  for (int heads : {1, 2, 4}) {
    const auto w = AttentionWeights::random(8, heads, 17);
    const auto x = random_matrix(5, 8, rng);
    CHECK((full_attention(x, w) - naive_attention(x, w)).cwiseAbs().maxCoeff() < 1e-12);
  }
  CHECK(test::code_of([] { AttentionWeights::random(6, 4, 0); }) == ErrorCode::kPrecondition);
}

TEST_CASE("masked rows are normalized and masked positions contribute nothing") {
  // With x * wv = I the output rows are the attention weights themselves.
  AttentionWeights w = AttentionWeights::random(6, 1, 2);
  std::mt19937_64 rng(8);
  const auto seq = pack(entries({2, 4}), 6)[0];
  Eigen::MatrixXd x = Eigen::MatrixXd::Identity(6, 6) + 0.1 * random_matrix(6, 6, rng);
  w.wv = x.inverse();
  const auto out = masked_attention(x, block_mask(seq), w);
  for (Eigen::Index i = 0; i < 6; ++i) {
    CHECK(out.row(i).sum() == doctest::Approx(1.0).epsilon(1e-9));
    const bool first = i < 2;
    for (Eigen::Index j = 0; j < 6; ++j) {
      if (first != (j < 2)) CHECK(std::abs(out(i, j)) < 1e-12);
    }
  }
}

TEST_CASE("attention_equiv_check") {
  const auto w = AttentionWeights::random(8, 1, 42);
  std::mt19937_64 rng(42);

  SUBCASE("two images") {
    const auto seq = pack(entries({4, 6}), 64)[0];
    const std::vector<Eigen::MatrixXd> emb{random_matrix(4, 8, rng), random_matrix(6, 8, rng)};
    CHECK(attention_equiv_check(emb, seq, w) < 1e-6);

    Mask corrupt = block_mask(seq);
    corrupt(0, 9) = true;
    CHECK(attention_equiv_check(emb, seq, w, &corrupt) > 1e-3);
  }
  SUBCASE("one image") {
    const auto seq = pack(entries({7}), 64)[0];
    const std::vector<Eigen::MatrixXd> emb{random_matrix(7, 8, rng)};
    CHECK(attention_equiv_check(emb, seq, w) < 1e-12);
  }
  SUBCASE("shuffled packings leave each image's output unchanged") {
    const std::vector<std::size_t> counts{3, 9, 1, 5};
    std::vector<Eigen::MatrixXd> emb;
    for (auto c : counts) emb.push_back(random_matrix(static_cast<Eigen::Index>(c), 8, rng));
    std::vector<std::size_t> order{0, 1, 2, 3};
    for (int t = 0; t < 6; ++t) {
      std::shuffle(order.begin(), order.end(), rng);
      std::vector<PackEntry> in;
      std::vector<Eigen::MatrixXd> e;
      for (auto o : order) {
        in.push_back({"img" + std::to_string(o), counts[o]});
        e.push_back(emb[o]);
      }
      CHECK(attention_equiv_check(e, pack(in, 64)[0], w) < 1e-6);
    }
  }
  SUBCASE("shape errors") {
    const auto seq = pack(entries({4, 6}), 64)[0];
    const std::vector<Eigen::MatrixXd> one{random_matrix(4, 8, rng)};
    CHECK(test::code_of([&] { attention_equiv_check(one, seq, w); }) == ErrorCode::kShapeMismatch);
    const std::vector<Eigen::MatrixXd> wrong{random_matrix(4, 8, rng), random_matrix(5, 8, rng)};
    const auto msg = test::message_of([&] { attention_equiv_check(wrong, seq, w); });
    CHECK(msg.find("img1") != std::string::npos);
  }
}

TEST_CASE("plan json") {
  const auto plan = pack(entries({3, 5, 2}), 8);
  const auto j = plan_to_json(plan);
  REQUIRE(j["sequences"].size() == 2);
  CHECK(j["sequences"][0]["boundaries"] == nlohmann::json::array({0, 3, 8}));
  CHECK(j["sequences"][1]["entries"][0]["image_id"] == "img2");
}
