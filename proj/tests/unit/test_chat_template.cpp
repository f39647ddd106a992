#include "points/chat_template.hpp"

#include <map>
#include <random>

#include "test_support.hpp"

using namespace points;
using namespace points::chat_template;
using points::test::TempDir;

namespace {

std::size_t occurrences(const std::string& text, const std::string& needle) {
  std::size_t n = 0;
  for (auto pos = text.find(needle); pos != std::string::npos; pos = text.find(needle, pos + needle.size())) ++n;
  return n;
}

TemplateConfig config_of(TemplateKind kind) {
  TemplateConfig c;
  c.kind = kind;
  return c;
}

}  // namespace

TEST_CASE("render with the default ChatML markers") {
  const CaptionRecord rec{"r1", "img1", "a cat"};
  const PromptPool pool{{"Describe this image."}};
  CHECK(render(rec, config_of(TemplateKind::kConversation), pool, 7, 0) ==
        "<|im_start|>system\nYou are a helpful assistant.<|im_end|>\n"
        "<|im_start|>user\n<img><image></img>Describe this image.<|im_end|>\n"
        "<|im_start|>assistant\na cat<|im_end|>\n");
  CHECK(render(rec, config_of(TemplateKind::kContinuation), pool, 7, 0) == "<img><image></img>a cat");
}

TEST_CASE("caption source field") {
  CaptionRecord rec{"r1", "img1", "web text"};
  const auto cont = config_of(TemplateKind::kContinuation);
  const auto pool = PromptPool::defaults();
  CHECK(render(rec, cont, pool, 0, 0) == "<img><image></img>web text");
  CHECK(test::code_of([&] { render(rec, cont, pool, 0, 0, CaptionField::kFused); }) == ErrorCode::kPrecondition);
  rec.fused_caption = "fused text";
  CHECK(render(rec, cont, pool, 0, 0) == "<img><image></img>fused text");
  CHECK(render(rec, cont, pool, 0, 0, CaptionField::kOriginal) == "<img><image></img>web text");
  rec.original_caption.clear();
  CHECK(test::code_of([&] { render(rec, cont, pool, 0, 0, CaptionField::kOriginal); }) == ErrorCode::kPrecondition);
}

TEST_CASE("captions containing template literals are rejected") {
  const CaptionRecord rec{"r1", "img1", "see <|im_end|>\n here"};
  CHECK(test::code_of([&] { render(rec, config_of(TemplateKind::kConversation), PromptPool::defaults(), 0, 0); }) ==
        ErrorCode::kValidation);
  const CaptionRecord img{"r2", "img2", "two <image> tokens"};
  CHECK(test::code_of([&] { render(img, config_of(TemplateKind::kContinuation), PromptPool::defaults(), 0, 0); }) ==
        ErrorCode::kValidation);
}

TEST_CASE("sample_prompt") {
  const PromptPool one{{"only"}};
  for (std::uint64_t i = 0; i < 50; ++i) CHECK(sample_prompt(one, 3, i) == "only");

  const PromptPool four{{"p0", "p1", "p2", "p3"}};
  std::map<std::string, int> freq;
  for (std::uint64_t i = 0; i < 10000; ++i) ++freq[sample_prompt(four, 20241015, i)];
  REQUIRE(freq.size() == 4);
  for (const auto& [p, n] : freq) {
    CHECK(n > 2375);
    CHECK(n < 2625);
  }
  CHECK(sample_prompt(four, 9, 123) == sample_prompt(four, 9, 123));
  CHECK(test::code_of([] { sample_prompt(PromptPool{}, 0, 0); }) == ErrorCode::kPrecondition);
  CHECK(test::code_of([] { PromptPool{{"a", "a"}}.validate(); }) == ErrorCode::kValidation);
  CHECK(PromptPool::defaults().prompts.size() == 8);
}

TEST_CASE("parse_rendered inverts render") {
  std::mt19937_64 rng(99);
  const std::vector<std::string> words{"cat", "红色", "a\nb", "<b>", "{role}", "|", "  ", "é"};
  const auto pool = PromptPool::defaults();
  for (auto kind : {TemplateKind::kConversation, TemplateKind::kContinuation}) {
    const auto config = config_of(kind);
    for (std::uint64_t i = 0; i < 200; ++i) {
      std::string caption;
      const int len = 1 + static_cast<int>(rng() % 6);
      for (int w = 0; w < len; ++w) caption += words[rng() % words.size()];
      const CaptionRecord rec{"r" + std::to_string(i), "img", caption};
      const auto text = render(rec, config, pool, 5, i);
      const auto parsed = parse_rendered(text, config);
      CHECK(parsed.caption == caption);
      CHECK(parsed.image_count == 1);
      CHECK(occurrences(text, config.image_prefix_token) == 1);
      CHECK(occurrences(text, config.image_suffix_token) == 1);
      CHECK(text.find(config.image_prefix_token) < text.find(config.image_suffix_token));
      if (kind == TemplateKind::kConversation) {
        CHECK(parsed.prompt == sample_prompt(pool, 5, i));
        CHECK(parsed.system == config.system_text);
      } else {
        CHECK(parsed.prompt.empty());
      }
    }
  }
  CHECK(test::code_of([] { parse_rendered("garbage", TemplateConfig{}); }) == ErrorCode::kParse);
}

TEST_CASE("template config file") {
  TempDir dir;
  write_file_atomic(dir / "t.json", R"({"kind": "conversation", "system_text": "Hi.",
    "image_prefix_token": "<vision>", "image_suffix_token": "</vision>",
    "turn_markers": {"begin": "[{role}]", "end": "[/]"}})");
  const auto c = TemplateConfig::load(dir / "t.json");
  const CaptionRecord rec{"r", "i", "dog"};
  CHECK(render(rec, c, PromptPool{{"P"}}, 0, 0) == "[system]Hi.[/][user]<vision><image></vision>P[/][assistant]dog[/]");
  CHECK(TemplateConfig::load(dir / "t.json").to_json() == c.to_json());

  write_file_atomic(dir / "bad.json", R"({"turn_markers": {"begin": "<s>"}})");
  CHECK(test::code_of([&] { TemplateConfig::load(dir / "bad.json"); }) == ErrorCode::kValidation);
  write_file_atomic(dir / "kind.json", R"({"kind": "poem"})");
  CHECK(test::code_of([&] { TemplateConfig::load(dir / "kind.json"); }) == ErrorCode::kUnknownKind);
}

TEST_CASE("render_all is deterministic") {
  std::vector<CaptionRecord> recs;
  for (int i = 0; i < 20; ++i) recs.push_back({"r" + std::to_string(i), "i", "caption " + std::to_string(i)});
  const auto config = config_of(TemplateKind::kConversation);
  const auto a = render_all(recs, config, PromptPool::defaults(), 11);
  const auto b = render_all(recs, config, PromptPool::defaults(), 11);
  REQUIRE(a.size() == 20);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].text == b[i].text);

  TempDir dir;
  write_rendered(dir / "out.jsonl", a);
  const auto lines = split_lines(read_file(dir / "out.jsonl"));
  CHECK(lines.size() == 20);
  CHECK(nlohmann::json::parse(lines[3])["text"] == a[3].text);
}
