#include "points/dataset_builder.hpp"

#include "points/review.hpp"
#include "test_support.hpp"

using namespace points;
using namespace points::builder;
using corpus::Language;
using corpus::Provenance;
using corpus::Role;
using points::test::TempDir;

namespace {

std::shared_ptr<model::StubBackend> prefixer() {
  return std::make_shared<model::StubBackend>([](const model::ChatRequest& r) { return "[zh]" + r.last_user_content(); });
}

}  // namespace

TEST_CASE("translate_samples") {
  model::ModelClient llm(prefixer(), test::fast_config());
  const std::vector<ConversationSample> one{test::qa_sample("s1", "What color?", "Red")};

  SUBCASE("full scope") {
    const auto r = translate_samples(one, llm, Language::kZh, TranslateScope::kFull);
    REQUIRE(r.samples.size() == 1);
    CHECK(r.samples[0].turns[0].content == "[zh]What color?");
    CHECK(r.samples[0].turns[1].content == "[zh]Red");
    CHECK(r.samples[0].language == Language::kZh);
    CHECK(r.samples[0].provenance == Provenance::kTranslated);
  }
  SUBCASE("questions only") {
    const auto r = translate_samples(one, llm, Language::kZh, TranslateScope::kQuestionsOnly);
    CHECK(r.samples[0].turns[0].content == "[zh]What color?");
    CHECK(r.samples[0].turns[1].content == "Red");
  }
  SUBCASE("system turns are never translated") {
    auto s = one[0];
    s.turns.insert(s.turns.begin(), {Role::kSystem, "Be brief."});
    const std::vector<ConversationSample> in{s};
    const auto r = translate_samples(in, llm, Language::kZh, TranslateScope::kFull);
    CHECK(r.samples[0].turns[0].content == "Be brief.");
  }
  SUBCASE("already in the target language") {
    auto zh = one[0];
    zh.language = Language::kZh;
    const std::vector<ConversationSample> in{zh};
    const auto r = translate_samples(in, llm, Language::kZh, TranslateScope::kFull);
    CHECK(r.samples[0] == zh);
    CHECK(r.notices.size() == 1);
  }
  SUBCASE("backend failure skips the sample") {
    model::ModelClient flaky(std::make_shared<model::StubBackend>([](const model::ChatRequest& r) -> std::string {
                               if (r.last_user_content() == "B?") fail(ErrorCode::kRefused, "nope");
                               return "[zh]" + r.last_user_content();
                             }),
                             test::fast_config());
    const std::vector<ConversationSample> in{test::qa_sample("a", "A?", "a"), test::qa_sample("b", "B?", "b")};
    const auto r = translate_samples(in, flaky, Language::kZh, TranslateScope::kFull);
    CHECK(r.samples.size() == 1);
    REQUIRE(r.failures.size() == 1);
    CHECK(r.failures[0].id == "b");
  }
  SUBCASE("the instruction names the language and keeps option letters") {
    const auto text = TranslationPrompt{}.render(language_name(Language::kZh));
    CHECK(text.find("Simplified Chinese") != std::string::npos);
    CHECK(text.find("option letters") != std::string::npos);
  }
}

TEST_CASE("vlm_answer_samples") {
  model::ModelClient vlm(model::StubBackend::from_json({{"backend", "stub"},
                                                        {"rules", {{{"image", "images/bad.jpg"}, {"fail", true}}}},
                                                        {"default", "A: desc of {image} for {input}"}}),
                         test::fast_config());
  auto with_q = test::qa_sample("q1", "问题?", "old answer");
  auto open = test::qa_sample("q2", "开放?", "x");
  open.turns.pop_back();
  auto bad = test::qa_sample("bad", "坏?", "x");
  auto no_image = test::qa_sample("noimg", "无图?", "x");
  no_image.image_refs.clear();

  const std::vector<ConversationSample> in{with_q, open, bad, no_image};
  const auto r = vlm_answer_samples(in, vlm);
  REQUIRE(r.samples.size() == 2);
  CHECK(r.samples[0].turns.back().content == "A: desc of images/q1.jpg for 问题?");
  CHECK(r.samples[0].turns.size() == 2);
  CHECK(r.samples[1].turns.size() == 2);
  CHECK(r.samples[1].turns.back().role == Role::kAssistant);
  CHECK(r.samples[0].provenance == Provenance::kVlmGenerated);
  REQUIRE(r.failures.size() == 2);
  CHECK(r.failures[0].id == "bad");
  CHECK(r.failures[1].id == "noimg");
  CHECK(r.failures[1].message.find("no image") != std::string::npos);
}

TEST_CASE("strategies follow the manifest assignment") {
  TempDir dir;
  model::ModelClient llm(prefixer(), test::fast_config());
  const std::vector<ConversationSample> in{test::qa_sample("s1", "Q", "A")};
  const auto vqa = corpus::write_dataset<ConversationSample>(dir.path(), "vqa", in, corpus::Strategy::kTranslate);

  const auto out = translate_manifest(vqa, llm, Language::kZh, TranslateScope::kFull, dir / "out", "vqa.zh");
  CHECK(out.manifest.strategy == corpus::Strategy::kTranslate);
  CHECK(corpus::load_manifest(dir / "out/vqa.zh.manifest.json").count == 1);

  CHECK(test::code_of([&] {
          translate_manifest(vqa, llm, Language::kZh, TranslateScope::kQuestionsOnly, dir / "out", "x");
        }) == ErrorCode::kPrecondition);
  CHECK(test::code_of([&] { vlm_answer_manifest(vqa, llm, dir / "out", "x"); }) == ErrorCode::kPrecondition);
  CHECK(strategy_for(TranslateScope::kQuestionsOnly) == corpus::Strategy::kQuestionTranslateVlm);
}

TEST_CASE("build_ocr_tasks") {
  model::ModelClient vlm(model::StubBackend::from_json({{"backend", "stub"}, {"default", "文字 {image}"}}),
                         test::fast_config());
  const std::vector<std::string> images{"https://x/1.png", "https://x/2.png"};

  SUBCASE("single-question pool, queued for review") {
    review::ReviewStore store;
    const auto r = build_ocr_tasks(images, OcrPromptPool{{"请识别图中的所有文字。"}}, vlm, 1, &store, "ocr");
    REQUIRE(r.tasks.size() == 2);
    for (const auto& t : r.tasks) {
      CHECK(t.question == "请识别图中的所有文字。");
      CHECK(t.review_status == OcrTask::ReviewStatus::kQueued);
      CHECK(t.vlm_answer == "文字 " + t.image_ref);
    }
    CHECK(r.enqueue.enqueued == 2);
    CHECK(store.stats("ocr").pending == 2);
  }
  SUBCASE("same seed, same questions") {
    std::vector<std::string> many;
    for (int i = 0; i < 40; ++i) many.push_back("img" + std::to_string(i));
    const auto pool = OcrPromptPool::defaults();
    const auto a = build_ocr_tasks(many, pool, vlm, 42, nullptr, "ocr");
    const auto b = build_ocr_tasks(many, pool, vlm, 42, nullptr, "ocr");
    const auto c = build_ocr_tasks(many, pool, vlm, 43, nullptr, "ocr");
    bool differs = false;
    for (std::size_t i = 0; i < many.size(); ++i) {
      CHECK(a.tasks[i].question == b.tasks[i].question);
      CHECK(a.tasks[i].id == ocr_task_id(many[i]));
      differs = differs || a.tasks[i].question != c.tasks[i].question;
      CHECK(a.tasks[i].review_status == OcrTask::ReviewStatus::kUnreviewed);
    }
    CHECK(differs);
  }
  SUBCASE("empty pool") {
    CHECK(test::code_of([&] { build_ocr_tasks(images, OcrPromptPool{}, vlm, 1, nullptr, "ocr"); }) ==
          ErrorCode::kPrecondition);
  }
  SUBCASE("backend errors are reported per task and not queued") {
    model::ModelClient half(model::StubBackend::from_json(
                                {{"backend", "stub"},
                                 {"rules", {{{"image", "https://x/2.png"}, {"fail", true}}}},
                                 {"default", "ok"}}),
                            test::fast_config());
    review::ReviewStore store;
    const auto r = build_ocr_tasks(images, OcrPromptPool{{"q"}}, half, 1, &store, "ocr");
    CHECK(r.failures.size() == 1);
    CHECK(r.enqueue.enqueued == 1);
    CHECK(r.tasks[1].review_status == OcrTask::ReviewStatus::kUnreviewed);
  }
}
