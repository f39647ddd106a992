#include "points/pipeline.hpp"

#include <regex>

#include "e2e_fixture.hpp"
#include "test_support.hpp"

using namespace points;
using namespace points::pipeline;
using points::test::TempDir;

namespace {

// Row `label` of the training-configuration table: {pretrain, instruct}.
std::pair<std::string, std::string> table_row(const std::string& label) {
  const auto text = read_file(test::fixtures().parent_path().parent_path() / "paper.md");
  const std::regex row(label + R"(\s*&\s*([^&]+?)\s*&\s*(.+?)\s*\\\\)");
  std::smatch m;
  REQUIRE(std::regex_search(text, m, row));
  return {m[1].str(), m[2].str()};
}

}  // namespace

TEST_CASE("config validation") {
  TempDir dir;
  const auto good = test::e2e_config(test::fixtures(), dir / "out", dir / "cache");
  CHECK_NOTHROW(parse_config(good, dir.path()));

  auto missing_seed = good;
  missing_seed["seeds"].erase("template");
  CHECK(test::message_of([&] { parse_config(missing_seed, dir.path()); }).find("seeds.template") !=
        std::string::npos);

  auto missing_path = good;
  missing_path["build"]["translate"] = {"nowhere.manifest.json"};
  CHECK(test::code_of([&] { parse_config(missing_path, dir.path()); }) == ErrorCode::kValidation);
  CHECK(test::message_of([&] { parse_config(missing_path, dir.path()); }).find("nowhere.manifest.json") !=
        std::string::npos);

  auto no_root = good;
  no_root.erase("output_root");
  CHECK(test::code_of([&] { parse_config(no_root, dir.path()); }) == ErrorCode::kValidation);

  auto bad_fraction = good;
  bad_fraction["ppl"]["fraction"] = 0.0;
  CHECK_THROWS_AS(parse_config(bad_fraction, dir.path()), Error);

  CHECK(test::code_of([&] { load_config(dir / "absent.json"); }) == ErrorCode::kValidation);
  write_file_atomic(dir / "broken.json", "{");
  CHECK(test::code_of([&] { load_config(dir / "broken.json"); }) == ErrorCode::kValidation);

  // Relative paths resolve against the config's directory; clients may be files.
  auto rel = good;
  rel["output_root"] = "out";
  rel["clients"]["vlm"] = (test::fixtures() / "e2e/vlm.json").string();
  write_file_atomic(dir / "pipeline.json", rel.dump());
  const auto loaded = load_config(dir / "pipeline.json");
  CHECK(loaded.output_root == (dir / "out").lexically_normal());
  CHECK(loaded.clients.at("vlm")["model_id"] == "stub-vlm");
  CHECK(loaded.config_hash().size() == 64);

  CHECK(test::code_of([] { parse_stage("train"); }) == ErrorCode::kUnknownStage);
}

TEST_CASE("end-to-end run over stub backends") {
  TempDir dir;
  const auto config = parse_config(test::e2e_config(test::fixtures(), dir / "out", dir / "cache"), dir.path());
  const auto first = run_pipeline(config);
  REQUIRE(first.ok);
  REQUIRE(first.stages.size() == 6);
  for (const auto& s : first.stages) CHECK(s.status == "ok");
  CHECK(first.stages[0].records_out == 50);
  CHECK(first.stages[1].records_out == 10);  // ceil(0.2 * 50)
  CHECK(first.stages[3].records_in == 60);
  CHECK(first.stages[0].backend_calls == 100);

  const auto rendered = split_lines(read_file(dir / "out/template/rendered.jsonl"));
  CHECK(rendered.size() == 10);
  const auto plan = nlohmann::json::parse(read_file(dir / "out/pack/plan.json"));
  std::size_t packed = 0;
  for (const auto& s : plan["sequences"]) packed += s["entries"].size();
  CHECK(packed == 10);
  const auto summary = nlohmann::json::parse(read_file(dir / "out/summary.json"));
  CHECK(summary["config_hash"] == config.config_hash());

  auto before = test::tree_bytes(dir / "out");
  const auto second = run_pipeline(config);
  REQUIRE(second.ok);
  auto after = test::tree_bytes(dir / "out");
  before.erase("summary.json");
  after.erase("summary.json");
  CHECK(before == after);
  for (const auto& s : second.stages) CHECK(s.backend_calls == 0);
  CHECK(second.stages[0].cache_hits == 100);

  SUBCASE("a suffix of the chain reruns on its own") {
    const auto tail = run_pipeline(config, {Stage::kPack, Stage::kTemplate, Stage::kPack});
    REQUIRE(tail.stages.size() == 2);
    CHECK(tail.stages[0].stage == "template");
    CHECK(test::tree_bytes(dir / "out").at("pack/plan.json") == before.at("pack/plan.json"));
  }
}

TEST_CASE("a failing stage stops the run and is named") {
  TempDir dir;
  auto doc = test::e2e_config(test::fixtures(), dir / "out", dir / "cache");
  const auto config = parse_config(doc, dir.path());
  const auto res = run_pipeline(config, {Stage::kTemplate, Stage::kPack});
  CHECK_FALSE(res.ok);
  REQUIRE(res.stages.size() == 2);
  CHECK(res.stages[0].status == "failed");
  CHECK(res.stages[0].error.find("ppl") != std::string::npos);
  CHECK(res.stages[1].status == "skipped");
  const auto summary = nlohmann::json::parse(read_file(dir / "out/summary.json"));
  CHECK(summary["ok"] == false);
  CHECK(summary["stages"][0]["stage"] == "template");

  doc["packer"]["capacity"] = 8;
  const auto tiny = parse_config(doc, dir.path());
  const auto packed = run_pipeline(tiny, {Stage::kCapfuse, Stage::kPpl, Stage::kPack});
  CHECK_FALSE(packed.ok);
  CHECK(packed.stages[1].status == "ok");
  CHECK(packed.stages[2].status == "failed");
  CHECK(packed.stages[2].error.find("oversized") != std::string::npos);
}

TEST_CASE("image size files") {
  TempDir dir;
  write_file_atomic(dir / "s.txt", "# id w h\nimg1 640 480\n\nimg2 28 28  # tiny\n");
  const auto sizes = read_image_sizes(dir / "s.txt");
  CHECK(sizes.size() == 2);
  CHECK(sizes.at("img1") == std::pair<long, long>{640, 480});
  write_file_atomic(dir / "bad.txt", "img1 640\n");
  CHECK(test::code_of([&] { read_image_sizes(dir / "bad.txt"); }) == ErrorCode::kParse);
}

TEST_CASE("training plans carry the published hyperparameters") {
  const auto pre = emit_training_plan("pretrain");
  const auto sft = emit_training_plan("sft");

  const auto lr = table_row("Learning Rate");
  CHECK(pre.learning_rate == std::stod(lr.first));
  CHECK(sft.learning_rate == std::stod(lr.second));
  const auto wd = table_row("Weight Decay");
  CHECK(pre.weight_decay == std::stod(wd.first));
  CHECK(sft.weight_decay == std::stod(wd.second));
  const auto bs = table_row("Batch Size");
  CHECK(pre.batch_size == std::stoi(bs.first));
  CHECK(sft.batch_size == std::stoi(bs.second));
  const auto ctx = table_row("Context Length");
  CHECK(pre.context_length == std::stoul(ctx.first));
  CHECK(sft.context_length == std::stoul(ctx.second));
  const auto clip = table_row("Gradient Clip");
  CHECK(pre.gradient_clip == std::stod(clip.first));
  CHECK(sft.gradient_clip == std::stod(clip.second));
  const auto sched = table_row("lr Scheduler");
  CHECK(sched.first == "Cosine");
  CHECK(pre.scheduler == "cosine");
  const auto tokens = table_row("Training Tokens");
  CHECK(tokens.first == "$\\sim$2.1B");
  CHECK(pre.token_budget == "~2.1B");
  CHECK(sft.token_budget == "~2.3B");
  CHECK(pre.trainable == std::vector<std::string>{"projector"});
  CHECK(sft.trainable == std::vector<std::string>{"projector", "llm"});
  CHECK(emit_training_plan("instruction_tune").to_json() == sft.to_json());
  CHECK(pre.to_json()["learning_rate"] == 2e-4);

  CHECK(test::code_of([] { emit_training_plan("stage3"); }) == ErrorCode::kUnknownStage);
  auto bad = pre;
  bad.trainable.push_back("vision_encoder");
  CHECK(test::code_of([&] { bad.validate(); }) == ErrorCode::kInvariant);
  bad = sft;
  bad.trainable = {"projector"};
  CHECK(test::code_of([&] { bad.validate(); }) == ErrorCode::kInvariant);
  CHECK(test::code_of([&] { pre.validate(2048); }) == ErrorCode::kInvariant);
}
