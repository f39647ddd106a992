#include "points/pipeline.hpp"

#include <algorithm>
#include <sstream>

#include "points/capfusion.hpp"
#include "points/dataset_builder.hpp"
#include "points/ppl_filter.hpp"
#include "points/util.hpp"

namespace points::pipeline {

namespace fs = std::filesystem;

namespace {

constexpr std::pair<Stage, std::string_view> kStages[] = {
    {Stage::kCapfuse, "capfuse"}, {Stage::kPpl, "ppl"},           {Stage::kBuild, "build"},
    {Stage::kFilter, "filter"},   {Stage::kTemplate, "template"}, {Stage::kPack, "pack"}};

fs::path resolve(const fs::path& base, const std::string& p) {
  fs::path path = p;
  return (path.is_absolute() ? path : base / path).lexically_normal();
}

fs::path existing(const fs::path& base, const Json& value, const std::string& what) {
  auto p = resolve(base, value.get<std::string>());
  if (!fs::exists(p)) fail(ErrorCode::kValidation, what + " not found: " + p.string());
  return p;
}

std::optional<fs::path> optional_path(const fs::path& base, const Json& obj, const char* key, const std::string& what) {
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) return std::nullopt;
  return existing(base, *it, what);
}

std::vector<fs::path> path_list(const fs::path& base, const Json& obj, const char* key, const std::string& what) {
  std::vector<fs::path> out;
  for (const auto& v : obj.value(key, Json::array())) out.push_back(existing(base, v, what));
  return out;
}

// Strips ".manifest.json" for naming derived datasets.
std::string dataset_stem(const fs::path& manifest_path) {
  auto name = manifest_path.filename().string();
  constexpr std::string_view kSuffix = ".manifest.json";
  if (name.size() > kSuffix.size() && name.ends_with(kSuffix)) name.resize(name.size() - kSuffix.size());
  return name;
}

void write_outputs_list(const fs::path& path, const std::vector<fs::path>& manifests) {
  Json list = Json::array();
  for (const auto& m : manifests) list.push_back(fs::relative(m, path.parent_path()).generic_string());
  write_file_atomic(path, list.dump(2) + "\n");
}

std::vector<fs::path> read_outputs_list(const fs::path& path) {
  std::vector<fs::path> out;
  if (!fs::exists(path)) return out;
  for (const auto& v : Json::parse(read_file(path))) out.push_back(path.parent_path() / v.get<std::string>());
  return out;
}

class Clients {
 public:
  explicit Clients(const PipelineConfig& config) : config_(config) {}

  model::ModelClient& get(const std::string& role) {
    if (auto it = made_.find(role); it != made_.end()) return *it->second;
    auto doc = config_.clients.find(role);
    if (doc == config_.clients.end()) fail(ErrorCode::kValidation, "no client configured for role '" + role + "'");
    auto client = model::make_client(doc->second, config_.base_dir);
    auto& ref = *client;
    made_.emplace(role, std::move(client));
    return ref;
  }

  std::pair<std::size_t, std::size_t> totals() const {
    std::size_t calls = 0;
    std::size_t hits = 0;
    for (const auto& [_, c] : made_) {
      const auto s = c->stats();
      calls += s.backend_attempts;
      hits += s.cache_hits;
    }
    return {calls, hits};
  }

 private:
  const PipelineConfig& config_;
  std::map<std::string, std::shared_ptr<model::ModelClient>> made_;
};

corpus::DatasetManifest load_stage_manifest(const fs::path& path, std::string_view upstream) {
  if (!fs::exists(path)) {
    fail(ErrorCode::kPrecondition, "missing " + path.string() + "; run the " + std::string(upstream) + " stage first");
  }
  return corpus::load_manifest(path);
}

}  // namespace

std::string_view to_string(Stage s) {
  for (const auto& [v, n] : kStages) {
    if (v == s) return n;
  }
  return "?";
}

Stage parse_stage(std::string_view s) {
  for (const auto& [v, n] : kStages) {
    if (n == s) return v;
  }
  fail(ErrorCode::kUnknownStage, "unknown pipeline stage '" + std::string(s) + "'");
}

const std::vector<Stage>& all_stages() {
  static const std::vector<Stage> stages{Stage::kCapfuse, Stage::kPpl,      Stage::kBuild,
                                         Stage::kFilter,  Stage::kTemplate, Stage::kPack};
  return stages;
}

std::string PipelineConfig::config_hash() const { return sha256_hex(raw.dump()); }

PipelineConfig parse_config(const Json& doc, const fs::path& base_dir) {
  PipelineConfig c;
  c.base_dir = fs::absolute(base_dir);
  c.raw = doc;
  if (!doc.contains("output_root")) fail(ErrorCode::kValidation, "config needs output_root");
  c.output_root = resolve(c.base_dir, doc["output_root"].get<std::string>());

  const auto clients = doc.value("clients", Json::object());
  for (const auto& [role, v] : clients.items()) {
    c.clients[role] = v.is_string() ? Json::parse(read_file(existing(c.base_dir, v, "client config"))) : v;
  }

  const auto seeds = doc.value("seeds", Json::object());
  if (!seeds.contains("template")) fail(ErrorCode::kValidation, "seeds.template must be set explicitly");
  c.template_seed = seeds["template"].get<std::uint64_t>();

  const auto capfuse = doc.value("capfuse", Json::object());
  if (capfuse.contains("manifest")) c.caption_manifest = existing(c.base_dir, capfuse["manifest"], "caption manifest");
  c.fusion_prompts = optional_path(c.base_dir, capfuse, "prompts", "fusion prompts");

  const auto ppl = doc.value("ppl", Json::object());
  c.ppl_order = ppl.value("order", c.ppl_order);
  c.ppl_smoothing = ppl.value("smoothing", c.ppl_smoothing);
  c.ppl_fraction = ppl.value("fraction", c.ppl_fraction);
  ppl::keep_count(1, c.ppl_fraction);  // range check

  const auto build = doc.value("build", Json::object());
  c.translate_manifests = path_list(c.base_dir, build, "translate", "translate manifest");
  c.question_translate_manifests = path_list(c.base_dir, build, "question_translate_vlm", "question manifest");

  const auto filt = doc.value("filter", Json::object());
  c.filter_manifests = path_list(c.base_dir, filt, "manifests", "filter manifest");
  c.grammar_policy = filter::parse_grammar_policy(filt.value("grammar_policy", std::string("drop")));
  c.answerable_action = filter::parse_answerable_action(filt.value("answerable_action", std::string("label")));
  c.judge_prompts = optional_path(c.base_dir, filt, "prompts", "judge prompts");

  const auto tmpl = doc.value("template", Json::object());
  c.template_kind = chat_template::parse_kind(tmpl.value("kind", std::string("conversation")));
  c.template_config = optional_path(c.base_dir, tmpl, "config", "template config");
  c.prompt_pool = optional_path(c.base_dir, tmpl, "prompt_pool", "prompt pool");

  const auto pk = doc.value("packer", Json::object());
  c.image_sizes = optional_path(c.base_dir, pk, "sizes", "image sizes file");
  c.patch_size = pk.value("patch_size", c.patch_size);
  c.merge = pk.value("merge", c.merge);
  c.capacity = pk.value("capacity", c.capacity);
  return c;
}

PipelineConfig load_config(const fs::path& path) {
  if (!fs::exists(path)) fail(ErrorCode::kValidation, "config not found: " + path.string());
  Json doc;
  try {
    doc = Json::parse(read_file(path));
  } catch (const Json::parse_error& e) {
    fail(ErrorCode::kValidation, "config " + path.string() + ": " + e.what());
  }
  return parse_config(doc, fs::absolute(path).parent_path());
}

Json RunSummary::to_json() const {
  Json stages_json = Json::array();
  for (const auto& s : stages) {
    Json j{{"stage", s.stage},
           {"status", s.status},
           {"records_in", s.records_in},
           {"records_out", s.records_out},
           {"failures", s.failures},
           {"backend_calls", s.backend_calls},
           {"cache_hits", s.cache_hits}};
    if (!s.error.empty()) j["error"] = s.error;
    stages_json.push_back(std::move(j));
  }
  return {{"config_hash", config_hash}, {"ok", ok}, {"stages", stages_json}};
}

std::map<std::string, std::pair<long, long>> read_image_sizes(const fs::path& path) {
  std::map<std::string, std::pair<long, long>> out;
  for (const auto& raw : split_lines(read_file(path))) {
    const auto line = trim(raw.substr(0, raw.find('#')));
    if (line.empty()) continue;
    std::istringstream in(line);
    std::string id;
    long w = 0;
    long h = 0;
    if (!(in >> id >> w >> h)) fail(ErrorCode::kParse, "bad size line: " + raw);
    out[id] = {w, h};
  }
  return out;
}

RunSummary run_pipeline(const PipelineConfig& config, std::vector<Stage> stages) {
  std::sort(stages.begin(), stages.end());
  stages.erase(std::unique(stages.begin(), stages.end()), stages.end());

  const auto& root = config.output_root;
  fs::create_directories(root);
  Clients clients(config);
  RunSummary summary;
  summary.config_hash = config.config_hash();

  const auto fused_manifest = root / "capfuse" / "captions.fused.manifest.json";
  const auto kept_manifest = root / "ppl" / "captions.kept.manifest.json";
  const auto build_list = root / "build" / "outputs.json";
  const auto rendered_path = root / "template" / "rendered.jsonl";

  auto run_stage = [&](Stage stage, StageSummary& s) {
    switch (stage) {
      case Stage::kCapfuse: {
        if (!config.caption_manifest) fail(ErrorCode::kValidation, "capfuse.manifest is not configured");
        const auto in = corpus::load_manifest(*config.caption_manifest);
        const auto prompts =
            config.fusion_prompts ? capfusion::FusionPrompts::load(*config.fusion_prompts)
                                  : capfusion::FusionPrompts::defaults();
        auto res = capfusion::run_capfusion(in, clients.get("vlm"), clients.get("llm"), prompts, root / "capfuse",
                                            "captions.fused");
        s.records_in = res.input_count;
        s.records_out = res.manifest.count;
        s.failures = res.failures.size();
        break;
      }
      case Stage::kPpl: {
        const auto in = load_stage_manifest(fused_manifest, "capfuse");
        const auto records = corpus::read_all<corpus::CaptionRecord>(in);
        std::vector<ppl::TokenSequence> train;
        for (const auto& r : records) {
          auto seq = ppl::tokenize(ppl::caption_text(r, ppl::CaptionSource::kFusedOrOriginal));
          if (seq.size() > 0) train.push_back(std::move(seq));
        }
        const auto scorer = ppl::train_ngram(train, config.ppl_order, config.ppl_smoothing);
        write_file_atomic(root / "ppl" / "ngram.json", scorer.to_json().dump() + "\n");
        const auto scored = ppl::score_records(records, scorer);
        corpus::write_dataset<corpus::CaptionRecord>(root / "ppl", "captions.scored", scored);
        const auto kept = ppl::filter_by_perplexity(scored, config.ppl_fraction);
        corpus::write_dataset<corpus::CaptionRecord>(root / "ppl", "captions.kept", kept);
        s.records_in = records.size();
        s.records_out = kept.size();
        break;
      }
      case Stage::kBuild: {
        std::vector<fs::path> outputs;
        const auto zh = corpus::Language::kZh;
        for (const auto& path : config.translate_manifests) {
          const auto in = corpus::load_manifest(path);
          auto built = builder::translate_manifest(in, clients.get("llm"), zh, builder::TranslateScope::kFull,
                                                   root / "build", dataset_stem(path) + ".zh");
          s.records_in += in.count;
          s.records_out += built.manifest.count;
          s.failures += built.result.failures.size();
          outputs.push_back(corpus::manifest_path_for(root / "build", dataset_stem(path) + ".zh"));
        }
        for (const auto& path : config.question_translate_manifests) {
          const auto in = corpus::load_manifest(path);
          auto questions = builder::translate_manifest(in, clients.get("llm"), zh,
                                                       builder::TranslateScope::kQuestionsOnly, root / "build",
                                                       dataset_stem(path) + ".zhq");
          auto answered =
              builder::vlm_answer_manifest(questions.manifest, clients.get("vlm"), root / "build",
                                           dataset_stem(path) + ".zh_vlm");
          s.records_in += in.count;
          s.records_out += answered.manifest.count;
          s.failures += questions.result.failures.size() + answered.result.failures.size();
          outputs.push_back(corpus::manifest_path_for(root / "build", dataset_stem(path) + ".zh_vlm"));
        }
        write_outputs_list(build_list, outputs);
        break;
      }
      case Stage::kFilter: {
        auto inputs = config.filter_manifests;
        for (auto& p : read_outputs_list(build_list)) inputs.push_back(std::move(p));
        const auto prompts =
            config.judge_prompts ? filter::JudgePrompts::load(*config.judge_prompts) : filter::JudgePrompts{};
        std::vector<fs::path> outputs;
        for (const auto& path : inputs) {
          const auto in = corpus::load_manifest(path);
          const auto stem = dataset_stem(path);
          auto graded = filter::grammar_manifest(in, clients.get("judge"), config.grammar_policy, root / "filter",
                                                 stem + ".grammar", prompts);
          auto last = graded.manifest;
          auto name = stem + ".grammar";
          if (in.fixed_answers) {
            auto answered = filter::answerable_manifest(graded.manifest, clients.get("judge"),
                                                        config.answerable_action, root / "filter",
                                                        stem + ".filtered", prompts);
            last = answered.manifest;
            name = stem + ".filtered";
          }
          s.records_in += in.count;
          s.records_out += last.count;
          outputs.push_back(corpus::manifest_path_for(root / "filter", name));
        }
        write_outputs_list(root / "filter" / "outputs.json", outputs);
        break;
      }
      case Stage::kTemplate: {
        const auto in = load_stage_manifest(kept_manifest, "ppl");
        const auto records = corpus::read_all<corpus::CaptionRecord>(in);
        auto tconf = config.template_config ? chat_template::TemplateConfig::load(*config.template_config)
                                            : chat_template::TemplateConfig{};
        tconf.kind = config.template_kind;
        const auto pool =
            config.prompt_pool ? chat_template::PromptPool::load(*config.prompt_pool) : chat_template::PromptPool::defaults();
        const auto rendered = chat_template::render_all(records, tconf, pool, config.template_seed);
        chat_template::write_rendered(rendered_path, rendered);
        s.records_in = records.size();
        s.records_out = rendered.size();
        break;
      }
      case Stage::kPack: {
        if (!config.image_sizes) fail(ErrorCode::kValidation, "packer.sizes is not configured");
        const auto in = load_stage_manifest(kept_manifest, "ppl");
        const auto records = corpus::read_all<corpus::CaptionRecord>(in);
        const auto sizes = read_image_sizes(*config.image_sizes);
        std::vector<packer::PackEntry> entries;
        for (const auto& r : records) {
          auto it = sizes.find(r.image_ref);
          if (it == sizes.end()) fail(ErrorCode::kValidation, "no size for image " + r.image_ref);
          entries.push_back({r.image_ref, packer::patch_count({it->second.first, it->second.second,
                                                               config.patch_size, config.merge})});
        }
        const auto plan = packer::pack(entries, config.capacity);
        write_file_atomic(root / "pack" / "plan.json", packer::plan_to_json(plan).dump(2) + "\n");
        s.records_in = entries.size();
        s.records_out = plan.size();
        break;
      }
    }
  };

  bool halted = false;
  for (auto stage : stages) {
    StageSummary s;
    s.stage = std::string(to_string(stage));
    if (halted) {
      s.status = "skipped";
      summary.stages.push_back(std::move(s));
      continue;
    }
    const auto [calls0, hits0] = clients.totals();
    try {
      run_stage(stage, s);
      s.status = "ok";
    } catch (const std::exception& e) {
      s.status = "failed";
      s.error = e.what();
      summary.ok = false;
      halted = true;
    }
    const auto [calls1, hits1] = clients.totals();
    s.backend_calls = calls1 - calls0;
    s.cache_hits = hits1 - hits0;
    summary.stages.push_back(std::move(s));
  }
  write_file_atomic(root / "summary.json", summary.to_json().dump(2) + "\n");
  return summary;
}

TrainStage parse_train_stage(std::string_view s) {
  if (s == "pretrain") return TrainStage::kPretrain;
  if (s == "sft" || s == "instruction_tune") return TrainStage::kInstructionTune;
  fail(ErrorCode::kUnknownStage, "unknown training stage '" + std::string(s) + "'");
}

void TrainingPlan::validate(std::size_t packer_capacity) const {
  const bool has_encoder = std::find(trainable.begin(), trainable.end(), "vision_encoder") != trainable.end();
  if (has_encoder) fail(ErrorCode::kInvariant, "the vision encoder is never trainable");
  const std::vector<std::string> expected = stage == TrainStage::kPretrain
                                                ? std::vector<std::string>{"projector"}
                                                : std::vector<std::string>{"projector", "llm"};
  if (trainable != expected) fail(ErrorCode::kInvariant, "trainable modules do not match the stage");
  if (context_length != packer_capacity) {
    fail(ErrorCode::kInvariant, "context length " + std::to_string(context_length) + " != packer capacity " +
                                    std::to_string(packer_capacity));
  }
}

Json TrainingPlan::to_json() const {
  return {{"stage", stage == TrainStage::kPretrain ? "pretrain" : "instruction_tune"},
          {"trainable", trainable},
          {"batch_size", batch_size},
          {"context_length", context_length},
          {"learning_rate", learning_rate},
          {"weight_decay", weight_decay},
          {"gradient_clip", gradient_clip},
          {"scheduler", scheduler},
          {"token_budget", token_budget},
          {"token_budget_approx", token_budget_approx}};
}

TrainingPlan emit_training_plan(TrainStage stage) {
  TrainingPlan p;
  p.stage = stage;
  p.batch_size = 32;
  p.context_length = 4096;
  p.gradient_clip = 1.0;
  p.scheduler = "cosine";
  if (stage == TrainStage::kPretrain) {
    p.trainable = {"projector"};
    p.learning_rate = 2e-4;
    p.weight_decay = 0.0;
    p.token_budget = "~2.1B";
    p.token_budget_approx = 2.1e9;
  } else {
    p.trainable = {"projector", "llm"};
    p.learning_rate = 2e-5;
    p.weight_decay = 0.1;
    p.token_budget = "~2.3B";
    p.token_budget_approx = 2.3e9;
  }
  p.validate();
  return p;
}

TrainingPlan emit_training_plan(std::string_view stage) { return emit_training_plan(parse_train_stage(stage)); }

}  // namespace points::pipeline
