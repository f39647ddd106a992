// points — command-line entry point for the curation toolkit.

#include <csignal>
#include <iostream>
#include <random>

#include "CLI11.hpp"
#include "points/capfusion.hpp"
#include "points/chat_template.hpp"
#include "points/corpus.hpp"
#include "points/dataset_builder.hpp"
#include "points/instruct_filter.hpp"
#include "points/packer.hpp"
#include "points/pipeline.hpp"
#include "points/ppl_filter.hpp"
#include "points/review.hpp"
#include "points/soup.hpp"
#include "points/util.hpp"

namespace fs = std::filesystem;
using namespace points;

namespace {

review::ReviewServer* g_server = nullptr;

void on_signal(int) {
  if (g_server) g_server->stop();
}

void print_failures(const std::vector<builder::SampleIssue>& issues) {
  for (const auto& f : issues) std::cerr << "failed " << f.id << ": " << f.message << "\n";
}

void print_outcome(const filter::FilterOutcome& o) {
  std::cout << "kept " << o.kept() << " of " << o.total << " (" << o.retention() * 100.0 << "%)";
  if (!o.skipped.empty()) std::cout << ", skipped " << o.skipped.size();
  std::cout << "\n";
}

std::vector<std::string> read_list(const fs::path& path) {
  std::vector<std::string> out;
  for (const auto& line : split_lines(read_file(path))) {
    auto t = trim(line);
    if (!t.empty() && t[0] != '#') out.push_back(std::move(t));
  }
  return out;
}

// Random packed batch for `pack verify`: 1-8 images of 1-64 tokens each.
struct VerifyCase {
  std::vector<Eigen::MatrixXd> embeddings;
  packer::PackedSequence seq;
};

VerifyCase random_case(std::mt19937_64& rng, int dim) {
  std::uniform_int_distribution<int> images(1, 8);
  std::uniform_int_distribution<int> tokens(1, 64);
  std::uniform_real_distribution<double> value(-1.0, 1.0);
  VerifyCase c;
  std::vector<packer::PackEntry> entries;
  const int n = images(rng);
  for (int i = 0; i < n; ++i) {
    const int t = tokens(rng);
    entries.push_back({"img" + std::to_string(i), static_cast<std::size_t>(t)});
    Eigen::MatrixXd x(t, dim);
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      for (Eigen::Index k = 0; k < x.cols(); ++k) x(r, k) = value(rng);
    }
    c.embeddings.push_back(std::move(x));
  }
  c.seq = packer::pack(entries, 8 * 64).front();
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Caption/instruction data curation and training-preparation toolkit"};
  app.require_subcommand(1);

  // ---- corpus ----
  auto* corpus_cmd = app.add_subcommand("corpus", "Inspect dataset manifests");
  corpus_cmd->require_subcommand(1);
  std::string validate_manifest;
  auto* corpus_validate = corpus_cmd->add_subcommand("validate", "Check every record of a manifest");
  corpus_validate->add_option("manifest", validate_manifest)->required()->check(CLI::ExistingFile);
  std::vector<std::string> report_manifests;
  bool report_json = false;
  auto* corpus_report = corpus_cmd->add_subcommand("report", "Category and language distribution");
  corpus_report->add_option("manifests", report_manifests)->required()->check(CLI::ExistingFile);
  corpus_report->add_flag("--json", report_json, "Print JSON instead of a table");

  // ---- capfuse ----
  auto* capfuse_cmd = app.add_subcommand("capfuse", "Caption fusion");
  capfuse_cmd->require_subcommand(1);
  std::string cf_manifest, cf_vlm, cf_llm, cf_out, cf_prompts, cf_name = "captions.fused";
  bool cf_resume = false;
  bool cf_overwrite = false;
  auto* capfuse_run = capfuse_cmd->add_subcommand("run", "Generate VLM captions and fuse them with the originals");
  capfuse_run->add_option("--manifest", cf_manifest)->required()->check(CLI::ExistingFile);
  capfuse_run->add_option("--vlm-config", cf_vlm)->required()->check(CLI::ExistingFile);
  capfuse_run->add_option("--llm-config", cf_llm)->required()->check(CLI::ExistingFile);
  capfuse_run->add_option("--out", cf_out, "Output directory")->required();
  capfuse_run->add_option("--name", cf_name, "Output dataset name");
  capfuse_run->add_option("--prompts", cf_prompts, "Fusion prompt file")->check(CLI::ExistingFile);
  capfuse_run->add_flag("--resume", cf_resume, "Skip records already fused in the output");
  capfuse_run->add_flag("--overwrite-vlm", cf_overwrite, "Regenerate existing VLM captions");

  // ---- ppl ----
  auto* ppl_cmd = app.add_subcommand("ppl", "Perplexity scoring and filtering");
  ppl_cmd->require_subcommand(1);
  std::string ppl_manifest, ppl_scorer = "ngram", ppl_out, ppl_model, ppl_name;
  int ppl_order = 2;
  double ppl_smoothing = 1.0;
  double ppl_fraction = 0.2;
  auto* ppl_score = ppl_cmd->add_subcommand("score", "Attach a perplexity to every caption");
  ppl_score->add_option("--manifest", ppl_manifest)->required()->check(CLI::ExistingFile);
  ppl_score->add_option("--scorer", ppl_scorer)->check(CLI::IsMember({"ngram"}));
  ppl_score->add_option("--order", ppl_order)->check(CLI::PositiveNumber);
  ppl_score->add_option("--smoothing", ppl_smoothing)->check(CLI::PositiveNumber);
  ppl_score->add_option("--model", ppl_model, "Trained n-gram JSON; trained on the manifest itself when absent")
      ->check(CLI::ExistingFile);
  ppl_score->add_option("--out", ppl_out, "Output directory (default: print id and perplexity)");
  ppl_score->add_option("--name", ppl_name, "Output dataset name");
  auto* ppl_filter = ppl_cmd->add_subcommand("filter", "Keep the lowest-perplexity fraction");
  ppl_filter->add_option("--manifest", ppl_manifest)->required()->check(CLI::ExistingFile);
  ppl_filter->add_option("--fraction", ppl_fraction)->check(CLI::Range(0.0, 1.0));
  ppl_filter->add_option("--out", ppl_out)->required();
  ppl_filter->add_option("--name", ppl_name, "Output dataset name");

  // ---- build ----
  auto* build_cmd = app.add_subcommand("build", "Chinese dataset construction");
  build_cmd->require_subcommand(1);
  std::string b_manifest, b_llm, b_vlm, b_out, b_name, b_scope = "full", b_images, b_pool, b_state, b_queue = "ocr";
  std::uint64_t b_seed = 0;
  auto* build_translate = build_cmd->add_subcommand("translate", "Translate conversations into Chinese");
  build_translate->add_option("--manifest", b_manifest)->required()->check(CLI::ExistingFile);
  build_translate->add_option("--llm-config", b_llm)->required()->check(CLI::ExistingFile);
  build_translate->add_option("--scope", b_scope)->check(CLI::IsMember({"full", "questions_only"}));
  build_translate->add_option("--out", b_out)->required();
  build_translate->add_option("--name", b_name)->required();
  auto* build_vlm = build_cmd->add_subcommand("vlm-answer", "Regenerate answers with a VLM");
  build_vlm->add_option("--manifest", b_manifest)->required()->check(CLI::ExistingFile);
  build_vlm->add_option("--vlm-config", b_vlm)->required()->check(CLI::ExistingFile);
  build_vlm->add_option("--out", b_out)->required();
  build_vlm->add_option("--name", b_name)->required();
  auto* build_ocr = build_cmd->add_subcommand("ocr-collect", "Ask OCR questions and queue answers for review");
  build_ocr->add_option("--images", b_images, "File with one image reference per line")
      ->required()
      ->check(CLI::ExistingFile);
  build_ocr->add_option("--vlm-config", b_vlm)->required()->check(CLI::ExistingFile);
  build_ocr->add_option("--pool", b_pool, "OCR question pool")->check(CLI::ExistingFile);
  build_ocr->add_option("--seed", b_seed)->required();
  build_ocr->add_option("--out", b_out, "Write the tasks as JSONL")->required();
  build_ocr->add_option("--state-dir", b_state, "Review store to enqueue into");
  build_ocr->add_option("--queue", b_queue);

  // ---- filter ----
  auto* filter_cmd = app.add_subcommand("filter", "Instruction-set filters");
  filter_cmd->require_subcommand(1);
  std::string f_manifest, f_judge, f_out, f_name, f_policy = "drop", f_action = "label", f_prompts;
  auto* filter_grammar = filter_cmd->add_subcommand("grammar", "Flag samples with grammatical errors");
  auto* filter_answer = filter_cmd->add_subcommand("answerable", "Flag questions answerable without the image");
  for (auto* sub : {filter_grammar, filter_answer}) {
    sub->add_option("--manifest", f_manifest)->required()->check(CLI::ExistingFile);
    sub->add_option("--judge-config", f_judge)->required()->check(CLI::ExistingFile);
    sub->add_option("--prompts", f_prompts)->check(CLI::ExistingFile);
    sub->add_option("--out", f_out)->required();
    sub->add_option("--name", f_name)->required();
  }
  filter_grammar->add_option("--policy", f_policy)->check(CLI::IsMember({"drop", "fix"}));
  filter_answer->add_option("--action", f_action)->check(CLI::IsMember({"label", "drop"}));

  // ---- template ----
  auto* template_cmd = app.add_subcommand("template", "Chat-template rendering");
  template_cmd->require_subcommand(1);
  std::string t_manifest, t_kind = "conversation", t_out, t_config, t_pool;
  std::uint64_t t_seed = 0;
  auto* template_render = template_cmd->add_subcommand("render", "Render caption records as training text");
  template_render->add_option("--manifest", t_manifest)->required()->check(CLI::ExistingFile);
  template_render->add_option("--kind", t_kind)->check(CLI::IsMember({"conversation", "continuation"}));
  template_render->add_option("--seed", t_seed)->required();
  template_render->add_option("--out", t_out, "Output JSONL file")->required();
  template_render->add_option("--config", t_config)->check(CLI::ExistingFile);
  template_render->add_option("--prompt-pool", t_pool)->check(CLI::ExistingFile);

  // ---- pack ----
  auto* pack_cmd = app.add_subcommand("pack", "Sequence packing");
  pack_cmd->require_subcommand(1);
  std::string p_sizes, p_out;
  std::size_t p_capacity = packer::kDefaultCapacity;
  int p_patch = packer::kDefaultPatchSize;
  int p_merge = packer::kDefaultMerge;
  std::uint64_t p_seed = 0;
  int p_batches = 200;
  int p_dim = 32;
  int p_heads = 2;
  auto* pack_plan = pack_cmd->add_subcommand("plan", "Pack images into fixed-capacity sequences");
  pack_plan->add_option("--sizes", p_sizes, "Lines of '<image_ref> <width> <height>'")
      ->required()
      ->check(CLI::ExistingFile);
  pack_plan->add_option("--capacity", p_capacity)->check(CLI::PositiveNumber);
  pack_plan->add_option("--patch-size", p_patch)->check(CLI::PositiveNumber);
  pack_plan->add_option("--merge", p_merge)->check(CLI::PositiveNumber);
  pack_plan->add_option("--out", p_out)->required();
  auto* pack_verify = pack_cmd->add_subcommand("verify", "Compare packed masked attention with per-image attention");
  pack_verify->add_option("--seed", p_seed)->required();
  pack_verify->add_option("--batches", p_batches)->check(CLI::PositiveNumber);
  pack_verify->add_option("--dim", p_dim)->check(CLI::Range(2, 32));
  pack_verify->add_option("--heads", p_heads)->check(CLI::PositiveNumber);

  // ---- soup ----
  std::vector<std::string> s_members;
  std::string s_scores, s_out;
  std::size_t s_k = 2;
  auto* soup_cmd = app.add_subcommand("soup", "Average the top-k checkpoints");
  soup_cmd->add_option("--members", s_members)->required()->check(CLI::ExistingFile);
  soup_cmd->add_option("--scores", s_scores, "Lines of '<source id> <score>'")->required()->check(CLI::ExistingFile);
  soup_cmd->add_option("--k", s_k)->check(CLI::PositiveNumber);
  soup_cmd->add_option("--out", s_out)->required();

  // ---- review ----
  auto* review_cmd = app.add_subcommand("review", "Human-verification queue");
  review_cmd->require_subcommand(1);
  std::string r_state, r_auth, r_host = "127.0.0.1", r_queue = "ocr", r_out, r_name;
  int r_port = 8080;
  long r_timeout_min = 30;
  auto* review_serve = review_cmd->add_subcommand("serve", "Run the review HTTP service");
  review_serve->add_option("--state-dir", r_state)->required();
  review_serve->add_option("--auth", r_auth, "Token file")->check(CLI::ExistingFile);
  review_serve->add_option("--host", r_host);
  review_serve->add_option("--port", r_port)->check(CLI::Range(0, 65535));
  review_serve->add_option("--claim-timeout-min", r_timeout_min)->check(CLI::PositiveNumber);
  auto* review_export = review_cmd->add_subcommand("export", "Write verified items as a dataset");
  review_export->add_option("--state-dir", r_state)->required()->check(CLI::ExistingDirectory);
  review_export->add_option("--queue", r_queue);
  review_export->add_option("--out", r_out)->required();
  review_export->add_option("--name", r_name)->required();

  // ---- pipeline ----
  std::string cfg_path;
  std::vector<std::string> run_stages;
  auto* validate_cmd = app.add_subcommand("validate", "Validate a pipeline config");
  validate_cmd->add_option("config", cfg_path)->required();
  auto* run_cmd = app.add_subcommand("run", "Run pipeline stages from a config");
  run_cmd->add_option("config", cfg_path)->required();
  run_cmd->add_option("--stages", run_stages, "Subset of capfuse ppl build filter template pack");
  std::string plan_stage;
  auto* plan_cmd = app.add_subcommand("plan", "Emit a training-plan document");
  plan_cmd->add_option("--stage", plan_stage, "pretrain | sft")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*corpus_validate) {
      const auto m = corpus::load_manifest(validate_manifest);
      const auto report = corpus::validate_manifest(m);
      for (const auto& e : report.errors) std::cout << "error line " << e.line << ": " << e.reason << "\n";
      for (const auto& w : report.warnings) std::cout << "warning: " << w << "\n";
      std::cout << m.name << ": " << report.records << " records, " << report.errors.size() << " errors, "
                << report.warnings.size() << " warnings\n";
      return report.ok() ? 0 : 1;
    }
    if (*corpus_report) {
      std::vector<corpus::DatasetManifest> ms;
      for (const auto& p : report_manifests) ms.push_back(corpus::load_manifest(p));
      const auto r = corpus::distribution_report(ms);
      std::cout << (report_json ? r.to_json().dump(2) + "\n" : r.to_text());
      return 0;
    }
    if (*capfuse_run) {
      const auto m = corpus::load_manifest(cf_manifest);
      auto vlm = model::load_client(cf_vlm);
      auto llm = model::load_client(cf_llm);
      const auto prompts =
          cf_prompts.empty() ? capfusion::FusionPrompts::defaults() : capfusion::FusionPrompts::load(cf_prompts);
      const auto res = capfusion::run_capfusion(m, *vlm, *llm, prompts, cf_out, cf_name, {cf_resume, cf_overwrite});
      for (const auto& f : res.failures) std::cerr << "failed " << f.id << " [" << f.stage << "]: " << f.message << "\n";
      std::cout << "fused " << res.manifest.count << " of " << res.input_count << " records";
      if (res.resumed) std::cout << " (" << res.resumed << " resumed)";
      std::cout << " -> " << corpus::manifest_path_for(cf_out, cf_name).string() << "\n";
      return res.failures.empty() ? 0 : 1;
    }
    if (*ppl_score) {
      const auto m = corpus::load_manifest(ppl_manifest);
      const auto records = corpus::read_all<corpus::CaptionRecord>(m);
      std::optional<ppl::NgramScorer> scorer;
      if (!ppl_model.empty()) {
        scorer = ppl::NgramScorer::from_json(nlohmann::json::parse(read_file(ppl_model)));
      } else {
        std::vector<ppl::TokenSequence> train;
        for (const auto& r : records) {
          auto s = ppl::tokenize(ppl::caption_text(r, ppl::CaptionSource::kFusedOrOriginal));
          if (s.size() > 0) train.push_back(std::move(s));
        }
        scorer = ppl::train_ngram(train, ppl_order, ppl_smoothing);
      }
      const auto scored = ppl::score_records(records, *scorer);
      if (ppl_out.empty()) {
        for (const auto& r : scored) std::cout << r.id << "\t" << *r.perplexity << "\n";
      } else {
        const auto name = ppl_name.empty() ? m.name + ".scored" : ppl_name;
        corpus::write_dataset<corpus::CaptionRecord>(ppl_out, name, scored);
        write_file_atomic(fs::path(ppl_out) / (name + ".ngram.json"), scorer->to_json().dump() + "\n");
        std::cout << "scored " << scored.size() << " records -> " << corpus::manifest_path_for(ppl_out, name).string()
                  << "\n";
      }
      return 0;
    }
    if (*ppl_filter) {
      const auto m = corpus::load_manifest(ppl_manifest);
      const auto records = corpus::read_all<corpus::CaptionRecord>(m);
      const auto kept = ppl::filter_by_perplexity(records, ppl_fraction);
      const auto name = ppl_name.empty() ? m.name + ".kept" : ppl_name;
      corpus::write_dataset<corpus::CaptionRecord>(ppl_out, name, kept);
      std::cout << "kept " << kept.size() << " of " << records.size() << " -> "
                << corpus::manifest_path_for(ppl_out, name).string() << "\n";
      return 0;
    }
    if (*build_translate) {
      const auto m = corpus::load_manifest(b_manifest);
      auto llm = model::load_client(b_llm);
      const auto scope = b_scope == "full" ? builder::TranslateScope::kFull : builder::TranslateScope::kQuestionsOnly;
      const auto out = builder::translate_manifest(m, *llm, corpus::Language::kZh, scope, b_out, b_name);
      print_failures(out.result.failures);
      std::cout << "translated " << out.manifest.count << " of " << m.count << " samples\n";
      return out.result.failures.empty() ? 0 : 1;
    }
    if (*build_vlm) {
      const auto m = corpus::load_manifest(b_manifest);
      auto vlm = model::load_client(b_vlm);
      const auto out = builder::vlm_answer_manifest(m, *vlm, b_out, b_name);
      print_failures(out.result.failures);
      std::cout << "answered " << out.manifest.count << " of " << m.count << " samples\n";
      return out.result.failures.empty() ? 0 : 1;
    }
    if (*build_ocr) {
      const auto images = read_list(b_images);
      auto vlm = model::load_client(b_vlm);
      const auto pool = b_pool.empty() ? builder::OcrPromptPool::defaults() : builder::OcrPromptPool::load(b_pool);
      std::optional<review::ReviewStore> store;
      if (!b_state.empty()) {
        review::StoreOptions opts;
        opts.state_dir = b_state;
        store.emplace(std::move(opts));
      }
      const auto res = builder::build_ocr_tasks(images, pool, *vlm, b_seed, store ? &*store : nullptr, b_queue);
      std::string lines;
      for (const auto& t : res.tasks) lines += builder::to_json(t).dump() + "\n";
      write_file_atomic(b_out, lines);
      print_failures(res.failures);
      std::cout << res.tasks.size() << " tasks";
      if (store) std::cout << ", " << res.enqueue.enqueued << " enqueued, " << res.enqueue.duplicates.size()
                           << " duplicates";
      std::cout << "\n";
      return res.failures.empty() ? 0 : 1;
    }
    if (*filter_grammar || *filter_answer) {
      const auto m = corpus::load_manifest(f_manifest);
      auto judge = model::load_client(f_judge);
      const auto prompts = f_prompts.empty() ? filter::JudgePrompts{} : filter::JudgePrompts::load(f_prompts);
      const auto res = *filter_grammar
                           ? filter::grammar_manifest(m, *judge, filter::parse_grammar_policy(f_policy), f_out,
                                                      f_name, prompts)
                           : filter::answerable_manifest(m, *judge, filter::parse_answerable_action(f_action), f_out,
                                                         f_name, prompts);
      print_outcome(res.outcome);
      return 0;
    }
    if (*template_render) {
      const auto m = corpus::load_manifest(t_manifest);
      const auto records = corpus::read_all<corpus::CaptionRecord>(m);
      auto config = t_config.empty() ? chat_template::TemplateConfig{} : chat_template::TemplateConfig::load(t_config);
      config.kind = chat_template::parse_kind(t_kind);
      const auto pool = t_pool.empty() ? chat_template::PromptPool::defaults() : chat_template::PromptPool::load(t_pool);
      const auto rendered = chat_template::render_all(records, config, pool, t_seed);
      chat_template::write_rendered(t_out, rendered);
      std::cout << "rendered " << rendered.size() << " records -> " << t_out << "\n";
      return 0;
    }
    if (*pack_plan) {
      std::vector<packer::PackEntry> entries;
      for (const auto& [id, wh] : pipeline::read_image_sizes(p_sizes)) {
        entries.push_back({id, packer::patch_count({wh.first, wh.second, p_patch, p_merge})});
      }
      const auto plan = packer::pack(entries, p_capacity);
      write_file_atomic(p_out, packer::plan_to_json(plan).dump(2) + "\n");
      for (const auto& seq : plan) {
        std::cout << "boundaries";
        for (auto b : seq.boundaries) std::cout << " " << b;
        std::cout << "\n";
      }
      std::cout << plan.size() << " sequences -> " << p_out << "\n";
      return 0;
    }
    if (*pack_verify) {
      std::mt19937_64 rng(p_seed);
      const auto weights = packer::AttentionWeights::random(p_dim, p_heads, p_seed);
      double worst = 0.0;
      for (int b = 0; b < p_batches; ++b) {
        const auto c = random_case(rng, p_dim);
        worst = std::max(worst, packer::attention_equiv_check(c.embeddings, c.seq, weights));
      }
      std::cout << "batches " << p_batches << " max_abs_diff " << worst << "\n";
      return worst < 1e-6 ? 0 : 1;
    }
    if (*soup_cmd) {
      const auto scores = soup::read_scores(s_scores);
      std::vector<soup::ParameterMap> maps;
      for (const auto& p : s_members) maps.push_back(soup::read_checkpoint(p));
      std::vector<soup::Candidate> cands;
      for (const auto& m : maps) {
        auto it = scores.find(m.source_id);
        if (it == scores.end()) fail(ErrorCode::kValidation, "no score for checkpoint " + m.source_id);
        cands.push_back({&m, it->second});
      }
      const auto members = soup::select_members(cands, s_k);
      const auto souped = members.size() == 1 ? *members.front() : soup::average(members);
      soup::write_checkpoint(s_out, souped);
      soup::write_checkpoint_manifest(s_out, souped);
      std::cout << soup::soup_report(members, souped);
      return 0;
    }
    if (*review_serve) {
      review::StoreOptions opts;
      opts.state_dir = r_state;
      opts.claim_timeout = std::chrono::minutes(r_timeout_min);
      review::ReviewStore store(std::move(opts));
      review::ReviewServer server(store, r_auth.empty() ? review::AuthConfig{} : review::AuthConfig::load(r_auth));
      if (!server.bind(r_host, r_port)) fail(ErrorCode::kIo, "cannot bind " + r_host + ":" + std::to_string(r_port));
      g_server = &server;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      std::cout << "listening on " << r_host << ":" << r_port << std::endl;
      server.listen_after_bind();
      store.snapshot();
      return 0;
    }
    if (*review_export) {
      review::StoreOptions opts;
      opts.state_dir = r_state;
      review::ReviewStore store(std::move(opts));
      const auto m = store.export_verified(r_queue, r_out, r_name);
      std::cout << "exported " << m.count << " samples -> " << corpus::manifest_path_for(r_out, r_name).string()
                << "\n";
      return 0;
    }
    if (*validate_cmd) {
      const auto config = pipeline::load_config(cfg_path);
      std::cout << "config ok, hash " << config.config_hash() << "\n";
      return 0;
    }
    if (*run_cmd) {
      const auto config = pipeline::load_config(cfg_path);
      std::vector<pipeline::Stage> stages;
      for (const auto& s : run_stages) stages.push_back(pipeline::parse_stage(s));
      const auto summary = pipeline::run_pipeline(config, stages.empty() ? pipeline::all_stages() : stages);
      std::cout << summary.to_json().dump(2) << "\n";
      return summary.ok ? 0 : 1;
    }
    if (*plan_cmd) {
      std::cout << pipeline::emit_training_plan(plan_stage).to_json().dump(2) << "\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
