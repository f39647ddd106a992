#include "points/instruct_filter.hpp"

#include <cctype>

#include "points/util.hpp"

namespace points::filter {

namespace {

using corpus::Role;

// Terminal punctuation removed before comparing answers.
bool is_terminal_punct(std::string_view tail) {
  static constexpr std::string_view kAscii = ".,!?;:'\"`";
  if (tail.size() == 1) return kAscii.find(tail[0]) != std::string_view::npos;
  for (std::string_view cjk : {"。", "，", "！", "？", "；", "：", "、"}) {
    if (tail == cjk) return true;
  }
  return false;
}

std::string strip_terminal_punct(std::string s) {
  for (;;) {
    if (s.empty()) return s;
    if (is_terminal_punct(std::string_view(s).substr(s.size() - 1))) {
      s.pop_back();
    } else if (s.size() >= 3 && is_terminal_punct(std::string_view(s).substr(s.size() - 3))) {
      s.resize(s.size() - 3);
    } else {
      return s;
    }
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.pop_back();
  }
}

// "b", "(b)", "b)", "b. paris", "b: paris" -> 'b'.
std::optional<char> option_letter(const std::string& normalized) {
  std::string_view s = normalized;
  if (!s.empty() && s.front() == '(') s.remove_prefix(1);
  if (s.empty() || s.front() < 'a' || s.front() > 'z') return std::nullopt;
  const char letter = s.front();
  s.remove_prefix(1);
  if (s.empty()) return letter;
  if (s.front() == ')' || s.front() == '.' || s.front() == ':') {
    s.remove_prefix(1);
    if (s.empty() || s.front() == ' ') return letter;
  }
  return std::nullopt;
}

std::string strip_image_tokens(std::string text) {
  for (std::string_view tok : {"<image>", "<img>", "</img>"}) {
    for (auto pos = text.find(tok); pos != std::string::npos; pos = text.find(tok, pos)) text.erase(pos, tok.size());
  }
  return trim(text);
}

}  // namespace

std::string_view to_string(FilterKind v) {
  return v == FilterKind::kGrammar ? "grammar" : "answerable_without_image";
}

std::string_view to_string(Verdict v) { return v == Verdict::kPass ? "pass" : "flagged"; }

std::string_view to_string(ActionTaken v) {
  switch (v) {
    case ActionTaken::kKept: return "kept";
    case ActionTaken::kDropped: return "dropped";
    case ActionTaken::kFixed: return "fixed";
    case ActionTaken::kLabeled: return "labeled";
  }
  return "?";
}

GrammarPolicy parse_grammar_policy(std::string_view s) {
  if (s == "drop") return GrammarPolicy::kDrop;
  if (s == "fix") return GrammarPolicy::kFix;
  fail(ErrorCode::kValidation, "grammar policy must be drop or fix, got '" + std::string(s) + "'");
}

AnswerableAction parse_answerable_action(std::string_view s) {
  if (s == "label") return AnswerableAction::kLabel;
  if (s == "drop") return AnswerableAction::kDrop;
  fail(ErrorCode::kValidation, "answerable action must be label or drop, got '" + std::string(s) + "'");
}

nlohmann::json to_json(const FilterDecision& d) {
  return {{"sample_id", d.sample_id},          {"filter", to_string(d.filter)},
          {"verdict", to_string(d.verdict)},   {"action_taken", to_string(d.action_taken)},
          {"judge_output", d.judge_output},    {"note", d.note}};
}

JudgePrompts JudgePrompts::load(const std::filesystem::path& path) {
  const auto doc = nlohmann::json::parse(read_file(path));
  JudgePrompts p;
  p.grammar = doc.value("grammar", p.grammar);
  p.answer = doc.value("answer", p.answer);
  return p;
}

double FilterOutcome::retention() const {
  return total == 0 ? 1.0 : static_cast<double>(kept()) / static_cast<double>(total);
}

GrammarVerdict parse_grammar_verdict(const std::string& judge_output, std::size_t turn_count) {
  GrammarVerdict v;
  v.judge_output = judge_output;
  const auto nl = judge_output.find('\n');
  const auto head = ascii_lower(trim(judge_output.substr(0, nl)));
  if (head == "pass") {
    v.verdict = Verdict::kPass;
    return v;
  }
  if (head != "flag") {
    v.parsed = false;
    v.verdict = Verdict::kPass;
    return v;
  }
  v.verdict = Verdict::kFlagged;
  if (nl == std::string::npos) return v;
  try {
    const auto body = nlohmann::json::parse(judge_output.substr(nl + 1));
    auto turns = body.get<std::vector<std::string>>();
    if (turns.size() == turn_count) v.corrected_turns = std::move(turns);
  } catch (const nlohmann::json::exception&) {
    // Flag stands; correction unusable.
  }
  return v;
}

model::ChatRequest grammar_request(const ConversationSample& sample, const model::ModelClient& judge,
                                   const JudgePrompts& prompts) {
  if (sample.turns.empty()) fail(ErrorCode::kPrecondition, "sample " + sample.id + " has no turns");
  nlohmann::json turns = nlohmann::json::array();
  for (const auto& t : sample.turns) turns.push_back({{"role", corpus::to_string(t.role)}, {"content", t.content}});
  return judge.make_request({{Role::kSystem, prompts.grammar, std::nullopt}, {Role::kUser, turns.dump(), std::nullopt}});
}

GrammarVerdict detect_grammar(const ConversationSample& sample, model::ModelClient& judge,
                              const JudgePrompts& prompts) {
  const auto req = grammar_request(sample, judge, prompts);
  try {
    return parse_grammar_verdict(judge.complete(req), sample.turns.size());
  } catch (const Error& e) {
    GrammarVerdict v;
    v.parsed = false;
    v.judge_output = std::string("judge error: ") + e.what();
    return v;
  }
}

FilterOutcome apply_grammar_policy(std::span<const ConversationSample> samples, model::ModelClient& judge,
                                   GrammarPolicy policy, const JudgePrompts& prompts) {
  FilterOutcome out;
  out.total = samples.size();
  if (samples.empty()) return out;
  std::vector<model::ChatRequest> requests;
  for (const auto& s : samples) requests.push_back(grammar_request(s, judge, prompts));
  const auto results = judge.complete_batch(requests);

  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& sample = samples[i];
    GrammarVerdict v;
    if (results[i].ok()) {
      v = parse_grammar_verdict(*results[i].text, sample.turns.size());
    } else {
      v.parsed = false;
      v.judge_output = std::string("judge error: ") + results[i].error->what();
    }
    FilterDecision d{sample.id, FilterKind::kGrammar, v.verdict, ActionTaken::kKept, v.judge_output, {}};
    if (!v.parsed) {
      d.note = "unparseable judge output; kept";
      out.samples.push_back(sample);
    } else if (v.verdict == Verdict::kPass) {
      out.samples.push_back(sample);
    } else if (policy == GrammarPolicy::kDrop) {
      d.action_taken = ActionTaken::kDropped;
    } else if (v.corrected_turns) {
      auto fixed = sample;
      for (std::size_t t = 0; t < fixed.turns.size(); ++t) fixed.turns[t].content = (*v.corrected_turns)[t];
      d.action_taken = ActionTaken::kFixed;
      out.samples.push_back(std::move(fixed));
    } else {
      d.action_taken = ActionTaken::kDropped;
      d.note = "flagged without a usable correction; dropped";
    }
    out.decisions.push_back(std::move(d));
  }
  return out;
}

std::string normalize_answer(std::string_view answer) {
  std::string collapsed;
  bool space = false;
  for (char c : trim(answer)) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      space = true;
      continue;
    }
    if (space && !collapsed.empty()) collapsed += ' ';
    space = false;
    collapsed += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  return strip_terminal_punct(std::move(collapsed));
}

bool answers_match(std::string_view gold, std::string_view predicted) {
  const auto g = normalize_answer(gold);
  const auto p = normalize_answer(predicted);
  if (g == p) return true;
  const auto gl = option_letter(g);
  if (gl && (g.size() == 1 || (g.size() == 3 && g.front() == '('))) {
    const auto pl = option_letter(p);
    return pl && *pl == *gl;
  }
  return false;
}

std::optional<QuestionAnswer> gold_pair(const ConversationSample& sample) {
  for (std::size_t t = sample.turns.size(); t-- > 1;) {
    if (sample.turns[t].role == Role::kAssistant && sample.turns[t - 1].role == Role::kUser) {
      return QuestionAnswer{sample.turns[t - 1].content, sample.turns[t].content};
    }
  }
  return std::nullopt;
}

namespace {

model::ChatRequest answer_request(const std::string& question, const model::ModelClient& judge,
                                  const JudgePrompts& prompts) {
  return judge.make_request(
      {{Role::kSystem, prompts.answer, std::nullopt}, {Role::kUser, strip_image_tokens(question), std::nullopt}});
}

void require_fixed(bool fixed_answers) {
  if (!fixed_answers) {
    fail(ErrorCode::kRefused, "answerability filtering only applies to datasets with fixed answers");
  }
}

}  // namespace

std::string answer_without_image(const ConversationSample& sample, bool fixed_answers, model::ModelClient& judge,
                                 const JudgePrompts& prompts) {
  require_fixed(fixed_answers);
  const auto qa = gold_pair(sample);
  std::string question;
  if (qa) {
    question = qa->question;
  } else {
    for (const auto& t : sample.turns) {
      if (t.role == Role::kUser) question = t.content;
    }
  }
  if (question.empty()) fail(ErrorCode::kPrecondition, "sample " + sample.id + " has no question");
  return judge.complete(answer_request(question, judge, prompts));
}

FilterOutcome filter_text_answerable(std::span<const ConversationSample> samples, bool fixed_answers,
                                     model::ModelClient& judge, AnswerableAction action,
                                     const JudgePrompts& prompts) {
  require_fixed(fixed_answers);
  FilterOutcome out;
  out.total = samples.size();
  std::vector<model::ChatRequest> requests;
  std::vector<std::size_t> judged;
  std::vector<std::string> golds;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto qa = gold_pair(samples[i]);
    if (!qa) {
      out.skipped.push_back({samples[i].id, "no gold answer"});
      continue;
    }
    requests.push_back(answer_request(qa->question, judge, prompts));
    judged.push_back(i);
    golds.push_back(qa->gold);
  }
  std::vector<model::CompletionResult> results;
  if (!requests.empty()) results = judge.complete_batch(requests);

  std::vector<std::optional<FilterDecision>> decision_at(samples.size());
  for (std::size_t q = 0; q < judged.size(); ++q) {
    const auto& sample = samples[judged[q]];
    FilterDecision d{sample.id, FilterKind::kAnswerableWithoutImage, Verdict::kPass, ActionTaken::kKept, {}, {}};
    if (!results[q].ok()) {
      d.judge_output = std::string("judge error: ") + results[q].error->what();
      d.note = "judge failed; kept";
    } else {
      d.judge_output = *results[q].text;
      if (answers_match(golds[q], *results[q].text)) {
        d.verdict = Verdict::kFlagged;
        d.action_taken = action == AnswerableAction::kLabel ? ActionTaken::kLabeled : ActionTaken::kDropped;
      }
    }
    decision_at[judged[q]] = std::move(d);
  }
  for (std::size_t i = 0; i < samples.size(); ++i) {
    auto& d = decision_at[i];
    if (!d) {
      out.samples.push_back(samples[i]);
      continue;
    }
    if (d->action_taken == ActionTaken::kLabeled) {
      auto labeled = samples[i];
      labeled.labels.insert(std::string(corpus::kAnswerableWithoutImage));
      out.samples.push_back(std::move(labeled));
    } else if (d->action_taken != ActionTaken::kDropped) {
      out.samples.push_back(samples[i]);
    }
    out.decisions.push_back(std::move(*d));
  }
  return out;
}

ManifestFilter grammar_manifest(const DatasetManifest& in, model::ModelClient& judge, GrammarPolicy policy,
                                const std::filesystem::path& out_dir, const std::string& name,
                                const JudgePrompts& prompts) {
  if (in.kind != corpus::ManifestKind::kConversation) {
    fail(ErrorCode::kPrecondition, "grammar filter needs a conversation manifest");
  }
  const auto samples = corpus::read_all<ConversationSample>(in);
  ManifestFilter out;
  out.outcome = apply_grammar_policy(samples, judge, policy, prompts);
  out.manifest = corpus::write_dataset<ConversationSample>(out_dir, name, out.outcome.samples, in.strategy,
                                                           in.fixed_answers);
  write_decisions(out_dir / (name + ".decisions.jsonl"), out.outcome.decisions);
  return out;
}

ManifestFilter answerable_manifest(const DatasetManifest& in, model::ModelClient& judge, AnswerableAction action,
                                   const std::filesystem::path& out_dir, const std::string& name,
                                   const JudgePrompts& prompts) {
  if (in.kind != corpus::ManifestKind::kConversation) {
    fail(ErrorCode::kPrecondition, "answerability filter needs a conversation manifest");
  }
  require_fixed(in.fixed_answers);
  const auto samples = corpus::read_all<ConversationSample>(in);
  ManifestFilter out;
  out.outcome = filter_text_answerable(samples, in.fixed_answers, judge, action, prompts);
  out.manifest = corpus::write_dataset<ConversationSample>(out_dir, name, out.outcome.samples, in.strategy,
                                                           in.fixed_answers);
  write_decisions(out_dir / (name + ".decisions.jsonl"), out.outcome.decisions);
  return out;
}

void write_decisions(const std::filesystem::path& path, std::span<const FilterDecision> decisions) {
  std::string out;
  for (const auto& d : decisions) out += to_json(d).dump() + "\n";
  write_file_atomic(path, out);
}

}  // namespace points::filter
