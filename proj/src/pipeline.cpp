#include "kbvqa/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <future>

#include "kbvqa/errors.hpp"

namespace kbvqa::pipeline {

using nlohmann::json;

// ---- config -----------------------------------------------------------------

void PipelineConfig::validate() const {
  const auto fail = [](const std::string& key, const std::string& why) {
    throw ConfigError("invalid config '" + key + "': " + why);
  };
  if (!(keyword_threshold >= -1.0 && keyword_threshold <= 1.0)) fail("keyword_threshold", "must be in [-1, 1]");
  if (keyword_max_n < 1) fail("keyword_max_n", "must be >= 1");
  if (!(box_threshold >= 0.0 && box_threshold <= 1.0)) fail("box_threshold", "must be in [0, 1]");
  if (!(overlap_threshold > 0.0 && overlap_threshold <= 1.0)) fail("overlap_threshold", "must be in (0, 1]");
  if (!(expand_factor >= 0.0) || !std::isfinite(expand_factor)) fail("expand_factor", "must be >= 0");
  if (captions_per_region_per_generator < 1) fail("captions_per_region_per_generator", "must be >= 1");
  if (caption_pool_limit < 1) fail("caption_pool_limit", "must be >= 1");
  if (top_k_captions < 0) fail("top_k_captions", "must be >= 0");
  if (qa_pairs < 0 || qa_pairs > 2) fail("qa_pairs", "must be 0, 1 or 2");
  if (captioner_ids.empty()) fail("captioner_ids", "needs at least one captioner");
  if (max_tokens < 1) fail("max_tokens", "must be >= 1");
  if (!(temperature >= 0.0)) fail("temperature", "must be >= 0");
}

json PipelineConfig::to_json() const {
  json parts = json::array();
  if (prompt_parts.captions) parts.push_back("captions");
  if (prompt_parts.qa_pairs) parts.push_back("qa_pairs");
  return {{"keyword_threshold", keyword_threshold},
          {"keyword_max_n", keyword_max_n},
          {"box_threshold", box_threshold},
          {"overlap_threshold", overlap_threshold},
          {"expand_factor", expand_factor},
          {"captions_per_region_per_generator", captions_per_region_per_generator},
          {"caption_pool_limit", caption_pool_limit},
          {"top_k_captions", top_k_captions},
          {"qa_pairs", qa_pairs},
          {"captioner_ids", captioner_ids},
          {"dino_prompt_mode", dino_prompt_mode == DinoPromptMode::Keywords ? "keywords" : "question"},
          {"prompt_parts", parts},
          {"caption_instruction", caption_instruction},
          {"max_tokens", max_tokens},
          {"temperature", temperature}};
}

namespace {

template <typename T>
T typed(const json& v, const std::string& key) {
  try {
    return v.get<T>();
  } catch (const json::exception&) {
    throw ConfigError("invalid config '" + key + "': wrong type " + std::string(v.type_name()));
  }
}

int integer(const json& v, const std::string& key) {
  if (!v.is_number_integer()) throw ConfigError("invalid config '" + key + "': expected an integer");
  return v.get<int>();
}

double number(const json& v, const std::string& key) {
  if (!v.is_number()) throw ConfigError("invalid config '" + key + "': expected a number");
  return v.get<double>();
}

}  // namespace

PipelineConfig PipelineConfig::from_json(const json& j) { return from_json(j, PipelineConfig{}); }

PipelineConfig PipelineConfig::from_json(const json& j, const PipelineConfig& base) {
  if (!j.is_object()) throw ConfigError("pipeline config must be a JSON object");
  PipelineConfig c = base;
  for (const auto& [key, v] : j.items()) {
    if (key == "keyword_threshold") c.keyword_threshold = number(v, key);
    else if (key == "keyword_max_n") c.keyword_max_n = integer(v, key);
    else if (key == "box_threshold") c.box_threshold = number(v, key);
    else if (key == "overlap_threshold") c.overlap_threshold = number(v, key);
    else if (key == "expand_factor") c.expand_factor = number(v, key);
    else if (key == "captions_per_region_per_generator") c.captions_per_region_per_generator = integer(v, key);
    else if (key == "caption_pool_limit") c.caption_pool_limit = integer(v, key);
    else if (key == "top_k_captions") c.top_k_captions = integer(v, key);
    else if (key == "qa_pairs") c.qa_pairs = integer(v, key);
    else if (key == "captioner_ids") c.captioner_ids = typed<std::vector<std::string>>(v, key);
    else if (key == "dino_prompt_mode") {
      const auto mode = typed<std::string>(v, key);
      if (mode == "keywords") c.dino_prompt_mode = DinoPromptMode::Keywords;
      else if (mode == "question" || mode == "full_question") c.dino_prompt_mode = DinoPromptMode::FullQuestion;
      else throw ConfigError("invalid config 'dino_prompt_mode': expected \"keywords\" or \"question\"");
    } else if (key == "prompt_parts") {
      PromptParts parts{false, false};
      for (const auto& part : typed<std::vector<std::string>>(v, key)) {
        if (part == "captions") parts.captions = true;
        else if (part == "qa_pairs") parts.qa_pairs = true;
        else throw ConfigError("invalid config 'prompt_parts': unknown part \"" + part + "\"");
      }
      c.prompt_parts = parts;
    } else if (key == "caption_instruction") c.caption_instruction = typed<std::string>(v, key);
    else if (key == "max_tokens") c.max_tokens = integer(v, key);
    else if (key == "temperature") c.temperature = number(v, key);
    else throw ConfigError("unknown config key '" + key + "'");
  }
  return c;
}

// ---- trace ------------------------------------------------------------------

std::string_view to_string(Stage stage) noexcept {
  switch (stage) {
    case Stage::Classify: return "classify";
    case Stage::Keywords: return "keywords";
    case Stage::Grounding: return "grounding";
    case Stage::Captioning: return "captioning";
    case Stage::Distill: return "distill";
    case Stage::Ranking: return "ranking";
    case Stage::QaPairs: return "qa_pairs";
    case Stage::Answer: return "answer";
  }
  return "unknown";
}

CallCounts PipelineTrace::total_calls() const {
  CallCounts total;
  for (const auto& s : stages) {
    total.embed += s.calls.embed;
    total.ground += s.calls.ground;
    total.caption += s.calls.caption;
    total.chat += s.calls.chat;
  }
  return total;
}

namespace {

json box_json(const geometry::BBox& b) { return json::array({b.x0, b.y0, b.x1, b.y1}); }

json detections_json(const std::vector<geometry::Detection>& dets) {
  json out = json::array();
  for (const auto& d : dets) out.push_back({{"box", box_json(d.box)}, {"score", d.score}, {"label", d.label}});
  return out;
}

json captions_json(const std::vector<textrank::Caption>& caps) {
  json out = json::array();
  for (const auto& c : caps) {
    out.push_back({{"text", c.text},
                   {"source", c.source},
                   {"region_index", c.region_index ? json(*c.region_index) : json(nullptr)},
                   {"score", c.score ? json(*c.score) : json(nullptr)}});
  }
  return out;
}

template <typename T>
json optional_json(const std::optional<T>& v) {
  return v ? json(*v) : json(nullptr);
}

}  // namespace

json PipelineTrace::to_json(bool include_metadata) const {
  json kw = json::array();
  for (const auto& k : keywords) kw.push_back({{"phrase", k.phrase}, {"score", k.score}});
  json regions_j = json::array();
  for (const auto& r : regions) regions_j.push_back(box_json(r));
  json pairs = json::array();
  for (const auto& p : qa_pairs) pairs.push_back({{"question", p.question}, {"answer", p.answer}});
  json stages_j = json::array();
  json timing = json::object();
  for (const auto& s : stages) {
    stages_j.push_back({{"name", to_string(s.stage)},
                        {"executed", s.executed},
                        {"calls",
                         {{"embed", s.calls.embed},
                          {"ground", s.calls.ground},
                          {"caption", s.calls.caption},
                          {"chat", s.calls.chat}}}});
    timing[std::string(to_string(s.stage))] = s.duration_ms;
  }

  json out = {
      {"schema", kTraceSchemaVersion},
      {"image", image},
      {"question", question},
      {"config", config.to_json()},
      {"route", prompts::to_string(route)},
      {"classification_raw", classification_raw},
      {"keywords", kw},
      {"grounding_prompt", optional_json(grounding_prompt)},
      {"image_size", image_size ? json{{"width", image_size->width}, {"height", image_size->height}} : json(nullptr)},
      {"detections",
       {{"raw", detections_json(detections_raw)},
        {"confident", detections_json(detections_confident)},
        {"kept", detections_json(detections_kept)}}},
      {"regions", regions_j},
      {"whole_image_fallback", whole_image_fallback},
      {"captions", captions_json(captions)},
      {"selected_captions", captions_json(selected_captions)},
      {"distilled_question", optional_json(distilled_question)},
      {"qa_raw", optional_json(qa_raw)},
      {"qa_pairs", pairs},
      {"final_prompt", optional_json(final_prompt)},
      {"raw_answer", raw_answer},
      {"answer", answer},
      {"fallbacks", fallbacks},
      {"stages", stages_j},
  };
  if (include_metadata) out["metadata"] = {{"stage_timing_ms", timing}};
  return out;
}

// ---- run --------------------------------------------------------------------

namespace {

struct AtomicCounts {
  std::atomic<int> embed{0};
  std::atomic<int> ground{0};
  std::atomic<int> caption{0};
  std::atomic<int> chat{0};
};

// Role proxies that attribute each call to whichever stage is running.
class CountedEmbedder final : public Embedder {
 public:
  CountedEmbedder(Embedder& inner, AtomicCounts*& counts) : inner_(inner), counts_(counts) {}
  const std::string& id() const override { return inner_.id(); }
  std::size_t dim() const override { return inner_.dim(); }
  std::vector<EmbeddingVector> embed(std::span<const std::string> texts) override {
    ++counts_->embed;
    return inner_.embed(texts);
  }

 private:
  Embedder& inner_;
  AtomicCounts*& counts_;
};

class Run {
 public:
  Run(const ImageRef& image, const std::string& question, const PipelineConfig& cfg,
      const BackendSet& backends)
      : image_(image), question_(question), cfg_(cfg), backends_(backends), embedder_(*backends.embedder, counts_) {
    trace_.image = image.path;
    trace_.question = question;
    trace_.config = cfg;
    for (std::size_t i = 0; i < kStages.size(); ++i) trace_.stages[i].stage = kStages[i];
  }

  PipelineResult execute();

 private:
  template <typename F>
  void stage(Stage s, F&& body);

  std::string chat(const std::string& prompt) {
    ++counts_->chat;
    return backends_.chat->chat(prompt, cfg_.max_tokens, cfg_.temperature);
  }

  GroundingResult ground(const std::string& prompt) {
    ++counts_->ground;
    return backends_.grounder->ground(image_, prompt, cfg_.box_threshold);
  }

  void classify();
  void extract_keywords();
  void run_grounding(const std::string& prompt);
  void generate_captions();
  void distill();
  void rank();
  void generate_qa_pairs();
  void answer();
  bool keyword_fallback_used() const;

  const ImageRef& image_;
  const std::string& question_;
  const PipelineConfig& cfg_;
  const BackendSet& backends_;
  AtomicCounts* counts_ = nullptr;
  CountedEmbedder embedder_;
  PipelineTrace trace_;
};

template <typename F>
void Run::stage(Stage s, F&& body) {
  AtomicCounts local;
  counts_ = &local;
  auto& record = trace_.stages[static_cast<std::size_t>(s)];
  const auto start = std::chrono::steady_clock::now();
  try {
    body();
  } catch (const PipelineError&) {
    throw;
  } catch (const std::exception& e) {
    throw PipelineError(std::string(to_string(s)), e.what());
  }
  record.executed = true;
  record.duration_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  record.calls = {local.embed.load(), local.ground.load(), local.caption.load(), local.chat.load()};
  counts_ = nullptr;
}

void Run::classify() {
  trace_.classification_raw = chat(prompts::build_classify_prompt(question_));
  trace_.route = prompts::parse_classification(trace_.classification_raw);
}

void Run::extract_keywords() {
  trace_.keywords = textrank::extract_keywords(question_, embedder_, cfg_.keyword_threshold, cfg_.keyword_max_n);
  if (trace_.keywords.empty()) {
    trace_.fallbacks.push_back("no_keywords");
  } else if (keyword_fallback_used()) {
    trace_.fallbacks.push_back("keyword_argmax");
  }
}

bool Run::keyword_fallback_used() const {
  return trace_.keywords.size() == 1 && !(trace_.keywords.front().score > cfg_.keyword_threshold);
}

void Run::run_grounding(const std::string& prompt) {
  trace_.grounding_prompt = prompt;
  auto result = ground(prompt);
  trace_.image_size = result.image_size;
  trace_.detections_raw = std::move(result.detections);
  trace_.detections_confident = geometry::filter_by_confidence(trace_.detections_raw, cfg_.box_threshold);
  trace_.detections_kept = geometry::suppress_overlaps(trace_.detections_confident, cfg_.overlap_threshold);
}

void Run::generate_captions() {
  std::vector<std::optional<geometry::BBox>> regions;
  for (const auto& r : trace_.regions) regions.emplace_back(r);
  if (regions.empty()) regions.emplace_back(std::nullopt);

  std::vector<std::shared_ptr<Captioner>> captioners;
  for (const auto& id : cfg_.captioner_ids) {
    auto it = backends_.captioners.find(id);
    if (it == backends_.captioners.end() || !it->second) {
      throw ConfigError("no captioner backend configured for id '" + id + "'");
    }
    captioners.push_back(it->second);
  }

  // Bound the pool: only as many regions (largest first) as can contribute.
  const std::size_t per_region = captioners.size() * static_cast<std::size_t>(cfg_.captions_per_region_per_generator);
  const std::size_t max_regions =
      std::max<std::size_t>(1, (static_cast<std::size_t>(cfg_.caption_pool_limit) + per_region - 1) / per_region);
  if (regions.size() > max_regions) regions.resize(max_regions);

  std::string instruction = cfg_.caption_instruction;
  if (auto pos = instruction.find("{question}"); pos != std::string::npos) {
    instruction.replace(pos, std::string_view("{question}").size(), question_);
  }

  std::vector<std::future<std::vector<std::string>>> pending;
  for (const auto& region : regions) {
    for (const auto& captioner : captioners) {
      ++counts_->caption;
      pending.push_back(std::async(std::launch::async, [&, captioner] {
        return captioner->caption(image_, region, instruction, cfg_.captions_per_region_per_generator);
      }));
    }
  }

  // Collect every future before rethrowing so no task outlives this frame.
  std::vector<std::vector<std::string>> results(pending.size());
  std::exception_ptr failure;
  for (std::size_t i = 0; i < pending.size(); ++i) {
    try {
      results[i] = pending[i].get();
    } catch (...) {
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);

  std::size_t slot = 0;
  for (std::size_t r = 0; r < regions.size(); ++r) {
    for (const auto& captioner : captioners) {
      for (auto& text : results[slot]) {
        if (text.empty()) continue;
        textrank::Caption c;
        c.text = std::move(text);
        c.source = captioner->id();
        if (regions[r]) c.region_index = static_cast<int>(r);
        trace_.captions.push_back(std::move(c));
      }
      ++slot;
    }
  }
  if (trace_.captions.size() > static_cast<std::size_t>(cfg_.caption_pool_limit)) {
    trace_.captions.resize(static_cast<std::size_t>(cfg_.caption_pool_limit));
  }
}

void Run::distill() {
  const std::string raw = chat(prompts::build_distill_prompt(question_));
  const auto b = raw.find_first_not_of(" \t\r\n");
  const auto e = raw.find_last_not_of(" \t\r\n");
  trace_.distilled_question = raw.substr(b, e - b + 1);
}

void Run::rank() {
  // Score the whole pool so the trace records every caption's relevance.
  auto ranked = textrank::rank_captions(*trace_.distilled_question, trace_.captions, embedder_,
                                        trace_.captions.size());
  for (auto& c : trace_.captions) {
    for (const auto& r : ranked) {
      if (r.text == c.text && r.source == c.source && r.region_index == c.region_index) c.score = r.score;
    }
  }
  ranked.resize(std::min(ranked.size(), static_cast<std::size_t>(cfg_.top_k_captions)));
  trace_.selected_captions = std::move(ranked);
}

void Run::generate_qa_pairs() {
  std::vector<std::string> texts;
  for (const auto& c : trace_.selected_captions) texts.push_back(c.text);
  trace_.qa_raw = chat(prompts::build_qa_gen_prompt(texts));
  try {
    trace_.qa_pairs = prompts::parse_qa_pairs(*trace_.qa_raw, static_cast<std::size_t>(cfg_.qa_pairs));
  } catch (const prompts::QaParseError&) {
    trace_.fallbacks.push_back("qa_parse_failed");
  }
}

void Run::answer() {
  std::vector<std::string> captions;
  if (cfg_.prompt_parts.captions) {
    for (const auto& c : trace_.selected_captions) captions.push_back(c.text);
  }
  std::vector<prompts::QAPair> pairs;
  if (cfg_.prompt_parts.qa_pairs) pairs = trace_.qa_pairs;
  trace_.final_prompt = prompts::build_answer_prompt(question_, captions, pairs);
  trace_.raw_answer = chat(*trace_.final_prompt);
  trace_.answer = prompts::normalize_answer(trace_.raw_answer);
}

PipelineResult Run::execute() {
  stage(Stage::Classify, [&] { classify(); });

  if (trace_.route == prompts::QuestionKind::Counting) {
    stage(Stage::Keywords, [&] { extract_keywords(); });
    stage(Stage::Grounding, [&] {
      std::string prompt = textrank::build_grounding_prompt(trace_.keywords);
      run_grounding(prompt.empty() ? question_ : prompt);
    });
    trace_.raw_answer = std::to_string(geometry::count_detections(trace_.detections_kept));
    trace_.answer = trace_.raw_answer;
    return {trace_.answer, std::move(trace_)};
  }

  const bool qa_wanted = cfg_.prompt_parts.qa_pairs && cfg_.qa_pairs > 0;
  const bool need_captions = cfg_.top_k_captions > 0 && (cfg_.prompt_parts.captions || qa_wanted);

  if (need_captions) {
    std::string prompt;
    if (cfg_.dino_prompt_mode == DinoPromptMode::Keywords) {
      stage(Stage::Keywords, [&] { extract_keywords(); });
      prompt = textrank::build_grounding_prompt(trace_.keywords);
    } else {
      prompt = question_;
    }

    if (!prompt.empty()) {
      stage(Stage::Grounding, [&] {
        run_grounding(prompt);
        for (const auto& d : trace_.detections_kept) {
          trace_.regions.push_back(geometry::expand_region(d.box, *trace_.image_size, cfg_.expand_factor));
        }
      });
    }
    if (trace_.regions.empty()) {
      trace_.whole_image_fallback = true;
      trace_.fallbacks.push_back("whole_image");
    }

    stage(Stage::Captioning, [&] { generate_captions(); });
    if (!trace_.captions.empty()) {
      stage(Stage::Distill, [&] { distill(); });
      stage(Stage::Ranking, [&] { rank(); });
    }
    if (qa_wanted && !trace_.selected_captions.empty()) {
      stage(Stage::QaPairs, [&] { generate_qa_pairs(); });
    }
  }

  stage(Stage::Answer, [&] { answer(); });
  return {trace_.answer, std::move(trace_)};
}

}  // namespace

PipelineResult answer_question(const ImageRef& image, const std::string& question, const PipelineConfig& cfg,
                               const BackendSet& backends) {
  if (question.find_first_not_of(" \t\r\n") == std::string::npos) {
    throw PipelineError("input", "question is empty");
  }
  std::error_code ec;
  if (image.path.empty() || !std::filesystem::is_regular_file(image.path, ec)) {
    throw PipelineError("input", "image not found: " + image.path);
  }
  if (!backends.embedder || !backends.grounder || !backends.chat) {
    throw PipelineError("input", "backend set is incomplete");
  }
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    throw PipelineError("input", e.what());
  }
  return Run(image, question, cfg, backends).execute();
}

}  // namespace kbvqa::pipeline
