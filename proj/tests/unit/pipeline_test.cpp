#include "kbvqa/pipeline.hpp"

#include <gtest/gtest.h>

#include "kbvqa/backend_stack.hpp"
#include "kbvqa/errors.hpp"
#include "kbvqa/json_schema.hpp"
#include "test_support.hpp"

using namespace kbvqa;
using namespace kbvqa::pipeline;
using kbvqa::test::fixture;
using nlohmann::json;

namespace {

const std::string kImage = fixture("images/scene.png").string();
const std::string kBirthday = "Which number birthday is probably being celebrated?";

backends::BackendStack mock_stack(const std::string& script = "", std::uint64_t seed = 0,
                                  const PipelineConfig& cfg = {}) {
  backends::BackendConfig bc;
  bc.mock_seed = seed;
  if (!script.empty()) bc.mock_script = backends::MockScript::load(fixture(script));
  return backends::build_backend_stack(bc, cfg.captioner_ids);
}

PipelineResult ask(const std::string& question, const std::string& script = "", const PipelineConfig& cfg = {},
                   std::uint64_t seed = 0) {
  auto stack = mock_stack(script, seed, cfg);
  return answer_question({kImage}, question, cfg, stack.set);
}

class ThrowingChat final : public ChatLlm {
 public:
  explicit ThrowingChat(std::shared_ptr<ChatLlm> inner, std::string fail_prefix)
      : inner_(std::move(inner)), fail_prefix_(std::move(fail_prefix)) {}
  const std::string& id() const override { return inner_->id(); }
  std::string chat(const std::string& prompt, int max_tokens, double temperature) override {
    if (prompt.rfind(fail_prefix_, 0) == 0) throw BackendError(BackendErrorKind::Transport, "connection refused");
    return inner_->chat(prompt, max_tokens, temperature);
  }

 private:
  std::shared_ptr<ChatLlm> inner_;
  std::string fail_prefix_;
};

}  // namespace

TEST(Pipeline, BirthdayTranscript) {
  const auto r = ask(kBirthday, "birthday/script.json");
  EXPECT_EQ(r.answer, "thirty");
  const auto& t = r.trace;
  EXPECT_EQ(t.route, prompts::QuestionKind::NonCounting);
  ASSERT_EQ(t.keywords.size(), 1u);
  EXPECT_EQ(t.keywords[0].phrase, "number birthday");
  EXPECT_EQ(t.grounding_prompt, "number birthday .");
  EXPECT_EQ(t.detections_raw.size(), 3u);
  EXPECT_EQ(t.detections_confident.size(), 2u);
  EXPECT_EQ(t.detections_kept.size(), 1u);
  ASSERT_EQ(t.regions.size(), 1u);
  EXPECT_EQ(t.regions[0], (geometry::BBox{70, 96, 430, 384}));
  EXPECT_EQ(t.captions.size(), 6u);
  ASSERT_EQ(t.selected_captions.size(), 3u);
  EXPECT_EQ(t.selected_captions[0].text, "A birthday cake with the number 30 written in frosting.");
  EXPECT_EQ(t.selected_captions[1].text, "A chocolate cake with a 30th birthday topper.");
  EXPECT_EQ(t.selected_captions[2].text, "A cake decorated with candles for a celebration.");
  EXPECT_EQ(t.qa_pairs.size(), 2u);
  EXPECT_EQ(*t.final_prompt, test::read_file(fixture("prompts/answer.txt")));
  EXPECT_TRUE(t.fallbacks.empty());
}

TEST(Pipeline, StageOrderAndCallAccounting) {
  const auto t = ask(kBirthday, "birthday/script.json").trace;
  for (std::size_t i = 0; i < kStages.size(); ++i) {
    EXPECT_EQ(t.stages[i].stage, kStages[i]);
    EXPECT_TRUE(t.stages[i].executed);
  }
  EXPECT_EQ(t.stage(Stage::Captioning).calls.caption, 2);
  EXPECT_EQ(t.stage(Stage::Grounding).calls.ground, 1);
  EXPECT_EQ(t.stage(Stage::Answer).calls.chat, 1);
  EXPECT_EQ(t.total_calls().total(), 9);
  for (std::size_t i = 1; i < t.selected_captions.size(); ++i) {
    EXPECT_GE(*t.selected_captions[i - 1].score, *t.selected_captions[i].score);
  }
}

TEST(Pipeline, CountingRoute) {
  const auto r = ask("How many animal trunks are visible?", "birthday/counting.json");
  EXPECT_EQ(r.answer, "2");
  const auto& t = r.trace;
  EXPECT_EQ(t.route, prompts::QuestionKind::Counting);
  EXPECT_EQ(t.detections_raw.size(), 4u);
  EXPECT_EQ(t.detections_confident.size(), 3u);  // 0.25 is not above 0.25
  EXPECT_EQ(t.detections_kept.size(), 2u);
  EXPECT_EQ(t.total_calls().caption, 0);
  EXPECT_FALSE(t.stage(Stage::Answer).executed);
  EXPECT_EQ(t.stage(Stage::Answer).calls.chat, 0);
  EXPECT_FALSE(t.stage(Stage::Captioning).executed);
  EXPECT_FALSE(t.final_prompt.has_value());
}

TEST(Pipeline, ZeroDetectionsUseWholeImage) {
  const auto r = ask("What is the man holding?", "birthday/empty_ground.json");
  const auto& t = r.trace;
  EXPECT_TRUE(t.whole_image_fallback);
  EXPECT_TRUE(t.regions.empty());
  ASSERT_FALSE(t.captions.empty());
  for (const auto& c : t.captions) EXPECT_FALSE(c.region_index.has_value());
  EXPECT_EQ(t.stage(Stage::Captioning).calls.caption, 2);
  EXPECT_FALSE(r.answer.empty());
}

TEST(Pipeline, DeterministicUnderMocks) {
  for (const auto& q : {kBirthday, std::string("What is the man holding?"), std::string("How many dogs are there?")}) {
    const auto a = ask(q, "", {}, 42).trace.to_json(false);
    const auto b = ask(q, "", {}, 42).trace.to_json(false);
    EXPECT_EQ(a.dump(), b.dump());
  }
}

TEST(Pipeline, TraceValidatesAgainstSchema) {
  for (const auto& q : {kBirthday, std::string("How many dogs are there?")}) {
    const auto j = ask(q, "birthday/script.json").trace.to_json();
    const auto errors = json_schema::validate(json_schema::bundled("trace.schema.json"), j);
    EXPECT_TRUE(errors.empty()) << (errors.empty() ? "" : errors.front());
    EXPECT_TRUE(j.contains("metadata"));
    EXPECT_FALSE(ask(q, "birthday/script.json").trace.to_json(false).contains("metadata"));
  }
}

TEST(Pipeline, TopKBoundsSelection) {
  PipelineConfig cfg;
  for (int k : {0, 1, 2, 3, 5}) {
    cfg.top_k_captions = k;
    const auto t = ask(kBirthday, "birthday/script.json", cfg).trace;
    EXPECT_EQ(t.selected_captions.size(), static_cast<std::size_t>(k));
  }
}

TEST(Pipeline, PromptPartsShapeFinalPrompt) {
  PipelineConfig cfg;
  cfg.prompt_parts = {false, false};
  auto t = ask(kBirthday, "birthday/script.json", cfg).trace;
  EXPECT_EQ(*t.final_prompt, prompts::build_answer_prompt(kBirthday, {}, {}));
  EXPECT_EQ(t.total_calls().caption, 0);

  cfg.prompt_parts = {true, false};
  t = ask(kBirthday, "birthday/script.json", cfg).trace;
  EXPECT_EQ(t.final_prompt->find("What is being celebrated?"), std::string::npos);
  EXPECT_NE(t.final_prompt->find("Caption 3:"), std::string::npos);
  EXPECT_FALSE(t.stage(Stage::QaPairs).executed);

  cfg.prompt_parts = {false, true};
  t = ask(kBirthday, "birthday/script.json", cfg).trace;
  EXPECT_EQ(t.final_prompt->find("Caption 1:"), std::string::npos);
  EXPECT_NE(t.final_prompt->find("What is being celebrated?: A birthday"), std::string::npos);
}

TEST(Pipeline, FullQuestionGroundingPrompt) {
  PipelineConfig cfg;
  cfg.dino_prompt_mode = DinoPromptMode::FullQuestion;
  const auto t = ask(kBirthday, "birthday/script.json", cfg).trace;
  EXPECT_EQ(t.grounding_prompt, kBirthday);
  EXPECT_FALSE(t.stage(Stage::Keywords).executed);
}

TEST(Pipeline, UnparseableQaDegradesToCaptionsOnly) {
  auto stack = mock_stack("birthday/script.json");
  auto script = backends::MockScript::load(fixture("birthday/script.json"));
  script.chat.insert(script.chat.begin(), {std::string(prompts::kQaGenInstruction), "", "I would rather not."});
  backends::BackendConfig bc;
  bc.mock_script = script;
  stack = backends::build_backend_stack(bc, PipelineConfig{}.captioner_ids);
  const auto r = answer_question({kImage}, kBirthday, {}, stack.set);
  EXPECT_EQ(r.answer, "thirty");
  EXPECT_TRUE(r.trace.qa_pairs.empty());
  EXPECT_EQ(r.trace.fallbacks, (std::vector<std::string>{"qa_parse_failed"}));
}

TEST(Pipeline, BackendFailureNamesStage) {
  auto stack = mock_stack("birthday/script.json");
  stack.set.chat = std::make_shared<ThrowingChat>(stack.set.chat, std::string(prompts::kDistillInstruction));
  try {
    answer_question({kImage}, kBirthday, {}, stack.set);
    FAIL();
  } catch (const PipelineError& e) {
    EXPECT_EQ(e.stage(), "distill");
    EXPECT_NE(std::string(e.what()).find("connection refused"), std::string::npos);
  }
}

TEST(Pipeline, InputValidation) {
  auto stack = mock_stack();
  EXPECT_THROW(answer_question({kImage}, "  ", {}, stack.set), PipelineError);
  EXPECT_THROW(answer_question({"/missing.jpg"}, "q?", {}, stack.set), PipelineError);
  PipelineConfig bad;
  bad.qa_pairs = 3;
  EXPECT_THROW(answer_question({kImage}, "q?", bad, stack.set), PipelineError);
}

TEST(PipelineConfig, JsonRoundTripAndStrictKeys) {
  PipelineConfig cfg;
  cfg.top_k_captions = 2;
  cfg.dino_prompt_mode = DinoPromptMode::FullQuestion;
  cfg.prompt_parts = {true, false};
  EXPECT_EQ(PipelineConfig::from_json(cfg.to_json()), cfg);
  try {
    PipelineConfig::from_json(json{{"top_k_caption", 2}});
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("top_k_caption"), std::string::npos);
  }
  EXPECT_THROW(PipelineConfig::from_json(json{{"top_k_captions", "x"}}), ConfigError);
  EXPECT_THROW(PipelineConfig::from_json(json{{"keyword_threshold", 1.5}}).validate(), ConfigError);
}
