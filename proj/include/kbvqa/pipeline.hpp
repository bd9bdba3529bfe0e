#pragma once

#include <array>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "kbvqa/geometry.hpp"
#include "kbvqa/prompts.hpp"
#include "kbvqa/roles.hpp"
#include "kbvqa/textrank.hpp"

namespace kbvqa::pipeline {

enum class DinoPromptMode { Keywords, FullQuestion };

/// Which optional sections the final answer prompt carries. The instruction
/// and the question are always present.
struct PromptParts {
  bool captions = true;
  bool qa_pairs = true;

  friend bool operator==(const PromptParts&, const PromptParts&) = default;
};

inline constexpr std::string_view kDefaultCaptionInstruction =
    "Describe this image in detail, including objects, actions and context relevant to the "
    "question: {question}";

struct PipelineConfig {
  double keyword_threshold = 0.4;
  int keyword_max_n = 2;
  double box_threshold = 0.25;
  double overlap_threshold = 0.9;
  double expand_factor = 0.1;
  int captions_per_region_per_generator = 3;
  int caption_pool_limit = 30;
  int top_k_captions = 3;
  int qa_pairs = 2;
  std::vector<std::string> captioner_ids = {"llava", "instructblip"};
  DinoPromptMode dino_prompt_mode = DinoPromptMode::Keywords;
  PromptParts prompt_parts;
  // "{question}" is replaced by the question text.
  std::string caption_instruction{kDefaultCaptionInstruction};
  int max_tokens = 256;
  double temperature = 0.0;

  // Throws ConfigError naming the offending field.
  void validate() const;

  nlohmann::json to_json() const;
  /// Applies the keys in `j` on top of `base`. Unknown keys and ill-typed
  /// values throw ConfigError naming the key.
  static PipelineConfig from_json(const nlohmann::json& j, const PipelineConfig& base);
  static PipelineConfig from_json(const nlohmann::json& j);

  friend bool operator==(const PipelineConfig&, const PipelineConfig&) = default;
};

/// The model services one pipeline run talks to. Captioners are looked up
/// by the ids in PipelineConfig::captioner_ids.
struct BackendSet {
  std::shared_ptr<Embedder> embedder;
  std::shared_ptr<Grounder> grounder;
  std::shared_ptr<ChatLlm> chat;
  std::map<std::string, std::shared_ptr<Captioner>> captioners;
};

enum class Stage { Classify, Keywords, Grounding, Captioning, Distill, Ranking, QaPairs, Answer };
inline constexpr std::array<Stage, 8> kStages = {Stage::Classify,  Stage::Keywords, Stage::Grounding,
                                                 Stage::Captioning, Stage::Distill,  Stage::Ranking,
                                                 Stage::QaPairs,    Stage::Answer};
std::string_view to_string(Stage stage) noexcept;

struct CallCounts {
  int embed = 0;
  int ground = 0;
  int caption = 0;
  int chat = 0;

  int total() const noexcept { return embed + ground + caption + chat; }
};

struct StageRecord {
  Stage stage = Stage::Classify;
  bool executed = false;
  CallCounts calls;
  double duration_ms = 0.0;
};

inline constexpr std::string_view kTraceSchemaVersion = "kbvqa.trace/v1";

/// Everything a run produced, stage by stage. `stages` always lists every
/// Stage exactly once, in pipeline order.
struct PipelineTrace {
  std::string image;
  std::string question;
  PipelineConfig config;
  prompts::QuestionKind route = prompts::QuestionKind::NonCounting;
  std::string classification_raw;
  std::vector<textrank::Keyword> keywords;
  std::optional<std::string> grounding_prompt;
  std::optional<geometry::ImageSize> image_size;
  std::vector<geometry::Detection> detections_raw;
  std::vector<geometry::Detection> detections_confident;
  std::vector<geometry::Detection> detections_kept;
  std::vector<geometry::BBox> regions;
  bool whole_image_fallback = false;
  std::vector<textrank::Caption> captions;
  std::vector<textrank::Caption> selected_captions;
  std::optional<std::string> distilled_question;
  std::optional<std::string> qa_raw;
  std::vector<prompts::QAPair> qa_pairs;
  std::optional<std::string> final_prompt;
  std::string raw_answer;
  std::string answer;
  std::vector<std::string> fallbacks;
  std::array<StageRecord, kStages.size()> stages{};

  const StageRecord& stage(Stage s) const { return stages[static_cast<std::size_t>(s)]; }
  CallCounts total_calls() const;

  /// Deterministic serialization. Wall-clock timings live only under the
  /// "metadata" key, which `include_metadata = false` leaves out.
  nlohmann::json to_json(bool include_metadata = true) const;
};

struct PipelineResult {
  std::string answer;
  PipelineTrace trace;
};

/// Runs one question through the pipeline.
///
/// Counting questions are answered with the number of grounded detections
/// that survive confidence filtering and overlap suppression. Everything
/// else goes through grounding, captioning, relevance filtering, QA-pair
/// generation and a final LLM answer. Backend failures are rethrown as
/// PipelineError naming the stage; an unparseable QA-pair reply degrades to
/// a captions-only prompt instead of failing.
PipelineResult answer_question(const ImageRef& image, const std::string& question,
                               const PipelineConfig& cfg, const BackendSet& backends);

}  // namespace kbvqa::pipeline
