#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "kbvqa/pipeline.hpp"

namespace kbvqa::eval {

enum class DatasetFormat { VQAv2, OKVQA, AOKVQA };

// "vqav2", "okvqa", "aokvqa" (case-insensitive, dashes ignored).
DatasetFormat parse_format(std::string_view name);
std::string_view to_string(DatasetFormat format) noexcept;

struct DatasetItem {
  std::string question_id;
  std::string image_path;
  std::string question;
  std::vector<std::string> gold_answers;

  bool scored() const noexcept { return !gold_answers.empty(); }
};

struct LoadedDataset {
  std::vector<DatasetItem> items;
  // Join misses: questions without annotations and annotations without questions.
  std::vector<std::string> warnings;
};

/// Reads benchmark question/annotation JSON.
///
/// VQAv2 and OK-VQA use the paired questions/annotations files and COCO
/// image names (`COCO_<data_subtype>_<012 image_id>.jpg`). A-OKVQA uses a
/// single list whose entries carry `direct_answers`; the image is taken
/// from an explicit "image"/"image_path" field, else `<012 image_id>.jpg`.
/// Items keep source order. Throws DatasetError on unreadable or malformed
/// files and on duplicate question ids.
LoadedDataset load_dataset(const std::filesystem::path& questions_file,
                           const std::optional<std::filesystem::path>& annotations_file,
                           const std::filesystem::path& images_root, DatasetFormat format);

/// Soft VQA accuracy: min(1, matches / 3) after normalizing both sides.
double vqa_accuracy(std::string_view predicted, std::span<const std::string> gold_answers);

struct ItemResult {
  std::string question_id;
  std::string question;
  std::string predicted;
  std::optional<double> score;  // absent for unscored items
  std::optional<std::string> error;
  std::vector<std::string> fallbacks;
};

inline constexpr std::string_view kReportSchemaVersion = "kbvqa.report/v1";

struct EvalReport {
  nlohmann::json config;
  std::vector<ItemResult> items;  // sorted by question id
  std::size_t scored = 0;
  std::size_t errors = 0;
  std::size_t fallbacks = 0;
  std::optional<double> accuracy;  // percent; absent when nothing is scored

  nlohmann::json to_json() const;
  // Aligned plain-text table plus an accuracy footer.
  std::string to_text() const;
};

struct EvalOptions {
  int workers = 1;
};

/// Runs the pipeline over `items` and scores the answers. A failing item is
/// recorded with its error (score 0 when it has gold answers) and the run
/// continues. Throws DatasetError for an empty item list.
EvalReport evaluate(std::span<const DatasetItem> items, const pipeline::PipelineConfig& cfg,
                    const pipeline::BackendSet& backends, const EvalOptions& options = {});

// Orders "2" before "10"; non-numeric ids sort after numeric ones, lexically.
bool question_id_less(const std::string& a, const std::string& b);

// "accuracy: NN.NN", or "accuracy: unscored".
std::string accuracy_line(const EvalReport& report);

// ---- ablation ---------------------------------------------------------------

struct GridPoint {
  nlohmann::json delta;  // keys overridden relative to the base config
  pipeline::PipelineConfig config;
};

/// Expands a grid description into points. Accepts
///   {"base": {...}, "axes": {"key": [v1, v2], ...}}  (cartesian product,
///       axes varied in key order) and/or
///   {"base": {...}, "points": [{...}, {...}]}        (explicit deltas).
/// Throws ConfigError for unknown keys (naming them) or an empty grid.
std::vector<GridPoint> expand_grid(const nlohmann::json& grid, const pipeline::PipelineConfig& base);

struct AblationRow {
  nlohmann::json delta;
  nlohmann::json config;
  EvalReport report;
};

struct AblationReport {
  std::vector<AblationRow> rows;

  nlohmann::json to_json() const;
  std::string to_text() const;
};

/// One evaluation per grid point, in grid order.
AblationReport run_ablation(std::span<const DatasetItem> items, std::span<const GridPoint> grid,
                            const pipeline::BackendSet& backends, const EvalOptions& options = {});

}  // namespace kbvqa::eval
