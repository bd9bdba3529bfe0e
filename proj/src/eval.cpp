#include "kbvqa/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <thread>

#include "kbvqa/errors.hpp"
#include "kbvqa/prompts.hpp"

namespace kbvqa::eval {

using nlohmann::json;
namespace fs = std::filesystem;

DatasetFormat parse_format(std::string_view name) {
  std::string key;
  for (char c : name) {
    if (c != '-' && c != '_') key.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  if (key == "vqav2") return DatasetFormat::VQAv2;
  if (key == "okvqa") return DatasetFormat::OKVQA;
  if (key == "aokvqa") return DatasetFormat::AOKVQA;
  throw ConfigError("unknown dataset format '" + std::string(name) + "' (expected vqav2, okvqa or aokvqa)");
}

std::string_view to_string(DatasetFormat format) noexcept {
  switch (format) {
    case DatasetFormat::VQAv2: return "vqav2";
    case DatasetFormat::OKVQA: return "okvqa";
    case DatasetFormat::AOKVQA: return "aokvqa";
  }
  return "unknown";
}

namespace {

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DatasetError("cannot open " + path.string());
  json j = json::parse(in, nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded()) throw DatasetError(path.string() + " is not valid JSON");
  return j;
}

std::string id_string(const json& v, const fs::path& source) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return std::to_string(v.get<long long>());
  throw DatasetError(source.string() + ": question_id must be a string or integer");
}

std::string coco_number(const json& image_id, const fs::path& source) {
  if (!image_id.is_number_integer()) throw DatasetError(source.string() + ": image_id must be an integer");
  std::ostringstream s;
  s << std::setw(12) << std::setfill('0') << image_id.get<long long>();
  return s.str();
}

const json& require(const json& obj, const char* key, const fs::path& source) {
  if (!obj.is_object() || !obj.contains(key)) {
    throw DatasetError(source.string() + ": entry missing '" + key + "'");
  }
  return obj.at(key);
}

std::string question_text(const json& q, const fs::path& source) {
  const auto& v = require(q, "question", source);
  if (!v.is_string() || v.get<std::string>().empty()) {
    throw DatasetError(source.string() + ": question must be a non-empty string");
  }
  return v.get<std::string>();
}

// question id -> gold answers. Duplicate ids are an error.
std::map<std::string, std::vector<std::string>> read_vqa_annotations(const fs::path& path) {
  const json j = read_json(path);
  const auto& anns = require(j, "annotations", path);
  if (!anns.is_array()) throw DatasetError(path.string() + ": 'annotations' must be an array");
  std::map<std::string, std::vector<std::string>> out;
  std::set<std::string> duplicates;
  for (const auto& a : anns) {
    const std::string id = id_string(require(a, "question_id", path), path);
    std::vector<std::string> answers;
    for (const auto& ans : require(a, "answers", path)) {
      answers.push_back(ans.is_string() ? ans.get<std::string>() : require(ans, "answer", path).get<std::string>());
    }
    if (!out.emplace(id, std::move(answers)).second) duplicates.insert(id);
  }
  if (!duplicates.empty()) {
    std::string ids;
    for (const auto& d : duplicates) ids += (ids.empty() ? "" : ", ") + d;
    throw DatasetError(path.string() + ": duplicate question_id in annotations: " + ids);
  }
  return out;
}

std::map<std::string, std::vector<std::string>> read_aokvqa_answers(const json& list, const fs::path& path) {
  std::map<std::string, std::vector<std::string>> out;
  std::set<std::string> duplicates;
  for (const auto& e : list) {
    const std::string id = id_string(require(e, "question_id", path), path);
    if (!e.contains("direct_answers")) continue;
    if (!out.emplace(id, e["direct_answers"].get<std::vector<std::string>>()).second) duplicates.insert(id);
  }
  if (!duplicates.empty()) {
    std::string ids;
    for (const auto& d : duplicates) ids += (ids.empty() ? "" : ", ") + d;
    throw DatasetError(path.string() + ": duplicate question_id in annotations: " + ids);
  }
  return out;
}

}  // namespace

LoadedDataset load_dataset(const fs::path& questions_file, const std::optional<fs::path>& annotations_file,
                           const fs::path& images_root, DatasetFormat format) {
  LoadedDataset ds;
  const json qj = read_json(questions_file);

  std::optional<std::map<std::string, std::vector<std::string>>> gold;
  if (format == DatasetFormat::AOKVQA) {
    const json& list = qj.is_array() ? qj : require(qj, "questions", questions_file);
    if (!list.is_array()) throw DatasetError(questions_file.string() + ": expected a list of questions");
    if (annotations_file) {
      const json aj = read_json(*annotations_file);
      gold = read_aokvqa_answers(aj.is_array() ? aj : require(aj, "annotations", *annotations_file), *annotations_file);
    }
    std::set<std::string> seen;
    for (const auto& q : list) {
      DatasetItem item;
      item.question_id = id_string(require(q, "question_id", questions_file), questions_file);
      if (!seen.insert(item.question_id).second) {
        throw DatasetError(questions_file.string() + ": duplicate question_id " + item.question_id);
      }
      item.question = question_text(q, questions_file);
      if (q.contains("image") || q.contains("image_path")) {
        const auto name = (q.contains("image") ? q["image"] : q["image_path"]).get<std::string>();
        item.image_path = (images_root / name).string();
      } else {
        item.image_path = (images_root / (coco_number(require(q, "image_id", questions_file), questions_file) + ".jpg")).string();
      }
      if (!gold && q.contains("direct_answers")) {
        item.gold_answers = q["direct_answers"].get<std::vector<std::string>>();
      }
      ds.items.push_back(std::move(item));
    }
  } else {
    const auto& list = require(qj, "questions", questions_file);
    if (!list.is_array()) throw DatasetError(questions_file.string() + ": 'questions' must be an array");
    const std::string subtype = qj.value("data_subtype", std::string("val2014"));
    if (annotations_file) gold = read_vqa_annotations(*annotations_file);
    std::set<std::string> seen;
    for (const auto& q : list) {
      DatasetItem item;
      item.question_id = id_string(require(q, "question_id", questions_file), questions_file);
      if (!seen.insert(item.question_id).second) {
        throw DatasetError(questions_file.string() + ": duplicate question_id " + item.question_id);
      }
      item.question = question_text(q, questions_file);
      item.image_path =
          (images_root / ("COCO_" + subtype + "_" + coco_number(require(q, "image_id", questions_file), questions_file) + ".jpg"))
              .string();
      ds.items.push_back(std::move(item));
    }
  }

  if (gold) {
    std::set<std::string> question_ids;
    for (auto& item : ds.items) {
      question_ids.insert(item.question_id);
      if (auto it = gold->find(item.question_id); it != gold->end()) {
        item.gold_answers = it->second;
      } else {
        ds.warnings.push_back("question " + item.question_id + " has no annotation; loaded unscored");
      }
    }
    for (const auto& [id, _] : *gold) {
      if (!question_ids.count(id)) ds.warnings.push_back("annotation " + id + " has no matching question");
    }
  }
  return ds;
}

double vqa_accuracy(std::string_view predicted, std::span<const std::string> gold_answers) {
  const std::string p = prompts::normalize_answer(predicted);
  const auto matches = std::count_if(gold_answers.begin(), gold_answers.end(),
                                     [&](const std::string& g) { return prompts::normalize_answer(g) == p; });
  return std::min(1.0, static_cast<double>(matches) / 3.0);
}

bool question_id_less(const std::string& a, const std::string& b) {
  const auto numeric = [](const std::string& s) {
    return !s.empty() && std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isdigit(c); });
  };
  const bool na = numeric(a), nb = numeric(b);
  if (na != nb) return na;
  if (na) {
    const auto strip = [](const std::string& s) {
      const auto p = s.find_first_not_of('0');
      return p == std::string::npos ? std::string("0") : s.substr(p);
    };
    const auto sa = strip(a), sb = strip(b);
    if (sa.size() != sb.size()) return sa.size() < sb.size();
    if (sa != sb) return sa < sb;
  }
  return a < b;
}

namespace {

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string table(const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> widths;
  for (const auto& r : rows) {
    widths.resize(std::max(widths.size(), r.size()), 0);
    for (std::size_t i = 0; i < r.size(); ++i) widths[i] = std::max(widths[i], r[i].size());
  }
  std::string out;
  for (const auto& r : rows) {
    std::string line;
    for (std::size_t i = 0; i < r.size(); ++i) {
      line += r[i];
      if (i + 1 < r.size()) line += std::string(widths[i] - r[i].size() + 2, ' ');
    }
    while (!line.empty() && line.back() == ' ') line.pop_back();
    out += line + "\n";
  }
  return out;
}

std::string one_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  return s;
}

}  // namespace

json EvalReport::to_json() const {
  json items_j = json::array();
  for (const auto& r : items) {
    items_j.push_back({{"question_id", r.question_id},
                       {"question", r.question},
                       {"predicted", r.predicted},
                       {"score", r.score ? json(*r.score) : json(nullptr)},
                       {"error", r.error ? json(*r.error) : json(nullptr)},
                       {"fallbacks", r.fallbacks}});
  }
  return {{"schema", kReportSchemaVersion},
          {"config", config},
          {"aggregate",
           {{"accuracy", accuracy ? json(*accuracy) : json(nullptr)},
            {"items", items.size()},
            {"scored", scored},
            {"errors", errors},
            {"fallbacks", fallbacks}}},
          {"items", items_j}};
}

std::string EvalReport::to_text() const {
  std::vector<std::vector<std::string>> rows{{"question_id", "score", "predicted", "note"}};
  for (const auto& r : items) {
    std::string note = r.error ? "error: " + one_line(*r.error) : "";
    if (!r.score && !r.error) note = "unscored";
    rows.push_back({r.question_id, r.score ? fixed(*r.score, 4) : "-", one_line(r.predicted), note});
  }
  return table(rows) + "\n" + accuracy_line(*this) + "\n";
}

std::string accuracy_line(const EvalReport& report) {
  return report.accuracy ? "accuracy: " + fixed(*report.accuracy, 2) : "accuracy: unscored";
}

EvalReport evaluate(std::span<const DatasetItem> items, const pipeline::PipelineConfig& cfg,
                    const pipeline::BackendSet& backends, const EvalOptions& options) {
  if (items.empty()) throw DatasetError("no items to evaluate");
  cfg.validate();

  std::vector<ItemResult> results(items.size());
  std::atomic<std::size_t> next{0};
  const auto worker = [&] {
    for (std::size_t i = next++; i < items.size(); i = next++) {
      const auto& item = items[i];
      ItemResult r;
      r.question_id = item.question_id;
      r.question = item.question;
      try {
        auto run = pipeline::answer_question({item.image_path}, item.question, cfg, backends);
        r.predicted = run.answer;
        r.fallbacks = run.trace.fallbacks;
        if (item.scored()) r.score = vqa_accuracy(run.answer, item.gold_answers);
      } catch (const std::exception& e) {
        r.error = e.what();
        if (item.scored()) r.score = 0.0;
      }
      results[i] = std::move(r);
    }
  };

  const auto n_workers = static_cast<std::size_t>(std::max(1, options.workers));
  if (n_workers == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < std::min(n_workers, items.size()); ++w) pool.emplace_back(worker);
  }

  std::stable_sort(results.begin(), results.end(),
                   [](const ItemResult& a, const ItemResult& b) { return question_id_less(a.question_id, b.question_id); });

  EvalReport report;
  report.config = cfg.to_json();
  double sum = 0.0;
  for (const auto& r : results) {
    if (r.score) {
      ++report.scored;
      sum += *r.score;
    }
    if (r.error) ++report.errors;
    if (!r.fallbacks.empty()) ++report.fallbacks;
  }
  if (report.scored > 0) report.accuracy = sum / static_cast<double>(report.scored) * 100.0;
  report.items = std::move(results);
  return report;
}

// ---- ablation ---------------------------------------------------------------

std::vector<GridPoint> expand_grid(const json& grid, const pipeline::PipelineConfig& base) {
  if (!grid.is_object()) throw ConfigError("grid must be a JSON object");
  for (const auto& [key, _] : grid.items()) {
    if (key != "base" && key != "axes" && key != "points") throw ConfigError("unknown grid key '" + key + "'");
  }
  const auto base_cfg = pipeline::PipelineConfig::from_json(grid.value("base", json::object()), base);

  std::vector<json> deltas;
  if (grid.contains("axes")) {
    const auto& axes = grid["axes"];
    if (!axes.is_object()) throw ConfigError("grid 'axes' must be an object of value lists");
    if (!axes.empty()) {
      deltas.push_back(json::object());
      for (const auto& [key, values] : axes.items()) {
        if (!values.is_array()) throw ConfigError("grid axis '" + key + "' must be a list");
        std::vector<json> next;
        for (const auto& d : deltas) {
          for (const auto& v : values) {
            json nd = d;
            nd[key] = v;
            next.push_back(std::move(nd));
          }
        }
        deltas = std::move(next);
      }
    }
  }
  if (grid.contains("points")) {
    if (!grid["points"].is_array()) throw ConfigError("grid 'points' must be a list");
    for (const auto& p : grid["points"]) {
      if (!p.is_object()) throw ConfigError("grid points must be objects");
      deltas.push_back(p);
    }
  }
  if (deltas.empty()) throw ConfigError("grid is empty");

  std::vector<GridPoint> points;
  for (auto& d : deltas) {
    auto cfg = pipeline::PipelineConfig::from_json(d, base_cfg);
    cfg.validate();
    points.push_back({std::move(d), std::move(cfg)});
  }
  return points;
}

AblationReport run_ablation(std::span<const DatasetItem> items, std::span<const GridPoint> grid,
                            const pipeline::BackendSet& backends, const EvalOptions& options) {
  AblationReport out;
  for (const auto& point : grid) {
    out.rows.push_back({point.delta, point.config.to_json(), evaluate(items, point.config, backends, options)});
  }
  return out;
}

json AblationReport::to_json() const {
  json rows_j = json::array();
  for (const auto& r : rows) {
    rows_j.push_back({{"delta", r.delta},
                      {"config", r.config},
                      {"accuracy", r.report.accuracy ? json(*r.report.accuracy) : json(nullptr)},
                      {"items", r.report.items.size()},
                      {"scored", r.report.scored},
                      {"errors", r.report.errors},
                      {"report", r.report.to_json()}});
  }
  return {{"schema", "kbvqa.ablation/v1"}, {"rows", rows_j}};
}

std::string AblationReport::to_text() const {
  std::vector<std::vector<std::string>> table_rows{{"delta", "accuracy", "scored", "errors"}};
  for (const auto& r : rows) {
    table_rows.push_back({r.delta.dump(), r.report.accuracy ? fixed(*r.report.accuracy, 2) : "-",
                          std::to_string(r.report.scored), std::to_string(r.report.errors)});
  }
  return table(table_rows);
}

}  // namespace kbvqa::eval
