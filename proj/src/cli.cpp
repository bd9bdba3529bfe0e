#include "kbvqa/cli.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>

#include "kbvqa/backend_stack.hpp"
#include "kbvqa/errors.hpp"
#include "kbvqa/eval.hpp"
#include "kbvqa/pipeline.hpp"

namespace kbvqa::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Values as typed on the command line; empty means "not given".
struct Flags {
  std::string config_file;
  std::string backend;
  std::string mock_script;
  std::string base_url;
  std::string cache_dir;
  int workers = 0;
  std::vector<std::string> sets;
  bool verbose = false;

  std::string image;
  std::string question;
  std::string trace_file;

  std::string questions;
  std::string annotations;
  std::string images;
  std::string format = "vqav2";
  std::string out_dir = ".";
  std::string grid;
};

// Fully resolved settings: flag > environment > config file > default.
struct Settings {
  backends::BackendConfig backend;
  pipeline::PipelineConfig pipeline;
  int workers = 1;
  bool verbose = false;
};

std::optional<std::string> env(const char* name) {
  const char* v = std::getenv(name);
  if (v == nullptr || *v == '\0') return std::nullopt;
  return std::string(v);
}

json read_json_file(const fs::path& path, const char* what) {
  std::ifstream in(path);
  if (!in) throw UsageError(std::string("cannot open ") + what + " " + path.string());
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw UsageError(std::string(what) + " " + path.string() + " is not valid JSON");
  return j;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

void write_json(const fs::path& path, const json& j) {
  write_text(path, j.dump(2, ' ', false, json::error_handler_t::replace) + "\n");
}

fs::path resolve_relative(const fs::path& p, const fs::path& base_dir) {
  return p.is_absolute() ? p : base_dir / p;
}

void apply_config_file(const fs::path& path, Settings& s) {
  const json j = read_json_file(path, "config file");
  if (!j.is_object()) throw ConfigError("config file must contain a JSON object");
  const fs::path base_dir = path.parent_path();
  for (const auto& [key, v] : j.items()) {
    if (key == "backend") {
      s.backend.set_kind(v.get<std::string>());
    } else if (key == "mock_script") {
      s.backend.mock_script = backends::MockScript::load(resolve_relative(v.get<std::string>(), base_dir));
    } else if (key == "cache_dir") {
      s.backend.cache_dir = resolve_relative(v.get<std::string>(), base_dir);
    } else if (key == "workers") {
      s.workers = v.get<int>();
    } else if (key == "pipeline") {
      s.pipeline = pipeline::PipelineConfig::from_json(v, s.pipeline);
    } else if (key == "embedding_dim") {
      s.backend.embedding_dim = v.get<std::size_t>();
    } else if (key == "backend_ids") {
      for (const auto& [role, id] : v.items()) {
        if (role == "embedder") s.backend.embedder_id = id.get<std::string>();
        else if (role == "grounder") s.backend.grounder_id = id.get<std::string>();
        else if (role == "chat") s.backend.chat_id = id.get<std::string>();
        else throw ConfigError("unknown config key 'backend_ids." + role + "'");
      }
    } else if (key == "http") {
      for (const auto& [hk, hv] : v.items()) {
        if (hk == "base_url") s.backend.http.base_url = hv.get<std::string>();
        else if (hk == "api_key") s.backend.http.api_key = hv.get<std::string>();
        else if (hk == "timeout_ms") s.backend.http.timeout = std::chrono::milliseconds(hv.get<long>());
        else if (hk == "retry_backoff_ms") s.backend.http.retry_backoff = std::chrono::milliseconds(hv.get<long>());
        else if (hk == "max_retries") s.backend.http.max_retries = hv.get<int>();
        else if (hk == "routes") s.backend.routes = hv.get<std::map<std::string, std::string>>();
        else if (hk == "image_transfer") {
          const auto mode = hv.get<std::string>();
          if (mode == "path") s.backend.image_transfer = backends::ImageTransfer::Path;
          else if (mode == "base64") s.backend.image_transfer = backends::ImageTransfer::Base64;
          else throw ConfigError("invalid config 'http.image_transfer': expected \"path\" or \"base64\"");
        } else {
          throw ConfigError("unknown config key 'http." + hk + "'");
        }
      }
    } else {
      throw ConfigError("unknown config key '" + key + "'");
    }
  }
}

// "--set key=value": value parsed as JSON, falling back to a plain string.
void apply_set(const std::string& assignment, pipeline::PipelineConfig& cfg) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw UsageError("--set expects key=value, got '" + assignment + "'");
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  cfg = pipeline::PipelineConfig::from_json(json{{key, value}}, cfg);
}

Settings resolve(const Flags& f) {
  Settings s;
  try {
    if (!f.config_file.empty()) apply_config_file(f.config_file, s);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config file: ") + e.what());
  }

  if (auto v = env("KBVQA_BASE_URL")) s.backend.http.base_url = *v;
  if (auto v = env("KBVQA_API_KEY")) s.backend.http.api_key = *v;
  if (auto v = env("KBVQA_CACHE_DIR")) s.backend.cache_dir = fs::path(*v);

  if (!f.backend.empty()) s.backend.set_kind(f.backend);
  if (!f.mock_script.empty()) {
    if (!fs::is_regular_file(f.mock_script)) throw UsageError("mock script not found: " + f.mock_script);
    s.backend.mock_script = backends::MockScript::load(f.mock_script);
  }
  if (!f.base_url.empty()) s.backend.http.base_url = f.base_url;
  if (!f.cache_dir.empty()) s.backend.cache_dir = fs::path(f.cache_dir);
  if (f.workers > 0) s.workers = f.workers;
  for (const auto& a : f.sets) apply_set(a, s.pipeline);
  s.verbose = f.verbose;

  s.pipeline.validate();
  if (s.workers < 1) throw ConfigError("invalid config 'workers': must be >= 1");
  return s;
}

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

json run_metadata(const backends::BackendStack& stack, std::chrono::steady_clock::time_point start) {
  return {{"generated_at", utc_now()},
          {"duration_ms", std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count()},
          {"transport_calls", stack.transport->calls()},
          {"cache_hits", stack.cache ? json(stack.cache->hits()) : json(nullptr)}};
}

void log_calls(const backends::BackendStack& stack, std::ostream& err) {
  err << "transport calls: " << stack.transport->calls();
  if (stack.cache) err << " (cache hits: " << stack.cache->hits() << ")";
  err << "\n";
}

std::vector<std::string> all_captioners(const std::vector<pipeline::PipelineConfig>& cfgs) {
  std::set<std::string> ids;
  for (const auto& c : cfgs) ids.insert(c.captioner_ids.begin(), c.captioner_ids.end());
  return {ids.begin(), ids.end()};
}

eval::LoadedDataset load_from_flags(const Flags& f, std::ostream& err) {
  if (f.questions.empty() || f.images.empty()) throw UsageError("--questions and --images are required");
  if (!fs::is_regular_file(f.questions)) throw UsageError("questions file not found: " + f.questions);
  if (!f.annotations.empty() && !fs::is_regular_file(f.annotations)) {
    throw UsageError("annotations file not found: " + f.annotations);
  }
  if (!fs::is_directory(f.images)) throw UsageError("images directory not found: " + f.images);
  const auto format = eval::parse_format(f.format);
  auto ds = eval::load_dataset(f.questions, f.annotations.empty() ? std::nullopt : std::optional<fs::path>(f.annotations),
                               f.images, format);
  for (const auto& w : ds.warnings) err << "warning: " << w << "\n";
  return ds;
}

int cmd_ask(const Flags& f, std::ostream& out, std::ostream& err) {
  if (f.image.empty() || !fs::is_regular_file(f.image)) throw UsageError("image not found: " + f.image);
  if (f.question.empty()) throw UsageError("question is empty");
  const Settings s = resolve(f);

  auto stack = backends::build_backend_stack(s.backend, s.pipeline.captioner_ids);
  const auto start = std::chrono::steady_clock::now();
  try {
    auto result = pipeline::answer_question({f.image}, f.question, s.pipeline, stack.set);
    out << result.answer << "\n";
    if (!f.trace_file.empty()) {
      json trace = result.trace.to_json();
      trace["metadata"].update(run_metadata(stack, start));
      write_json(f.trace_file, trace);
    }
  } catch (const PipelineError& e) {
    err << "error: stage '" << e.stage() << "' failed: " << e.what() << "\n";
    return kExitFailure;
  }
  if (s.verbose) log_calls(stack, err);
  return kExitOk;
}

int cmd_eval(const Flags& f, std::ostream& out, std::ostream& err) {
  const auto ds = load_from_flags(f, err);
  const Settings s = resolve(f);
  auto stack = backends::build_backend_stack(s.backend, s.pipeline.captioner_ids);

  const auto start = std::chrono::steady_clock::now();
  const auto report = eval::evaluate(ds.items, s.pipeline, stack.set, {s.workers});
  const fs::path out_dir = f.out_dir;
  json j = report.to_json();
  j["metadata"] = run_metadata(stack, start);

  if (report.scored == 0) {
    j["schema"] = "kbvqa.predictions/v1";
    write_json(out_dir / "predictions.json", j);
    out << "accuracy: unscored (" << report.items.size() << " predictions written)\n";
  } else {
    write_json(out_dir / "report.json", j);
    write_text(out_dir / "report.txt", report.to_text());
    out << eval::accuracy_line(report) << "\n";
  }
  log_calls(stack, err);
  if (report.errors > 0) {
    err << report.errors << " item(s) failed; see the report for details\n";
    return kExitFailure;
  }
  return kExitOk;
}

int cmd_ablate(const Flags& f, std::ostream& out, std::ostream& err) {
  if (f.grid.empty() || !fs::is_regular_file(f.grid)) throw UsageError("grid file not found: " + f.grid);
  const json grid = read_json_file(f.grid, "grid file");
  const auto ds = load_from_flags(f, err);
  const Settings s = resolve(f);
  const auto points = eval::expand_grid(grid, s.pipeline);

  std::vector<pipeline::PipelineConfig> cfgs;
  for (const auto& p : points) cfgs.push_back(p.config);
  auto stack = backends::build_backend_stack(s.backend, all_captioners(cfgs));

  const auto start = std::chrono::steady_clock::now();
  const auto report = eval::run_ablation(ds.items, points, stack.set, {s.workers});
  json j = report.to_json();
  j["metadata"] = run_metadata(stack, start);
  write_json(fs::path(f.out_dir) / "ablation.json", j);
  write_text(fs::path(f.out_dir) / "ablation.txt", report.to_text());
  out << report.to_text();
  log_calls(stack, err);

  for (const auto& row : report.rows) {
    if (row.report.errors > 0) return kExitFailure;
  }
  return kExitOk;
}

fs::path cache_dir_for(const Flags& f) {
  if (!f.cache_dir.empty()) return f.cache_dir;
  if (auto v = env("KBVQA_CACHE_DIR")) return *v;
  if (!f.config_file.empty()) {
    const json j = read_json_file(f.config_file, "config file");
    if (j.contains("cache_dir")) return resolve_relative(j["cache_dir"].get<std::string>(), fs::path(f.config_file).parent_path());
  }
  throw UsageError("no cache directory given (use --cache-dir or KBVQA_CACHE_DIR)");
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Flags f;
  CLI::App app{"Zero-shot knowledge-based VQA: grounding, captioning, caption filtering, QA pairs, answer", "kbvqa"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default(false);

  const auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", f.config_file, "JSON config file");
    sub->add_option("--backend", f.backend, "mock[:seed] or http");
    sub->add_option("--mock-script", f.mock_script, "JSON script of canned mock responses");
    sub->add_option("--base-url", f.base_url, "Model server base URL (env KBVQA_BASE_URL)");
    sub->add_option("--cache-dir", f.cache_dir, "Response cache directory (env KBVQA_CACHE_DIR)");
    sub->add_option("--workers", f.workers, "Parallel items for eval/ablate")->check(CLI::PositiveNumber);
    sub->add_option("--set", f.sets, "Pipeline config override key=value (repeatable)");
    sub->add_flag("-v,--verbose", f.verbose, "Log backend call counts");
  };
  const auto add_dataset = [&](CLI::App* sub) {
    sub->add_option("--questions", f.questions, "Questions JSON file")->required();
    sub->add_option("--annotations", f.annotations, "Annotations JSON file (omit for unscored runs)");
    sub->add_option("--images", f.images, "Image root directory")->required();
    sub->add_option("--format", f.format, "vqav2, okvqa or aokvqa");
    sub->add_option("--out", f.out_dir, "Output directory for reports");
  };

  auto* ask = app.add_subcommand("ask", "Answer one question about one image");
  ask->add_option("image", f.image, "Image path")->required();
  ask->add_option("question", f.question, "Question text")->required();
  ask->add_option("--trace", f.trace_file, "Write the full pipeline trace as JSON");
  add_common(ask);

  auto* ev = app.add_subcommand("eval", "Evaluate a benchmark split");
  add_dataset(ev);
  add_common(ev);

  auto* ab = app.add_subcommand("ablate", "Evaluate every point of a config grid");
  ab->add_option("--grid", f.grid, "Grid JSON file")->required();
  add_dataset(ab);
  add_common(ab);

  auto* cache = app.add_subcommand("cache", "Inspect or clear the response cache");
  cache->require_subcommand(1);
  auto* stats = cache->add_subcommand("stats", "Print entry count and size");
  auto* clear = cache->add_subcommand("clear", "Remove all entries");
  for (auto* sub : {stats, clear}) {
    sub->add_option("--cache-dir", f.cache_dir, "Response cache directory (env KBVQA_CACHE_DIR)");
    sub->add_option("--config", f.config_file, "JSON config file");
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    auto* active = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
    err << active->help();
    return kExitUsage;
  }

  try {
    if (ask->parsed()) return cmd_ask(f, out, err);
    if (ev->parsed()) return cmd_eval(f, out, err);
    if (ab->parsed()) return cmd_ablate(f, out, err);
    if (stats->parsed()) {
      const auto st = backends::CacheStore::stats(cache_dir_for(f));
      out << "entries: " << st.entries << "\nbytes: " << st.bytes << "\n";
      return kExitOk;
    }
    if (clear->parsed()) {
      const auto dir = cache_dir_for(f);
      backends::CacheStore::clear(dir);
      out << "cleared " << dir.string() << "\n";
      return kExitOk;
    }
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace kbvqa::cli
