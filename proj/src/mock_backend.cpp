#include "kbvqa/mock_backend.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "kbvqa/prompts.hpp"
#include "kbvqa/textrank.hpp"

namespace kbvqa::backends {

namespace {

constexpr std::uint64_t kFnvOffset = 1469598103934665603ULL;
constexpr std::uint64_t kFnvPrime = 1099511628211ULL;

std::uint64_t fnv1a(std::string_view s, std::uint64_t h = kFnvOffset) {
  for (unsigned char c : s) {
    h ^= c;
    h *= kFnvPrime;
  }
  return h;
}

// Order-sensitive mix of a seed with several strings.
std::uint64_t mix(std::uint64_t seed, std::initializer_list<std::string_view> parts) {
  std::uint64_t h = fnv1a(std::to_string(seed));
  for (auto p : parts) {
    h = fnv1a(p, h);
    h = fnv1a(std::string_view("\x1f", 1), h);
  }
  return h;
}

// mt19937_64 output is specified by the standard; the distributions are not,
// so doubles are derived from raw bits.
double unit(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }
double uniform(std::mt19937_64& rng, double lo, double hi) { return lo + (hi - lo) * unit(rng); }

bool contains(std::string_view haystack, std::string_view needle) {
  return needle.empty() || haystack.find(needle) != std::string_view::npos;
}

std::string image_identity(const nlohmann::json& image) {
  if (image.contains("path")) return image["path"].get<std::string>();
  return "base64:" + std::to_string(fnv1a(image.value("base64", std::string{})));
}

template <typename T>
T field(const nlohmann::json& obj, const char* key, T fallback) {
  if (!obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("mock script: bad value for '") + key + "': " + e.what());
  }
}

void reject_unknown(const nlohmann::json& obj, std::initializer_list<std::string_view> known,
                    std::string_view where) {
  if (!obj.is_object()) throw ConfigError("mock script: " + std::string(where) + " must be an object");
  for (const auto& [key, _] : obj.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw ConfigError("mock script: unknown key '" + key + "' in " + std::string(where));
    }
  }
}

std::vector<std::string> first_words(std::string_view text, std::size_t n) {
  std::istringstream in{std::string(text)};
  std::vector<std::string> out;
  std::string w;
  while (out.size() < n && in >> w) out.push_back(w);
  return out;
}

std::string join_words(const std::vector<std::string>& words) {
  std::string out;
  for (const auto& w : words) {
    if (!out.empty()) out.push_back(' ');
    out += w;
  }
  return out;
}

std::string strip_trailing_punct(std::string s) {
  while (!s.empty() && std::ispunct(static_cast<unsigned char>(s.back()))) s.pop_back();
  return s;
}

// Text following `label` up to the end of its line.
std::optional<std::string> line_after(std::string_view text, std::string_view label) {
  const auto pos = text.find(label);
  if (pos == std::string_view::npos) return std::nullopt;
  const auto start = pos + label.size();
  const auto end = text.find('\n', start);
  return std::string(text.substr(start, end == std::string_view::npos ? end : end - start));
}

std::string content_words(std::string_view text) {
  const auto& stop = textrank::StopWords::builtin();
  std::vector<std::string> kept;
  for (auto& t : textrank::normalize_tokens(text)) {
    if (!stop.contains(t)) kept.push_back(std::move(t));
  }
  return join_words(kept);
}

constexpr std::array<std::string_view, 10> kSubjects = {
    "a person", "a dog", "a red car", "a wooden table", "a group of people",
    "a cat", "a bicycle", "a plate of food", "a tall building", "a small boat"};
constexpr std::array<std::string_view, 6> kRelations = {
    "standing near", "sitting on", "next to", "in front of", "parked beside", "resting under"};
constexpr std::array<std::string_view, 7> kObjects = {
    "a window", "a tree", "the street", "a fence", "a bench", "the water", "a wall"};

}  // namespace

MockScript MockScript::from_json(const nlohmann::json& j) {
  reject_unknown(j, {"image_size", "ground", "captions", "chat", "embeddings"}, "script");
  MockScript s;
  if (j.contains("image_size")) {
    const auto& sz = j["image_size"];
    reject_unknown(sz, {"width", "height"}, "image_size");
    s.image_size = geometry::ImageSize{field(sz, "width", 0), field(sz, "height", 0)};
    if (!s.image_size->valid()) throw ConfigError("mock script: image_size must be positive");
  }
  for (const auto& r : j.value("ground", nlohmann::json::array())) {
    reject_unknown(r, {"prompt_contains", "image_contains", "detections"}, "ground rule");
    GroundRule rule{field(r, "prompt_contains", std::string{}), field(r, "image_contains", std::string{}), {}};
    for (const auto& d : r.value("detections", nlohmann::json::array())) {
      reject_unknown(d, {"box", "score", "label"}, "detection");
      const auto box = field(d, "box", std::vector<double>{});
      if (box.size() != 4) throw ConfigError("mock script: detection box needs 4 numbers");
      rule.detections.push_back({{box[0], box[1], box[2], box[3]}, field(d, "score", 0.0),
                                 field(d, "label", std::string{})});
    }
    s.ground.push_back(std::move(rule));
  }
  for (const auto& r : j.value("captions", nlohmann::json::array())) {
    reject_unknown(r, {"backend", "instruction_contains", "image_contains", "texts"}, "caption rule");
    s.captions.push_back({field(r, "backend", std::string{}), field(r, "instruction_contains", std::string{}),
                          field(r, "image_contains", std::string{}),
                          field(r, "texts", std::vector<std::string>{})});
  }
  for (const auto& r : j.value("chat", nlohmann::json::array())) {
    reject_unknown(r, {"prefix", "contains", "reply"}, "chat rule");
    s.chat.push_back({field(r, "prefix", std::string{}), field(r, "contains", std::string{}),
                      field(r, "reply", std::string{})});
  }
  if (j.contains("embeddings")) {
    for (const auto& [text, vec] : j["embeddings"].items()) {
      if (!vec.is_object() && !vec.is_array()) {
        throw ConfigError("mock script: embedding for '" + text + "' must be an object or array");
      }
      s.embeddings[text] = vec;
    }
  }
  return s;
}

MockScript MockScript::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open mock script " + path.string());
  auto j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ConfigError("mock script " + path.string() + " is not valid JSON");
  return from_json(j);
}

MockService::MockService(std::uint64_t seed, MockScript script, std::size_t dim)
    : seed_(seed), script_(std::move(script)), dim_(dim) {}

nlohmann::json MockService::invoke(const BackendRequest& request) {
  if (auto errors = validate_request(request.role, request.payload); !errors.empty()) {
    throw BackendError(BackendErrorKind::InvalidRequest, "mock rejected request: " + errors.front());
  }
  switch (request.role) {
    case Role::Embed: return embed(request.payload);
    case Role::Ground: return ground(request.payload);
    case Role::Caption: return caption(request.backend_id, request.payload);
    case Role::Chat: return chat(request.payload);
  }
  return {};
}

geometry::ImageSize MockService::image_size() const {
  return script_.image_size.value_or(geometry::ImageSize{640, 480});
}

std::vector<double> MockService::embed_text(const std::string& text) const {
  std::vector<double> v(dim_, 0.0);

  if (auto it = script_.embeddings.find(text); it != script_.embeddings.end()) {
    if (it->second.is_array()) {
      for (std::size_t i = 0; i < std::min(dim_, it->second.size()); ++i) v[i] = it->second[i].get<double>();
    } else {
      for (const auto& [idx, value] : it->second.items()) {
        const auto i = static_cast<std::size_t>(std::stoul(idx));
        if (i < dim_) v[i] = value.get<double>();
      }
    }
  } else {
    const auto& stop = textrank::StopWords::builtin();
    auto tokens = textrank::normalize_tokens(text);
    std::vector<std::string> content;
    std::copy_if(tokens.begin(), tokens.end(), std::back_inserter(content),
                 [&](const std::string& t) { return !stop.contains(t); });
    if (content.empty()) content = tokens;
    if (content.empty()) content.push_back("\x02" + text);

    for (const auto& tok : content) {
      std::mt19937_64 rng(mix(seed_, {"embed", tok}));
      for (auto& x : v) x += uniform(rng, -1.0, 1.0);
    }
  }

  double norm = 0.0;
  for (double x : v) norm += x * x;
  norm = std::sqrt(norm);
  if (norm > 0.0) {
    for (auto& x : v) x /= norm;
  }
  return v;
}

nlohmann::json MockService::embed(const nlohmann::json& payload) const {
  nlohmann::json data = nlohmann::json::array();
  for (const auto& text : payload["input"]) {
    data.push_back({{"embedding", embed_text(text.get<std::string>())}});
  }
  return {{"data", data}};
}

nlohmann::json MockService::ground(const nlohmann::json& payload) const {
  const std::string image = image_identity(payload["image"]);
  const std::string prompt = payload["prompt"].get<std::string>();
  const auto size = image_size();
  const nlohmann::json size_json = {{"width", size.width}, {"height", size.height}};

  for (const auto& rule : script_.ground) {
    if (!contains(prompt, rule.prompt_contains) || !contains(image, rule.image_contains)) continue;
    nlohmann::json dets = nlohmann::json::array();
    for (const auto& d : rule.detections) {
      dets.push_back({{"box", {d.box.x0, d.box.y0, d.box.x1, d.box.y1}}, {"score", d.score}, {"label", d.label}});
    }
    return {{"detections", dets}, {"image_size", size_json}};
  }

  nlohmann::json dets = nlohmann::json::array();
  std::string phrase;
  std::istringstream in(prompt);
  std::vector<std::string> phrases;
  for (std::string tok; in >> tok;) {
    if (tok == ".") {
      if (!phrase.empty()) phrases.push_back(phrase);
      phrase.clear();
    } else {
      phrase += (phrase.empty() ? "" : " ") + tok;
    }
  }
  if (!phrase.empty()) phrases.push_back(phrase);

  const double w = size.width, h = size.height;
  for (const auto& p : phrases) {
    std::mt19937_64 rng(mix(seed_, {"ground", image, p}));
    const auto count = rng() % 3;
    for (std::uint64_t i = 0; i < count; ++i) {
      const double bw = uniform(rng, 0.1, 0.6) * w;
      const double bh = uniform(rng, 0.1, 0.6) * h;
      const double x0 = uniform(rng, 0.0, w - bw);
      const double y0 = uniform(rng, 0.0, h - bh);
      const double score = uniform(rng, 0.05, 0.95);
      dets.push_back({{"box", {x0, y0, x0 + bw, y0 + bh}}, {"score", score}, {"label", p}});
    }
  }
  return {{"detections", dets}, {"image_size", size_json}};
}

nlohmann::json MockService::caption(const std::string& backend_id, const nlohmann::json& payload) const {
  const std::string image = image_identity(payload["image"]);
  const std::string instruction = payload["instruction"].get<std::string>();
  const int n = payload["n"].get<int>();
  const std::string region = payload.contains("region") ? payload["region"].dump() : "whole";

  for (const auto& rule : script_.captions) {
    if (!rule.backend.empty() && rule.backend != backend_id) continue;
    if (!contains(instruction, rule.instruction_contains) || !contains(image, rule.image_contains)) continue;
    std::vector<std::string> texts(rule.texts.begin(),
                                   rule.texts.begin() + std::min<std::size_t>(rule.texts.size(), n));
    return {{"captions", texts}};
  }

  const std::string_view lead = backend_id.find("blip") != std::string::npos ? "A photo of" : "The image shows";
  std::vector<std::string> texts;
  for (int i = 0; i < n; ++i) {
    std::mt19937_64 rng(mix(seed_, {"caption", backend_id, image, region, instruction, std::to_string(i)}));
    std::string text(lead);
    text += ' ';
    text += kSubjects[rng() % kSubjects.size()];
    text += ' ';
    text += kRelations[rng() % kRelations.size()];
    text += ' ';
    text += kObjects[rng() % kObjects.size()];
    text += '.';
    texts.push_back(std::move(text));
  }
  return {{"captions", texts}};
}

nlohmann::json MockService::chat(const nlohmann::json& payload) const {
  const std::string prompt = payload["messages"].back()["content"].get<std::string>();

  for (const auto& rule : script_.chat) {
    if (prompt.rfind(rule.prefix, 0) == 0 && contains(prompt, rule.contains)) return {{"content", rule.reply}};
  }

  const auto starts_with = [&](std::string_view p) { return prompt.rfind(p, 0) == 0; };
  std::string reply;
  if (starts_with(prompts::kClassifyInstruction)) {
    const auto question = line_after(prompt, "Question: ").value_or("");
    auto lowered = textrank::normalize_tokens(question);
    const bool counting = lowered.size() >= 2 && lowered[0] == "how" && lowered[1] == "many";
    reply = counting ? "counting" : "non-counting";
  } else if (starts_with(prompts::kDistillInstruction)) {
    const std::string question = prompt.substr(prompts::kDistillInstruction.size());
    reply = content_words(question);
    if (reply.empty()) reply = question;
  } else if (starts_with(prompts::kQaGenInstruction)) {
    const auto c1 = strip_trailing_punct(line_after(prompt, "Caption 1: ").value_or("something"));
    const auto c2 = strip_trailing_punct(line_after(prompt, "Caption 2: ").value_or(c1));
    reply = "(What is shown in the image?, " + join_words(first_words(c1, 4)) + ")\n" +
            "(What else can be seen?, " + join_words(first_words(c2, 4)) + ")";
  } else if (starts_with(prompts::kAnswerInstruction)) {
    // First QA answer if present, else the first content word of caption 1.
    std::istringstream in(prompt);
    for (std::string line; std::getline(in, line);) {
      const auto sep = line.find("?: ");
      if (sep != std::string::npos) {
        reply = line.substr(sep + 3);
        break;
      }
    }
    if (reply.empty()) {
      const auto words = textrank::normalize_tokens(content_words(line_after(prompt, "Caption 1: ").value_or("")));
      reply = words.empty() ? "yes" : words.front();
    }
  } else {
    reply = "ok";
  }
  return {{"content", reply}};
}

}  // namespace kbvqa::backends
