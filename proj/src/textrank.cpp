#include "kbvqa/textrank.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include "resources.hpp"

namespace kbvqa::textrank {

StopWords StopWords::parse(std::string_view text) {
  StopWords sw;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && std::isspace(static_cast<unsigned char>(line.back()))) line.pop_back();
    std::size_t start = 0;
    while (start < line.size() && std::isspace(static_cast<unsigned char>(line[start]))) ++start;
    line.erase(0, start);
    if (line.empty() || line.front() == '#') continue;
    std::transform(line.begin(), line.end(), line.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    sw.words_.insert(line);
  }
  return sw;
}

StopWords StopWords::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open stop-word file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

const StopWords& StopWords::builtin() {
  static const StopWords words = parse(resources::get("stopwords.txt"));
  return words;
}

double cosine(const EmbeddingVector& a, const EmbeddingVector& b) {
  if (a.dim() != b.dim()) {
    throw std::invalid_argument("cosine: dimension mismatch " + std::to_string(a.dim()) + " vs " +
                                std::to_string(b.dim()));
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.dim(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

std::vector<std::string> normalize_tokens(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      if (!current.empty()) tokens.push_back(std::move(current));
      current.clear();
    } else if (c < 0x80 && std::ispunct(c)) {
      continue;
    } else {
      current.push_back(static_cast<char>(c < 0x80 ? std::tolower(c) : c));
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

std::vector<std::string> ngram_candidates(std::string_view question, int max_n,
                                          const StopWords& stop_words) {
  if (max_n < 1) throw std::invalid_argument("ngram_candidates: max_n must be >= 1");
  const auto tokens = normalize_tokens(question);

  std::vector<std::string> out;
  std::unordered_set<std::string> seen;
  for (std::size_t start = 0; start < tokens.size(); ++start) {
    bool all_stop = true;
    std::string phrase;
    for (std::size_t n = 1; n <= static_cast<std::size_t>(max_n) && start + n <= tokens.size(); ++n) {
      const auto& tok = tokens[start + n - 1];
      if (n > 1) phrase.push_back(' ');
      phrase += tok;
      all_stop = all_stop && stop_words.contains(tok);
      if (all_stop) continue;
      if (seen.insert(phrase).second) out.push_back(phrase);
    }
  }
  return out;
}

std::vector<Keyword> extract_keywords(std::string_view question, Embedder& embedder,
                                      double threshold, int max_n, const StopWords& stop_words) {
  const auto candidates = ngram_candidates(question, max_n, stop_words);
  if (candidates.empty()) return {};

  std::vector<std::string> texts;
  texts.reserve(candidates.size() + 1);
  texts.emplace_back(question);
  texts.insert(texts.end(), candidates.begin(), candidates.end());
  const auto vectors = embedder.embed(texts);
  if (vectors.size() != texts.size()) {
    throw std::runtime_error("embedder returned " + std::to_string(vectors.size()) +
                             " vectors for " + std::to_string(texts.size()) + " inputs");
  }

  std::vector<Keyword> scored;
  scored.reserve(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    scored.push_back({candidates[i], cosine(vectors[0], vectors[i + 1])});
  }

  std::vector<Keyword> selected;
  std::copy_if(scored.begin(), scored.end(), std::back_inserter(selected),
               [&](const Keyword& k) { return k.score > threshold; });
  if (selected.empty()) {
    // max_element returns the first of equal maxima, i.e. candidate order.
    auto best = std::max_element(scored.begin(), scored.end(),
                                 [](const Keyword& a, const Keyword& b) { return a.score < b.score; });
    return {*best};
  }
  std::stable_sort(selected.begin(), selected.end(),
                   [](const Keyword& a, const Keyword& b) { return a.score > b.score; });
  return selected;
}

std::string build_grounding_prompt(std::span<const Keyword> keywords) {
  std::string prompt;
  for (const auto& k : keywords) {
    if (!prompt.empty()) prompt.push_back(' ');
    prompt += k.phrase;
    prompt += " .";
  }
  return prompt;
}

std::vector<Caption> rank_captions(std::string_view distilled_question,
                                   std::span<const Caption> captions, Embedder& embedder,
                                   std::size_t k) {
  if (k == 0 || captions.empty()) return {};

  std::vector<std::string> texts;
  texts.reserve(captions.size() + 1);
  texts.emplace_back(distilled_question);
  for (const auto& c : captions) texts.push_back(c.text);
  const auto vectors = embedder.embed(texts);
  if (vectors.size() != texts.size()) {
    throw std::runtime_error("embedder returned " + std::to_string(vectors.size()) +
                             " vectors for " + std::to_string(texts.size()) + " inputs");
  }

  std::vector<Caption> scored(captions.begin(), captions.end());
  for (std::size_t i = 0; i < scored.size(); ++i) {
    scored[i].score = cosine(vectors[0], vectors[i + 1]);
  }
  std::stable_sort(scored.begin(), scored.end(),
                   [](const Caption& a, const Caption& b) { return *a.score > *b.score; });
  scored.resize(std::min(k, scored.size()));
  return scored;
}

}  // namespace kbvqa::textrank
