#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "kbvqa/embedding.hpp"
#include "kbvqa/roles.hpp"

namespace kbvqa::textrank {

struct Keyword {
  std::string phrase;
  double score = 0.0;

  friend bool operator==(const Keyword&, const Keyword&) = default;
};

/// A generated caption. `score` is filled in by rank_captions.
struct Caption {
  std::string text;
  std::string source;
  std::optional<int> region_index;
  std::optional<double> score;

  friend bool operator==(const Caption&, const Caption&) = default;
};

/// Set of lowercase words that never form a keyword on their own.
class StopWords {
 public:
  StopWords() = default;

  // One word per line; blank lines and lines starting with '#' are skipped.
  static StopWords parse(std::string_view text);
  static StopWords load(const std::string& path);
  // The list shipped in data/stopwords.txt, compiled in.
  static const StopWords& builtin();

  bool contains(std::string_view word) const { return words_.count(std::string(word)) > 0; }
  std::size_t size() const noexcept { return words_.size(); }

 private:
  std::unordered_set<std::string> words_;
};

/// Cosine similarity clamped to [-1, 1]. Returns 0 when either vector is zero.
/// Throws std::invalid_argument on a dimension mismatch.
double cosine(const EmbeddingVector& a, const EmbeddingVector& b);

// Lowercased, punctuation-stripped whitespace tokens.
std::vector<std::string> normalize_tokens(std::string_view text);

/// Contiguous 1..max_n-grams over the normalized question, skipping phrases
/// made only of stop-words. First occurrence wins on duplicates.
std::vector<std::string> ngram_candidates(std::string_view question, int max_n,
                                          const StopWords& stop_words = StopWords::builtin());

/// Embedding-similarity keyword selection.
///
/// The raw question and every candidate phrase are embedded in one batch.
/// Candidates scoring strictly above `threshold` are returned best first (ties
/// keep candidate order). When none pass, the single best candidate is
/// returned so a grounding prompt can still be formed. No candidates, no
/// keywords.
std::vector<Keyword> extract_keywords(std::string_view question, Embedder& embedder,
                                      double threshold, int max_n,
                                      const StopWords& stop_words = StopWords::builtin());

// "phrase one . phrase two ." in the given order; empty input gives "".
std::string build_grounding_prompt(std::span<const Keyword> keywords);

/// Scores every caption against the distilled question and returns the `k`
/// best, highest first, ties by original position. Returned captions carry
/// their score.
std::vector<Caption> rank_captions(std::string_view distilled_question,
                                   std::span<const Caption> captions, Embedder& embedder,
                                   std::size_t k);

}  // namespace kbvqa::textrank
