#pragma once

#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace kbvqa::prompts {

struct QAPair {
  std::string question;
  std::string answer;

  friend bool operator==(const QAPair&, const QAPair&) = default;
};

enum class QuestionKind { Counting, NonCounting };

std::string_view to_string(QuestionKind kind) noexcept;

inline constexpr std::string_view kDistillInstruction =
    "Determine the main idea of this question in short:";
inline constexpr std::string_view kQaGenInstruction =
    "Generate two (Question, Answer) pairs for the following captions in the format "
    "(Question, Answer):";
inline constexpr std::string_view kAnswerInstruction =
    "Infer an answer for the following question based on the provided pieces of information "
    "and formatted Question-Answer pairs:";
inline constexpr std::string_view kClassifyInstruction =
    "Classify the following question as \"counting\" or \"non-counting\". Answer with exactly "
    "one word.";

/// Caption slots used by the QA-generation and answer templates: one or two
/// captions are padded to three by repeating the last one; zero stays zero;
/// more than three are kept as-is.
std::vector<std::string> fill_caption_slots(std::span<const std::string> captions);

std::string build_distill_prompt(std::string_view question);

/// QA-pair generation prompt. Slot i renders as "Caption i: <text>", joined
/// by ",\n" and closed with ".".
std::string build_qa_gen_prompt(std::span<const std::string> captions);
std::string build_qa_gen_prompt(std::string_view c1, std::string_view c2, std::string_view c3);

/// Final answer prompt: instruction, caption lines, "Q: A" lines, then
/// "Question: <q>\nAnswer:". Empty caption or pair lists omit their lines.
std::string build_answer_prompt(std::string_view question, std::span<const std::string> captions,
                                std::span<const QAPair> pairs);

std::string build_classify_prompt(std::string_view question);

class QaParseError : public std::runtime_error {
 public:
  explicit QaParseError(std::string raw)
      : std::runtime_error("no (Question, Answer) pairs found in model output"),
        raw_(std::move(raw)) {}
  const std::string& raw_output() const noexcept { return raw_; }

 private:
  std::string raw_;
};

/// Extracts up to `max_pairs` pairs in appearance order. Accepts
/// "(Question?, Answer)", "Q: ... A: ...", "Q1: ... A1: ...",
/// "Question: ... Answer: ..." and "QA1: Question? Answer" forms.
/// Throws QaParseError when nothing parses.
std::vector<QAPair> parse_qa_pairs(std::string_view llm_output, std::size_t max_pairs = 2);

// Total: anything unrecognised is NonCounting.
QuestionKind parse_classification(std::string_view llm_output) noexcept;

/// Reduced VQA answer normalization: lowercase, trim, drop terminal
/// punctuation and the articles a/an/the, number words zero..twenty to
/// digits, collapse spaces. Idempotent.
std::string normalize_answer(std::string_view raw);

}  // namespace kbvqa::prompts
