#include "kbvqa/prompts.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <regex>
#include <sstream>

namespace kbvqa::prompts {

std::string_view to_string(QuestionKind kind) noexcept {
  return kind == QuestionKind::Counting ? "counting" : "non-counting";
}

std::vector<std::string> fill_caption_slots(std::span<const std::string> captions) {
  std::vector<std::string> slots(captions.begin(), captions.end());
  if (!slots.empty()) {
    while (slots.size() < 3) slots.push_back(slots.back());
  }
  return slots;
}

std::string build_distill_prompt(std::string_view question) {
  std::string out(kDistillInstruction);
  out.push_back(' ');
  out += question;
  return out;
}

std::string build_qa_gen_prompt(std::span<const std::string> captions) {
  const auto slots = fill_caption_slots(captions);
  std::string out(kQaGenInstruction);
  for (std::size_t i = 0; i < slots.size(); ++i) {
    out += "\nCaption " + std::to_string(i + 1) + ": " + slots[i];
    out += (i + 1 == slots.size()) ? "." : ",";
  }
  return out;
}

std::string build_qa_gen_prompt(std::string_view c1, std::string_view c2, std::string_view c3) {
  const std::array<std::string, 3> caps{std::string(c1), std::string(c2), std::string(c3)};
  return build_qa_gen_prompt(std::span<const std::string>(caps));
}

std::string build_answer_prompt(std::string_view question, std::span<const std::string> captions,
                                std::span<const QAPair> pairs) {
  const auto slots = fill_caption_slots(captions);
  std::string out(kAnswerInstruction);
  for (std::size_t i = 0; i < slots.size(); ++i) {
    out += "\nCaption " + std::to_string(i + 1) + ": " + slots[i];
  }
  for (const auto& p : pairs) {
    out += "\n" + p.question + ": " + p.answer;
  }
  out += "\nQuestion: ";
  out += question;
  out += "\nAnswer:";
  return out;
}

std::string build_classify_prompt(std::string_view question) {
  std::string out(kClassifyInstruction);
  out += "\nQuestion: ";
  out += question;
  return out;
}

namespace {

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

struct Found {
  std::size_t pos;
  QAPair pair;
};

bool is_format_echo(const QAPair& p) {
  return lower(p.question) == "question" && lower(p.answer) == "answer";
}

// "(What is on the tray?, Cake)". Splits after the last '?' when present,
// otherwise at the first comma.
void scan_parenthesized(const std::string& text, std::vector<Found>& out) {
  static const std::regex paren(R"(\(([^()\n]+)\))");
  for (auto it = std::sregex_iterator(text.begin(), text.end(), paren); it != std::sregex_iterator();
       ++it) {
    const std::string body = (*it)[1].str();
    std::size_t split = std::string::npos;
    const auto qmark = body.rfind('?');
    if (qmark != std::string::npos) {
      const auto comma = body.find(',', qmark);
      if (comma != std::string::npos && trim(body.substr(qmark + 1, comma - qmark - 1)).empty()) {
        split = comma;
      }
    }
    if (split == std::string::npos) split = body.find(',');
    if (split == std::string::npos) continue;
    QAPair p{trim(body.substr(0, split)), trim(body.substr(split + 1))};
    if (p.question.empty() || p.answer.empty() || is_format_echo(p)) continue;
    out.push_back({static_cast<std::size_t>(it->position(0)), std::move(p)});
  }
}

// Line-oriented forms. Markdown emphasis and list numbering are ignored.
void scan_labelled_lines(const std::string& text, std::vector<Found>& out) {
  static const std::regex same_line(
      R"(^(?:Q(?:uestion)?\s*\d*\s*[:.)-])\s*(.+?)\s+(?:A(?:nswer)?\s*\d*\s*:)\s*(.+)$)",
      std::regex::icase);
  static const std::regex q_only(R"(^(?:Q(?:uestion)?\s*\d*\s*[:.)-])\s*(.+)$)", std::regex::icase);
  static const std::regex a_only(R"(^(?:A(?:nswer)?\s*\d*\s*[:.)-])\s*(.+)$)", std::regex::icase);
  static const std::regex qa_prose(R"(^QA\s*\d*\s*[:.)-]\s*(.+\?)\s*(.+)$)", std::regex::icase);
  static const std::regex list_prefix(R"(^(?:\d+[.)]|[-*])\s+)");

  std::optional<std::pair<std::size_t, std::string>> pending;
  std::size_t offset = 0;
  std::istringstream in(text);
  std::string raw;
  while (std::getline(in, raw)) {
    const std::size_t line_pos = offset;
    offset += raw.size() + 1;

    std::string line = raw;
    line.erase(std::remove(line.begin(), line.end(), '*'), line.end());
    line = std::regex_replace(trim(line), list_prefix, "");
    if (line.empty() || line.front() == '(') continue;

    std::smatch m;
    if (std::regex_match(line, m, qa_prose) || std::regex_match(line, m, same_line)) {
      QAPair p{trim(m[1].str()), trim(m[2].str())};
      if (!p.question.empty() && !p.answer.empty()) out.push_back({line_pos, std::move(p)});
      pending.reset();
    } else if (std::regex_match(line, m, a_only)) {
      if (pending) {
        QAPair p{pending->second, trim(m[1].str())};
        if (!p.answer.empty()) out.push_back({pending->first, std::move(p)});
      }
      pending.reset();
    } else if (std::regex_match(line, m, q_only)) {
      pending = std::make_pair(line_pos, trim(m[1].str()));
    }
  }
}

}  // namespace

std::vector<QAPair> parse_qa_pairs(std::string_view llm_output, std::size_t max_pairs) {
  const std::string text(llm_output);
  std::vector<Found> found;
  scan_parenthesized(text, found);
  scan_labelled_lines(text, found);
  std::stable_sort(found.begin(), found.end(),
                   [](const Found& a, const Found& b) { return a.pos < b.pos; });

  std::vector<QAPair> pairs;
  for (auto& f : found) {
    if (pairs.size() >= max_pairs) break;
    pairs.push_back(std::move(f.pair));
  }
  if (pairs.empty()) throw QaParseError(text);
  return pairs;
}

QuestionKind parse_classification(std::string_view llm_output) noexcept {
  const std::string s = lower(llm_output);
  for (std::string_view neg : {"non-counting", "non counting", "noncounting"}) {
    if (s.find(neg) != std::string::npos) return QuestionKind::NonCounting;
  }
  if (s.find("counting") != std::string::npos) return QuestionKind::Counting;
  return QuestionKind::NonCounting;
}

namespace {

constexpr std::array<std::string_view, 21> kNumberWords = {
    "zero", "one",    "two",    "three",    "four",     "five",    "six",
    "seven", "eight", "nine",   "ten",      "eleven",   "twelve",  "thirteen",
    "fourteen", "fifteen", "sixteen", "seventeen", "eighteen", "nineteen", "twenty"};

std::string strip_terminal_punct(std::string s) {
  while (!s.empty()) {
    const auto c = static_cast<unsigned char>(s.back());
    if (std::isspace(c) || (c < 0x80 && std::ispunct(c))) {
      s.pop_back();
    } else {
      break;
    }
  }
  return s;
}

std::string normalize_once(std::string_view raw) {
  std::string s = strip_terminal_punct(trim(lower(raw)));
  std::istringstream in(s);
  std::string token, out;
  while (in >> token) {
    if (token == "a" || token == "an" || token == "the") continue;
    for (std::size_t i = 0; i < kNumberWords.size(); ++i) {
      if (token == kNumberWords[i]) {
        token = std::to_string(i);
        break;
      }
    }
    if (!out.empty()) out.push_back(' ');
    out += token;
  }
  return strip_terminal_punct(std::move(out));
}

}  // namespace

std::string normalize_answer(std::string_view raw) {
  // Dropping an article can expose new terminal punctuation ("x. the"), so
  // iterate to a fixed point.
  std::string current = normalize_once(raw);
  for (;;) {
    std::string next = normalize_once(current);
    if (next == current) return current;
    current = std::move(next);
  }
}

}  // namespace kbvqa::prompts
