#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "relclass/labels.hpp"

namespace relclass {

struct TokenAnnotation {
  std::string text;
  std::string lemma;
  std::string pos;

  bool operator==(const TokenAnnotation&) const = default;
};

// Inclusive token-index range.
struct TokenSpan {
  std::size_t first = 0;
  std::size_t last = 0;

  std::size_t length() const { return last - first + 1; }
  bool operator==(const TokenSpan&) const = default;
};

enum class Subtask : std::uint8_t { Clean, Noisy };  // "1.1", "1.2"

struct RelationInstance {
  std::string id;
  std::vector<TokenAnnotation> tokens;
  TokenSpan e1;
  TokenSpan e2;
  std::optional<Label> label;
  bool reverse = false;
  Subtask subtask = Subtask::Clean;

  // Semantic roles. reverse=true means the start entity is e2.
  const TokenSpan& start_entity() const { return reverse ? e2 : e1; }
  const TokenSpan& end_entity() const { return reverse ? e1 : e2; }

  std::span<const TokenAnnotation> span_tokens(const TokenSpan& s) const {
    return std::span<const TokenAnnotation>(tokens).subspan(s.first, s.length());
  }

  bool operator==(const RelationInstance&) const = default;
};

class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, const std::string& what);
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class ValidationError : public std::runtime_error {
 public:
  ValidationError(std::string id, const std::string& what);
  const std::string& instance_id() const { return id_; }

 private:
  std::string id_;
};

std::string_view subtask_name(Subtask subtask);

// Universal POS inventory accepted in corpus files (Universal Dependencies
// tags plus SPACE, which common taggers emit for whitespace tokens).
bool is_known_pos(std::string_view tag);

// Throws ValidationError if any RelationInstance invariant is violated.
void validate(const RelationInstance& inst);

// JSON-lines corpus. Blank lines are skipped; line numbers are 1-based.
std::vector<RelationInstance> parse_corpus(std::istream& in);
std::vector<RelationInstance> parse_corpus(const std::filesystem::path& path);

RelationInstance parse_instance(std::string_view json_line, std::size_t line_number = 1);

// One JSON object, no trailing newline. Key order is fixed.
std::string serialize_instance(const RelationInstance& inst);

void write_corpus(std::ostream& out, std::span<const RelationInstance> instances);

// Tokens strictly between the two entity spans, in surface order.
std::span<const TokenAnnotation> extract_context(const RelationInstance& inst);

// Lemma -> number of occurrences in relation contexts.
class FrequencyTable {
 public:
  FrequencyTable() = default;
  explicit FrequencyTable(std::map<std::string, std::size_t> counts);

  void add(const std::string& lemma, std::size_t n = 1);
  std::size_t count(const std::string& lemma) const;
  std::size_t size() const { return counts_.size(); }
  bool empty() const { return counts_.empty(); }
  const std::map<std::string, std::size_t>& counts() const { return counts_; }

  bool operator==(const FrequencyTable&) const = default;

 private:
  std::map<std::string, std::size_t> counts_;
};

inline constexpr std::size_t kDefaultMinLemmaCount = 5;

FrequencyTable build_lemma_counts(std::span<const RelationInstance> instances);

// Keeps the tokens whose lemma occurs at least `threshold` times in `freq`.
std::vector<TokenAnnotation> filter_context(std::span<const TokenAnnotation> context,
                                            const FrequencyTable& freq,
                                            std::size_t threshold = kDefaultMinLemmaCount);

// ASCII lowercase; other bytes are passed through.
std::string to_lower(std::string_view s);

// Space-joined surface text of a span.
std::string span_text(const RelationInstance& inst, const TokenSpan& span);

}  // namespace relclass
