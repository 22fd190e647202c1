#include "relclass/corpus.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <fstream>
#include <istream>
#include <ostream>

#include <fmt/format.h>

#include "json.hpp"

namespace relclass {

using ordered_json = nlohmann::ordered_json;

ParseError::ParseError(std::size_t line, const std::string& what)
    : std::runtime_error(fmt::format("line {}: {}", line, what)), line_(line) {}

ValidationError::ValidationError(std::string id, const std::string& what)
    : std::runtime_error(fmt::format("instance '{}': {}", id, what)), id_(std::move(id)) {}

std::string_view subtask_name(Subtask subtask) {
  return subtask == Subtask::Clean ? "1.1" : "1.2";
}

bool is_known_pos(std::string_view tag) {
  static constexpr std::array<std::string_view, 18> kTags{
      "ADJ", "ADP",  "ADV",  "AUX",   "CCONJ", "DET",   "INTJ", "NOUN", "NUM",
      "PART", "PRON", "PROPN", "PUNCT", "SCONJ", "SYM", "VERB", "X",    "SPACE"};
  return std::find(kTags.begin(), kTags.end(), tag) != kTags.end();
}

void validate(const RelationInstance& inst) {
  const auto fail = [&](const std::string& msg) { throw ValidationError(inst.id, msg); };
  if (inst.id.empty()) fail("empty id");
  const std::size_t n = inst.tokens.size();
  for (std::size_t i = 0; i < n; ++i) {
    const auto& t = inst.tokens[i];
    if (t.text.empty()) fail(fmt::format("token {} has empty text", i));
    if (t.lemma.empty()) fail(fmt::format("token {} has empty lemma", i));
    if (!is_known_pos(t.pos)) fail(fmt::format("token {} has unknown POS tag '{}'", i, t.pos));
  }
  if (inst.e1.first > inst.e1.last) fail("e1 start after end");
  if (inst.e2.first > inst.e2.last) fail("e2 start after end");
  if (inst.e2.first <= inst.e1.last) fail("e2 must start after e1 ends");
  if (inst.e2.last >= n) fail(fmt::format("e2 end {} out of range for {} tokens", inst.e2.last, n));
}

namespace {

TokenSpan read_span(const ordered_json& j, const char* key) {
  const auto& arr = j.at(key);
  if (!arr.is_array() || arr.size() != 2) {
    throw std::runtime_error(fmt::format("'{}' must be a [start, end] pair", key));
  }
  const auto a = arr[0].get<long long>();
  const auto b = arr[1].get<long long>();
  if (a < 0 || b < 0) throw std::runtime_error(fmt::format("'{}' has a negative index", key));
  return {static_cast<std::size_t>(a), static_cast<std::size_t>(b)};
}

}  // namespace

RelationInstance parse_instance(std::string_view json_line, std::size_t line_number) {
  RelationInstance inst;
  try {
    const auto j = ordered_json::parse(json_line);
    if (!j.is_object()) throw std::runtime_error("record is not a JSON object");
    inst.id = j.at("id").get<std::string>();
    for (const auto& tok : j.at("tokens")) {
      inst.tokens.push_back({tok.at("text").get<std::string>(), tok.at("lemma").get<std::string>(),
                             tok.at("pos").get<std::string>()});
    }
    inst.e1 = read_span(j, "e1");
    inst.e2 = read_span(j, "e2");
    const auto& label = j.at("label");
    if (!label.is_null()) {
      const auto name = label.get<std::string>();
      inst.label = parse_label(name);
      if (!inst.label) throw std::runtime_error(fmt::format("unknown label '{}'", name));
    }
    inst.reverse = j.at("reverse").get<bool>();
    const auto subtask = j.at("subtask").get<std::string>();
    if (subtask == "1.1") {
      inst.subtask = Subtask::Clean;
    } else if (subtask == "1.2") {
      inst.subtask = Subtask::Noisy;
    } else {
      throw std::runtime_error(fmt::format("unknown subtask '{}'", subtask));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(line_number, e.what());
  } catch (const std::runtime_error& e) {
    throw ParseError(line_number, e.what());
  }
  validate(inst);
  return inst;
}

std::vector<RelationInstance> parse_corpus(std::istream& in) {
  std::vector<RelationInstance> out;
  std::string line;
  std::size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); })) {
      continue;
    }
    out.push_back(parse_instance(line, line_number));
  }
  return out;
}

std::vector<RelationInstance> parse_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(fmt::format("cannot open corpus '{}'", path.string()));
  return parse_corpus(in);
}

std::string serialize_instance(const RelationInstance& inst) {
  ordered_json j;
  j["id"] = inst.id;
  auto tokens = ordered_json::array();
  for (const auto& t : inst.tokens) {
    ordered_json tok;
    tok["text"] = t.text;
    tok["lemma"] = t.lemma;
    tok["pos"] = t.pos;
    tokens.push_back(std::move(tok));
  }
  j["tokens"] = std::move(tokens);
  j["e1"] = {inst.e1.first, inst.e1.last};
  j["e2"] = {inst.e2.first, inst.e2.last};
  j["label"] = inst.label ? ordered_json(std::string(label_name(*inst.label))) : ordered_json(nullptr);
  j["reverse"] = inst.reverse;
  j["subtask"] = std::string(subtask_name(inst.subtask));
  return j.dump();
}

void write_corpus(std::ostream& out, std::span<const RelationInstance> instances) {
  for (const auto& inst : instances) out << serialize_instance(inst) << '\n';
}

std::span<const TokenAnnotation> extract_context(const RelationInstance& inst) {
  const std::size_t begin = inst.e1.last + 1;
  return std::span<const TokenAnnotation>(inst.tokens).subspan(begin, inst.e2.first - begin);
}

FrequencyTable::FrequencyTable(std::map<std::string, std::size_t> counts) : counts_(std::move(counts)) {
  std::erase_if(counts_, [](const auto& kv) { return kv.second == 0; });
}

void FrequencyTable::add(const std::string& lemma, std::size_t n) {
  if (n > 0) counts_[lemma] += n;
}

std::size_t FrequencyTable::count(const std::string& lemma) const {
  const auto it = counts_.find(lemma);
  return it == counts_.end() ? 0 : it->second;
}

FrequencyTable build_lemma_counts(std::span<const RelationInstance> instances) {
  FrequencyTable table;
  for (const auto& inst : instances) {
    for (const auto& tok : extract_context(inst)) table.add(tok.lemma);
  }
  return table;
}

std::vector<TokenAnnotation> filter_context(std::span<const TokenAnnotation> context,
                                            const FrequencyTable& freq, std::size_t threshold) {
  if (threshold == 0) throw std::invalid_argument("filter_context: threshold must be >= 1");
  std::vector<TokenAnnotation> kept;
  for (const auto& tok : context) {
    if (freq.count(tok.lemma) >= threshold) kept.push_back(tok);
  }
  return kept;
}

std::string to_lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  }
  return out;
}

std::string span_text(const RelationInstance& inst, const TokenSpan& span) {
  std::string out;
  for (const auto& tok : inst.span_tokens(span)) {
    if (!out.empty()) out += ' ';
    out += tok.text;
  }
  return out;
}

}  // namespace relclass
