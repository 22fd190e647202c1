#include "relclass/embeddings.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>

#include <fmt/format.h>

#include "relclass/kernels.hpp"

namespace relclass {

EmbeddingFormatError::EmbeddingFormatError(std::size_t line, const std::string& what)
    : std::runtime_error(fmt::format("embeddings line {}: {}", line, what)), line_(line) {}

EmbeddingTable::EmbeddingTable(std::string name, std::size_t dim) : name_(std::move(name)), dim_(dim) {
  if (dim == 0) throw std::invalid_argument("embedding dimension must be positive");
}

void EmbeddingTable::insert(std::string token, std::span<const double> values) {
  if (values.size() != dim_) {
    throw std::invalid_argument(fmt::format("vector for '{}' has {} values, expected {}", token,
                                            values.size(), dim_));
  }
  if (index_.contains(token)) throw std::invalid_argument(fmt::format("duplicate token '{}'", token));
  index_.emplace(token, tokens_.size());
  tokens_.push_back(std::move(token));
  values_.insert(values_.end(), values.begin(), values.end());
}

bool EmbeddingTable::contains(std::string_view token) const { return index_.find(token) != index_.end(); }

std::span<const double> EmbeddingTable::find(std::string_view token) const {
  const auto it = index_.find(token);
  if (it == index_.end()) return {};
  return std::span<const double>(values_).subspan(it->second * dim_, dim_);
}

namespace {

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
    if (j > i) fields.push_back(line.substr(i, j - i));
    i = j;
  }
  return fields;
}

template <typename T>
bool parse_number(std::string_view s, T& out) {
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end;
}

}  // namespace

EmbeddingTable load_table(std::istream& in, std::string name) {
  std::string line;
  std::size_t line_number = 0;
  std::size_t declared_count = 0;
  bool has_header = false;
  std::optional<EmbeddingTable> table;
  std::size_t dim = 0;

  while (std::getline(in, line)) {
    ++line_number;
    const auto fields = split_ws(line);
    if (fields.empty()) continue;
    if (!table && !has_header && fields.size() == 2) {
      std::size_t count = 0;
      std::size_t d = 0;
      if (parse_number(fields[0], count) && parse_number(fields[1], d)) {
        if (d == 0) throw EmbeddingFormatError(line_number, "header declares dimension 0");
        has_header = true;
        declared_count = count;
        dim = d;
        continue;
      }
    }
    if (fields.size() < 2) throw EmbeddingFormatError(line_number, "row has no values");
    const std::size_t row_dim = fields.size() - 1;
    if (dim == 0) dim = row_dim;
    if (row_dim != dim) {
      throw EmbeddingFormatError(line_number,
                                 fmt::format("row has {} values, expected {}", row_dim, dim));
    }
    std::vector<double> values(dim);
    for (std::size_t k = 0; k < dim; ++k) {
      if (!parse_number(fields[k + 1], values[k]) || !std::isfinite(values[k])) {
        throw EmbeddingFormatError(line_number, fmt::format("bad number '{}'", fields[k + 1]));
      }
    }
    if (!table) table.emplace(name, dim);
    if (table->contains(fields[0])) {
      throw EmbeddingFormatError(line_number, fmt::format("duplicate token '{}'", fields[0]));
    }
    table->insert(std::string(fields[0]), values);
  }
  if (!table) throw EmbeddingFormatError(std::max<std::size_t>(line_number, 1), "no embedding rows");
  if (has_header && declared_count != table->size()) {
    throw EmbeddingFormatError(line_number, fmt::format("header declares {} rows, found {}",
                                                        declared_count, table->size()));
  }
  return std::move(*table);
}

EmbeddingTable load_table(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(fmt::format("cannot open embeddings '{}'", path.string()));
  return load_table(in, path.stem().string());
}

void write_table(std::ostream& out, const EmbeddingTable& table) {
  out << table.size() << ' ' << table.dim() << '\n';
  for (const auto& token : table.tokens()) {
    out << token;
    for (double v : table.find(token)) out << ' ' << fmt::format("{}", v);
    out << '\n';
  }
}

DenseVector lookup(const EmbeddingTable& table, std::string_view token) {
  const auto row = table.find(token);
  if (row.empty()) return DenseVector(table.dim(), 0.0);
  return DenseVector(row.begin(), row.end());
}

DenseVector context_vector(const EmbeddingTable& table, std::span<const std::string> tokens) {
  DenseVector mean(table.dim(), 0.0);
  if (tokens.empty()) return mean;
  for (const auto& t : tokens) {
    const auto row = table.find(t);
    if (!row.empty()) kernels::axpy(1.0, row, mean);
  }
  const double inv = 1.0 / static_cast<double>(tokens.size());
  for (double& v : mean) v *= inv;
  return mean;
}

DenseVector phrase_vector(const EmbeddingTable& table, std::span<const std::string> tokens) {
  if (tokens.empty()) throw std::invalid_argument("phrase_vector: empty phrase");
  return context_vector(table, tokens);
}

double cosine(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) throw std::invalid_argument("cosine: length mismatch");
  const double nu = kernels::dot(u, u);
  const double nv = kernels::dot(v, v);
  if (nu == 0.0 || nv == 0.0) return 0.0;
  const double c = kernels::dot(u, v) / (std::sqrt(nu) * std::sqrt(nv));
  return std::clamp(c, -1.0, 1.0);
}

}  // namespace relclass
