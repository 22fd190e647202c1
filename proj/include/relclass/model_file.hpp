#pragma once

// Versioned, self-describing model container:
//
//   "RELCLSMD"             8-byte magic
//   u32 format version
//   u32 + bytes            model kind ("svm", "clstm")
//   u64 + bytes            JSON metadata (insertion-ordered)
//   u32                    tensor count
//   per tensor: u32 + name, u8 dtype (1 = f64, 2 = u32), u32 rank,
//               u64 dims[rank], little-endian payload
//
// Loading then saving reproduces the input bytes exactly.

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace relclass {

class ModelFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class DType : std::uint8_t { F64 = 1, U32 = 2 };

struct Tensor {
  std::string name;
  DType dtype = DType::F64;
  std::vector<std::uint64_t> shape;
  std::vector<double> f64;
  std::vector<std::uint32_t> u32;

  std::size_t element_count() const;
};

class ModelFile {
 public:
  static constexpr std::uint32_t kFormatVersion = 1;

  ModelFile() = default;
  explicit ModelFile(std::string kind) : kind_(std::move(kind)) {}

  const std::string& kind() const { return kind_; }
  nlohmann::ordered_json& meta() { return meta_; }
  const nlohmann::ordered_json& meta() const { return meta_; }

  void add(std::string name, std::vector<std::uint64_t> shape, std::span<const double> data);
  void add(std::string name, std::vector<std::uint64_t> shape, std::span<const std::uint32_t> data);

  bool has(std::string_view name) const;
  // Throws ModelFormatError if missing or of another dtype.
  const Tensor& f64(std::string_view name) const;
  const Tensor& u32(std::string_view name) const;
  const std::vector<Tensor>& tensors() const { return tensors_; }

  std::string to_bytes() const;
  static ModelFile from_bytes(std::string_view bytes);

  void save(const std::filesystem::path& path) const;
  static ModelFile load(const std::filesystem::path& path);

 private:
  const Tensor& find(std::string_view name, DType dtype) const;

  std::string kind_;
  nlohmann::ordered_json meta_ = nlohmann::ordered_json::object();
  std::vector<Tensor> tensors_;
};

}  // namespace relclass

namespace relclass {

// A model was asked to work with inputs it was not trained for, e.g. an
// embedding table of another dimension.
class ModelMismatchError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace relclass
