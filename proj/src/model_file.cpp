#include "relclass/model_file.hpp"

#include <bit>
#include <fstream>
#include <iterator>

#include <fmt/format.h>

namespace relclass {

namespace {

constexpr std::string_view kMagic = "RELCLSMD";

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) { le(v, 4); }
  void u64(std::uint64_t v) { le(v, 8); }
  void f64(double v) { le(std::bit_cast<std::uint64_t>(v), 8); }
  void raw(std::string_view s) { out_.append(s); }
  void str32(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s);
  }
  std::string take() { return std::move(out_); }

 private:
  void le(std::uint64_t v, int bytes) {
    for (int i = 0; i < bytes; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  std::string out_;
};

class Reader {
 public:
  explicit Reader(std::string_view in) : in_(in) {}

  std::uint8_t u8() { return static_cast<std::uint8_t>(le(1)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
  std::uint64_t u64() { return le(8); }
  double f64() { return std::bit_cast<double>(le(8)); }
  std::string_view raw(std::size_t n) {
    need(n);
    auto s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::string str32() { return std::string(raw(u32())); }
  std::string str64() { return std::string(raw(checked(u64()))); }
  bool done() const { return pos_ == in_.size(); }
  std::size_t remaining() const { return in_.size() - pos_; }

 private:
  std::size_t checked(std::uint64_t n) {
    if (n > remaining()) throw ModelFormatError("model file truncated");
    return static_cast<std::size_t>(n);
  }
  void need(std::size_t n) {
    if (n > remaining()) throw ModelFormatError("model file truncated");
  }
  std::uint64_t le(int bytes) {
    need(static_cast<std::size_t>(bytes));
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in_[pos_ + i])) << (8 * i);
    }
    pos_ += static_cast<std::size_t>(bytes);
    return v;
  }

  std::string_view in_;
  std::size_t pos_ = 0;
};

std::uint64_t product(const std::vector<std::uint64_t>& shape) {
  std::uint64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

}  // namespace

std::size_t Tensor::element_count() const { return static_cast<std::size_t>(product(shape)); }

void ModelFile::add(std::string name, std::vector<std::uint64_t> shape, std::span<const double> data) {
  if (product(shape) != data.size()) {
    throw std::invalid_argument(fmt::format("tensor '{}': shape does not match data", name));
  }
  if (has(name)) throw std::invalid_argument(fmt::format("duplicate tensor '{}'", name));
  Tensor t{std::move(name), DType::F64, std::move(shape), {data.begin(), data.end()}, {}};
  tensors_.push_back(std::move(t));
}

void ModelFile::add(std::string name, std::vector<std::uint64_t> shape,
                    std::span<const std::uint32_t> data) {
  if (product(shape) != data.size()) {
    throw std::invalid_argument(fmt::format("tensor '{}': shape does not match data", name));
  }
  if (has(name)) throw std::invalid_argument(fmt::format("duplicate tensor '{}'", name));
  Tensor t{std::move(name), DType::U32, std::move(shape), {}, {data.begin(), data.end()}};
  tensors_.push_back(std::move(t));
}

bool ModelFile::has(std::string_view name) const {
  for (const auto& t : tensors_) {
    if (t.name == name) return true;
  }
  return false;
}

const Tensor& ModelFile::find(std::string_view name, DType dtype) const {
  for (const auto& t : tensors_) {
    if (t.name == name) {
      if (t.dtype != dtype) throw ModelFormatError(fmt::format("tensor '{}' has unexpected dtype", name));
      return t;
    }
  }
  throw ModelFormatError(fmt::format("model file has no tensor '{}'", name));
}

const Tensor& ModelFile::f64(std::string_view name) const { return find(name, DType::F64); }
const Tensor& ModelFile::u32(std::string_view name) const { return find(name, DType::U32); }

std::string ModelFile::to_bytes() const {
  Writer w;
  w.raw(kMagic);
  w.u32(kFormatVersion);
  w.str32(kind_);
  const std::string meta = meta_.dump();
  w.u64(meta.size());
  w.raw(meta);
  w.u32(static_cast<std::uint32_t>(tensors_.size()));
  for (const auto& t : tensors_) {
    w.str32(t.name);
    w.u8(static_cast<std::uint8_t>(t.dtype));
    w.u32(static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) w.u64(d);
    if (t.dtype == DType::F64) {
      for (double v : t.f64) w.f64(v);
    } else {
      for (auto v : t.u32) w.u32(v);
    }
  }
  return w.take();
}

ModelFile ModelFile::from_bytes(std::string_view bytes) {
  Reader r(bytes);
  if (r.remaining() < kMagic.size() || r.raw(kMagic.size()) != kMagic) {
    throw ModelFormatError("not a relclass model file (bad magic)");
  }
  const auto version = r.u32();
  if (version != kFormatVersion) {
    throw ModelFormatError(fmt::format("unsupported model format version {}", version));
  }
  ModelFile file(r.str32());
  try {
    file.meta_ = nlohmann::ordered_json::parse(r.str64());
  } catch (const nlohmann::json::exception& e) {
    throw ModelFormatError(fmt::format("bad model metadata: {}", e.what()));
  }
  const auto count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    Tensor t;
    t.name = r.str32();
    const auto dtype = r.u8();
    if (dtype != 1 && dtype != 2) throw ModelFormatError(fmt::format("tensor '{}': bad dtype", t.name));
    t.dtype = static_cast<DType>(dtype);
    const auto rank = r.u32();
    for (std::uint32_t k = 0; k < rank; ++k) t.shape.push_back(r.u64());
    const auto n = product(t.shape);
    const std::size_t width = t.dtype == DType::F64 ? 8 : 4;
    if (n > r.remaining() / width) throw ModelFormatError("model file truncated");
    if (t.dtype == DType::F64) {
      t.f64.resize(n);
      for (auto& v : t.f64) v = r.f64();
    } else {
      t.u32.resize(n);
      for (auto& v : t.u32) v = r.u32();
    }
    if (file.has(t.name)) throw ModelFormatError(fmt::format("duplicate tensor '{}'", t.name));
    file.tensors_.push_back(std::move(t));
  }
  if (!r.done()) throw ModelFormatError("trailing bytes after model data");
  return file;
}

void ModelFile::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error(fmt::format("cannot write model '{}'", path.string()));
  const std::string bytes = to_bytes();
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error(fmt::format("failed writing model '{}'", path.string()));
}

ModelFile ModelFile::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(fmt::format("cannot open model '{}'", path.string()));
  const std::string bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return from_bytes(bytes);
}

}  // namespace relclass
