#include "hgformer/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>

#include "hgformer/errors.hpp"

namespace hgformer {
namespace {

template <typename U>
void put_le(std::vector<std::uint8_t>& out, U value) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  template <typename U>
  U get() {
    need(sizeof(U));
    U value = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(static_cast<U>(bytes_[pos_ + i]) << (8 * i));
    pos_ += sizeof(U);
    return value;
  }

  std::string string(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw ConfigError("checkpoint: truncated at byte " + std::to_string(pos_));
  }

  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const std::vector<NamedArray>& entries) {
  std::vector<std::uint8_t> out(std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    if (e.name.size() > std::numeric_limits<std::uint16_t>::max()) {
      throw ConfigError("checkpoint: name too long: " + e.name.substr(0, 32) + "...");
    }
    if (e.shape.size() > std::numeric_limits<std::uint8_t>::max()) throw ConfigError("checkpoint: rank too large");
    if (shape_numel(e.shape) != e.data.size()) {
      throw DimensionError("checkpoint: entry '" + e.name + "' has shape " + shape_to_string(e.shape) + " but " +
                           std::to_string(e.data.size()) + " values");
    }
    put_le<std::uint16_t>(out, static_cast<std::uint16_t>(e.name.size()));
    out.insert(out.end(), e.name.begin(), e.name.end());
    put_le<std::uint8_t>(out, static_cast<std::uint8_t>(e.shape.size()));
    for (std::size_t d : e.shape) put_le<std::uint64_t>(out, d);
    for (float v : e.data) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

std::vector<NamedArray> decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Reader in(bytes);
  if (in.string(4) != std::string(kCheckpointMagic, 4)) throw ConfigError("checkpoint: bad magic (expected HGFW)");
  const auto version = in.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw ConfigError("checkpoint: unsupported version " + std::to_string(version));
  }
  const auto count = in.get<std::uint32_t>();
  std::vector<NamedArray> entries;
  entries.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedArray e;
    e.name = in.string(in.get<std::uint16_t>());
    const auto rank = in.get<std::uint8_t>();
    for (std::uint8_t r = 0; r < rank; ++r) e.shape.push_back(static_cast<std::size_t>(in.get<std::uint64_t>()));
    const std::size_t n = shape_numel(e.shape);
    if (n > bytes.size()) throw ConfigError("checkpoint: entry '" + e.name + "' claims more data than the file holds");
    e.data.resize(n);
    for (auto& v : e.data) v = std::bit_cast<float>(in.get<std::uint32_t>());
    entries.push_back(std::move(e));
  }
  if (!in.done()) throw ConfigError("checkpoint: trailing bytes after last entry");
  return entries;
}

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedArray>& entries) {
  const auto bytes = encode_checkpoint(entries);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("checkpoint: cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ConfigError("checkpoint: write failed for " + path.string());
}

std::vector<NamedArray> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("checkpoint: cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

template <typename T>
NamedArray to_named_array(const std::string& name, const Tensor<T>& t) {
  NamedArray a{name, t.shape(), {}};
  a.data.reserve(t.numel());
  for (T v : t.data()) a.data.push_back(static_cast<float>(v));
  return a;
}

template <typename T>
Tensor<T> from_named_array(const NamedArray& a, bool requires_grad) {
  std::vector<T> data(a.data.begin(), a.data.end());
  return Tensor<T>(a.shape, std::move(data), requires_grad);
}

template NamedArray to_named_array<float>(const std::string&, const Tensor<float>&);
template NamedArray to_named_array<double>(const std::string&, const Tensor<double>&);
template Tensor<float> from_named_array<float>(const NamedArray&, bool);
template Tensor<double> from_named_array<double>(const NamedArray&, bool);

}  // namespace hgformer
