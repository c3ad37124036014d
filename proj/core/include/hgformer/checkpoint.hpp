#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "hgformer/tensor.hpp"

namespace hgformer {

// One entry of the binary tensor container. Payload is always f32.
struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

// Layout (all integers little-endian):
//   "HGFW" | u32 version=1 | u32 count |
//   count x { u16 name_len | name (UTF-8) | u8 rank | u64 dims[rank] | f32 data[prod(dims)] }
inline constexpr char kCheckpointMagic[4] = {'H', 'G', 'F', 'W'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> encode_checkpoint(const std::vector<NamedArray>& entries);
std::vector<NamedArray> decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedArray>& entries);
std::vector<NamedArray> load_checkpoint(const std::filesystem::path& path);

template <typename T>
NamedArray to_named_array(const std::string& name, const Tensor<T>& t);

template <typename T>
Tensor<T> from_named_array(const NamedArray& a, bool requires_grad = false);

}  // namespace hgformer
