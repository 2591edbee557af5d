#pragma once
#include <cstdint>
#include <string>
#include <vector>

#include "lcq/tensor.hpp"

namespace lcq {

// "LCQT" tensor container: little-endian, magic "LCQT", u32 version=1,
// u32 tensor count; per tensor: u32 name length, UTF-8 name, u8 dtype code
// (0=f64, 1=f32, 2=f16, 3=u8), u8 rank, u64 dims[rank], row-major payload.
enum class Dtype : std::uint8_t { F64 = 0, F32 = 1, F16 = 2, U8 = 3 };

struct NamedTensor {
  std::string name;
  Tensor value;
  Dtype dtype = Dtype::F64;
};

std::vector<std::uint8_t> encode_lcqt(const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> decode_lcqt(const std::vector<std::uint8_t>& bytes);

void write_lcqt(const std::string& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> read_lcqt(const std::string& path);

// Convenience for pulling one tensor out of a decoded container.
const Tensor& find_tensor(const std::vector<NamedTensor>& ts, const std::string& name);

std::vector<std::uint8_t> read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes);

}  // namespace lcq
