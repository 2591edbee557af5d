#include "lcq/tensor_io.hpp"

#include <cstring>
#include <fstream>

#include "lcq/errors.hpp"
#include "lcq/half.hpp"

namespace lcq {

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

struct Reader {
  const std::vector<std::uint8_t>& b;
  std::size_t pos = 0;

  void need(std::size_t n, const char* what) {
    if (pos + n > b.size()) throw FormatError(pos, std::string("truncated ") + what);
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[pos + i]) << (8 * i);
    pos += 4;
    return v;
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[pos + i]) << (8 * i);
    pos += 8;
    return v;
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return b[pos++];
  }
};

std::size_t dtype_size(Dtype d) {
  switch (d) {
    case Dtype::F64: return 8;
    case Dtype::F32: return 4;
    case Dtype::F16: return 2;
    case Dtype::U8: return 1;
  }
  return 0;
}

}  // namespace

std::vector<std::uint8_t> encode_lcqt(const std::vector<NamedTensor>& tensors) {
  std::vector<std::uint8_t> out;
  out.push_back('L');
  out.push_back('C');
  out.push_back('Q');
  out.push_back('T');
  put_u32(out, 1);
  put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    put_u32(out, static_cast<std::uint32_t>(t.name.size()));
    out.insert(out.end(), t.name.begin(), t.name.end());
    out.push_back(static_cast<std::uint8_t>(t.dtype));
    out.push_back(static_cast<std::uint8_t>(t.value.shape.size()));
    for (std::size_t d : t.value.shape) put_u64(out, d);
    for (double v : t.value.data) {
      switch (t.dtype) {
        case Dtype::F64: {
          std::uint64_t bits;
          std::memcpy(&bits, &v, 8);
          put_u64(out, bits);
          break;
        }
        case Dtype::F32: {
          const float f = static_cast<float>(v);
          std::uint32_t bits;
          std::memcpy(&bits, &f, 4);
          put_u32(out, bits);
          break;
        }
        case Dtype::F16: {
          const std::uint16_t h = half_from_double(v);
          out.push_back(static_cast<std::uint8_t>(h & 0xff));
          out.push_back(static_cast<std::uint8_t>(h >> 8));
          break;
        }
        case Dtype::U8:
          out.push_back(static_cast<std::uint8_t>(v));
          break;
      }
    }
  }
  return out;
}

std::vector<NamedTensor> decode_lcqt(const std::vector<std::uint8_t>& bytes) {
  Reader r{bytes};
  r.need(4, "magic");
  if (std::memcmp(bytes.data(), "LCQT", 4) != 0) throw FormatError(0, "bad magic, expected LCQT");
  r.pos = 4;
  const std::uint32_t version = r.u32("version");
  if (version != 1) throw FormatError(4, "unsupported LCQT version " + std::to_string(version));
  const std::uint32_t count = r.u32("tensor count");

  std::vector<NamedTensor> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    const std::uint32_t name_len = r.u32("name length");
    r.need(name_len, "name");
    t.name.assign(reinterpret_cast<const char*>(bytes.data() + r.pos), name_len);
    r.pos += name_len;
    const std::uint8_t dcode = r.u8("dtype");
    if (dcode > 3) throw FormatError(r.pos - 1, "unknown dtype code " + std::to_string(dcode));
    t.dtype = static_cast<Dtype>(dcode);
    const std::uint8_t rank = r.u8("rank");
    std::vector<std::size_t> shape(rank);
    for (std::uint8_t d = 0; d < rank; ++d) shape[d] = static_cast<std::size_t>(r.u64("dim"));
    t.value = Tensor(shape);
    const std::size_t n = t.value.numel();
    r.need(n * dtype_size(t.dtype), "payload");
    for (std::size_t k = 0; k < n; ++k) {
      switch (t.dtype) {
        case Dtype::F64: {
          const std::uint64_t bits = r.u64("f64");
          double v;
          std::memcpy(&v, &bits, 8);
          t.value.data[k] = v;
          break;
        }
        case Dtype::F32: {
          const std::uint32_t bits = r.u32("f32");
          float f;
          std::memcpy(&f, &bits, 4);
          t.value.data[k] = static_cast<double>(f);
          break;
        }
        case Dtype::F16: {
          const std::uint16_t h = static_cast<std::uint16_t>(
              bytes[r.pos] | (static_cast<std::uint16_t>(bytes[r.pos + 1]) << 8));
          r.pos += 2;
          t.value.data[k] = half_to_double(h);
          break;
        }
        case Dtype::U8:
          t.value.data[k] = static_cast<double>(r.u8("u8"));
          break;
      }
    }
    out.push_back(std::move(t));
  }
  if (r.pos != bytes.size()) throw FormatError(r.pos, "trailing bytes after last tensor");
  return out;
}

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open file: " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return bytes;
}

void write_file_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open file for writing: " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed: " + path);
}

void write_lcqt(const std::string& path, const std::vector<NamedTensor>& tensors) {
  write_file_bytes(path, encode_lcqt(tensors));
}

std::vector<NamedTensor> read_lcqt(const std::string& path) {
  return decode_lcqt(read_file_bytes(path));
}

const Tensor& find_tensor(const std::vector<NamedTensor>& ts, const std::string& name) {
  for (const auto& t : ts)
    if (t.name == name) return t.value;
  throw Error("tensor not found in container: " + name);
}

}  // namespace lcq
