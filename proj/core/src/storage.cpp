#include "lcq/storage.hpp"

#include <algorithm>
#include <cstring>

#include "lcq/half.hpp"
#include "lcq/tensor_io.hpp"

namespace lcq {

std::vector<std::uint8_t> pack_indices(std::span<const std::uint32_t> indices,
                                       std::uint32_t bits) {
  if (bits < 1 || bits > 8) throw ShapeError("pack_indices: bits must be in [1, 8]");
  const std::uint32_t limit = 1u << bits;
  std::vector<std::uint8_t> out((indices.size() * bits + 7) / 8, 0);
  std::size_t bitpos = 0;
  for (std::uint32_t idx : indices) {
    if (idx >= limit)
      throw ShapeError("pack_indices: index " + std::to_string(idx) + " needs more than " +
                       std::to_string(bits) + " bits");
    for (std::uint32_t b = 0; b < bits; ++b, ++bitpos)
      if (idx & (1u << b)) out[bitpos >> 3] |= static_cast<std::uint8_t>(1u << (bitpos & 7));
  }
  return out;
}

std::vector<std::uint32_t> unpack_indices(std::span<const std::uint8_t> bytes,
                                          std::size_t count, std::uint32_t bits) {
  if (bits < 1 || bits > 8) throw ShapeError("unpack_indices: bits must be in [1, 8]");
  if (bytes.size() * 8 < count * bits)
    throw ShapeError("unpack_indices: byte stream too short");
  std::vector<std::uint32_t> out(count, 0);
  std::size_t bitpos = 0;
  for (std::size_t i = 0; i < count; ++i)
    for (std::uint32_t b = 0; b < bits; ++b, ++bitpos)
      if (bytes[bitpos >> 3] & (1u << (bitpos & 7))) out[i] |= 1u << b;
  return out;
}

namespace {

constexpr std::uint32_t kVersion = 1;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

struct Cursor {
  std::span<const std::uint8_t> b;
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
  std::uint16_t u16(const char* what) {
    need(2, what);
    const std::uint16_t v =
        static_cast<std::uint16_t>(b[pos] | (static_cast<std::uint16_t>(b[pos + 1]) << 8));
    pos += 2;
    return v;
  }
  std::span<const std::uint8_t> bytes(std::size_t n, const char* what) {
    need(n, what);
    auto s = b.subspan(pos, n);
    pos += n;
    return s;
  }
};

std::size_t packed_bytes(std::size_t count, std::uint32_t bits) {
  return (count * bits + 7) / 8;
}

std::size_t dq_row_bytes(std::size_t count, std::uint32_t bits, std::uint32_t group) {
  const std::size_t n_groups = (count + group - 1) / group;
  return 2 * n_groups + packed_bytes(n_groups, bits) + packed_bytes(count, bits);
}

void encode_dq_row(std::vector<std::uint8_t>& out, const DqRow& row) {
  for (const DqGroupParams& g : row.groups) put_u16(out, g.scale_half);
  std::vector<std::uint32_t> zcs;
  for (const DqGroupParams& g : row.groups) zcs.push_back(g.zero_code);
  const auto zc_bytes = pack_indices(zcs, row.bits);
  out.insert(out.end(), zc_bytes.begin(), zc_bytes.end());
  const auto code_bytes = pack_indices(row.codes, row.bits);
  out.insert(out.end(), code_bytes.begin(), code_bytes.end());
}

DqRow decode_dq_row(Cursor& c, std::size_t count, std::uint32_t bits, std::uint32_t group) {
  DqRow row;
  row.bits = bits;
  row.group = group;
  row.count = static_cast<std::uint32_t>(count);
  const std::size_t n_groups = (count + group - 1) / group;
  row.groups.resize(n_groups);
  for (std::size_t g = 0; g < n_groups; ++g) row.groups[g].scale_half = c.u16("dq scale");
  const auto zc_bytes = c.bytes(packed_bytes(n_groups, bits), "dq zero codes");
  const auto zcs = unpack_indices(zc_bytes, n_groups, bits);
  for (std::size_t g = 0; g < n_groups; ++g) row.groups[g].zero_code = zcs[g];
  const auto code_bytes = c.bytes(packed_bytes(count, bits), "dq codes");
  row.codes = unpack_indices(code_bytes, count, bits);
  return row;
}

std::size_t subset_section_bytes(std::size_t group_count, std::size_t group_size,
                                 const QuantConfig& cfg) {
  const std::size_t n_q = cfg.levels();
  std::size_t bytes = 2 * group_count;  // rank-1 scales as binary16
  for (std::uint32_t r = 2; r <= cfg.rank; ++r)
    bytes += dq_row_bytes(group_count, cfg.dq_bits_s, cfg.dq_group);
  for (std::uint32_t r = 1; r <= cfg.rank; ++r)
    bytes += dq_row_bytes(n_q, cfg.dq_bits_v, cfg.dq_group);
  bytes += packed_bytes(group_count, cfg.bits);               // offset indices
  bytes += packed_bytes(group_count * group_size, cfg.bits);  // quantization indices
  return bytes;
}

}  // namespace

std::vector<std::uint8_t> encode_artifact(const QuantArtifact& a) {
  const QuantConfig& cfg = a.config;
  cfg.validate();
  std::vector<std::uint8_t> out;
  out.push_back('L');
  out.push_back('C');
  out.push_back('Q');
  out.push_back('1');
  put_u32(out, kVersion);
  put_u32(out, cfg.bits);
  put_u32(out, cfg.group_size == kChannelGroups ? kChannelGroupsFile : cfg.group_size);
  put_u32(out, cfg.rank);
  put_u32(out, cfg.groups_per_subset);
  put_u32(out, cfg.levels());
  put_u32(out, cfg.dq_bits_s);
  put_u32(out, cfg.dq_bits_v);
  put_u32(out, cfg.dq_group);
  put_u32(out, static_cast<std::uint32_t>(a.layers.size()));

  for (const ArtifactLayer& layer : a.layers) {
    put_u32(out, static_cast<std::uint32_t>(layer.name.size()));
    out.insert(out.end(), layer.name.begin(), layer.name.end());
    put_u32(out, layer.rows);
    put_u32(out, layer.cols);
    const std::size_t group_size = cfg.effective_group_size(layer.cols);
    for (const ArtifactSubset& s : layer.subsets) {
      for (std::uint16_t h : s.s1_half) put_u16(out, h);
      for (const DqRow& r : s.s_rows) encode_dq_row(out, r);
      for (const DqRow& r : s.v_rows) encode_dq_row(out, r);
      const auto off_bytes = pack_indices(s.offset_index, cfg.bits);
      out.insert(out.end(), off_bytes.begin(), off_bytes.end());
      const auto idx_bytes = pack_indices(s.indices, cfg.bits);
      out.insert(out.end(), idx_bytes.begin(), idx_bytes.end());
      if (s.indices.size() != s.group_count * group_size)
        throw ShapeError("encode_artifact: index count does not match grouping");
    }
  }
  return out;
}

QuantArtifact decode_artifact(std::span<const std::uint8_t> bytes) {
  Cursor c{bytes};
  c.need(4, "magic");
  if (std::memcmp(bytes.data(), "LCQ1", 4) != 0)
    throw FormatError(0, "bad magic, expected LCQ1");
  c.pos = 4;
  const std::uint32_t version = c.u32("version");
  if (version != kVersion)
    throw FormatError(4, "unsupported LCQ1 version " + std::to_string(version));

  QuantArtifact a;
  QuantConfig& cfg = a.config;
  cfg.bits = c.u32("bits");
  const std::uint32_t gs = c.u32("group size");
  cfg.group_size = (gs == kChannelGroupsFile) ? kChannelGroups : gs;
  cfg.rank = c.u32("rank");
  cfg.groups_per_subset = c.u32("groups per subset");
  const std::uint32_t levels = c.u32("level count");
  cfg.dq_bits_s = c.u32("dq bits for scales");
  cfg.dq_bits_v = c.u32("dq bits for qps");
  cfg.dq_group = c.u32("dq group");
  try {
    cfg.validate();
  } catch (const Error& e) {
    throw FormatError(8, std::string("invalid header: ") + e.what());
  }
  if (levels != cfg.levels())
    throw FormatError(24, "level count " + std::to_string(levels) +
                              " does not match 2^bits");
  const std::uint32_t layer_count = c.u32("layer count");

  for (std::uint32_t li = 0; li < layer_count; ++li) {
    ArtifactLayer layer;
    const std::uint32_t name_len = c.u32("layer name length");
    const auto name_bytes = c.bytes(name_len, "layer name");
    layer.name.assign(reinterpret_cast<const char*>(name_bytes.data()), name_len);
    layer.rows = c.u32("layer rows");
    layer.cols = c.u32("layer cols");
    const std::size_t n = static_cast<std::size_t>(layer.rows) * layer.cols;
    const std::size_t group_size = cfg.effective_group_size(layer.cols);
    if (group_size == 0 || n % group_size != 0)
      throw FormatError(c.pos, "layer shape incompatible with group size");
    const std::size_t n_groups = n / group_size;
    const std::size_t n_q = cfg.levels();

    std::size_t left = n_groups;
    while (left > 0) {
      const std::size_t cnt = std::min<std::size_t>(left, cfg.groups_per_subset);
      left -= cnt;
      ArtifactSubset s;
      s.group_count = static_cast<std::uint32_t>(cnt);
      s.s1_half.resize(cnt);
      for (std::size_t g = 0; g < cnt; ++g) s.s1_half[g] = c.u16("rank-1 scale");
      for (std::uint32_t r = 2; r <= cfg.rank; ++r)
        s.s_rows.push_back(decode_dq_row(c, cnt, cfg.dq_bits_s, cfg.dq_group));
      for (std::uint32_t r = 1; r <= cfg.rank; ++r)
        s.v_rows.push_back(decode_dq_row(c, n_q, cfg.dq_bits_v, cfg.dq_group));
      const auto off_bytes = c.bytes(packed_bytes(cnt, cfg.bits), "offset indices");
      s.offset_index = unpack_indices(off_bytes, cnt, cfg.bits);
      const auto idx_bytes =
          c.bytes(packed_bytes(cnt * group_size, cfg.bits), "quantization indices");
      s.indices = unpack_indices(idx_bytes, cnt * group_size, cfg.bits);
      for (std::uint32_t idx : s.offset_index)
        if (idx >= n_q) throw FormatError(c.pos, "offset index out of range");
      layer.subsets.push_back(std::move(s));
    }
    a.layers.push_back(std::move(layer));
  }
  if (c.pos != bytes.size()) throw FormatError(c.pos, "trailing bytes after last section");
  return a;
}

void write_artifact(const std::string& path, const QuantArtifact& a) {
  write_file_bytes(path, encode_artifact(a));
}

QuantArtifact read_artifact(const std::string& path) {
  const auto bytes = read_file_bytes(path);
  return decode_artifact(bytes);
}

QuantArtifact artifact_from_deployed(const std::vector<DeployedBlock>& blocks,
                                     const QuantConfig& cfg) {
  QuantArtifact a;
  a.config = cfg;
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    for (std::size_t l = 0; l < 6; ++l) {
      const DeployedLayer& dl = blocks[b].layers[l];
      ArtifactLayer layer;
      layer.name = "block" + std::to_string(b) + "." + kLayerNames[l];
      layer.rows = static_cast<std::uint32_t>(dl.grouping.rows);
      layer.cols = static_cast<std::uint32_t>(dl.grouping.cols);
      for (const DeployedSubset& ds : dl.subsets) {
        ArtifactSubset s;
        s.group_count = static_cast<std::uint32_t>(ds.group_count);
        s.s1_half = ds.s1_half;
        s.s_rows = ds.s_rows;
        s.v_rows = ds.v_rows;
        s.offset_index = ds.offset_index;
        s.indices = ds.indices;
        layer.subsets.push_back(std::move(s));
      }
      a.layers.push_back(std::move(layer));
    }
  }
  return a;
}

RetentionReport retention_rate(
    const QuantConfig& cfg,
    const std::vector<std::pair<std::uint32_t, std::uint32_t>>& shapes) {
  cfg.validate();
  RetentionReport rep;
  for (const auto& [rows, cols] : shapes) {
    const std::size_t n = static_cast<std::size_t>(rows) * cols;
    const std::size_t group_size = cfg.effective_group_size(cols);
    if (group_size == 0 || n % group_size != 0)
      throw ShapeError("retention_rate: group size does not divide layer size");
    const std::size_t n_groups = n / group_size;
    std::size_t left = n_groups;
    while (left > 0) {
      const std::size_t cnt = std::min<std::size_t>(left, cfg.groups_per_subset);
      left -= cnt;
      rep.section_bytes += subset_section_bytes(cnt, group_size, cfg);
    }
    rep.weight_count += n;
  }
  rep.ratio = static_cast<double>(rep.section_bytes * 8) /
              (16.0 * static_cast<double>(rep.weight_count));
  return rep;
}

std::size_t artifact_header_bytes(const QuantArtifact& a) {
  std::size_t bytes = 4 + 10 * 4;  // magic + version + 9 header words
  for (const ArtifactLayer& layer : a.layers) bytes += 4 + layer.name.size() + 8;
  return bytes;
}

Tensor dequantize_layer(const QuantArtifact& a, std::size_t layer_index, double epsilon) {
  if (layer_index >= a.layers.size())
    throw ShapeError("dequantize_layer: layer index out of range");
  const ArtifactLayer& layer = a.layers[layer_index];
  const QuantConfig& cfg = a.config;
  const std::size_t n_q = cfg.levels();
  const std::size_t group_size = cfg.effective_group_size(layer.cols);

  Tensor out({layer.rows, layer.cols});
  std::size_t first_group = 0;
  for (const ArtifactSubset& s : layer.subsets) {
    const std::size_t cnt = s.group_count;
    Tensor scales({cfg.rank, cnt});
    for (std::size_t g = 0; g < cnt; ++g) scales.data[g] = half_to_double(s.s1_half[g]);
    for (std::uint32_t r = 2; r <= cfg.rank; ++r) {
      const auto rec = dq_reconstruct(s.s_rows[r - 2]);
      std::copy(rec.begin(), rec.end(), scales.data.begin() + (r - 1) * cnt);
    }
    Tensor qps({cfg.rank, n_q});
    for (std::uint32_t r = 1; r <= cfg.rank; ++r) {
      const auto rec = dq_reconstruct(s.v_rows[r - 1]);
      std::copy(rec.begin(), rec.end(), qps.data.begin() + (r - 1) * n_q);
    }

    const Tensor cpre = build_codebook(scales, qps, Tensor({cnt}));
    const SortedCodebook pre_sorted = sort_clamp_rows(cpre, epsilon);
    Tensor codebook({cnt, n_q});
    for (std::size_t g = 0; g < cnt; ++g) {
      const double offset = pre_sorted.values[g * n_q + s.offset_index[g]];
      for (std::size_t k = 0; k < n_q; ++k)
        codebook.data[g * n_q + k] = cpre.data[g * n_q + k] - offset;
    }
    const SortedCodebook sorted = sort_clamp_rows(codebook, epsilon);
    const Tensor wq =
        dequantize(sorted, s.indices, {cnt, group_size}, group_size);
    std::copy(wq.data.begin(), wq.data.end(),
              out.data.begin() + first_group * group_size);
    first_group += cnt;
  }
  return out;
}

}  // namespace lcq
