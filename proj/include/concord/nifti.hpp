#pragma once

#include <zlib.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "concord/error.hpp"
#include "concord/grid.hpp"
#include "concord/label_volume.hpp"

namespace concord {

using Bytes = std::vector<std::uint8_t>;

namespace nifti {

inline constexpr std::int32_t kHeaderSize = 348;
inline constexpr std::int32_t kMinVoxOffset = 352;

// Byte offsets into the 348-byte NIfTI-1 header.
namespace off {
inline constexpr std::size_t sizeof_hdr = 0;
inline constexpr std::size_t dim = 40;
inline constexpr std::size_t datatype = 70;
inline constexpr std::size_t bitpix = 72;
inline constexpr std::size_t pixdim = 76;
inline constexpr std::size_t vox_offset = 108;
inline constexpr std::size_t scl_slope = 112;
inline constexpr std::size_t scl_inter = 116;
inline constexpr std::size_t cal_max = 124;
inline constexpr std::size_t xyzt_units = 123;
inline constexpr std::size_t qform_code = 252;
inline constexpr std::size_t sform_code = 254;
inline constexpr std::size_t quatern_b = 256;
inline constexpr std::size_t quatern_c = 260;
inline constexpr std::size_t quatern_d = 264;
inline constexpr std::size_t qoffset_x = 268;
inline constexpr std::size_t qoffset_y = 272;
inline constexpr std::size_t qoffset_z = 276;
inline constexpr std::size_t srow_x = 280;
inline constexpr std::size_t srow_y = 296;
inline constexpr std::size_t srow_z = 312;
inline constexpr std::size_t magic = 344;
}  // namespace off

namespace detail {

template <class T>
T load(const std::uint8_t* p, bool swap) {
  std::array<std::uint8_t, sizeof(T)> b;
  std::memcpy(b.data(), p, sizeof(T));
  if (swap) std::reverse(b.begin(), b.end());
  return std::bit_cast<T>(b);
}

// Always writes little-endian.
template <class T>
void store(std::uint8_t* p, T value) {
  auto b = std::bit_cast<std::array<std::uint8_t, sizeof(T)>>(value);
  if constexpr (std::endian::native == std::endian::big) std::reverse(b.begin(), b.end());
  std::memcpy(p, b.data(), sizeof(T));
}

inline Mat44 quatern_to_mat44(double qb, double qc, double qd, double qx, double qy, double qz,
                              double dx, double dy, double dz, double qfac) {
  double qa = 1.0 - (qb * qb + qc * qc + qd * qd);
  if (qa < 1e-7) {
    // b,c,d describe a 180 degree rotation; renormalize
    const double n = 1.0 / std::sqrt(qb * qb + qc * qc + qd * qd);
    qb *= n;
    qc *= n;
    qd *= n;
    qa = 0.0;
  } else {
    qa = std::sqrt(qa);
  }
  if (qfac < 0.0) dz = -dz;
  Mat44 m{};
  m[0] = {(qa * qa + qb * qb - qc * qc - qd * qd) * dx, 2.0 * (qb * qc - qa * qd) * dy,
          2.0 * (qb * qd + qa * qc) * dz, qx};
  m[1] = {2.0 * (qb * qc + qa * qd) * dx, (qa * qa + qc * qc - qb * qb - qd * qd) * dy,
          2.0 * (qc * qd - qa * qb) * dz, qy};
  m[2] = {2.0 * (qb * qd - qa * qc) * dx, 2.0 * (qc * qd + qa * qb) * dy,
          (qa * qa + qd * qd - qc * qc - qb * qb) * dz, qz};
  m[3] = {0.0, 0.0, 0.0, 1.0};
  return m;
}

inline int bytes_per_voxel(std::int16_t datatype) {
  switch (static_cast<StorageType>(datatype)) {
    case StorageType::uint8: return 1;
    case StorageType::int16:
    case StorageType::uint16: return 2;
    case StorageType::int32:
    case StorageType::float32: return 4;
  }
  return 0;
}

}  // namespace detail

inline bool is_gzip(std::span<const std::uint8_t> bytes) {
  return bytes.size() >= 2 && bytes[0] == 0x1F && bytes[1] == 0x8B;
}

inline Bytes gunzip(std::span<const std::uint8_t> compressed) {
  z_stream zs{};
  if (inflateInit2(&zs, 15 + 32) != Z_OK) throw io_error("inflateInit2 failed");
  Bytes out;
  std::array<std::uint8_t, 1 << 16> chunk;
  zs.next_in = const_cast<Bytef*>(compressed.data());
  zs.avail_in = static_cast<uInt>(compressed.size());
  int rc = Z_OK;
  while (rc != Z_STREAM_END) {
    zs.next_out = chunk.data();
    zs.avail_out = static_cast<uInt>(chunk.size());
    rc = inflate(&zs, Z_NO_FLUSH);
    if (rc != Z_OK && rc != Z_STREAM_END) {
      inflateEnd(&zs);
      throw MalformedHeader("corrupt gzip stream");
    }
    out.insert(out.end(), chunk.data(), chunk.data() + (chunk.size() - zs.avail_out));
    if (rc == Z_OK && zs.avail_in == 0 && zs.avail_out != 0) {
      inflateEnd(&zs);
      throw MalformedHeader("truncated gzip stream");
    }
  }
  inflateEnd(&zs);
  return out;
}

inline Bytes gzip(std::span<const std::uint8_t> raw, int level = 6) {
  z_stream zs{};
  if (deflateInit2(&zs, level, Z_DEFLATED, 15 + 16, 8, Z_DEFAULT_STRATEGY) != Z_OK)
    throw io_error("deflateInit2 failed");
  Bytes out(deflateBound(&zs, static_cast<uLong>(raw.size())) + 32);
  zs.next_in = const_cast<Bytef*>(raw.data());
  zs.avail_in = static_cast<uInt>(raw.size());
  zs.next_out = out.data();
  zs.avail_out = static_cast<uInt>(out.size());
  const int rc = deflate(&zs, Z_FINISH);
  deflateEnd(&zs);
  if (rc != Z_STREAM_END) throw io_error("deflate failed");
  out.resize(zs.total_out);
  return out;
}

}  // namespace nifti

/// Decodes a single-file NIfTI-1 label map (plain or gzip-wrapped).
///
/// Byte order is taken from sizeof_hdr. The voxel-to-world matrix comes from
/// sform when sform_code > 0, else qform when qform_code > 0, else the diagonal
/// of the voxel spacing.
inline LabelVolume parse_label_volume(std::span<const std::uint8_t> source) {
  using nifti::detail::load;
  namespace off = nifti::off;

  if (nifti::is_gzip(source)) {
    const Bytes raw = nifti::gunzip(source);
    return parse_label_volume(raw);
  }
  if (source.size() < static_cast<std::size_t>(nifti::kHeaderSize))
    throw MalformedHeader("file shorter than a NIfTI-1 header");

  const std::uint8_t* h = source.data();
  bool swap = false;
  if (load<std::int32_t>(h + off::sizeof_hdr, false) != nifti::kHeaderSize) {
    if (load<std::int32_t>(h + off::sizeof_hdr, true) != nifti::kHeaderSize)
      throw MalformedHeader("sizeof_hdr is not 348 in either byte order");
    swap = true;
  }
  if (std::memcmp(h + off::magic, "n+1\0", 4) != 0)
    throw MalformedHeader("magic is not \"n+1\" (only single-file NIfTI-1 is supported)");

  std::array<std::int16_t, 8> dim{};
  for (int i = 0; i < 8; ++i) dim[i] = load<std::int16_t>(h + off::dim + 2 * i, swap);
  if (dim[0] != 3 && !(dim[0] == 4 && dim[4] == 1))
    throw UnsupportedDimensionality("dim[0] = " + std::to_string(dim[0]) +
                                    (dim[0] == 4 ? ", dim[4] = " + std::to_string(dim[4]) : ""));
  for (int i = 1; i <= 3; ++i) {
    if (dim[i] < 1) throw MalformedHeader("dim[" + std::to_string(i) + "] < 1");
  }

  const auto datatype = load<std::int16_t>(h + off::datatype, swap);
  const int bpv = nifti::detail::bytes_per_voxel(datatype);
  if (bpv == 0) throw UnsupportedDatatype("datatype " + std::to_string(datatype));

  std::array<float, 8> pixdim{};
  for (int i = 0; i < 8; ++i) pixdim[i] = load<float>(h + off::pixdim + 4 * i, swap);

  const float vox_offset_f = load<float>(h + off::vox_offset, swap);
  if (!(vox_offset_f >= static_cast<float>(nifti::kMinVoxOffset)) || vox_offset_f != std::floor(vox_offset_f))
    throw MalformedHeader("vox_offset " + std::to_string(vox_offset_f) + " is not an integer >= 352");
  const auto vox_offset = static_cast<std::size_t>(vox_offset_f);

  const float slope = load<float>(h + off::scl_slope, swap);
  const float inter = load<float>(h + off::scl_inter, swap);
  if (!((slope == 1.0f && inter == 0.0f) || (slope == 0.0f && inter == 0.0f)))
    throw UnsupportedScaling("scl_slope/scl_inter must be (1,0) or (0,0) on a label map");

  VolumeGrid grid;
  grid.dims = {dim[1], dim[2], dim[3]};
  for (int i = 0; i < 3; ++i) {
    const double s = std::fabs(static_cast<double>(pixdim[i + 1]));
    if (!(s > 0.0) || !std::isfinite(s)) throw MalformedHeader("pixdim[" + std::to_string(i + 1) + "] must be > 0");
    grid.spacing[i] = s;
  }
  grid.source_datatype = static_cast<StorageType>(datatype);

  const auto qform_code = load<std::int16_t>(h + off::qform_code, swap);
  const auto sform_code = load<std::int16_t>(h + off::sform_code, swap);
  if (sform_code > 0) {
    const std::size_t rows[3] = {off::srow_x, off::srow_y, off::srow_z};
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 4; ++c) grid.orientation[r][c] = load<float>(h + rows[r] + 4 * c, swap);
    }
    grid.orientation[3] = {0.0, 0.0, 0.0, 1.0};
  } else if (qform_code > 0) {
    grid.orientation = nifti::detail::quatern_to_mat44(
        load<float>(h + off::quatern_b, swap), load<float>(h + off::quatern_c, swap),
        load<float>(h + off::quatern_d, swap), load<float>(h + off::qoffset_x, swap),
        load<float>(h + off::qoffset_y, swap), load<float>(h + off::qoffset_z, swap), grid.spacing[0],
        grid.spacing[1], grid.spacing[2], pixdim[0] < 0.0f ? -1.0 : 1.0);
  } else {
    grid.orientation = diagonal_orientation(grid.spacing);
  }

  const std::size_t n = grid.voxel_count();
  if (vox_offset > source.size() || (source.size() - vox_offset) / static_cast<std::size_t>(bpv) < n)
    throw MalformedHeader("data block truncated: need " + std::to_string(n * bpv) + " bytes at offset " +
                          std::to_string(vox_offset));

  LabelVolume vol;
  vol.grid = grid;
  vol.labels.resize(n);
  const std::uint8_t* data = source.data() + vox_offset;

  auto negative = [](std::size_t v, double value) {
    return NegativeLabel("voxel " + std::to_string(v) + " has label " + std::to_string(value));
  };

  switch (grid.source_datatype) {
    case StorageType::uint8:
      for (std::size_t v = 0; v < n; ++v) vol.labels[v] = data[v];
      break;
    case StorageType::uint16:
      for (std::size_t v = 0; v < n; ++v) vol.labels[v] = load<std::uint16_t>(data + 2 * v, swap);
      break;
    case StorageType::int16:
      for (std::size_t v = 0; v < n; ++v) {
        const auto x = load<std::int16_t>(data + 2 * v, swap);
        if (x < 0) throw negative(v, x);
        vol.labels[v] = static_cast<std::uint32_t>(x);
      }
      break;
    case StorageType::int32:
      for (std::size_t v = 0; v < n; ++v) {
        const auto x = load<std::int32_t>(data + 4 * v, swap);
        if (x < 0) throw negative(v, x);
        vol.labels[v] = static_cast<std::uint32_t>(x);
      }
      break;
    case StorageType::float32:
      for (std::size_t v = 0; v < n; ++v) {
        const double x = load<float>(data + 4 * v, swap);
        if (!std::isfinite(x)) throw UnsupportedDatatype("float32 label map contains a non-finite value");
        const double r = std::round(x);
        if (std::fabs(x - r) > 1e-6)
          throw UnsupportedDatatype("float32 label map contains non-integral value " + std::to_string(x));
        if (r < 0.0) throw negative(v, r);
        if (r > static_cast<double>(std::numeric_limits<std::uint32_t>::max()))
          throw UnsupportedDatatype("float32 label exceeds 32-bit range");
        vol.labels[v] = static_cast<std::uint32_t>(r);
      }
      break;
  }
  return vol;
}

/// Encodes a label map as uncompressed single-file NIfTI-1 with uint16 voxels,
/// little-endian, vox_offset 352, identity scaling and sform from the grid.
inline Bytes write_label_volume(const LabelVolume& vol) {
  using nifti::detail::store;
  namespace off = nifti::off;

  if (vol.labels.size() != vol.grid.voxel_count())
    throw error("label array length does not match grid dimensions");
  for (int i = 0; i < 3; ++i) {
    if (vol.grid.dims[i] > std::numeric_limits<std::int16_t>::max())
      throw error("dimension exceeds the NIfTI-1 limit of 32767");
  }
  const std::uint32_t max_label = vol.max_label();
  if (max_label > std::numeric_limits<std::uint16_t>::max())
    throw LabelOverflow("label " + std::to_string(max_label) + " does not fit uint16");

  const std::size_t n = vol.labels.size();
  Bytes out(static_cast<std::size_t>(nifti::kMinVoxOffset) + 2 * n, 0);
  std::uint8_t* h = out.data();

  store<std::int32_t>(h + off::sizeof_hdr, nifti::kHeaderSize);
  const std::array<std::int16_t, 8> dim = {3,
                                           static_cast<std::int16_t>(vol.grid.dims[0]),
                                           static_cast<std::int16_t>(vol.grid.dims[1]),
                                           static_cast<std::int16_t>(vol.grid.dims[2]),
                                           1, 1, 1, 1};
  for (int i = 0; i < 8; ++i) store<std::int16_t>(h + off::dim + 2 * i, dim[i]);
  store<std::int16_t>(h + off::datatype, static_cast<std::int16_t>(StorageType::uint16));
  store<std::int16_t>(h + off::bitpix, 16);
  const std::array<float, 8> pixdim = {1.0f,
                                       static_cast<float>(vol.grid.spacing[0]),
                                       static_cast<float>(vol.grid.spacing[1]),
                                       static_cast<float>(vol.grid.spacing[2]),
                                       0.0f, 0.0f, 0.0f, 0.0f};
  for (int i = 0; i < 8; ++i) store<float>(h + off::pixdim + 4 * i, pixdim[i]);
  store<float>(h + off::vox_offset, static_cast<float>(nifti::kMinVoxOffset));
  store<float>(h + off::scl_slope, 1.0f);
  store<float>(h + off::scl_inter, 0.0f);
  h[off::xyzt_units] = 2;  // mm
  store<float>(h + off::cal_max, static_cast<float>(max_label));
  store<std::int16_t>(h + off::qform_code, 0);
  store<std::int16_t>(h + off::sform_code, 1);
  const std::size_t rows[3] = {off::srow_x, off::srow_y, off::srow_z};
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 4; ++c) store<float>(h + rows[r] + 4 * c, static_cast<float>(vol.grid.orientation[r][c]));
  }
  std::memcpy(h + off::magic, "n+1\0", 4);

  std::uint8_t* data = out.data() + nifti::kMinVoxOffset;
  for (std::size_t v = 0; v < n; ++v) store<std::uint16_t>(data + 2 * v, static_cast<std::uint16_t>(vol.labels[v]));
  return out;
}

inline Bytes read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open " + path.string());
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw io_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw io_error("short write to " + path.string());
}

inline LabelVolume load_label_volume(const std::filesystem::path& path) {
  return parse_label_volume(read_file_bytes(path));
}

/// Writes `vol`, gzip-compressed when the path ends in ".gz".
inline void save_label_volume(const std::filesystem::path& path, const LabelVolume& vol) {
  const Bytes raw = write_label_volume(vol);
  if (path.extension() == ".gz") {
    write_file_bytes(path, nifti::gzip(raw));
  } else {
    write_file_bytes(path, raw);
  }
}

}  // namespace concord
