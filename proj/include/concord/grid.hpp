#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>

#include "concord/error.hpp"

namespace concord {

using Mat44 = std::array<std::array<double, 4>, 4>;

/// NIfTI datatype codes the label reader accepts.
enum class StorageType : std::int16_t {
  uint8 = 2,
  int16 = 4,
  int32 = 8,
  float32 = 16,
  uint16 = 512,
};

inline Mat44 diagonal_orientation(const std::array<double, 3>& spacing) {
  Mat44 m{};
  for (int i = 0; i < 3; ++i) m[i][i] = spacing[i];
  m[3][3] = 1.0;
  return m;
}

/// Voxel lattice shared by a label map and every mask cut from it.
///
/// `orientation` maps (i, j, k, 1) voxel indices to millimetre coordinates.
/// Its last row is always (0, 0, 0, 1).
struct VolumeGrid {
  std::array<std::int64_t, 3> dims{1, 1, 1};
  std::array<double, 3> spacing{1.0, 1.0, 1.0};
  Mat44 orientation = diagonal_orientation({1.0, 1.0, 1.0});
  StorageType source_datatype = StorageType::uint16;

  static VolumeGrid make(std::array<std::int64_t, 3> dims, std::array<double, 3> spacing) {
    VolumeGrid g;
    g.dims = dims;
    g.spacing = spacing;
    g.orientation = diagonal_orientation(spacing);
    return g;
  }

  std::size_t voxel_count() const {
    return static_cast<std::size_t>(dims[0]) * static_cast<std::size_t>(dims[1]) *
           static_cast<std::size_t>(dims[2]);
  }

  bool valid() const {
    for (int i = 0; i < 3; ++i) {
      if (dims[i] < 1 || !(spacing[i] > 0.0) || !std::isfinite(spacing[i])) return false;
    }
    return orientation[3][0] == 0.0 && orientation[3][1] == 0.0 && orientation[3][2] == 0.0 &&
           orientation[3][3] == 1.0;
  }
};

enum class GridField { dims, spacing, orientation };

inline const char* to_string(GridField f) {
  switch (f) {
    case GridField::dims: return "dims";
    case GridField::spacing: return "spacing";
    case GridField::orientation: return "orientation";
  }
  return "?";
}

class GridMismatch : public error {
 public:
  GridMismatch(GridField field, const std::string& detail)
      : error(std::string("grid mismatch (") + to_string(field) + "): " + detail), field_(field) {}
  GridField field() const noexcept { return field_; }

 private:
  GridField field_;
};

inline constexpr double kSpacingRelTol = 1e-5;
inline constexpr double kOrientationAbsTol = 1e-4;

/// Returns the first differing field, or nullopt when the grids are compatible.
inline std::optional<GridMismatch> check_grid_compatible(const VolumeGrid& a, const VolumeGrid& b) {
  if (a.dims != b.dims) {
    return GridMismatch(GridField::dims, std::to_string(a.dims[0]) + "x" + std::to_string(a.dims[1]) +
                                             "x" + std::to_string(a.dims[2]) + " vs " +
                                             std::to_string(b.dims[0]) + "x" + std::to_string(b.dims[1]) +
                                             "x" + std::to_string(b.dims[2]));
  }
  for (int i = 0; i < 3; ++i) {
    const double scale = std::max(std::fabs(a.spacing[i]), std::fabs(b.spacing[i]));
    if (std::fabs(a.spacing[i] - b.spacing[i]) > kSpacingRelTol * scale) {
      return GridMismatch(GridField::spacing, "axis " + std::to_string(i) + ": " +
                                                  std::to_string(a.spacing[i]) + " vs " +
                                                  std::to_string(b.spacing[i]));
    }
  }
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) {
      if (std::fabs(a.orientation[r][c] - b.orientation[r][c]) > kOrientationAbsTol) {
        return GridMismatch(GridField::orientation,
                            "element (" + std::to_string(r) + "," + std::to_string(c) + ")");
      }
    }
  }
  return std::nullopt;
}

inline void require_grid_compatible(const VolumeGrid& a, const VolumeGrid& b) {
  if (auto mismatch = check_grid_compatible(a, b)) throw *mismatch;
}

/// Physical volume of one voxel in mm^3.
inline double voxel_volume(const VolumeGrid& grid) {
  return grid.spacing[0] * grid.spacing[1] * grid.spacing[2];
}

}  // namespace concord
