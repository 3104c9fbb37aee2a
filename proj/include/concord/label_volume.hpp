#pragma once

#include <algorithm>
#include <bit>
#include <cstddef>
#include <cstdint>
#include <span>
#include <unordered_map>
#include <vector>

#include "concord/grid.hpp"

namespace concord {

/// Dense integer label map. Index of voxel (i, j, k) is i + nx * (j + ny * k).
struct LabelVolume {
  VolumeGrid grid;
  std::vector<std::uint32_t> labels;

  LabelVolume() = default;
  explicit LabelVolume(VolumeGrid g) : grid(std::move(g)), labels(grid.voxel_count(), 0u) {}

  std::size_t index(std::int64_t i, std::int64_t j, std::int64_t k) const {
    return static_cast<std::size_t>(i + grid.dims[0] * (j + grid.dims[1] * k));
  }
  std::uint32_t& at(std::int64_t i, std::int64_t j, std::int64_t k) { return labels[index(i, j, k)]; }
  std::uint32_t at(std::int64_t i, std::int64_t j, std::int64_t k) const { return labels[index(i, j, k)]; }

  std::uint32_t max_label() const {
    return labels.empty() ? 0u : *std::max_element(labels.begin(), labels.end());
  }
};

/// One bit per voxel of a grid, with a cached population count.
///
/// Bits past `size()` in the last word are kept clear so word-wise AND and
/// popcount never see stray voxels.
class BinaryMask {
 public:
  using word_type = std::uint64_t;
  static constexpr std::size_t kWordBits = 64;

  BinaryMask() = default;
  explicit BinaryMask(VolumeGrid grid)
      : grid_(std::move(grid)), size_(grid_.voxel_count()), words_((size_ + kWordBits - 1) / kWordBits, 0) {}

  const VolumeGrid& grid() const noexcept { return grid_; }
  std::size_t size() const noexcept { return size_; }
  std::size_t count() const noexcept { return count_; }
  bool empty() const noexcept { return count_ == 0; }
  std::span<const word_type> words() const noexcept { return words_; }

  bool test(std::size_t voxel) const noexcept {
    return (words_[voxel / kWordBits] >> (voxel % kWordBits)) & 1u;
  }

  void set(std::size_t voxel) noexcept {
    word_type& w = words_[voxel / kWordBits];
    const word_type bit = word_type{1} << (voxel % kWordBits);
    if (!(w & bit)) {
      w |= bit;
      ++count_;
    }
  }

  std::size_t recount() const noexcept {
    std::size_t n = 0;
    for (word_type w : words_) n += static_cast<std::size_t>(std::popcount(w));
    return n;
  }

  /// Voxelwise AND. Grids must already be known compatible.
  BinaryMask& intersect_with(const BinaryMask& other) noexcept {
    std::size_t n = 0;
    for (std::size_t i = 0; i < words_.size(); ++i) {
      words_[i] &= other.words_[i];
      n += static_cast<std::size_t>(std::popcount(words_[i]));
    }
    count_ = n;
    return *this;
  }

  /// Voxelwise OR. Grids must already be known compatible.
  BinaryMask& unite_with(const BinaryMask& other) noexcept {
    std::size_t n = 0;
    for (std::size_t i = 0; i < words_.size(); ++i) {
      words_[i] |= other.words_[i];
      n += static_cast<std::size_t>(std::popcount(words_[i]));
    }
    count_ = n;
    return *this;
  }

  friend bool operator==(const BinaryMask& a, const BinaryMask& b) noexcept {
    return a.size_ == b.size_ && a.count_ == b.count_ && a.words_ == b.words_;
  }

 private:
  VolumeGrid grid_;
  std::size_t size_ = 0;
  std::vector<word_type> words_;
  std::size_t count_ = 0;
};

/// |a AND b| without materializing the intersection.
inline std::size_t intersection_count(const BinaryMask& a, const BinaryMask& b) {
  const auto wa = a.words();
  const auto wb = b.words();
  std::size_t n = 0;
  for (std::size_t i = 0; i < wa.size(); ++i) n += static_cast<std::size_t>(std::popcount(wa[i] & wb[i]));
  return n;
}

inline BinaryMask extract_binary_mask(const LabelVolume& vol, std::uint32_t label_value) {
  BinaryMask mask(vol.grid);
  if (label_value == 0) return mask;
  for (std::size_t v = 0; v < vol.labels.size(); ++v) {
    if (vol.labels[v] == label_value) mask.set(v);
  }
  return mask;
}

/// Extracts several labels in a single pass. Result is aligned with `label_values`;
/// repeated values yield identical masks.
inline std::vector<BinaryMask> extract_binary_masks(const LabelVolume& vol,
                                                    std::span<const std::uint32_t> label_values) {
  std::vector<BinaryMask> masks(label_values.size(), BinaryMask(vol.grid));
  std::unordered_map<std::uint32_t, std::size_t> slot;
  std::uint32_t max_wanted = 0;
  for (std::size_t i = 0; i < label_values.size(); ++i) {
    if (label_values[i] == 0) continue;
    slot.try_emplace(label_values[i], i);
    max_wanted = std::max(max_wanted, label_values[i]);
  }
  constexpr std::size_t kNone = static_cast<std::size_t>(-1);
  std::vector<std::size_t> lut(static_cast<std::size_t>(max_wanted) + 1, kNone);
  for (const auto& [value, i] : slot) lut[value] = i;

  for (std::size_t v = 0; v < vol.labels.size(); ++v) {
    const std::uint32_t l = vol.labels[v];
    if (l != 0 && l <= max_wanted && lut[l] != kNone) masks[lut[l]].set(v);
  }
  for (std::size_t i = 0; i < label_values.size(); ++i) {
    if (label_values[i] == 0) continue;
    const std::size_t first = slot.at(label_values[i]);
    if (first != i) masks[i] = masks[first];
  }
  return masks;
}

/// Mask of every nonzero voxel; how per-structure files are read.
inline BinaryMask nonzero_mask(const LabelVolume& vol) {
  BinaryMask mask(vol.grid);
  for (std::size_t v = 0; v < vol.labels.size(); ++v) {
    if (vol.labels[v] != 0) mask.set(v);
  }
  return mask;
}

}  // namespace concord
