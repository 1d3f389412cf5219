#pragma once

#include <cstdint>
#include <optional>
#include <utility>

#include "spkmoco/features.hpp"
#include "spkmoco/rng.hpp"

namespace spkmoco {

// Receptive field of the frame-level TDNN stack.
inline constexpr std::size_t kMinNetworkContext = 15;

struct AugmentPolicy {
  std::size_t crop_min = 200;
  std::size_t crop_max = 400;
  std::size_t warp_window = 10;
  std::size_t max_time_mask = 20;
  std::size_t max_freq_mask = 10;
  std::size_t n_time_masks = 1;
  std::size_t n_freq_masks = 1;
  std::uint64_t seed = 0;

  // crop_min <= crop_max and crop_min > 2*warp_window + 15.
  void validate() const;
};

struct SegmentPair {
  FeatureMatrix a;
  FeatureMatrix b;
  std::size_t start_a = 0;
  std::size_t start_b = 0;
};

// Two independently placed crops with independently drawn lengths in
// [crop_min, crop_max] (clipped to the utterance). nullopt when the utterance
// is shorter than crop_min: the caller should skip it.
std::optional<SegmentPair> random_crop_pair(const FeatureMatrix& utterance,
                                            const AugmentPolicy& policy, Rng& rng);

// Single crop of exactly `length` frames at a uniform start.
FeatureMatrix random_crop(const FeatureMatrix& utterance, std::size_t length, Rng& rng,
                          std::size_t* start = nullptr);

// Piecewise-linear time remap sending frame `anchor` to `anchor + shift`
// with both endpoints fixed; frames are linearly interpolated.
FeatureMatrix time_warp_at(const FeatureMatrix& segment, std::size_t anchor, std::ptrdiff_t shift);
// Anchor uniform in [W, T-W), shift uniform in [-W, W].
FeatureMatrix time_warp(const FeatureMatrix& segment, std::size_t warp_window, Rng& rng);

enum class MaskAxis { time, freq };

struct MaskRegion {
  MaskAxis axis = MaskAxis::time;
  std::size_t start = 0;
  std::size_t width = 0;
};

// Sets the region to the per-coefficient mean of the segment.
void fill_mask(FeatureMatrix& segment, const MaskRegion& region);
// Width uniform in {0..max_width}, start uniform over valid positions.
MaskRegion apply_mask(FeatureMatrix& segment, MaskAxis axis, std::size_t max_width, Rng& rng);

// Time warp followed by the configured time and frequency masks.
FeatureMatrix spec_augment(const FeatureMatrix& segment, const AugmentPolicy& policy, Rng& rng);

// Two augmented views with prescribed crop lengths (used for batch bucketing).
std::pair<FeatureMatrix, FeatureMatrix> make_views(const FeatureMatrix& utterance,
                                                   std::size_t length_a, std::size_t length_b,
                                                   const AugmentPolicy& policy, Rng& rng);

}  // namespace spkmoco
