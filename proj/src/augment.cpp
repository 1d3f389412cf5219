#include "spkmoco/augment.hpp"

#include <algorithm>
#include <cmath>

#include "spkmoco/errors.hpp"

namespace spkmoco {

void AugmentPolicy::validate() const {
  if (crop_min > crop_max) throw ParameterError("crop_min must not exceed crop_max");
  if (crop_min <= 2 * warp_window + kMinNetworkContext)
    throw ParameterError("crop_min must exceed 2*warp_window + " +
                         std::to_string(kMinNetworkContext));
}

FeatureMatrix random_crop(const FeatureMatrix& utterance, std::size_t length, Rng& rng,
                          std::size_t* start) {
  const std::size_t t_count = utterance.num_frames();
  if (length == 0 || length > t_count)
    throw DataError("crop of " + std::to_string(length) + " frames from " +
                    std::to_string(t_count) + "-frame utterance");
  const auto s = static_cast<std::size_t>(
      rng.uniform_int(0, static_cast<std::int64_t>(t_count - length)));
  if (start) *start = s;
  return utterance.slice(s, length);
}

std::optional<SegmentPair> random_crop_pair(const FeatureMatrix& utterance,
                                            const AugmentPolicy& policy, Rng& rng) {
  const std::size_t t_count = utterance.num_frames();
  if (t_count < policy.crop_min) return std::nullopt;
  const auto hi = static_cast<std::int64_t>(std::min(policy.crop_max, t_count));
  const auto lo = static_cast<std::int64_t>(policy.crop_min);
  SegmentPair pair;
  const auto len_a = static_cast<std::size_t>(rng.uniform_int(lo, hi));
  const auto len_b = static_cast<std::size_t>(rng.uniform_int(lo, hi));
  pair.a = random_crop(utterance, len_a, rng, &pair.start_a);
  pair.b = random_crop(utterance, len_b, rng, &pair.start_b);
  return pair;
}

FeatureMatrix time_warp_at(const FeatureMatrix& segment, std::size_t anchor,
                           std::ptrdiff_t shift) {
  const std::size_t t_count = segment.num_frames();
  if (shift == 0 || t_count < 3) return segment;
  const auto last = static_cast<double>(t_count - 1);
  const double src_anchor = static_cast<double>(anchor);
  const double dst_anchor = src_anchor + static_cast<double>(shift);
  if (!(dst_anchor >= 0.0 && dst_anchor <= last) || src_anchor > last)
    throw ParameterError("time warp anchor outside segment");
  FeatureMatrix out = segment;
  const std::size_t d = segment.dim;
  for (std::size_t t = 0; t < t_count; ++t) {
    const auto td = static_cast<double>(t);
    double src;
    if (td <= dst_anchor)
      src = dst_anchor > 0.0 ? td * src_anchor / dst_anchor : 0.0;
    else
      src = src_anchor + (td - dst_anchor) * (last - src_anchor) / (last - dst_anchor);
    src = std::clamp(src, 0.0, last);
    const auto i0 = static_cast<std::size_t>(std::floor(src));
    const double frac = src - static_cast<double>(i0);
    const std::size_t i1 = std::min(i0 + 1, t_count - 1);
    for (std::size_t j = 0; j < d; ++j) {
      const double x0 = segment.at(i0, j);
      out.at(t, j) = frac == 0.0 ? x0 : x0 + frac * (segment.at(i1, j) - x0);
    }
  }
  return out;
}

FeatureMatrix time_warp(const FeatureMatrix& segment, std::size_t warp_window, Rng& rng) {
  if (warp_window == 0) return segment;
  const std::size_t t_count = segment.num_frames();
  if (t_count <= 2 * warp_window)
    throw ParameterError("time warp needs a segment longer than twice the warp window");
  const auto w = static_cast<std::int64_t>(warp_window);
  const auto anchor = static_cast<std::size_t>(
      rng.uniform_int(w, static_cast<std::int64_t>(t_count) - w - 1));
  const auto shift = static_cast<std::ptrdiff_t>(rng.uniform_int(-w, w));
  return time_warp_at(segment, anchor, shift);
}

void fill_mask(FeatureMatrix& segment, const MaskRegion& region) {
  const std::size_t t_count = segment.num_frames(), d = segment.dim;
  const std::size_t extent = region.axis == MaskAxis::time ? t_count : d;
  if (region.start + region.width > extent) throw DimensionError("mask region out of range");
  if (region.width == 0 || t_count == 0) return;
  std::vector<double> mean(d, 0.0);
  for (std::size_t t = 0; t < t_count; ++t)
    for (std::size_t j = 0; j < d; ++j) mean[j] += segment.at(t, j);
  for (auto& m : mean) m /= static_cast<double>(t_count);
  if (region.axis == MaskAxis::time) {
    for (std::size_t t = region.start; t < region.start + region.width; ++t)
      for (std::size_t j = 0; j < d; ++j) segment.at(t, j) = mean[j];
  } else {
    for (std::size_t t = 0; t < t_count; ++t)
      for (std::size_t j = region.start; j < region.start + region.width; ++j)
        segment.at(t, j) = mean[j];
  }
}

MaskRegion apply_mask(FeatureMatrix& segment, MaskAxis axis, std::size_t max_width, Rng& rng) {
  const std::size_t extent = axis == MaskAxis::time ? segment.num_frames() : segment.dim;
  if (max_width > extent) throw ParameterError("mask width exceeds axis extent");
  MaskRegion region;
  region.axis = axis;
  if (max_width == 0) return region;
  region.width = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(max_width)));
  region.start = static_cast<std::size_t>(
      rng.uniform_int(0, static_cast<std::int64_t>(extent - region.width)));
  fill_mask(segment, region);
  return region;
}

FeatureMatrix spec_augment(const FeatureMatrix& segment, const AugmentPolicy& policy, Rng& rng) {
  FeatureMatrix out = time_warp(segment, policy.warp_window, rng);
  const std::size_t time_width = std::min(policy.max_time_mask, out.num_frames());
  const std::size_t freq_width = std::min(policy.max_freq_mask, out.dim);
  for (std::size_t i = 0; i < policy.n_time_masks; ++i)
    apply_mask(out, MaskAxis::time, time_width, rng);
  for (std::size_t i = 0; i < policy.n_freq_masks; ++i)
    apply_mask(out, MaskAxis::freq, freq_width, rng);
  return out;
}

std::pair<FeatureMatrix, FeatureMatrix> make_views(const FeatureMatrix& utterance,
                                                   std::size_t length_a, std::size_t length_b,
                                                   const AugmentPolicy& policy, Rng& rng) {
  FeatureMatrix a = random_crop(utterance, length_a, rng);
  FeatureMatrix b = random_crop(utterance, length_b, rng);
  a = spec_augment(a, policy, rng);
  b = spec_augment(b, policy, rng);
  return {std::move(a), std::move(b)};
}

}  // namespace spkmoco
