#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "spkmoco/features.hpp"

namespace spkmoco {

// Feature-domain toy corpus. Every frame is a phone realization drawn from a
// shared inventory, bent by a speaker-specific template and offset, plus a
// per-utterance channel offset and smoothed frame noise:
//   x_t = phone[p] + speaker_dev[s][p] + speaker_offset[s] + channel[u] + noise_t
// Phones last a random number of frames.
struct SyntheticOptions {
  std::size_t n_speakers = 20;
  std::size_t utts_per_speaker = 50;
  std::size_t dim = 30;
  std::size_t n_phones = 12;
  std::size_t min_frames = 200;
  std::size_t max_frames = 400;
  std::size_t phone_min_frames = 4;
  std::size_t phone_max_frames = 12;
  double phone_scale = 1.0;
  double speaker_dev_scale = 0.5;
  double speaker_offset_scale = 0.5;
  double channel_scale = 0.25;
  double noise_scale = 0.6;
  double noise_smoothing = 0.5;  // AR(1) coefficient of the frame noise
  std::uint64_t seed = 1;

  void validate() const;
};

struct SyntheticUtterance {
  std::string id;
  std::string speaker;
  FeatureMatrix features;  // every frame voiced
};

// Utterances ordered by speaker; ids "spkNN-uttMMM", speakers "spkNN".
std::vector<SyntheticUtterance> make_synthetic(const SyntheticOptions& options);

}  // namespace spkmoco
