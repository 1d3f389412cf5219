#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "spkmoco/tensor.hpp"
#include "spkmoco/wav.hpp"

namespace spkmoco {

// T×d frames plus a per-frame voice-activity flag. T may be zero.
struct FeatureMatrix {
  std::size_t dim = 0;
  std::vector<double> frames;          // row-major T×dim
  std::vector<std::uint8_t> vad_mask;  // one flag per frame
  double frame_shift_ms = 10.0;
  double frame_length_ms = 25.0;

  FeatureMatrix() = default;
  FeatureMatrix(std::size_t num_frames, std::size_t dim);

  std::size_t num_frames() const { return dim == 0 ? 0 : frames.size() / dim; }
  std::span<double> frame(std::size_t t) { return {frames.data() + t * dim, dim}; }
  std::span<const double> frame(std::size_t t) const { return {frames.data() + t * dim, dim}; }
  double& at(std::size_t t, std::size_t j) { return frames[t * dim + j]; }
  double at(std::size_t t, std::size_t j) const { return frames[t * dim + j]; }

  // Contiguous frames [start, start + length).
  FeatureMatrix slice(std::size_t start, std::size_t length) const;
  Tensor to_tensor() const;
};

struct MfccOptions {
  int sample_rate = 16000;
  double frame_length_ms = 25.0;
  double frame_shift_ms = 10.0;
  double preemph = 0.97;
  int num_mel_bins = 30;
  int num_ceps = 30;
  double low_freq = 20.0;
  double high_freq = 7600.0;
  // Samples are multiplied by this before analysis so log energies live on the
  // 16-bit PCM scale the VAD defaults are tuned for.
  double input_scale = 32768.0;
  double dither = 0.0;
  std::uint64_t dither_seed = 0;
  bool remove_dc = true;
  // Replace C0 with the log raw frame energy.
  bool use_energy = true;

  // Human-readable constants stored in feature archive headers.
  std::string describe() const;
};

struct VadOptions {
  double threshold = 5.5;
  double mean_scale = 0.5;
};

struct FeatureOptions {
  MfccOptions mfcc;
  VadOptions vad;
  int cmn_window = 300;
};

double hz_to_mel(double hz);
double mel_to_hz(double mel);

// Triangular mel filter weights, num_mel_bins × (fft_size/2 + 1).
Tensor mel_filterbank(const MfccOptions& opts, std::size_t fft_size);

std::size_t frame_length_samples(const MfccOptions& opts);
std::size_t frame_shift_samples(const MfccOptions& opts);
std::size_t padded_fft_size(const MfccOptions& opts);
// 1 + (n - frame_length) / frame_shift, or 0 if shorter than one frame.
std::size_t num_frames_for(std::size_t num_samples, const MfccOptions& opts);

// Log mel energies per frame (T × num_mel_bins), before the DCT.
FeatureMatrix compute_log_mel(const AudioWave& wave, const MfccOptions& opts);
FeatureMatrix compute_mfcc(const AudioWave& wave, const MfccOptions& opts);

// Frame kept iff log_energy > threshold + mean_scale * mean(log_energy);
// coefficient 0 holds the log energy.
std::vector<std::uint8_t> energy_vad(const FeatureMatrix& features, const VadOptions& opts);

// Subtracts, per coefficient, the mean of a window of min(window, T) frames
// centred on each frame and shifted inward at the utterance edges.
FeatureMatrix sliding_cmn(const FeatureMatrix& features, int window_frames = 300);

// MFCC -> energy VAD -> sliding CMN over all frames; mask kept alongside.
FeatureMatrix extract_features(const AudioWave& wave, const FeatureOptions& opts);

// Frames whose VAD flag is set.
FeatureMatrix voiced_frames(const FeatureMatrix& features);

}  // namespace spkmoco
