#include "spkmoco/features.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cfloat>
#include <cmath>
#include <mutex>
#include <sstream>

#include "spkmoco/errors.hpp"
#include "spkmoco/rng.hpp"

namespace spkmoco {

namespace {

// FFTW planning is not thread-safe; execution with distinct buffers is.
std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

class RealFft {
 public:
  explicit RealFft(std::size_t n) : n_(n) {
    in_ = fftw_alloc_real(n);
    out_ = fftw_alloc_complex(n / 2 + 1);
    std::lock_guard lock(fftw_planner_mutex());
    plan_ = fftw_plan_dft_r2c_1d(static_cast<int>(n), in_, out_, FFTW_ESTIMATE);
  }
  ~RealFft() {
    {
      std::lock_guard lock(fftw_planner_mutex());
      fftw_destroy_plan(plan_);
    }
    fftw_free(in_);
    fftw_free(out_);
  }
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  double* input() { return in_; }
  // |X_k| for k in [0, n/2].
  void magnitude(std::vector<double>& mag) {
    fftw_execute(plan_);
    mag.resize(n_ / 2 + 1);
    for (std::size_t k = 0; k <= n_ / 2; ++k) mag[k] = std::hypot(out_[k][0], out_[k][1]);
  }

 private:
  std::size_t n_;
  double* in_;
  fftw_complex* out_;
  fftw_plan plan_;
};

void validate(const MfccOptions& o, int wave_rate) {
  if (o.num_mel_bins < 1) throw ParameterError("num_mel_bins must be positive");
  if (o.num_ceps < 1 || o.num_ceps > o.num_mel_bins)
    throw ParameterError("num_ceps must lie in [1, num_mel_bins]");
  if (!(o.low_freq >= 0.0 && o.high_freq > o.low_freq && o.high_freq <= 0.5 * o.sample_rate))
    throw ParameterError("mel band edges must satisfy 0 <= low < high <= nyquist");
  if (wave_rate != o.sample_rate)
    throw ParameterError("wave sample rate " + std::to_string(wave_rate) + " differs from " +
                         std::to_string(o.sample_rate) + " (no resampling)");
}

}  // namespace

FeatureMatrix::FeatureMatrix(std::size_t num_frames, std::size_t d)
    : dim(d), frames(num_frames * d, 0.0), vad_mask(num_frames, 1) {}

FeatureMatrix FeatureMatrix::slice(std::size_t start, std::size_t length) const {
  if (start + length > num_frames()) throw DimensionError("feature slice out of range");
  FeatureMatrix out(length, dim);
  std::copy_n(frames.begin() + static_cast<std::ptrdiff_t>(start * dim), length * dim,
              out.frames.begin());
  std::copy_n(vad_mask.begin() + static_cast<std::ptrdiff_t>(start), length, out.vad_mask.begin());
  out.frame_shift_ms = frame_shift_ms;
  out.frame_length_ms = frame_length_ms;
  return out;
}

Tensor FeatureMatrix::to_tensor() const {
  if (num_frames() == 0) throw DataError("empty feature matrix");
  return Tensor({num_frames(), dim}, frames);
}

std::string MfccOptions::describe() const {
  std::ostringstream os;
  os.precision(17);
  os << "sample_rate=" << sample_rate << " frame_length_ms=" << frame_length_ms
     << " frame_shift_ms=" << frame_shift_ms << " preemph=" << preemph
     << " window=povey spectrum=magnitude fft=" << padded_fft_size(*this)
     << " num_mel_bins=" << num_mel_bins << " num_ceps=" << num_ceps << " low_freq=" << low_freq
     << " high_freq=" << high_freq << " input_scale=" << input_scale << " dither=" << dither
     << " remove_dc=" << remove_dc << " c0=" << (use_energy ? "log_energy" : "cepstral")
     << " dct=orthonormal log_floor=DBL_EPSILON";
  return os.str();
}

double hz_to_mel(double hz) { return 1127.0 * std::log(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::exp(mel / 1127.0) - 1.0); }

std::size_t frame_length_samples(const MfccOptions& o) {
  return static_cast<std::size_t>(std::lround(o.sample_rate * o.frame_length_ms / 1000.0));
}
std::size_t frame_shift_samples(const MfccOptions& o) {
  return static_cast<std::size_t>(std::lround(o.sample_rate * o.frame_shift_ms / 1000.0));
}
std::size_t padded_fft_size(const MfccOptions& o) {
  std::size_t n = 1;
  while (n < frame_length_samples(o)) n <<= 1;
  return n;
}
std::size_t num_frames_for(std::size_t num_samples, const MfccOptions& o) {
  const std::size_t len = frame_length_samples(o);
  if (num_samples < len) return 0;
  return 1 + (num_samples - len) / frame_shift_samples(o);
}

Tensor mel_filterbank(const MfccOptions& o, std::size_t fft_size) {
  const std::size_t bins = fft_size / 2 + 1;
  const auto m = static_cast<std::size_t>(o.num_mel_bins);
  Tensor fb({m, bins});
  const double mel_lo = hz_to_mel(o.low_freq), mel_hi = hz_to_mel(o.high_freq);
  const double delta = (mel_hi - mel_lo) / static_cast<double>(m + 1);
  for (std::size_t b = 0; b < m; ++b) {
    const double left = mel_lo + b * delta, center = left + delta, right = center + delta;
    for (std::size_t k = 0; k < bins; ++k) {
      const double mel = hz_to_mel(static_cast<double>(k) * o.sample_rate / fft_size);
      if (mel > left && mel < right)
        fb.at(b, k) = mel <= center ? (mel - left) / (center - left) : (right - mel) / (right - center);
    }
  }
  return fb;
}

namespace {

// Shared front end; emits log mel energies and log raw energies per frame.
void analyse(const AudioWave& wave, const MfccOptions& o, FeatureMatrix& log_mel,
             std::vector<double>& log_energy) {
  validate(o, wave.sample_rate);
  const std::size_t len = frame_length_samples(o), shift = frame_shift_samples(o);
  const std::size_t t_count = num_frames_for(wave.samples.size(), o);
  if (t_count == 0)
    throw DataError("waveform of " + std::to_string(wave.samples.size()) +
                    " samples is shorter than one frame");
  const std::size_t nfft = padded_fft_size(o);
  const Tensor fb = mel_filterbank(o, nfft);
  std::vector<double> window(len);
  for (std::size_t i = 0; i < len; ++i)
    window[i] = std::pow(0.5 - 0.5 * std::cos(2.0 * M_PI * i / static_cast<double>(len - 1)), 0.85);

  RealFft fft(nfft);
  Rng dither_rng(o.dither_seed);
  std::vector<double> frame(len), mag;
  log_mel = FeatureMatrix(t_count, static_cast<std::size_t>(o.num_mel_bins));
  log_mel.frame_shift_ms = o.frame_shift_ms;
  log_mel.frame_length_ms = o.frame_length_ms;
  log_energy.assign(t_count, 0.0);
  const double floor = std::log(DBL_EPSILON);

  for (std::size_t t = 0; t < t_count; ++t) {
    for (std::size_t i = 0; i < len; ++i) {
      frame[i] = wave.samples[t * shift + i] * o.input_scale;
      if (o.dither != 0.0) frame[i] += o.dither * dither_rng.normal();
    }
    if (o.remove_dc) {
      double mean = 0.0;
      for (double v : frame) mean += v;
      mean /= static_cast<double>(len);
      for (double& v : frame) v -= mean;
    }
    double energy = 0.0;
    for (double v : frame) energy += v * v;
    log_energy[t] = std::max(std::log(std::max(energy, DBL_EPSILON)), floor);

    if (o.preemph != 0.0) {
      for (std::size_t i = len - 1; i > 0; --i) frame[i] -= o.preemph * frame[i - 1];
      frame[0] -= o.preemph * frame[0];
    }
    double* in = fft.input();
    for (std::size_t i = 0; i < len; ++i) in[i] = frame[i] * window[i];
    for (std::size_t i = len; i < nfft; ++i) in[i] = 0.0;
    fft.magnitude(mag);
    for (std::size_t b = 0; b < fb.rows(); ++b) {
      double e = 0.0;
      for (std::size_t k = 0; k < mag.size(); ++k) e += fb.at(b, k) * mag[k];
      log_mel.at(t, b) = std::log(std::max(e, DBL_EPSILON));
    }
  }
}

}  // namespace

FeatureMatrix compute_log_mel(const AudioWave& wave, const MfccOptions& opts) {
  FeatureMatrix log_mel;
  std::vector<double> log_energy;
  analyse(wave, opts, log_mel, log_energy);
  return log_mel;
}

FeatureMatrix compute_mfcc(const AudioWave& wave, const MfccOptions& opts) {
  FeatureMatrix log_mel;
  std::vector<double> log_energy;
  analyse(wave, opts, log_mel, log_energy);
  const auto m = static_cast<std::size_t>(opts.num_mel_bins);
  const auto nc = static_cast<std::size_t>(opts.num_ceps);
  std::vector<double> dct(nc * m);
  for (std::size_t k = 0; k < nc; ++k) {
    const double norm = std::sqrt((k == 0 ? 1.0 : 2.0) / static_cast<double>(m));
    for (std::size_t j = 0; j < m; ++j)
      dct[k * m + j] = norm * std::cos(M_PI * k * (j + 0.5) / static_cast<double>(m));
  }
  FeatureMatrix out(log_mel.num_frames(), nc);
  out.frame_shift_ms = opts.frame_shift_ms;
  out.frame_length_ms = opts.frame_length_ms;
  for (std::size_t t = 0; t < out.num_frames(); ++t) {
    for (std::size_t k = 0; k < nc; ++k) {
      double s = 0.0;
      for (std::size_t j = 0; j < m; ++j) s += dct[k * m + j] * log_mel.at(t, j);
      out.at(t, k) = s;
    }
    if (opts.use_energy) out.at(t, 0) = log_energy[t];
  }
  return out;
}

std::vector<std::uint8_t> energy_vad(const FeatureMatrix& features, const VadOptions& opts) {
  const std::size_t t_count = features.num_frames();
  std::vector<std::uint8_t> mask(t_count, 0);
  if (t_count == 0) return mask;
  double mean = 0.0;
  for (std::size_t t = 0; t < t_count; ++t) mean += features.at(t, 0);
  mean /= static_cast<double>(t_count);
  const double threshold = opts.threshold + opts.mean_scale * mean;
  for (std::size_t t = 0; t < t_count; ++t) mask[t] = features.at(t, 0) > threshold;
  return mask;
}

FeatureMatrix sliding_cmn(const FeatureMatrix& features, int window_frames) {
  if (window_frames < 1) throw ParameterError("cmn window must be at least one frame");
  const std::size_t t_count = features.num_frames(), d = features.dim;
  FeatureMatrix out = features;
  if (t_count == 0) return out;
  const std::size_t w = std::min<std::size_t>(static_cast<std::size_t>(window_frames), t_count);
  for (std::size_t t = 0; t < t_count; ++t) {
    std::ptrdiff_t start = static_cast<std::ptrdiff_t>(t) - static_cast<std::ptrdiff_t>(w / 2);
    start = std::clamp<std::ptrdiff_t>(start, 0, static_cast<std::ptrdiff_t>(t_count - w));
    const auto s = static_cast<std::size_t>(start);
    for (std::size_t j = 0; j < d; ++j) {
      double sum = 0.0;
      for (std::size_t u = s; u < s + w; ++u) sum += features.at(u, j);
      out.at(t, j) = features.at(t, j) - sum / static_cast<double>(w);
    }
  }
  return out;
}

FeatureMatrix extract_features(const AudioWave& wave, const FeatureOptions& opts) {
  FeatureMatrix mfcc = compute_mfcc(wave, opts.mfcc);
  const auto mask = energy_vad(mfcc, opts.vad);
  FeatureMatrix out = sliding_cmn(mfcc, opts.cmn_window);
  out.vad_mask = mask;
  return out;
}

FeatureMatrix voiced_frames(const FeatureMatrix& features) {
  FeatureMatrix out;
  out.dim = features.dim;
  out.frame_shift_ms = features.frame_shift_ms;
  out.frame_length_ms = features.frame_length_ms;
  for (std::size_t t = 0; t < features.num_frames(); ++t) {
    if (!features.vad_mask[t]) continue;
    auto f = features.frame(t);
    out.frames.insert(out.frames.end(), f.begin(), f.end());
    out.vad_mask.push_back(1);
  }
  return out;
}

}  // namespace spkmoco
