#include "spkmoco/synthetic.hpp"

#include <cmath>
#include <cstdio>

#include "spkmoco/errors.hpp"
#include "spkmoco/rng.hpp"

namespace spkmoco {

void SyntheticOptions::validate() const {
  if (n_speakers < 1 || utts_per_speaker < 1 || dim < 1 || n_phones < 1)
    throw ParameterError("synthetic corpus sizes must be positive");
  if (min_frames < 1 || min_frames > max_frames) throw ParameterError("bad synthetic length range");
  if (phone_min_frames < 1 || phone_min_frames > phone_max_frames)
    throw ParameterError("bad synthetic phone duration range");
  if (!(noise_smoothing >= 0.0 && noise_smoothing < 1.0))
    throw ParameterError("noise_smoothing must lie in [0, 1)");
}

namespace {

std::vector<double> gaussian(std::size_t n, double sd, Rng& rng) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal(0.0, sd);
  return v;
}

std::string label(const char* prefix, std::size_t i, int width) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%0*zu", prefix, width, i);
  return buf;
}

}  // namespace

std::vector<SyntheticUtterance> make_synthetic(const SyntheticOptions& o) {
  o.validate();
  Rng world(derive_seed(o.seed, "world"));
  const std::size_t d = o.dim;
  std::vector<std::vector<double>> phones;
  for (std::size_t p = 0; p < o.n_phones; ++p) phones.push_back(gaussian(d, o.phone_scale, world));

  std::vector<SyntheticUtterance> out;
  out.reserve(o.n_speakers * o.utts_per_speaker);
  // Keeps the AR(1) noise at noise_scale marginal stddev.
  const double innovation = o.noise_scale * std::sqrt(1.0 - o.noise_smoothing * o.noise_smoothing);
  for (std::size_t s = 0; s < o.n_speakers; ++s) {
    const std::string spk = label("spk", s, 2);
    Rng spk_rng(derive_seed(o.seed, spk));
    const auto offset = gaussian(d, o.speaker_offset_scale, spk_rng);
    std::vector<std::vector<double>> templates;
    for (std::size_t p = 0; p < o.n_phones; ++p) {
      auto dev = gaussian(d, o.speaker_dev_scale, spk_rng);
      for (std::size_t j = 0; j < d; ++j) dev[j] += phones[p][j] + offset[j];
      templates.push_back(std::move(dev));
    }
    for (std::size_t u = 0; u < o.utts_per_speaker; ++u) {
      SyntheticUtterance utt;
      utt.speaker = spk;
      utt.id = spk + "-" + label("utt", u, 3);
      Rng rng(derive_seed(o.seed, utt.id));
      const auto len = static_cast<std::size_t>(rng.uniform_int(
          static_cast<std::int64_t>(o.min_frames), static_cast<std::int64_t>(o.max_frames)));
      const auto channel = gaussian(d, o.channel_scale, rng);
      utt.features = FeatureMatrix(len, d);
      std::vector<double> noise = gaussian(d, o.noise_scale, rng);
      std::size_t t = 0;
      while (t < len) {
        const auto p = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(o.n_phones) - 1));
        const auto dur = static_cast<std::size_t>(rng.uniform_int(
            static_cast<std::int64_t>(o.phone_min_frames), static_cast<std::int64_t>(o.phone_max_frames)));
        for (std::size_t k = 0; k < dur && t < len; ++k, ++t) {
          for (std::size_t j = 0; j < d; ++j) {
            if (t > 0) noise[j] = o.noise_smoothing * noise[j] + rng.normal(0.0, innovation);
            utt.features.at(t, j) = templates[p][j] + channel[j] + noise[j];
          }
        }
      }
      out.push_back(std::move(utt));
    }
  }
  return out;
}

}  // namespace spkmoco
