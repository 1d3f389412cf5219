#pragma once

#include <filesystem>
#include <vector>

namespace spkmoco {

struct AudioWave {
  std::vector<double> samples;  // in [-1, 1]
  int sample_rate = 16000;
};

// Reads a RIFF/WAVE PCM16 file (plain or WAVE_FORMAT_EXTENSIBLE). Samples are
// scaled by 1/32768. Multichannel files need an explicit channel index.
AudioWave read_wav(const std::filesystem::path& path, int channel = -1);

// Writes mono PCM16, rounding to the nearest code and clamping.
void write_wav(const std::filesystem::path& path, const AudioWave& wave);

}  // namespace spkmoco
