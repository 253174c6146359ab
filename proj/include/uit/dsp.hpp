// Log-Mel front end and waveform/spectrogram augmentation.

#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <utility>
#include <vector>

#include "uit/tensor.hpp"

namespace uit {

using Rng = std::mt19937_64;

inline constexpr int kSampleRate = 16000;

struct Waveform {
  std::vector<float> samples;
  int sample_rate = kSampleRate;

  std::size_t size() const { return samples.size(); }
  double seconds() const { return double(samples.size()) / sample_rate; }
};

// Defaults: 64 HTK-scale mel bands over 0..8000 Hz, 32 ms periodic Hann
// window, 10 ms hop, 512-point FFT, no centre padding, natural log.
struct MelConfig {
  std::size_t n_mels = 64;
  double win_ms = 32.0;
  double hop_ms = 10.0;
  std::size_t fft_size = 512;
  double fmin = 0.0;
  double fmax = 8000.0;
  double log_floor = 1e-10;

  std::size_t win_length() const;
  std::size_t hop_length() const;
  void validate() const;
};

// Frames [T, n_mels], natural log of floored mel energies.
struct Spectrogram {
  Tensor data;

  std::size_t frames() const { return data.rank() == 2 ? data.dim(0) : 0; }
  std::size_t bins() const { return data.rank() == 2 ? data.dim(1) : 0; }
};

struct AugmentSpec {
  double max_shift_fraction = 0.1;
  std::pair<double, double> gain_db_range{-6.0, 6.0};
  double polarity_prob = 0.5;
  std::size_t specaug_time_masks = 2;
  std::size_t specaug_time_width = 20;
  std::size_t specaug_freq_masks = 2;
  std::size_t specaug_freq_width = 8;
  std::uint64_t rng_seed = 0;

  // Leaves every input untouched.
  static AugmentSpec identity();
  void validate() const;
};

double hz_to_mel(double hz);
double mel_to_hz(double mel);

// Triangular HTK filterbank, shape [fft_size/2 + 1, n_mels].
Tensor mel_filterbank(const MelConfig& cfg);

// Centre frequency of each mel band in Hz.
std::vector<double> mel_center_frequencies(const MelConfig& cfg);

std::size_t frame_count(std::size_t num_samples, const MelConfig& cfg);

Spectrogram log_mel(const Waveform& wave, const MelConfig& cfg = {});

Waveform augment_waveform(const Waveform& wave, const AugmentSpec& spec, Rng& rng);

Spectrogram spec_augment(const Spectrogram& sg, const AugmentSpec& spec, Rng& rng);

// PCM WAV I/O. Reads 16-bit integer or 32-bit float mono at 16 kHz.
Waveform read_wav(const std::string& path);
Waveform decode_wav(std::span<const std::uint8_t> bytes, const std::string& origin);
void write_wav16(const std::string& path, const Waveform& wave);

}  // namespace uit
