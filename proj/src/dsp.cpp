#include "uit/dsp.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <memory>
#include <mutex>
#include <numbers>
#include <numeric>
#include <stdexcept>
#include <string>

namespace uit {

std::size_t MelConfig::win_length() const {
  return static_cast<std::size_t>(std::lround(win_ms * kSampleRate / 1000.0));
}

std::size_t MelConfig::hop_length() const {
  return static_cast<std::size_t>(std::lround(hop_ms * kSampleRate / 1000.0));
}

void MelConfig::validate() const {
  if (n_mels < 1) throw std::invalid_argument("mel config: n_mels must be >= 1");
  if (hop_length() < 1) throw std::invalid_argument("mel config: hop must be >= 1 sample");
  if (win_length() < 1 || fft_size < win_length()) {
    throw std::invalid_argument("mel config: fft_size " + std::to_string(fft_size) +
                                " smaller than window of " +
                                std::to_string(win_length()) + " samples");
  }
  if (!(fmin >= 0.0 && fmin < fmax && fmax <= kSampleRate / 2.0)) {
    throw std::invalid_argument("mel config: need 0 <= fmin < fmax <= 8000");
  }
  if (!(log_floor > 0.0)) throw std::invalid_argument("mel config: log_floor must be positive");
}

AugmentSpec AugmentSpec::identity() {
  AugmentSpec s;
  s.max_shift_fraction = 0.0;
  s.gain_db_range = {0.0, 0.0};
  s.polarity_prob = 0.0;
  s.specaug_time_masks = 0;
  s.specaug_freq_masks = 0;
  return s;
}

void AugmentSpec::validate() const {
  auto in_unit = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (!in_unit(max_shift_fraction)) throw std::invalid_argument("augment: max_shift_fraction outside [0,1]");
  if (!in_unit(polarity_prob)) throw std::invalid_argument("augment: polarity_prob outside [0,1]");
  if (gain_db_range.first > gain_db_range.second) {
    throw std::invalid_argument("augment: gain range lower bound exceeds upper bound");
  }
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

namespace {

std::vector<double> mel_edges(const MelConfig& cfg) {
  const double lo = hz_to_mel(cfg.fmin);
  const double hi = hz_to_mel(cfg.fmax);
  std::vector<double> edges(cfg.n_mels + 2);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    edges[i] = mel_to_hz(lo + (hi - lo) * double(i) / double(cfg.n_mels + 1));
  }
  return edges;
}

std::vector<float> periodic_hann(std::size_t n) {
  std::vector<float> w(n);
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = static_cast<float>(0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * double(i) / double(n)));
  }
  return w;
}

struct FftwFree {
  void operator()(void* p) const { fftwf_free(p); }
};
struct PlanDestroy {
  void operator()(fftwf_plan_s* p) const { fftwf_destroy_plan(p); }
};

// FFTW planning is not thread-safe; execution with new-array entry points is.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

class RealFft {
 public:
  explicit RealFft(std::size_t n) : n_(n) {
    in_.reset(static_cast<float*>(fftwf_malloc(sizeof(float) * n)));
    out_.reset(static_cast<fftwf_complex*>(fftwf_malloc(sizeof(fftwf_complex) * (n / 2 + 1))));
    std::lock_guard lock(planner_mutex());
    plan_.reset(fftwf_plan_dft_r2c_1d(static_cast<int>(n), in_.get(), out_.get(), FFTW_ESTIMATE));
    if (!plan_) throw std::runtime_error("fft: failed to create plan");
  }

  float* input() { return in_.get(); }

  // Power spectrum |X_k|^2 for k in [0, n/2].
  void power(std::span<float> out) {
    fftwf_execute(plan_.get());
    const fftwf_complex* spec = out_.get();
    for (std::size_t k = 0; k <= n_ / 2; ++k) {
      out[k] = spec[k][0] * spec[k][0] + spec[k][1] * spec[k][1];
    }
  }

 private:
  std::size_t n_;
  std::unique_ptr<float, FftwFree> in_;
  std::unique_ptr<fftwf_complex, FftwFree> out_;
  std::unique_ptr<fftwf_plan_s, PlanDestroy> plan_;
};

}  // namespace

Tensor mel_filterbank(const MelConfig& cfg) {
  cfg.validate();
  const std::size_t n_bins = cfg.fft_size / 2 + 1;
  const auto edges = mel_edges(cfg);
  Tensor fb({n_bins, cfg.n_mels});
  for (std::size_t k = 0; k < n_bins; ++k) {
    const double f = double(k) * kSampleRate / double(cfg.fft_size);
    for (std::size_t m = 0; m < cfg.n_mels; ++m) {
      const double up = (f - edges[m]) / (edges[m + 1] - edges[m]);
      const double down = (edges[m + 2] - f) / (edges[m + 2] - edges[m + 1]);
      fb(k, m) = static_cast<float>(std::max(0.0, std::min(up, down)));
    }
  }
  return fb;
}

std::vector<double> mel_center_frequencies(const MelConfig& cfg) {
  const auto edges = mel_edges(cfg);
  return {edges.begin() + 1, edges.end() - 1};
}

std::size_t frame_count(std::size_t num_samples, const MelConfig& cfg) {
  const std::size_t win = cfg.win_length();
  if (num_samples < win) return 0;
  return 1 + (num_samples - win) / cfg.hop_length();
}

Spectrogram log_mel(const Waveform& wave, const MelConfig& cfg) {
  cfg.validate();
  if (wave.sample_rate != kSampleRate) {
    throw std::invalid_argument("log_mel: sample rate " + std::to_string(wave.sample_rate) +
                                " Hz unsupported, expected 16000 Hz");
  }
  const std::size_t win = cfg.win_length();
  if (wave.size() < win) {
    throw std::invalid_argument("log_mel: waveform has " + std::to_string(wave.size()) +
                                " samples, minimum is " + std::to_string(win));
  }
  for (float s : wave.samples) {
    if (!std::isfinite(s)) throw std::invalid_argument("log_mel: non-finite sample");
  }

  const std::size_t hop = cfg.hop_length();
  const std::size_t frames = frame_count(wave.size(), cfg);
  const std::size_t n_bins = cfg.fft_size / 2 + 1;
  const Tensor fb = mel_filterbank(cfg);
  const auto window = periodic_hann(win);
  const float log_floor = static_cast<float>(cfg.log_floor);

  RealFft fft(cfg.fft_size);
  Tensor power({1, n_bins});
  Spectrogram out{Tensor({frames, cfg.n_mels})};
  for (std::size_t t = 0; t < frames; ++t) {
    float* in = fft.input();
    std::fill(in, in + cfg.fft_size, 0.0f);
    const float* src = wave.samples.data() + t * hop;
    for (std::size_t i = 0; i < win; ++i) in[i] = src[i] * window[i];
    fft.power(power.data());
    const Tensor mel = matmul(power, fb);
    auto row = out.data.row(t);
    for (std::size_t m = 0; m < cfg.n_mels; ++m) {
      row[m] = std::log(std::max(mel[m], log_floor));
    }
  }
  return out;
}

Waveform augment_waveform(const Waveform& wave, const AugmentSpec& spec, Rng& rng) {
  spec.validate();
  const auto n = static_cast<std::ptrdiff_t>(wave.size());
  const auto max_shift =
      static_cast<std::ptrdiff_t>(std::floor(spec.max_shift_fraction * double(n)));
  std::uniform_int_distribution<std::ptrdiff_t> shift_dist(-max_shift, max_shift);
  std::uniform_real_distribution<double> gain_dist(spec.gain_db_range.first,
                                                   std::nextafter(spec.gain_db_range.second, INFINITY));
  std::bernoulli_distribution flip_dist(spec.polarity_prob);

  const std::ptrdiff_t shift = shift_dist(rng);
  const double gain_db = spec.gain_db_range.first == spec.gain_db_range.second
                             ? spec.gain_db_range.first
                             : gain_dist(rng);
  const bool flip = flip_dist(rng);
  const float scale = static_cast<float>(std::pow(10.0, gain_db / 20.0)) * (flip ? -1.0f : 1.0f);

  Waveform out{std::vector<float>(wave.size(), 0.0f), wave.sample_rate};
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const std::ptrdiff_t src = i - shift;
    if (src >= 0 && src < n) out.samples[i] = wave.samples[src] * scale;
  }
  return out;
}

Spectrogram spec_augment(const Spectrogram& sg, const AugmentSpec& spec, Rng& rng) {
  spec.validate();
  Spectrogram out = sg;
  const std::size_t frames = sg.frames();
  const std::size_t bins = sg.bins();
  if (frames == 0 || bins == 0) return out;
  if ((spec.specaug_time_masks > 0 && spec.specaug_time_width >= frames) ||
      (spec.specaug_freq_masks > 0 && spec.specaug_freq_width >= bins)) {
    throw std::invalid_argument("spec_augment: mask width must be smaller than the masked axis (" +
                                std::to_string(frames) + " frames, " + std::to_string(bins) +
                                " bins)");
  }
  const auto vals = sg.data.data();
  const float fill = static_cast<float>(
      std::accumulate(vals.begin(), vals.end(), 0.0) / double(vals.size()));

  for (std::size_t i = 0; i < spec.specaug_time_masks; ++i) {
    const std::size_t w = std::uniform_int_distribution<std::size_t>(0, spec.specaug_time_width)(rng);
    const std::size_t t0 = std::uniform_int_distribution<std::size_t>(0, frames - w)(rng);
    for (std::size_t t = t0; t < t0 + w; ++t) {
      for (std::size_t f = 0; f < bins; ++f) out.data(t, f) = fill;
    }
  }
  for (std::size_t i = 0; i < spec.specaug_freq_masks; ++i) {
    const std::size_t w = std::uniform_int_distribution<std::size_t>(0, spec.specaug_freq_width)(rng);
    const std::size_t f0 = std::uniform_int_distribution<std::size_t>(0, bins - w)(rng);
    for (std::size_t t = 0; t < frames; ++t) {
      for (std::size_t f = f0; f < f0 + w; ++f) out.data(t, f) = fill;
    }
  }
  return out;
}

// ---- WAV ---------------------------------------------------------------------

namespace {

std::uint32_t le32(const std::uint8_t* p) {
  return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 |
         std::uint32_t(p[3]) << 24;
}
std::uint16_t le16(const std::uint8_t* p) {
  return static_cast<std::uint16_t>(p[0] | p[1] << 8);
}

}  // namespace

Waveform decode_wav(std::span<const std::uint8_t> bytes, const std::string& origin) {
  auto fail = [&](const std::string& why) {
    return std::runtime_error(origin + ": " + why);
  };
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw fail("not a RIFF/WAVE file");
  }
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::uint8_t* hdr = bytes.data() + pos;
    const std::uint32_t len = le32(hdr + 4);
    const std::size_t body = pos + 8;
    if (body + len > bytes.size()) throw fail("truncated chunk");
    if (std::memcmp(hdr, "fmt ", 4) == 0) {
      if (len < 16) throw fail("short fmt chunk");
      format = le16(bytes.data() + body);
      channels = le16(bytes.data() + body + 2);
      rate = le32(bytes.data() + body + 4);
      bits = le16(bytes.data() + body + 14);
      if (format == 0xFFFE && len >= 26) format = le16(bytes.data() + body + 24);
      have_fmt = true;
    } else if (std::memcmp(hdr, "data", 4) == 0) {
      if (!have_fmt) throw fail("data chunk before fmt chunk");
      if (channels != 1) throw fail("expected mono audio, got " + std::to_string(channels) + " channels");
      if (rate != kSampleRate) throw fail("expected 16000 Hz, got " + std::to_string(rate) + " Hz");
      Waveform w;
      const std::uint8_t* d = bytes.data() + body;
      if (format == 1 && bits == 16) {
        w.samples.resize(len / 2);
        for (std::size_t i = 0; i < w.samples.size(); ++i) {
          w.samples[i] = static_cast<float>(static_cast<std::int16_t>(le16(d + 2 * i))) / 32768.0f;
        }
      } else if (format == 3 && bits == 32) {
        w.samples.resize(len / 4);
        for (std::size_t i = 0; i < w.samples.size(); ++i) {
          const std::uint32_t u = le32(d + 4 * i);
          std::memcpy(&w.samples[i], &u, 4);
        }
      } else {
        throw fail("unsupported encoding (format " + std::to_string(format) + ", " +
                   std::to_string(bits) + " bits); need 16-bit PCM or 32-bit float");
      }
      return w;
    }
    pos = body + len + (len & 1);
  }
  throw fail("no data chunk");
}

Waveform read_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(path + ": cannot open file");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_wav(bytes, path);
}

void write_wav16(const std::string& path, const Waveform& wave) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error(path + ": cannot open file for writing");
  auto put32 = [&](std::uint32_t v) {
    const char b[4] = {char(v), char(v >> 8), char(v >> 16), char(v >> 24)};
    out.write(b, 4);
  };
  auto put16 = [&](std::uint16_t v) {
    const char b[2] = {char(v), char(v >> 8)};
    out.write(b, 2);
  };
  const auto data_len = static_cast<std::uint32_t>(wave.size() * 2);
  out.write("RIFF", 4);
  put32(36 + data_len);
  out.write("WAVEfmt ", 8);
  put32(16);
  put16(1);
  put16(1);
  put32(static_cast<std::uint32_t>(wave.sample_rate));
  put32(static_cast<std::uint32_t>(wave.sample_rate) * 2);
  put16(2);
  put16(16);
  out.write("data", 4);
  put32(data_len);
  for (float s : wave.samples) {
    const float c = std::clamp(s, -1.0f, 1.0f);
    put16(static_cast<std::uint16_t>(static_cast<std::int16_t>(std::lround(c * 32767.0f))));
  }
  if (!out) throw std::runtime_error(path + ": write failed");
}

}  // namespace uit
