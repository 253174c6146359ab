#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>

#include "doctest.h"
#include "uit/dsp.hpp"

using namespace uit;

namespace {

Waveform sine(double hz, std::size_t n, double amp = 1.0) {
  Waveform w;
  w.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    w.samples[i] = static_cast<float>(amp * std::sin(2.0 * std::numbers::pi * hz * double(i) / kSampleRate));
  }
  return w;
}

Waveform noise(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<float> u(-0.5f, 0.5f);
  Waveform w;
  w.samples.resize(n);
  for (auto& s : w.samples) s = u(rng);
  return w;
}

}  // namespace

TEST_CASE("one second yields 97 frames of 64 bins") {
  const Spectrogram sg = log_mel(noise(16000, 1));
  CHECK(sg.frames() == 97);
  CHECK(sg.bins() == 64);
}

TEST_CASE("frame count formula over random lengths") {
  Rng rng(7);
  std::uniform_int_distribution<std::size_t> len(512, 6000);
  for (int i = 0; i < 25; ++i) {
    const std::size_t n = len(rng);
    const std::size_t expected = 1 + (n - 512) / 160;
    CHECK(frame_count(n, MelConfig{}) == expected);
    CHECK(log_mel(noise(n, i)).frames() == expected);
  }
}

TEST_CASE("digital silence sits exactly on the log floor") {
  Waveform w{std::vector<float>(16000, 0.0f)};
  const Spectrogram sg = log_mel(w);
  const float floor = static_cast<float>(std::log(1e-10));
  for (float v : sg.data.data()) CHECK(v == floor);
}

TEST_CASE("1 kHz sine peaks in the band whose centre is nearest 1 kHz") {
  // Centre frequencies from the HTK formula, independent of the library.
  const double mel_max = 2595.0 * std::log10(1.0 + 8000.0 / 700.0);
  std::size_t nearest = 0;
  double best = 1e9;
  for (std::size_t m = 0; m < 64; ++m) {
    const double mel = mel_max * double(m + 1) / 65.0;
    const double hz = 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0);
    if (std::abs(hz - 1000.0) < best) {
      best = std::abs(hz - 1000.0);
      nearest = m;
    }
  }
  const Spectrogram sg = log_mel(sine(1000.0, 16000));
  std::vector<double> marginal(64, 0.0);
  for (std::size_t t = 0; t < sg.frames(); ++t) {
    for (std::size_t m = 0; m < 64; ++m) marginal[m] += sg.data(t, m);
  }
  const auto argmax = std::max_element(marginal.begin(), marginal.end()) - marginal.begin();
  CHECK(std::size_t(argmax) == nearest);

  const auto centres = mel_center_frequencies(MelConfig{});
  REQUIRE(centres.size() == 64);
  CHECK(centres[nearest] == doctest::Approx(700.0 * (std::pow(10.0, mel_max * double(nearest + 1) / 65.0 / 2595.0) - 1.0)));
}

TEST_CASE("doubling amplitude adds ln 4 above the floor") {
  const Waveform a = noise(4000, 3);
  Waveform b = a;
  for (auto& s : b.samples) s *= 2.0f;
  const auto sa = log_mel(a);
  const auto sb = log_mel(b);
  for (std::size_t i = 0; i < sa.data.size(); ++i) {
    if (sa.data[i] > -20.0f) CHECK(sb.data[i] - sa.data[i] == doctest::Approx(std::log(4.0)).epsilon(1e-3));
  }
}

TEST_CASE("HTK mel scale round trip") {
  CHECK(hz_to_mel(700.0) == doctest::Approx(2595.0 * std::log10(2.0)));
  for (double hz : {0.0, 123.0, 1000.0, 7999.0}) CHECK(mel_to_hz(hz_to_mel(hz)) == doctest::Approx(hz));
}

TEST_CASE("filterbank shape and non-negativity") {
  const Tensor fb = mel_filterbank(MelConfig{});
  CHECK(fb.shape() == Shape{257, 64});
  for (float v : fb.data()) CHECK(v >= 0.0f);
  for (std::size_t m = 0; m < 64; ++m) {
    double col = 0.0;
    for (std::size_t k = 0; k < 257; ++k) col += fb(k, m);
    CHECK(col > 0.0);
  }
}

TEST_CASE("log_mel input validation") {
  CHECK_THROWS_WITH(log_mel(Waveform{std::vector<float>(511, 0.0f)}), doctest::Contains("512"));
  Waveform w{std::vector<float>(16000, 0.0f), 8000};
  CHECK_THROWS_WITH(log_mel(w), doctest::Contains("8000"));
}

TEST_CASE("identity augmentation leaves the waveform untouched") {
  const Waveform w = noise(1600, 5);
  Rng rng(1);
  const Waveform out = augment_waveform(w, AugmentSpec::identity(), rng);
  CHECK(out.samples == w.samples);
}

TEST_CASE("forced polarity inversion negates every sample") {
  AugmentSpec spec = AugmentSpec::identity();
  spec.polarity_prob = 1.0;
  const Waveform w = noise(1600, 6);
  Rng rng(2);
  const Waveform out = augment_waveform(w, spec, rng);
  for (std::size_t i = 0; i < w.size(); ++i) CHECK(out.samples[i] == -w.samples[i]);
}

TEST_CASE("augmentation is deterministic per seed and keeps length") {
  const Waveform w = noise(16000, 8);
  Rng r1(42), r2(42);
  const auto a = augment_waveform(w, AugmentSpec{}, r1);
  const auto b = augment_waveform(w, AugmentSpec{}, r2);
  CHECK(a.samples == b.samples);
  CHECK(a.size() == w.size());
}

TEST_CASE("shift pads with zeros instead of wrapping") {
  AugmentSpec spec = AugmentSpec::identity();
  spec.max_shift_fraction = 0.5;
  Waveform w{std::vector<float>(1000, 1.0f)};
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const auto out = augment_waveform(w, spec, rng);
    std::size_t zeros = 0, ones = 0;
    for (float v : out.samples) (v == 0.0f ? zeros : ones) += 1;
    CHECK(zeros + ones == 1000);
    CHECK(zeros <= 500);
  }
}

TEST_CASE("gain is applied in decibels") {
  AugmentSpec spec = AugmentSpec::identity();
  spec.gain_db_range = {6.0, 6.0};
  Waveform w{std::vector<float>(10, 0.5f)};
  Rng rng(0);
  const auto out = augment_waveform(w, spec, rng);
  CHECK(out.samples[3] == doctest::Approx(0.5 * std::pow(10.0, 6.0 / 20.0)));
}

TEST_CASE("spec_augment without masks is the identity") {
  const Spectrogram sg = log_mel(noise(16000, 9));
  Rng rng(3);
  CHECK(spec_augment(sg, AugmentSpec::identity(), rng).data == sg.data);
}

TEST_CASE("one time mask changes at most w times F entries") {
  const Spectrogram sg = log_mel(noise(16000, 10));
  AugmentSpec spec = AugmentSpec::identity();
  spec.specaug_time_masks = 1;
  spec.specaug_time_width = 20;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const Spectrogram out = spec_augment(sg, spec, rng);
    CHECK(out.data.shape() == sg.data.shape());
    std::size_t diff = 0;
    for (std::size_t i = 0; i < sg.data.size(); ++i) diff += out.data[i] != sg.data[i];
    CHECK(diff <= 20 * 64);
    CHECK(diff % 64 == 0);
  }
}

TEST_CASE("masks are filled with the spectrogram mean") {
  Tensor data({30, 8});
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = float(i % 7);
  double mean = 0.0;
  for (float v : data.data()) mean += v;
  mean /= double(data.size());
  AugmentSpec spec = AugmentSpec::identity();
  spec.specaug_freq_masks = 1;
  spec.specaug_freq_width = 4;
  Rng rng(11);
  const auto out = spec_augment(Spectrogram{data}, spec, rng);
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (out.data[i] != data[i]) CHECK(out.data[i] == doctest::Approx(mean));
  }
}

TEST_CASE("mask wider than the axis is rejected") {
  AugmentSpec spec = AugmentSpec::identity();
  spec.specaug_freq_masks = 1;
  spec.specaug_freq_width = 8;
  Rng rng(0);
  CHECK_THROWS(spec_augment(Spectrogram{Tensor({20, 8})}, spec, rng));
}

TEST_CASE("16-bit WAV round trip") {
  const Waveform w = sine(440.0, 800, 0.5);
  const auto path = std::filesystem::temp_directory_path() / "uit_test_roundtrip.wav";
  write_wav16(path.string(), w);
  const Waveform r = read_wav(path.string());
  REQUIRE(r.size() == w.size());
  for (std::size_t i = 0; i < w.size(); ++i) CHECK(std::abs(r.samples[i] - w.samples[i]) < 1.0 / 32767.0);
  std::filesystem::remove(path);
  CHECK_THROWS_WITH(read_wav("/nonexistent/x.wav"), doctest::Contains("/nonexistent/x.wav"));
}
