#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "uit/dsp.hpp"
#include "uit/model.hpp"

namespace uit {

// Splits `wave` into chunks of `chunk_seconds` (the last one zero-padded),
// scores each chunk and returns the mean probability vector.
Tensor infer_clip(const Waveform& wave, const WeightStore& w, const UiTConfig& cfg,
                  double chunk_seconds = 1.0, const MelConfig& mel = {});

// Per-chunk probabilities [chunks, num_labels], before averaging.
Tensor infer_chunks(const Waveform& wave, const WeightStore& w, const UiTConfig& cfg,
                    double chunk_seconds = 1.0, const MelConfig& mel = {});

struct LatencyReport {
  std::string model;
  std::size_t warmup_iters = 10;
  std::size_t trials = 1000;
  bool with_features = false;
  std::vector<double> samples_ms;  // forward pass, one per trial
  std::vector<double> feature_samples_ms;  // log-Mel + patchify, when timed
  double features_mean_ms = 0.0;
  double mean_ms = 0.0;
  double median_ms = 0.0;
  double p95_ms = 0.0;
  double std_ms = 0.0;
};

struct BenchOptions {
  std::size_t trials = 1000;
  std::size_t warmup = 10;
  // Also time log-Mel extraction of the 1 s input, reported separately.
  bool with_features = false;
  std::uint64_t seed = 0;
};

// Statistics over `samples_ms` (population std, nearest-rank p95).
void summarize(LatencyReport& r);

// Times forward() of each config on a prepared 1 s input, one at a time.
std::vector<LatencyReport> bench(const std::vector<UiTConfig>& configs, const BenchOptions& opt = {});

std::string format_text(const std::vector<LatencyReport>& reports);
std::string format_kv(const std::vector<LatencyReport>& reports);

}  // namespace uit
