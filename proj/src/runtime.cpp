#include "uit/runtime.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace uit {

Tensor infer_chunks(const Waveform& wave, const WeightStore& w, const UiTConfig& cfg,
                    double chunk_seconds, const MelConfig& mel) {
  if (wave.samples.empty()) throw std::invalid_argument("infer: empty waveform");
  validate_weights(w, cfg);
  const auto chunk = static_cast<std::size_t>(std::lround(chunk_seconds * wave.sample_rate));
  if (chunk == 0) throw std::invalid_argument("infer: chunk duration must be positive");
  const std::size_t chunks = (wave.size() + chunk - 1) / chunk;
  Tensor probs({chunks, cfg.num_labels()});
  Waveform piece{std::vector<float>(chunk), wave.sample_rate};
  for (std::size_t c = 0; c < chunks; ++c) {
    const std::size_t begin = c * chunk;
    const std::size_t end = std::min(begin + chunk, wave.size());
    std::fill(piece.samples.begin(), piece.samples.end(), 0.0f);
    std::copy(wave.samples.begin() + begin, wave.samples.begin() + end, piece.samples.begin());
    const Tensor p = score(forward(patchify(log_mel(piece, mel), cfg), w, cfg));
    std::copy(p.data().begin(), p.data().end(), probs.row(c).begin());
  }
  return probs;
}

Tensor infer_clip(const Waveform& wave, const WeightStore& w, const UiTConfig& cfg,
                  double chunk_seconds, const MelConfig& mel) {
  const Tensor per_chunk = infer_chunks(wave, w, cfg, chunk_seconds, mel);
  const std::size_t chunks = per_chunk.rows();
  Tensor mean({per_chunk.cols()});
  std::vector<double> acc(per_chunk.cols(), 0.0);
  for (std::size_t c = 0; c < chunks; ++c) {
    for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += per_chunk(c, j);
  }
  for (std::size_t j = 0; j < acc.size(); ++j) mean[j] = static_cast<float>(acc[j] / double(chunks));
  return mean;
}

void summarize(LatencyReport& r) {
  const auto& s = r.samples_ms;
  if (s.empty()) throw std::invalid_argument("bench: no trials recorded");
  const double n = double(s.size());
  r.mean_ms = std::accumulate(s.begin(), s.end(), 0.0) / n;
  double var = 0.0;
  for (double v : s) var += (v - r.mean_ms) * (v - r.mean_ms);
  r.std_ms = std::sqrt(var / n);
  std::vector<double> sorted = s;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t mid = sorted.size() / 2;
  r.median_ms = sorted.size() % 2 ? sorted[mid] : 0.5 * (sorted[mid - 1] + sorted[mid]);
  const auto rank = static_cast<std::size_t>(std::ceil(0.95 * n));
  r.p95_ms = sorted[std::max<std::size_t>(rank, 1) - 1];
  if (!r.feature_samples_ms.empty()) {
    r.features_mean_ms = std::accumulate(r.feature_samples_ms.begin(), r.feature_samples_ms.end(), 0.0) /
                         double(r.feature_samples_ms.size());
  }
}

std::vector<LatencyReport> bench(const std::vector<UiTConfig>& configs, const BenchOptions& opt) {
  if (configs.empty()) throw std::invalid_argument("bench: no models given");
  if (opt.trials == 0) throw std::invalid_argument("bench: trials must be positive");
  using Clock = std::chrono::steady_clock;
  std::vector<LatencyReport> reports;
  for (const auto& cfg : configs) {
    Rng rng(opt.seed);
    const WeightStore w = init_weights<float>(cfg, rng);
    Waveform wave{std::vector<float>(kSampleRate)};
    std::normal_distribution<float> noise(0.0f, 0.1f);
    for (auto& s : wave.samples) s = noise(rng);
    const MelConfig mel;
    const Tensor tokens = patchify(log_mel(wave, mel), cfg);

    LatencyReport r;
    r.model = cfg.name;
    r.warmup_iters = opt.warmup;
    r.trials = opt.trials;
    r.with_features = opt.with_features;
    float sink = 0.0f;
    auto run_once = [&](bool record) {
      const auto t0 = Clock::now();
      Tensor input = opt.with_features ? patchify(log_mel(wave, mel), cfg) : Tensor();
      const auto t1 = Clock::now();
      sink += forward(opt.with_features ? input : tokens, w, cfg)[0];
      const auto t2 = Clock::now();
      if (record) {
        r.samples_ms.push_back(std::chrono::duration<double, std::milli>(t2 - t1).count());
        if (opt.with_features) {
          r.feature_samples_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
        }
      }
    };
    for (std::size_t i = 0; i < opt.warmup; ++i) run_once(false);
    r.samples_ms.reserve(opt.trials);
    for (std::size_t i = 0; i < opt.trials; ++i) run_once(true);
    if (!std::isfinite(sink)) throw std::runtime_error("bench: non-finite model output");
    summarize(r);
    reports.push_back(std::move(r));
  }
  return reports;
}

std::string format_text(const std::vector<LatencyReport>& reports) {
  std::ostringstream os;
  char line[160];
  std::snprintf(line, sizeof line, "%-10s %8s %8s %10s %10s %10s %10s\n", "model", "warmup",
                "trials", "mean_ms", "median_ms", "p95_ms", "std_ms");
  os << line;
  for (const auto& r : reports) {
    std::snprintf(line, sizeof line, "%-10s %8zu %8zu %10.4f %10.4f %10.4f %10.4f\n",
                  r.model.c_str(), r.warmup_iters, r.trials, r.mean_ms, r.median_ms, r.p95_ms,
                  r.std_ms);
    os << line;
  }
  for (const auto& r : reports) {
    if (r.with_features) {
      std::snprintf(line, sizeof line, "%-10s features mean_ms %.4f (not included above)\n",
                    r.model.c_str(), r.features_mean_ms);
      os << line;
    }
  }
  return os.str();
}

std::string format_kv(const std::vector<LatencyReport>& reports) {
  std::ostringstream os;
  char buf[64];
  for (const auto& r : reports) {
    const std::string p = "bench." + r.model + ".";
    os << p << "warmup=" << r.warmup_iters << "\n";
    os << p << "trials=" << r.trials << "\n";
    os << p << "with_features=" << (r.with_features ? 1 : 0) << "\n";
    if (r.with_features) {
      std::snprintf(buf, sizeof buf, "%.6f", r.features_mean_ms);
      os << p << "features_mean_ms=" << buf << "\n";
    }
    for (auto [key, v] : {std::pair{"mean_ms", r.mean_ms}, std::pair{"median_ms", r.median_ms},
                          std::pair{"p95_ms", r.p95_ms}, std::pair{"std_ms", r.std_ms}}) {
      std::snprintf(buf, sizeof buf, "%.6f", v);
      os << p << key << "=" << buf << "\n";
    }
  }
  return os.str();
}

}  // namespace uit
