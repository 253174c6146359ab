// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <future>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "uit/complexity.hpp"
#include "uit/gradcheck.hpp"
#include "uit/metrics.hpp"
#include "uit/runtime.hpp"
#include "uit/training.hpp"
#include "uit/weights_io.hpp"

using namespace uit;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Reference {
  const char* name;
  double params;
  double mflops;
  double m_pk_mb;
};

constexpr Reference kReference[] = {
    {"uit-xs", 1.5e6, 34.0, 7.59},
    {"uit-2xs", 0.8e6, 18.0, 4.10},
    {"uit-3xs", 574e3, 13.0, 3.15},
};

double rel_dev(double value, double target) { return value / target - 1.0; }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

Outcome params_within_5pct() {
  Outcome o{true, ""};
  for (const auto& p : kReference) {
    const double d = rel_dev(double(count_params(preset(p.name))), p.params);
    o.pass = o.pass && std::abs(d) <= 0.05;
    o.detail += std::string(p.name) + " " + fmt("%+.1f%% ", 100.0 * d);
  }
  return o;
}

Outcome flops_within_15pct() {
  Outcome o{true, ""};
  for (const auto& p : kReference) {
    const double d = rel_dev(analyze(preset(p.name)).mflops(), p.mflops);
    o.pass = o.pass && std::abs(d) <= 0.15;
    o.detail += std::string(p.name) + " " + fmt("%+.1f%% ", 100.0 * d);
  }
  return o;
}

Outcome memory_bracket() {
  Outcome o{true, ""};
  for (const auto& p : kReference) {
    const auto r = analyze(preset(p.name));
    const bool lower = r.weight_bytes <= r.m_pk_bytes;
    const bool weights = std::abs(rel_dev(double(r.weight_bytes), 4.0 * p.params)) <= 0.10;
    const bool upper = r.m_pk_mb() <= p.m_pk_mb;
    o.pass = o.pass && lower && weights && upper;
    o.detail += std::string(p.name) + " " + fmt("%.3f MB ", r.m_pk_mb());
  }
  return o;
}

Outcome ablation_direction() {
  const UiTConfig base = preset("uit-xs");
  UiTConfig st = base;
  st.attention = Attention::kStandard;
  UiTConfig gelu = base;
  gelu.activation = Activation::kGeLU;
  const auto a = analyze(base), b = analyze(st), g = analyze(gelu);
  const bool up = b.params > a.params && b.flops > a.flops && b.m_pk_bytes > a.m_pk_bytes;
  const bool same = g.params == a.params && g.m_pk_bytes == a.m_pk_bytes;
  return {up && same, "m_pk " + fmt("%.3f", a.m_pk_mb()) + " -> " + fmt("%.3f MB", b.m_pk_mb())};
}

UiTConfig tiny_config(Attention a) {
  UiTConfig cfg;
  cfg.name = "tiny";
  cfg.layers = 2;
  cfg.dim = 8;
  cfg.bottleneck = 8;
  cfg.heads = 2;
  cfg.mlp_dim = 24;
  cfg.patch_t = 4;
  cfg.patch_f = 4;
  cfg.n_mels = 8;
  cfg.input_frames = 8;
  cfg.attention = a;
  cfg.labels = LabelSpace({"speech", "noise"}, {"kw"}, 0);
  return cfg;
}

Outcome bottleneck_equivalence() {
  const UiTConfig bn = tiny_config(Attention::kBottleneck);
  const UiTConfig st = tiny_config(Attention::kStandard);
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(seed);
    std::normal_distribution<float> normal(0.0f, 0.5f);
    WeightStore w;
    for (const auto& spec : param_catalog(bn)) {
      Tensor t(spec.shape);
      for (auto& v : t.values()) v = normal(rng);
      w.insert(spec.name, std::move(t));
    }
    Tensor tokens({bn.tokens(), bn.patch_size()});
    for (auto& v : tokens.values()) v = normal(rng);
    const Tensor a = forward(tokens, w, bn);
    const Tensor b = forward(tokens, w, st);
    for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, double(std::abs(a[i] - b[i])));
  }
  return {worst < 1e-6, "max |diff| " + fmt("%.2e", worst) + " over 50 seeds"};
}

Outcome gradcheck_suite() {
  Outcome o{true, ""};
  double op = 0.0, model = 0.0;
  for (const auto& r : run_gradcheck_suite(20)) {
    o.pass = o.pass && r.passed();
    double& slot = r.tolerance == kModelTolerance ? model : op;
    slot = std::max(slot, r.max_rel_error);
    if (!r.passed()) o.detail += r.name + " failed; ";
  }
  o.detail += "ops " + fmt("%.2e", op) + ", model " + fmt("%.2e", model);
  return o;
}

Outcome delay_invariant() {
  const UiTConfig cfg = preset("uit-3xs");
  Rng rng(99);
  const WeightStore w = init_weights<float>(cfg, rng);
  const std::size_t chunk = kSampleRate;
  const MelConfig mel;
  // Last sample read by frame input_frames-1.
  const std::size_t used = (cfg.input_frames - 1) * mel.hop_length() + mel.win_length();
  std::uniform_real_distribution<float> amp(-0.5f, 0.5f);
  Waveform clip;
  clip.samples.resize(3 * chunk);
  for (auto& s : clip.samples) s = amp(rng);
  auto chunk_logits = [&](const Waveform& wave, std::size_t k) {
    Waveform c{std::vector<float>(wave.samples.begin() + k * chunk, wave.samples.begin() + (k + 1) * chunk)};
    return forward(patchify(log_mel(c, mel), cfg), w, cfg);
  };
  std::vector<Tensor> base;
  for (std::size_t k = 0; k < 3; ++k) base.push_back(chunk_logits(clip, k));
  std::uniform_int_distribution<std::size_t> which(0, 2);
  std::uniform_int_distribution<std::size_t> where(used, chunk - 1);
  std::size_t changed = 0;
  for (int i = 0; i < 100; ++i) {
    Waveform p = clip;
    const std::size_t k = which(rng);
    p.samples[k * chunk + where(rng)] = amp(rng) * 2.0f;
    if (!(chunk_logits(p, k) == base[k])) ++changed;
  }
  return {changed == 0, std::to_string(changed) + "/100 perturbations changed logits"};
}

Outcome ap_oracle() {
  Rng rng(1234);
  std::uniform_int_distribution<int> size(1, 12);
  std::uniform_int_distribution<int> level(0, 6);
  std::bernoulli_distribution pos(0.4);
  std::size_t mismatches = 0, defined = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t m = size(rng);
    std::vector<float> s(m), t(m);
    for (std::size_t i = 0; i < m; ++i) {
      s[i] = float(level(rng)) / 6.0f;
      t[i] = pos(rng) ? 1.0f : 0.0f;
    }
    const auto got = average_precision(s, t);
    const auto want = oracle::average_precision(s, t);
    if (got.has_value() != want.has_value() || (got && *got != *want)) ++mismatches;
    defined += got.has_value();
  }
  return {mismatches == 0, std::to_string(mismatches) + " mismatches, " + std::to_string(defined) +
                               " defined instances"};
}

Outcome toy_training() {
  std::vector<std::future<ToyResult>> runs;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    runs.push_back(std::async(std::launch::async, [seed] {
      ToyTaskSpec task;
      task.seed = seed;
      return train_toy(task);
    }));
  }
  std::size_t ok = 0;
  double worst = 0.0;
  for (auto& f : runs) {
    const ToyResult r = f.get();
    ok += r.final_loss() < 0.1 && r.final_loss() <= 0.5 * r.curve.front().loss;
    worst = std::max(worst, r.final_loss());
  }
  const ToyTaskSpec defaults;
  const std::size_t steps = defaults.epochs * defaults.batches_per_epoch;
  const AdamWHyper hp;  // default schedule
  const bool lr_ok = lr_at(0.0, hp) == 0.0 && std::abs(lr_at(20.0, hp) - 0.001) < 1e-15 &&
                     std::abs(lr_at(hp.total_epochs, hp)) < 1e-15;
  return {ok >= 9 && steps <= 200 && lr_ok,
          std::to_string(ok) + "/10 seeds below 0.1 in " + std::to_string(steps) +
              " steps (worst " + fmt("%.4f", worst) + "), lr endpoints " + (lr_ok ? "ok" : "wrong")};
}

Outcome latency_order() {
  std::vector<UiTConfig> cfgs = {preset("uit-3xs"), preset("uit-2xs"), preset("uit-xs")};
  const auto r = bench(cfgs, BenchOptions{});
  const double a = r[0].mean_ms, b = r[1].mean_ms, c = r[2].mean_ms;
  const double ratio = c / a;
  return {a < b && b < c && ratio >= 1.5 && ratio <= 4.5,
          fmt("3xs %.3f", a) + fmt(" / 2xs %.3f", b) + fmt(" / xs %.3f ms", c) +
              fmt(", xs/3xs %.2f", ratio)};
}

Outcome chunked_inference() {
  const UiTConfig cfg = preset("uit-3xs");
  Rng rng(5);
  const WeightStore w = init_weights<float>(cfg, rng);
  std::uniform_real_distribution<float> amp(-0.4f, 0.4f);
  Waveform clip;
  clip.samples.resize(10 * kSampleRate);
  for (auto& s : clip.samples) s = amp(rng);
  const Tensor chunks = infer_chunks(clip, w, cfg);
  const Tensor mean = infer_clip(clip, w, cfg);
  double worst = 0.0;
  for (std::size_t c = 0; c < mean.size(); ++c) {
    double m = 0.0;
    for (std::size_t k = 0; k < 10; ++k) m += chunks(k, c);
    worst = std::max(worst, std::abs(mean[c] - m / 10.0));
  }
  Waveform twice = clip;
  twice.samples.insert(twice.samples.end(), clip.samples.begin(), clip.samples.end());
  const Tensor doubled = infer_clip(twice, w, cfg);
  double self = 0.0;
  for (std::size_t c = 0; c < mean.size(); ++c) self = std::max(self, double(std::abs(doubled[c] - mean[c])));
  return {chunks.dim(0) == 10 && worst < 1e-6 && self < 1e-6,
          "mean err " + fmt("%.2e", worst) + ", self-concat err " + fmt("%.2e", self)};
}

std::vector<std::uint8_t> file_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Outcome weight_round_trip() {
  namespace fs = std::filesystem;
  bool ok = true;
  std::size_t rejected = 0, cuts = 0;
  for (const auto& name : preset_names()) {
    Rng rng(3);
    const WeightStore w = init_weights<float>(preset(name), rng);
    const fs::path a = fs::temp_directory_path() / ("uit_accept_" + name + "_a.bin");
    const fs::path b = fs::temp_directory_path() / ("uit_accept_" + name + "_b.bin");
    save_weights(a.string(), w);
    save_weights(b.string(), load_weights(a.string()));
    const auto bytes = file_bytes(a);
    ok = ok && bytes == file_bytes(b);
    for (std::size_t cut : {std::size_t(0), std::size_t(3), std::size_t(11), bytes.size() / 2,
                            bytes.size() - 1}) {
      ++cuts;
      try {
        decode_weights(std::span(bytes.data(), cut));
      } catch (const std::exception&) {
        ++rejected;
      }
    }
    fs::remove(a);
    fs::remove(b);
  }
  return {ok && rejected == cuts, std::string(ok ? "byte-identical" : "bytes differ") + ", " +
                                      std::to_string(rejected) + "/" + std::to_string(cuts) +
                                      " truncations rejected"};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"params within 5% of reference sizes", params_within_5pct},
      {"MFLOPs within 15% of reference values", flops_within_15pct},
      {"peak memory bracketed by weights and reference bound", memory_bracket},
      {"standard attention costs more, GeLU costs the same", ablation_direction},
      {"bottleneck attention at U=D equals standard attention", bottleneck_equivalence},
      {"gradient checks, 20 seeds", gradcheck_suite},
      {"samples after the 96th frame never change chunk logits", delay_invariant},
      {"average precision equals the brute-force oracle", ap_oracle},
      {"toy training converges and lr schedule endpoints", toy_training},
      {"latency ordering 3xs < 2xs < xs", latency_order},
      {"chunked inference averages chunks", chunked_inference},
      {"weight file round trip and truncation", weight_round_trip},
  };
  int failures = 0;
  for (const auto& [name, run] : criteria) {
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failures += !o.pass;
    std::printf("%s  %-56s %s (%.1fs)\n", o.pass ? "PASS" : "FAIL", name, o.detail.c_str(), secs);
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", int(criteria.size()) - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
