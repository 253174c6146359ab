#include "uit/complexity.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>
#include <stdexcept>

namespace uit {

namespace {

using u64 = std::uint64_t;

// Tracks live intermediates by name; records the high-water mark.
class LivenessWalk {
 public:
  void alloc(const std::string& name, u64 values) {
    if (!live_.emplace(name, values).second) {
      throw std::logic_error("liveness walk: '" + name + "' allocated twice");
    }
    current_ += values;
    segment_peak_ = std::max(segment_peak_, current_);
    peak_ = std::max(peak_, current_);
  }

  void free(const std::string& name) {
    auto it = live_.find(name);
    if (it == live_.end()) throw std::logic_error("liveness walk: '" + name + "' not live");
    current_ -= it->second;
    live_.erase(it);
  }

  // Starts a new per-layer window; returns the previous window's peak.
  u64 begin_segment() {
    const u64 p = segment_peak_;
    segment_peak_ = current_;
    return p;
  }

  u64 peak() const { return peak_; }

 private:
  std::map<std::string, u64> live_;
  u64 current_ = 0;
  u64 peak_ = 0;
  u64 segment_peak_ = 0;
};

struct Dims {
  u64 n, p, d, w, h, m, c, nt, nf;
};

Dims dims_of(const UiTConfig& cfg) {
  cfg.validate();
  return {cfg.tokens(),  cfg.patch_size(), cfg.dim,           cfg.attention_width(),
          cfg.heads,     cfg.mlp_dim,      cfg.num_labels(),  cfg.time_patches(),
          cfg.freq_patches()};
}

u64 block_params(const Dims& k) {
  const u64 norms = 2 * 2 * k.d;
  const u64 qkv = 3 * (k.d * k.w + k.w);
  const u64 out = k.w * k.d + k.d;
  const u64 mlp = k.d * k.m + k.m + k.m * k.d + k.d;
  return norms + qkv + out + mlp;
}

u64 block_flops(const Dims& k) {
  return 3 * k.n * k.d * k.w     // Q, K, V projections
         + 2 * k.n * k.n * k.w   // logits and value mixing
         + k.n * k.w * k.d       // output projection
         + 2 * k.n * k.d * k.m;  // MLP
}

}  // namespace

ComplexityReport analyze(const UiTConfig& cfg) {
  const Dims k = dims_of(cfg);
  ComplexityReport r;
  r.model = cfg.name;
  LivenessWalk walk;

  walk.alloc("tokens", k.n * k.p);
  walk.begin_segment();
  walk.alloc("x", k.n * k.d);
  walk.free("tokens");
  r.rows.push_back({"stem", k.p * k.d + k.d, k.n * k.p * k.d, 0});
  r.rows.back().activation_bytes = walk.begin_segment() * kBytesPerValue;

  r.rows.push_back({"pos_embed", (k.nt + k.nf) * k.d, 0, 0});
  r.rows.back().activation_bytes = walk.begin_segment() * kBytesPerValue;

  for (std::size_t i = 0; i < cfg.layers; ++i) {
    walk.alloc("h1", k.n * k.d);
    walk.alloc("q", k.n * k.w);
    walk.alloc("k", k.n * k.w);
    walk.alloc("v", k.n * k.w);
    walk.free("h1");
    walk.alloc("scores", k.h * k.n * k.n);
    walk.free("q");
    walk.free("k");
    walk.alloc("probs", k.h * k.n * k.n);
    walk.free("scores");
    walk.alloc("ctx", k.n * k.w);
    walk.free("probs");
    walk.free("v");
    walk.alloc("attn_out", k.n * k.d);
    walk.free("ctx");
    walk.free("attn_out");  // accumulated into x
    walk.alloc("h2", k.n * k.d);
    walk.alloc("fc1", k.n * k.m);
    walk.free("h2");
    walk.alloc("act", k.n * k.m);
    walk.free("fc1");
    walk.alloc("fc2", k.n * k.d);
    walk.free("act");
    walk.free("fc2");  // accumulated into x
    r.rows.push_back({"block." + std::to_string(i), block_params(k), block_flops(k), 0});
    r.rows.back().activation_bytes = walk.begin_segment() * kBytesPerValue;
  }

  walk.alloc("xf", k.n * k.d);
  walk.free("x");
  walk.alloc("pooled", k.d);
  walk.free("xf");
  r.rows.push_back({"final_norm_pool", 2 * k.d, 0, 0});
  r.rows.back().activation_bytes = walk.begin_segment() * kBytesPerValue;

  walk.alloc("logits", k.c);
  walk.free("pooled");
  r.rows.push_back({"classifier", k.d * k.c + k.c, k.d * k.c, 0});
  r.rows.back().activation_bytes = walk.begin_segment() * kBytesPerValue;

  for (const auto& row : r.rows) {
    r.params += row.params;
    r.flops += row.flops;
  }
  r.weight_bytes = r.params * kBytesPerValue;
  r.peak_activation_bytes = walk.peak() * kBytesPerValue;
  r.m_pk_bytes = r.weight_bytes + r.peak_activation_bytes;
  return r;
}

std::uint64_t count_params(const UiTConfig& cfg) { return analyze(cfg).params; }

std::uint64_t count_flops(const UiTConfig& cfg, double seconds) {
  const double chunks = std::round(seconds);
  if (!(seconds > 0.0) || std::abs(seconds - chunks) > 1e-9) {
    throw std::invalid_argument("count_flops: duration " + std::to_string(seconds) +
                                " s is not a positive whole number of 1 s chunks");
  }
  return analyze(cfg).flops * static_cast<u64>(chunks);
}

std::string format_text(const ComplexityReport& r) {
  std::ostringstream os;
  char line[160];
  std::snprintf(line, sizeof line, "%-18s %12s %14s %14s\n", "layer", "params", "flops",
                "act_bytes");
  os << "model: " << r.model << "\n" << line;
  for (const auto& row : r.rows) {
    std::snprintf(line, sizeof line, "%-18s %12llu %14llu %14llu\n", row.name.c_str(),
                  static_cast<unsigned long long>(row.params),
                  static_cast<unsigned long long>(row.flops),
                  static_cast<unsigned long long>(row.activation_bytes));
    os << line;
  }
  std::snprintf(line, sizeof line, "%-18s %12llu %14llu %14llu\n", "total",
                static_cast<unsigned long long>(r.params), static_cast<unsigned long long>(r.flops),
                static_cast<unsigned long long>(r.peak_activation_bytes));
  os << line;
  std::snprintf(line, sizeof line,
                "params: %.3f M\nmflops (1 s): %.2f\nweights: %.3f MB\npeak activations: %.3f MB\n"
                "m_pk: %.3f MB\n",
                double(r.params) / 1e6, r.mflops(), double(r.weight_bytes) / 1e6,
                double(r.peak_activation_bytes) / 1e6, r.m_pk_mb());
  os << line;
  return os.str();
}

std::string format_kv(const ComplexityReport& r) {
  std::ostringstream os;
  os << "model=" << r.model << "\n";
  os << "params=" << r.params << "\n";
  os << "flops=" << r.flops << "\n";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", r.mflops());
  os << "mflops=" << buf << "\n";
  os << "weight_bytes=" << r.weight_bytes << "\n";
  os << "peak_activation_bytes=" << r.peak_activation_bytes << "\n";
  os << "m_pk_bytes=" << r.m_pk_bytes << "\n";
  for (const auto& row : r.rows) {
    os << "layer." << row.name << ".params=" << row.params << "\n";
    os << "layer." << row.name << ".flops=" << row.flops << "\n";
    os << "layer." << row.name << ".activation_bytes=" << row.activation_bytes << "\n";
  }
  return os.str();
}

}  // namespace uit
