#include <cmath>

#include "doctest.h"
#include "uit/complexity.hpp"
#include "uit/model.hpp"

using namespace uit;

namespace {

// Closed-form parameter count from the layer shapes.
std::uint64_t hand_params(const UiTConfig& c) {
  const std::uint64_t D = c.dim, W = c.attention_width(), M = c.mlp_dim, P = c.patch_size(),
                      C = c.num_labels();
  const std::uint64_t stem = P * D + D + c.time_patches() * D + c.freq_patches() * D;
  const std::uint64_t block = 2 * D + (3 * (D * W + W) + W * D + D) + 2 * D + (D * M + M + M * D + D);
  return stem + c.layers * block + 2 * D + D * C + C;
}

std::uint64_t hand_flops(const UiTConfig& c) {
  const std::uint64_t N = c.tokens(), D = c.dim, W = c.attention_width(), M = c.mlp_dim;
  const std::uint64_t block = 3 * N * D * W + 2 * N * N * W + N * W * D + 2 * N * D * M;
  return N * c.patch_size() * D + c.layers * block + D * c.num_labels();
}

bool within(double value, double target, double tol) { return std::abs(value / target - 1.0) <= tol; }

}  // namespace

TEST_CASE("parameter counts agree with the closed form") {
  for (const auto& name : preset_names()) {
    const UiTConfig cfg = preset(name);
    CHECK(count_params(cfg) == hand_params(cfg));
    UiTConfig st = cfg;
    st.attention = Attention::kStandard;
    CHECK(count_params(st) == hand_params(st));
  }
}

TEST_CASE("zero-layer model keeps only stem, embeddings, final norm and classifier") {
  UiTConfig cfg = preset("uit-xs");
  cfg.layers = 0;
  const std::uint64_t expected = 256 * 128 + 128 + 6 * 128 + 4 * 128 + 2 * 128 + 128 * 537 + 537;
  CHECK(count_params(cfg) == expected);
}

TEST_CASE("preset sizes land near the reference targets") {
  CHECK(within(double(count_params(preset("uit-xs"))), 1.5e6, 0.05));
  CHECK(within(double(count_params(preset("uit-2xs"))), 0.8e6, 0.05));
  CHECK(within(double(count_params(preset("uit-3xs"))), 574e3, 0.05));
  CHECK(within(analyze(preset("uit-xs")).mflops(), 34.0, 0.15));
  CHECK(within(analyze(preset("uit-2xs")).mflops(), 18.0, 0.15));
  CHECK(within(analyze(preset("uit-3xs")).mflops(), 13.0, 0.15));
}

TEST_CASE("FLOPs follow the multiply-accumulate formula and scale with chunks") {
  for (const auto& name : preset_names()) {
    const UiTConfig cfg = preset(name);
    CHECK(count_flops(cfg) == hand_flops(cfg));
    CHECK(count_flops(cfg, 2.0) == 2 * count_flops(cfg, 1.0));
    CHECK(count_flops(cfg, 10.0) == 10 * count_flops(cfg, 1.0));
  }
  CHECK_THROWS(count_flops(preset("uit-xs"), 1.5));
  CHECK_THROWS(count_flops(preset("uit-xs"), 0.0));
}

TEST_CASE("report totals and memory bracket") {
  for (const auto& name : preset_names()) {
    const auto r = analyze(preset(name));
    std::uint64_t p = 0, f = 0, peak = 0;
    for (const auto& row : r.rows) {
      p += row.params;
      f += row.flops;
      peak = std::max(peak, row.activation_bytes);
    }
    CHECK(p == r.params);
    CHECK(f == r.flops);
    CHECK(peak == r.peak_activation_bytes);
    CHECK(r.weight_bytes == 4 * r.params);
    CHECK(r.m_pk_bytes == r.weight_bytes + r.peak_activation_bytes);
    CHECK(r.m_pk_bytes >= r.weight_bytes);
  }
  CHECK(analyze(preset("uit-xs")).m_pk_mb() <= 7.59);
  CHECK(analyze(preset("uit-2xs")).m_pk_mb() <= 4.10);
  CHECK(analyze(preset("uit-3xs")).m_pk_mb() <= 3.15);
}

TEST_CASE("peak activations bound the largest single intermediate") {
  // The attention-logit matrix alone is H*N*N floats, the MLP hidden N*M.
  const UiTConfig cfg = preset("uit-xs");
  const auto r = analyze(cfg);
  CHECK(r.peak_activation_bytes >= 4 * cfg.tokens() * cfg.mlp_dim);
  CHECK(r.peak_activation_bytes >= 4 * cfg.heads * cfg.tokens() * cfg.tokens());
}

TEST_CASE("monotonicity in depth, width and attention type") {
  UiTConfig a = preset("uit-3xs");
  UiTConfig b = a;
  b.layers += 1;
  CHECK(count_params(b) > count_params(a));
  UiTConfig c = a;
  c.dim = 256;
  c.mlp_dim = 768;
  c.bottleneck = 64;
  CHECK(count_params(c) > count_params(a));
  UiTConfig st = a;
  st.attention = Attention::kStandard;
  CHECK(count_flops(st) > count_flops(a));
  CHECK(analyze(st).m_pk_bytes > analyze(a).m_pk_bytes);
  UiTConfig gelu = a;
  gelu.activation = Activation::kGeLU;
  CHECK(count_params(gelu) == count_params(a));
  CHECK(analyze(gelu).m_pk_bytes == analyze(a).m_pk_bytes);
}

TEST_CASE("key-value report carries stable keys") {
  const std::string kv = format_kv(analyze(preset("uit-3xs")));
  for (const char* key : {"params=", "flops=", "mflops=", "weight_bytes=", "peak_activation_bytes=",
                          "m_pk_bytes="}) {
    CHECK(kv.find(key) != std::string::npos);
  }
}
