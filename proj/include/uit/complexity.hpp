// Static cost accounting for a UiTConfig.
//
// FLOPs follow the multiply-accumulate convention (one MAC counts as one
// FLOP) and ignore elementwise work such as norms and softmax. Peak
// activation memory comes from walking the unfused forward pass at batch 1
// with an idealized allocator that frees every intermediate as soon as its
// last reader has run. Values are 4 bytes.

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "uit/model.hpp"

namespace uit {

struct ComplexityRow {
  std::string name;
  std::uint64_t params = 0;
  std::uint64_t flops = 0;
  // Peak live intermediate bytes while this layer runs.
  std::uint64_t activation_bytes = 0;
};

struct ComplexityReport {
  std::string model;
  std::vector<ComplexityRow> rows;
  std::uint64_t params = 0;
  std::uint64_t flops = 0;  // per 1 s chunk
  std::uint64_t weight_bytes = 0;
  std::uint64_t peak_activation_bytes = 0;
  std::uint64_t m_pk_bytes = 0;

  double mflops() const { return double(flops) / 1e6; }
  double m_pk_mb() const { return double(m_pk_bytes) / 1e6; }
};

inline constexpr std::uint64_t kBytesPerValue = 4;

std::uint64_t count_params(const UiTConfig& cfg);

// Total FLOPs for `seconds` of audio evaluated in 1 s chunks. `seconds`
// must be a positive whole number.
std::uint64_t count_flops(const UiTConfig& cfg, double seconds = 1.0);

ComplexityReport analyze(const UiTConfig& cfg);

std::string format_text(const ComplexityReport& r);
std::string format_kv(const ComplexityReport& r);

}  // namespace uit
