// Binary tensor container ("UITW"), used for model weights, spectrogram
// dumps and score/label matrices.
//
//   magic    "UITW"
//   u32      version (1)
//   u32      tensor count
//   per tensor:
//     u16    name length, then UTF-8 name bytes
//     u8     rank, then u32 per dim
//     f32    payload, product(dims) values
//
// All integers and floats are little-endian.

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "uit/model.hpp"

namespace uit {

inline constexpr std::uint32_t kWeightFileVersion = 1;

std::vector<std::uint8_t> encode_weights(const WeightStore& w);
WeightStore decode_weights(std::span<const std::uint8_t> bytes, const std::string& origin = "<memory>");

void save_weights(const std::string& path, const WeightStore& w);
WeightStore load_weights(const std::string& path);

// Single-tensor convenience wrappers over the same container.
void save_tensor(const std::string& path, const std::string& name, const Tensor& t);
Tensor load_first_tensor(const std::string& path);

}  // namespace uit
