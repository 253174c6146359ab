// Central finite-difference checks of every hand-written backward pass, run
// in double precision.

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "uit/model.hpp"
#include "uit/tensor.hpp"

namespace uit {

inline constexpr double kGradcheckStep = 1e-4;
inline constexpr double kOpTolerance = 1e-4;
inline constexpr double kModelTolerance = 1e-3;
// Smallest |pre-activation| accepted in the end-to-end ReLU check.
inline constexpr double kKinkMargin = 1e-2;

// |a - n| / max(|a|, |n|), with the denominator floored at `floor` so that
// gradients that are zero up to rounding compare on an absolute scale.
double relative_error(double analytic, double numeric, double floor = 1e-6);

// d f / d x by central differences, perturbing x in place and restoring it.
Tensor64 numeric_gradient(const std::function<double()>& f, Tensor64& x,
                          double step = kGradcheckStep);

double max_relative_error(const Tensor64& analytic, const Tensor64& numeric);

struct GradcheckResult {
  std::string name;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  std::size_t seeds = 0;
  bool passed() const { return max_rel_error < tolerance; }
};

// L=1, D=8, U=2, two heads, 4x4 patches on an 8x8 spectrogram (N=4), 3 labels.
UiTConfig gradcheck_config(Activation act = Activation::kReLU,
                           Attention attention = Attention::kBottleneck);

GradcheckResult check_matmul(std::uint64_t seed);
GradcheckResult check_softmax(std::uint64_t seed);
GradcheckResult check_layer_norm(std::uint64_t seed);
GradcheckResult check_relu(std::uint64_t seed);
GradcheckResult check_gelu(std::uint64_t seed);
GradcheckResult check_bce(std::uint64_t seed);
// BCE of a two-sample batch against every weight tensor of the tiny model.
GradcheckResult check_model(std::uint64_t seed, const UiTConfig& cfg);

// Every check over `seeds` consecutive seeds, worst error per check.
std::vector<GradcheckResult> run_gradcheck_suite(std::size_t seeds = 20, std::uint64_t base_seed = 1);

}  // namespace uit
