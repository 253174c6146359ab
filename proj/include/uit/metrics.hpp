#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "uit/model.hpp"
#include "uit/tensor.hpp"

namespace uit {

// Average precision over a score-descending ranking, ties kept in input
// order, no interpolation. nullopt when there are no positives.
std::optional<double> average_precision(std::span<const float> scores,
                                        std::span<const float> truths);

// Unweighted mean of per-class AP over columns with at least one positive.
// scores and truths are [M, C].
double mean_ap(const Tensor& scores, const Tensor& truths);

// A keyword label index, or nullopt for "no keyword".
using KwsDecision = std::optional<std::size_t>;

inline constexpr double kDefaultKeywordThreshold = 0.2;

// Highest-scoring keyword if its probability reaches gamma (>=); ties go to
// the lowest index.
KwsDecision kws_decide(std::span<const float> probs, const LabelSpace& labels,
                       double gamma = kDefaultKeywordThreshold);

// Ground-truth 11-class target from a binary label row: the active keyword,
// or nullopt when none is active.
KwsDecision kws_truth(std::span<const float> truth_row, const LabelSpace& labels);

double kws_accuracy(std::span<const KwsDecision> decisions, std::span<const KwsDecision> truths);

}  // namespace uit
