#include "uit/metrics.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>
#include <string>

namespace uit {

std::optional<double> average_precision(std::span<const float> scores,
                                        std::span<const float> truths) {
  if (scores.size() != truths.size()) {
    throw std::invalid_argument("average_precision: " + std::to_string(scores.size()) +
                                " scores vs " + std::to_string(truths.size()) + " labels");
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double hits = 0.0;
  double sum = 0.0;
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    if (truths[order[rank]] > 0.5f) {
      hits += 1.0;
      sum += hits / double(rank + 1);
    }
  }
  if (hits == 0.0) return std::nullopt;
  return sum / hits;
}

double mean_ap(const Tensor& scores, const Tensor& truths) {
  if (scores.shape() != truths.shape() || scores.rank() != 2) {
    throw std::invalid_argument("mean_ap: scores " + shape_to_string(scores.shape()) +
                                " and truths " + shape_to_string(truths.shape()) +
                                " must be equal [M, C] matrices");
  }
  const std::size_t m = scores.dim(0);
  const std::size_t c = scores.dim(1);
  std::vector<float> col_s(m), col_t(m);
  double total = 0.0;
  std::size_t valid = 0;
  for (std::size_t j = 0; j < c; ++j) {
    for (std::size_t i = 0; i < m; ++i) {
      col_s[i] = scores(i, j);
      col_t[i] = truths(i, j);
    }
    if (auto ap = average_precision(col_s, col_t)) {
      total += *ap;
      ++valid;
    }
  }
  if (valid == 0) throw std::invalid_argument("mean_ap: no class has a positive label");
  return total / double(valid);
}

KwsDecision kws_decide(std::span<const float> probs, const LabelSpace& labels, double gamma) {
  const auto kw = labels.keyword_indices();
  if (probs.size() != labels.size()) {
    throw std::invalid_argument("kws_decide: " + std::to_string(probs.size()) +
                                " probabilities for " + std::to_string(labels.size()) + " labels");
  }
  KwsDecision best;
  float best_p = 0.0f;
  for (std::size_t i = kw.begin; i < kw.end; ++i) {
    if (!best || probs[i] > best_p) {
      best = i;
      best_p = probs[i];
    }
  }
  if (!best || double(best_p) < gamma) return std::nullopt;
  return best;
}

KwsDecision kws_truth(std::span<const float> truth_row, const LabelSpace& labels) {
  const auto kw = labels.keyword_indices();
  for (std::size_t i = kw.begin; i < kw.end; ++i) {
    if (truth_row[i] > 0.5f) return i;
  }
  return std::nullopt;
}

double kws_accuracy(std::span<const KwsDecision> decisions, std::span<const KwsDecision> truths) {
  if (decisions.size() != truths.size()) {
    throw std::invalid_argument("kws_accuracy: " + std::to_string(decisions.size()) +
                                " decisions vs " + std::to_string(truths.size()) + " truths");
  }
  if (decisions.empty()) throw std::invalid_argument("kws_accuracy: empty evaluation set");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < decisions.size(); ++i) correct += decisions[i] == truths[i];
  return double(correct) / double(decisions.size());
}

}  // namespace uit
