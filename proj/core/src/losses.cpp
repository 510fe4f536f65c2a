#include "igmmdiar/losses.hpp"

#include <cmath>
#include <map>
#include <utility>

namespace igmmdiar {

void LossWeights::validate() const {
  auto in_unit = [](double x) { return std::isfinite(x) && x >= 0.0 && x <= 1.0; };
  if (!in_unit(lambda1) || !in_unit(lambda2)) {
    throw ValidationError("loss weights must lie in [0, 1]");
  }
  if (lambda1 + lambda2 > 1.0) throw ValidationError("loss weights must sum to at most 1");
}

std::vector<std::vector<int>> all_permutations(int n) {
  std::vector<int> p(static_cast<std::size_t>(n));
  std::iota(p.begin(), p.end(), 0);
  std::vector<std::vector<int>> out;
  do {
    out.push_back(p);
  } while (std::next_permutation(p.begin(), p.end()));
  return out;
}

double exact_ari(std::span<const int> predicted, std::span<const int> truth) {
  if (predicted.size() != truth.size()) throw ValidationError("exact_ari: length mismatch");
  if (predicted.size() < 2) throw ValidationError("exact_ari: need at least two items");
  auto pairs = [](double c) { return c * (c - 1.0) / 2.0; };

  std::map<std::pair<int, int>, double> cells;
  std::map<int, double> pred_sizes;
  std::map<int, double> true_sizes;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    cells[{predicted[i], truth[i]}] += 1.0;
    pred_sizes[predicted[i]] += 1.0;
    true_sizes[truth[i]] += 1.0;
  }
  double index = 0.0;
  for (const auto& [key, c] : cells) index += pairs(c);
  double pred_pairs = 0.0;
  for (const auto& [key, c] : pred_sizes) pred_pairs += pairs(c);
  double true_pairs = 0.0;
  for (const auto& [key, c] : true_sizes) true_pairs += pairs(c);
  const double total = pairs(static_cast<double>(predicted.size()));

  const double expected = pred_pairs * true_pairs / total;
  const double max_index = 0.5 * (pred_pairs + true_pairs);
  if (max_index - expected == 0.0) return 1.0;
  return (index - expected) / (max_index - expected);
}

}  // namespace igmmdiar
