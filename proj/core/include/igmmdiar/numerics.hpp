#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

namespace igmmdiar {

/// Digamma function Psi(x) for x > 0. Upward recurrence to x >= 10, then the
/// asymptotic expansion. Throws DomainError for x <= 0 or non-finite x.
double digamma(double x);

/// Trigamma function Psi'(x) for x > 0, same scheme as digamma().
double trigamma(double x);

double sigmoid(double x);

// Sequential left-to-right reductions. The recorded (Var) overloads in
// autodiff.hpp use the same order so plain and recorded values agree exactly.
double sum(std::span<const double> xs);
double dot(std::span<const double> a, std::span<const double> b);
double squared_norm(std::span<const double> a);
double squared_distance(std::span<const double> a, std::span<const double> b);
double l1_distance(std::span<const double> a, std::span<const double> b);

inline double value_of(double x) { return x; }

/// Converts unnormalized log-probabilities into a probability vector via
/// exp(l_k - m) / sum_j exp(l_j - m) with m the maximum logit, so the result
/// does not overflow for logits around +-1e3.
template <class S>
std::vector<S> normalize_log_probs(std::span<const S> logits) {
  using std::exp;
  std::vector<S> out;
  if (logits.empty()) return out;
  double shift = value_of(logits[0]);
  for (const auto& l : logits) shift = std::max(shift, value_of(l));
  std::vector<S> shifted;
  shifted.reserve(logits.size());
  for (const auto& l : logits) shifted.push_back(exp(l - shift));
  const S total = sum(std::span<const S>(shifted));
  out.reserve(logits.size());
  for (const auto& e : shifted) out.push_back(e / total);
  return out;
}

/// Throws DomainError unless every entry is finite.
void require_finite(std::span<const double> xs, const char* what);

}  // namespace igmmdiar
