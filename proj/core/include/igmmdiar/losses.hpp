#pragma once

// Training objectives: permutation-invariant BCE for chunk-wise diarization,
// the continuous adjusted Rand index over soft assignments, a softmax
// speaker-identity loss, and their weighted combination.

#include <algorithm>
#include <numeric>
#include <span>
#include <vector>

#include "igmmdiar/autodiff.hpp"
#include "igmmdiar/errors.hpp"
#include "igmmdiar/matrix.hpp"
#include "igmmdiar/numerics.hpp"

namespace igmmdiar {

inline constexpr double kBceEpsilon = 1e-7;
inline constexpr int kMaxPitSpeakers = 6;

struct LossWeights {
  double lambda1 = 0.0;  // clustering loss
  double lambda2 = 0.0;  // speaker-identity loss

  void validate() const;
};

template <class S>
struct PitResult {
  S loss{};
  // Slot s of the estimate is matched with reference column permutation[s].
  std::vector<int> permutation;
};

// Lexicographic enumeration of all permutations of 0..n-1; index 0 is the
// identity.
std::vector<std::vector<int>> all_permutations(int n);

template <class S>
S clamp_probability(const S& p) {
  if (value_of(p) < kBceEpsilon) return S(kBceEpsilon);
  if (value_of(p) > 1.0 - kBceEpsilon) return S(1.0 - kBceEpsilon);
  return p;
}

template <class S>
S binary_cross_entropy(double label, const S& estimate) {
  using std::log;
  const S p = clamp_probability(estimate);
  if (label == 1.0) return -log(p);
  if (label == 0.0) return -log(1.0 - p);
  return -(label * log(p) + (1.0 - label) * log(1.0 - p));
}

// min over slot permutations of mean BCE, ties to the lowest permutation index.
template <class S>
PitResult<S> pit_diar_loss(const Matrix<double>& labels, const Matrix<S>& estimates) {
  const std::size_t frames = labels.rows();
  const std::size_t speakers = labels.cols();
  if (estimates.rows() != frames || estimates.cols() != speakers) {
    throw ValidationError("pit_diar_loss: label and estimate shapes differ");
  }
  if (speakers == 0 || frames == 0) throw ValidationError("pit_diar_loss: empty chunk");
  if (speakers > static_cast<std::size_t>(kMaxPitSpeakers)) {
    throw ValidationError("pit_diar_loss: at most 6 speakers per chunk");
  }
  // cost(s, j): BCE of estimate slot s against reference column j.
  Matrix<S> cost(speakers, speakers);
  std::vector<S> terms(frames);
  for (std::size_t s = 0; s < speakers; ++s) {
    for (std::size_t j = 0; j < speakers; ++j) {
      for (std::size_t t = 0; t < frames; ++t) {
        terms[t] = binary_cross_entropy(labels(t, j), estimates(t, s));
      }
      cost(s, j) = sum(std::span<const S>(terms));
    }
  }
  const auto perms = all_permutations(static_cast<int>(speakers));
  std::size_t best = 0;
  double best_total = 0.0;
  for (std::size_t p = 0; p < perms.size(); ++p) {
    double total = 0.0;
    for (std::size_t s = 0; s < speakers; ++s) total += value_of(cost(s, perms[p][s]));
    if (p == 0 || total < best_total) {
      best_total = total;
      best = p;
    }
  }
  std::vector<S> chosen(speakers);
  for (std::size_t s = 0; s < speakers; ++s) chosen[s] = cost(s, perms[best][s]);
  PitResult<S> out;
  out.loss = sum(std::span<const S>(chosen)) / static_cast<double>(frames * speakers);
  out.permutation = perms[best];
  return out;
}

// Half the L1 distance between two probability rows.
template <class S>
S total_variation_distance(std::span<const S> r, std::span<const S> q) {
  if (r.size() != q.size()) throw ValidationError("total_variation_distance: length mismatch");
  return 0.5 * l1_distance(r, q);
}

// Continuous adjusted Rand index of soft assignments `resp` (N x K') against
// hard truth labels. Pair counts are weighted by d = TV(r_n, r_m):
//   N1 = sum_{h differ} d       N2 = sum_{h differ} (1 - d)
//   N3 = sum_{h equal} d        N4 = sum_{h equal} (1 - d)
//   cARI = 2 (N1 N4 - N2 N3) / ((N1 + N2)(N2 + N4) + (N1 + N3)(N3 + N4))
// For one-hot rows this is the Hubert-Arabie ARI. A zero denominator means
// both partitions are trivial and identical; the result is then 1.
template <class S>
S cari(const Matrix<S>& resp, std::span<const int> truth) {
  const std::size_t n = resp.rows();
  if (truth.size() != n) throw ValidationError("cari: truth length differs from N");
  if (n < 2) throw ValidationError("cari: need at least two embeddings");
  std::vector<S> differ_d;
  std::vector<S> same_d;
  differ_d.reserve(n * (n - 1) / 2);
  same_d.reserve(n * (n - 1) / 2);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      S d = total_variation_distance(resp.row(i), resp.row(j));
      (truth[i] == truth[j] ? same_d : differ_d).push_back(std::move(d));
    }
  }
  const auto differ_count = static_cast<double>(differ_d.size());
  const auto same_count = static_cast<double>(same_d.size());
  const S n1 = sum(std::span<const S>(differ_d));
  const S n2 = differ_count - n1;
  const S n3 = sum(std::span<const S>(same_d));
  const S n4 = same_count - n3;
  const S denom = (n1 + n2) * (n2 + n4) + (n1 + n3) * (n3 + n4);
  if (value_of(denom) == 0.0) return S(1.0);
  return 2.0 * (n1 * n4 - n2 * n3) / denom;
}

template <class S>
S cluster_loss(const Matrix<S>& resp, std::span<const int> truth) {
  return -cari(resp, truth);
}

// Classical adjusted Rand index from the contingency table. Returns 1 when
// both labelings are trivial in the same way (zero denominator).
double exact_ari(std::span<const int> predicted, std::span<const int> truth);

// Mean softmax cross-entropy of a linear classifier (weight M x C, bias M)
// over the rows of `embeddings` with targets in [0, M).
template <class S>
S speaker_id_loss(const Matrix<S>& embeddings, std::span<const int> identities,
                  const Matrix<S>& weight, std::span<const S> bias) {
  using std::exp;
  using std::log;
  const std::size_t n = embeddings.rows();
  const std::size_t classes = weight.rows();
  if (identities.size() != n) throw ValidationError("speaker_id_loss: label count mismatch");
  if (bias.size() != classes || weight.cols() != embeddings.cols()) {
    throw ValidationError("speaker_id_loss: classifier shape mismatch");
  }
  for (int id : identities) {
    if (id < 0 || static_cast<std::size_t>(id) >= classes) {
      throw ValidationError("speaker_id_loss: identity " + std::to_string(id) +
                            " outside the speaker inventory");
    }
  }
  if (n == 0) return S(0.0);
  std::vector<S> per_item(n);
  std::vector<S> logits(classes);
  std::vector<S> shifted(classes);
  for (std::size_t i = 0; i < n; ++i) {
    double shift = 0.0;
    for (std::size_t m = 0; m < classes; ++m) {
      logits[m] = dot(weight.row(m), embeddings.row(i)) + bias[m];
      shift = m == 0 ? value_of(logits[m]) : std::max(shift, value_of(logits[m]));
    }
    for (std::size_t m = 0; m < classes; ++m) shifted[m] = exp(logits[m] - shift);
    const S log_norm = log(sum(std::span<const S>(shifted))) + shift;
    per_item[i] = log_norm - logits[static_cast<std::size_t>(identities[i])];
  }
  return sum(std::span<const S>(per_item)) / static_cast<double>(n);
}

template <class S>
S total_loss(const S& diar, const S& cluster, const S& spk, const LossWeights& w) {
  w.validate();
  return (1.0 - w.lambda1 - w.lambda2) * diar + w.lambda1 * cluster + w.lambda2 * spk;
}

}  // namespace igmmdiar
