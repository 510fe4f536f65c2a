#include "igmmdiar/igmm.hpp"

#include <cmath>
#include <set>
#include <string>
#include <utility>

#include "igmmdiar/errors.hpp"
#include "igmmdiar/rng.hpp"

namespace igmmdiar {

void IgmmHyper::validate() const {
  if (!(alpha > 0.0) || !std::isfinite(alpha)) throw ValidationError("igmm: alpha must be > 0");
  if (truncation < 1) throw ValidationError("igmm: truncation K' must be >= 1");
  if (em_iters < 0) throw ValidationError("igmm: em_iters must be >= 0");
  if (dim < 1) throw ValidationError("igmm: embedding dimension must be >= 1");
}

void validate(const EmbeddingSet& set) {
  require_finite(set.values.data(), "embedding set");
  if (set.slots.size() != set.values.rows()) {
    throw ValidationError("embedding set: index map size differs from row count");
  }
  std::set<std::pair<int, int>> seen;
  for (const auto& s : set.slots) {
    if (!seen.emplace(s.chunk, s.slot).second) {
      throw ValidationError("embedding set: (chunk " + std::to_string(s.chunk) + ", slot " +
                            std::to_string(s.slot) + ") listed twice");
    }
  }
}

void validate_responsibilities(const Matrix<double>& r, double tolerance) {
  for (std::size_t n = 0; n < r.rows(); ++n) {
    double total = 0.0;
    for (double v : r.row(n)) {
      if (!(v >= 0.0 && v <= 1.0)) {
        throw ValidationError("responsibilities: row " + std::to_string(n) +
                              " has an entry outside [0, 1]");
      }
      total += v;
    }
    if (std::abs(total - 1.0) > tolerance) {
      throw ValidationError("responsibilities: row " + std::to_string(n) + " sums to " +
                            std::to_string(total));
    }
  }
}

VariationalParams<double> initial_params(const IgmmHyper& hyper) {
  hyper.validate();
  const auto k = static_cast<std::size_t>(hyper.truncation);
  VariationalParams<double> p;
  p.gamma1.assign(k, 1.0);
  p.gamma2.assign(k, hyper.alpha);
  p.a.assign(k, 1.0);
  p.b.assign(k, 1.0);
  p.theta = Matrix<double>(k, static_cast<std::size_t>(hyper.dim), 0.0);
  return p;
}

GenerativeSample sample_generative(const IgmmHyper& hyper, std::size_t n, std::uint64_t seed) {
  hyper.validate();
  GenerativeSample out;
  const auto dim = static_cast<std::size_t>(hyper.dim);
  if (n == 0) {
    out.embeddings = Matrix<double>(0, dim);
    return out;
  }
  const auto k_trunc = static_cast<std::size_t>(hyper.truncation);
  Rng rng(seed);

  double remaining = 1.0;
  for (std::size_t k = 0; k < k_trunc; ++k) {
    const double eta = rng.beta_one(hyper.alpha);
    out.stick_proportions.push_back(eta);
    out.weights.push_back(eta * remaining);
    remaining *= 1.0 - eta;
  }
  out.means = Matrix<double>(k_trunc, dim);
  for (std::size_t k = 0; k < k_trunc; ++k) {
    for (std::size_t d = 0; d < dim; ++d) out.means(k, d) = rng.normal();
    out.precisions.push_back(rng.gamma(1.0));
  }
  out.embeddings = Matrix<double>(n, dim);
  out.assignments.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int v = rng.categorical(out.weights);
    out.assignments[i] = v;
    const double sd = 1.0 / std::sqrt(out.precisions[static_cast<std::size_t>(v)]);
    for (std::size_t d = 0; d < dim; ++d) {
      out.embeddings(i, d) = out.means(static_cast<std::size_t>(v), d) + sd * rng.normal();
    }
  }
  return out;
}

GenerativeSample sample_planted(const Matrix<double>& means, double precision, std::size_t n,
                                std::uint64_t seed) {
  if (means.rows() == 0) throw ValidationError("sample_planted: need at least one mean");
  if (!(precision > 0.0)) throw ValidationError("sample_planted: precision must be > 0");
  const std::size_t k = means.rows();
  const std::size_t dim = means.cols();
  Rng rng(seed);
  GenerativeSample out;
  out.means = means;
  out.weights.assign(k, 1.0 / static_cast<double>(k));
  out.precisions.assign(k, precision);
  out.embeddings = Matrix<double>(n, dim);
  out.assignments.resize(n);
  const double sd = 1.0 / std::sqrt(precision);
  for (std::size_t i = 0; i < n; ++i) {
    const int v = rng.categorical(out.weights);
    out.assignments[i] = v;
    for (std::size_t d = 0; d < dim; ++d) {
      out.embeddings(i, d) = means(static_cast<std::size_t>(v), d) + sd * rng.normal();
    }
  }
  return out;
}

Matrix<double> simplex_means(int clusters, int dim, double separation) {
  if (clusters < 1 || dim < clusters) {
    throw ValidationError("simplex_means: need 1 <= clusters <= dim");
  }
  Matrix<double> means(static_cast<std::size_t>(clusters), static_cast<std::size_t>(dim), 0.0);
  const double scale = separation / std::sqrt(2.0);
  for (int k = 0; k < clusters; ++k) means(k, k) = scale;
  return means;
}

std::vector<std::size_t> farthest_point_seeds(const Matrix<double>& embeddings, int count) {
  const std::size_t n = embeddings.rows();
  const std::size_t dim = embeddings.cols();
  std::vector<std::size_t> seeds;
  if (n == 0 || count <= 0) return seeds;

  std::vector<double> mean(dim, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t d = 0; d < dim; ++d) mean[d] += embeddings(i, d);
  for (double& m : mean) m /= static_cast<double>(n);

  std::size_t first = 0;
  double best = -1.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dist = squared_distance(embeddings.row(i), mean);
    if (dist > best) {
      best = dist;
      first = i;
    }
  }
  seeds.push_back(first);

  std::vector<double> nearest(n);
  for (std::size_t i = 0; i < n; ++i) {
    nearest[i] = squared_distance(embeddings.row(i), embeddings.row(first));
  }
  while (seeds.size() < static_cast<std::size_t>(count)) {
    std::size_t pick = 0;
    double far = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (nearest[i] > far) {
        far = nearest[i];
        pick = i;
      }
    }
    seeds.push_back(pick);
    for (std::size_t i = 0; i < n; ++i) {
      nearest[i] = std::min(nearest[i], squared_distance(embeddings.row(i), embeddings.row(pick)));
    }
  }
  return seeds;
}

namespace {

Matrix<double> soft_kmeans(const Matrix<double>& embeddings, int truncation, double tau) {
  if (!(tau > 0.0)) throw ValidationError("soft-kmeans init: tau must be > 0");
  const std::vector<std::size_t> seeds = farthest_point_seeds(embeddings, truncation);
  const std::size_t n = embeddings.rows();
  const auto k_trunc = static_cast<std::size_t>(truncation);
  Matrix<double> resp(n, k_trunc);
  std::vector<double> logits(k_trunc);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < k_trunc; ++k) {
      logits[k] = -squared_distance(embeddings.row(i), embeddings.row(seeds[k])) / tau;
    }
    const std::vector<double> row = normalize_log_probs(std::span<const double>(logits));
    std::copy(row.begin(), row.end(), resp.row(i).begin());
  }
  return resp;
}

}  // namespace

Matrix<double> init_responsibilities(const Matrix<double>& embeddings, int truncation,
                                     const InitOptions& options) {
  if (truncation < 1) throw ValidationError("init: truncation must be >= 1");
  if (embeddings.rows() == 0) throw ValidationError("init: need at least one embedding");
  const std::size_t n = embeddings.rows();
  const auto k_trunc = static_cast<std::size_t>(truncation);
  switch (options.method) {
    case InitMethod::kUniform:
      return Matrix<double>(n, k_trunc, 1.0 / static_cast<double>(truncation));
    case InitMethod::kSoftKmeans:
      return soft_kmeans(embeddings, truncation, options.tau);
    case InitMethod::kExternal: {
      if (!options.external) throw ValidationError("init: external initializer not set");
      Matrix<double> resp = options.external(embeddings, truncation);
      if (resp.rows() != n || resp.cols() != k_trunc) {
        throw ValidationError("init: external initializer returned the wrong shape");
      }
      validate_responsibilities(resp);
      return resp;
    }
  }
  throw ValidationError("init: unknown method");
}

int effective_cluster_count(const Matrix<double>& resp, double mass_threshold) {
  if (!(mass_threshold > 0.0)) throw ValidationError("mass_threshold must be > 0");
  int count = 0;
  for (std::size_t k = 0; k < resp.cols(); ++k) {
    double mass = 0.0;
    for (std::size_t n = 0; n < resp.rows(); ++n) mass += resp(n, k);
    if (mass >= mass_threshold) ++count;
  }
  return count;
}

}  // namespace igmmdiar
