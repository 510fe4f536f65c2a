#pragma once

// Spherical infinite Gaussian mixture with a truncated stick-breaking prior:
// generative sampling, variational-Bayes M/E steps, initializers and the
// unfolded (fixed-depth) EM run.
//
// The VB routines are templated on the scalar type so the same code runs on
// doubles or records onto a Tape (S = Var) for end-to-end gradients.

#include <cstdint>
#include <functional>
#include <vector>

#include "igmmdiar/autodiff.hpp"
#include "igmmdiar/matrix.hpp"
#include "igmmdiar/numerics.hpp"

namespace igmmdiar {

struct IgmmHyper {
  double alpha = 1.0;   // DP concentration
  int truncation = 10;  // K'
  int em_iters = 10;
  int dim = 16;         // C

  void validate() const;
};

// Row n of an embedding matrix comes from local slot `slot` of chunk `chunk`.
struct SlotRef {
  int chunk = 0;
  int slot = 0;
  friend bool operator==(const SlotRef&, const SlotRef&) = default;
};

template <class S>
struct BasicEmbeddingSet {
  Matrix<S> values;            // N x C
  std::vector<SlotRef> slots;  // n -> (chunk, slot)

  std::size_t size() const noexcept { return values.rows(); }
};
using EmbeddingSet = BasicEmbeddingSet<double>;

// Finite entries, one SlotRef per row, no (chunk, slot) listed twice.
void validate(const EmbeddingSet& set);

// Row-stochastic within `tolerance`, entries in [0, 1].
void validate_responsibilities(const Matrix<double>& r, double tolerance = 1e-9);

template <class S>
struct VariationalParams {
  std::vector<S> gamma1;  // Beta posterior of stick k, first shape
  std::vector<S> gamma2;  // second shape
  Matrix<S> theta;        // K' x C posterior cluster means
  std::vector<S> a;       // Gamma posterior of cluster precision, shape
  std::vector<S> b;       // rate

  std::size_t clusters() const noexcept { return a.size(); }
};

// State before the first M-step: a = b = 1, theta = 0, gamma = (1, alpha).
VariationalParams<double> initial_params(const IgmmHyper& hyper);

// --- generative model --------------------------------------------------------

struct GenerativeSample {
  Matrix<double> embeddings;        // N x C
  std::vector<int> assignments;     // v_n
  std::vector<double> stick_proportions;  // eta_k, k < K'
  std::vector<double> weights;      // pi_k = eta_k prod_{j<k} (1 - eta_j)
  Matrix<double> means;             // K' x C
  std::vector<double> precisions;   // beta_k
};

// Draws N embeddings from the truncated generative process. Assignment
// probabilities are the K' stick weights renormalized to sum to one.
GenerativeSample sample_generative(const IgmmHyper& hyper, std::size_t n, std::uint64_t seed);

// Mixture with fixed means (one row per cluster), a shared precision and
// equal mixing weights. Used for planted-cluster fixtures.
GenerativeSample sample_planted(const Matrix<double>& means, double precision,
                                std::size_t n, std::uint64_t seed);

// K points in `dim` dimensions with pairwise distance `separation`:
// (separation / sqrt 2) times the first K unit vectors.
Matrix<double> simplex_means(int clusters, int dim, double separation);

// --- initializers --------------------------------------------------------------

enum class InitMethod { kUniform, kSoftKmeans, kExternal };

struct InitOptions {
  InitMethod method = InitMethod::kSoftKmeans;
  double tau = 1.0;
  // Used when method == kExternal; must return an N x K' row-stochastic matrix.
  std::function<Matrix<double>(const Matrix<double>& embeddings, int truncation)> external;
};

Matrix<double> init_responsibilities(const Matrix<double>& embeddings, int truncation,
                                     const InitOptions& options = {});

// Farthest-point seeding: first the row farthest from the mean, then
// repeatedly the row farthest from all chosen centers (ties to lower index).
std::vector<std::size_t> farthest_point_seeds(const Matrix<double>& embeddings, int count);

// --- VB steps --------------------------------------------------------------------

template <class S>
VariationalParams<S> vb_m_step(const Matrix<S>& resp, const Matrix<S>& embeddings,
                               const VariationalParams<S>& prev, const IgmmHyper& hyper);

template <class S>
Matrix<S> vb_e_step(const VariationalParams<S>& params, const Matrix<S>& embeddings,
                    const IgmmHyper& hyper);

template <class S>
struct UnfoldedRun {
  Matrix<S> responsibilities;
  VariationalParams<S> params;
  std::vector<double> max_change;  // ||R_t - R_{t-1}||_inf per iteration
};

// em_iters (M-step, E-step) pairs starting from `init`. The initializer output
// enters as a constant; gradients flow only through the iterations.
template <class S>
UnfoldedRun<S> run_unfolded(const Matrix<S>& embeddings, const IgmmHyper& hyper,
                            const Matrix<double>& init);

// argmax per row, ties to the lowest cluster index.
template <class S>
std::vector<int> hard_assign(const Matrix<S>& resp) {
  std::vector<int> labels(resp.rows(), 0);
  for (std::size_t n = 0; n < resp.rows(); ++n) {
    double best = value_of(resp(n, 0));
    for (std::size_t k = 1; k < resp.cols(); ++k) {
      if (value_of(resp(n, k)) > best) {
        best = value_of(resp(n, k));
        labels[n] = static_cast<int>(k);
      }
    }
  }
  return labels;
}

// Clusters whose total responsibility mass reaches `mass_threshold`.
int effective_cluster_count(const Matrix<double>& resp, double mass_threshold = 0.5);

// ---------------------------------------------------------------------------------
// Template definitions.

namespace detail {

template <class S>
Matrix<S> transpose(const Matrix<S>& m) {
  Matrix<S> t(m.cols(), m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) t(c, r) = m(r, c);
  return t;
}

}  // namespace detail

template <class S>
VariationalParams<S> vb_m_step(const Matrix<S>& resp, const Matrix<S>& embeddings,
                               const VariationalParams<S>& prev, const IgmmHyper& hyper) {
  const std::size_t n_points = resp.rows();
  const std::size_t k_trunc = resp.cols();
  const std::size_t dim = embeddings.cols();
  if (embeddings.rows() != n_points || prev.clusters() != k_trunc ||
      prev.theta.cols() != dim) {
    throw ValidationError("vb_m_step: inconsistent shapes");
  }
  const double c = static_cast<double>(dim);
  const Matrix<S> resp_t = detail::transpose(resp);  // K' x N
  const Matrix<S> emb_t = detail::transpose(embeddings);  // C x N

  std::vector<S> mass(k_trunc);
  for (std::size_t k = 0; k < k_trunc; ++k) mass[k] = sum(resp_t.row(k));

  VariationalParams<S> out;
  out.gamma1.resize(k_trunc);
  out.gamma2.resize(k_trunc);
  out.a.resize(k_trunc);
  out.b.resize(k_trunc);
  out.theta = Matrix<S>(k_trunc, dim);

  // Mass in clusters after k: sum_n sum_{k' > k} r_{n,k'}.
  std::vector<S> tail(k_trunc, S(0.0));
  for (std::size_t k = k_trunc - 1; k-- > 0;) tail[k] = tail[k + 1] + mass[k + 1];

  std::vector<S> dist(n_points);
  for (std::size_t k = 0; k < k_trunc; ++k) {
    out.gamma1[k] = 1.0 + mass[k];
    out.gamma2[k] = hyper.alpha + tail[k];
    out.a[k] = 1.0 + (c / 2.0) * mass[k];
    // theta uses the new a and the previous b (expected precision a/b); b then
    // uses the new theta.
    const S ratio = out.a[k] / prev.b[k];
    const S denom = 1.0 + ratio * mass[k];
    for (std::size_t d = 0; d < dim; ++d) {
      out.theta(k, d) = ratio * dot(resp_t.row(k), emb_t.row(d)) / denom;
    }
    for (std::size_t n = 0; n < n_points; ++n) {
      dist[n] = squared_distance(embeddings.row(n), out.theta.row(k)) + c;
    }
    out.b[k] = 1.0 + 0.5 * dot(resp_t.row(k), std::span<const S>(dist));
  }
  return out;
}

template <class S>
Matrix<S> vb_e_step(const VariationalParams<S>& params, const Matrix<S>& embeddings,
                    const IgmmHyper& hyper) {
  using std::log;
  (void)hyper;
  const std::size_t n_points = embeddings.rows();
  const std::size_t k_trunc = params.clusters();
  const std::size_t dim = embeddings.cols();
  if (params.theta.cols() != dim) throw ValidationError("vb_e_step: inconsistent shapes");
  const double c = static_cast<double>(dim);

  std::vector<S> log_one_minus(k_trunc);  // E[log(1 - eta_k)]
  std::vector<S> prior(k_trunc);
  std::vector<S> half_precision(k_trunc);
  for (std::size_t k = 0; k < k_trunc; ++k) {
    const S psi_total = digamma(params.gamma1[k] + params.gamma2[k]);
    log_one_minus[k] = digamma(params.gamma2[k]) - psi_total;
    prior[k] = digamma(params.gamma1[k]) - psi_total +
               (c / 2.0) * (digamma(params.a[k]) - log(params.b[k]));
    half_precision[k] = params.a[k] / (2.0 * params.b[k]);
  }
  // Stick term summed over k' > k.
  S later(0.0);
  for (std::size_t k = k_trunc; k-- > 0;) {
    prior[k] = prior[k] + later;
    later = later + log_one_minus[k];
  }

  Matrix<S> resp(n_points, k_trunc);
  std::vector<S> logits(k_trunc);
  for (std::size_t n = 0; n < n_points; ++n) {
    for (std::size_t k = 0; k < k_trunc; ++k) {
      const S dist = squared_distance(embeddings.row(n), params.theta.row(k));
      logits[k] = prior[k] - half_precision[k] * (dist + c);
    }
    const std::vector<S> row = normalize_log_probs(std::span<const S>(logits));
    std::copy(row.begin(), row.end(), resp.row(n).begin());
  }
  return resp;
}

template <class S>
UnfoldedRun<S> run_unfolded(const Matrix<S>& embeddings, const IgmmHyper& hyper,
                            const Matrix<double>& init) {
  hyper.validate();
  if (init.rows() != embeddings.rows() ||
      init.cols() != static_cast<std::size_t>(hyper.truncation)) {
    throw ValidationError("run_unfolded: init must be N x K'");
  }
  if (embeddings.cols() != static_cast<std::size_t>(hyper.dim)) {
    throw ValidationError("run_unfolded: embedding dimension differs from hyper.dim");
  }
  const VariationalParams<double> start = initial_params(hyper);
  UnfoldedRun<S> run;
  run.params.gamma1.assign(start.gamma1.begin(), start.gamma1.end());
  run.params.gamma2.assign(start.gamma2.begin(), start.gamma2.end());
  run.params.a.assign(start.a.begin(), start.a.end());
  run.params.b.assign(start.b.begin(), start.b.end());
  run.params.theta = transform<S>(start.theta, [](double v) { return S(v); });
  run.responsibilities = transform<S>(init, [](double v) { return S(v); });

  for (int it = 0; it < hyper.em_iters; ++it) {
    run.params = vb_m_step(run.responsibilities, embeddings, run.params, hyper);
    Matrix<S> next = vb_e_step(run.params, embeddings, hyper);
    double change = 0.0;
    for (std::size_t i = 0; i < next.size(); ++i) {
      change = std::max(change, std::abs(value_of(next.data()[i]) -
                                         value_of(run.responsibilities.data()[i])));
    }
    run.max_change.push_back(change);
    run.responsibilities = std::move(next);
  }
  return run;
}

}  // namespace igmmdiar
