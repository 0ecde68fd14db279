#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <string>
#include <vector>

#include "nda/errors.hpp"
#include "nda/tensor.hpp"
#include "nda/warnings.hpp"

namespace nda {

/// Within/between scatter matrices of a labeled point set, plus the scalar
/// Fisher diagnostic trace((S_W + ridge I)^-1 S_B).
struct ScatterStats {
  Tensor s_within;   // d x d
  Tensor s_between;  // d x d
  double fisher = 0.0;
  Tensor class_means;               // K x d
  std::vector<std::size_t> counts;  // per class
  std::vector<double> global_mean;  // d
  bool single_class = false;

  std::size_t dim() const { return s_within.rows(); }
  std::size_t num_classes() const { return counts.size(); }
};

struct EigenResult {
  std::vector<double> values;  // descending
  Tensor vectors;              // orthonormal columns, aligned with values
};

/// Cyclic Jacobi rotations for a symmetric matrix. Converged once the
/// off-diagonal Frobenius norm drops below `tol`.
inline EigenResult jacobi_eigen_symmetric(const Tensor& matrix, int max_sweeps = 64,
                                          double tol = -1.0) {
  if (matrix.ndim() != 2 || matrix.rows() != matrix.cols())
    throw ContractError("jacobi: matrix must be square, got " + shape_str(matrix.shape));
  const std::size_t n = matrix.rows();
  double fro = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (std::fabs(matrix.at(i, j) - matrix.at(j, i)) > 1e-10)
        throw ContractError("jacobi: matrix not symmetric at (" + std::to_string(i) + "," +
                            std::to_string(j) + ")");
      fro += matrix.at(i, j) * matrix.at(i, j);
    }
  fro = std::sqrt(fro);
  if (tol < 0.0) tol = 1e-12 * std::max(1.0, fro);

  Tensor a = matrix;
  Tensor v = Tensor({n, n});
  for (std::size_t i = 0; i < n; ++i) v.at(i, i) = 1.0;

  auto off_norm = [&]() {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (i != j) s += a.at(i, j) * a.at(i, j);
    return std::sqrt(s);
  };

  double off = off_norm();
  int sweep = 0;
  while (off >= tol) {
    if (sweep++ >= max_sweeps)
      throw ConvergenceError("jacobi: no convergence after " + std::to_string(max_sweeps) +
                             " sweeps, off-diagonal residual " + std::to_string(off));
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a.at(p, q);
        if (apq == 0.0) continue;
        const double theta = (a.at(q, q) - a.at(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t i = 0; i < n; ++i) {
          const double aip = a.at(i, p), aiq = a.at(i, q);
          a.at(i, p) = c * aip - s * aiq;
          a.at(i, q) = s * aip + c * aiq;
        }
        for (std::size_t i = 0; i < n; ++i) {
          const double api = a.at(p, i), aqi = a.at(q, i);
          a.at(p, i) = c * api - s * aqi;
          a.at(q, i) = s * api + c * aqi;
        }
        for (std::size_t i = 0; i < n; ++i) {
          const double vip = v.at(i, p), viq = v.at(i, q);
          v.at(i, p) = c * vip - s * viq;
          v.at(i, q) = s * vip + c * viq;
        }
      }
    }
    off = off_norm();
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return a.at(x, x) > a.at(y, y); });
  EigenResult r;
  r.values.resize(n);
  r.vectors = Tensor({n, n});
  for (std::size_t k = 0; k < n; ++k) {
    r.values[k] = a.at(order[k], order[k]);
    for (std::size_t i = 0; i < n; ++i) r.vectors.at(i, k) = v.at(i, order[k]);
  }
  return r;
}

/// trace((S_W + ridge I)^-1 S_B); larger means a more discriminative layout.
inline double fisher_score(const ScatterStats& stats, double ridge) {
  if (!(ridge > 0.0)) throw ContractError("fisher_score: ridge must be > 0");
  const std::size_t d = stats.dim();
  Tensor m = stats.s_within;
  for (std::size_t i = 0; i < d; ++i) m.at(i, i) += ridge;
  EigenResult ew = jacobi_eigen_symmetric(m);
  double score = 0.0;
  for (std::size_t k = 0; k < d; ++k) {
    double quad = 0.0;
    for (std::size_t r = 0; r < d; ++r) {
      double mv = 0.0;
      for (std::size_t c = 0; c < d; ++c) mv += stats.s_between.at(r, c) * ew.vectors.at(c, k);
      quad += ew.vectors.at(r, k) * mv;
    }
    score += quad / ew.values[k];
  }
  if (!std::isfinite(score)) throw NumericError("fisher_score: non-finite result");
  return score;
}

/// S_B = (1/N) sum_j N_j (mu_j - mu)(mu_j - mu)^T,
/// S_W = (1/N) sum_j sum_{i in class j} (x_i - mu_j)(x_i - mu_j)^T.
inline ScatterStats scatter_matrices(const Tensor& latents, const std::vector<int>& labels,
                                     double ridge = 1e-6) {
  if (latents.ndim() != 2 || latents.rows() != labels.size())
    throw ContractError("scatter_matrices: latents " + shape_str(latents.shape) + " vs " +
                        std::to_string(labels.size()) + " labels");
  const std::size_t n = latents.rows(), d = latents.cols();
  if (n == 0) throw ContractError("scatter_matrices: empty input");
  int max_label = 0;
  for (int y : labels) {
    if (y < 0) throw ContractError("scatter_matrices: negative label");
    max_label = std::max(max_label, y);
  }
  const std::size_t k = static_cast<std::size_t>(max_label) + 1;

  ScatterStats st;
  st.counts.assign(k, 0);
  st.class_means = Tensor({k, d});
  st.global_mean.assign(d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t y = static_cast<std::size_t>(labels[i]);
    ++st.counts[y];
    for (std::size_t j = 0; j < d; ++j) {
      st.class_means.at(y, j) += latents.at(i, j);
      st.global_mean[j] += latents.at(i, j);
    }
  }
  std::size_t populated = 0;
  for (std::size_t c = 0; c < k; ++c) {
    if (st.counts[c] == 0) continue;
    ++populated;
    for (std::size_t j = 0; j < d; ++j) st.class_means.at(c, j) /= static_cast<double>(st.counts[c]);
  }
  for (double& v : st.global_mean) v /= static_cast<double>(n);
  st.single_class = populated < 2;

  st.s_within = Tensor({d, d});
  st.s_between = Tensor({d, d});
  std::vector<double> diff(d);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t y = static_cast<std::size_t>(labels[i]);
    for (std::size_t j = 0; j < d; ++j) diff[j] = latents.at(i, j) - st.class_means.at(y, j);
    for (std::size_t r = 0; r < d; ++r)
      for (std::size_t c = 0; c < d; ++c) st.s_within.at(r, c) += diff[r] * diff[c];
  }
  for (std::size_t cl = 0; cl < k; ++cl) {
    if (st.counts[cl] == 0) continue;
    for (std::size_t j = 0; j < d; ++j) diff[j] = st.class_means.at(cl, j) - st.global_mean[j];
    const double w = static_cast<double>(st.counts[cl]);
    for (std::size_t r = 0; r < d; ++r)
      for (std::size_t c = 0; c < d; ++c) st.s_between.at(r, c) += w * diff[r] * diff[c];
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  for (double& v : st.s_within.data) v *= inv_n;
  for (double& v : st.s_between.data) v *= inv_n;

  st.fisher = fisher_score(st, ridge);
  return st;
}

struct LdaProjection {
  Tensor basis;                    // d x target_dim, unit columns
  std::vector<double> eigenvalues; // of the whitened between-scatter, descending
  bool degenerate = false;         // all eigenvalues ~ 0
};

/// Top discriminant directions of (S_W + ridge I)^-1 S_B via the symmetric
/// whitening route: whiten with S_W, eigendecompose the whitened S_B.
inline LdaProjection lda_projection(const ScatterStats& stats, std::size_t target_dim,
                                    double ridge = 1e-6) {
  const std::size_t d = stats.dim();
  if (target_dim == 0 || target_dim > d)
    throw ContractError("lda_projection: target_dim must be in [1, " + std::to_string(d) + "]");
  std::size_t populated = 0;
  for (std::size_t c : stats.counts)
    if (c > 0) ++populated;
  if (populated > 0 && target_dim > std::min(d, populated - 1)) {
    ++warnings::lda_rank_warnings;
    std::fprintf(stderr, "lda_projection: target_dim %zu exceeds rank bound %zu of S_B\n",
                 target_dim, std::min(d, populated - 1));
  }

  Tensor m = stats.s_within;
  for (std::size_t i = 0; i < d; ++i) m.at(i, i) += ridge;
  EigenResult ew = jacobi_eigen_symmetric(m);

  // whitener W = V diag(lambda^-1/2) V^T
  Tensor w({d, d});
  for (std::size_t r = 0; r < d; ++r)
    for (std::size_t c = 0; c < d; ++c) {
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k)
        s += ew.vectors.at(r, k) * ew.vectors.at(c, k) / std::sqrt(ew.values[k]);
      w.at(r, c) = s;
    }

  auto matmul_dd = [d](const Tensor& x, const Tensor& y) {
    Tensor out({d, d});
    for (std::size_t r = 0; r < d; ++r)
      for (std::size_t k = 0; k < d; ++k) {
        const double xv = x.at(r, k);
        if (xv == 0.0) continue;
        for (std::size_t c = 0; c < d; ++c) out.at(r, c) += xv * y.at(k, c);
      }
    return out;
  };
  Tensor whitened = matmul_dd(matmul_dd(w, stats.s_between), w);
  for (std::size_t r = 0; r < d; ++r)
    for (std::size_t c = r + 1; c < d; ++c) {
      const double avg = 0.5 * (whitened.at(r, c) + whitened.at(c, r));
      whitened.at(r, c) = avg;
      whitened.at(c, r) = avg;
    }
  EigenResult eb = jacobi_eigen_symmetric(whitened);

  LdaProjection proj;
  proj.eigenvalues.assign(eb.values.begin(), eb.values.begin() + static_cast<std::ptrdiff_t>(target_dim));
  proj.degenerate = eb.values.empty() || eb.values[0] < 1e-10;
  proj.basis = Tensor({d, target_dim});
  for (std::size_t k = 0; k < target_dim; ++k) {
    double norm = 0.0;
    for (std::size_t r = 0; r < d; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < d; ++c) s += w.at(r, c) * eb.vectors.at(c, k);
      proj.basis.at(r, k) = s;
      norm += s * s;
    }
    norm = std::sqrt(norm);
    if (norm > 0.0)
      for (std::size_t r = 0; r < d; ++r) proj.basis.at(r, k) /= norm;
  }
  return proj;
}

/// Mean Euclidean distance from each point to its class centroid.
inline double mean_intra_class_distance(const Tensor& latents, const std::vector<int>& labels,
                                        const ScatterStats& stats) {
  const std::size_t n = latents.rows(), d = latents.cols();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t y = static_cast<std::size_t>(labels[i]);
    double sq = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double diff = latents.at(i, j) - stats.class_means.at(y, j);
      sq += diff * diff;
    }
    total += std::sqrt(sq);
  }
  return total / static_cast<double>(n);
}

/// Mean Euclidean distance over unordered pairs of populated class centroids.
inline double mean_inter_centroid_distance(const ScatterStats& stats) {
  const std::size_t k = stats.num_classes(), d = stats.dim();
  double total = 0.0;
  std::size_t pairs = 0;
  for (std::size_t a = 0; a < k; ++a) {
    if (stats.counts[a] == 0) continue;
    for (std::size_t b = a + 1; b < k; ++b) {
      if (stats.counts[b] == 0) continue;
      double sq = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double diff = stats.class_means.at(a, j) - stats.class_means.at(b, j);
        sq += diff * diff;
      }
      total += std::sqrt(sq);
      ++pairs;
    }
  }
  return pairs == 0 ? 0.0 : total / static_cast<double>(pairs);
}

}  // namespace nda
