#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "nda/dataset.hpp"
#include "nda/errors.hpp"
#include "nda/graph.hpp"
#include "nda/model.hpp"
#include "nda/rng.hpp"
#include "nda/tensor.hpp"
#include "nda/warnings.hpp"

namespace nda {

inline constexpr double kProbFloor = 1e-12;

enum class MeanVariant { L2, Prototypical };
enum class SiameseVariant { Literal, Margin };

/// Loss weights and variant switches for the combined objective
/// alpha * (class losses) + beta * (mean losses + gamma * siamese loss).
struct NdaConfig {
  double alpha = 1.0;
  double beta = 1e-3;
  double gamma = 1.0;
  MeanVariant mean_variant = MeanVariant::L2;
  SiameseVariant siamese_variant = SiameseVariant::Margin;
  double margin = 1.0;
  double pair_fraction = 0.5;  // share of batch pairs forced same-class

  void validate() const {
    if (alpha < 0.0 || beta < 0.0 || gamma < 0.0)
      throw ContractError("nda config: loss weights must be non-negative");
    if (!(alpha + beta > 0.0)) throw ContractError("nda config: alpha + beta must be positive");
    if (margin < 0.0) throw ContractError("nda config: margin must be non-negative");
    if (pair_fraction < 0.0 || pair_fraction > 1.0)
      throw ContractError("nda config: pair_fraction must be in [0, 1]");
  }
};

/// Per-class latent centroids, refreshed at each epoch start and treated as
/// constants inside the loss graph.
struct ClassMeans {
  Tensor means;                     // K x d
  std::vector<std::size_t> counts;  // per class
  std::vector<bool> present;        // false when a class had no samples
  std::vector<double> global_mean;  // count-weighted average over present classes
  long epoch = 0;

  std::size_t num_classes() const { return counts.size(); }
  std::size_t dim() const { return means.cols(); }
};

/// Arithmetic mean of latent features per class, computed with the model
/// frozen. Batched and unbatched invocations accumulate in the same sample
/// order and agree exactly.
inline ClassMeans compute_class_means(const Model& model, const Dataset& data,
                                      std::size_t batch_size, long epoch = 0) {
  data.validate();
  if (batch_size == 0) throw ContractError("compute_class_means: batch_size must be >= 1");
  const std::size_t k = static_cast<std::size_t>(data.num_classes);
  const std::size_t d = model.latent_dim();

  ClassMeans cm;
  cm.means = Tensor({k, d});
  cm.counts.assign(k, 0);
  cm.present.assign(k, false);
  cm.global_mean.assign(d, 0.0);
  cm.epoch = epoch;

  for (std::size_t start = 0; start < data.n(); start += batch_size) {
    const std::size_t stop = std::min(data.n(), start + batch_size);
    std::vector<std::size_t> idx(stop - start);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = start + i;
    Tensor latent = model.latent_eval(data.gather(idx));
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const std::size_t y = static_cast<std::size_t>(data.labels[idx[i]]);
      ++cm.counts[y];
      for (std::size_t j = 0; j < d; ++j) cm.means.at(y, j) += latent.at(i, j);
    }
  }
  for (std::size_t j = 0; j < k; ++j) {
    if (cm.counts[j] == 0) continue;
    cm.present[j] = true;
    for (std::size_t c = 0; c < d; ++c) {
      cm.global_mean[c] += cm.means.at(j, c);
      cm.means.at(j, c) /= static_cast<double>(cm.counts[j]);
    }
  }
  for (double& v : cm.global_mean) v /= static_cast<double>(data.n());
  return cm;
}

namespace detail {
inline Tensor ones_column(std::size_t n) { return Tensor::full({n, 1}, 1.0); }

inline void check_labels(const std::vector<int>& labels, std::size_t k, const char* op) {
  for (int y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= k)
      throw ContractError(std::string(op) + ": label " + std::to_string(y) + " outside [0, " +
                          std::to_string(k) + ")");
}

/// Squared L2 distance of each row pair of two equal-shape matrices, n x 1.
inline NodeId row_sq_dists(Graph& g, NodeId a, NodeId b) {
  NodeId diff = g.sub(a, b);
  return g.matmul(g.square(diff), g.constant(ones_column(g.value(a).cols())));
}
}  // namespace detail

/// Mean categorical cross-entropy -log p(true class). Probabilities are
/// floored at 1e-12 when necessary; a floor hit at the true class bumps
/// warnings::prob_floor_hits.
inline NodeId classification_loss(Graph& g, NodeId probs, const std::vector<int>& labels) {
  const Tensor& p = g.value(probs);
  if (p.ndim() != 2 || p.rows() != labels.size())
    throw ContractError("classification_loss: probs " + shape_str(p.shape) + " vs " +
                        std::to_string(labels.size()) + " labels");
  const std::size_t n = p.rows(), k = p.cols();
  detail::check_labels(labels, k, "classification_loss");

  bool needs_floor = false;
  for (double v : p.data)
    if (v < kProbFloor) needs_floor = true;
  for (std::size_t i = 0; i < n; ++i)
    if (p.at(i, static_cast<std::size_t>(labels[i])) < kProbFloor) ++warnings::prob_floor_hits;

  NodeId safe = probs;
  if (needs_floor) {
    NodeId floor_const = g.constant(Tensor::full(p.shape, kProbFloor));
    safe = g.add(g.relu(g.sub(probs, floor_const)), floor_const);
  }
  Tensor onehot({n, k});
  for (std::size_t i = 0; i < n; ++i) onehot.at(i, static_cast<std::size_t>(labels[i])) = 1.0;
  NodeId picked = g.mul(g.log(safe), g.constant(std::move(onehot)));
  return g.scale(g.sum(picked), -1.0 / static_cast<double>(n));
}

/// (1/N) sum of Euclidean distances from each latent to its class mean.
/// Means enter the graph as constants, so no gradient reaches them.
inline NodeId mean_loss_l2(Graph& g, NodeId latents, const std::vector<int>& labels,
                           const ClassMeans& means) {
  const Tensor& l = g.value(latents);
  if (l.ndim() != 2 || l.rows() != labels.size())
    throw ContractError("mean_loss_l2: latents " + shape_str(l.shape) + " vs " +
                        std::to_string(labels.size()) + " labels");
  detail::check_labels(labels, means.num_classes(), "mean_loss_l2");
  const std::size_t n = l.rows(), d = l.cols();
  if (d != means.dim())
    throw ContractError("mean_loss_l2: latent dim " + std::to_string(d) + " vs means dim " +
                        std::to_string(means.dim()));

  Tensor mu_rows({n, d});
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t y = static_cast<std::size_t>(labels[i]);
    if (!means.present[y])
      throw ContractError("mean_loss_l2: no mean available for class " + std::to_string(y));
    for (std::size_t j = 0; j < d; ++j) mu_rows.at(i, j) = means.means.at(y, j);
  }
  NodeId dists = g.sqrt(detail::row_sq_dists(g, latents, g.constant(std::move(mu_rows))));
  return g.mean(dists);
}

/// Prototypical form of the mean loss: softmax over negative squared
/// distances to all class prototypes, followed by cross-entropy.
inline NodeId mean_loss_prototypical(Graph& g, NodeId latents, const std::vector<int>& labels,
                                     const ClassMeans& means) {
  const Tensor& l = g.value(latents);
  if (l.ndim() != 2 || l.rows() != labels.size())
    throw ContractError("mean_loss_prototypical: latents " + shape_str(l.shape) + " vs " +
                        std::to_string(labels.size()) + " labels");
  const std::size_t n = l.rows(), d = l.cols(), k = means.num_classes();
  detail::check_labels(labels, k, "mean_loss_prototypical");
  if (d != means.dim())
    throw ContractError("mean_loss_prototypical: latent dim " + std::to_string(d) +
                        " vs means dim " + std::to_string(means.dim()));
  for (std::size_t j = 0; j < k; ++j)
    if (!means.present[j])
      throw ContractError("mean_loss_prototypical: class " + std::to_string(j) +
                          " has no prototype");

  // ||x - mu_j||^2 = ||x||^2 - 2 x.mu_j + ||mu_j||^2, assembled row-wise
  Tensor mu_t({d, k});
  Tensor mu_sq({n, k});
  for (std::size_t j = 0; j < k; ++j) {
    double sq = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      mu_t.at(c, j) = means.means.at(j, c);
      sq += means.means.at(j, c) * means.means.at(j, c);
    }
    for (std::size_t i = 0; i < n; ++i) mu_sq.at(i, j) = sq;
  }
  NodeId row_sq = g.matmul(g.square(latents), g.constant(detail::ones_column(d)));
  NodeId row_sq_bcast = g.matmul(row_sq, g.constant(Tensor::full({1, k}, 1.0)));
  NodeId cross = g.scale(g.matmul(latents, g.constant(std::move(mu_t))), -2.0);
  NodeId sq_dists = g.add(g.add(row_sq_bcast, cross), g.constant(std::move(mu_sq)));
  NodeId probs = g.softmax_rows(g.scale(sq_dists, -1.0));
  return classification_loss(g, probs, labels);
}

/// Pairwise inter/intra-class loss over row-aligned latent pairs.
///
/// literal: mean of (1-y) * D - y * D with D the Euclidean distance; signed
/// and unbounded below for different-class pairs. margin (default): mean of
/// (1-y) * D^2 + y * max(0, margin - D)^2, which bounds the repulsion.
inline NodeId siamese_loss(Graph& g, NodeId latents_a, NodeId latents_b,
                           const std::vector<int>& diff_flags, const NdaConfig& config) {
  const Tensor& la = g.value(latents_a);
  const Tensor& lb = g.value(latents_b);
  require_same_shape(la, lb, "siamese_loss");
  if (la.rows() != diff_flags.size())
    throw ContractError("siamese_loss: " + std::to_string(diff_flags.size()) + " flags for " +
                        std::to_string(la.rows()) + " pairs");
  for (int f : diff_flags)
    if (f != 0 && f != 1) throw ContractError("siamese_loss: flags must be 0 or 1");
  const std::size_t n = la.rows();

  std::vector<std::size_t> same, diff;
  for (std::size_t i = 0; i < n; ++i) (diff_flags[i] == 0 ? same : diff).push_back(i);

  NodeId sq = detail::row_sq_dists(g, latents_a, latents_b);  // n x 1
  const double inv_n = 1.0 / static_cast<double>(n);
  NodeId total = g.constant(Tensor::scalar(0.0));
  if (config.siamese_variant == SiameseVariant::Literal) {
    if (!same.empty()) total = g.add(total, g.sum(g.sqrt(g.row_select(sq, same))));
    if (!diff.empty()) total = g.sub(total, g.sum(g.sqrt(g.row_select(sq, diff))));
  } else {
    if (!same.empty()) total = g.add(total, g.sum(g.row_select(sq, same)));
    if (!diff.empty()) {
      NodeId d_diff = g.sqrt(g.row_select(sq, diff));
      NodeId gap = g.sub(g.constant(Tensor::full({diff.size(), 1}, config.margin)), d_diff);
      total = g.add(total, g.sum(g.square(g.relu(gap))));
    }
  }
  return g.scale(total, inv_n);
}

/// Weighted combination of the five losses of a Siamese step:
/// alpha*(Lc1 + Lc2) + beta*(Lm1 + Lm2 + gamma*Ls).
inline NodeId nda_total_loss(Graph& g, NodeId class_a, NodeId class_b, NodeId mean_a, NodeId mean_b,
                             NodeId siamese, const NdaConfig& config) {
  config.validate();
  for (NodeId id : {class_a, class_b, mean_a, mean_b, siamese})
    if (g.value(id).size() != 1)
      throw ContractError("nda_total_loss: all component losses must be scalar");
  NodeId class_part = g.scale(g.add(class_a, class_b), config.alpha);
  NodeId beta_group = g.add(g.add(mean_a, mean_b), g.scale(siamese, config.gamma));
  return g.add(class_part, g.scale(beta_group, config.beta));
}

/// Two row-aligned batches with per-pair same/different flags
/// (0 = same class, 1 = different).
struct PairBatch {
  Tensor a, b;
  std::vector<int> labels_a, labels_b;
  std::vector<int> diff_flags;

  std::size_t size() const { return diff_flags.size(); }
};

/// Draws `batch_size` pairs; exactly round(pair_fraction * batch_size) of
/// them are same-class. A same-class draw from a singleton class falls back
/// to a cross-class pair and bumps warnings::pair_fallbacks.
inline PairBatch sample_pairs(const Dataset& data, std::size_t batch_size, double pair_fraction,
                              Rng& rng) {
  data.validate();
  if (batch_size == 0) throw ContractError("sample_pairs: batch_size must be >= 1");
  if (pair_fraction < 0.0 || pair_fraction > 1.0)
    throw ContractError("sample_pairs: pair_fraction must be in [0, 1]");

  const std::size_t k = static_cast<std::size_t>(data.num_classes);
  std::vector<std::vector<std::size_t>> by_class(k);
  for (std::size_t i = 0; i < data.n(); ++i)
    by_class[static_cast<std::size_t>(data.labels[i])].push_back(i);
  std::vector<std::size_t> present;
  for (std::size_t c = 0; c < k; ++c)
    if (!by_class[c].empty()) present.push_back(c);
  if (pair_fraction < 1.0 && present.size() < 2)
    throw ContractError("sample_pairs: different-class pairs need at least 2 populated classes");
  if (present.empty()) throw ContractError("sample_pairs: empty dataset");

  const std::size_t n_same =
      static_cast<std::size_t>(std::llround(pair_fraction * static_cast<double>(batch_size)));

  auto pick = [&rng](std::size_t bound) {
    return std::uniform_int_distribution<std::size_t>(0, bound - 1)(rng);
  };

  std::vector<std::size_t> rows_a, rows_b;
  std::vector<int> flags;
  rows_a.reserve(batch_size);
  rows_b.reserve(batch_size);
  auto push_diff_pair = [&]() {
    const std::size_t c1 = present[pick(present.size())];
    std::size_t c2 = c1;
    while (c2 == c1) c2 = present[pick(present.size())];
    rows_a.push_back(by_class[c1][pick(by_class[c1].size())]);
    rows_b.push_back(by_class[c2][pick(by_class[c2].size())]);
    flags.push_back(1);
  };
  for (std::size_t s = 0; s < batch_size; ++s) {
    if (s < n_same) {
      const std::size_t c = present[pick(present.size())];
      if (by_class[c].size() < 2) {
        if (present.size() < 2)
          throw ContractError("sample_pairs: same-class pair impossible and no fallback class");
        ++warnings::pair_fallbacks;
        push_diff_pair();
        continue;
      }
      const std::size_t i = pick(by_class[c].size());
      std::size_t j = i;
      while (j == i) j = pick(by_class[c].size());
      rows_a.push_back(by_class[c][i]);
      rows_b.push_back(by_class[c][j]);
      flags.push_back(0);
    } else {
      push_diff_pair();
    }
  }

  PairBatch pb;
  pb.a = data.gather(rows_a);
  pb.b = data.gather(rows_b);
  for (std::size_t r : rows_a) pb.labels_a.push_back(data.labels[r]);
  for (std::size_t r : rows_b) pb.labels_b.push_back(data.labels[r]);
  pb.diff_flags = std::move(flags);
  return pb;
}

}  // namespace nda
