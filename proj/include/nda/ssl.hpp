#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numeric>
#include <string>
#include <vector>

#include "nda/dataset.hpp"
#include "nda/errors.hpp"
#include "nda/losses.hpp"
#include "nda/model.hpp"
#include "nda/ood.hpp"
#include "nda/optim.hpp"
#include "nda/rng.hpp"
#include "nda/train.hpp"

namespace nda {

enum class PerturbKind { Weak, Strong };

struct PerturbParams {
  double noise_scale = 0.1;
  double mask_fraction = 0.25;  // strong views only
};

struct SslConfig {
  std::size_t labeled_count = 0;
  std::size_t ensemble_size = 3;
  double confidence_threshold = 0.95;
  std::size_t phase1_epochs = 30;
  std::size_t phase2_epochs = 30;
  PerturbParams perturb;
  bool nda_in_phase2 = false;
  NdaConfig nda;  // used when nda_in_phase2 is set
  std::size_t batch_size = 32;
  double learning_rate = 0.05;
  double momentum = 0.9;
  std::uint64_t seed = 1;

  void validate() const {
    if (!(confidence_threshold > 0.0) || confidence_threshold > 1.0)
      throw ContractError("ssl config: confidence threshold must be in (0, 1]");
    if (ensemble_size < 1) throw ContractError("ssl config: ensemble size must be >= 1");
    if (phase1_epochs < 1 || phase2_epochs < 1)
      throw ContractError("ssl config: phase epochs must be >= 1");
    if (batch_size < 2) throw ContractError("ssl config: batch_size must be >= 2");
    if (perturb.mask_fraction < 0.0) throw ContractError("ssl config: mask fraction must be >= 0");
  }
};

/// Mean over rows of KL(p || q) with both distributions floored at 1e-12.
inline double consistency_kl(const Tensor& probs_weak, const Tensor& probs_strong) {
  require_same_shape(probs_weak, probs_strong, "consistency_loss");
  if (probs_weak.ndim() != 2) throw ContractError("consistency_loss: inputs must be 2-D");
  double total = 0.0;
  for (std::size_t i = 0; i < probs_weak.size(); ++i) {
    const double p = std::max(probs_weak.data[i], kProbFloor);
    const double q = std::max(probs_strong.data[i], kProbFloor);
    total += p * (std::log(p) - std::log(q));
  }
  return total / static_cast<double>(probs_weak.rows());
}

/// Graph form of the consistency loss with the weak view detached (the
/// strong branch is pulled toward the weak prediction, UDA style).
inline NodeId consistency_loss(Graph& g, const Tensor& probs_weak_detached, NodeId probs_strong) {
  const Tensor& q = g.value(probs_strong);
  require_same_shape(probs_weak_detached, q, "consistency_loss");
  const std::size_t n = q.rows();

  Tensor p = probs_weak_detached;
  double entropy_term = 0.0;  // sum p log p, constant w.r.t. the graph
  for (double& v : p.data) {
    v = std::max(v, kProbFloor);
    entropy_term += v * std::log(v);
  }
  bool needs_floor = false;
  for (double v : q.data)
    if (v < kProbFloor) needs_floor = true;
  NodeId safe_q = probs_strong;
  if (needs_floor) {
    NodeId floor_const = g.constant(Tensor::full(q.shape, kProbFloor));
    safe_q = g.add(g.relu(g.sub(probs_strong, floor_const)), floor_const);
  }
  NodeId cross = g.sum(g.mul(g.constant(std::move(p)), g.log(safe_q)));  // sum p log q
  NodeId kl = g.sub(g.constant(Tensor::scalar(entropy_term)), cross);
  return g.scale(kl, 1.0 / static_cast<double>(n));
}

/// Weak view: additive seeded Gaussian noise. Strong view: noise plus random
/// zero-masking of round(mask_fraction * dim) coordinates per sample.
inline Tensor perturb(const Tensor& inputs, PerturbKind kind, const PerturbParams& params, Rng& rng) {
  if (inputs.ndim() != 2) throw ContractError("perturb: inputs must be 2-D");
  if (params.noise_scale < 0.0) throw ContractError("perturb: strength must be >= 0");
  if (params.mask_fraction >= 1.0) throw ContractError("perturb: mask fraction must be < 1");
  Tensor out = inputs;
  std::normal_distribution<double> noise(0.0, 1.0);
  for (double& v : out.data) v += params.noise_scale * noise(rng);
  if (kind == PerturbKind::Strong) {
    const std::size_t dim = inputs.cols();
    const std::size_t n_mask =
        static_cast<std::size_t>(std::llround(params.mask_fraction * static_cast<double>(dim)));
    std::vector<std::size_t> coords(dim);
    for (std::size_t r = 0; r < inputs.rows(); ++r) {
      std::iota(coords.begin(), coords.end(), 0);
      for (std::size_t m = 0; m < n_mask; ++m) {  // partial Fisher-Yates
        std::uniform_int_distribution<std::size_t> pick(m, dim - 1);
        std::swap(coords[m], coords[pick(rng)]);
        out.at(r, coords[m]) = 0.0;
      }
    }
  }
  return out;
}

struct SslEpochRecord {
  std::size_t epoch = 0;
  std::size_t member = 0;
  double supervised_loss = 0.0;
  double consistency_loss = 0.0;
  double val_accuracy = 0.0;
};

/// Phase 1: each ensemble member trains independently on labeled
/// cross-entropy plus a weak-vs-strong consistency term on unlabeled data.
inline std::vector<SslEpochRecord> phase1_train(std::vector<Model>& members, const Dataset& labeled,
                                                const Dataset* unlabeled, const Dataset& val,
                                                const SslConfig& config) {
  config.validate();
  labeled.validate();
  std::vector<SslEpochRecord> records;
  const bool has_unlabeled = unlabeled != nullptr && unlabeled->n() > 0;

  for (std::size_t m = 0; m < members.size(); ++m) {
    Model& model = members[m];
    SgdOptimizer opt(model.parameters(), config.learning_rate, config.momentum);
    Rng rng(sub_seed(config.seed, "phase1-member-" + std::to_string(m)));
    const std::size_t per_epoch = has_unlabeled ? unlabeled->n() : labeled.n();
    const std::size_t steps = std::max<std::size_t>(1, per_epoch / config.batch_size);

    auto draw_batch = [&rng](const Dataset& d, std::size_t count) {
      std::uniform_int_distribution<std::size_t> pick(0, d.n() - 1);
      std::vector<std::size_t> idx(count);
      for (std::size_t i = 0; i < count; ++i) idx[i] = pick(rng);
      return idx;
    };

    for (std::size_t epoch = 1; epoch <= config.phase1_epochs; ++epoch) {
      double sup_sum = 0.0, cons_sum = 0.0;
      for (std::size_t step = 0; step < steps; ++step) {
        const auto lab_idx = draw_batch(labeled, config.batch_size);
        std::vector<int> lab_labels;
        for (std::size_t i : lab_idx) lab_labels.push_back(labeled.labels[i]);

        Graph g;
        ForwardResult lab_fr = model.forward(g, labeled.gather(lab_idx));
        NodeId loss = classification_loss(g, lab_fr.probs, lab_labels);
        NodeId cons = g.constant(Tensor::scalar(0.0));
        if (has_unlabeled) {
          const auto unl_idx = draw_batch(*unlabeled, config.batch_size);
          Tensor raw = unlabeled->gather(unl_idx);
          Tensor weak_view = perturb(raw, PerturbKind::Weak, config.perturb, rng);
          Tensor strong_view = perturb(raw, PerturbKind::Strong, config.perturb, rng);
          Tensor weak_probs = model.probs_eval(weak_view);  // detached teacher
          ForwardResult strong_fr = model.forward(g, strong_view);
          cons = consistency_loss(g, weak_probs, strong_fr.probs);
          loss = g.add(loss, cons);
        }
        const double lv = g.value(loss).item();
        if (!std::isfinite(lv))
          throw NumericError("phase1: non-finite loss, member " + std::to_string(m) + " epoch " +
                             std::to_string(epoch) + " step " + std::to_string(step));
        g.backward(loss);
        opt.step_from(g);
        sup_sum += g.value(loss).item() - g.value(cons).item();
        cons_sum += g.value(cons).item();
      }
      SslEpochRecord rec;
      rec.epoch = epoch;
      rec.member = m;
      rec.supervised_loss = sup_sum / static_cast<double>(steps);
      rec.consistency_loss = cons_sum / static_cast<double>(steps);
      rec.val_accuracy = val.n() > 0 ? evaluate(model, val).accuracy : 0.0;
      records.push_back(rec);
    }
  }
  return records;
}

struct PseudoLabelSet {
  std::vector<long long> ids;           // sample ids from the unlabeled set
  std::vector<std::size_t> indices;     // positions in the unlabeled set
  std::vector<int> labels;              // argmax of the ensemble average
  std::vector<double> confidences;      // ensemble-average MCP, all > threshold

  std::size_t size() const { return ids.size(); }
};

/// Selection rule on precomputed per-member probability matrices (n x K
/// each): average across members, keep samples whose maximum average
/// probability exceeds the threshold (strictly), label with the argmax.
inline PseudoLabelSet pseudo_label_from_probs(const std::vector<Tensor>& member_probs,
                                              const std::vector<long long>& ids, double threshold) {
  if (member_probs.empty()) throw ContractError("pseudo_label: need at least one model");
  if (!(threshold > 0.0) || threshold > 1.0)
    throw ContractError("pseudo_label: threshold must be in (0, 1]");
  const std::size_t n = member_probs[0].rows(), k = member_probs[0].cols();
  for (const Tensor& p : member_probs) require_same_shape(p, member_probs[0], "pseudo_label");
  if (ids.size() != n) throw ContractError("pseudo_label: ids do not match the probability rows");

  PseudoLabelSet out;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> avg(k, 0.0);
    for (const Tensor& p : member_probs)
      for (std::size_t j = 0; j < k; ++j) avg[j] += p.at(i, j);
    for (double& v : avg) v /= static_cast<double>(member_probs.size());
    std::size_t arg = 0;
    for (std::size_t j = 1; j < k; ++j)
      if (avg[j] > avg[arg]) arg = j;
    if (avg[arg] > threshold) {
      out.ids.push_back(ids[i]);
      out.indices.push_back(i);
      out.labels.push_back(static_cast<int>(arg));
      out.confidences.push_back(avg[arg]);
    }
  }
  return out;
}

/// Averages member probabilities over the unlabeled set and keeps samples
/// whose maximum class probability exceeds the threshold (strictly).
inline PseudoLabelSet pseudo_label(const std::vector<Model>& members, const Dataset& unlabeled,
                                   double threshold) {
  if (members.empty()) throw ContractError("pseudo_label: need at least one model");
  unlabeled.validate();
  std::vector<Tensor> member_probs;
  member_probs.reserve(members.size());
  for (const Model& m : members) {
    Tensor probs({unlabeled.n(), m.num_classes()});
    const auto preds = score_dataset(m, unlabeled, false);
    for (std::size_t i = 0; i < preds.size(); ++i)
      for (std::size_t j = 0; j < preds[i].probs.size(); ++j) probs.at(i, j) = preds[i].probs[j];
    member_probs.push_back(std::move(probs));
  }
  return pseudo_label_from_probs(member_probs, unlabeled.ids, threshold);
}

/// Ensemble prediction accuracy: argmax of the averaged member probabilities.
inline double ensemble_accuracy(const std::vector<Model>& members, const Dataset& split) {
  if (members.empty()) throw ContractError("ensemble_accuracy: empty ensemble");
  split.validate();
  std::vector<std::vector<ScoredPrediction>> preds;
  preds.reserve(members.size());
  for (const Model& m : members) preds.push_back(score_dataset(m, split, true));
  std::size_t hits = 0;
  const std::size_t k = preds[0][0].probs.size();
  for (std::size_t i = 0; i < split.n(); ++i) {
    std::size_t arg = 0;
    std::vector<double> avg(k, 0.0);
    for (const auto& member_preds : preds)
      for (std::size_t j = 0; j < k; ++j) avg[j] += member_preds[i].probs[j];
    for (std::size_t j = 1; j < k; ++j)
      if (avg[j] > avg[arg]) arg = j;
    if (static_cast<int>(arg) == split.labels[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(split.n());
}

struct Phase2Report {
  std::vector<SslEpochRecord> records;
  std::vector<Model> predecessors;        // phase-1 snapshots, updated on improvement
  std::size_t predecessor_updates = 0;
  bool pseudo_set_empty = false;
};

/// Phase 2: members continue on labeled + pseudo-labeled data with
/// cross-entropy (full NDA losses when configured). A member that improves
/// its validation accuracy replaces its stored phase-1 predecessor snapshot.
inline Phase2Report phase2_train(std::vector<Model>& members, const Dataset& labeled,
                                 const Dataset& unlabeled, const PseudoLabelSet& pseudo,
                                 const Dataset& val, const SslConfig& config) {
  config.validate();
  labeled.validate();

  Phase2Report report;
  report.predecessors = members;  // phase-1 weights, candidates for updating
  report.pseudo_set_empty = pseudo.size() == 0;
  if (report.pseudo_set_empty)
    std::fprintf(stderr, "phase2: empty pseudo-label set, continuing on labeled data only\n");

  // training pool: labeled data plus confident pseudo-labeled samples
  Dataset pool = labeled;
  if (pseudo.size() > 0) {
    Tensor merged({labeled.n() + pseudo.size(), labeled.dim()});
    for (std::size_t i = 0; i < labeled.n(); ++i)
      for (std::size_t j = 0; j < labeled.dim(); ++j) merged.at(i, j) = labeled.features.at(i, j);
    for (std::size_t p = 0; p < pseudo.size(); ++p) {
      const std::size_t src = pseudo.indices[p];
      for (std::size_t j = 0; j < labeled.dim(); ++j)
        merged.at(labeled.n() + p, j) = unlabeled.features.at(src, j);
      pool.labels.push_back(pseudo.labels[p]);
      pool.ids.push_back(pseudo.ids[p]);
    }
    pool.features = std::move(merged);
    pool.provenance += " + " + std::to_string(pseudo.size()) + " pseudo-labeled";
  }
  pool.validate();

  std::vector<double> best_val(members.size(), -1.0);
  for (std::size_t m = 0; m < members.size(); ++m)
    best_val[m] = val.n() > 0 ? evaluate(members[m], val).accuracy : -1.0;

  for (std::size_t m = 0; m < members.size(); ++m) {
    Model& model = members[m];
    SgdOptimizer opt(model.parameters(), config.learning_rate, config.momentum);
    Rng rng(sub_seed(config.seed, "phase2-member-" + std::to_string(m)));
    const std::size_t steps = std::max<std::size_t>(1, pool.n() / config.batch_size);

    for (std::size_t epoch = 1; epoch <= config.phase2_epochs; ++epoch) {
      double loss_sum = 0.0;
      ClassMeans means;
      if (config.nda_in_phase2)
        means = compute_class_means(model, pool, 2 * config.batch_size, static_cast<long>(epoch));

      for (std::size_t step = 0; step < steps; ++step) {
        Graph g;
        NodeId loss;
        if (config.nda_in_phase2) {
          PairBatch pb = sample_pairs(pool, config.batch_size, config.nda.pair_fraction, rng);
          auto [fa, fb] = model.forward_siamese(g, pb.a, pb.b);
          NodeId ca = classification_loss(g, fa.probs, pb.labels_a);
          NodeId cb = classification_loss(g, fb.probs, pb.labels_b);
          NodeId ma, mb;
          if (config.nda.mean_variant == MeanVariant::L2) {
            ma = mean_loss_l2(g, fa.latent, pb.labels_a, means);
            mb = mean_loss_l2(g, fb.latent, pb.labels_b, means);
          } else {
            ma = mean_loss_prototypical(g, fa.latent, pb.labels_a, means);
            mb = mean_loss_prototypical(g, fb.latent, pb.labels_b, means);
          }
          NodeId sm = siamese_loss(g, fa.latent, fb.latent, pb.diff_flags, config.nda);
          loss = nda_total_loss(g, ca, cb, ma, mb, sm, config.nda);
        } else {
          std::uniform_int_distribution<std::size_t> pick(0, pool.n() - 1);
          std::vector<std::size_t> idx(config.batch_size);
          for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = pick(rng);
          std::vector<int> batch_labels;
          for (std::size_t i : idx) batch_labels.push_back(pool.labels[i]);
          ForwardResult fr = model.forward(g, pool.gather(idx));
          loss = classification_loss(g, fr.probs, batch_labels);
        }
        const double lv = g.value(loss).item();
        if (!std::isfinite(lv))
          throw NumericError("phase2: non-finite loss, member " + std::to_string(m) + " epoch " +
                             std::to_string(epoch) + " step " + std::to_string(step));
        g.backward(loss);
        opt.step_from(g);
        loss_sum += lv;
      }

      SslEpochRecord rec;
      rec.epoch = epoch;
      rec.member = m;
      rec.supervised_loss = loss_sum / static_cast<double>(steps);
      rec.val_accuracy = val.n() > 0 ? evaluate(model, val).accuracy : 0.0;
      report.records.push_back(rec);
      if (val.n() > 0 && rec.val_accuracy > best_val[m]) {  // strict improvement
        best_val[m] = rec.val_accuracy;
        report.predecessors[m] = model;
        ++report.predecessor_updates;
      }
    }
  }
  return report;
}

struct SslRunResult {
  std::vector<SslEpochRecord> phase1_records;
  std::vector<SslEpochRecord> phase2_records;
  PseudoLabelSet pseudo;
  double phase1_ensemble_accuracy = 0.0;  // test accuracy at the phase boundary
  double phase2_ensemble_accuracy = 0.0;
  std::size_t predecessor_updates = 0;
  std::size_t labeled_count = 0;
  std::size_t unlabeled_count = 0;
  bool pseudo_set_empty = false;
};

/// The full two-phase pipeline on fixed splits: carve a stratified labeled
/// subset out of the train split (the rest becomes unlabeled), train the
/// ensemble with consistency regularization, pseudo-label once at the phase
/// boundary, then continue on labeled + pseudo-labeled data.
inline SslRunResult run_ssl(const DatasetSplits& splits, const SslConfig& config,
                            const std::vector<std::size_t>& hidden_dims, std::size_t latent_dim) {
  config.validate();
  splits.train.validate();
  const std::size_t k = static_cast<std::size_t>(splits.train.num_classes);
  if (config.labeled_count < k)
    throw ContractError("run_ssl: labeled_count must cover every class at least once");
  if (config.labeled_count > splits.train.n())
    throw ContractError("run_ssl: labeled_count exceeds the train split");

  const double f = static_cast<double>(config.labeled_count) / static_cast<double>(splits.train.n());
  DatasetSplits carve = split_dataset(splits.train, {f, 1.0 - f, 0.0}, sub_seed(config.seed, "labeled"));
  const Dataset& labeled = carve.train;
  const Dataset& unlabeled = carve.val;

  std::vector<Model> members;
  for (std::size_t m = 0; m < config.ensemble_size; ++m)
    members.push_back(Model::build(splits.train.dim(), hidden_dims, latent_dim, k,
                                   sub_seed(config.seed, "member-" + std::to_string(m))));

  SslRunResult result;
  result.labeled_count = labeled.n();
  result.unlabeled_count = unlabeled.n();
  result.phase1_records =
      phase1_train(members, labeled, unlabeled.n() > 0 ? &unlabeled : nullptr, splits.val, config);
  if (splits.test.n() > 0) result.phase1_ensemble_accuracy = ensemble_accuracy(members, splits.test);

  if (unlabeled.n() > 0)
    result.pseudo = pseudo_label(members, unlabeled, config.confidence_threshold);
  Phase2Report p2 = phase2_train(members, labeled, unlabeled, result.pseudo, splits.val, config);
  result.phase2_records = std::move(p2.records);
  result.predecessor_updates = p2.predecessor_updates;
  result.pseudo_set_empty = p2.pseudo_set_empty;
  if (splits.test.n() > 0) result.phase2_ensemble_accuracy = ensemble_accuracy(members, splits.test);
  return result;
}

}  // namespace nda
