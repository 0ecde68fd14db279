#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "nda/dataset.hpp"
#include "nda/discriminant.hpp"
#include "nda/errors.hpp"
#include "nda/losses.hpp"
#include "nda/model.hpp"
#include "nda/ood.hpp"
#include "nda/optim.hpp"
#include "nda/rng.hpp"
#include "nda/tensor.hpp"
#include "nda/textio.hpp"

namespace nda {

struct TrainConfig {
  std::size_t epochs = 50;
  std::size_t batch_size = 32;  // pairs per step
  double learning_rate = 0.05;
  double momentum = 0.9;
  std::uint64_t seed = 1;
  NdaConfig nda;
  double validation_fraction = 0.2;
  bool mean_loss_enabled = true;
  bool siamese_enabled = true;
  bool alternate_losses = false;  // odd epochs mean-only, even epochs siamese-only
  std::size_t lr_decay_every = 0;  // epochs; 0 disables step decay
  double lr_decay_factor = 0.5;

  void validate() const {
    if (epochs < 1) throw ContractError("train config: epochs must be >= 1");
    if (batch_size < 2) throw ContractError("train config: batch_size must be >= 2");
    if (!(learning_rate > 0.0)) throw ContractError("train config: learning rate must be > 0");
    if (momentum < 0.0 || momentum >= 1.0) throw ContractError("train config: momentum in [0, 1)");
    if (validation_fraction < 0.0 || validation_fraction > 0.5)
      throw ContractError("train config: validation_fraction must be in [0, 0.5]");
    nda.validate();
  }
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double class_loss = 0.0;
  double mean_loss = 0.0;
  double siamese_loss = 0.0;
  double total_loss = 0.0;
  double val_accuracy = 0.0;
  double fisher = 0.0;
  double intra_class_distance = 0.0;
  double inter_centroid_distance = 0.0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_val_accuracy = 0.0;
  std::optional<double> test_accuracy;
  std::size_t mean_refresh_count = 0;
};

struct DatasetSplits {
  Dataset train, val, test;
};

struct EvalResult {
  double accuracy = 0.0;
  std::vector<ScoredPrediction> predictions;
};

/// Accuracy of argmax predictions (ties resolved to the lowest index) plus
/// the per-sample scored predictions.
inline EvalResult evaluate(const Model& model, const Dataset& split) {
  split.validate();
  EvalResult r;
  r.predictions = score_dataset(model, split, true);
  std::size_t hits = 0;
  for (const ScoredPrediction& p : r.predictions)
    if (p.correct()) ++hits;
  r.accuracy = static_cast<double>(hits) / static_cast<double>(r.predictions.size());
  return r;
}

/// Stratified, seeded, disjoint (train, val, test) split covering the input.
inline DatasetSplits split_dataset(const Dataset& data, std::array<double, 3> fractions,
                                   std::uint64_t seed) {
  data.validate();
  double sum = 0.0;
  for (double f : fractions) {
    if (f < 0.0) throw ContractError("split_dataset: negative fraction");
    sum += f;
  }
  if (std::fabs(sum - 1.0) > 1e-9) throw ContractError("split_dataset: fractions must sum to 1");

  const std::size_t k = static_cast<std::size_t>(data.num_classes);
  std::vector<std::vector<std::size_t>> by_class(k);
  for (std::size_t i = 0; i < data.n(); ++i)
    by_class[static_cast<std::size_t>(data.labels[i])].push_back(i);

  Rng rng(sub_seed(seed, "split"));
  std::array<std::vector<std::size_t>, 3> parts;
  for (std::size_t c = 0; c < k; ++c) {
    auto& idx = by_class[c];
    if (idx.empty()) continue;
    std::shuffle(idx.begin(), idx.end(), rng);
    const std::size_t n = idx.size();
    std::array<std::size_t, 3> counts{};
    std::array<double, 3> remainders{};
    std::size_t assigned = 0;
    for (std::size_t s = 0; s < 3; ++s) {
      const double exact = fractions[s] * static_cast<double>(n);
      counts[s] = static_cast<std::size_t>(exact);
      remainders[s] = exact - static_cast<double>(counts[s]);
      assigned += counts[s];
    }
    while (assigned < n) {  // hand leftovers to the largest remainders
      std::size_t best = 0;
      for (std::size_t s = 1; s < 3; ++s)
        if (remainders[s] > remainders[best]) best = s;
      ++counts[best];
      remainders[best] = -1.0;
      ++assigned;
    }
    for (std::size_t s = 0; s < 3; ++s)
      if (fractions[s] > 0.0 && counts[s] == 0)
        throw ContractError("split_dataset: class " + std::to_string(c) +
                            " too small to stratify into split " + std::to_string(s));
    std::size_t cursor = 0;
    for (std::size_t s = 0; s < 3; ++s)
      for (std::size_t i = 0; i < counts[s]; ++i) parts[s].push_back(idx[cursor++]);
  }
  for (auto& p : parts) std::sort(p.begin(), p.end());  // stable downstream order
  return {data.subset(parts[0]), data.subset(parts[1]), data.subset(parts[2])};
}

namespace detail {
struct LatentDiagnostics {
  double fisher = 0.0;
  double intra = 0.0;
  double inter = 0.0;
};

inline LatentDiagnostics latent_diagnostics(const Model& model, const Dataset& data) {
  Tensor latents({data.n(), model.latent_dim()});
  const std::size_t batch = 256;
  for (std::size_t start = 0; start < data.n(); start += batch) {
    const std::size_t stop = std::min(data.n(), start + batch);
    std::vector<std::size_t> idx(stop - start);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = start + i;
    Tensor part = model.latent_eval(data.gather(idx));
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < part.cols(); ++j) latents.at(start + i, j) = part.at(i, j);
  }
  ScatterStats st = scatter_matrices(latents, data.labels);
  return {st.fisher, mean_intra_class_distance(latents, data.labels, st),
          mean_inter_centroid_distance(st)};
}
}  // namespace detail

/// The NDA training loop: refresh class means at every epoch start, sample
/// paired batches, run the shared-weight Siamese forward, combine the five
/// losses, and step. Model selection is by best validation accuracy; the
/// model is left at the selected weights.
inline TrainReport train(Model& model, const DatasetSplits& splits, const TrainConfig& config) {
  config.validate();
  splits.train.validate();
  {
    std::vector<bool> seen(static_cast<std::size_t>(splits.train.num_classes), false);
    for (int y : splits.train.labels) seen[static_cast<std::size_t>(y)] = true;
    for (std::size_t c = 0; c < seen.size(); ++c)
      if (!seen[c])
        throw ContractError("train: class " + std::to_string(c) + " missing from train split");
  }

  Rng pair_rng(sub_seed(config.seed, "pairing"));
  SgdOptimizer opt(model.parameters(), config.learning_rate, config.momentum);
  const std::size_t steps = std::max<std::size_t>(1, splits.train.n() / config.batch_size);

  TrainReport report;
  std::vector<Tensor> best_params;
  double best_acc = -1.0;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    ClassMeans means = compute_class_means(model, splits.train, 2 * config.batch_size,
                                           static_cast<long>(epoch));
    ++report.mean_refresh_count;

    bool mean_on = config.mean_loss_enabled;
    bool siamese_on = config.siamese_enabled;
    if (config.alternate_losses) {
      if (epoch % 2 == 1)
        siamese_on = false;
      else
        mean_on = false;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    for (std::size_t step = 0; step < steps; ++step) {
      PairBatch pb = sample_pairs(splits.train, config.batch_size, config.nda.pair_fraction, pair_rng);
      Graph g;
      auto [fa, fb] = model.forward_siamese(g, pb.a, pb.b);
      NodeId ca = classification_loss(g, fa.probs, pb.labels_a);
      NodeId cb = classification_loss(g, fb.probs, pb.labels_b);
      NodeId zero = g.constant(Tensor::scalar(0.0));
      NodeId ma = zero, mb = zero, sm = zero;
      if (mean_on) {
        if (config.nda.mean_variant == MeanVariant::L2) {
          ma = mean_loss_l2(g, fa.latent, pb.labels_a, means);
          mb = mean_loss_l2(g, fb.latent, pb.labels_b, means);
        } else {
          ma = mean_loss_prototypical(g, fa.latent, pb.labels_a, means);
          mb = mean_loss_prototypical(g, fb.latent, pb.labels_b, means);
        }
      }
      if (siamese_on) sm = siamese_loss(g, fa.latent, fb.latent, pb.diff_flags, config.nda);
      NodeId total = nda_total_loss(g, ca, cb, ma, mb, sm, config.nda);

      const double total_value = g.value(total).item();
      if (!std::isfinite(total_value))
        throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch) + " step " +
                           std::to_string(step) + " (class " + fmt_double(g.value(ca).item()) +
                           "/" + fmt_double(g.value(cb).item()) + ", mean " +
                           fmt_double(g.value(ma).item()) + "/" + fmt_double(g.value(mb).item()) +
                           ", siamese " + fmt_double(g.value(sm).item()) + ")");
      g.backward(total);
      opt.step_from(g);

      rec.class_loss += g.value(ca).item() + g.value(cb).item();
      rec.mean_loss += g.value(ma).item() + g.value(mb).item();
      rec.siamese_loss += g.value(sm).item();
      rec.total_loss += total_value;
    }
    const double inv_steps = 1.0 / static_cast<double>(steps);
    rec.class_loss *= inv_steps;
    rec.mean_loss *= inv_steps;
    rec.siamese_loss *= inv_steps;
    rec.total_loss *= inv_steps;

    if (splits.val.n() > 0) rec.val_accuracy = evaluate(model, splits.val).accuracy;
    const auto diag = detail::latent_diagnostics(model, splits.train);
    rec.fisher = diag.fisher;
    rec.intra_class_distance = diag.intra;
    rec.inter_centroid_distance = diag.inter;
    report.epochs.push_back(rec);

    const double selection_acc = splits.val.n() > 0 ? rec.val_accuracy : 0.0;
    if (selection_acc > best_acc || report.best_epoch == 0) {
      best_acc = selection_acc;
      report.best_epoch = epoch;
      best_params.clear();
      for (const Tensor* p : std::as_const(model).parameters()) best_params.push_back(*p);
    }

    if (config.lr_decay_every > 0 && epoch % config.lr_decay_every == 0)
      opt.set_learning_rate(opt.learning_rate() * config.lr_decay_factor);
  }

  if (splits.val.n() > 0) {
    auto params = model.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) params[i]->data = best_params[i].data;
    report.best_val_accuracy = best_acc;
  } else {
    report.best_epoch = config.epochs;  // no validation: keep the final weights
    report.best_val_accuracy = 0.0;
  }
  if (splits.test.n() > 0) report.test_accuracy = evaluate(model, splits.test).accuracy;
  return report;
}

}  // namespace nda
