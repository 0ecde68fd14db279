#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "nda/dataset.hpp"
#include "nda/errors.hpp"
#include "nda/model.hpp"

namespace nda {

/// One scored model output: full probability row, its max (MCP confidence),
/// the argmax prediction, and ground truth when in-distribution.
struct ScoredPrediction {
  std::vector<double> probs;
  double confidence = 0.0;
  int predicted = -1;
  int label = -1;  // -1 marks an out-of-distribution sample
  bool in_distribution = true;

  bool correct() const { return in_distribution && predicted == label; }
};

namespace detail {
inline void check_scores(const std::vector<double>& scores_in, const std::vector<double>& scores_out,
                         const char* op) {
  if (scores_in.empty() || scores_out.empty())
    throw ContractError(std::string(op) + ": both score lists must be nonempty");
}

/// Distinct candidate thresholds, descending.
inline std::vector<double> distinct_descending(const std::vector<double>& a,
                                               const std::vector<double>& b) {
  std::vector<double> all = a;
  all.insert(all.end(), b.begin(), b.end());
  std::sort(all.begin(), all.end(), std::greater<double>());
  all.erase(std::unique(all.begin(), all.end()), all.end());
  return all;
}
}  // namespace detail

/// Mann-Whitney statistic P(in > out) + 0.5 P(in == out); in-distribution is
/// the positive class. Computed via average ranks, exact for ties.
inline double auroc(const std::vector<double>& scores_in, const std::vector<double>& scores_out) {
  detail::check_scores(scores_in, scores_out, "auroc");
  struct Entry {
    double score;
    bool positive;
  };
  std::vector<Entry> all;
  all.reserve(scores_in.size() + scores_out.size());
  for (double s : scores_in) all.push_back({s, true});
  for (double s : scores_out) all.push_back({s, false});
  std::sort(all.begin(), all.end(), [](const Entry& a, const Entry& b) { return a.score < b.score; });

  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < all.size()) {
    std::size_t j = i;
    while (j < all.size() && all[j].score == all[i].score) ++j;
    const double avg_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
    for (std::size_t t = i; t < j; ++t)
      if (all[t].positive) rank_sum_pos += avg_rank;
    i = j;
  }
  const double n_pos = static_cast<double>(scores_in.size());
  const double n_neg = static_cast<double>(scores_out.size());
  const double u = rank_sum_pos - n_pos * (n_pos + 1.0) / 2.0;
  return u / (n_pos * n_neg);
}

/// Area under the precision-recall curve (in-distribution positive),
/// step-wise over distinct thresholds. Samples tied at a threshold enter as
/// one group, so tied negatives count against the precision of their tied
/// positives (worst-case tie ordering).
inline double aupr(const std::vector<double>& scores_in, const std::vector<double>& scores_out) {
  detail::check_scores(scores_in, scores_out, "aupr");
  const auto thresholds = detail::distinct_descending(scores_in, scores_out);
  std::vector<double> si = scores_in, so = scores_out;
  std::sort(si.begin(), si.end(), std::greater<double>());
  std::sort(so.begin(), so.end(), std::greater<double>());

  double area = 0.0;
  double prev_recall = 0.0;
  std::size_t tp = 0, fp = 0;
  for (double t : thresholds) {
    while (tp < si.size() && si[tp] >= t) ++tp;
    while (fp < so.size() && so[fp] >= t) ++fp;
    if (tp == 0) continue;
    const double recall = static_cast<double>(tp) / static_cast<double>(si.size());
    const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    area += (recall - prev_recall) * precision;
    prev_recall = recall;
  }
  return area;
}

/// False-positive rate at the first threshold (sweeping downward) whose
/// true-positive rate reaches 0.95; the >= boundary counts.
inline double fpr_at_95_tpr(const std::vector<double>& scores_in,
                            const std::vector<double>& scores_out) {
  detail::check_scores(scores_in, scores_out, "fpr_at_95_tpr");
  const auto thresholds = detail::distinct_descending(scores_in, scores_out);
  std::vector<double> si = scores_in, so = scores_out;
  std::sort(si.begin(), si.end(), std::greater<double>());
  std::sort(so.begin(), so.end(), std::greater<double>());

  std::size_t tp = 0, fp = 0;
  for (double t : thresholds) {
    while (tp < si.size() && si[tp] >= t) ++tp;
    while (fp < so.size() && so[fp] >= t) ++fp;
    const double tpr = static_cast<double>(tp) / static_cast<double>(si.size());
    if (tpr >= 0.95) return static_cast<double>(fp) / static_cast<double>(so.size());
  }
  return 1.0;  // unreachable: the lowest threshold admits every positive
}

/// Expected calibration error over equal-width confidence bins; empty bins
/// contribute nothing.
inline double ece(const std::vector<ScoredPrediction>& predictions, int num_bins) {
  if (num_bins < 1) throw ContractError("ece: num_bins must be >= 1");
  if (predictions.empty()) throw ContractError("ece: predictions must be nonempty");
  std::vector<std::size_t> count(static_cast<std::size_t>(num_bins), 0);
  std::vector<double> conf_sum(static_cast<std::size_t>(num_bins), 0.0);
  std::vector<std::size_t> correct(static_cast<std::size_t>(num_bins), 0);
  for (const ScoredPrediction& p : predictions) {
    const int b = std::min(static_cast<int>(p.confidence * num_bins), num_bins - 1);
    const std::size_t bi = static_cast<std::size_t>(std::max(0, b));
    ++count[bi];
    conf_sum[bi] += p.confidence;
    if (p.correct()) ++correct[bi];
  }
  double e = 0.0;
  const double n = static_cast<double>(predictions.size());
  for (std::size_t b = 0; b < count.size(); ++b) {
    if (count[b] == 0) continue;
    const double acc = static_cast<double>(correct[b]) / static_cast<double>(count[b]);
    const double conf = conf_sum[b] / static_cast<double>(count[b]);
    e += (static_cast<double>(count[b]) / n) * std::fabs(acc - conf);
  }
  return e;
}

struct ReliabilityBin {
  int bin = 0;
  std::size_t count = 0;
  double accuracy = 0.0;
  double confidence = 0.0;
};

inline std::vector<ReliabilityBin> reliability_table(const std::vector<ScoredPrediction>& predictions,
                                                     int num_bins) {
  if (num_bins < 1) throw ContractError("reliability_table: num_bins must be >= 1");
  std::vector<ReliabilityBin> table(static_cast<std::size_t>(num_bins));
  for (int b = 0; b < num_bins; ++b) table[static_cast<std::size_t>(b)].bin = b;
  for (const ScoredPrediction& p : predictions) {
    const int b = std::min(static_cast<int>(p.confidence * num_bins), num_bins - 1);
    ReliabilityBin& rb = table[static_cast<std::size_t>(std::max(0, b))];
    ++rb.count;
    rb.accuracy += p.correct() ? 1.0 : 0.0;
    rb.confidence += p.confidence;
  }
  for (ReliabilityBin& rb : table) {
    if (rb.count == 0) continue;
    rb.accuracy /= static_cast<double>(rb.count);
    rb.confidence /= static_cast<double>(rb.count);
  }
  return table;
}

struct OodMetrics {
  double auroc = 0.0;
  double aupr = 0.0;
  double fpr_at_95_tpr = 0.0;
  double ece = 0.0;
};

/// Scores a dataset with a model; `in_distribution` controls whether labels
/// are kept for accuracy/calibration purposes.
inline std::vector<ScoredPrediction> score_dataset(const Model& model, const Dataset& data,
                                                   bool in_distribution,
                                                   std::size_t batch_size = 256) {
  data.validate();
  std::vector<ScoredPrediction> preds;
  preds.reserve(data.n());
  for (std::size_t start = 0; start < data.n(); start += batch_size) {
    const std::size_t stop = std::min(data.n(), start + batch_size);
    std::vector<std::size_t> idx(stop - start);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = start + i;
    Tensor probs = model.probs_eval(data.gather(idx));
    for (std::size_t i = 0; i < idx.size(); ++i) {
      ScoredPrediction sp;
      sp.probs.resize(probs.cols());
      for (std::size_t j = 0; j < probs.cols(); ++j) sp.probs[j] = probs.at(i, j);
      sp.predicted = 0;
      for (std::size_t j = 1; j < sp.probs.size(); ++j)
        if (sp.probs[j] > sp.probs[static_cast<std::size_t>(sp.predicted)])
          sp.predicted = static_cast<int>(j);
      sp.confidence = sp.probs[static_cast<std::size_t>(sp.predicted)];
      sp.in_distribution = in_distribution;
      sp.label = in_distribution ? data.labels[idx[i]] : -1;
      preds.push_back(std::move(sp));
    }
  }
  return preds;
}

inline std::vector<double> confidences(const std::vector<ScoredPrediction>& preds) {
  std::vector<double> c;
  c.reserve(preds.size());
  for (const auto& p : preds) c.push_back(p.confidence);
  return c;
}

/// MCP-based OOD evaluation of a trained model on an in-distribution split
/// versus an out-of-distribution split.
inline OodMetrics ood_report(const Model& model, const Dataset& in_split, const Dataset& out_split,
                             int num_bins = 15) {
  const auto in_preds = score_dataset(model, in_split, true);
  const auto out_preds = score_dataset(model, out_split, false);
  const auto in_scores = confidences(in_preds);
  const auto out_scores = confidences(out_preds);
  OodMetrics m;
  m.auroc = auroc(in_scores, out_scores);
  m.aupr = aupr(in_scores, out_scores);
  m.fpr_at_95_tpr = fpr_at_95_tpr(in_scores, out_scores);
  m.ece = ece(in_preds, num_bins);
  return m;
}

}  // namespace nda
