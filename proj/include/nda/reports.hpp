#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "nda/dataset.hpp"
#include "nda/discriminant.hpp"
#include "nda/losses.hpp"
#include "nda/model.hpp"
#include "nda/ood.hpp"
#include "nda/ssl.hpp"
#include "nda/textio.hpp"
#include "nda/train.hpp"

namespace nda {

/// Writers for the fixed run-directory layout: config.snapshot, report.txt,
/// epochs.csv, means.csv (plus pipeline-specific CSVs). Every file is
/// rendered deterministically so identical runs are byte-identical.

inline void write_config_snapshot(const std::filesystem::path& dir, const std::string& snapshot) {
  atomic_write_file(dir / "config.snapshot", "# resolved configuration, format 1\n" + snapshot);
}

inline std::string epochs_csv(const TrainReport& report) {
  std::string out =
      "epoch,class_loss,mean_loss,siamese_loss,total_loss,val_accuracy,fisher,"
      "intra_class_distance,inter_centroid_distance\n";
  for (const EpochRecord& r : report.epochs) {
    out += std::to_string(r.epoch) + "," + fmt_double(r.class_loss) + "," + fmt_double(r.mean_loss) +
           "," + fmt_double(r.siamese_loss) + "," + fmt_double(r.total_loss) + "," +
           fmt_double(r.val_accuracy) + "," + fmt_double(r.fisher) + "," +
           fmt_double(r.intra_class_distance) + "," + fmt_double(r.inter_centroid_distance) + "\n";
  }
  return out;
}

inline std::string means_csv(const ClassMeans& means) {
  std::string out = "class,count";
  for (std::size_t j = 0; j < means.dim(); ++j) out += ",m" + std::to_string(j);
  out += "\n";
  for (std::size_t c = 0; c < means.num_classes(); ++c) {
    out += std::to_string(c) + "," + std::to_string(means.counts[c]);
    for (std::size_t j = 0; j < means.dim(); ++j) out += "," + fmt_double(means.means.at(c, j));
    out += "\n";
  }
  return out;
}

inline void write_train_run(const std::filesystem::path& dir, const std::string& config_snapshot,
                            const TrainReport& report, const Model& model,
                            const ClassMeans& final_means) {
  std::filesystem::create_directories(dir);
  write_config_snapshot(dir, config_snapshot);

  std::string txt = "nda-train-report 1\n";
  txt += "epochs_completed = " + std::to_string(report.epochs.size()) + "\n";
  txt += "best_epoch = " + std::to_string(report.best_epoch) + "\n";
  txt += "best_val_accuracy = " + fmt_double(report.best_val_accuracy) + "\n";
  if (report.test_accuracy)
    txt += "test_accuracy = " + fmt_double(*report.test_accuracy) + "\n";
  txt += "mean_refresh_count = " + std::to_string(report.mean_refresh_count) + "\n";
  if (!report.epochs.empty()) {
    const EpochRecord& last = report.epochs.back();
    txt += "final_fisher = " + fmt_double(last.fisher) + "\n";
    txt += "final_intra_class_distance = " + fmt_double(last.intra_class_distance) + "\n";
    txt += "final_inter_centroid_distance = " + fmt_double(last.inter_centroid_distance) + "\n";
    txt += "final_total_loss = " + fmt_double(last.total_loss) + "\n";
  }
  atomic_write_file(dir / "report.txt", txt);
  atomic_write_file(dir / "epochs.csv", epochs_csv(report));
  atomic_write_file(dir / "means.csv", means_csv(final_means));
  model.save(dir / "model.ckpt");
}

inline std::string ssl_epochs_csv(const std::vector<SslEpochRecord>& records) {
  std::string out = "epoch,member,supervised_loss,consistency_loss,val_accuracy\n";
  for (const SslEpochRecord& r : records) {
    out += std::to_string(r.epoch) + "," + std::to_string(r.member) + "," +
           fmt_double(r.supervised_loss) + "," + fmt_double(r.consistency_loss) + "," +
           fmt_double(r.val_accuracy) + "\n";
  }
  return out;
}

inline std::string pseudo_labels_csv(const PseudoLabelSet& pseudo) {
  std::string out = "sample_id,assigned_label,confidence\n";
  for (std::size_t i = 0; i < pseudo.size(); ++i) {
    out += std::to_string(pseudo.ids[i]) + "," + std::to_string(pseudo.labels[i]) + "," +
           fmt_double(pseudo.confidences[i]) + "\n";
  }
  return out;
}

struct SslRunSummary {
  std::size_t labeled_count = 0;
  std::size_t unlabeled_count = 0;
  std::size_t pseudo_count = 0;
  double phase1_ensemble_accuracy = 0.0;
  double phase2_ensemble_accuracy = 0.0;
  std::size_t predecessor_updates = 0;
};

inline void write_ssl_run(const std::filesystem::path& dir, const std::string& config_snapshot,
                          const SslRunSummary& summary, const std::vector<SslEpochRecord>& phase1,
                          const std::vector<SslEpochRecord>& phase2, const PseudoLabelSet& pseudo) {
  std::filesystem::create_directories(dir);
  write_config_snapshot(dir, config_snapshot);

  std::string txt = "nda-ssl-report 1\n";
  txt += "labeled_count = " + std::to_string(summary.labeled_count) + "\n";
  txt += "unlabeled_count = " + std::to_string(summary.unlabeled_count) + "\n";
  txt += "pseudo_label_count = " + std::to_string(summary.pseudo_count) + "\n";
  txt += "phase1_ensemble_accuracy = " + fmt_double(summary.phase1_ensemble_accuracy) + "\n";
  txt += "phase2_ensemble_accuracy = " + fmt_double(summary.phase2_ensemble_accuracy) + "\n";
  txt += "predecessor_updates = " + std::to_string(summary.predecessor_updates) + "\n";
  atomic_write_file(dir / "report.txt", txt);
  atomic_write_file(dir / "phase1_epochs.csv", ssl_epochs_csv(phase1));
  atomic_write_file(dir / "phase2_epochs.csv", ssl_epochs_csv(phase2));
  atomic_write_file(dir / "pseudo_labels.csv", pseudo_labels_csv(pseudo));
}

inline void write_ood_run(const std::filesystem::path& dir, const std::string& config_snapshot,
                          const OodMetrics& metrics, const std::vector<ReliabilityBin>& table) {
  std::filesystem::create_directories(dir);
  write_config_snapshot(dir, config_snapshot);

  std::string txt = "nda-ood-report 1\n";
  txt += "auroc = " + fmt_double(metrics.auroc) + "\n";
  txt += "aupr = " + fmt_double(metrics.aupr) + "\n";
  txt += "fpr_at_95_tpr = " + fmt_double(metrics.fpr_at_95_tpr) + "\n";
  txt += "ece = " + fmt_double(metrics.ece) + "\n";
  atomic_write_file(dir / "report.txt", txt);

  std::string csv = "bin,count,accuracy,confidence\n";
  for (const ReliabilityBin& b : table) {
    csv += std::to_string(b.bin) + "," + std::to_string(b.count) + "," + fmt_double(b.accuracy) +
           "," + fmt_double(b.confidence) + "\n";
  }
  atomic_write_file(dir / "reliability.csv", csv);
}

inline void write_diagnose_run(const std::filesystem::path& dir, const std::string& config_snapshot,
                               const ScatterStats& stats) {
  std::filesystem::create_directories(dir);
  write_config_snapshot(dir, config_snapshot);

  std::string txt = "nda-diagnose-report 1\n";
  txt += "dim = " + std::to_string(stats.dim()) + "\n";
  txt += "classes = " + std::to_string(stats.num_classes()) + "\n";
  txt += "fisher_score = " + fmt_double(stats.fisher) + "\n";
  txt += "single_class = " + std::string(stats.single_class ? "true" : "false") + "\n";
  double tw = 0.0, tb = 0.0;
  for (std::size_t i = 0; i < stats.dim(); ++i) {
    tw += stats.s_within.at(i, i);
    tb += stats.s_between.at(i, i);
  }
  txt += "trace_s_within = " + fmt_double(tw) + "\n";
  txt += "trace_s_between = " + fmt_double(tb) + "\n";
  atomic_write_file(dir / "report.txt", txt);

  std::string csv = "matrix,row";
  for (std::size_t j = 0; j < stats.dim(); ++j) csv += ",c" + std::to_string(j);
  csv += "\n";
  for (const char* which : {"s_within", "s_between"}) {
    const Tensor& m = std::string(which) == "s_within" ? stats.s_within : stats.s_between;
    for (std::size_t r = 0; r < stats.dim(); ++r) {
      csv += std::string(which) + "," + std::to_string(r);
      for (std::size_t c = 0; c < stats.dim(); ++c) csv += "," + fmt_double(m.at(r, c));
      csv += "\n";
    }
  }
  atomic_write_file(dir / "scatter.csv", csv);
}

}  // namespace nda
