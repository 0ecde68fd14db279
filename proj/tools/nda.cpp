// Command-line surface for the NDA laboratory: synthetic data generation,
// NDA training, the two-phase SSL pipeline, OOD evaluation, and latent-space
// diagnostics. Every run writes a config snapshot plus deterministic report
// files into its run directory.

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "nda/nda.hpp"

namespace fs = std::filesystem;
using namespace nda;

namespace {

struct RunSettings {
  std::uint64_t seed = 1;

  // data
  std::string data_source = "blobs";  // blobs | file
  std::string data_features;          // when source = file
  int data_classes = 4;
  std::size_t data_dim = 8;
  std::size_t data_per_class = 125;
  double data_spread = 2.0;
  double data_sigma = 1.0;
  double train_fraction = 0.64;
  double val_fraction = 0.16;
  double test_fraction = 0.20;

  // model
  std::vector<std::size_t> hidden = {16};
  std::size_t latent = 8;

  // train
  std::size_t epochs = 50;
  std::size_t batch = 32;
  double lr = 0.05;
  double momentum = 0.9;
  std::size_t lr_decay_every = 0;
  double lr_decay_factor = 0.5;

  // losses
  NdaConfig nda;
  bool mean_enabled = true;
  bool siamese_enabled = true;
  bool alternate = false;

  // ssl
  double labeled_fraction = 0.1;
  std::size_t ensemble = 3;
  double threshold = 0.95;
  std::size_t phase1_epochs = 30;
  std::size_t phase2_epochs = 30;
  double noise = 0.1;
  double mask_fraction = 0.25;
  bool nda_phase2 = false;

  // ood
  double shift_sigmas = 10.0;
  int bins = 15;

  static RunSettings from_config(const Config& c) {
    RunSettings s;
    s.seed = static_cast<std::uint64_t>(c.get_int("seed", 1));
    s.data_source = c.get_string("data.source", s.data_source);
    s.data_features = c.get_string("data.features", s.data_features);
    s.data_classes = static_cast<int>(c.get_int("data.classes", s.data_classes));
    s.data_dim = static_cast<std::size_t>(c.get_int("data.dim", static_cast<long long>(s.data_dim)));
    s.data_per_class =
        static_cast<std::size_t>(c.get_int("data.per_class", static_cast<long long>(s.data_per_class)));
    s.data_spread = c.get_double("data.spread", s.data_spread);
    s.data_sigma = c.get_double("data.sigma", s.data_sigma);
    s.train_fraction = c.get_double("data.train_fraction", s.train_fraction);
    s.val_fraction = c.get_double("data.val_fraction", s.val_fraction);
    s.test_fraction = c.get_double("data.test_fraction", s.test_fraction);
    s.hidden = c.get_size_list("model.hidden", s.hidden);
    s.latent = static_cast<std::size_t>(c.get_int("model.latent", static_cast<long long>(s.latent)));
    s.epochs = static_cast<std::size_t>(c.get_int("train.epochs", static_cast<long long>(s.epochs)));
    s.batch = static_cast<std::size_t>(c.get_int("train.batch", static_cast<long long>(s.batch)));
    s.lr = c.get_double("train.lr", s.lr);
    s.momentum = c.get_double("train.momentum", s.momentum);
    s.lr_decay_every = static_cast<std::size_t>(
        c.get_int("train.lr_decay_every", static_cast<long long>(s.lr_decay_every)));
    s.lr_decay_factor = c.get_double("train.lr_decay_factor", s.lr_decay_factor);
    s.nda.alpha = c.get_double("loss.alpha", s.nda.alpha);
    s.nda.beta = c.get_double("loss.beta", s.nda.beta);
    s.nda.gamma = c.get_double("loss.gamma", s.nda.gamma);
    const std::string mv = c.get_string("loss.mean_variant", "l2");
    if (mv == "l2")
      s.nda.mean_variant = MeanVariant::L2;
    else if (mv == "prototypical")
      s.nda.mean_variant = MeanVariant::Prototypical;
    else
      throw ParseError("loss.mean_variant must be l2 or prototypical, got '" + mv + "'");
    const std::string sv = c.get_string("loss.siamese_variant", "margin");
    if (sv == "margin")
      s.nda.siamese_variant = SiameseVariant::Margin;
    else if (sv == "literal")
      s.nda.siamese_variant = SiameseVariant::Literal;
    else
      throw ParseError("loss.siamese_variant must be margin or literal, got '" + sv + "'");
    s.nda.margin = c.get_double("loss.margin", s.nda.margin);
    s.nda.pair_fraction = c.get_double("loss.pair_fraction", s.nda.pair_fraction);
    s.mean_enabled = c.get_bool("loss.mean_enabled", s.mean_enabled);
    s.siamese_enabled = c.get_bool("loss.siamese_enabled", s.siamese_enabled);
    s.alternate = c.get_bool("loss.alternate", s.alternate);
    s.labeled_fraction = c.get_double("ssl.labeled_fraction", s.labeled_fraction);
    s.ensemble = static_cast<std::size_t>(c.get_int("ssl.ensemble", static_cast<long long>(s.ensemble)));
    s.threshold = c.get_double("ssl.threshold", s.threshold);
    s.phase1_epochs =
        static_cast<std::size_t>(c.get_int("ssl.phase1_epochs", static_cast<long long>(s.phase1_epochs)));
    s.phase2_epochs =
        static_cast<std::size_t>(c.get_int("ssl.phase2_epochs", static_cast<long long>(s.phase2_epochs)));
    s.noise = c.get_double("ssl.noise", s.noise);
    s.mask_fraction = c.get_double("ssl.mask_fraction", s.mask_fraction);
    s.nda_phase2 = c.get_bool("ssl.nda_phase2", s.nda_phase2);
    s.shift_sigmas = c.get_double("ood.shift_sigmas", s.shift_sigmas);
    s.bins = static_cast<int>(c.get_int("ood.bins", s.bins));
    return s;
  }

  /// Full resolved configuration, defaults included, for the run snapshot.
  std::string snapshot() const {
    Config c;
    c.set("seed", std::to_string(seed));
    c.set("data.source", data_source);
    if (!data_features.empty()) c.set("data.features", data_features);
    c.set("data.classes", std::to_string(data_classes));
    c.set("data.dim", std::to_string(data_dim));
    c.set("data.per_class", std::to_string(data_per_class));
    c.set("data.spread", fmt_double(data_spread));
    c.set("data.sigma", fmt_double(data_sigma));
    c.set("data.train_fraction", fmt_double(train_fraction));
    c.set("data.val_fraction", fmt_double(val_fraction));
    c.set("data.test_fraction", fmt_double(test_fraction));
    std::string h;
    for (std::size_t v : hidden) h += (h.empty() ? "" : ",") + std::to_string(v);
    c.set("model.hidden", h.empty() ? "none" : h);
    c.set("model.latent", std::to_string(latent));
    c.set("train.epochs", std::to_string(epochs));
    c.set("train.batch", std::to_string(batch));
    c.set("train.lr", fmt_double(lr));
    c.set("train.momentum", fmt_double(momentum));
    c.set("train.lr_decay_every", std::to_string(lr_decay_every));
    c.set("train.lr_decay_factor", fmt_double(lr_decay_factor));
    c.set("loss.alpha", fmt_double(nda.alpha));
    c.set("loss.beta", fmt_double(nda.beta));
    c.set("loss.gamma", fmt_double(nda.gamma));
    c.set("loss.mean_variant", nda.mean_variant == MeanVariant::L2 ? "l2" : "prototypical");
    c.set("loss.siamese_variant",
          nda.siamese_variant == SiameseVariant::Margin ? "margin" : "literal");
    c.set("loss.margin", fmt_double(nda.margin));
    c.set("loss.pair_fraction", fmt_double(nda.pair_fraction));
    c.set("loss.mean_enabled", mean_enabled ? "true" : "false");
    c.set("loss.siamese_enabled", siamese_enabled ? "true" : "false");
    c.set("loss.alternate", alternate ? "true" : "false");
    c.set("ssl.labeled_fraction", fmt_double(labeled_fraction));
    c.set("ssl.ensemble", std::to_string(ensemble));
    c.set("ssl.threshold", fmt_double(threshold));
    c.set("ssl.phase1_epochs", std::to_string(phase1_epochs));
    c.set("ssl.phase2_epochs", std::to_string(phase2_epochs));
    c.set("ssl.noise", fmt_double(noise));
    c.set("ssl.mask_fraction", fmt_double(mask_fraction));
    c.set("ssl.nda_phase2", nda_phase2 ? "true" : "false");
    c.set("ood.shift_sigmas", fmt_double(shift_sigmas));
    c.set("ood.bins", std::to_string(bins));
    return c.snapshot();
  }

  BlobSpec blob_spec() const {
    BlobSpec spec;
    spec.num_classes = data_classes;
    spec.dim = data_dim;
    spec.per_class = data_per_class;
    spec.spread = data_spread;
    spec.sigma = data_sigma;
    spec.seed = sub_seed(seed, "data");
    return spec;
  }

  Dataset load_dataset() const {
    if (data_source == "blobs") return gen_blobs(blob_spec());
    if (data_source == "file") {
      if (data_features.empty()) throw ParseError("data.source = file requires data.features");
      return load_features(data_features);
    }
    throw ParseError("data.source must be blobs or file, got '" + data_source + "'");
  }

  DatasetSplits make_splits() const {
    return split_dataset(load_dataset(), {train_fraction, val_fraction, test_fraction},
                         sub_seed(seed, "split"));
  }

  TrainConfig train_config() const {
    TrainConfig cfg;
    cfg.epochs = epochs;
    cfg.batch_size = batch;
    cfg.learning_rate = lr;
    cfg.momentum = momentum;
    cfg.seed = seed;
    cfg.nda = nda;
    cfg.validation_fraction = val_fraction;
    cfg.mean_loss_enabled = mean_enabled;
    cfg.siamese_enabled = siamese_enabled;
    cfg.alternate_losses = alternate;
    cfg.lr_decay_every = lr_decay_every;
    cfg.lr_decay_factor = lr_decay_factor;
    return cfg;
  }

  SslConfig ssl_config(std::size_t train_n) const {
    SslConfig cfg;
    cfg.labeled_count =
        static_cast<std::size_t>(std::llround(labeled_fraction * static_cast<double>(train_n)));
    cfg.ensemble_size = ensemble;
    cfg.confidence_threshold = threshold;
    cfg.phase1_epochs = phase1_epochs;
    cfg.phase2_epochs = phase2_epochs;
    cfg.perturb = {noise, mask_fraction};
    cfg.nda_in_phase2 = nda_phase2;
    cfg.nda = nda;
    cfg.batch_size = batch;
    cfg.learning_rate = lr;
    cfg.momentum = momentum;
    cfg.seed = seed;
    return cfg;
  }
};

struct CommonArgs {
  std::string config_path;
  std::string out_dir;
  std::string run_root;
  std::vector<std::string> overrides;
  std::int64_t seed_override = -1;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config_path, "configuration file (key = value lines)");
    cmd->add_option("--out", out_dir, "run directory (overrides --run-root)");
    cmd->add_option("--run-root", run_root, "root for run directories (env NDA_RUN_ROOT)");
    cmd->add_option("--set", overrides, "override a config key, e.g. --set train.epochs=20");
    cmd->add_option("--seed", seed_override, "override the run seed");
  }

  RunSettings settings() const {
    Config c = config_path.empty() ? Config{} : Config::parse_file(config_path);
    for (const std::string& o : overrides) c.set_pair(o);
    if (seed_override >= 0) c.set("seed", std::to_string(seed_override));
    return RunSettings::from_config(c);
  }

  fs::path run_dir(const std::string& subcommand) const {
    if (!out_dir.empty()) return out_dir;
    std::string root = run_root;
    if (root.empty())
      if (const char* env = std::getenv("NDA_RUN_ROOT")) root = env;
    if (root.empty()) root = "runs";
    return fs::path(root) / subcommand;
  }
};

int cmd_gen_data(const CommonArgs& args) {
  RunSettings s = args.settings();
  const fs::path dir = args.run_dir("gen-data");
  fs::create_directories(dir);
  write_config_snapshot(dir, s.snapshot());
  Dataset d = gen_blobs(s.blob_spec());
  save_features(d, dir / "features.csv");
  std::printf("gen-data: wrote %zu samples (%d classes, dim %zu) to %s\n", d.n(), d.num_classes,
              d.dim(), (dir / "features.csv").c_str());
  if (s.shift_sigmas > 0.0) {
    Dataset ood = gen_ood_set(s.blob_spec(), s.shift_sigmas * s.data_sigma);
    save_features(ood, dir / "ood.csv");
    std::printf("gen-data: wrote OOD set (shift %s) to %s\n",
                fmt_double(s.shift_sigmas * s.data_sigma).c_str(), (dir / "ood.csv").c_str());
  }
  return 0;
}

int cmd_train(const CommonArgs& args) {
  RunSettings s = args.settings();
  const fs::path dir = args.run_dir("train");
  DatasetSplits splits = s.make_splits();
  Model model = Model::build(splits.train.dim(), s.hidden, s.latent,
                             static_cast<std::size_t>(splits.train.num_classes), s.seed);
  TrainReport report = train(model, splits, s.train_config());
  ClassMeans final_means = compute_class_means(model, splits.train, 2 * s.batch,
                                               static_cast<long>(report.epochs.size()));
  write_train_run(dir, s.snapshot(), report, model, final_means);
  std::printf("train: best epoch %zu, val accuracy %s", report.best_epoch,
              fmt_double(report.best_val_accuracy).c_str());
  if (report.test_accuracy)
    std::printf(", test accuracy %s", fmt_double(*report.test_accuracy).c_str());
  std::printf(" -> %s\n", dir.c_str());
  return 0;
}

int cmd_train_ssl(const CommonArgs& args) {
  RunSettings s = args.settings();
  const fs::path dir = args.run_dir("train-ssl");
  DatasetSplits splits = s.make_splits();
  SslRunResult result = run_ssl(splits, s.ssl_config(splits.train.n()), s.hidden, s.latent);

  SslRunSummary summary;
  summary.labeled_count = result.labeled_count;
  summary.unlabeled_count = result.unlabeled_count;
  summary.pseudo_count = result.pseudo.size();
  summary.phase1_ensemble_accuracy = result.phase1_ensemble_accuracy;
  summary.phase2_ensemble_accuracy = result.phase2_ensemble_accuracy;
  summary.predecessor_updates = result.predecessor_updates;
  write_ssl_run(dir, s.snapshot(), summary, result.phase1_records, result.phase2_records,
                result.pseudo);
  std::printf("train-ssl: phase1 ensemble %s, phase2 ensemble %s, %zu pseudo labels -> %s\n",
              fmt_double(result.phase1_ensemble_accuracy).c_str(),
              fmt_double(result.phase2_ensemble_accuracy).c_str(), result.pseudo.size(),
              dir.c_str());
  return 0;
}

/// Score file formats: in-distribution `confidence,correct`, OOD `confidence`.
std::vector<ScoredPrediction> load_scores(const fs::path& path, bool needs_correct) {
  const std::string text = read_file(path);
  auto lines = split(text, '\n');
  while (!lines.empty() && trim(lines.back()).empty()) lines.pop_back();
  if (lines.size() < 2) throw ParseError(path.string() + ": no score rows");
  const auto header = split(trim(lines[0]), ',');
  const bool has_correct = header.size() == 2 && trim(header[1]) == "correct";
  if (trim(header[0]) != "confidence" || (header.size() != 1 && !has_correct))
    throw ParseError(path.string() + ": header must be 'confidence' or 'confidence,correct'");
  if (needs_correct && !has_correct)
    throw ParseError(path.string() + ": calibration needs the 'correct' column");
  std::vector<ScoredPrediction> preds;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const std::string where = path.string() + ": line " + std::to_string(i + 1);
    auto cells = split(trim(lines[i]), ',');
    if (cells.size() != header.size())
      throw ParseError(where + ": expected " + std::to_string(header.size()) + " cells");
    ScoredPrediction p;
    p.confidence = parse_double(trim(cells[0]), where);
    p.predicted = 0;
    if (has_correct) {
      const long long ok = parse_int(trim(cells[1]), where);
      if (ok != 0 && ok != 1) throw ParseError(where + ": correct must be 0 or 1");
      p.label = ok == 1 ? 0 : 1;
      p.in_distribution = true;
    } else {
      p.in_distribution = false;
      p.label = -1;
    }
    preds.push_back(p);
  }
  return preds;
}

int cmd_eval_ood(const CommonArgs& args, const std::string& scores_in,
                 const std::string& scores_out, const std::string& model_path,
                 const std::string& in_data, const std::string& out_data) {
  RunSettings s = args.settings();
  const fs::path dir = args.run_dir("eval-ood");

  OodMetrics metrics;
  std::vector<ScoredPrediction> in_preds;
  if (!scores_in.empty() || !scores_out.empty()) {
    if (scores_in.empty() || scores_out.empty())
      throw ParseError("eval-ood: --scores-in and --scores-out go together");
    in_preds = load_scores(scores_in, true);
    const auto out_preds = load_scores(scores_out, false);
    metrics.auroc = auroc(confidences(in_preds), confidences(out_preds));
    metrics.aupr = aupr(confidences(in_preds), confidences(out_preds));
    metrics.fpr_at_95_tpr = fpr_at_95_tpr(confidences(in_preds), confidences(out_preds));
    metrics.ece = ece(in_preds, s.bins);
  } else {
    if (model_path.empty() || in_data.empty() || out_data.empty())
      throw ParseError("eval-ood: provide --scores-in/--scores-out or --model with --in-data/--out-data");
    Model model = Model::load(model_path);
    Dataset in_split = load_features(in_data);
    Dataset out_split = load_features(out_data);
    metrics = ood_report(model, in_split, out_split, s.bins);
    in_preds = score_dataset(model, in_split, true);
  }
  write_ood_run(dir, s.snapshot(), metrics, reliability_table(in_preds, s.bins));
  std::printf("eval-ood: auroc %s, aupr %s, fpr@95tpr %s, ece %s -> %s\n",
              fmt_double(metrics.auroc).c_str(), fmt_double(metrics.aupr).c_str(),
              fmt_double(metrics.fpr_at_95_tpr).c_str(), fmt_double(metrics.ece).c_str(),
              dir.c_str());
  return 0;
}

int cmd_diagnose(const CommonArgs& args, const std::string& features_path,
                 const std::string& model_path) {
  RunSettings s = args.settings();
  const fs::path dir = args.run_dir("diagnose");
  if (features_path.empty()) throw ParseError("diagnose: --features is required");
  Dataset d = load_features(features_path);

  Tensor latents = d.features;
  if (!model_path.empty()) {
    Model model = Model::load(model_path);
    latents = Tensor({d.n(), model.latent_dim()});
    for (std::size_t start = 0; start < d.n(); start += 256) {
      const std::size_t stop = std::min(d.n(), start + 256);
      std::vector<std::size_t> idx(stop - start);
      for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = start + i;
      Tensor part = model.latent_eval(d.gather(idx));
      for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::size_t j = 0; j < part.cols(); ++j) latents.at(start + i, j) = part.at(i, j);
    }
  }
  ScatterStats stats = scatter_matrices(latents, d.labels);
  write_diagnose_run(dir, s.snapshot(), stats);
  std::printf("diagnose: fisher score %s over %zu samples -> %s\n", fmt_double(stats.fisher).c_str(),
              d.n(), dir.c_str());
  return 0;
}

int cmd_report(const std::string& run_dir) {
  const fs::path dir = run_dir;
  if (!fs::exists(dir / "report.txt")) throw ParseError("report: no report.txt under " + run_dir);
  std::printf("%s", read_file(dir / "report.txt").c_str());
  for (const char* csv : {"epochs.csv", "phase1_epochs.csv", "phase2_epochs.csv",
                          "pseudo_labels.csv", "reliability.csv", "scatter.csv"}) {
    if (!fs::exists(dir / csv)) continue;
    const std::string text = read_file(dir / csv);
    const auto lines = split(text, '\n');
    std::size_t rows = lines.size();
    while (rows > 0 && trim(lines[rows - 1]).empty()) --rows;
    std::printf("%s: %zu data rows\n", csv, rows > 0 ? rows - 1 : 0);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Neural discriminant analysis laboratory"};
  app.require_subcommand(1);

  CommonArgs gen_args, train_args, ssl_args, ood_args, diag_args;
  std::string scores_in, scores_out, model_path, in_data, out_data;
  std::string diag_features, diag_model, report_dir;

  CLI::App* gen = app.add_subcommand("gen-data", "generate synthetic blob datasets");
  gen_args.attach(gen);

  CLI::App* tr = app.add_subcommand("train", "train an NDA model");
  train_args.attach(tr);

  CLI::App* ssl = app.add_subcommand("train-ssl", "two-phase semi-supervised pipeline");
  ssl_args.attach(ssl);

  CLI::App* ood = app.add_subcommand("eval-ood", "out-of-distribution metrics");
  ood_args.attach(ood);
  ood->add_option("--scores-in", scores_in, "CSV of in-distribution confidences (confidence,correct)");
  ood->add_option("--scores-out", scores_out, "CSV of OOD confidences (confidence)");
  ood->add_option("--model", model_path, "model checkpoint to score datasets with");
  ood->add_option("--in-data", in_data, "in-distribution feature CSV");
  ood->add_option("--out-data", out_data, "OOD feature CSV");

  CLI::App* diag = app.add_subcommand("diagnose", "scatter-matrix discriminance diagnostics");
  diag_args.attach(diag);
  diag->add_option("--features", diag_features, "feature CSV to diagnose");
  diag->add_option("--model", diag_model, "optional checkpoint; diagnose its latent space");

  CLI::App* rep = app.add_subcommand("report", "summarize an existing run directory");
  rep->add_option("--run", report_dir, "run directory to summarize")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(gen_args);
    if (tr->parsed()) return cmd_train(train_args);
    if (ssl->parsed()) return cmd_train_ssl(ssl_args);
    if (ood->parsed()) return cmd_eval_ood(ood_args, scores_in, scores_out, model_path, in_data, out_data);
    if (diag->parsed()) return cmd_diagnose(diag_args, diag_features, diag_model);
    if (rep->parsed()) return cmd_report(report_dir);
  } catch (const ParseError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
