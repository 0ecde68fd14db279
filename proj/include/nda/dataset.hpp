#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "nda/errors.hpp"
#include "nda/rng.hpp"
#include "nda/tensor.hpp"
#include "nda/textio.hpp"

namespace nda {

/// Feature matrix with integer class labels and stable sample ids.
struct Dataset {
  Tensor features;  // N x D
  std::vector<int> labels;
  int num_classes = 0;
  std::vector<long long> ids;
  std::string name;
  std::string provenance;

  std::size_t n() const { return labels.size(); }
  std::size_t dim() const { return features.ndim() == 2 ? features.cols() : 0; }

  void validate() const {
    if (n() == 0) throw ContractError("dataset '" + name + "' is empty");
    if (features.ndim() != 2 || features.rows() != n())
      throw ContractError("dataset '" + name + "': features/labels size mismatch");
    if (ids.size() != n()) throw ContractError("dataset '" + name + "': ids size mismatch");
    if (!features.finite()) throw NumericError("dataset '" + name + "': non-finite feature");
    for (int y : labels)
      if (y < 0 || y >= num_classes)
        throw ContractError("dataset '" + name + "': label " + std::to_string(y) +
                            " outside [0, " + std::to_string(num_classes) + ")");
  }

  Tensor row(std::size_t i) const {
    Tensor r({1, dim()});
    for (std::size_t j = 0; j < dim(); ++j) r.data[j] = features.at(i, j);
    return r;
  }

  Dataset subset(const std::vector<std::size_t>& idx) const {
    Dataset out;
    out.features = Tensor({idx.size(), dim()});
    out.labels.reserve(idx.size());
    out.ids.reserve(idx.size());
    for (std::size_t r = 0; r < idx.size(); ++r) {
      for (std::size_t c = 0; c < dim(); ++c) out.features.at(r, c) = features.at(idx[r], c);
      out.labels.push_back(labels[idx[r]]);
      out.ids.push_back(ids[idx[r]]);
    }
    out.num_classes = num_classes;
    out.name = name;
    out.provenance = provenance;
    return out;
  }

  /// Rows of `features` gathered into a batch tensor.
  Tensor gather(const std::vector<std::size_t>& idx) const {
    Tensor out({idx.size(), dim()});
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (std::size_t c = 0; c < dim(); ++c) out.at(r, c) = features.at(idx[r], c);
    return out;
  }
};

/// Synthetic Gaussian-blob generator parameters.
struct BlobSpec {
  int num_classes = 4;
  std::size_t dim = 8;
  std::size_t per_class = 100;
  double spread = 2.0;   // centroid scale
  double sigma = 1.0;    // within-class standard deviation
  std::uint64_t seed = 1;

  void validate() const {
    if (num_classes < 1) throw ContractError("blobs: num_classes must be >= 1");
    if (dim == 0 || per_class == 0) throw ContractError("blobs: dim and per_class must be >= 1");
    if (!(sigma > 0.0)) throw ContractError("blobs: sigma must be > 0");
    if (!(spread > 0.0)) throw ContractError("blobs: spread must be > 0");
  }
};

namespace detail {
inline std::vector<std::vector<double>> blob_centroids(const BlobSpec& spec) {
  Rng rng(sub_seed(spec.seed, "centroids"));
  std::normal_distribution<double> dist(0.0, spec.spread);
  std::vector<std::vector<double>> centroids(static_cast<std::size_t>(spec.num_classes));
  for (auto& c : centroids) {
    c.resize(spec.dim);
    for (double& v : c) v = dist(rng);
  }
  return centroids;
}

inline Dataset sample_blobs(const BlobSpec& spec, const std::vector<std::vector<double>>& centroids,
                            std::uint64_t sample_seed, const std::string& name,
                            const std::string& provenance) {
  const std::size_t n = static_cast<std::size_t>(spec.num_classes) * spec.per_class;
  Dataset d;
  d.features = Tensor({n, spec.dim});
  d.labels.reserve(n);
  d.ids.reserve(n);
  d.num_classes = spec.num_classes;
  d.name = name;
  d.provenance = provenance;
  Rng rng(sample_seed);
  std::normal_distribution<double> noise(0.0, spec.sigma);
  std::size_t r = 0;
  for (int k = 0; k < spec.num_classes; ++k) {
    for (std::size_t i = 0; i < spec.per_class; ++i, ++r) {
      for (std::size_t j = 0; j < spec.dim; ++j)
        d.features.at(r, j) = centroids[static_cast<std::size_t>(k)][j] + noise(rng);
      d.labels.push_back(k);
      d.ids.push_back(static_cast<long long>(r));
    }
  }
  return d;
}
}  // namespace detail

inline Dataset gen_blobs(const BlobSpec& spec) {
  spec.validate();
  std::string prov = "blobs k=" + std::to_string(spec.num_classes) + " dim=" + std::to_string(spec.dim) +
                     " per_class=" + std::to_string(spec.per_class) + " spread=" + fmt_double(spec.spread) +
                     " sigma=" + fmt_double(spec.sigma) + " seed=" + std::to_string(spec.seed);
  return detail::sample_blobs(spec, detail::blob_centroids(spec), sub_seed(spec.seed, "samples"),
                              "blobs", prov);
}

/// Same blob family as gen_blobs(spec) but with every class centroid pushed
/// `shift` along its own seeded random direction; used as the out-of-
/// distribution counterpart of an in-distribution set.
inline Dataset gen_ood_set(const BlobSpec& spec, double shift) {
  spec.validate();
  if (shift < 0.0) throw ContractError("gen_ood_set: shift must be >= 0");
  auto centroids = detail::blob_centroids(spec);
  Rng dir_rng(sub_seed(spec.seed, "ood-direction"));
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (auto& c : centroids) {
    std::vector<double> u(spec.dim);
    double norm = 0.0;
    for (double& v : u) {
      v = gauss(dir_rng);
      norm += v * v;
    }
    norm = std::sqrt(norm);
    if (norm == 0.0) norm = 1.0;
    for (std::size_t j = 0; j < spec.dim; ++j) c[j] += shift * u[j] / norm;
  }
  std::string prov = "ood shift=" + fmt_double(shift) + " base_seed=" + std::to_string(spec.seed);
  return detail::sample_blobs(spec, centroids, sub_seed(spec.seed, "ood-samples"), "ood", prov);
}

/// CSV with header f0..f{D-1},label. Finite doubles round-trip bit-exactly.
inline void save_features(const Dataset& d, const std::filesystem::path& path) {
  d.validate();
  std::string out;
  out.reserve(d.n() * d.dim() * 12);
  for (std::size_t j = 0; j < d.dim(); ++j) {
    out += "f" + std::to_string(j) + ",";
  }
  out += "label\n";
  for (std::size_t i = 0; i < d.n(); ++i) {
    for (std::size_t j = 0; j < d.dim(); ++j) {
      out += fmt_double(d.features.at(i, j));
      out += ',';
    }
    out += std::to_string(d.labels[i]);
    out += '\n';
  }
  atomic_write_file(path, out);
}

inline Dataset load_features(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  auto lines = split(text, '\n');
  while (!lines.empty() && trim(lines.back()).empty()) lines.pop_back();
  if (lines.empty()) throw ParseError(path.string() + ": empty file");

  auto header = split(trim(lines[0]), ',');
  if (header.size() < 2 || trim(header.back()) != "label")
    throw ParseError(path.string() + ": line 1: header must be f0..fD-1,label");
  const std::size_t dim = header.size() - 1;
  for (std::size_t j = 0; j < dim; ++j)
    if (trim(header[j]) != "f" + std::to_string(j))
      throw ParseError(path.string() + ": line 1: unexpected column '" + std::string(trim(header[j])) + "'");

  Dataset d;
  const std::size_t n = lines.size() - 1;
  if (n == 0) throw ParseError(path.string() + ": no data rows");
  d.features = Tensor({n, dim});
  d.labels.reserve(n);
  d.ids.reserve(n);
  int max_label = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::string where = path.string() + ": line " + std::to_string(i + 2);
    auto cells = split(trim(lines[i + 1]), ',');
    if (cells.size() != dim + 1)
      throw ParseError(where + ": expected " + std::to_string(dim + 1) + " cells, got " +
                       std::to_string(cells.size()));
    for (std::size_t j = 0; j < dim; ++j) d.features.at(i, j) = parse_double(trim(cells[j]), where);
    const long long y = parse_int(trim(cells[dim]), where);
    if (y < 0) throw ParseError(where + ": negative label " + std::to_string(y));
    d.labels.push_back(static_cast<int>(y));
    d.ids.push_back(static_cast<long long>(i));
    max_label = std::max(max_label, static_cast<int>(y));
  }
  d.num_classes = max_label + 1;
  d.name = path.stem().string();
  d.provenance = "file " + path.string();
  d.validate();
  return d;
}

}  // namespace nda
