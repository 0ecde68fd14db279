#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "nda/errors.hpp"
#include "nda/graph.hpp"
#include "nda/rng.hpp"
#include "nda/tensor.hpp"
#include "nda/textio.hpp"

namespace nda {

struct DenseLayer {
  Tensor weight;  // in x out
  Tensor bias;    // out
  bool relu = true;
};

/// Outputs of one forward pass, as nodes of the graph that produced them.
/// `latent` is the pre-logit feature layer the NDA losses attach to.
struct ForwardResult {
  NodeId latent = -1;
  NodeId logits = -1;
  NodeId probs = -1;
};

/// Small dense feature network: input -> hidden... -> latent -> logits.
/// Every layer up to and including the latent one is relu-activated; the
/// logit head is linear.
class Model {
 public:
  Model() = default;

  static Model build(std::size_t input_dim, const std::vector<std::size_t>& hidden_dims,
                     std::size_t latent_dim, std::size_t num_classes, std::uint64_t seed) {
    if (input_dim == 0 || latent_dim == 0) throw ContractError("build_model: zero dimension");
    for (std::size_t h : hidden_dims)
      if (h == 0) throw ContractError("build_model: zero hidden dimension");
    if (num_classes < 2) throw ContractError("build_model: need at least 2 classes");

    std::vector<std::size_t> dims;
    dims.push_back(input_dim);
    dims.insert(dims.end(), hidden_dims.begin(), hidden_dims.end());
    dims.push_back(latent_dim);
    dims.push_back(num_classes);

    Model m;
    Rng rng(sub_seed(seed, "init"));
    for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
      DenseLayer layer;
      layer.weight = Tensor({dims[i], dims[i + 1]});
      layer.bias = Tensor({dims[i + 1]});
      layer.relu = (i + 2 < dims.size());  // logit head stays linear
      const double s = std::sqrt(6.0 / static_cast<double>(dims[i] + dims[i + 1]));
      std::uniform_real_distribution<double> u(-s, s);
      for (double& w : layer.weight.data) w = u(rng);
      m.layers_.push_back(std::move(layer));
    }
    m.latent_index_ = m.layers_.size() - 2;
    return m;
  }

  ForwardResult forward(Graph& g, const Tensor& inputs) const {
    if (inputs.ndim() != 2 || inputs.cols() != input_dim())
      throw ContractError("forward: inputs " + shape_str(inputs.shape) + " do not match input dim " +
                          std::to_string(input_dim()));
    NodeId h = g.constant(inputs);
    ForwardResult r;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      NodeId z = g.add_bias(g.matmul(h, g.param(layers_[i].weight)), g.param(layers_[i].bias));
      h = layers_[i].relu ? g.relu(z) : z;
      if (i == latent_index_) r.latent = h;
    }
    r.logits = h;
    r.probs = g.softmax_rows(r.logits);
    return r;
  }

  /// Two forward passes on one tape. Parameter registration is memoized per
  /// graph, so both branches share the identical weight nodes and their
  /// gradients accumulate into the same parameters.
  std::pair<ForwardResult, ForwardResult> forward_siamese(Graph& g, const Tensor& a,
                                                          const Tensor& b) const {
    return {forward(g, a), forward(g, b)};
  }

  /// Latent features without touching the caller's tape (means, diagnostics).
  Tensor latent_eval(const Tensor& inputs) const {
    Graph g;
    return g.value(forward(g, inputs).latent);
  }

  Tensor probs_eval(const Tensor& inputs) const {
    Graph g;
    return g.value(forward(g, inputs).probs);
  }

  std::vector<Tensor*> parameters() {
    std::vector<Tensor*> ps;
    for (DenseLayer& l : layers_) {
      ps.push_back(&l.weight);
      ps.push_back(&l.bias);
    }
    return ps;
  }
  std::vector<const Tensor*> parameters() const {
    std::vector<const Tensor*> ps;
    for (const DenseLayer& l : layers_) {
      ps.push_back(&l.weight);
      ps.push_back(&l.bias);
    }
    return ps;
  }

  const std::vector<DenseLayer>& layers() const { return layers_; }
  std::size_t latent_index() const { return latent_index_; }
  std::size_t input_dim() const { return layers_.front().weight.rows(); }
  std::size_t latent_dim() const { return layers_[latent_index_].weight.cols(); }
  std::size_t num_classes() const { return layers_.back().weight.cols(); }

  void save(const std::filesystem::path& path) const {
    std::string out = "nda-model 1\n";
    out += "layers " + std::to_string(layers_.size()) + "\n";
    out += "latent_index " + std::to_string(latent_index_) + "\n";
    for (const DenseLayer& l : layers_) {
      out += "layer " + std::to_string(l.weight.rows()) + " " + std::to_string(l.weight.cols()) +
             (l.relu ? " relu" : " linear") + "\n";
      out += "W";
      for (double v : l.weight.data) out += " " + fmt_double(v);
      out += "\nb";
      for (double v : l.bias.data) out += " " + fmt_double(v);
      out += "\n";
    }
    atomic_write_file(path, out);
  }

  static Model load(const std::filesystem::path& path) {
    const std::string text = read_file(path);
    auto lines = split(text, '\n');
    std::size_t ln = 0;
    auto next = [&]() -> std::string_view {
      while (ln < lines.size() && trim(lines[ln]).empty()) ++ln;
      if (ln >= lines.size()) throw ParseError(path.string() + ": truncated checkpoint");
      return trim(lines[ln++]);
    };
    auto where = [&]() { return path.string() + ": line " + std::to_string(ln); };

    auto magic = split(next(), ' ');
    if (magic.size() != 2 || magic[0] != "nda-model" || magic[1] != "1")
      throw ParseError(path.string() + ": not an nda-model v1 checkpoint");
    auto nl = split(next(), ' ');
    if (nl.size() != 2 || nl[0] != "layers") throw ParseError(where() + ": expected layer count");
    const std::size_t count = static_cast<std::size_t>(parse_int(nl[1], where()));
    auto li = split(next(), ' ');
    if (li.size() != 2 || li[0] != "latent_index") throw ParseError(where() + ": expected latent_index");

    Model m;
    m.latent_index_ = static_cast<std::size_t>(parse_int(li[1], where()));
    for (std::size_t i = 0; i < count; ++i) {
      auto head = split(next(), ' ');
      if (head.size() != 4 || head[0] != "layer") throw ParseError(where() + ": expected layer header");
      DenseLayer l;
      const std::size_t in = static_cast<std::size_t>(parse_int(head[1], where()));
      const std::size_t outd = static_cast<std::size_t>(parse_int(head[2], where()));
      l.relu = head[3] == "relu";
      auto wrow = split(next(), ' ');
      if (wrow.size() != in * outd + 1 || wrow[0] != "W")
        throw ParseError(where() + ": expected " + std::to_string(in * outd) + " weights");
      l.weight = Tensor({in, outd});
      for (std::size_t k = 0; k < in * outd; ++k) l.weight.data[k] = parse_double(wrow[k + 1], where());
      auto brow = split(next(), ' ');
      if (brow.size() != outd + 1 || brow[0] != "b")
        throw ParseError(where() + ": expected " + std::to_string(outd) + " biases");
      l.bias = Tensor({outd});
      for (std::size_t k = 0; k < outd; ++k) l.bias.data[k] = parse_double(brow[k + 1], where());
      m.layers_.push_back(std::move(l));
    }
    if (m.layers_.size() < 2 || m.latent_index_ + 2 != m.layers_.size())
      throw ParseError(path.string() + ": inconsistent layer structure");
    return m;
  }

 private:
  std::vector<DenseLayer> layers_;
  std::size_t latent_index_ = 0;
};

}  // namespace nda
