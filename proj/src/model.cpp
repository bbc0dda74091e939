#include "nnrepair/model.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <unordered_set>

#include "nnrepair/errors.hpp"

namespace nnrepair {

std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::relu:
      return "relu";
    case Activation::identity:
      return "identity";
    case Activation::softmax:
      return "softmax";
  }
  return "?";
}

Activation activation_from_string(std::string_view s) {
  if (s == "relu") return Activation::relu;
  if (s == "identity") return Activation::identity;
  if (s == "softmax") return Activation::softmax;
  throw FormatError(fmt::format("unknown activation '{}'", s));
}

Batch Batch::subset(std::span<const std::size_t> rows) const {
  Batch out;
  out.inputs = Matrix(rows.size(), inputs.cols());
  out.labels.reserve(rows.size());
  out.ids.reserve(rows.size());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    auto src = inputs.row(rows[k]);
    std::copy(src.begin(), src.end(), out.inputs.row(k).begin());
    out.labels.push_back(labels[rows[k]]);
    out.ids.push_back(ids[rows[k]]);
  }
  return out;
}

void Batch::validate() const {
  if (inputs.rows() != labels.size() || ids.size() != labels.size()) {
    throw ShapeError(fmt::format("batch row counts disagree: inputs {}, labels {}, ids {}",
                                 inputs.rows(), labels.size(), ids.size()));
  }
  std::unordered_set<SampleId> seen;
  for (SampleId id : ids) {
    if (!seen.insert(id).second) throw Error(fmt::format("duplicate sample id {}", id));
  }
}

Model::Model(std::vector<DenseLayer> layers) : layers_(std::move(layers)) {
  if (layers_.empty()) throw ShapeError("model has no layers");
  for (std::size_t k = 0; k < layers_.size(); ++k) {
    const auto& l = layers_[k];
    const auto& s = l.spec;
    if (s.input_size == 0 || s.output_size == 0) {
      throw ShapeError(fmt::format("layer {} has a zero dimension", k));
    }
    if (l.weights.rows() != s.input_size || l.weights.cols() != s.output_size ||
        l.bias.size() != s.output_size) {
      throw ShapeError(fmt::format("layer {} parameter shapes do not match its spec", k));
    }
    if (k > 0 && layers_[k - 1].spec.output_size != s.input_size) {
      throw ShapeError(fmt::format("layer {} input size {} != layer {} output size {}", k,
                                   s.input_size, k - 1, layers_[k - 1].spec.output_size));
    }
    bool last = k + 1 == layers_.size();
    if (last != (s.activation == Activation::softmax)) {
      throw ShapeError("softmax must be the activation of the final layer and only there");
    }
    auto finite = [](double v) { return std::isfinite(v); };
    if (!std::ranges::all_of(l.weights.values(), finite) || !std::ranges::all_of(l.bias, finite)) {
      throw Error(fmt::format("layer {} has non-finite parameters", k));
    }
  }
}

const DenseLayer& Model::layer(std::size_t k) const {
  if (k >= layers_.size()) {
    throw ShapeError(fmt::format("layer index {} out of range ({} layers)", k, layers_.size()));
  }
  return layers_[k];
}

std::size_t Model::input_size() const { return layers_.front().spec.input_size; }
std::size_t Model::num_classes() const { return layers_.back().spec.output_size; }

double Model::weight(const WeightRef& ref) const {
  check_ref(*this, ref);
  return layers_[ref.layer].weights(ref.from, ref.to);
}

namespace {

void check_input(const Model& model, const Matrix& inputs) {
  if (inputs.rows() > 0 && inputs.cols() != model.input_size()) {
    throw ShapeError(fmt::format("input dimension {} does not match model input size {}",
                                 inputs.cols(), model.input_size()));
  }
}

Matrix affine(const DenseLayer& layer, const Matrix& in) {
  const std::size_t n_in = layer.spec.input_size;
  const std::size_t n_out = layer.spec.output_size;
  Matrix z(in.rows(), n_out);
  for (std::size_t s = 0; s < in.rows(); ++s) {
    auto x = in.row(s);
    auto out = z.row(s);
    std::copy(layer.bias.begin(), layer.bias.end(), out.begin());
    for (std::size_t i = 0; i < n_in; ++i) {
      const double xi = x[i];
      if (xi == 0.0) continue;
      auto w = layer.weights.row(i);
      for (std::size_t j = 0; j < n_out; ++j) out[j] += xi * w[j];
    }
  }
  return z;
}

void activate(Activation a, Matrix& z) {
  switch (a) {
    case Activation::identity:
      return;
    case Activation::relu:
      for (double& v : z.values()) v = v > 0.0 ? v : 0.0;
      return;
    case Activation::softmax:
      for (std::size_t s = 0; s < z.rows(); ++s) {
        auto r = z.row(s);
        const double m = *std::ranges::max_element(r);
        double sum = 0.0;
        for (double& v : r) {
          v = std::exp(v - m);
          sum += v;
        }
        for (double& v : r) v /= sum;
      }
      return;
  }
}

}  // namespace

std::vector<Matrix> forward_trace(const Model& model, const Matrix& inputs) {
  check_input(model, inputs);
  std::vector<Matrix> trace;
  trace.reserve(model.num_layers() + 1);
  trace.push_back(inputs);
  for (const auto& layer : model.layers()) {
    Matrix z = affine(layer, trace.back());
    activate(layer.spec.activation, z);
    trace.push_back(std::move(z));
  }
  return trace;
}

Matrix forward(const Model& model, const Matrix& inputs) {
  check_input(model, inputs);
  if (inputs.rows() == 0) return Matrix(0, model.num_classes());
  Matrix cur = inputs;
  for (const auto& layer : model.layers()) {
    Matrix z = affine(layer, cur);
    activate(layer.spec.activation, z);
    cur = std::move(z);
  }
  return cur;
}

Matrix forward(const Model& model, const Batch& batch) { return forward(model, batch.inputs); }

Matrix pre_activations(const Model& model, const Matrix& inputs, std::size_t layer) {
  model.layer(layer);
  auto trace = forward_trace(model, inputs);
  return affine(model.layer(layer), trace[layer]);
}

double loss_from_probabilities(const Matrix& probs, std::span<const std::size_t> labels) {
  if (labels.empty()) throw Error("loss of an empty batch is undefined");
  double total = 0.0;
  for (std::size_t s = 0; s < labels.size(); ++s) {
    total -= std::log(std::max(probs(s, labels[s]), kProbabilityFloor));
  }
  return total / static_cast<double>(labels.size());
}

double loss(const Model& model, const Batch& batch) {
  if (batch.empty()) throw Error("loss of an empty batch is undefined");
  return loss_from_probabilities(forward(model, batch), batch.labels);
}

namespace {

/// Backpropagates from the output down to `stop_layer` (inclusive).
Gradients backprop_to(const Model& model, const Batch& batch, std::size_t stop_layer) {
  if (batch.empty()) throw Error("gradient of an empty batch is undefined");
  auto trace = forward_trace(model, batch.inputs);
  const std::size_t n = batch.size();
  const double inv_n = 1.0 / static_cast<double>(n);
  const std::size_t L = model.num_layers();

  Gradients g;
  g.weights.resize(L);
  g.biases.resize(L);

  // dL/dz for the softmax layer: (p - onehot) / n, zero where the true-class
  // probability sits under the clamp floor.
  Matrix delta = trace[L];
  for (std::size_t s = 0; s < n; ++s) {
    auto d = delta.row(s);
    const std::size_t y = batch.labels[s];
    if (trace[L](s, y) < kProbabilityFloor) {
      std::ranges::fill(d, 0.0);
      continue;
    }
    d[y] -= 1.0;
    for (double& v : d) v *= inv_n;
  }

  for (std::size_t k = L; k-- > stop_layer;) {
    const auto& layer = model.layer(k);
    const Matrix& in = trace[k];
    Matrix gw(layer.spec.input_size, layer.spec.output_size);
    std::vector<double> gb(layer.spec.output_size, 0.0);
    for (std::size_t s = 0; s < n; ++s) {
      auto d = delta.row(s);
      auto x = in.row(s);
      for (std::size_t i = 0; i < layer.spec.input_size; ++i) {
        auto row = gw.row(i);
        for (std::size_t j = 0; j < layer.spec.output_size; ++j) row[j] += x[i] * d[j];
      }
      for (std::size_t j = 0; j < layer.spec.output_size; ++j) gb[j] += d[j];
    }
    g.weights[k] = std::move(gw);
    g.biases[k] = std::move(gb);
    if (k == stop_layer) break;

    const auto& below = model.layer(k - 1);
    Matrix next(n, layer.spec.input_size);
    for (std::size_t s = 0; s < n; ++s) {
      auto d = delta.row(s);
      auto out = next.row(s);
      for (std::size_t i = 0; i < layer.spec.input_size; ++i) {
        auto w = layer.weights.row(i);
        double acc = 0.0;
        for (std::size_t j = 0; j < layer.spec.output_size; ++j) acc += w[j] * d[j];
        if (below.spec.activation == Activation::relu && in(s, i) <= 0.0) acc = 0.0;
        out[i] = acc;
      }
    }
    delta = std::move(next);
  }
  return g;
}

}  // namespace

Gradients backprop(const Model& model, const Batch& batch) {
  return backprop_to(model, batch, 0);
}

Matrix weight_gradients(const Model& model, const Batch& batch, std::size_t layer) {
  model.layer(layer);
  if (batch.inputs.cols() != model.input_size()) {
    throw ShapeError("batch input dimension does not match model");
  }
  auto g = backprop_to(model, batch, layer);
  return std::move(g.weights[layer]);
}

Matrix layer_inputs(const Model& model, const Batch& batch, std::size_t layer) {
  model.layer(layer);
  check_input(model, batch.inputs);
  if (layer == 0) return batch.inputs;
  Matrix cur = batch.inputs;
  for (std::size_t k = 0; k < layer; ++k) {
    Matrix z = affine(model.layer(k), cur);
    activate(model.layer(k).spec.activation, z);
    cur = std::move(z);
  }
  return cur;
}

std::size_t argmax(std::span<const double> row) {
  return static_cast<std::size_t>(std::ranges::max_element(row) - row.begin());
}

std::vector<std::size_t> predict(const Model& model, const Matrix& inputs) {
  Matrix p = forward(model, inputs);
  std::vector<std::size_t> out(p.rows());
  for (std::size_t s = 0; s < p.rows(); ++s) out[s] = argmax(p.row(s));
  return out;
}

void check_ref(const Model& model, const WeightRef& ref) {
  const auto& l = model.layer(ref.layer);
  if (ref.from >= l.spec.input_size || ref.to >= l.spec.output_size) {
    throw ShapeError(fmt::format("weight ref ({}, {}, {}) out of bounds", ref.layer, ref.from,
                                 ref.to));
  }
}

std::vector<double> read_weights(const Model& model, std::span<const WeightRef> refs) {
  std::vector<double> out;
  out.reserve(refs.size());
  for (const auto& r : refs) out.push_back(model.weight(r));
  return out;
}

Model write_weights(const Model& model, std::span<const WeightRef> refs,
                    std::span<const double> values) {
  if (refs.size() != values.size()) {
    throw ShapeError(fmt::format("{} refs but {} values", refs.size(), values.size()));
  }
  for (const auto& r : refs) check_ref(model, r);
  std::vector<DenseLayer> layers = model.layers();
  for (std::size_t k = 0; k < refs.size(); ++k) {
    if (!std::isfinite(values[k])) throw Error("cannot write a non-finite weight");
    layers[refs[k].layer].weights(refs[k].from, refs[k].to) = values[k];
  }
  return Model(std::move(layers));
}

std::vector<WeightRef> layer_refs(const Model& model, std::size_t layer) {
  const auto& l = model.layer(layer);
  std::vector<WeightRef> refs;
  refs.reserve(l.spec.input_size * l.spec.output_size);
  for (std::size_t j = 0; j < l.spec.output_size; ++j)
    for (std::size_t i = 0; i < l.spec.input_size; ++i) refs.push_back({layer, i, j});
  return refs;
}

}  // namespace nnrepair
