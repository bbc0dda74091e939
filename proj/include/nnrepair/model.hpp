#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "nnrepair/matrix.hpp"

namespace nnrepair {

enum class Activation { relu, identity, softmax };

std::string_view to_string(Activation a);
Activation activation_from_string(std::string_view s);

struct LayerSpec {
  std::size_t input_size = 0;
  std::size_t output_size = 0;
  Activation activation = Activation::identity;

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

/// A dense layer. weights(i, j) is the weight from input neuron i to output
/// neuron j.
struct DenseLayer {
  LayerSpec spec;
  Matrix weights;
  std::vector<double> bias;

  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

/// Address of a single scalar weight. Ordered by (layer, to, from).
struct WeightRef {
  std::size_t layer = 0;
  std::size_t from = 0;  // i
  std::size_t to = 0;    // j

  friend bool operator==(const WeightRef&, const WeightRef&) = default;
  friend std::strong_ordering operator<=>(const WeightRef& a, const WeightRef& b) {
    if (auto c = a.layer <=> b.layer; c != 0) return c;
    if (auto c = a.to <=> b.to; c != 0) return c;
    return a.from <=> b.from;
  }
};

using SampleId = std::uint64_t;

struct Batch {
  Matrix inputs;  // [n_samples x input_dim]
  std::vector<std::size_t> labels;
  std::vector<SampleId> ids;

  std::size_t size() const { return labels.size(); }
  bool empty() const { return labels.empty(); }

  /// Rows at the given positions, in that order.
  Batch subset(std::span<const std::size_t> rows) const;

  /// Throws if row counts disagree or ids repeat.
  void validate() const;
};

/// Immutable feedforward classifier. The final layer must use softmax and no
/// other layer may.
class Model {
 public:
  Model() = default;
  explicit Model(std::vector<DenseLayer> layers);

  const std::vector<DenseLayer>& layers() const { return layers_; }
  const DenseLayer& layer(std::size_t k) const;
  std::size_t num_layers() const { return layers_.size(); }
  std::size_t input_size() const;
  std::size_t num_classes() const;
  std::size_t last_layer() const { return layers_.size() - 1; }

  double weight(const WeightRef& ref) const;

  friend bool operator==(const Model&, const Model&) = default;

 private:
  std::vector<DenseLayer> layers_;
};

/// Per-layer mean-loss gradients for every weight and bias.
struct Gradients {
  std::vector<Matrix> weights;
  std::vector<std::vector<double>> biases;
};

inline constexpr double kProbabilityFloor = 1e-12;

/// Per-sample class probabilities, one row per sample.
Matrix forward(const Model& model, const Batch& batch);
Matrix forward(const Model& model, const Matrix& inputs);

/// Post-activation outputs of every layer. Element 0 is the raw input,
/// element k + 1 the output of layer k.
std::vector<Matrix> forward_trace(const Model& model, const Matrix& inputs);

/// Pre-activation values (logits) of layer k.
Matrix pre_activations(const Model& model, const Matrix& inputs, std::size_t layer);

/// Mean categorical cross-entropy; probabilities are clamped at
/// kProbabilityFloor before the log.
double loss(const Model& model, const Batch& batch);
double loss_from_probabilities(const Matrix& probs, std::span<const std::size_t> labels);

/// Exact dL/dw for every weight of `layer`, shaped like that layer's weights.
Matrix weight_gradients(const Model& model, const Batch& batch, std::size_t layer);

/// Full backpropagation of the batch-mean loss through every layer.
Gradients backprop(const Model& model, const Batch& batch);

/// Inputs o_i feeding `layer` (the raw inputs for layer 0).
Matrix layer_inputs(const Model& model, const Batch& batch, std::size_t layer);

/// Predicted class per row: argmax, ties resolved toward the lowest class.
std::vector<std::size_t> predict(const Model& model, const Matrix& inputs);
std::size_t argmax(std::span<const double> row);

std::vector<double> read_weights(const Model& model, std::span<const WeightRef> refs);
Model write_weights(const Model& model, std::span<const WeightRef> refs,
                    std::span<const double> values);
void check_ref(const Model& model, const WeightRef& ref);

/// Every weight of a layer in WeightRef order.
std::vector<WeightRef> layer_refs(const Model& model, std::size_t layer);

}  // namespace nnrepair
