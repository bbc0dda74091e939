#include "nnrepair/subject.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <numeric>

#include "nnrepair/errors.hpp"
#include "nnrepair/rng.hpp"

namespace nnrepair {

Dataset make_synthetic(const SyntheticSpec& spec) {
  if (spec.n_classes < 2 || spec.n_features < 1 || spec.samples_per_class < 1) {
    throw Error("synthetic data needs >= 2 classes, >= 1 feature and >= 1 sample per class");
  }
  if (!spec.class_spread.empty() && spec.class_spread.size() != spec.n_classes) {
    throw Error("class_spread must list one factor per class");
  }
  Rng rng(derive_seed(spec.seed, 0xda7a));
  std::normal_distribution<double> normal(0.0, 1.0);

  Matrix centers(spec.n_classes, spec.n_features);
  for (std::size_t c = 0; c < spec.n_classes; ++c) {
    auto row = centers.row(c);
    double norm = 0.0;
    do {
      for (double& v : row) v = normal(rng);
      norm = std::sqrt(std::inner_product(row.begin(), row.end(), row.begin(), 0.0));
    } while (norm < 1e-9);
    for (double& v : row) v *= spec.separation / norm;
  }

  Dataset ds;
  ds.n_classes = spec.n_classes;
  for (std::size_t c = 0; c < spec.n_classes; ++c) ds.class_names.push_back(fmt::format("c{}", c));
  const std::size_t n = spec.n_classes * spec.samples_per_class;
  ds.data.inputs = Matrix(n, spec.n_features);
  for (std::size_t s = 0; s < n; ++s) {
    const std::size_t c = s % spec.n_classes;
    const double sd = spec.spread * (spec.class_spread.empty() ? 1.0 : spec.class_spread[c]);
    for (std::size_t f = 0; f < spec.n_features; ++f) {
      ds.data.inputs(s, f) = centers(c, f) + sd * normal(rng);
    }
    ds.data.labels.push_back(c);
    ds.data.ids.push_back(s);
  }
  return ds;
}

Model init_model(std::size_t n_inputs, std::size_t n_classes, const SubjectSpec& spec) {
  Rng rng(derive_seed(spec.seed, 0x1417));
  std::vector<std::size_t> sizes{n_inputs};
  sizes.insert(sizes.end(), spec.hidden.begin(), spec.hidden.end());
  sizes.push_back(n_classes);
  std::vector<DenseLayer> layers;
  for (std::size_t k = 0; k + 1 < sizes.size(); ++k) {
    DenseLayer l;
    l.spec = {sizes[k], sizes[k + 1],
              k + 2 == sizes.size() ? Activation::softmax : spec.hidden_activation};
    l.weights = Matrix(sizes[k], sizes[k + 1]);
    std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / static_cast<double>(sizes[k])));
    for (double& w : l.weights.values()) w = normal(rng);
    l.bias.assign(sizes[k + 1], 0.0);
    layers.push_back(std::move(l));
  }
  return Model(std::move(layers));
}

TrainedSubject train_subject(const SubjectSpec& spec, const Dataset& train) {
  if (spec.batch_size == 0) throw Error("batch size must be at least 1");
  if (!(spec.learning_rate > 0.0)) throw Error("learning rate must be positive");
  if (train.size() == 0 && spec.epochs > 0) throw Error("cannot train on an empty dataset");

  Model model = init_model(train.data.inputs.cols(), train.n_classes, spec);
  TrainedSubject out;
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 0; epoch < spec.epochs; ++epoch) {
    Rng rng(derive_seed(spec.seed, 0xe90c, epoch));
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    std::size_t batches = 0;
    std::vector<DenseLayer> layers = model.layers();
    for (std::size_t start = 0; start < order.size(); start += spec.batch_size) {
      const std::size_t end = std::min(order.size(), start + spec.batch_size);
      Batch mb = train.data.subset(std::span(order).subspan(start, end - start));
      Model current(layers);
      const double l = loss(current, mb);
      if (!std::isfinite(l)) {
        throw Error(fmt::format("training diverged at epoch {}", epoch));
      }
      epoch_loss += l;
      ++batches;
      Gradients g = backprop(current, mb);
      for (std::size_t k = 0; k < layers.size(); ++k) {
        auto& w = layers[k].weights.values();
        const auto& gw = g.weights[k].values();
        for (std::size_t q = 0; q < w.size(); ++q) w[q] -= spec.learning_rate * gw[q];
        for (std::size_t q = 0; q < layers[k].bias.size(); ++q) {
          layers[k].bias[q] -= spec.learning_rate * g.biases[k][q];
        }
      }
      for (const auto& layer : layers) {
        if (!std::ranges::all_of(layer.weights.values(), [](double v) { return std::isfinite(v); })) {
          throw Error(fmt::format("training diverged at epoch {}", epoch));
        }
      }
    }
    model = Model(std::move(layers));
    out.epoch_loss.push_back(epoch_loss / static_cast<double>(std::max<std::size_t>(batches, 1)));
  }
  out.model = std::move(model);
  return out;
}

}  // namespace nnrepair
