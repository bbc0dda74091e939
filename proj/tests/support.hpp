#pragma once

#include <atomic>
#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "nnrepair/dataset.hpp"
#include "nnrepair/experiment.hpp"
#include "nnrepair/model.hpp"
#include "nnrepair/rng.hpp"

namespace testing_support {

using namespace nnrepair;

/// Random dense model: hidden layers use `hidden`, the last layer softmax.
inline Model random_model(Rng& rng, const std::vector<std::size_t>& sizes,
                          Activation hidden = Activation::relu, double scale = 1.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  std::vector<DenseLayer> layers;
  for (std::size_t k = 0; k + 1 < sizes.size(); ++k) {
    DenseLayer l;
    l.spec = {sizes[k], sizes[k + 1], k + 2 == sizes.size() ? Activation::softmax : hidden};
    l.weights = Matrix(sizes[k], sizes[k + 1]);
    for (double& w : l.weights.values()) w = u(rng);
    l.bias.resize(sizes[k + 1]);
    for (double& b : l.bias) b = u(rng);
    layers.push_back(std::move(l));
  }
  return Model(std::move(layers));
}

inline Batch random_batch(Rng& rng, std::size_t n, std::size_t dim, std::size_t n_classes,
                          SampleId first_id = 0) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> label(0, n_classes - 1);
  Batch b;
  b.inputs = Matrix(n, dim);
  for (double& v : b.inputs.values()) v = normal(rng);
  for (std::size_t s = 0; s < n; ++s) {
    b.labels.push_back(label(rng));
    b.ids.push_back(first_id + s);
  }
  return b;
}

/// The fixed 2-3-2 ReLU model used by the hand-arithmetic oracles.
inline Model model_232() {
  DenseLayer h;
  h.spec = {2, 3, Activation::relu};
  h.weights = Matrix(2, 3);
  const double w0[2][3] = {{0.5, -0.3, 0.8}, {-0.2, 0.9, 0.4}};
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 3; ++j) h.weights(i, j) = w0[i][j];
  h.bias = {0.1, -0.05, 0.0};
  DenseLayer o;
  o.spec = {3, 2, Activation::softmax};
  o.weights = Matrix(3, 2);
  const double w1[3][2] = {{0.7, -0.6}, {-0.4, 0.3}, {0.25, 0.55}};
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 2; ++j) o.weights(i, j) = w1[i][j];
  o.bias = {0.02, -0.03};
  return Model({h, o});
}

inline Batch batch_232() {
  Batch b;
  b.inputs = Matrix(4, 2);
  const double x[4][2] = {{1.0, 0.5}, {-0.7, 1.2}, {0.3, -0.9}, {2.0, 1.5}};
  for (std::size_t s = 0; s < 4; ++s) {
    b.inputs(s, 0) = x[s][0];
    b.inputs(s, 1) = x[s][1];
  }
  b.labels = {0, 1, 1, 0};
  b.ids = {10, 11, 12, 13};
  return b;
}

inline Dataset make_dataset(const Batch& b, std::size_t n_classes) {
  Dataset d;
  d.data = b;
  d.n_classes = n_classes;
  for (std::size_t c = 0; c < n_classes; ++c) d.class_names.push_back("c" + std::to_string(c));
  return d;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("nnrepair_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

/// A small drift experiment that runs in well under a second per repair.
inline ExperimentSpec small_spec() {
  ExperimentSpec s;
  s.name = "small";
  s.data = {.n_classes = 3, .n_features = 4, .samples_per_class = 80, .separation = 2.0,
            .spread = 1.0, .class_spread = {}, .seed = 5};
  s.split.seed = 9;
  s.drift = DriftSpec{.target_class = 1, .train_fraction = 0.2, .repair_fraction = 0.6, .seed = 4};
  s.subject.hidden = {8};
  s.subject.epochs = 20;
  s.subject.seed = 3;
  s.target_class = 1;
  s.swarm.n_iterations = 8;
  GridPoint p;
  p.id = "A";
  p.fitness.alpha = 8.0;
  p.fitness.perfect_intact = true;
  p.n_localized = 6;
  p.n_positives = 60;
  p.n_particles = 8;
  s.grid = {p};
  s.repetitions = 2;
  s.master_seed = 77;
  return s;
}

inline bool near_rel(double a, double b, double rel, double abs_floor) {
  return std::abs(a - b) <= std::max(abs_floor, rel * std::max(std::abs(a), std::abs(b)));
}

/// Drops samples whose hidden ReLU pre-activations sit within `margin` of the
/// kink, where a central difference straddles two linear pieces.
inline Batch kink_free(const Model& m, const Batch& b, double margin = 1e-2) {
  std::vector<std::size_t> keep;
  std::vector<Matrix> z;
  for (std::size_t k = 0; k + 1 < m.num_layers(); ++k) {
    if (m.layer(k).spec.activation == Activation::relu) z.push_back(pre_activations(m, b.inputs, k));
  }
  for (std::size_t s = 0; s < b.size(); ++s) {
    bool ok = true;
    for (const auto& zk : z)
      for (double v : zk.row(s)) ok = ok && std::abs(v) > margin;
    if (ok) keep.push_back(s);
  }
  return b.subset(keep);
}

struct GradCheck {
  std::size_t checked = 0;
  std::size_t failed = 0;
  double worst_abs = 0.0;
};

/// Every weight_gradients entry of every layer against a central difference.
inline GradCheck gradient_check(const Model& m, const Batch& b, double eps = 1e-4,
                                double rel = 1e-4, double abs_floor = 1e-6) {
  GradCheck out;
  for (std::size_t layer = 0; layer < m.num_layers(); ++layer) {
    Matrix g = weight_gradients(m, b, layer);
    for (const auto& ref : layer_refs(m, layer)) {
      const double w = m.weight(ref);
      const std::vector<double> up{w + eps}, down{w - eps};
      const double fd = (loss(write_weights(m, std::span(&ref, 1), up), b) -
                         loss(write_weights(m, std::span(&ref, 1), down), b)) /
                        (2.0 * eps);
      ++out.checked;
      out.worst_abs = std::max(out.worst_abs, std::abs(g(ref.from, ref.to) - fd));
      if (!near_rel(g(ref.from, ref.to), fd, rel, abs_floor)) ++out.failed;
    }
  }
  return out;
}

}  // namespace testing_support
