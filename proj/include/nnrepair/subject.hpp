#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "nnrepair/dataset.hpp"
#include "nnrepair/model.hpp"

namespace nnrepair {

/// Gaussian-cluster tabular classification data. Class centers are drawn on
/// a sphere of radius `separation`; samples scatter around them with standard
/// deviation `spread`, scaled per class by `class_spread` when given.
struct SyntheticSpec {
  std::size_t n_classes = 7;
  std::size_t n_features = 8;
  std::size_t samples_per_class = 300;
  double separation = 3.0;
  double spread = 1.0;
  std::vector<double> class_spread;
  std::uint64_t seed = 0;
};

Dataset make_synthetic(const SyntheticSpec& spec);

struct SubjectSpec {
  std::vector<std::size_t> hidden;  // hidden layer widths
  Activation hidden_activation = Activation::relu;
  std::size_t epochs = 40;
  double learning_rate = 0.05;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
};

/// He-normal weights, zero biases.
Model init_model(std::size_t n_inputs, std::size_t n_classes, const SubjectSpec& spec);

struct TrainedSubject {
  Model model;
  std::vector<double> epoch_loss;  // mean minibatch loss per epoch
};

/// Minibatch SGD on mean cross-entropy. Throws on a non-finite loss, naming
/// the epoch.
TrainedSubject train_subject(const SubjectSpec& spec, const Dataset& train);

}  // namespace nnrepair
