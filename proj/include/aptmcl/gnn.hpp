#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "aptmcl/matrix.hpp"
#include "aptmcl/provenance.hpp"
#include "json.hpp"

namespace aptmcl {

struct TrainConfig {
  double learning_rate = 0.01;
  double weight_decay = 5e-4;
  int epochs = 30;
  int minibatch_nodes = 5000;
  double dropout = 0.5;
  std::array<int, 2> neighbor_samples = {25, 10};
  // Graphs up to this size aggregate over full neighbourhoods while training.
  std::size_t full_neighborhood_limit = 50000;
  int hidden_dim = 32;
  int embedding_dim = 15;
  int classifier_hidden = 16;
  std::uint64_t rng_seed = 1;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

// Neighbour lists in CSR form. Lists may repeat an index (sampling with
// replacement); aggregation is the plain mean over the list.
struct Neighborhood {
  std::vector<std::uint32_t> offsets;
  std::vector<std::uint32_t> list;

  std::size_t size() const { return offsets.empty() ? 0 : offsets.size() - 1; }
  std::span<const std::uint32_t> of(std::size_t v) const {
    return {list.data() + offsets[v], offsets[v + 1] - offsets[v]};
  }

  static Neighborhood full(const ProvenanceGraph& graph);
  // fanout draws per node: without replacement when the degree exceeds it,
  // with replacement otherwise. Isolated nodes stay empty.
  static Neighborhood sampled(const ProvenanceGraph& graph, int fanout, std::mt19937_64& rng);
};

// One GraphSAGE-mean layer: h' = ReLU([h || mean(h_N)] W + b), W is (2 d_in) x d_out.
struct LayerParams {
  Matrix weight;
  Matrix bias;  // 1 x d_out
};

struct DenseParams {
  Matrix weight;
  Matrix bias;  // 1 x d_out
};

struct EncoderModel {
  int input_dim = 0;
  std::vector<LayerParams> layers;
  DenseParams classifier_hidden;
  DenseParams classifier_out;
  TrainConfig config;
  std::vector<double> loss_history;

  static EncoderModel initialize(int input_dim, const TrainConfig& config);

  int embedding_dim() const;
  // Parameter blocks in a fixed order: per layer (W, b), then the classifier.
  std::vector<Matrix*> parameters();
  std::vector<const Matrix*> parameters() const;

  nlohmann::json to_json() const;
  static EncoderModel from_json(const nlohmann::json& j);
  bool operator==(const EncoderModel& other) const;
};

// Inference pass over full neighbourhoods; no dropout. Returns n x 15.
Matrix forward(const EncoderModel& model, const ProvenanceGraph& graph, const Matrix& features);
Matrix forward(const EncoderModel& model, std::span<const Neighborhood> hoods, const Matrix& features);

// Row-wise softmax of the classifier head over the embeddings. n x 4.
Matrix classify_types(const EncoderModel& model, const Matrix& embeddings);

std::vector<int> node_type_labels(const ProvenanceGraph& graph);

struct LossAndGradient {
  double loss = 0.0;
  std::vector<Matrix> gradients;  // aligned with EncoderModel::parameters()
};

// Mean negative log-likelihood over batch rows and its exact gradient.
// dropout_rng == nullptr disables dropout.
LossAndGradient nll_loss_and_gradient(const EncoderModel& model, std::span<const Neighborhood> hoods,
                                      const Matrix& features, std::span<const int> labels,
                                      std::span<const std::uint32_t> batch, double dropout,
                                      std::mt19937_64* dropout_rng);

// Self-supervised training on node-type classification with Adam.
// Throws DivergenceError on a non-finite loss.
EncoderModel train_encoder(const ProvenanceGraph& graph, const Matrix& features,
                           std::span<const int> node_types, const TrainConfig& config);

double type_accuracy(const EncoderModel& model, const ProvenanceGraph& graph, const Matrix& features,
                     std::span<const int> node_types);

struct ProcessEmbeddings {
  std::vector<std::string> keys;
  Matrix values;
};

ProcessEmbeddings embed_processes(const EncoderModel& model, const ProvenanceGraph& graph,
                                  const Matrix& features);

}  // namespace aptmcl
