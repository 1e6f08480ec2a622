#include "aptmcl/gnn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "aptmcl/errors.hpp"

namespace aptmcl {

using nlohmann::json;

namespace {

constexpr int kEncoderFormatVersion = 1;
constexpr std::uint64_t kStreamSalt = 0x9E3779B97F4A7C15ULL;

Matrix glorot(int rows, int cols, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

Matrix aggregate_mean(const Neighborhood& hood, const Matrix& h) {
  Matrix m = Matrix::Zero(h.rows(), h.cols());
  for (Eigen::Index v = 0; v < h.rows(); ++v) {
    const auto nb = hood.of(static_cast<std::size_t>(v));
    if (nb.empty()) continue;
    for (auto u : nb) m.row(v) += h.row(u);
    m.row(v) /= static_cast<double>(nb.size());
  }
  return m;
}

void scatter_mean_gradient(const Neighborhood& hood, const Matrix& dm, Matrix& dh) {
  for (Eigen::Index v = 0; v < dm.rows(); ++v) {
    const auto nb = hood.of(static_cast<std::size_t>(v));
    if (nb.empty()) continue;
    const double scale = 1.0 / static_cast<double>(nb.size());
    for (auto u : nb) dh.row(u) += dm.row(v) * scale;
  }
}

Matrix affine(const Matrix& x, const Matrix& w, const Matrix& b) {
  Matrix z = x * w;
  z.rowwise() += b.row(0);
  return z;
}

Matrix relu(const Matrix& z) { return z.cwiseMax(0.0); }

Matrix relu_mask(const Matrix& z) { return (z.array() > 0.0).cast<double>().matrix(); }

Matrix dropout_mask(Eigen::Index rows, Eigen::Index cols, double p, std::mt19937_64& rng) {
  std::bernoulli_distribution keep(1.0 - p);
  const double scale = 1.0 / (1.0 - p);
  Matrix mask(rows, cols);
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = keep(rng) ? scale : 0.0;
  return mask;
}

Matrix softmax_rows(const Matrix& logits) {
  Matrix p(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double mx = logits.row(r).maxCoeff();
    p.row(r) = (logits.row(r).array() - mx).exp().matrix();
    p.row(r) /= p.row(r).sum();
  }
  return p;
}

struct LayerCache {
  Matrix concat;
  Matrix pre;
  Matrix drop;  // empty when dropout is off for this layer
};

struct ForwardCache {
  std::vector<LayerCache> layers;
  Matrix embedding;
  Matrix hidden_pre;
  Matrix hidden_drop;
  Matrix hidden;  // post-activation, post-dropout
  Matrix logits;
};

void check_input(const EncoderModel& model, std::span<const Neighborhood> hoods, const Matrix& x) {
  if (x.cols() != model.input_dim) {
    throw DimensionError("feature width " + std::to_string(x.cols()) + " does not match encoder input " +
                         std::to_string(model.input_dim));
  }
  if (hoods.size() != model.layers.size()) throw DimensionError("one neighbourhood per layer required");
  for (const auto& h : hoods) {
    if (h.size() != static_cast<std::size_t>(x.rows())) {
      throw DimensionError("feature rows " + std::to_string(x.rows()) + " do not match node count " +
                           std::to_string(h.size()));
    }
  }
}

Matrix run_forward(const EncoderModel& model, std::span<const Neighborhood> hoods, const Matrix& x,
                   double dropout, std::mt19937_64* rng, ForwardCache* cache) {
  check_input(model, hoods, x);
  const bool train = rng != nullptr && dropout > 0.0;
  Matrix h = x;
  if (cache) cache->layers.resize(model.layers.size());
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const auto& layer = model.layers[l];
    Matrix concat(h.rows(), 2 * h.cols());
    concat.leftCols(h.cols()) = h;
    concat.rightCols(h.cols()) = aggregate_mean(hoods[l], h);
    Matrix pre = affine(concat, layer.weight, layer.bias);
    h = relu(pre);
    Matrix drop;
    if (train && l + 1 < model.layers.size()) {
      drop = dropout_mask(h.rows(), h.cols(), dropout, *rng);
      h = h.cwiseProduct(drop);
    }
    if (cache) cache->layers[l] = LayerCache{std::move(concat), std::move(pre), std::move(drop)};
  }
  if (cache) {
    cache->embedding = h;
    cache->hidden_pre = affine(h, model.classifier_hidden.weight, model.classifier_hidden.bias);
    cache->hidden = relu(cache->hidden_pre);
    if (train) {
      cache->hidden_drop = dropout_mask(cache->hidden.rows(), cache->hidden.cols(), dropout, *rng);
      cache->hidden = cache->hidden.cwiseProduct(cache->hidden_drop);
    }
    cache->logits = affine(cache->hidden, model.classifier_out.weight, model.classifier_out.bias);
  }
  return h;
}

json matrix_to_json(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    rows.push_back(std::vector<double>(m.row(r).data(), m.row(r).data() + m.cols()));
  }
  return json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", rows}};
}

Matrix matrix_from_json(const json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  Matrix m(rows, cols);
  const auto& data = j.at("data");
  if (static_cast<Eigen::Index>(data.size()) != rows) throw ArtifactError("matrix row count mismatch");
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto row = data[static_cast<std::size_t>(r)].get<std::vector<double>>();
    if (static_cast<Eigen::Index>(row.size()) != cols) throw ArtifactError("matrix column count mismatch");
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = row[static_cast<std::size_t>(c)];
  }
  return m;
}

}  // namespace

// ---------------------------------------------------------------------------

void TrainConfig::validate() const {
  if (!(learning_rate > 0)) throw ConfigError("learning_rate must be positive");
  if (weight_decay < 0) throw ConfigError("weight_decay must be non-negative");
  if (epochs <= 0) throw ConfigError("epochs must be positive");
  if (minibatch_nodes <= 0) throw ConfigError("minibatch_nodes must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
  if (neighbor_samples[0] <= 0 || neighbor_samples[1] <= 0) throw ConfigError("neighbor_samples must be positive");
  if (hidden_dim <= 0 || embedding_dim <= 0 || classifier_hidden <= 0) throw ConfigError("dimensions must be positive");
}

json TrainConfig::to_json() const {
  return json{{"learning_rate", learning_rate},
              {"weight_decay", weight_decay},
              {"epochs", epochs},
              {"minibatch_nodes", minibatch_nodes},
              {"dropout", dropout},
              {"neighbor_samples", neighbor_samples},
              {"full_neighborhood_limit", full_neighborhood_limit},
              {"hidden_dim", hidden_dim},
              {"embedding_dim", embedding_dim},
              {"classifier_hidden", classifier_hidden},
              {"rng_seed", rng_seed}};
}

TrainConfig TrainConfig::from_json(const json& j) {
  TrainConfig c;
  try {
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.epochs = j.value("epochs", c.epochs);
    c.minibatch_nodes = j.value("minibatch_nodes", c.minibatch_nodes);
    c.dropout = j.value("dropout", c.dropout);
    c.neighbor_samples = j.value("neighbor_samples", c.neighbor_samples);
    c.full_neighborhood_limit = j.value("full_neighborhood_limit", c.full_neighborhood_limit);
    c.hidden_dim = j.value("hidden_dim", c.hidden_dim);
    c.embedding_dim = j.value("embedding_dim", c.embedding_dim);
    c.classifier_hidden = j.value("classifier_hidden", c.classifier_hidden);
    c.rng_seed = j.value("rng_seed", c.rng_seed);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

Neighborhood Neighborhood::full(const ProvenanceGraph& graph) {
  Neighborhood h;
  h.offsets.reserve(graph.node_count() + 1);
  h.offsets.push_back(0);
  for (std::size_t v = 0; v < graph.node_count(); ++v) {
    const auto nb = graph.neighbors(v);
    h.list.insert(h.list.end(), nb.begin(), nb.end());
    h.offsets.push_back(static_cast<std::uint32_t>(h.list.size()));
  }
  return h;
}

Neighborhood Neighborhood::sampled(const ProvenanceGraph& graph, int fanout, std::mt19937_64& rng) {
  Neighborhood h;
  h.offsets.push_back(0);
  std::vector<std::uint32_t> pool;
  for (std::size_t v = 0; v < graph.node_count(); ++v) {
    const auto nb = graph.neighbors(v);
    const auto k = static_cast<std::size_t>(fanout);
    if (!nb.empty()) {
      if (nb.size() > k) {
        pool.assign(nb.begin(), nb.end());
        for (std::size_t i = 0; i < k; ++i) {
          std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
          std::swap(pool[i], pool[pick(rng)]);
          h.list.push_back(pool[i]);
        }
      } else {
        std::uniform_int_distribution<std::size_t> pick(0, nb.size() - 1);
        for (std::size_t i = 0; i < k; ++i) h.list.push_back(nb[pick(rng)]);
      }
    }
    h.offsets.push_back(static_cast<std::uint32_t>(h.list.size()));
  }
  return h;
}

EncoderModel EncoderModel::initialize(int input_dim, const TrainConfig& config) {
  config.validate();
  if (input_dim <= 0) throw DimensionError("encoder input width must be positive");
  EncoderModel m;
  m.input_dim = input_dim;
  m.config = config;
  std::mt19937_64 rng(config.rng_seed);
  const std::array<int, 3> dims = {input_dim, config.hidden_dim, config.embedding_dim};
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    m.layers.push_back(LayerParams{glorot(2 * dims[l], dims[l + 1], rng), Matrix::Zero(1, dims[l + 1])});
  }
  m.classifier_hidden = DenseParams{glorot(config.embedding_dim, config.classifier_hidden, rng),
                                    Matrix::Zero(1, config.classifier_hidden)};
  m.classifier_out = DenseParams{glorot(config.classifier_hidden, kNumNodeTypes, rng),
                                 Matrix::Zero(1, kNumNodeTypes)};
  return m;
}

int EncoderModel::embedding_dim() const {
  return layers.empty() ? 0 : static_cast<int>(layers.back().weight.cols());
}

std::vector<Matrix*> EncoderModel::parameters() {
  std::vector<Matrix*> p;
  for (auto& l : layers) {
    p.push_back(&l.weight);
    p.push_back(&l.bias);
  }
  p.push_back(&classifier_hidden.weight);
  p.push_back(&classifier_hidden.bias);
  p.push_back(&classifier_out.weight);
  p.push_back(&classifier_out.bias);
  return p;
}

std::vector<const Matrix*> EncoderModel::parameters() const {
  auto mut = const_cast<EncoderModel*>(this)->parameters();
  return {mut.begin(), mut.end()};
}

bool EncoderModel::operator==(const EncoderModel& other) const {
  if (input_dim != other.input_dim || layers.size() != other.layers.size()) return false;
  const auto a = parameters();
  const auto b = other.parameters();
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i]->rows() != b[i]->rows() || a[i]->cols() != b[i]->cols() || *a[i] != *b[i]) return false;
  }
  return loss_history == other.loss_history;
}

json EncoderModel::to_json() const {
  json layers_json = json::array();
  for (const auto& l : layers) {
    layers_json.push_back(json{{"weight", matrix_to_json(l.weight)}, {"bias", matrix_to_json(l.bias)}});
  }
  return json{{"format", "aptmcl.encoder"},
              {"version", kEncoderFormatVersion},
              {"input_dim", input_dim},
              {"embedding_dim", embedding_dim()},
              {"seed", config.rng_seed},
              {"config", config.to_json()},
              {"layers", layers_json},
              {"classifier_hidden",
               json{{"weight", matrix_to_json(classifier_hidden.weight)},
                    {"bias", matrix_to_json(classifier_hidden.bias)}}},
              {"classifier_out",
               json{{"weight", matrix_to_json(classifier_out.weight)},
                    {"bias", matrix_to_json(classifier_out.bias)}}},
              {"loss_history", loss_history}};
}

EncoderModel EncoderModel::from_json(const json& j) {
  try {
    if (j.at("format") != "aptmcl.encoder") throw ArtifactError("not an encoder dump");
    if (j.at("version").get<int>() != kEncoderFormatVersion) throw ArtifactError("unsupported encoder version");
    EncoderModel m;
    m.input_dim = j.at("input_dim").get<int>();
    m.config = TrainConfig::from_json(j.at("config"));
    for (const auto& l : j.at("layers")) {
      m.layers.push_back(LayerParams{matrix_from_json(l.at("weight")), matrix_from_json(l.at("bias"))});
    }
    m.classifier_hidden = DenseParams{matrix_from_json(j.at("classifier_hidden").at("weight")),
                                      matrix_from_json(j.at("classifier_hidden").at("bias"))};
    m.classifier_out = DenseParams{matrix_from_json(j.at("classifier_out").at("weight")),
                                   matrix_from_json(j.at("classifier_out").at("bias"))};
    m.loss_history = j.at("loss_history").get<std::vector<double>>();
    return m;
  } catch (const json::exception& e) {
    throw ArtifactError(std::string("malformed encoder dump: ") + e.what());
  }
}

// ---------------------------------------------------------------------------

Matrix forward(const EncoderModel& model, std::span<const Neighborhood> hoods, const Matrix& features) {
  return run_forward(model, hoods, features, 0.0, nullptr, nullptr);
}

Matrix forward(const EncoderModel& model, const ProvenanceGraph& graph, const Matrix& features) {
  if (static_cast<std::size_t>(features.rows()) != graph.node_count()) {
    throw DimensionError("feature rows " + std::to_string(features.rows()) + " do not match node count " +
                         std::to_string(graph.node_count()));
  }
  const std::vector<Neighborhood> hoods(model.layers.size(), Neighborhood::full(graph));
  return forward(model, hoods, features);
}

Matrix classify_types(const EncoderModel& model, const Matrix& embeddings) {
  if (embeddings.cols() != model.classifier_hidden.weight.rows()) {
    throw DimensionError("embedding width " + std::to_string(embeddings.cols()) + " does not match classifier input " +
                         std::to_string(model.classifier_hidden.weight.rows()));
  }
  const Matrix hidden = relu(affine(embeddings, model.classifier_hidden.weight, model.classifier_hidden.bias));
  return softmax_rows(affine(hidden, model.classifier_out.weight, model.classifier_out.bias));
}

std::vector<int> node_type_labels(const ProvenanceGraph& graph) {
  std::vector<int> labels;
  labels.reserve(graph.node_count());
  for (const auto& n : graph.nodes()) labels.push_back(static_cast<int>(n.type));
  return labels;
}

LossAndGradient nll_loss_and_gradient(const EncoderModel& model, std::span<const Neighborhood> hoods,
                                      const Matrix& features, std::span<const int> labels,
                                      std::span<const std::uint32_t> batch, double dropout,
                                      std::mt19937_64* dropout_rng) {
  if (labels.size() != static_cast<std::size_t>(features.rows())) throw DimensionError("one label per node required");
  if (batch.empty()) throw InputError("empty training batch");
  ForwardCache cache;
  run_forward(model, hoods, features, dropout, dropout_rng, &cache);
  const Matrix probs = softmax_rows(cache.logits);

  LossAndGradient out;
  const double inv_batch = 1.0 / static_cast<double>(batch.size());
  Matrix d_logits = Matrix::Zero(probs.rows(), probs.cols());
  for (auto v : batch) {
    const int y = labels[v];
    out.loss -= std::log(std::max(probs(v, y), 1e-300)) * inv_batch;
    d_logits.row(v) = probs.row(v) * inv_batch;
    d_logits(v, y) -= inv_batch;
  }

  const std::size_t n_layers = model.layers.size();
  std::vector<Matrix> grads(2 * n_layers + 4);

  grads[2 * n_layers + 2] = cache.hidden.transpose() * d_logits;
  grads[2 * n_layers + 3] = d_logits.colwise().sum();
  Matrix d_hidden = d_logits * model.classifier_out.weight.transpose();
  if (cache.hidden_drop.size() > 0) d_hidden = d_hidden.cwiseProduct(cache.hidden_drop);
  Matrix d_hidden_pre = d_hidden.cwiseProduct(relu_mask(cache.hidden_pre));
  grads[2 * n_layers] = cache.embedding.transpose() * d_hidden_pre;
  grads[2 * n_layers + 1] = d_hidden_pre.colwise().sum();
  Matrix d_h = d_hidden_pre * model.classifier_hidden.weight.transpose();

  for (std::size_t l = n_layers; l-- > 0;) {
    const auto& lc = cache.layers[l];
    if (lc.drop.size() > 0) d_h = d_h.cwiseProduct(lc.drop);
    const Matrix d_pre = d_h.cwiseProduct(relu_mask(lc.pre));
    grads[2 * l] = lc.concat.transpose() * d_pre;
    grads[2 * l + 1] = d_pre.colwise().sum();
    if (l == 0) break;
    const Matrix d_concat = d_pre * model.layers[l].weight.transpose();
    const Eigen::Index width = d_concat.cols() / 2;
    Matrix d_prev = d_concat.leftCols(width);
    scatter_mean_gradient(hoods[l], d_concat.rightCols(width), d_prev);
    d_h = std::move(d_prev);
  }
  out.gradients = std::move(grads);
  return out;
}

EncoderModel train_encoder(const ProvenanceGraph& graph, const Matrix& features, std::span<const int> node_types,
                           const TrainConfig& config) {
  config.validate();
  const std::size_t n = graph.node_count();
  if (n == 0) throw InputError("cannot train an encoder on an empty graph");
  if (static_cast<std::size_t>(features.rows()) != n) throw DimensionError("feature rows do not match node count");
  if (node_types.size() != n) throw DimensionError("one node-type label per node required");
  for (int t : node_types) {
    if (t < 0 || t >= kNumNodeTypes) throw InputError("node-type label outside 0..3");
  }

  EncoderModel model = EncoderModel::initialize(static_cast<int>(features.cols()), config);
  std::mt19937_64 rng(config.rng_seed ^ kStreamSalt);

  const bool sample = n > config.full_neighborhood_limit;
  std::vector<Neighborhood> hoods;
  if (!sample) hoods.assign(model.layers.size(), Neighborhood::full(graph));

  auto params = model.parameters();
  std::vector<Matrix> m1, m2;
  for (auto* p : params) {
    m1.push_back(Matrix::Zero(p->rows(), p->cols()));
    m2.push_back(Matrix::Zero(p->rows(), p->cols()));
  }
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  long step = 0;

  std::vector<std::uint32_t> order(n);
  std::iota(order.begin(), order.end(), 0u);
  const auto batch_size = static_cast<std::size_t>(config.minibatch_nodes);

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < n; start += batch_size) {
      const std::size_t stop = std::min(n, start + batch_size);
      std::span<const std::uint32_t> batch(order.data() + start, stop - start);
      if (sample) {
        hoods.clear();
        for (std::size_t l = 0; l < model.layers.size(); ++l) {
          hoods.push_back(Neighborhood::sampled(graph, config.neighbor_samples[std::min<std::size_t>(l, 1)], rng));
        }
      }
      auto lg = nll_loss_and_gradient(model, hoods, features, node_types, batch, config.dropout, &rng);
      if (!std::isfinite(lg.loss)) {
        throw DivergenceError("encoder training diverged at epoch " + std::to_string(epoch));
      }
      epoch_loss += lg.loss * static_cast<double>(batch.size());
      ++step;
      const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(step));
      for (std::size_t i = 0; i < params.size(); ++i) {
        Matrix g = lg.gradients[i] + config.weight_decay * *params[i];
        m1[i] = kBeta1 * m1[i] + (1.0 - kBeta1) * g;
        m2[i] = kBeta2 * m2[i] + (1.0 - kBeta2) * g.cwiseProduct(g);
        *params[i] -= (config.learning_rate * (m1[i] / c1).array() / ((m2[i] / c2).array().sqrt() + kEps)).matrix();
      }
    }
    epoch_loss /= static_cast<double>(n);
    if (!std::isfinite(epoch_loss)) {
      throw DivergenceError("encoder training diverged at epoch " + std::to_string(epoch));
    }
    model.loss_history.push_back(epoch_loss);
  }
  return model;
}

double type_accuracy(const EncoderModel& model, const ProvenanceGraph& graph, const Matrix& features,
                     std::span<const int> node_types) {
  const Matrix probs = classify_types(model, forward(model, graph, features));
  std::size_t correct = 0;
  for (Eigen::Index r = 0; r < probs.rows(); ++r) {
    Eigen::Index best = 0;
    probs.row(r).maxCoeff(&best);
    if (best == node_types[static_cast<std::size_t>(r)]) ++correct;
  }
  return probs.rows() == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(probs.rows());
}

ProcessEmbeddings embed_processes(const EncoderModel& model, const ProvenanceGraph& graph, const Matrix& features) {
  ProcessEmbeddings out;
  const auto procs = graph.nodes_of_type(NodeType::kProcess);
  out.values.resize(static_cast<Eigen::Index>(procs.size()), model.embedding_dim());
  if (procs.empty()) return out;
  const Matrix all = forward(model, graph, features);
  for (std::size_t i = 0; i < procs.size(); ++i) {
    out.keys.push_back(graph.node(procs[i]).key);
    out.values.row(static_cast<Eigen::Index>(i)) = all.row(static_cast<Eigen::Index>(procs[i]));
  }
  return out;
}

}  // namespace aptmcl
