#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "gemplus/measurements.hpp"
#include "gemplus/privacy.hpp"
#include "gemplus/table.hpp"

namespace gemplus {

struct DenseLayer {
  Eigen::MatrixXd weight;  // fan_in x fan_out
  Eigen::RowVectorXd bias;

  bool operator==(const DenseLayer& o) const {
    return weight == o.weight && bias == o.bias;
  }
};

struct GeneratorArch {
  std::optional<std::size_t> latent_dim;           // default: d
  std::optional<std::vector<std::size_t>> hidden;  // default: 2 x max(4d, 128)
  std::size_t batch_size = 1024;                   // rows of the latent batch
  std::uint64_t seed = 0;
};

// Per-column categorical probabilities for a batch of latent rows. Column j
// occupies probs.middleCols(offset(j), cardinality(j)).
class SoftRows {
 public:
  SoftRows() = default;
  SoftRows(Eigen::MatrixXd probs, std::vector<std::size_t> offsets,
           std::vector<std::size_t> cards)
      : probs_(std::move(probs)),
        offsets_(std::move(offsets)),
        cards_(std::move(cards)) {}

  std::size_t batch() const { return static_cast<std::size_t>(probs_.rows()); }
  std::size_t columns() const { return cards_.size(); }
  std::size_t offset(std::size_t j) const { return offsets_[j]; }
  std::size_t cardinality(std::size_t j) const { return cards_[j]; }
  auto block(std::size_t j) const {
    return probs_.middleCols(static_cast<Eigen::Index>(offsets_[j]),
                             static_cast<Eigen::Index>(cards_[j]));
  }
  const Eigen::MatrixXd& probs() const { return probs_; }

 private:
  Eigen::MatrixXd probs_;
  std::vector<std::size_t> offsets_;
  std::vector<std::size_t> cards_;
};

// Fully connected ReLU network from a fixed Gaussian latent batch to
// per-column softmax outputs.
class GeneratorModel {
 public:
  GeneratorModel() = default;
  GeneratorModel(const Schema& schema, const GeneratorArch& arch);

  const Schema& schema() const { return schema_; }
  std::size_t latent_dim() const { return latent_dim_; }
  const std::vector<std::size_t>& hidden_dims() const { return hidden_; }
  std::size_t batch_size() const { return static_cast<std::size_t>(latent_.rows()); }
  std::uint64_t seed() const { return seed_; }
  std::size_t output_width() const { return offsets_.back(); }
  const std::vector<std::size_t>& offsets() const { return offsets_; }
  const Eigen::MatrixXd& latent() const { return latent_; }

  std::vector<DenseLayer>& layers() { return layers_; }
  const std::vector<DenseLayer>& layers() const { return layers_; }
  std::size_t parameter_count() const;

  bool same_architecture(const GeneratorModel& other) const;
  bool operator==(const GeneratorModel& other) const;

  nlohmann::json to_json() const;
  static GeneratorModel from_json(const nlohmann::json& j);

 private:
  Schema schema_;
  std::size_t latent_dim_ = 0;
  std::vector<std::size_t> hidden_;
  std::uint64_t seed_ = 0;
  std::vector<std::size_t> offsets_;  // d + 1 cumulative cardinalities
  std::vector<DenseLayer> layers_;
  Eigen::MatrixXd latent_;  // B x latent_dim, fixed
};

GeneratorModel init_generator(const Schema& schema, const GeneratorArch& arch);

// Network applied to the fixed latent batch.
SoftRows forward(const GeneratorModel& model);
// Network applied to arbitrary latent rows (rows x latent_dim).
SoftRows forward(const GeneratorModel& model, const Eigen::MatrixXd& latents);

// (1/B) sum_b prod_{j in query} p_b[j][v_j], flattened row-major.
MarginalVector soft_marginal(const SoftRows& rows, const MarginalQuery& query);

// Per-measurement normalized targets and the loss defined over them.
struct LossTerm {
  MarginalQuery query;
  std::vector<double> target;  // estimate / n
};
std::vector<LossTerm> loss_terms(const MeasurementStore& store, double n);

// Mean over stored measurements of || soft_marginal - estimate / n ||_1.
double loss(const GeneratorModel& model, const MeasurementStore& store,
            double n);
double loss(const GeneratorModel& model, std::span<const LossTerm> terms);

// Gradient of the loss with respect to every layer parameter.
struct Gradients {
  std::vector<DenseLayer> layers;
  double loss = 0.0;
};
Gradients loss_gradient(const GeneratorModel& model,
                        std::span<const LossTerm> terms);

enum class OptimizerKind { adam, sgd };

struct TrainConfig {
  std::size_t max_iters = 1000;
  double learning_rate = 1e-3;
  double early_stop_tol = 1e-4;
  std::size_t early_stop_patience = 10;
  OptimizerKind optimizer = OptimizerKind::adam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  // 0 uses every stored measurement per step; otherwise a cyclic window of
  // this many measurements.
  std::size_t measurement_batch = 0;

  void validate() const;
};

struct FitResult {
  double initial_loss = 0.0;
  double final_loss = 0.0;
  std::size_t iters = 0;
};

// Full-batch first-order training on the stored measurements. Stops early
// once the relative loss change stays below early_stop_tol for
// early_stop_patience consecutive iterations.
FitResult fit_round(GeneratorModel& model, const MeasurementStore& store,
                    double n, const TrainConfig& cfg);

// Rows drawn by pushing fresh standard-normal latents through the network
// and sampling each column independently.
DiscreteTable sample(const GeneratorModel& model, std::size_t n_out, Rng& rng);

// Parameter-space exponential moving average over `models` in order.
GeneratorModel ema_combine(std::span<const GeneratorModel> models,
                           double decay);

}  // namespace gemplus
