#include "gemplus/generator.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "gemplus/error.hpp"
#include "gemplus/workload.hpp"

namespace gemplus {

namespace {

constexpr int kModelFormatVersion = 1;
constexpr std::uint64_t kLatentStream = 1;
constexpr std::uint64_t kWeightStream = 2;
constexpr Eigen::Index kSampleChunk = 4096;

Eigen::MatrixXd gaussian_matrix(Eigen::Index rows, Eigen::Index cols,
                                Rng& rng) {
  Eigen::MatrixXd m(rows, cols);
  // Row-major draw order so that the first rows do not depend on `rows`.
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = rng.normal();
  }
  return m;
}

std::vector<std::size_t> cardinalities_of(const GeneratorModel& model) {
  return model.schema().cardinalities();
}

struct ForwardCache {
  // acts[0] is the latent input; acts[l] the ReLU output of hidden layer l.
  std::vector<Eigen::MatrixXd> acts;
  Eigen::MatrixXd probs;
};

void softmax_blocks(Eigen::MatrixXd& logits,
                    const std::vector<std::size_t>& offsets) {
  for (std::size_t j = 0; j + 1 < offsets.size(); ++j) {
    auto block = logits.middleCols(static_cast<Eigen::Index>(offsets[j]),
                                   static_cast<Eigen::Index>(offsets[j + 1] -
                                                             offsets[j]));
    const Eigen::VectorXd row_max = block.rowwise().maxCoeff();
    block.colwise() -= row_max;
    block = block.array().exp().matrix();
    const Eigen::VectorXd row_sum = block.rowwise().sum();
    block.array().colwise() /= row_sum.array();
  }
}

ForwardCache run_network(const GeneratorModel& model,
                         const Eigen::MatrixXd& latents) {
  if (static_cast<std::size_t>(latents.cols()) != model.latent_dim()) {
    throw std::invalid_argument("latent width does not match the model");
  }
  ForwardCache cache;
  const auto& layers = model.layers();
  cache.acts.reserve(layers.size());
  cache.acts.push_back(latents);
  for (std::size_t l = 0; l + 1 < layers.size(); ++l) {
    Eigen::MatrixXd a;
    a.noalias() = cache.acts.back() * layers[l].weight;
    a.rowwise() += layers[l].bias;
    cache.acts.push_back(a.cwiseMax(0.0));
  }
  cache.probs.noalias() = cache.acts.back() * layers.back().weight;
  cache.probs.rowwise() += layers.back().bias;
  softmax_blocks(cache.probs, model.offsets());
  if (!cache.probs.allFinite()) {
    throw NumericError("generator produced non-finite activations; reduce "
                       "the learning rate");
  }
  return cache;
}

// Partial outer products of the query's probability blocks:
// stages[i] = P_{j0} (x) ... (x) P_{ji}, row-wise, B x prod K.
std::vector<Eigen::MatrixXd> product_stages(const Eigen::MatrixXd& probs,
                                            const std::vector<std::size_t>& offsets,
                                            const MarginalQuery& query,
                                            std::size_t count) {
  std::vector<Eigen::MatrixXd> stages;
  stages.reserve(count);
  const auto& cols = query.cols();
  for (std::size_t i = 0; i < count; ++i) {
    const auto j = static_cast<std::size_t>(cols[i]);
    const auto o = static_cast<Eigen::Index>(offsets[j]);
    const auto k = static_cast<Eigen::Index>(offsets[j + 1] - offsets[j]);
    if (i == 0) {
      stages.emplace_back(probs.middleCols(o, k));
      continue;
    }
    const Eigen::MatrixXd& prev = stages.back();
    Eigen::MatrixXd next(probs.rows(), prev.cols() * k);
    for (Eigen::Index a = 0; a < prev.cols(); ++a) {
      for (Eigen::Index v = 0; v < k; ++v) {
        next.col(a * k + v) = prev.col(a).cwiseProduct(probs.col(o + v));
      }
    }
    stages.push_back(std::move(next));
  }
  return stages;
}

std::vector<double> soft_marginal_values(const Eigen::MatrixXd& probs,
                                         const std::vector<std::size_t>& offsets,
                                         const MarginalQuery& query) {
  const double inv_b = 1.0 / static_cast<double>(probs.rows());
  const std::size_t k = query.arity();
  if (k == 0) return {1.0};
  const auto last = static_cast<std::size_t>(query.cols().back());
  const auto o = static_cast<Eigen::Index>(offsets[last]);
  const auto kl = static_cast<Eigen::Index>(offsets[last + 1] - offsets[last]);
  if (k == 1) {
    const Eigen::RowVectorXd m = probs.middleCols(o, kl).colwise().sum() * inv_b;
    return std::vector<double>(m.data(), m.data() + m.size());
  }
  const auto stages = product_stages(probs, offsets, query, k - 1);
  const Eigen::MatrixXd m =
      (stages.back().transpose() * probs.middleCols(o, kl)) * inv_b;
  std::vector<double> out(static_cast<std::size_t>(m.size()));
  for (Eigen::Index a = 0; a < m.rows(); ++a) {
    for (Eigen::Index v = 0; v < kl; ++v) {
      out[static_cast<std::size_t>(a * kl + v)] = m(a, v);
    }
  }
  return out;
}

// Accumulates d(sum_c g[c] * m[c]) / d probs into dprobs, where m is the
// query's soft marginal.
void soft_marginal_backward(const Eigen::MatrixXd& probs,
                            const std::vector<std::size_t>& offsets,
                            const MarginalQuery& query,
                            const std::vector<double>& g,
                            Eigen::MatrixXd& dprobs) {
  const double inv_b = 1.0 / static_cast<double>(probs.rows());
  const auto& cols = query.cols();
  const std::size_t k = cols.size();
  auto block_of = [&](std::size_t i) {
    const auto j = static_cast<std::size_t>(cols[i]);
    return std::pair<Eigen::Index, Eigen::Index>(
        static_cast<Eigen::Index>(offsets[j]),
        static_cast<Eigen::Index>(offsets[j + 1] - offsets[j]));
  };
  if (k == 1) {
    const auto [o, kl] = block_of(0);
    const Eigen::Map<const Eigen::RowVectorXd> gv(g.data(), kl);
    dprobs.middleCols(o, kl).rowwise() += gv * inv_b;
    return;
  }
  const auto stages = product_stages(probs, offsets, query, k - 1);
  const auto [o_last, k_last] = block_of(k - 1);
  const Eigen::Index n_prev = stages.back().cols();
  Eigen::MatrixXd gmat(n_prev, k_last);
  for (Eigen::Index a = 0; a < n_prev; ++a) {
    for (Eigen::Index v = 0; v < k_last; ++v) {
      gmat(a, v) = g[static_cast<std::size_t>(a * k_last + v)] * inv_b;
    }
  }
  dprobs.middleCols(o_last, k_last).noalias() += stages.back() * gmat;
  Eigen::MatrixXd dstage = probs.middleCols(o_last, k_last) * gmat.transpose();

  for (std::size_t i = k - 1; i-- > 1;) {
    // stages[i](b, a*K + v) = stages[i-1](b, a) * P_i(b, v)
    const auto [o, kk] = block_of(i);
    const Eigen::MatrixXd& prev = stages[i - 1];
    Eigen::MatrixXd dprev = Eigen::MatrixXd::Zero(prev.rows(), prev.cols());
    for (Eigen::Index a = 0; a < prev.cols(); ++a) {
      for (Eigen::Index v = 0; v < kk; ++v) {
        const auto c = dstage.col(a * kk + v);
        dprobs.col(o + v) += c.cwiseProduct(prev.col(a));
        dprev.col(a) += c.cwiseProduct(probs.col(o + v));
      }
    }
    dstage = std::move(dprev);
  }
  const auto [o0, k0] = block_of(0);
  dprobs.middleCols(o0, k0) += dstage;
}

double l1_term(const std::vector<double>& m, const std::vector<double>& t,
               std::vector<double>* sign) {
  double s = 0.0;
  if (sign) sign->resize(m.size());
  for (std::size_t c = 0; c < m.size(); ++c) {
    const double diff = m[c] - t[c];
    s += std::abs(diff);
    if (sign) (*sign)[c] = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
  }
  return s;
}

std::vector<DenseLayer> zeros_like(const std::vector<DenseLayer>& layers) {
  std::vector<DenseLayer> out;
  out.reserve(layers.size());
  for (const auto& l : layers) {
    out.push_back({Eigen::MatrixXd::Zero(l.weight.rows(), l.weight.cols()),
                   Eigen::RowVectorXd::Zero(l.bias.size())});
  }
  return out;
}

Gradients gradient_impl(const GeneratorModel& model,
                        std::span<const LossTerm> terms) {
  if (terms.empty()) {
    throw std::invalid_argument("loss over an empty measurement set");
  }
  const ForwardCache cache = run_network(model, model.latent());
  const auto& probs = cache.probs;
  const auto& offsets = model.offsets();
  const double inv_m = 1.0 / static_cast<double>(terms.size());

  Gradients grads;
  Eigen::MatrixXd dprobs = Eigen::MatrixXd::Zero(probs.rows(), probs.cols());
  std::vector<double> sign;
  double total = 0.0;
  for (const auto& term : terms) {
    const auto m = soft_marginal_values(probs, offsets, term.query);
    total += l1_term(m, term.target, &sign);
    for (double& s : sign) s *= inv_m;
    soft_marginal_backward(probs, offsets, term.query, sign, dprobs);
  }
  grads.loss = total * inv_m;
  if (!std::isfinite(grads.loss)) throw NumericError("non-finite loss");

  // Softmax backward per column block.
  Eigen::MatrixXd dact(probs.rows(), probs.cols());
  for (std::size_t j = 0; j + 1 < offsets.size(); ++j) {
    const auto o = static_cast<Eigen::Index>(offsets[j]);
    const auto k = static_cast<Eigen::Index>(offsets[j + 1] - offsets[j]);
    const auto p = probs.middleCols(o, k);
    const auto dp = dprobs.middleCols(o, k);
    const Eigen::VectorXd inner = p.cwiseProduct(dp).rowwise().sum();
    dact.middleCols(o, k) =
        p.cwiseProduct(dp - inner.replicate(1, k));
  }

  const auto& layers = model.layers();
  grads.layers = zeros_like(layers);
  for (std::size_t l = layers.size(); l-- > 0;) {
    const Eigen::MatrixXd& input = cache.acts[l];
    grads.layers[l].weight.noalias() = input.transpose() * dact;
    grads.layers[l].bias = dact.colwise().sum();
    if (l == 0) break;
    Eigen::MatrixXd dh;
    dh.noalias() = dact * layers[l].weight.transpose();
    dact = (input.array() > 0.0).select(dh, 0.0);
  }
  return grads;
}

class Optimizer {
 public:
  Optimizer(const TrainConfig& cfg, const std::vector<DenseLayer>& layers)
      : cfg_(cfg) {
    if (cfg.optimizer == OptimizerKind::adam) {
      m_ = zeros_like(layers);
      v_ = zeros_like(layers);
    }
  }

  void step(std::vector<DenseLayer>& params,
            const std::vector<DenseLayer>& grads) {
    ++t_;
    const double lr = cfg_.learning_rate;
    if (cfg_.optimizer == OptimizerKind::sgd) {
      for (std::size_t l = 0; l < params.size(); ++l) {
        params[l].weight -= lr * grads[l].weight;
        params[l].bias -= lr * grads[l].bias;
      }
      return;
    }
    const double b1 = cfg_.beta1;
    const double b2 = cfg_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    const double step = lr * std::sqrt(c2) / c1;
    const double eps = cfg_.adam_eps * std::sqrt(c2);
    auto update = [&](auto& p, const auto& g, auto& m, auto& v) {
      m = b1 * m + (1.0 - b1) * g;
      v = b2 * v + (1.0 - b2) * g.cwiseAbs2();
      p.array() -= step * m.array() / (v.array().sqrt() + eps);
    };
    for (std::size_t l = 0; l < params.size(); ++l) {
      update(params[l].weight, grads[l].weight, m_[l].weight, v_[l].weight);
      update(params[l].bias, grads[l].bias, m_[l].bias, v_[l].bias);
    }
  }

 private:
  const TrainConfig& cfg_;
  std::vector<DenseLayer> m_;
  std::vector<DenseLayer> v_;
  long t_ = 0;
};

}  // namespace

// --- GeneratorModel --------------------------------------------------------

GeneratorModel::GeneratorModel(const Schema& schema, const GeneratorArch& arch)
    : schema_(schema), seed_(arch.seed) {
  const std::size_t d = schema.size();
  if (d == 0) throw std::invalid_argument("generator needs at least 1 column");
  if (arch.batch_size < 1) {
    throw std::invalid_argument("latent batch size must be >= 1");
  }
  latent_dim_ = arch.latent_dim.value_or(d);
  if (latent_dim_ < 1) throw std::invalid_argument("latent_dim must be >= 1");
  hidden_ = arch.hidden.value_or(
      std::vector<std::size_t>(2, std::max<std::size_t>(4 * d, 128)));
  for (std::size_t h : hidden_) {
    if (h == 0) throw std::invalid_argument("zero-width hidden layer");
  }
  offsets_.assign(1, 0);
  for (std::size_t j = 0; j < d; ++j) {
    offsets_.push_back(offsets_.back() + schema.cardinality(j));
  }

  Rng latent_rng(derive_seed(seed_, kLatentStream));
  latent_ = gaussian_matrix(static_cast<Eigen::Index>(arch.batch_size),
                            static_cast<Eigen::Index>(latent_dim_), latent_rng);

  Rng weight_rng(derive_seed(seed_, kWeightStream));
  std::vector<std::size_t> widths{latent_dim_};
  widths.insert(widths.end(), hidden_.begin(), hidden_.end());
  widths.push_back(output_width());
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const auto fan_in = static_cast<Eigen::Index>(widths[l]);
    const auto fan_out = static_cast<Eigen::Index>(widths[l + 1]);
    // He-uniform weights. Smaller scales leave the rows of the latent batch
    // nearly identical after the 1-way fit, and pairwise terms then cannot
    // separate them.
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    const double bias_bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    DenseLayer layer{Eigen::MatrixXd(fan_in, fan_out),
                     Eigen::RowVectorXd(fan_out)};
    for (Eigen::Index r = 0; r < fan_in; ++r) {
      for (Eigen::Index c = 0; c < fan_out; ++c) {
        layer.weight(r, c) = bound * (2.0 * weight_rng.uniform() - 1.0);
      }
    }
    for (Eigen::Index c = 0; c < fan_out; ++c) {
      layer.bias(c) = bias_bound * (2.0 * weight_rng.uniform() - 1.0);
    }
    layers_.push_back(std::move(layer));
  }
}

std::size_t GeneratorModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) {
    n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
  }
  return n;
}

bool GeneratorModel::same_architecture(const GeneratorModel& other) const {
  if (schema_.cardinalities() != other.schema_.cardinalities() ||
      latent_dim_ != other.latent_dim_ || hidden_ != other.hidden_ ||
      layers_.size() != other.layers_.size()) {
    return false;
  }
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    if (layers_[l].weight.rows() != other.layers_[l].weight.rows() ||
        layers_[l].weight.cols() != other.layers_[l].weight.cols()) {
      return false;
    }
  }
  return true;
}

bool GeneratorModel::operator==(const GeneratorModel& other) const {
  return schema_ == other.schema_ && same_architecture(other) &&
         seed_ == other.seed_ && layers_ == other.layers_ &&
         latent_ == other.latent_;
}

nlohmann::json GeneratorModel::to_json() const {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : layers_) {
    std::vector<double> w;
    w.reserve(static_cast<std::size_t>(l.weight.size()));
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) {
        w.push_back(l.weight(r, c));
      }
    }
    layers.push_back({{"fan_in", l.weight.rows()},
                      {"fan_out", l.weight.cols()},
                      {"weight", std::move(w)},
                      {"bias", std::vector<double>(l.bias.data(),
                                                   l.bias.data() + l.bias.size())}});
  }
  return {{"format_version", kModelFormatVersion},
          {"schema", schema_to_json(schema_)},
          {"latent_dim", latent_dim_},
          {"hidden_dims", hidden_},
          {"B", batch_size()},
          {"seed", seed_},
          {"layers", std::move(layers)}};
}

GeneratorModel GeneratorModel::from_json(const nlohmann::json& j) {
  try {
    if (j.at("format_version").get<int>() != kModelFormatVersion) {
      throw ConfigError("unsupported model format_version");
    }
    GeneratorArch arch;
    arch.latent_dim = j.at("latent_dim").get<std::size_t>();
    arch.hidden = j.at("hidden_dims").get<std::vector<std::size_t>>();
    arch.batch_size = j.at("B").get<std::size_t>();
    arch.seed = j.at("seed").get<std::uint64_t>();
    GeneratorModel model(schema_from_json(j.at("schema")), arch);
    const auto& jl = j.at("layers");
    if (jl.size() != model.layers_.size()) {
      throw ConfigError("model layer count does not match its architecture");
    }
    for (std::size_t l = 0; l < jl.size(); ++l) {
      auto& layer = model.layers_[l];
      const auto w = jl[l].at("weight").get<std::vector<double>>();
      const auto b = jl[l].at("bias").get<std::vector<double>>();
      if (jl[l].at("fan_in").get<Eigen::Index>() != layer.weight.rows() ||
          jl[l].at("fan_out").get<Eigen::Index>() != layer.weight.cols() ||
          w.size() != static_cast<std::size_t>(layer.weight.size()) ||
          b.size() != static_cast<std::size_t>(layer.bias.size())) {
        throw ConfigError("model layer " + std::to_string(l) +
                          " has the wrong shape");
      }
      std::size_t i = 0;
      for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
        for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) {
          layer.weight(r, c) = w[i++];
        }
      }
      for (Eigen::Index c = 0; c < layer.bias.size(); ++c) {
        layer.bias(c) = b[static_cast<std::size_t>(c)];
      }
    }
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed model JSON: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("invalid model: ") + e.what());
  }
}

GeneratorModel init_generator(const Schema& schema, const GeneratorArch& arch) {
  return GeneratorModel(schema, arch);
}

// --- Forward / marginals / loss -------------------------------------------

SoftRows forward(const GeneratorModel& model, const Eigen::MatrixXd& latents) {
  auto cache = run_network(model, latents);
  return SoftRows(std::move(cache.probs),
                  std::vector<std::size_t>(model.offsets().begin(),
                                           model.offsets().end() - 1),
                  cardinalities_of(model));
}

SoftRows forward(const GeneratorModel& model) {
  return forward(model, model.latent());
}

MarginalVector soft_marginal(const SoftRows& rows, const MarginalQuery& query) {
  for (int c : query.cols()) {
    if (static_cast<std::size_t>(c) >= rows.columns()) {
      throw std::invalid_argument("query " + query.str() +
                                  " is outside the generator's columns");
    }
  }
  std::vector<std::size_t> offsets;
  offsets.reserve(rows.columns() + 1);
  for (std::size_t j = 0; j < rows.columns(); ++j) offsets.push_back(rows.offset(j));
  offsets.push_back(rows.columns() == 0
                        ? 0
                        : rows.offset(rows.columns() - 1) +
                              rows.cardinality(rows.columns() - 1));
  return {query, soft_marginal_values(rows.probs(), offsets, query),
          MarginalSpace::normalized};
}

std::vector<LossTerm> loss_terms(const MeasurementStore& store, double n) {
  if (!(n > 0.0)) throw std::invalid_argument("record count must be positive");
  std::vector<LossTerm> terms;
  terms.reserve(store.size());
  for (const auto& [q, m] : store.entries()) {
    LossTerm t{q, m.estimate.values};
    for (double& x : t.target) x /= n;
    terms.push_back(std::move(t));
  }
  return terms;
}

double loss(const GeneratorModel& model, std::span<const LossTerm> terms) {
  if (terms.empty()) {
    throw std::invalid_argument("loss over an empty measurement set");
  }
  const auto cache = run_network(model, model.latent());
  double total = 0.0;
  for (const auto& term : terms) {
    const auto m = soft_marginal_values(cache.probs, model.offsets(), term.query);
    if (m.size() != term.target.size()) {
      throw std::invalid_argument("target length mismatch for " +
                                  term.query.str());
    }
    total += l1_term(m, term.target, nullptr);
  }
  return total / static_cast<double>(terms.size());
}

double loss(const GeneratorModel& model, const MeasurementStore& store,
            double n) {
  if (store.empty()) {
    throw std::invalid_argument("loss over an empty measurement store");
  }
  const auto terms = loss_terms(store, n);
  return loss(model, terms);
}

Gradients loss_gradient(const GeneratorModel& model,
                        std::span<const LossTerm> terms) {
  return gradient_impl(model, terms);
}

// --- Training --------------------------------------------------------------

void TrainConfig::validate() const {
  if (max_iters < 1) throw ConfigError("max_iters must be >= 1");
  if (early_stop_patience < 1) {
    throw ConfigError("early_stop_patience must be >= 1");
  }
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
  if (!(early_stop_tol >= 0.0)) throw ConfigError("early_stop_tol must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("Adam betas must lie in [0, 1)");
  }
}

FitResult fit_round(GeneratorModel& model, const MeasurementStore& store,
                    double n, const TrainConfig& cfg) {
  cfg.validate();
  if (store.empty()) {
    throw std::invalid_argument("fit_round needs at least one measurement");
  }
  const auto all_terms = loss_terms(store, n);
  const std::size_t window = cfg.measurement_batch == 0
                                 ? all_terms.size()
                                 : std::min(cfg.measurement_batch,
                                            all_terms.size());
  std::vector<LossTerm> batch;
  Optimizer opt(cfg, model.layers());

  FitResult result;
  double prev = 0.0;
  std::size_t streak = 0;
  for (std::size_t it = 0; it < cfg.max_iters; ++it) {
    std::span<const LossTerm> terms(all_terms);
    if (window < all_terms.size()) {
      batch.clear();
      for (std::size_t i = 0; i < window; ++i) {
        batch.push_back(all_terms[(it * window + i) % all_terms.size()]);
      }
      terms = batch;
    }
    Gradients g;
    try {
      g = gradient_impl(model, terms);
    } catch (const NumericError& e) {
      throw NumericError(std::string(e.what()) + " at iteration " +
                         std::to_string(it));
    }
    if (it == 0) {
      result.initial_loss = g.loss;
    } else {
      const double rel = std::abs(g.loss - prev) / std::max(prev, 1e-12);
      streak = rel < cfg.early_stop_tol ? streak + 1 : 0;
      if (streak >= cfg.early_stop_patience) break;
    }
    prev = g.loss;
    opt.step(model.layers(), g.layers);
    ++result.iters;
  }
  result.final_loss = loss(model, all_terms);
  if (!std::isfinite(result.final_loss)) {
    throw NumericError("non-finite loss after " +
                       std::to_string(result.iters) + " iterations");
  }
  return result;
}

// --- Sampling / EMA --------------------------------------------------------

DiscreteTable sample(const GeneratorModel& model, std::size_t n_out, Rng& rng) {
  const auto& schema = model.schema();
  const std::size_t d = schema.size();
  const auto& offsets = model.offsets();
  std::vector<std::vector<Category>> cols(d);
  for (auto& c : cols) c.reserve(n_out);

  std::size_t done = 0;
  while (done < n_out) {
    const auto rows = static_cast<Eigen::Index>(
        std::min<std::size_t>(static_cast<std::size_t>(kSampleChunk),
                              n_out - done));
    const Eigen::MatrixXd z =
        gaussian_matrix(rows, static_cast<Eigen::Index>(model.latent_dim()), rng);
    const auto cache = run_network(model, z);
    for (Eigen::Index r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < d; ++j) {
        const auto o = static_cast<Eigen::Index>(offsets[j]);
        const auto k = static_cast<Eigen::Index>(offsets[j + 1] - offsets[j]);
        const double u = rng.uniform();
        double cum = 0.0;
        Eigen::Index pick = -1;
        for (Eigen::Index v = 0; v < k; ++v) {
          cum += cache.probs(r, o + v);
          if (u < cum) {
            pick = v;
            break;
          }
        }
        if (pick < 0) {
          pick = k - 1;
          while (pick > 0 && cache.probs(r, o + pick) == 0.0) --pick;
        }
        cols[j].push_back(static_cast<Category>(pick));
      }
    }
    done += static_cast<std::size_t>(rows);
  }
  return DiscreteTable(schema, std::move(cols));
}

GeneratorModel ema_combine(std::span<const GeneratorModel> models,
                           double decay) {
  if (models.empty()) throw std::invalid_argument("ema_combine needs a model");
  if (!(decay >= 0.0 && decay < 1.0)) {
    throw std::invalid_argument("EMA decay must lie in [0, 1)");
  }
  GeneratorModel avg = models.front();
  const double t = 1.0 - decay;
  for (std::size_t i = 1; i < models.size(); ++i) {
    if (!avg.same_architecture(models[i])) {
      throw std::invalid_argument("ema_combine: architecture mismatch");
    }
    auto& dst = avg.layers();
    const auto& src = models[i].layers();
    for (std::size_t l = 0; l < dst.size(); ++l) {
      dst[l].weight = dst[l].weight.binaryExpr(
          src[l].weight, [t](double a, double b) { return std::lerp(a, b, t); });
      dst[l].bias = dst[l].bias.binaryExpr(
          src[l].bias, [t](double a, double b) { return std::lerp(a, b, t); });
    }
  }
  return avg;
}

}  // namespace gemplus
