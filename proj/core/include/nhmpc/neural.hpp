#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "nhmpc/rng.hpp"

namespace nhmpc {

// Dense multilayer perceptron: affine layers with tanh hidden activations and
// an identity output layer. Weights act on whatever units the caller trained
// with; Model below pairs a net with its standardization.
struct Mlp {
  std::vector<int> layer_sizes;          // input, hidden..., output widths
  std::vector<Eigen::MatrixXd> weights;  // weights[j]: sizes[j+1] x sizes[j]
  std::vector<Eigen::VectorXd> biases;   // biases[j]: sizes[j+1]

  int n_in() const { return layer_sizes.empty() ? 0 : layer_sizes.front(); }
  int n_out() const { return layer_sizes.empty() ? 0 : layer_sizes.back(); }
  int n_layers() const { return static_cast<int>(weights.size()); }
  bool valid() const;

  // All parameters zero, given the full width chain.
  static Mlp zeros(const std::vector<int>& sizes);
  // Uniform init in ±sqrt(6/(fan_in+fan_out)) per layer, biases zero.
  static Mlp glorot(const std::vector<int>& sizes, Rng& rng);
};

// Single forward pass; input length must equal layer_sizes.front().
Eigen::VectorXd forward(const Mlp& net, const Eigen::VectorXd& input);

// Exact chain-rule Jacobian of the output w.r.t. the input, n_out x n_in.
// Propagated forward (the input side is the narrow one here).
Eigen::MatrixXd input_jacobian(const Mlp& net, const Eigen::VectorXd& input);

// Mean squared error over all output entries, plus its gradient w.r.t. every
// weight and bias. Exposed for finite-difference verification; train() uses
// the same routine. X is n_in x batch, Y is n_out x batch.
double mse_loss(const Mlp& net, const Eigen::MatrixXd& X,
                const Eigen::MatrixXd& Y);
double mse_gradient(const Mlp& net, const Eigen::MatrixXd& X,
                    const Eigen::MatrixXd& Y,
                    std::vector<Eigen::MatrixXd>& grad_w,
                    std::vector<Eigen::VectorXd>& grad_b);

// Per-feature affine normalization, fit column-wise on row-major data.
struct Scaler {
  Eigen::VectorXd mean;
  Eigen::VectorXd scale;  // strictly positive; degenerate columns get 1

  static Scaler fit(const Eigen::MatrixXd& rows);
  Eigen::VectorXd apply(const Eigen::VectorXd& v) const;
  Eigen::VectorXd invert(const Eigen::VectorXd& v) const;
  Eigen::MatrixXd apply_rows(const Eigen::MatrixXd& rows) const;
  Eigen::MatrixXd invert_rows(const Eigen::MatrixXd& rows) const;
};

struct TrainConfig {
  int epochs = 2500;
  int batch_size = 256;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t rng_seed = 0;
  double validation_fraction = 0.1;  // held out for the loss curve only
};

struct TrainHistory {
  std::vector<double> train_loss;  // running mean of minibatch losses
  std::vector<double> val_loss;    // full pass over the held-out split
};

struct ModelMeta {
  std::uint64_t dataset_hash = 0;
  std::uint64_t seed = 0;
  int epochs = 0;
  std::string role;
};

// A trained net bundled with its standardization and provenance.
struct Model {
  Mlp net;  // acts on standardized inputs and produces standardized outputs
  Scaler input_scaler;
  Scaler output_scaler;
  ModelMeta meta;

  // Equivalent net in physical units: the affine standardization folded into
  // the first and last layers. What the OCP builders consume.
  Mlp deployed() const;

  Eigen::VectorXd predict(const Eigen::VectorXd& physical_input) const;
};

// Minibatch Adam on MSE with standardized features/labels. features/labels
// are row-major (one sample per row); layer_sizes is the full width chain and
// must match the data widths. Throws on non-finite loss.
Model train(const Eigen::MatrixXd& features, const Eigen::MatrixXd& labels,
            const std::vector<int>& layer_sizes, const TrainConfig& cfg,
            TrainHistory* history = nullptr);

// 1 - SS_res/SS_tot per output column, averaged uniformly over columns, with
// features/labels in the net's own units (R² is invariant to the per-column
// affine standardization, so raw and physical units agree). Zero-variance
// label columns are excluded with a warning on stderr.
double r2_score(const Mlp& net, const Eigen::MatrixXd& features,
                const Eigen::MatrixXd& labels);

// Physical-units convenience on a Model.
double r2_score(const Model& model, const Eigen::MatrixXd& features,
                const Eigen::MatrixXd& labels);

// Versioned little-endian binary model file: widths, parameters, scalers,
// metadata. Round-trips bit-exactly.
void save_model(const Model& model, const std::string& path);
Model load_model(const std::string& path);

}  // namespace nhmpc
