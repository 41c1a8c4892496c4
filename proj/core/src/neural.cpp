#include "nhmpc/neural.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace nhmpc {

namespace {
using Eigen::MatrixXd;
using Eigen::VectorXd;

constexpr char kModelMagic[8] = {'N', 'H', 'M', 'P', 'C', 'M', 'L', 'P'};
constexpr std::uint32_t kModelVersion = 1;
}  // namespace

bool Mlp::valid() const {
  if (layer_sizes.size() < 2) return false;
  if (weights.size() != layer_sizes.size() - 1) return false;
  if (biases.size() != weights.size()) return false;
  for (std::size_t j = 0; j < weights.size(); ++j) {
    if (layer_sizes[j] <= 0 || layer_sizes[j + 1] <= 0) return false;
    if (weights[j].rows() != layer_sizes[j + 1] ||
        weights[j].cols() != layer_sizes[j]) {
      return false;
    }
    if (biases[j].size() != layer_sizes[j + 1]) return false;
  }
  return true;
}

Mlp Mlp::zeros(const std::vector<int>& sizes) {
  Mlp net;
  net.layer_sizes = sizes;
  for (std::size_t j = 0; j + 1 < sizes.size(); ++j) {
    net.weights.push_back(MatrixXd::Zero(sizes[j + 1], sizes[j]));
    net.biases.push_back(VectorXd::Zero(sizes[j + 1]));
  }
  if (!net.valid()) throw std::invalid_argument("mlp: bad layer sizes");
  return net;
}

Mlp Mlp::glorot(const std::vector<int>& sizes, Rng& rng) {
  Mlp net = zeros(sizes);
  for (std::size_t j = 0; j < net.weights.size(); ++j) {
    const double limit =
        std::sqrt(6.0 / static_cast<double>(sizes[j] + sizes[j + 1]));
    // Row-major draw order so the stream is layout-independent.
    for (int r = 0; r < net.weights[j].rows(); ++r) {
      for (int c = 0; c < net.weights[j].cols(); ++c) {
        net.weights[j](r, c) = rng.uniform(-limit, limit);
      }
    }
  }
  return net;
}

Eigen::VectorXd forward(const Mlp& net, const Eigen::VectorXd& input) {
  if (input.size() != net.n_in()) {
    throw std::invalid_argument("mlp: input length mismatch");
  }
  VectorXd a = input;
  for (int j = 0; j < net.n_layers(); ++j) {
    a = net.weights[j] * a + net.biases[j];
    if (j + 1 < net.n_layers()) a = a.array().tanh();
  }
  return a;
}

Eigen::MatrixXd input_jacobian(const Mlp& net, const Eigen::VectorXd& input) {
  if (input.size() != net.n_in()) {
    throw std::invalid_argument("mlp: input length mismatch");
  }
  VectorXd a = input;
  MatrixXd jac = MatrixXd::Identity(net.n_in(), net.n_in());
  for (int j = 0; j < net.n_layers(); ++j) {
    a = net.weights[j] * a + net.biases[j];
    jac = net.weights[j] * jac;
    if (j + 1 < net.n_layers()) {
      a = a.array().tanh();
      jac.array().colwise() *= (1.0 - a.array().square());
    }
  }
  return jac;
}

namespace {

// Forward pass over a batch (columns are samples), keeping activations for
// backprop. activations[0] = X, activations[j+1] = layer j output.
void batch_forward(const Mlp& net, const MatrixXd& X,
                   std::vector<MatrixXd>& activations) {
  activations.resize(net.n_layers() + 1);
  activations[0] = X;
  for (int j = 0; j < net.n_layers(); ++j) {
    activations[j + 1] =
        (net.weights[j] * activations[j]).colwise() + net.biases[j];
    if (j + 1 < net.n_layers()) {
      activations[j + 1] = activations[j + 1].array().tanh();
    }
  }
}

double batch_loss(const MatrixXd& prediction, const MatrixXd& Y) {
  return (prediction - Y).squaredNorm() /
         static_cast<double>(prediction.size());
}

}  // namespace

double mse_loss(const Mlp& net, const Eigen::MatrixXd& X,
                const Eigen::MatrixXd& Y) {
  std::vector<MatrixXd> acts;
  batch_forward(net, X, acts);
  return batch_loss(acts.back(), Y);
}

double mse_gradient(const Mlp& net, const Eigen::MatrixXd& X,
                    const Eigen::MatrixXd& Y,
                    std::vector<Eigen::MatrixXd>& grad_w,
                    std::vector<Eigen::VectorXd>& grad_b) {
  const int L = net.n_layers();
  std::vector<MatrixXd> acts;
  batch_forward(net, X, acts);
  const double loss = batch_loss(acts.back(), Y);

  grad_w.resize(L);
  grad_b.resize(L);
  MatrixXd delta =
      2.0 * (acts.back() - Y) / static_cast<double>(acts.back().size());
  for (int j = L - 1; j >= 0; --j) {
    grad_w[j] = delta * acts[j].transpose();
    grad_b[j] = delta.rowwise().sum();
    if (j > 0) {
      delta = net.weights[j].transpose() * delta;
      delta.array() *= (1.0 - acts[j].array().square());
    }
  }
  return loss;
}

Scaler Scaler::fit(const Eigen::MatrixXd& rows) {
  if (rows.rows() < 1) throw std::invalid_argument("scaler: empty data");
  Scaler s;
  s.mean = rows.colwise().mean();
  const MatrixXd centered = rows.rowwise() - s.mean.transpose();
  s.scale = (centered.array().square().colwise().sum() /
             static_cast<double>(rows.rows()))
                .sqrt();
  for (int i = 0; i < s.scale.size(); ++i) {
    if (!(s.scale[i] > 1e-12)) s.scale[i] = 1.0;  // degenerate column
  }
  return s;
}

Eigen::VectorXd Scaler::apply(const Eigen::VectorXd& v) const {
  return (v - mean).cwiseQuotient(scale);
}

Eigen::VectorXd Scaler::invert(const Eigen::VectorXd& v) const {
  return v.cwiseProduct(scale) + mean;
}

Eigen::MatrixXd Scaler::apply_rows(const Eigen::MatrixXd& rows) const {
  return (rows.rowwise() - mean.transpose()).array().rowwise() /
         scale.transpose().array();
}

Eigen::MatrixXd Scaler::invert_rows(const Eigen::MatrixXd& rows) const {
  return (rows.array().rowwise() * scale.transpose().array()).matrix()
             .rowwise() +
         mean.transpose();
}

Mlp Model::deployed() const {
  Mlp out = net;
  // x' = (x - m_in) / s_in  folds into the first layer:
  //   W0' = W0 diag(1/s_in),  b0' = b0 - W0 (m_in / s_in)
  const VectorXd inv_s = input_scaler.scale.cwiseInverse();
  out.biases[0] -= net.weights[0] * input_scaler.mean.cwiseProduct(inv_s);
  out.weights[0] = net.weights[0] * inv_s.asDiagonal();
  // y = s_out ∘ y' + m_out folds into the last layer.
  const int L = out.n_layers() - 1;
  out.weights[L] = output_scaler.scale.asDiagonal() * net.weights[L];
  out.biases[L] =
      output_scaler.scale.cwiseProduct(net.biases[L]) + output_scaler.mean;
  return out;
}

Eigen::VectorXd Model::predict(const Eigen::VectorXd& physical_input) const {
  return output_scaler.invert(forward(net, input_scaler.apply(physical_input)));
}

Model train(const Eigen::MatrixXd& features, const Eigen::MatrixXd& labels,
            const std::vector<int>& layer_sizes, const TrainConfig& cfg,
            TrainHistory* history) {
  const int n = static_cast<int>(features.rows());
  if (n < 1 || labels.rows() != n) {
    throw std::invalid_argument("train: empty or mismatched data");
  }
  if (layer_sizes.size() < 2 ||
      layer_sizes.front() != static_cast<int>(features.cols()) ||
      layer_sizes.back() != static_cast<int>(labels.cols())) {
    throw std::invalid_argument("train: layer sizes do not match data widths");
  }
  if (cfg.epochs < 1 || cfg.batch_size < 1 || !(cfg.learning_rate > 0.0)) {
    throw std::invalid_argument("train: bad config");
  }

  Model model;
  model.input_scaler = Scaler::fit(features);
  model.output_scaler = Scaler::fit(labels);
  model.meta.seed = cfg.rng_seed;
  model.meta.epochs = cfg.epochs;

  // Standardized data, transposed to column-per-sample for the batched math.
  const MatrixXd Xall = model.input_scaler.apply_rows(features).transpose();
  const MatrixXd Yall = model.output_scaler.apply_rows(labels).transpose();

  Rng rng(cfg.rng_seed);
  model.net = Mlp::glorot(layer_sizes, rng);

  // Held-out tail of one fixed shuffle feeds the validation curve.
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  rng.shuffle(order);
  const int n_val =
      std::min(n - 1, static_cast<int>(std::lround(cfg.validation_fraction *
                                                   static_cast<double>(n))));
  const int n_train = n - n_val;

  MatrixXd Xtrain(Xall.rows(), n_train), Ytrain(Yall.rows(), n_train);
  MatrixXd Xval(Xall.rows(), n_val), Yval(Yall.rows(), n_val);
  for (int i = 0; i < n_train; ++i) {
    Xtrain.col(i) = Xall.col(order[i]);
    Ytrain.col(i) = Yall.col(order[i]);
  }
  for (int i = 0; i < n_val; ++i) {
    Xval.col(i) = Xall.col(order[n_train + i]);
    Yval.col(i) = Yall.col(order[n_train + i]);
  }

  const int L = model.net.n_layers();
  std::vector<MatrixXd> mw(L), vw(L), gw;
  std::vector<VectorXd> mb(L), vb(L), gb;
  for (int j = 0; j < L; ++j) {
    mw[j] = MatrixXd::Zero(model.net.weights[j].rows(),
                           model.net.weights[j].cols());
    vw[j] = mw[j];
    mb[j] = VectorXd::Zero(model.net.biases[j].size());
    vb[j] = mb[j];
  }

  std::vector<int> batch_order(n_train);
  for (int i = 0; i < n_train; ++i) batch_order[i] = i;

  long step = 0;
  MatrixXd Xb, Yb;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(batch_order);
    double loss_sum = 0.0;
    int n_batches = 0;
    for (int start = 0; start < n_train; start += cfg.batch_size) {
      const int bs = std::min(cfg.batch_size, n_train - start);
      Xb.resize(Xall.rows(), bs);
      Yb.resize(Yall.rows(), bs);
      for (int i = 0; i < bs; ++i) {
        Xb.col(i) = Xtrain.col(batch_order[start + i]);
        Yb.col(i) = Ytrain.col(batch_order[start + i]);
      }
      const double loss = mse_gradient(model.net, Xb, Yb, gw, gb);
      if (!std::isfinite(loss)) {
        throw std::runtime_error("train: non-finite loss at epoch " +
                                 std::to_string(epoch));
      }
      loss_sum += loss;
      ++n_batches;

      ++step;
      const double corr1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
      const double corr2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
      for (int j = 0; j < L; ++j) {
        mw[j] = cfg.beta1 * mw[j] + (1.0 - cfg.beta1) * gw[j];
        vw[j] = cfg.beta2 * vw[j] +
                (1.0 - cfg.beta2) * gw[j].array().square().matrix();
        model.net.weights[j].array() -=
            cfg.learning_rate * (mw[j].array() / corr1) /
            ((vw[j].array() / corr2).sqrt() + cfg.eps);
        mb[j] = cfg.beta1 * mb[j] + (1.0 - cfg.beta1) * gb[j];
        vb[j] = cfg.beta2 * vb[j] +
                (1.0 - cfg.beta2) * gb[j].array().square().matrix();
        model.net.biases[j].array() -=
            cfg.learning_rate * (mb[j].array() / corr1) /
            ((vb[j].array() / corr2).sqrt() + cfg.eps);
      }
    }

    if (history != nullptr) {
      history->train_loss.push_back(loss_sum /
                                    std::max(1, n_batches));
      history->val_loss.push_back(n_val > 0 ? mse_loss(model.net, Xval, Yval)
                                            : 0.0);
    }
  }
  return model;
}

double r2_score(const Mlp& net, const Eigen::MatrixXd& features,
                const Eigen::MatrixXd& labels) {
  const int n = static_cast<int>(features.rows());
  if (n < 1 || labels.rows() != n) {
    throw std::invalid_argument("r2_score: empty or mismatched data");
  }
  std::vector<MatrixXd> acts;
  batch_forward(net, features.transpose(), acts);
  const MatrixXd pred = acts.back().transpose();  // rows = samples

  const Eigen::RowVectorXd label_mean = labels.colwise().mean();
  double sum = 0.0;
  int kept = 0;
  for (int c = 0; c < labels.cols(); ++c) {
    const double ss_tot = (labels.col(c).array() - label_mean[c]).square().sum();
    if (!(ss_tot > 1e-30)) {
      std::fprintf(stderr,
                   "r2_score: excluding zero-variance label column %d\n", c);
      continue;
    }
    const double ss_res = (labels.col(c) - pred.col(c)).squaredNorm();
    sum += 1.0 - ss_res / ss_tot;
    ++kept;
  }
  return kept > 0 ? sum / kept : 1.0;
}

double r2_score(const Model& model, const Eigen::MatrixXd& features,
                const Eigen::MatrixXd& labels) {
  return r2_score(model.deployed(), features, labels);
}

namespace {

void put_bytes(std::ofstream& out, const void* p, std::size_t size) {
  out.write(static_cast<const char*>(p), static_cast<std::streamsize>(size));
}

void get_bytes(std::ifstream& in, void* p, std::size_t size) {
  in.read(static_cast<char*>(p), static_cast<std::streamsize>(size));
  if (!in) throw std::runtime_error("model file: truncated");
}

void put_u32(std::ofstream& out, std::uint32_t v) { put_bytes(out, &v, 4); }
void put_u64(std::ofstream& out, std::uint64_t v) { put_bytes(out, &v, 8); }

std::uint32_t get_u32(std::ifstream& in) {
  std::uint32_t v;
  get_bytes(in, &v, 4);
  return v;
}

std::uint64_t get_u64(std::ifstream& in) {
  std::uint64_t v;
  get_bytes(in, &v, 8);
  return v;
}

void put_doubles(std::ofstream& out, const double* p, std::size_t count) {
  put_bytes(out, p, count * sizeof(double));
}

void get_doubles(std::ifstream& in, double* p, std::size_t count) {
  get_bytes(in, p, count * sizeof(double));
}

void put_vec(std::ofstream& out, const VectorXd& v) {
  put_u32(out, static_cast<std::uint32_t>(v.size()));
  put_doubles(out, v.data(), static_cast<std::size_t>(v.size()));
}

VectorXd get_vec(std::ifstream& in) {
  const std::uint32_t len = get_u32(in);
  if (len > (1u << 26)) throw std::runtime_error("model file: bad vector size");
  VectorXd v(len);
  get_doubles(in, v.data(), len);
  return v;
}

}  // namespace

void save_model(const Model& model, const std::string& path) {
  if (!model.net.valid()) throw std::invalid_argument("save_model: invalid net");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("save_model: cannot open " + path);

  put_bytes(out, kModelMagic, sizeof(kModelMagic));
  put_u32(out, kModelVersion);
  put_u32(out, static_cast<std::uint32_t>(model.net.layer_sizes.size()));
  for (int s : model.net.layer_sizes) {
    put_u32(out, static_cast<std::uint32_t>(s));
  }
  for (int j = 0; j < model.net.n_layers(); ++j) {
    // Eigen default storage is column-major; dump it as stored.
    put_doubles(out, model.net.weights[j].data(),
                static_cast<std::size_t>(model.net.weights[j].size()));
    put_doubles(out, model.net.biases[j].data(),
                static_cast<std::size_t>(model.net.biases[j].size()));
  }
  put_vec(out, model.input_scaler.mean);
  put_vec(out, model.input_scaler.scale);
  put_vec(out, model.output_scaler.mean);
  put_vec(out, model.output_scaler.scale);
  put_u64(out, model.meta.dataset_hash);
  put_u64(out, model.meta.seed);
  put_u32(out, static_cast<std::uint32_t>(model.meta.epochs));
  put_u32(out, static_cast<std::uint32_t>(model.meta.role.size()));
  put_bytes(out, model.meta.role.data(), model.meta.role.size());
  if (!out) throw std::runtime_error("save_model: write failed for " + path);
}

Model load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_model: cannot open " + path);

  char magic[8];
  get_bytes(in, magic, sizeof(magic));
  if (std::memcmp(magic, kModelMagic, sizeof(magic)) != 0) {
    throw std::runtime_error("load_model: not a model file: " + path);
  }
  const std::uint32_t version = get_u32(in);
  if (version != kModelVersion) {
    throw std::runtime_error("load_model: unsupported version " +
                             std::to_string(version));
  }
  const std::uint32_t n_sizes = get_u32(in);
  if (n_sizes < 2 || n_sizes > 64) {
    throw std::runtime_error("load_model: bad layer count");
  }
  std::vector<int> sizes(n_sizes);
  for (auto& s : sizes) {
    const std::uint32_t v = get_u32(in);
    if (v == 0 || v > (1u << 20)) {
      throw std::runtime_error("load_model: bad layer width");
    }
    s = static_cast<int>(v);
  }

  Model model;
  model.net = Mlp::zeros(sizes);
  for (int j = 0; j < model.net.n_layers(); ++j) {
    get_doubles(in, model.net.weights[j].data(),
                static_cast<std::size_t>(model.net.weights[j].size()));
    get_doubles(in, model.net.biases[j].data(),
                static_cast<std::size_t>(model.net.biases[j].size()));
  }
  model.input_scaler.mean = get_vec(in);
  model.input_scaler.scale = get_vec(in);
  model.output_scaler.mean = get_vec(in);
  model.output_scaler.scale = get_vec(in);
  if (model.input_scaler.mean.size() != sizes.front() ||
      model.input_scaler.scale.size() != sizes.front() ||
      model.output_scaler.mean.size() != sizes.back() ||
      model.output_scaler.scale.size() != sizes.back()) {
    throw std::runtime_error("load_model: scaler width mismatch");
  }
  model.meta.dataset_hash = get_u64(in);
  model.meta.seed = get_u64(in);
  model.meta.epochs = static_cast<int>(get_u32(in));
  const std::uint32_t role_len = get_u32(in);
  if (role_len > 256) throw std::runtime_error("load_model: bad role length");
  model.meta.role.resize(role_len);
  if (role_len > 0) get_bytes(in, model.meta.role.data(), role_len);
  return model;
}

}  // namespace nhmpc
