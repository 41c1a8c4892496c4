#include "nhmpc/datagen.hpp"

#include <chrono>
#include <cstring>
#include <ctime>
#include <fstream>
#include <stdexcept>

#include "json.hpp"
#include "nhmpc/util.hpp"

namespace nhmpc {

namespace {

using Eigen::MatrixXd;
using Eigen::Vector4d;
using Eigen::VectorXd;

constexpr char kDatasetMagic[8] = {'N', 'H', 'M', 'P', 'C', 'D', 'S', 'B'};
constexpr char kRawMagic[8] = {'N', 'H', 'M', 'P', 'C', 'R', 'A', 'W'};
constexpr std::uint32_t kFormatVersion = 1;

std::string iso_now() {
  const std::time_t now =
      std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char buf[32];
  std::tm tm_utc;
  gmtime_r(&now, &tm_utc);
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
  return buf;
}

bool sample_within_boxes(const MatrixXd& states, const VectorXd& inputs,
                         const BoxConstraints& base,
                         const BoxConstraints& shrunk, int M, double tol) {
  const int N = static_cast<int>(states.rows()) - 1;
  for (int k = 0; k <= N; ++k) {
    const BoxConstraints& box = k <= M ? base : shrunk;
    const Vector4d lo = k == N ? box.terminal_lower : box.state_lower;
    const Vector4d up = k == N ? box.terminal_upper : box.state_upper;
    for (int i = 0; i < 4; ++i) {
      if (states(k, i) < lo[i] - tol || states(k, i) > up[i] + tol) {
        return false;
      }
    }
  }
  for (int k = 0; k < inputs.size(); ++k) {
    if (inputs[k] < base.input_lower - tol ||
        inputs[k] > base.input_upper + tol) {
      return false;
    }
  }
  return true;
}

}  // namespace

const char* to_string(DatasetRole role) {
  switch (role) {
    case DatasetRole::state_sequence: return "state_sequence";
    case DatasetRole::cost_pair: return "cost_pair";
    case DatasetRole::imitation: return "imitation";
  }
  return "unknown";
}

DatasetRole dataset_role_from_string(const std::string& name) {
  if (name == "state_sequence" || name == "state") {
    return DatasetRole::state_sequence;
  }
  if (name == "cost_pair" || name == "cost") return DatasetRole::cost_pair;
  if (name == "imitation") return DatasetRole::imitation;
  throw std::invalid_argument("unknown dataset role: " + name);
}

RawCorpus generate_raw(int count, double gamma, const HorizonSpec& spec,
                       const OcpWeights& w, const BoxConstraints& b,
                       std::uint64_t seed, const GenOptions& opts) {
  if (count < 1) throw std::invalid_argument("generate_raw: count must be >= 1");
  const TightenedBox tb{b, gamma};
  const BoxConstraints shrunk = tb.tightened();  // validates gamma as well

  auto solve_fn = opts.solve_fn;
  if (!solve_fn) {
    solve_fn = [cfg = opts.solver](const NlpProblem& p, const VectorXd& guess) {
      return solve(p, cfg, guess);
    };
  }

  Rng root(seed);
  Rng draw_rng = root.spawn(1);
  Rng coin_rng = root.spawn(2);

  // Sampling box: per-state fraction of the base box around its center.
  Vector4d draw_lo, draw_up;
  for (int i = 0; i < 4; ++i) {
    const double center = 0.5 * (b.state_lower[i] + b.state_upper[i]);
    const double half =
        0.5 * (b.state_upper[i] - b.state_lower[i]) * kDrawBoxFraction[i];
    draw_lo[i] = center - half;
    draw_up[i] = center + half;
  }

  RawCorpus corpus;
  corpus.gamma = gamma;
  corpus.horizons = spec;
  corpus.weights = w;
  corpus.bounds = b;
  corpus.seed = seed;
  corpus.samples.reserve(count);

  const int M = spec.short_horizon;
  bool force_fresh = true;
  Vector4d chain_x1 = Vector4d::Zero();
  VectorXd chain_primal;
  OcpLayout chain_layout;

  int attempts = 0;
  while (static_cast<int>(corpus.samples.size()) < count) {
    ++attempts;
    const bool coin = coin_rng.uniform01() < kFreshDrawProbability;
    const bool fresh = force_fresh || coin;

    Vector4d x0v;
    if (fresh) {
      for (int i = 0; i < 4; ++i) {
        x0v[i] = draw_rng.uniform(draw_lo[i], draw_up[i]);
      }
    } else {
      x0v = chain_x1;
    }
    const State x0 = State::from_vec(x0v);

    BuiltOcp built = build_tightened_ocp(x0, spec, w, tb, opts.model);
    VectorXd guess;
    if (!fresh && chain_primal.size() == built.layout.n_vars()) {
      SolverResult prev;
      prev.primal = chain_primal;
      guess = warm_start_shift(prev, chain_layout)
                  .cwiseMax(built.problem.lower)
                  .cwiseMin(built.problem.upper);
    } else {
      guess = zero_input_rollout_guess(x0, built, spec.dt, opts.model);
    }

    const SolverResult r = solve_fn(built.problem, guess);

    bool retained = false;
    if (r.status == SolveStatus::converged) {
      const OcpLayout& L = built.layout;
      MatrixXd states(L.n_state_stages, 4);
      VectorXd inputs(L.n_input_stages);
      for (int k = 0; k < L.n_state_stages; ++k) {
        states.row(k) = r.primal.segment<4>(L.state_offset(k)).transpose();
      }
      for (int k = 0; k < L.n_input_stages; ++k) {
        inputs[k] = r.primal[L.input_offset(k)];
      }
      if (sample_within_boxes(states, inputs, b, shrunk, M, 1e-6)) {
        RawSample sample;
        sample.x_init = x0;
        sample.states = states;
        sample.inputs = inputs;
        sample.status = r.status;
        sample.fresh_draw = fresh;
        corpus.samples.push_back(std::move(sample));

        chain_x1 = states.row(1).transpose();
        chain_primal = r.primal;
        chain_layout = L;
        retained = true;
      }
    }
    force_fresh = !retained;

    if (opts.progress) {
      opts.progress(static_cast<int>(corpus.samples.size()), attempts);
    }
    if (attempts >= 50 &&
        static_cast<double>(corpus.samples.size()) <
            opts.min_retention * attempts) {
      throw std::runtime_error(
          "generate_raw: retention below " +
          std::to_string(opts.min_retention) + " after " +
          std::to_string(attempts) + " attempts (" +
          std::to_string(corpus.samples.size()) + " retained)");
    }
  }
  return corpus;
}

Dataset derive_dataset(const RawCorpus& corpus, DatasetRole role) {
  const int n = static_cast<int>(corpus.samples.size());
  if (n < 1) throw std::invalid_argument("derive_dataset: empty corpus");
  const int N = corpus.horizons.full_horizon;
  const int M = corpus.horizons.short_horizon;
  const int n_tail = N - M;

  Dataset ds;
  ds.role = role;
  ds.meta.gamma = corpus.gamma;
  ds.meta.full_horizon = N;
  ds.meta.short_horizon = M;
  ds.meta.dt = corpus.horizons.dt;
  ds.meta.weights_fingerprint = weights_fingerprint(corpus.weights);
  ds.meta.seed = corpus.seed;
  ds.meta.created = iso_now();

  const int fcols = 4;
  const int lcols = role == DatasetRole::state_sequence ? 4 * n_tail
                    : role == DatasetRole::cost_pair    ? 2
                                                        : 1;
  ds.features.resize(n, fcols);
  ds.labels.resize(n, lcols);

  for (int i = 0; i < n; ++i) {
    const RawSample& s = corpus.samples[i];
    if (s.states.rows() != N + 1 || s.inputs.size() != N) {
      throw std::invalid_argument("derive_dataset: sample shape mismatch");
    }
    switch (role) {
      case DatasetRole::state_sequence: {
        ds.features.row(i) = s.states.row(M);
        for (int t = 0; t < n_tail; ++t) {
          ds.labels.block<1, 4>(i, 4 * t) = s.states.row(M + 1 + t);
        }
        break;
      }
      case DatasetRole::cost_pair: {
        ds.features.row(i) = s.states.row(M);
        double state_cost = 0.0;
        for (int k = M + 1; k <= N; ++k) {
          const Vector4d x = s.states.row(k).transpose();
          state_cost += x.dot(corpus.weights.Q * x);
        }
        double input_cost = 0.0;
        for (int k = M + 1; k < N; ++k) {
          input_cost += corpus.weights.R * s.inputs[k] * s.inputs[k];
        }
        ds.labels(i, 0) = state_cost;
        ds.labels(i, 1) = input_cost;
        break;
      }
      case DatasetRole::imitation: {
        ds.features.row(i) = s.states.row(0);
        ds.labels(i, 0) = s.inputs[0];
        break;
      }
    }
  }
  return ds;
}

AssumptionReport assumption_check(const Model& model, const Dataset& validation,
                                  double gamma, const BoxConstraints& b) {
  if (validation.role != DatasetRole::state_sequence) {
    throw std::invalid_argument(
        "assumption_check: needs a state_sequence dataset");
  }
  const int n = static_cast<int>(validation.features.rows());
  if (n < 1) throw std::invalid_argument("assumption_check: empty dataset");
  const int n_tail = static_cast<int>(validation.labels.cols()) / 4;
  const int M = validation.meta.short_horizon;
  const int N = validation.meta.full_horizon;

  const Mlp net = model.deployed();
  AssumptionReport rep;
  rep.n_points = n;
  int within = 0;
  int contained = 0;
  for (int i = 0; i < n; ++i) {
    const VectorXd pred = forward(net, validation.features.row(i).transpose());
    const double err =
        (pred - validation.labels.row(i).transpose()).lpNorm<Eigen::Infinity>();
    rep.max_error = std::max(rep.max_error, err);
    if (err < gamma) ++within;

    bool inside = true;
    for (int t = 0; t < n_tail && inside; ++t) {
      const bool terminal = (M + 1 + t) == N;
      const Vector4d lo = terminal ? b.terminal_lower : b.state_lower;
      const Vector4d up = terminal ? b.terminal_upper : b.state_upper;
      for (int j = 0; j < 4; ++j) {
        const double v = pred[4 * t + j];
        if (v < lo[j] || v > up[j]) {
          inside = false;
          break;
        }
      }
    }
    if (inside) ++contained;
  }
  rep.fraction_within = static_cast<double>(within) / n;
  rep.containment = static_cast<double>(contained) / n;
  rep.all_contained = contained == n;
  return rep;
}

std::uint64_t weights_fingerprint(const OcpWeights& w) {
  std::uint64_t h = fnv1a64(w.Q.data(), 16 * sizeof(double));
  h = fnv1a64(&w.R, sizeof(double), h);
  return h;
}

std::uint64_t dataset_fingerprint(const Dataset& ds) {
  const std::uint32_t role = static_cast<std::uint32_t>(ds.role);
  const std::uint64_t dims[3] = {static_cast<std::uint64_t>(ds.features.rows()),
                                 static_cast<std::uint64_t>(ds.features.cols()),
                                 static_cast<std::uint64_t>(ds.labels.cols())};
  std::uint64_t h = fnv1a64(&role, sizeof(role));
  h = fnv1a64(dims, sizeof(dims), h);
  for (int i = 0; i < ds.features.rows(); ++i) {
    for (int j = 0; j < ds.features.cols(); ++j) {
      h = fnv1a64(&ds.features(i, j), sizeof(double), h);
    }
    for (int j = 0; j < ds.labels.cols(); ++j) {
      h = fnv1a64(&ds.labels(i, j), sizeof(double), h);
    }
  }
  return h;
}

namespace {

void write_bytes(std::ofstream& out, const void* p, std::size_t n) {
  out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

void read_bytes(std::ifstream& in, void* p, std::size_t n) {
  in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (!in) throw std::runtime_error("dataset file: truncated");
}

template <typename T>
void write_pod(std::ofstream& out, const T& v) {
  write_bytes(out, &v, sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in) {
  T v;
  read_bytes(in, &v, sizeof(T));
  return v;
}

void write_matrix_rowmajor(std::ofstream& out, const MatrixXd& m) {
  for (int i = 0; i < m.rows(); ++i) {
    for (int j = 0; j < m.cols(); ++j) {
      write_pod(out, m(i, j));
    }
  }
}

void read_matrix_rowmajor(std::ifstream& in, MatrixXd& m) {
  for (int i = 0; i < m.rows(); ++i) {
    for (int j = 0; j < m.cols(); ++j) {
      m(i, j) = read_pod<double>(in);
    }
  }
}

}  // namespace

void save_dataset(const Dataset& ds, const std::string& base_path) {
  {
    std::ofstream out(base_path + ".bin", std::ios::binary | std::ios::trunc);
    if (!out) {
      throw std::runtime_error("save_dataset: cannot open " + base_path +
                               ".bin");
    }
    write_bytes(out, kDatasetMagic, sizeof(kDatasetMagic));
    write_pod(out, kFormatVersion);
    write_pod(out, static_cast<std::uint32_t>(ds.role));
    write_pod(out, static_cast<std::uint64_t>(ds.features.rows()));
    write_pod(out, static_cast<std::uint32_t>(ds.features.cols()));
    write_pod(out, static_cast<std::uint32_t>(ds.labels.cols()));
    write_matrix_rowmajor(out, ds.features);
    write_matrix_rowmajor(out, ds.labels);
    if (!out) throw std::runtime_error("save_dataset: write failed");
  }
  nlohmann::json meta;
  meta["role"] = to_string(ds.role);
  meta["rows"] = ds.features.rows();
  meta["feature_width"] = ds.features.cols();
  meta["label_width"] = ds.labels.cols();
  meta["gamma"] = ds.meta.gamma;
  meta["full_horizon"] = ds.meta.full_horizon;
  meta["short_horizon"] = ds.meta.short_horizon;
  meta["dt"] = ds.meta.dt;
  meta["weights_fingerprint"] = hex64(ds.meta.weights_fingerprint);
  meta["seed"] = ds.meta.seed;
  meta["created"] = ds.meta.created;
  meta["fingerprint"] = hex64(dataset_fingerprint(ds));
  std::ofstream side(base_path + ".json", std::ios::trunc);
  if (!side) {
    throw std::runtime_error("save_dataset: cannot open " + base_path +
                             ".json");
  }
  side << meta.dump(2) << "\n";
}

Dataset load_dataset(const std::string& base_path) {
  std::ifstream in(base_path + ".bin", std::ios::binary);
  if (!in) {
    throw std::runtime_error("load_dataset: cannot open " + base_path + ".bin");
  }
  char magic[8];
  read_bytes(in, magic, sizeof(magic));
  if (std::memcmp(magic, kDatasetMagic, sizeof(magic)) != 0) {
    throw std::runtime_error("load_dataset: not a dataset file: " + base_path);
  }
  if (read_pod<std::uint32_t>(in) != kFormatVersion) {
    throw std::runtime_error("load_dataset: unsupported version");
  }
  Dataset ds;
  const std::uint32_t role = read_pod<std::uint32_t>(in);
  if (role > 2) throw std::runtime_error("load_dataset: bad role");
  ds.role = static_cast<DatasetRole>(role);
  const std::uint64_t rows = read_pod<std::uint64_t>(in);
  const std::uint32_t fcols = read_pod<std::uint32_t>(in);
  const std::uint32_t lcols = read_pod<std::uint32_t>(in);
  if (rows > (1ull << 32) || fcols > (1u << 16) || lcols > (1u << 16)) {
    throw std::runtime_error("load_dataset: implausible dimensions");
  }
  ds.features.resize(static_cast<int>(rows), static_cast<int>(fcols));
  ds.labels.resize(static_cast<int>(rows), static_cast<int>(lcols));
  read_matrix_rowmajor(in, ds.features);
  read_matrix_rowmajor(in, ds.labels);

  std::ifstream side(base_path + ".json");
  if (side) {
    nlohmann::json meta = nlohmann::json::parse(side, nullptr, true, true);
    ds.meta.gamma = meta.value("gamma", 0.0);
    ds.meta.full_horizon = meta.value("full_horizon", 0);
    ds.meta.short_horizon = meta.value("short_horizon", 0);
    ds.meta.dt = meta.value("dt", 0.0);
    ds.meta.seed = meta.value("seed", std::uint64_t{0});
    ds.meta.created = meta.value("created", "");
    if (meta.contains("weights_fingerprint")) {
      ds.meta.weights_fingerprint =
          parse_hex64(meta["weights_fingerprint"].get<std::string>());
    }
  }
  return ds;
}

void export_dataset_csv(const Dataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("export_dataset_csv: cannot open " + path);
  for (int j = 0; j < ds.features.cols(); ++j) {
    out << (j > 0 ? ",f" : "f") << j;
  }
  for (int j = 0; j < ds.labels.cols(); ++j) {
    out << ",l" << j;
  }
  out << "\n";
  for (int i = 0; i < ds.features.rows(); ++i) {
    for (int j = 0; j < ds.features.cols(); ++j) {
      if (j > 0) out << ',';
      out << format_double(ds.features(i, j));
    }
    for (int j = 0; j < ds.labels.cols(); ++j) {
      out << ',' << format_double(ds.labels(i, j));
    }
    out << "\n";
  }
  if (!out) throw std::runtime_error("export_dataset_csv: write failed");
}

void save_raw(const RawCorpus& corpus, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("save_raw: cannot open " + path);
  write_bytes(out, kRawMagic, sizeof(kRawMagic));
  write_pod(out, kFormatVersion);
  write_pod(out, static_cast<std::uint64_t>(corpus.samples.size()));
  write_pod(out, static_cast<std::uint32_t>(corpus.horizons.full_horizon));
  write_pod(out, static_cast<std::uint32_t>(corpus.horizons.short_horizon));
  write_pod(out, corpus.horizons.dt);
  write_pod(out, corpus.gamma);
  write_pod(out, weights_fingerprint(corpus.weights));
  write_pod(out, corpus.seed);
  write_matrix_rowmajor(out, corpus.weights.Q);
  write_pod(out, corpus.weights.R);
  const auto& b = corpus.bounds;
  for (int i = 0; i < 4; ++i) write_pod(out, b.state_lower[i]);
  for (int i = 0; i < 4; ++i) write_pod(out, b.state_upper[i]);
  for (int i = 0; i < 4; ++i) write_pod(out, b.terminal_lower[i]);
  for (int i = 0; i < 4; ++i) write_pod(out, b.terminal_upper[i]);
  write_pod(out, b.input_lower);
  write_pod(out, b.input_upper);
  for (const RawSample& s : corpus.samples) {
    const Vector4d x0 = s.x_init.vec();
    for (int i = 0; i < 4; ++i) write_pod(out, x0[i]);
    write_matrix_rowmajor(out, s.states);
    for (int k = 0; k < s.inputs.size(); ++k) write_pod(out, s.inputs[k]);
    write_pod(out, static_cast<std::uint8_t>(s.status));
    write_pod(out, static_cast<std::uint8_t>(s.fresh_draw ? 1 : 0));
  }
  if (!out) throw std::runtime_error("save_raw: write failed");
}

RawCorpus load_raw(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_raw: cannot open " + path);
  char magic[8];
  read_bytes(in, magic, sizeof(magic));
  if (std::memcmp(magic, kRawMagic, sizeof(magic)) != 0) {
    throw std::runtime_error("load_raw: not a raw archive: " + path);
  }
  if (read_pod<std::uint32_t>(in) != kFormatVersion) {
    throw std::runtime_error("load_raw: unsupported version");
  }
  RawCorpus corpus;
  const std::uint64_t count = read_pod<std::uint64_t>(in);
  if (count > (1ull << 32)) throw std::runtime_error("load_raw: bad count");
  corpus.horizons.full_horizon =
      static_cast<int>(read_pod<std::uint32_t>(in));
  corpus.horizons.short_horizon =
      static_cast<int>(read_pod<std::uint32_t>(in));
  corpus.horizons.dt = read_pod<double>(in);
  corpus.gamma = read_pod<double>(in);
  const std::uint64_t stored_fp = read_pod<std::uint64_t>(in);
  corpus.seed = read_pod<std::uint64_t>(in);
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) {
      corpus.weights.Q(i, j) = read_pod<double>(in);
    }
  }
  corpus.weights.R = read_pod<double>(in);
  auto& b = corpus.bounds;
  for (int i = 0; i < 4; ++i) b.state_lower[i] = read_pod<double>(in);
  for (int i = 0; i < 4; ++i) b.state_upper[i] = read_pod<double>(in);
  for (int i = 0; i < 4; ++i) b.terminal_lower[i] = read_pod<double>(in);
  for (int i = 0; i < 4; ++i) b.terminal_upper[i] = read_pod<double>(in);
  b.input_lower = read_pod<double>(in);
  b.input_upper = read_pod<double>(in);
  if (weights_fingerprint(corpus.weights) != stored_fp) {
    throw std::runtime_error("load_raw: weights fingerprint mismatch");
  }
  const int N = corpus.horizons.full_horizon;
  corpus.samples.resize(count);
  for (auto& s : corpus.samples) {
    Vector4d x0;
    for (int i = 0; i < 4; ++i) x0[i] = read_pod<double>(in);
    s.x_init = State::from_vec(x0);
    s.states.resize(N + 1, 4);
    read_matrix_rowmajor(in, s.states);
    s.inputs.resize(N);
    for (int k = 0; k < N; ++k) s.inputs[k] = read_pod<double>(in);
    s.status = static_cast<SolveStatus>(read_pod<std::uint8_t>(in));
    s.fresh_draw = read_pod<std::uint8_t>(in) != 0;
  }
  return corpus;
}

}  // namespace nhmpc
