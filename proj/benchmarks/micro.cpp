#include <benchmark/benchmark.h>

#include "nhmpc/control.hpp"
#include "nhmpc/neural.hpp"
#include "nhmpc/ocp.hpp"
#include "nhmpc/rng.hpp"

namespace {

using namespace nhmpc;

State swing_start() { return State{0.0, kPi, 0.0, 0.0}; }

void BM_Rk4Step(benchmark::State& bs) {
  const State x{0.3, 2.0, -0.5, 1.0};
  const Input u{12.0};
  const IntegratorConfig cfg;
  const ModelParams mp;
  for (auto _ : bs) {
    benchmark::DoNotOptimize(rk4_step(x, u, cfg, mp));
  }
}
BENCHMARK(BM_Rk4Step);

void BM_Rk4Jacobians(benchmark::State& bs) {
  const State x{0.3, 2.0, -0.5, 1.0};
  const Input u{12.0};
  const IntegratorConfig cfg;
  const ModelParams mp;
  Eigen::Matrix4d dx;
  Eigen::Vector4d du;
  for (auto _ : bs) {
    rk4_step_jacobians(x, u, cfg, mp, dx, du);
    benchmark::DoNotOptimize(dx);
    benchmark::DoNotOptimize(du);
  }
}
BENCHMARK(BM_Rk4Jacobians);

void BM_NetForward(benchmark::State& bs) {
  Rng rng(7);
  const Mlp net = Mlp::glorot({4, 32, 32, 32, 88}, rng);
  const Eigen::VectorXd in = Eigen::Vector4d{0.1, 2.9, -0.4, 0.8};
  for (auto _ : bs) {
    benchmark::DoNotOptimize(forward(net, in));
  }
}
BENCHMARK(BM_NetForward);

void BM_NetInputJacobian(benchmark::State& bs) {
  Rng rng(7);
  const Mlp net = Mlp::glorot({4, 32, 32, 32, 88}, rng);
  const Eigen::VectorXd in = Eigen::Vector4d{0.1, 2.9, -0.4, 0.8};
  for (auto _ : bs) {
    benchmark::DoNotOptimize(input_jacobian(net, in));
  }
}
BENCHMARK(BM_NetInputJacobian);

void BM_BuildBaselineOcp(benchmark::State& bs) {
  const HorizonSpec spec;
  const OcpWeights w;
  const BoxConstraints b;
  for (auto _ : bs) {
    benchmark::DoNotOptimize(build_baseline_ocp(swing_start(), spec, w, b));
  }
}
BENCHMARK(BM_BuildBaselineOcp);

// Steady-state receding-horizon stepping: each iteration solves one program
// warm-started from the previous step's shifted solution, then advances the
// plant, as the closed loop does.
void bench_mpc_step(benchmark::State& bs, ControllerKind kind) {
  ControllerSpec spec;
  spec.kind = kind;
  if (kind == ControllerKind::neural_horizon ||
      kind == ControllerKind::neural_horizon_unbounded) {
    // A zero net predicts the tail already at the upright target, which keeps
    // the program well-posed without a trained model on hand.
    spec.net = Mlp::zeros(
        {4, 32, 4 * (spec.horizons.full_horizon - spec.horizons.short_horizon)});
  }
  Controller controller(spec);
  const IntegratorConfig icfg{spec.horizons.dt};
  State x = swing_start();
  for (auto _ : bs) {
    const StepResult r = controller.mpc_step(x);
    benchmark::DoNotOptimize(r);
    if (r.ok) {
      x = rk4_step(x, r.u, icfg, spec.model);
    } else {
      controller.reset();
      x = swing_start();
    }
  }
}

void BM_MpcStepBaseline(benchmark::State& bs) {
  bench_mpc_step(bs, ControllerKind::baseline);
}
BENCHMARK(BM_MpcStepBaseline)->Unit(benchmark::kMillisecond);

void BM_MpcStepNeuralHorizon(benchmark::State& bs) {
  bench_mpc_step(bs, ControllerKind::neural_horizon);
}
BENCHMARK(BM_MpcStepNeuralHorizon)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
