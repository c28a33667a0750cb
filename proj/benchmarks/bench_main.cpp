#include <benchmark/benchmark.h>

#include "lorasim/attacker.hpp"
#include "lorasim/harness.hpp"
#include "lorasim/phy.hpp"

using namespace lorasim;

static void BM_TimeOnAir(benchmark::State& state) {
  const auto p = phy::TxParams::uplink(phy::DataRate(0), 868'100'000);
  std::size_t len = 12;
  for (auto _ : state) {
    benchmark::DoNotOptimize(phy::time_on_air(p, len));
    len = len == 30 ? 12 : len + 1;
  }
}
BENCHMARK(BM_TimeOnAir);

static void BM_ResolveReception(benchmark::State& state) {
  std::vector<phy::ReceptionCandidate> cands;
  for (int i = 0; i < state.range(0); ++i) {
    phy::ReceptionCandidate c;
    c.sf = 7 + i % 6;
    c.rx_power_dbm = -120.0 + i;
    c.rx_snr_db = c.rx_power_dbm + 117.0;
    c.start = static_cast<Micros>(i * 10);
    c.end = c.start + 100;
    cands.push_back(c);
  }
  for (auto _ : state) {
    benchmark::DoNotOptimize(phy::resolve_reception(cands));
  }
}
BENCHMARK(BM_ResolveReception)->Arg(4)->Arg(16);

static void BM_MicCompute(benchmark::State& state) {
  const auto session = frames::DeviceSession::derive(0xA1B2C3D4, 1);
  frames::Frame f;
  f.direction = frames::Direction::uplink;
  f.dev_addr = 0xA1B2C3D4;
  f.fcnt = 100;
  f.fport = 1;
  f.frm_payload = {1, 2, 3, 4};
  const auto params = phy::TxParams::uplink(phy::DataRate(2), 868'100'000);
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        frames::compute_mic(session, f, params, frames::MicPolicy::V11));
  }
}
BENCHMARK(BM_MicCompute);

static void BM_EngineThroughput(benchmark::State& state) {
  for (auto _ : state) {
    sim::Engine e(1);
    for (int i = 0; i < 10'000; ++i) {
      e.schedule_at(static_cast<Micros>(i), []() {});
    }
    benchmark::DoNotOptimize(e.run_until(20'000));
  }
}
BENCHMARK(BM_EngineThroughput);

static void BM_BaselineCell(benchmark::State& state) {
  auto s = harness::Scenario::defaults_baseline();
  s.baseline.frames_per_dr = 50;
  s.baseline.datarates = {3};
  for (auto _ : state) {
    benchmark::DoNotOptimize(harness::run_baseline(s, {}));
  }
}
BENCHMARK(BM_BaselineCell)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
