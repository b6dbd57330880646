#include <benchmark/benchmark.h>

#include "rhythmvec/dur_model.hpp"
#include "rhythmvec/metrics.hpp"
#include "rhythmvec/rng.hpp"
#include "rhythmvec/spk_model.hpp"

using namespace rhythmvec;

namespace {

Utterance random_utterance(Rng& rng, std::size_t k, std::size_t len) {
  Utterance u{"s", "u", {}, {}};
  for (std::size_t t = 0; t < len; ++t) {
    u.phonemes.push_back(rng.below(k));
    u.durations.push_back(0.03 + 0.15 * rng.uniform());
  }
  return u;
}

void BM_ComputeEer(benchmark::State& state) {
  Rng rng(1);
  const auto n = static_cast<std::size_t>(state.range(0));
  std::vector<double> t(n), i(n);
  for (double& v : t) v = rng.normal() + 1.0;
  for (double& v : i) v = rng.normal();
  for (auto _ : state) benchmark::DoNotOptimize(compute_eer(t, i));
}
BENCHMARK(BM_ComputeEer)->Arg(2700)->Arg(27000);

void BM_Mic(benchmark::State& state) {
  Rng rng(2);
  const auto n = static_cast<std::size_t>(state.range(0));
  std::vector<double> x(n), y(n);
  for (std::size_t k = 0; k < n; ++k) {
    x[k] = rng.uniform();
    y[k] = std::sin(5.0 * x[k]) + 0.2 * rng.normal();
  }
  for (auto _ : state) benchmark::DoNotOptimize(mic(x, y));
}
BENCHMARK(BM_Mic)->Arg(200)->Arg(1000)->Unit(benchmark::kMillisecond);

void BM_ExtractEmbedding(benchmark::State& state) {
  const SpeakerModel model(EncoderConfig{}, PhonemeInventory::numbered(56), 3);
  Rng rng(3);
  const Utterance u = random_utterance(rng, 56, static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(model.embed(u));
}
BENCHMARK(BM_ExtractEmbedding)->Arg(20)->Arg(60)->Unit(benchmark::kMicrosecond);

void BM_PredictDurations(benchmark::State& state) {
  const DurationModel model(DurModelConfig{}, PhonemeInventory::numbered(56), 4);
  Rng rng(4);
  const Utterance u = random_utterance(rng, 56, static_cast<std::size_t>(state.range(0)));
  const Embedding e{Eigen::VectorXd::Constant(32, 0.1)};
  for (auto _ : state) benchmark::DoNotOptimize(model.predict(u.phonemes, e));
}
BENCHMARK(BM_PredictDurations)->Arg(20)->Unit(benchmark::kMicrosecond);

}  // namespace

BENCHMARK_MAIN();
