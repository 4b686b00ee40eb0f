#include <benchmark/benchmark.h>

#include <random>

#include "capt/contrastive.hpp"
#include "capt/encoder.hpp"
#include "capt/ops.hpp"
#include "capt/probe.hpp"
#include "capt/trainer.hpp"

namespace {

capt::Tensor random_tensor(const capt::Shape& shape, std::uint64_t seed) {
  capt::Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  capt::Tensor t(shape);
  for (double& v : t.data()) v = normal(rng);
  return t;
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const capt::Tensor a = random_tensor({n, 256}, 1);
  const capt::Tensor b = random_tensor({256, 1024}, 2);
  for (auto _ : state) {
    capt::Tape tape;
    benchmark::DoNotOptimize(capt::ops::matmul(tape.constant(a), tape.constant(b)).value().data().data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * n * 256 * 1024 * 2));
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(352)->Unit(benchmark::kMillisecond);

void BM_AttentionForwardBackward(benchmark::State& state) {
  const std::size_t seqs = 32;
  const std::size_t len = static_cast<std::size_t>(state.range(0));
  const std::size_t rows = seqs * len;
  capt::ParamStore p;
  p.add("q", random_tensor({rows, 256}, 1));
  p.add("k", random_tensor({rows, 256}, 2));
  p.add("v", random_tensor({rows, 256}, 3));
  std::vector<capt::ops::Segment> segs;
  for (std::size_t s = 0; s < seqs; ++s) segs.push_back({s * len, len});
  for (auto _ : state) {
    capt::Tape tape;
    auto out = capt::ops::attention(p.bind(tape, "q"), p.bind(tape, "k"), p.bind(tape, "v"), segs, 4);
    benchmark::DoNotOptimize(tape.backward(capt::ops::sum(out)));
  }
}
BENCHMARK(BM_AttentionForwardBackward)->Arg(11)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_CaptLoss(benchmark::State& state) {
  capt::Rng rng(5);
  auto unit = [&](std::size_t n) {
    capt::Tensor t = random_tensor({n, 256}, rng());
    for (std::size_t r = 0; r < n; ++r) {
      double sq = 0.0;
      for (double v : t.row(r)) sq += v * v;
      for (double& v : t.row(r)) v /= std::sqrt(sq);
    }
    return t;
  };
  const capt::Tensor s = unit(32);
  const capt::Tensor s_hat = unit(32);
  const capt::Tensor queue = unit(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(capt::capt_loss(s, s_hat, queue, 0.1));
}
BENCHMARK(BM_CaptLoss)->Arg(64)->Arg(1024)->Arg(8192)->Unit(benchmark::kMicrosecond);

void BM_DeskTrainStep(benchmark::State& state) {
  capt::TopicCorpusOptions corpus;
  corpus.lines = 2000;
  const auto lines = capt::generate_topic_corpus(capt::SyntheticLexicon{}, corpus);
  capt::RunConfig config;
  config.model = capt::EncoderConfig::desk();
  config.model.total_steps = 1000000;
  const auto vocab = capt::Vocabulary::build_from_lines(lines, config.model.vocab_size);
  config.model.vocab_size = vocab.size();
  capt::Trainer trainer(config, vocab, lines);
  for (auto _ : state) benchmark::DoNotOptimize(trainer.train_step());
}
BENCHMARK(BM_DeskTrainStep)->Unit(benchmark::kMillisecond)->MinTime(10.0);

}  // namespace

BENCHMARK_MAIN();
