#include <benchmark/benchmark.h>

#include "igmmdiar/autodiff.hpp"
#include "igmmdiar/eval.hpp"
#include "igmmdiar/igmm.hpp"
#include "igmmdiar/losses.hpp"
#include "igmmdiar/numerics.hpp"
#include "igmmdiar/pipeline.hpp"
#include "igmmdiar/rng.hpp"

using namespace igmmdiar;

namespace {

IgmmHyper bench_hyper(int k, int dim, int iters) {
  IgmmHyper h;
  h.truncation = k;
  h.dim = dim;
  h.em_iters = iters;
  return h;
}

GenerativeSample planted(std::size_t n) { return sample_planted(simplex_means(4, 16, 10.0), 1.0, n, 1); }

void BM_Digamma(benchmark::State& state) {
  double x = 0.1;
  for (auto _ : state) {
    benchmark::DoNotOptimize(digamma(x));
    x = x > 50.0 ? 0.1 : x + 0.37;
  }
}
BENCHMARK(BM_Digamma);

void BM_MStep(benchmark::State& state) {
  const auto s = planted(static_cast<std::size_t>(state.range(0)));
  const auto h = bench_hyper(10, 16, 1);
  const auto init = init_responsibilities(s.embeddings, 10, {});
  const auto prev = initial_params(h);
  for (auto _ : state) benchmark::DoNotOptimize(vb_m_step(init, s.embeddings, prev, h));
}
BENCHMARK(BM_MStep)->Arg(60)->Arg(400);

void BM_EStep(benchmark::State& state) {
  const auto s = planted(static_cast<std::size_t>(state.range(0)));
  const auto h = bench_hyper(10, 16, 1);
  const auto p = vb_m_step(init_responsibilities(s.embeddings, 10, {}), s.embeddings, initial_params(h), h);
  for (auto _ : state) benchmark::DoNotOptimize(vb_e_step(p, s.embeddings, h));
}
BENCHMARK(BM_EStep)->Arg(60)->Arg(400);

void BM_UnfoldedPlain(benchmark::State& state) {
  const auto s = planted(60);
  const auto h = bench_hyper(10, 16, 10);
  const auto init = init_responsibilities(s.embeddings, 10, {});
  for (auto _ : state) benchmark::DoNotOptimize(run_unfolded(s.embeddings, h, init));
}
BENCHMARK(BM_UnfoldedPlain);

void BM_UnfoldedRecordedWithBackward(benchmark::State& state) {
  const auto s = planted(60);
  const auto h = bench_hyper(10, 16, 10);
  const auto init = init_responsibilities(s.embeddings, 10, {});
  Tape tape;
  for (auto _ : state) {
    tape.clear();
    const auto emb = variables_of(tape, s.embeddings);
    const Var loss = cluster_loss(run_unfolded(emb, h, init).responsibilities, s.assignments);
    benchmark::DoNotOptimize(tape.backward(loss));
  }
  state.counters["tape_nodes"] = static_cast<double>(tape.node_count());
}
BENCHMARK(BM_UnfoldedRecordedWithBackward);

void BM_Pit(benchmark::State& state) {
  const auto speakers = static_cast<std::size_t>(state.range(0));
  Rng rng(3);
  Matrix<double> y(50, speakers), est(50, speakers);
  for (double& v : y.data()) v = rng.uniform() < 0.3 ? 1.0 : 0.0;
  for (double& v : est.data()) v = rng.uniform();
  for (auto _ : state) benchmark::DoNotOptimize(pit_diar_loss(y, est).loss);
}
BENCHMARK(BM_Pit)->Arg(3)->Arg(4);

void BM_ScoreDer(benchmark::State& state) {
  SynthConfig c;
  c.frames = 3000;
  const auto rec = synth_recording(c, 5);
  const auto ref = rec.reference();
  DiarTimeline hyp;
  for (const auto& [name, segs] : ref.speakers) {
    auto& out = hyp.speakers["h" + name];
    for (const auto& seg : segs) out.push_back({seg.start + 0.05, seg.end + 0.05});
  }
  hyp = canonicalize(hyp);
  for (auto _ : state) benchmark::DoNotOptimize(score_der(ref, hyp, 0.25));
}
BENCHMARK(BM_ScoreDer);

}  // namespace
BENCHMARK_MAIN();
