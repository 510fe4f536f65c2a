// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fail.
//   acceptance [--cli PATH] [--workdir DIR] [--only N]...

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "igmmdiar/autodiff.hpp"
#include "igmmdiar/eval.hpp"
#include "igmmdiar/igmm.hpp"
#include "igmmdiar/io.hpp"
#include "igmmdiar/losses.hpp"
#include "igmmdiar/numerics.hpp"
#include "igmmdiar/pipeline.hpp"
#include "igmmdiar/rng.hpp"
#include "oracles.hpp"

using namespace igmmdiar;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  std::string name;
  double time_limit;  // seconds, <= 0 for none
  std::function<Outcome()> run;
};

Matrix<double> one_hot(const std::vector<int>& labels, std::size_t k) {
  Matrix<double> r(labels.size(), k, 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) r(i, static_cast<std::size_t>(labels[i])) = 1.0;
  return r;
}

Matrix<double> random_matrix(Rng& rng, std::size_t rows, std::size_t cols, double scale) {
  Matrix<double> m(rows, cols);
  for (double& v : m.data()) v = scale * rng.normal();
  return m;
}

Matrix<double> random_resp(Rng& rng, std::size_t n, std::size_t k) {
  Matrix<double> r(n, k);
  for (std::size_t i = 0; i < n; ++i) {
    double total = 0.0;
    for (double& v : r.row(i)) total += (v = rng.uniform() + 1e-3);
    for (double& v : r.row(i)) v /= total;
  }
  return r;
}

IgmmHyper hyper(int k, int dim, double alpha, int iters) {
  IgmmHyper h;
  h.truncation = k;
  h.dim = dim;
  h.alpha = alpha;
  h.em_iters = iters;
  return h;
}

// --- 1 ---------------------------------------------------------------------

Outcome cari_matches_ari() {
  const std::vector<int> truth{0, 0, 1, 1};
  const double fixture = cari(one_hot({0, 1, 0, 1}, 2), truth);
  if (std::abs(fixture + 0.5) > 1e-10) return {false, fmt::format("fixture cARI {}", fixture)};
  Rng rng(101);
  double worst = 0.0;
  const int trials = 600;
  for (int t = 0; t < trials; ++t) {
    const auto n = static_cast<std::size_t>(rng.uniform_int(2, 30));
    const int kp = rng.uniform_int(1, 6), kt = rng.uniform_int(1, 6);
    std::vector<int> p(n), h(n);
    for (std::size_t i = 0; i < n; ++i) {
      p[i] = rng.uniform_int(0, kp - 1);
      h[i] = rng.uniform_int(0, kt - 1);
    }
    worst = std::max(worst, std::abs(cari(one_hot(p, 6), h) - exact_ari(p, h)));
  }
  return {worst <= 1e-10, fmt::format("{} labelings, max |cARI-ARI| {:.2e}", trials, worst)};
}

// --- 2 ---------------------------------------------------------------------

Outcome vb_steps_match_oracle() {
  Rng rng(202);
  double worst_m = 0.0, worst_e = 0.0;
  for (int t = 0; t < 100; ++t) {
    const auto n = static_cast<std::size_t>(rng.uniform_int(1, 25));
    const auto k = static_cast<std::size_t>(rng.uniform_int(1, 8));
    const auto c = static_cast<std::size_t>(rng.uniform_int(1, 6));
    const double alpha = 0.1 + 3.0 * rng.uniform();
    const auto e = random_matrix(rng, n, c, 3.0);
    const auto r = random_resp(rng, n, k);
    VariationalParams<double> prev;
    for (std::size_t j = 0; j < k; ++j) {
      prev.gamma1.push_back(1.0 + 5.0 * rng.uniform());
      prev.gamma2.push_back(0.5 + 5.0 * rng.uniform());
      prev.a.push_back(1.0 + 10.0 * rng.uniform());
      prev.b.push_back(1.0 + 10.0 * rng.uniform());
    }
    prev.theta = random_matrix(rng, k, c, 1.0);
    const auto h = hyper(static_cast<int>(k), static_cast<int>(c), alpha, 1);
    const oracle::VbParams oprev{prev.gamma1, prev.gamma2, prev.a, prev.b, prev.theta};

    const auto got = vb_m_step(r, e, prev, h);
    const auto want = oracle::m_step(r, e, oprev, alpha);
    for (std::size_t j = 0; j < k; ++j) {
      worst_m = std::max({worst_m, std::abs(got.gamma1[j] - want.g1[j]), std::abs(got.gamma2[j] - want.g2[j]),
                          std::abs(got.a[j] - want.a[j]) / std::max(1.0, want.a[j]),
                          std::abs(got.b[j] - want.b[j]) / std::max(1.0, want.b[j])});
      for (std::size_t d = 0; d < c; ++d)
        worst_m = std::max(worst_m, std::abs(got.theta(j, d) - want.theta(j, d)));
    }
    const auto ge = vb_e_step(got, e, h);
    const auto we = oracle::e_step({got.gamma1, got.gamma2, got.a, got.b, got.theta}, e);
    for (std::size_t i = 0; i < ge.size(); ++i) worst_e = std::max(worst_e, std::abs(ge.data()[i] - we.data()[i]));
  }
  return {worst_m <= 1e-12 && worst_e <= 1e-12,
          fmt::format("100 instances, M-step {:.2e}, E-step {:.2e}", worst_m, worst_e)};
}

// --- 3 ---------------------------------------------------------------------

struct GradTally {
  std::size_t checked = 0, bad = 0;
  void add(double analytic, double numeric) {
    ++checked;
    if (!oracle::gradient_close(analytic, numeric)) ++bad;
  }
};

Outcome gradients_match_fd() {
  GradTally pit, clus, total;
  {
    Rng rng(301);
    for (int trial = 0; trial < 5; ++trial) {
      const std::size_t t_len = 6, s = 3;
      Matrix<double> y(t_len, s);
      for (double& v : y.data()) v = rng.uniform() < 0.4 ? 1.0 : 0.0;
      std::vector<double> logits(t_len * s);
      for (double& v : logits) v = rng.normal();
      auto f = [&](auto v) {
        using S = std::remove_cvref_t<decltype(v[0])>;
        Matrix<S> est(t_len, s);
        for (std::size_t i = 0; i < est.size(); ++i) est.data()[i] = sigmoid(v[i]);
        return pit_diar_loss(y, est).loss;
      };
      const auto vg = value_and_gradient(f, logits);
      const auto fd = oracle::central_difference(
          [&](const std::vector<double>& x) { return f(std::span<const double>(x)); }, logits);
      for (std::size_t i = 0; i < fd.size(); ++i) pit.add(vg.gradient[i], fd[i]);
    }
  }
  {
    Rng rng(302);
    const std::size_t n = 12, c = 4;
    const auto h = hyper(5, 4, 1.0, 3);
    const std::vector<int> truth{0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2};
    for (int trial = 0; trial < 3; ++trial) {
      Matrix<double> e(n, c);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t d = 0; d < c; ++d)
          e(i, d) = (d == static_cast<std::size_t>(truth[i]) ? 2.0 : 0.0) + rng.normal();
      const auto init = init_responsibilities(e, 5, {});
      auto f = [&](auto v) {
        using S = std::remove_cvref_t<decltype(v[0])>;
        Matrix<S> emb(n, c, std::vector<S>(v.begin(), v.end()));
        return cluster_loss(run_unfolded(emb, h, init).responsibilities, truth);
      };
      const auto vg = value_and_gradient(f, e.data());
      const auto fd = oracle::central_difference(
          [&](const std::vector<double>& x) { return f(std::span<const double>(x)); }, e.data());
      for (std::size_t i = 0; i < fd.size(); ++i) clus.add(vg.gradient[i], fd[i]);
    }
  }
  {
    EncoderShape shape;
    shape.feature_dim = 6;
    shape.hidden_dim = 5;
    shape.local_speakers = 3;
    shape.embed_dim = 4;
    shape.inventory = 6;
    CorpusConfig cc;
    cc.recordings = 1;
    cc.speaker_counts = {3};
    cc.inventory_size = 6;
    cc.chunks_per_recording = 4;
    cc.chunk_size = 20;
    cc.synth.feature_dim = 6;
    cc.synth.min_turn = 6;
    cc.synth.max_turn = 20;
    const auto corpus = synth_corpus(cc, 303);
    TrainConfig cfg;
    cfg.hyper = hyper(5, 4, 1.0, 3);
    cfg.weights = {0.05, 0.03};
    cfg.chunk_size = 20;
    const auto& rec = corpus.recordings[0];
    const auto params = init_encoder(shape, 304);
    const auto lg = recording_gradient(params, rec, cfg);
    for (std::size_t t = 0; t < kNumEncoderTensors; ++t) {
      for (std::size_t j = 0; j < params.tensors[t].size(); ++j) {
        auto plus = params, minus = params;
        plus.tensors[t].data()[j] += 1e-5;
        minus.tensors[t].data()[j] -= 1e-5;
        const double fd = (recording_loss(plus, rec, cfg, &lg.init).total -
                           recording_loss(minus, rec, cfg, &lg.init).total) / 2e-5;
        total.add(lg.gradient.tensors[t].data()[j], fd);
      }
    }
  }
  const bool ok = pit.bad == 0 && clus.bad == 0 && total.bad == 0;
  return {ok, fmt::format("pit {}/{}, cluster∘unfolded {}/{}, total/encoder {}/{} within tolerance",
                          pit.checked - pit.bad, pit.checked, clus.checked - clus.bad, clus.checked,
                          total.checked - total.bad, total.checked)};
}

// --- 4 ---------------------------------------------------------------------

Outcome planted_recovery() {
  const auto means = simplex_means(4, 16, 10.0);
  const auto h = hyper(10, 16, 1.0, 10);
  int good = 0;
  double worst = 1.0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto s = sample_planted(means, 1.0, 60, seed);
    const auto run = run_unfolded(s.embeddings, h, init_responsibilities(s.embeddings, 10, {}));
    const double ari = exact_ari(hard_assign(run.responsibilities), s.assignments);
    worst = std::min(worst, ari);
    if (ari >= 0.95 && effective_cluster_count(run.responsibilities) == 4) ++good;
  }
  return {good >= 18, fmt::format("{}/20 seeds recovered (min ARI {:.3f})", good, worst)};
}

// --- 5 ---------------------------------------------------------------------

Outcome pit_is_minimal() {
  Rng rng(505);
  double worst = 0.0;
  for (int t = 0; t < 200; ++t) {
    const auto t_len = static_cast<std::size_t>(rng.uniform_int(1, 10));
    const auto s = static_cast<std::size_t>(rng.uniform_int(1, 4));
    Matrix<double> y(t_len, s), est(t_len, s);
    for (double& v : y.data()) v = rng.uniform() < 0.5 ? 1.0 : 0.0;
    for (double& v : est.data()) v = rng.uniform();
    worst = std::max(worst, std::abs(pit_diar_loss(y, est).loss - oracle::brute_force_pit(y, est)));
  }
  return {worst <= 1e-12, fmt::format("200 instances, max deviation {:.2e}", worst)};
}

// --- 6 ---------------------------------------------------------------------

Outcome stitching_fixture() {
  // Global speakers A, B, C over two 6-frame chunks. Chunk 0 has A in slot 0
  // and B in slot 1; chunk 1 has B in slot 0 and C in slot 1 (order swapped).
  Matrix<double> truth(12, 3, 0.0);
  for (std::size_t t : {0, 1, 2, 3}) truth(t, 0) = 1.0;
  for (std::size_t t : {3, 4, 5, 6, 7}) truth(t, 1) = 1.0;
  for (std::size_t t : {8, 9, 10, 11}) truth(t, 2) = 1.0;
  const int slot_speaker[2][2] = {{0, 1}, {1, 2}};
  std::vector<ChunkOutput<double>> outputs(2);
  std::vector<SlotRef> slots;
  std::vector<int> cluster;
  for (int c = 0; c < 2; ++c) {
    outputs[c].activity = Matrix<double>(6, 2, 0.0);
    outputs[c].silent = {false, false};
    for (int s = 0; s < 2; ++s) {
      for (std::size_t t = 0; t < 6; ++t)
        outputs[c].activity(t, s) = truth(6 * c + t, slot_speaker[c][s]) > 0 ? 0.9 : 0.1;
      slots.push_back({c, s});
      cluster.push_back(slot_speaker[c][s]);
    }
  }
  const auto hyp = stitch(outputs, slots, one_hot(cluster, 3), 0.1);
  const auto ref = timeline_from_activity(truth, 0.1, {"A", "B", "C"});
  const auto rep = score_der(ref, hyp, 0.0);
  return {rep.der == 0.0 && hyp.speakers.size() == 3,
          fmt::format("DER {:.4f}, {} hypothesis speakers", rep.der, hyp.speakers.size())};
}

// --- 7 ---------------------------------------------------------------------

DiarTimeline random_timeline(Rng& rng, int speakers, double length) {
  DiarTimeline t;
  for (int s = 0; s < speakers; ++s) {
    int cursor = rng.uniform_int(0, 2000);
    std::vector<Segment> segs;
    while (true) {
      const int dur = rng.uniform_int(1, 3000);
      if ((cursor + dur) / 1000.0 > length) break;
      segs.push_back({cursor / 1000.0, (cursor + dur) / 1000.0});
      cursor += dur + rng.uniform_int(1, 3000);
    }
    if (!segs.empty()) t.speakers["s" + std::to_string(s)] = segs;
  }
  return t;
}

Outcome der_scorer() {
  DiarTimeline ref, hyp;
  ref.speakers["A"] = {{0.0, 10.0}};
  hyp.speakers["A"] = {{0.0, 8.0}};
  const auto c25 = score_der(ref, hyp, 0.25);
  const auto c0 = score_der(ref, hyp, 0.0);
  const bool fixture = std::abs(c25.missed - 1.75 / 9.5) < 1e-9 && std::abs(c0.missed - 0.2) < 1e-9 &&
                       c25.der == c25.missed && c0.der == c0.missed;
  Rng rng(707);
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    const auto r = random_timeline(rng, 1 + t % 4, 30.0);
    const auto h = random_timeline(rng, 1 + (t / 4) % 4, 30.0);
    const auto rep = score_der(r, h, t % 2 ? 0.25 : 0.0);
    worst = std::max(worst, std::abs(rep.der - (rep.missed + rep.false_alarm + rep.confusion)));
  }
  return {fixture && worst <= 1e-12,
          fmt::format("MI {:.6f} (collar 0.25), {:.6f} (collar 0); additivity gap {:.2e}", c25.missed,
                      c0.missed, worst)};
}

// --- 8 ---------------------------------------------------------------------

Outcome training_benefit() {
  int ari_wins = 0, cf_ok = 0;
  std::string detail;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    CorpusConfig cc;  // 20 recordings, 2-4 speakers, 20 chunks of 50 frames
    const auto train_set = synth_corpus(cc, 1000 + seed);
    cc.recordings = 20;
    const auto heldout = synth_corpus(cc, 2000 + seed, &train_set.inventory);
    EncoderShape shape;
    shape.inventory = cc.inventory_size;
    TrainConfig cfg;
    cfg.epochs = 30;
    cfg.learning_rate = 1.0;
    cfg.weights = {0.05, 0.03};
    const auto with = train(init_encoder(shape, seed), train_set.recordings, heldout.recordings, cfg);
    cfg.weights.lambda1 = 0.0;
    const auto without = train(init_encoder(shape, seed), train_set.recordings, heldout.recordings, cfg);
    const auto& a = with.history.back();
    const auto& b = without.history.back();
    if (a.ari > b.ari) ++ari_wins;
    if (a.confusion <= b.confusion) ++cf_ok;
    detail += fmt::format("{}seed {}: ARI {:.3f} vs {:.3f}, CF {:.3f} vs {:.3f}", seed == 1 ? "" : "; ", seed,
                          a.ari, b.ari, a.confusion, b.confusion);
  }
  return {ari_wins >= 4 && cf_ok >= 4,
          fmt::format("ARI better {}/5, CF no worse {}/5 [{}]", ari_wins, cf_ok, detail)};
}

// --- 9 ---------------------------------------------------------------------

std::string quote(const fs::path& p) { return "\"" + p.string() + "\""; }

bool run(const std::string& cmd) {
  return std::system((cmd + " > /dev/null 2>&1").c_str()) == 0;
}

Outcome cli_determinism(const fs::path& cli, const fs::path& workdir) {
  if (cli.empty()) return {false, "no --cli given"};
  std::vector<std::string> compared;
  for (int pass = 0; pass < 2; ++pass) {
    const auto dir = workdir / ("run" + std::to_string(pass));
    fs::remove_all(dir);
    fs::create_directories(dir);
    const auto exe = quote(cli);
    const std::vector<std::string> cmds{
        exe + " synth --recordings 3 --chunks 4 --chunk-size 25 --feature-dim 8 --inventory 6 --seed 9 --out " +
            quote(dir / "corpus.json") + " --rttm " + quote(dir / "ref.rttm"),
        exe + " train --corpus " + quote(dir / "corpus.json") +
            " --epochs 2 --seed 3 --chunk-size 25 --embed-dim 4 --hidden-dim 8 --quiet --metrics " +
            quote(dir / "metrics.csv") + " --checkpoint " + quote(dir / "model.json"),
        exe + " sample --kind planted --clusters 4 --count 60 --dim 16 --seed 5 --out " +
            quote(dir / "emb.csv") + " --truth " + quote(dir / "truth.csv"),
        exe + " cluster --embeddings " + quote(dir / "emb.csv") + " --truth " + quote(dir / "truth.csv") +
            " --out " + quote(dir / "assign.csv"),
    };
    for (const auto& c : cmds)
      if (!run(c)) return {false, "command failed: " + c};
  }
  for (const char* name : {"corpus.json", "ref.rttm", "metrics.csv", "model.json", "emb.csv", "assign.csv"}) {
    const auto a = read_text_file(workdir / "run0" / name);
    const auto b = read_text_file(workdir / "run1" / name);
    if (a.empty() || a != b) return {false, std::string(name) + " differs between runs"};
    compared.emplace_back(name);
  }
  return {true, fmt::format("{} output files identical across two runs", compared.size())};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"igmmdiar acceptance suite"};
  std::string cli_path;
  std::string workdir = (fs::temp_directory_path() / "igmmdiar_acceptance").string();
  std::vector<int> only;
  app.add_option("--cli", cli_path, "igmmdiar executable used by the determinism check");
  app.add_option("--workdir", workdir, "scratch directory");
  app.add_option("--only", only, "run only these criteria");
  CLI11_PARSE(app, argc, argv);

  const fs::path cli = cli_path;
  const fs::path work = workdir;
  const std::vector<Criterion> criteria{
      {1, "cARI equals exact ARI on hard labelings", 10, cari_matches_ari},
      {2, "VB steps match straight-line oracle", 5, vb_steps_match_oracle},
      {3, "reverse-mode gradients match finite differences", 60, gradients_match_fd},
      {4, "planted clusters recovered", 30, planted_recovery},
      {5, "PIT equals exhaustive permutation search", 5, pit_is_minimal},
      {6, "stitching reconstructs swapped-slot fixture", 1, stitching_fixture},
      {7, "DER fixture and additivity", 5, der_scorer},
      {8, "cluster loss improves held-out ARI and CF", 900, training_benefit},
      {9, "CLI outputs are deterministic", 0, [&] { return cli_determinism(cli, work); }},
  };

  int failed = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = c.run();
    } catch (const std::exception& e) {
      out = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (c.time_limit > 0 && secs >= c.time_limit) {
      out.pass = false;
      out.detail += fmt::format("; over time limit {:.0f} s", c.time_limit);
    }
    if (!out.pass) ++failed;
    std::printf("%s [%d] %s: %s (%.2f s)\n", out.pass ? "PASS" : "FAIL", c.id, c.name.c_str(), out.detail.c_str(),
                secs);
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
