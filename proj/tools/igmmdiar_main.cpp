// igmmdiar: synthetic corpora, iGMM clustering of embedding files, training
// with the unfolded clustering loss, diarization and DER scoring.

#include <algorithm>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "igmmdiar/errors.hpp"
#include "igmmdiar/eval.hpp"
#include "igmmdiar/igmm.hpp"
#include "igmmdiar/io.hpp"
#include "igmmdiar/losses.hpp"
#include "igmmdiar/pipeline.hpp"

namespace fs = std::filesystem;
using namespace igmmdiar;

namespace {

struct SynthArgs {
  int recordings = 5;
  int speakers = 0;  // 0: draw from speaker_counts
  std::vector<int> speaker_counts{2, 3, 4};
  int chunks = 20;
  int chunk_size = 50;
  int feature_dim = 16;
  int inventory = 16;
  double overlap = 0.1;
  double noise = 0.2;
  double frame_period = 0.1;
  std::uint64_t seed = 0;
  std::string out = "corpus.json";
  std::string rttm;
};

struct SampleArgs {
  std::string kind = "planted";
  int clusters = 4;
  int n = 60;
  int dim = 16;
  double separation = 10.0;
  double precision = 1.0;
  double alpha = 1.0;
  int truncation = 10;
  std::uint64_t seed = 0;
  std::string out = "embeddings.csv";
  std::string truth;
};

struct ClusterArgs {
  std::string embeddings;
  std::string truth;
  std::string backend = "igmm";
  std::string init = "softkmeans";
  IgmmHyper hyper;
  double tau = 1.0;
  double ahc_threshold = -1.0;
  int ahc_target = 0;
  std::string out;
};

struct TrainArgs {
  std::string corpus;
  std::string heldout;
  std::uint64_t seed = 0;
  int epochs = 30;
  double lr = 1.0;
  double lambda1 = 0.05;
  double lambda2 = 0.03;
  double alpha = 1.0;
  int truncation = 10;
  int em_iters = 10;
  int chunk_size = 50;
  int local_speakers = 3;
  int embed_dim = 16;
  int hidden_dim = 32;
  double silence = kDefaultSilenceThreshold;
  double collar = 0.25;
  std::string metrics = "metrics.csv";
  std::string checkpoint = "model.json";
  bool quiet = false;
};

struct DiarizeArgs {
  std::string checkpoint;
  std::string corpus;
  std::string out = "hyp.rttm";
  double alpha = 1.0;
  int truncation = 10;
  int em_iters = 10;
  int chunk_size = 50;
  double silence = kDefaultSilenceThreshold;
  double collar = 0.25;
};

struct ScoreArgs {
  std::string ref;
  std::string hyp;
  double collar = 0.25;
  std::string json;
  std::string csv;
};

void add_igmm_options(CLI::App* cmd, double& alpha, int& truncation, int& em_iters) {
  cmd->add_option("--alpha", alpha, "Dirichlet-process concentration")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  cmd->add_option("--truncation", truncation, "Truncation level K'")
      ->capture_default_str()
      ->check(CLI::Range(1, 1000));
  cmd->add_option("--em-iters", em_iters, "Unfolded EM iterations")
      ->capture_default_str()
      ->check(CLI::NonNegativeNumber);
}

Corpus load_corpus(const std::string& path) { return corpus_from_json(read_text_file(path)); }

int run_synth(const SynthArgs& a) {
  CorpusConfig cfg;
  cfg.recordings = a.recordings;
  cfg.speaker_counts = a.speakers != 0 ? std::vector<int>{a.speakers} : a.speaker_counts;
  cfg.inventory_size = a.inventory;
  cfg.chunks_per_recording = a.chunks;
  cfg.chunk_size = a.chunk_size;
  cfg.synth.feature_dim = a.feature_dim;
  cfg.synth.overlap = a.overlap;
  cfg.synth.noise = a.noise;
  cfg.synth.frame_period = a.frame_period;
  const Corpus corpus = synth_corpus(cfg, a.seed);
  write_text_file(a.out, corpus_to_json(corpus));
  std::string rttm;
  std::size_t frames = 0;
  std::size_t speakers = 0;
  double speech = 0.0;
  for (const Recording& r : corpus.recordings) {
    const DiarTimeline ref = r.reference();
    rttm += rttm_write(ref, r.id);
    frames += r.frames();
    speakers += r.speakers.size();
    speech += ref.speech_seconds();
  }
  if (!a.rttm.empty()) write_text_file(a.rttm, rttm);
  std::printf("recordings %zu\nframes %zu\nspeaker_turn_sets %zu\nspeech_seconds %.3f\n",
              corpus.recordings.size(), frames, speakers, speech);
  return 0;
}

int run_sample(const SampleArgs& a) {
  GenerativeSample s;
  if (a.kind == "planted") {
    s = sample_planted(simplex_means(a.clusters, a.dim, a.separation), a.precision,
                       static_cast<std::size_t>(a.n), a.seed);
  } else {
    IgmmHyper h;
    h.alpha = a.alpha;
    h.truncation = a.truncation;
    h.dim = a.dim;
    s = sample_generative(h, static_cast<std::size_t>(a.n), a.seed);
  }
  EmbeddingSet set;
  set.values = s.embeddings;
  for (std::size_t n = 0; n < set.values.rows(); ++n) set.slots.push_back({static_cast<int>(n), 0});
  write_text_file(a.out, embeddings_to_csv(set));
  if (!a.truth.empty()) write_text_file(a.truth, labels_to_csv(s.assignments));
  std::printf("embeddings %zu\ndim %d\n", set.size(), a.dim);
  return 0;
}

int count_distinct(const std::vector<int>& labels) {
  std::vector<int> sorted = labels;
  std::sort(sorted.begin(), sorted.end());
  return static_cast<int>(std::unique(sorted.begin(), sorted.end()) - sorted.begin());
}

int run_cluster(ClusterArgs a) {
  const EmbeddingSet set = embeddings_from_csv(read_text_file(a.embeddings));
  std::vector<int> truth;
  if (!a.truth.empty()) {
    truth = labels_from_csv(read_text_file(a.truth));
    if (truth.size() != set.size()) {
      throw ValidationError("truth file has " + std::to_string(truth.size()) + " rows, expected " +
                            std::to_string(set.size()));
    }
  }
  std::vector<int> labels;
  Matrix<double> resp;
  if (a.backend == "igmm") {
    a.hyper.dim = static_cast<int>(set.values.cols());
    a.hyper.validate();
    InitOptions init;
    init.method = a.init == "uniform" ? InitMethod::kUniform : InitMethod::kSoftKmeans;
    init.tau = a.tau;
    if (set.size() > 0) {
      const Matrix<double> start = init_responsibilities(set.values, a.hyper.truncation, init);
      resp = run_unfolded(set.values, a.hyper, start).responsibilities;
      labels = hard_assign(resp);
    }
    std::printf("backend igmm\nembeddings %zu\nclusters %d\neffective_clusters %d\n", set.size(),
                count_distinct(labels), set.size() > 0 ? effective_cluster_count(resp) : 0);
  } else {
    AhcOptions opt;
    if (a.ahc_threshold >= 0.0) opt.threshold = a.ahc_threshold;
    if (a.ahc_target > 0) opt.target = a.ahc_target;
    if (!opt.threshold && !opt.target) opt.threshold = 0.5;
    labels = constrained_ahc(set.values, same_chunk_pairs(set.slots), opt);
    resp = Matrix<double>(labels.size(), static_cast<std::size_t>(count_distinct(labels)), 0.0);
    for (std::size_t n = 0; n < labels.size(); ++n) resp(n, static_cast<std::size_t>(labels[n])) = 1.0;
    std::printf("backend ahc\nembeddings %zu\nclusters %d\n", set.size(), count_distinct(labels));
  }
  if (!truth.empty()) std::printf("ARI %.6f\n", exact_ari(labels, truth));
  if (!a.out.empty()) write_text_file(a.out, assignments_to_csv(labels, resp));
  return 0;
}

TrainConfig train_config(double alpha, int truncation, int em_iters, int embed_dim, int chunk_size,
                         double silence, double collar) {
  TrainConfig cfg;
  cfg.hyper.alpha = alpha;
  cfg.hyper.truncation = truncation;
  cfg.hyper.em_iters = em_iters;
  cfg.hyper.dim = embed_dim;
  cfg.chunk_size = chunk_size;
  cfg.silence_threshold = silence;
  cfg.collar = collar;
  return cfg;
}

int run_train(const TrainArgs& a) {
  const Corpus corpus = load_corpus(a.corpus);
  Corpus heldout;
  if (!a.heldout.empty()) heldout = load_corpus(a.heldout);
  TrainConfig cfg = train_config(a.alpha, a.truncation, a.em_iters, a.embed_dim, a.chunk_size,
                                 a.silence, a.collar);
  cfg.epochs = a.epochs;
  cfg.learning_rate = a.lr;
  cfg.weights = {a.lambda1, a.lambda2};
  EncoderShape shape;
  shape.feature_dim = corpus.config.synth.feature_dim;
  shape.hidden_dim = a.hidden_dim;
  shape.local_speakers = a.local_speakers;
  shape.embed_dim = a.embed_dim;
  shape.inventory = corpus.config.inventory_size;
  cfg.validate(shape);

  std::string csv = metrics_csv_header();
  write_text_file(a.metrics, csv);
  const TrainResult result =
      train(init_encoder(shape, a.seed), corpus.recordings, heldout.recordings, cfg,
            [&](const EpochMetrics& m) {
              csv += metrics_csv_row(m);
              write_text_file(a.metrics, csv);
              if (!a.quiet) {
                std::printf("epoch %d L_diar %.4f L_cluster %.4f L_spk %.4f ARI %.4f DER %.4f\n",
                            m.epoch, m.diar_loss, m.cluster_loss, m.spk_loss, m.ari, m.der);
                std::fflush(stdout);
              }
            });
  write_text_file(a.checkpoint, checkpoint_to_json({a.seed, result.params}));
  return 0;
}

int run_diarize(const DiarizeArgs& a) {
  const Checkpoint cp = checkpoint_from_json(read_text_file(a.checkpoint));
  const Corpus corpus = load_corpus(a.corpus);
  const TrainConfig cfg = train_config(a.alpha, a.truncation, a.em_iters, cp.params.shape.embed_dim,
                                       a.chunk_size, a.silence, a.collar);
  std::string rttm;
  for (const Recording& r : corpus.recordings) {
    const Diarization d = diarize(cp.params, r, cfg);
    rttm += rttm_write(d.timeline, r.id);
    const DerReport rep = score_der(r.reference(), d.timeline, a.collar);
    std::printf("%s DER %.2f%% clusters %d\n", r.id.c_str(), 100.0 * rep.der,
                count_distinct(d.labels));
  }
  write_text_file(a.out, rttm);
  return 0;
}

int run_score(const ScoreArgs& a) {
  const auto ref = rttm_read(read_text_file(a.ref));
  const auto hyp = rttm_read(read_text_file(a.hyp));
  DerReport total;
  std::map<std::string, bool> ids;
  for (const auto& [id, _] : ref) ids[id] = true;
  for (const auto& [id, _] : hyp) ids[id] = true;
  for (const auto& [id, _] : ids) {
    const auto r = ref.find(id);
    const auto h = hyp.find(id);
    const DerReport rep = score_der(r != ref.end() ? r->second : DiarTimeline{},
                                    h != hyp.end() ? h->second : DiarTimeline{}, a.collar);
    total.scored_speech += rep.scored_speech;
    total.missed_seconds += rep.missed_seconds;
    total.false_alarm_seconds += rep.false_alarm_seconds;
    total.confusion_seconds += rep.confusion_seconds;
    if (ids.size() > 1) std::printf("%s DER %.2f%%\n", id.c_str(), 100.0 * rep.der);
  }
  if (total.scored_speech > 0.0) {
    total.missed = total.missed_seconds / total.scored_speech;
    total.false_alarm = total.false_alarm_seconds / total.scored_speech;
    total.confusion = total.confusion_seconds / total.scored_speech;
    total.der = total.missed + total.false_alarm + total.confusion;
  }
  std::printf("DER %.2f%%\nMI %.2f%%\nFA %.2f%%\nCF %.2f%%\nscored_speech %.2f s\n",
              100.0 * total.der, 100.0 * total.missed, 100.0 * total.false_alarm,
              100.0 * total.confusion, total.scored_speech);
  if (!a.json.empty()) write_text_file(a.json, der_report_json(total, a.collar));
  if (!a.csv.empty()) write_text_file(a.csv, der_report_csv(total, a.collar));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Speaker clustering with an unfolded infinite GMM"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Write a seeded synthetic corpus (JSON) and reference RTTM");
  s->add_option("--recordings", synth.recordings, "Number of recordings")->capture_default_str();
  s->add_option("--speakers", synth.speakers, "Speakers per recording (overrides --speaker-counts)")
      ->check(CLI::PositiveNumber);
  s->add_option("--speaker-counts", synth.speaker_counts, "Speaker counts to draw from")
      ->delimiter(',')
      ->capture_default_str();
  s->add_option("--chunks", synth.chunks, "Chunks per recording")->capture_default_str();
  s->add_option("--chunk-size", synth.chunk_size, "Frames per chunk (T)")->capture_default_str();
  s->add_option("--feature-dim", synth.feature_dim, "Frame feature dimension")->capture_default_str();
  s->add_option("--inventory", synth.inventory, "Size of the speaker inventory")->capture_default_str();
  s->add_option("--overlap", synth.overlap, "Target overlap fraction")->capture_default_str();
  s->add_option("--noise", synth.noise, "Feature noise stddev")->capture_default_str();
  s->add_option("--frame-period", synth.frame_period, "Seconds per frame")->capture_default_str();
  s->add_option("--seed", synth.seed, "Random seed")->capture_default_str();
  s->add_option("--out", synth.out, "Corpus JSON path")->capture_default_str();
  s->add_option("--rttm", synth.rttm, "Reference RTTM path");

  SampleArgs sample;
  auto* sa = app.add_subcommand("sample", "Write an embeddings CSV drawn from a planted or generative mixture");
  sa->add_option("--kind", sample.kind, "planted or generative")
      ->check(CLI::IsMember({"planted", "generative"}))
      ->capture_default_str();
  sa->add_option("--clusters", sample.clusters, "Planted clusters")->capture_default_str();
  sa->add_option("-n,--count", sample.n, "Number of embeddings")->capture_default_str();
  sa->add_option("--dim", sample.dim, "Embedding dimension (C)")->capture_default_str();
  sa->add_option("--separation", sample.separation, "Pairwise planted mean distance")->capture_default_str();
  sa->add_option("--precision", sample.precision, "Planted cluster precision")->capture_default_str();
  sa->add_option("--alpha", sample.alpha, "Concentration (generative)")->capture_default_str();
  sa->add_option("--truncation", sample.truncation, "Truncation (generative)")->capture_default_str();
  sa->add_option("--seed", sample.seed, "Random seed")->capture_default_str();
  sa->add_option("--out", sample.out, "Embeddings CSV path")->capture_default_str();
  sa->add_option("--truth", sample.truth, "Truth labels CSV path");

  ClusterArgs cluster;
  auto* c = app.add_subcommand("cluster", "Cluster an embeddings CSV");
  c->add_option("--embeddings", cluster.embeddings, "Embeddings CSV (n,i,s,e_1..e_C)")->required();
  c->add_option("--truth", cluster.truth, "Truth labels CSV (n,label)");
  c->add_option("--backend", cluster.backend, "igmm or ahc")
      ->check(CLI::IsMember({"igmm", "ahc"}))
      ->capture_default_str();
  c->add_option("--init", cluster.init, "uniform or softkmeans")
      ->check(CLI::IsMember({"uniform", "softkmeans"}))
      ->capture_default_str();
  add_igmm_options(c, cluster.hyper.alpha, cluster.hyper.truncation, cluster.hyper.em_iters);
  c->add_option("--tau", cluster.tau, "Soft k-means temperature")->capture_default_str();
  c->add_option("--ahc-threshold", cluster.ahc_threshold, "AHC cosine-distance stop threshold");
  c->add_option("--ahc-target", cluster.ahc_target, "AHC target cluster count");
  c->add_option("--out", cluster.out, "Assignments CSV path");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train the encoder with the multi-task loss");
  t->add_option("--corpus", tr.corpus, "Training corpus JSON")->required();
  t->add_option("--heldout", tr.heldout, "Held-out corpus JSON");
  t->add_option("--seed", tr.seed, "Initialization seed")->capture_default_str();
  t->add_option("--epochs", tr.epochs, "Epochs")->capture_default_str();
  t->add_option("--lr", tr.lr, "SGD step size")->capture_default_str();
  t->add_option("--lambda1", tr.lambda1, "Clustering loss weight")->capture_default_str();
  t->add_option("--lambda2", tr.lambda2, "Speaker-ID loss weight")->capture_default_str();
  add_igmm_options(t, tr.alpha, tr.truncation, tr.em_iters);
  t->add_option("--chunk-size", tr.chunk_size, "Frames per chunk (T)")->capture_default_str();
  t->add_option("--local-speakers", tr.local_speakers, "Output slots per chunk (S_Local)")
      ->capture_default_str();
  t->add_option("--embed-dim", tr.embed_dim, "Embedding dimension (C)")->capture_default_str();
  t->add_option("--hidden-dim", tr.hidden_dim, "Encoder width (D)")->capture_default_str();
  t->add_option("--silence-threshold", tr.silence, "Silent-slot mean activity threshold")
      ->capture_default_str();
  t->add_option("--collar", tr.collar, "DER collar in seconds")->capture_default_str();
  t->add_option("--metrics", tr.metrics, "Per-epoch metrics CSV")->capture_default_str();
  t->add_option("--checkpoint", tr.checkpoint, "Final checkpoint JSON")->capture_default_str();
  t->add_flag("--quiet", tr.quiet, "Do not print per-epoch metrics");

  DiarizeArgs di;
  auto* d = app.add_subcommand("diarize", "Diarize a corpus with a trained checkpoint");
  d->add_option("--checkpoint", di.checkpoint, "Checkpoint JSON")->required();
  d->add_option("--corpus", di.corpus, "Corpus JSON")->required();
  d->add_option("--out", di.out, "Hypothesis RTTM path")->capture_default_str();
  add_igmm_options(d, di.alpha, di.truncation, di.em_iters);
  d->add_option("--chunk-size", di.chunk_size, "Frames per chunk (T)")->capture_default_str();
  d->add_option("--silence-threshold", di.silence, "Silent-slot mean activity threshold")
      ->capture_default_str();
  d->add_option("--collar", di.collar, "DER collar in seconds")->capture_default_str();

  ScoreArgs sc;
  auto* o = app.add_subcommand("score", "Score a hypothesis RTTM against a reference RTTM");
  o->add_option("--ref", sc.ref, "Reference RTTM")->required();
  o->add_option("--hyp", sc.hyp, "Hypothesis RTTM")->required();
  o->add_option("--collar", sc.collar, "Collar in seconds")
      ->capture_default_str()
      ->check(CLI::NonNegativeNumber);
  o->add_option("--json", sc.json, "Write the report as JSON");
  o->add_option("--csv", sc.csv, "Write the report as CSV");

  CLI11_PARSE(app, argc, argv);

  try {
    if (s->parsed()) return run_synth(synth);
    if (sa->parsed()) return run_sample(sample);
    if (c->parsed()) return run_cluster(cluster);
    if (t->parsed()) return run_train(tr);
    if (d->parsed()) return run_diarize(di);
    if (o->parsed()) return run_score(sc);
  } catch (const DivergenceError& e) {
    std::fprintf(stderr, "diverged: %s\n", e.what());
    return 3;
  } catch (const ParseError& e) {
    std::fprintf(stderr, "parse error: %s\n", e.what());
    return 2;
  } catch (const ValidationError& e) {
    std::fprintf(stderr, "invalid input: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
