#include "igmmdiar/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <string>
#include <utility>

#include "igmmdiar/errors.hpp"
#include "igmmdiar/rng.hpp"

namespace igmmdiar {

// --- synthetic data ------------------------------------------------------------

namespace {

void random_unit_vector(Rng& rng, std::span<double> out) {
  double norm = 0.0;
  do {
    for (double& x : out) x = rng.normal();
    norm = std::sqrt(squared_norm(out));
  } while (norm == 0.0);
  for (double& x : out) x /= norm;
}

}  // namespace

SpeakerInventory make_inventory(int count, int feature_dim, std::uint64_t seed) {
  if (count < 1 || feature_dim < 1) throw ValidationError("inventory: count and dim must be >= 1");
  Rng rng(seed);
  SpeakerInventory inv;
  inv.vectors = Matrix<double>(static_cast<std::size_t>(count), static_cast<std::size_t>(feature_dim));
  for (std::size_t m = 0; m < inv.vectors.rows(); ++m) random_unit_vector(rng, inv.vectors.row(m));
  return inv;
}

void SynthConfig::validate() const {
  if (speakers < 1) throw ValidationError("synth: speakers must be >= 1");
  if (frames < 1) throw ValidationError("synth: frames must be >= 1");
  if (feature_dim < 1) throw ValidationError("synth: feature_dim must be >= 1");
  if (!(overlap >= 0.0 && overlap < 1.0)) throw ValidationError("synth: overlap must be in [0, 1)");
  if (!(noise >= 0.0) || !std::isfinite(noise)) throw ValidationError("synth: noise must be >= 0");
  if (min_turn < 2 || max_turn < min_turn) {
    throw ValidationError("synth: need 2 <= min_turn <= max_turn");
  }
  if (!(pause_prob >= 0.0 && pause_prob <= 1.0)) {
    throw ValidationError("synth: pause_prob must be in [0, 1]");
  }
  if (max_pause < 1) throw ValidationError("synth: max_pause must be >= 1");
  if (!(frame_period > 0.0)) throw ValidationError("synth: frame_period must be > 0");
}

std::string speaker_name(int identity) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "spk%02d", identity);
  return buf;
}

DiarTimeline Recording::reference() const {
  std::vector<std::string> names;
  names.reserve(speakers.size());
  for (int id : speakers) names.push_back(speaker_name(id));
  return timeline_from_activity(activity, frame_period, names);
}

Recording synth_recording(const SynthConfig& config, std::uint64_t seed,
                          const SpeakerInventory* inventory, std::string id) {
  config.validate();
  Rng rng(seed);
  const auto n_spk = static_cast<std::size_t>(config.speakers);
  const auto dim = static_cast<std::size_t>(config.feature_dim);
  const auto frames = static_cast<std::size_t>(config.frames);

  Recording rec;
  rec.id = std::move(id);
  rec.frame_period = config.frame_period;

  Matrix<double> identity(n_spk, dim);
  if (inventory != nullptr) {
    if (inventory->vectors.cols() != dim) {
      throw ValidationError("synth: inventory dimension differs from feature_dim");
    }
    if (inventory->size() < n_spk) throw ValidationError("synth: inventory has too few speakers");
    std::vector<int> pool(inventory->size());
    std::iota(pool.begin(), pool.end(), 0);
    for (std::size_t s = 0; s < n_spk; ++s) {
      const int j = rng.uniform_int(static_cast<int>(s), static_cast<int>(pool.size()) - 1);
      std::swap(pool[s], pool[static_cast<std::size_t>(j)]);
      rec.speakers.push_back(pool[s]);
      const auto src = inventory->vectors.row(static_cast<std::size_t>(pool[s]));
      std::copy(src.begin(), src.end(), identity.row(s).begin());
    }
  } else {
    for (std::size_t s = 0; s < n_spk; ++s) {
      rec.speakers.push_back(static_cast<int>(s));
      random_unit_vector(rng, identity.row(s));
    }
  }

  // Turn layout. The overlap of each new turn with the previous one is chosen
  // so the running fraction of two-speaker frames tracks config.overlap.
  rec.activity = Matrix<double>(frames, n_spk, 0.0);
  const double rho = config.overlap;
  long cur_end = 0;       // end of the latest turn
  long prev_start = 0;
  long twoback_end = 0;   // end of the turn before the latest
  long overlap_sum = 0;
  int prev_speaker = -1;
  const auto total = static_cast<long>(frames);
  while (cur_end < total) {
    int speaker = 0;
    if (n_spk > 1) {
      speaker = rng.uniform_int(0, config.speakers - 2);
      if (prev_speaker >= 0 && speaker >= prev_speaker) ++speaker;
    }
    const long len = rng.uniform_int(config.min_turn, config.max_turn);
    long ov = 0;
    if (prev_speaker >= 0 && n_spk > 1 && rho > 0.0) {
      const double want = (rho * static_cast<double>(cur_end + len) -
                           static_cast<double>(overlap_sum)) / (1.0 + rho);
      const long hi = std::min(len - 1, cur_end - std::max(twoback_end, prev_start + 1));
      ov = std::clamp(std::lround(want), 0L, std::max(0L, hi));
    }
    long gap = 0;
    if (ov == 0 && prev_speaker >= 0 && rng.uniform() < config.pause_prob) {
      gap = rng.uniform_int(1, config.max_pause);
    }
    const long start = cur_end - ov + gap;
    const long end = std::min(start + len, total);
    for (long t = std::max(0L, start); t < end; ++t) {
      rec.activity(static_cast<std::size_t>(t), static_cast<std::size_t>(speaker)) = 1.0;
    }
    overlap_sum += std::max(0L, std::min(cur_end, end) - start);
    twoback_end = cur_end;
    prev_start = start;
    cur_end = std::max(cur_end, end);
    if (start >= total) break;
    prev_speaker = speaker;
  }

  rec.features = Matrix<double>(frames, dim, 0.0);
  for (std::size_t t = 0; t < frames; ++t) {
    auto x = rec.features.row(t);
    for (std::size_t s = 0; s < n_spk; ++s) {
      if (rec.activity(t, s) == 0.0) continue;
      for (std::size_t d = 0; d < dim; ++d) x[d] += identity(s, d);
    }
    for (std::size_t d = 0; d < dim; ++d) x[d] += config.noise * rng.normal();
  }
  return rec;
}

void CorpusConfig::validate() const {
  if (recordings < 1) throw ValidationError("corpus: recordings must be >= 1");
  if (speaker_counts.empty()) throw ValidationError("corpus: speaker_counts is empty");
  for (int c : speaker_counts) {
    if (c < 1) throw ValidationError("corpus: speaker counts must be >= 1");
    if (c > inventory_size) throw ValidationError("corpus: speaker count exceeds inventory size");
  }
  if (chunks_per_recording < 1 || chunk_size < 1) {
    throw ValidationError("corpus: chunks_per_recording and chunk_size must be >= 1");
  }
}

Corpus synth_corpus(const CorpusConfig& config, std::uint64_t seed,
                    const SpeakerInventory* inventory) {
  config.validate();
  Rng master(seed);
  Corpus corpus;
  corpus.seed = seed;
  corpus.config = config;
  const std::uint64_t inventory_seed = master.next_u64();
  if (inventory != nullptr) {
    if (inventory->size() != static_cast<std::size_t>(config.inventory_size) ||
        inventory->vectors.cols() != static_cast<std::size_t>(config.synth.feature_dim)) {
      throw ValidationError("corpus: inventory shape differs from the config");
    }
    corpus.inventory = *inventory;
  } else {
    corpus.inventory = make_inventory(config.inventory_size, config.synth.feature_dim, inventory_seed);
  }
  for (int r = 0; r < config.recordings; ++r) {
    SynthConfig sc = config.synth;
    sc.speakers = config.speaker_counts[static_cast<std::size_t>(
        master.uniform_int(0, static_cast<int>(config.speaker_counts.size()) - 1))];
    sc.frames = config.chunks_per_recording * config.chunk_size;
    char id[32];
    std::snprintf(id, sizeof(id), "rec%03d", r);
    corpus.recordings.push_back(synth_recording(sc, master.next_u64(), &corpus.inventory, id));
  }
  return corpus;
}

// --- chunking ------------------------------------------------------------------

Chunking chunk_recording(const Recording& recording, int chunk_size, int local_speakers) {
  if (chunk_size < 1) throw ValidationError("chunk_recording: chunk size must be >= 1");
  if (local_speakers < 1) throw ValidationError("chunk_recording: S_Local must be >= 1");
  const auto t_len = static_cast<std::size_t>(chunk_size);
  const auto s_local = static_cast<std::size_t>(local_speakers);
  const std::size_t n_chunks = recording.frames() / t_len;
  const std::size_t n_global = recording.activity.cols();
  const std::size_t dim = recording.features.cols();

  Chunking out;
  for (std::size_t i = 0; i < n_chunks; ++i) {
    const std::size_t offset = i * t_len;
    // (first active frame, speaker) for speakers active in this chunk.
    std::vector<std::pair<std::size_t, int>> active;
    for (std::size_t g = 0; g < n_global; ++g) {
      for (std::size_t t = 0; t < t_len; ++t) {
        if (recording.activity(offset + t, g) != 0.0) {
          active.emplace_back(t, static_cast<int>(g));
          break;
        }
      }
    }
    std::sort(active.begin(), active.end());
    if (active.size() > s_local) {
      out.dropped_speakers += static_cast<int>(active.size() - s_local);
      active.resize(s_local);
    }
    Chunk chunk;
    chunk.index = static_cast<int>(i);
    chunk.features = Matrix<double>(t_len, dim);
    for (std::size_t t = 0; t < t_len; ++t) {
      const auto src = recording.features.row(offset + t);
      std::copy(src.begin(), src.end(), chunk.features.row(t).begin());
    }
    chunk.labels = Matrix<double>(t_len, s_local, 0.0);
    chunk.slot_speakers.assign(s_local, -1);
    for (std::size_t s = 0; s < active.size(); ++s) {
      const auto g = static_cast<std::size_t>(active[s].second);
      chunk.slot_speakers[s] = active[s].second;
      for (std::size_t t = 0; t < t_len; ++t) chunk.labels(t, s) = recording.activity(offset + t, g);
    }
    out.chunks.push_back(std::move(chunk));
  }
  return out;
}

// --- encoder -------------------------------------------------------------------

void EncoderShape::validate() const {
  if (feature_dim < 1 || hidden_dim < 1 || local_speakers < 1 || embed_dim < 1 || inventory < 1) {
    throw ValidationError("encoder: all dimensions must be >= 1");
  }
  if (local_speakers > kMaxPitSpeakers) throw ValidationError("encoder: S_Local must be <= 6");
}

const char* tensor_name(EncoderTensor t) {
  static constexpr const char* kNames[] = {
      "trunk1.weight",   "trunk1.bias",    "trunk2.weight", "trunk2.bias",
      "activity.weight", "activity.bias",  "embedding.weight", "embedding.bias",
      "speaker.weight",  "speaker.bias",
  };
  return kNames[t];
}

namespace {

std::array<std::pair<std::size_t, std::size_t>, kNumEncoderTensors> tensor_shapes(
    const EncoderShape& s) {
  const auto f = static_cast<std::size_t>(s.feature_dim);
  const auto d = static_cast<std::size_t>(s.hidden_dim);
  const auto l = static_cast<std::size_t>(s.local_speakers);
  const auto c = static_cast<std::size_t>(s.embed_dim);
  const auto m = static_cast<std::size_t>(s.inventory);
  return {{{d, f}, {1, d}, {d, d}, {1, d}, {l, d}, {1, l}, {c, d}, {1, c}, {m, c}, {1, m}}};
}

}  // namespace

EncoderParams zero_encoder(const EncoderShape& shape) {
  shape.validate();
  EncoderParams p;
  p.shape = shape;
  const auto shapes = tensor_shapes(shape);
  for (std::size_t i = 0; i < kNumEncoderTensors; ++i) {
    p.tensors[i] = Matrix<double>(shapes[i].first, shapes[i].second, 0.0);
  }
  return p;
}

EncoderParams init_encoder(const EncoderShape& shape, std::uint64_t seed) {
  EncoderParams p = zero_encoder(shape);
  Rng rng(seed);
  for (std::size_t i = 0; i < kNumEncoderTensors; ++i) {
    auto& m = p.tensors[i];
    if (m.rows() == 1 && i % 2 == 1) continue;  // biases stay zero
    const double scale = 1.0 / std::sqrt(static_cast<double>(m.cols()));
    for (double& w : m.data()) w = scale * rng.normal();
  }
  return p;
}

void validate(const EncoderParams& params) {
  params.shape.validate();
  const auto shapes = tensor_shapes(params.shape);
  for (std::size_t i = 0; i < kNumEncoderTensors; ++i) {
    const auto& m = params.tensors[i];
    if (m.rows() != shapes[i].first || m.cols() != shapes[i].second) {
      throw ValidationError(std::string("encoder: tensor ") +
                            tensor_name(static_cast<EncoderTensor>(i)) + " has the wrong shape");
    }
    require_finite(m.data(), tensor_name(static_cast<EncoderTensor>(i)));
  }
}

BasicEncoderParams<Var> record_params(Tape& tape, const EncoderParams& params) {
  BasicEncoderParams<Var> out;
  out.shape = params.shape;
  for (std::size_t i = 0; i < kNumEncoderTensors; ++i) {
    out.tensors[i] = variables_of(tape, params.tensors[i]);
  }
  return out;
}

EncoderParams gradient_of(const Adjoints& adjoints, const BasicEncoderParams<Var>& recorded) {
  EncoderParams g;
  g.shape = recorded.shape;
  for (std::size_t i = 0; i < kNumEncoderTensors; ++i) {
    const auto& m = recorded.tensors[i];
    g.tensors[i] = Matrix<double>(m.rows(), m.cols(), adjoints.wrt(m.data()));
  }
  return g;
}

std::vector<bool> detect_silent_slots(const Matrix<double>& activity, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw ValidationError("detect_silent_slots: threshold must be in (0, 1)");
  }
  std::vector<bool> silent(activity.cols(), true);
  if (activity.rows() == 0) return silent;
  for (std::size_t s = 0; s < activity.cols(); ++s) {
    double total = 0.0;
    for (std::size_t t = 0; t < activity.rows(); ++t) total += activity(t, s);
    silent[s] = total / static_cast<double>(activity.rows()) < threshold;
  }
  return silent;
}

template <class S>
ChunkOutput<S> encode_chunk(const Matrix<double>& features, const BasicEncoderParams<S>& p,
                            double silence_threshold) {
  using std::tanh;
  const EncoderShape& sh = p.shape;
  if (features.cols() != static_cast<std::size_t>(sh.feature_dim)) {
    throw ValidationError("encode_chunk: feature dimension mismatch");
  }
  const std::size_t frames = features.rows();
  const auto d_hidden = static_cast<std::size_t>(sh.hidden_dim);
  const auto s_local = static_cast<std::size_t>(sh.local_speakers);
  const auto c_dim = static_cast<std::size_t>(sh.embed_dim);
  const Matrix<S>& w1 = p[kTrunk1Weight];
  const Matrix<S>& b1 = p[kTrunk1Bias];
  const Matrix<S>& w2 = p[kTrunk2Weight];
  const Matrix<S>& b2 = p[kTrunk2Bias];
  const Matrix<S>& wa = p[kActivityWeight];
  const Matrix<S>& ba = p[kActivityBias];
  const Matrix<S>& we = p[kEmbedWeight];
  const Matrix<S>& be = p[kEmbedBias];

  // Stored transposed (slot-major / dimension-major) for the pooling dots.
  Matrix<S> act_t(s_local, frames);
  Matrix<S> z_t(c_dim, frames);
  std::vector<S> h1(d_hidden);
  std::vector<S> h2(d_hidden);
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t j = 0; j < d_hidden; ++j) {
      h1[j] = tanh(dot(w1.row(j), features.row(t)) + b1(0, j));
    }
    const std::span<const S> h1v(h1);
    for (std::size_t j = 0; j < d_hidden; ++j) h2[j] = tanh(dot(w2.row(j), h1v) + b2(0, j));
    const std::span<const S> h2v(h2);
    for (std::size_t s = 0; s < s_local; ++s) act_t(s, t) = sigmoid(dot(wa.row(s), h2v) + ba(0, s));
    for (std::size_t c = 0; c < c_dim; ++c) z_t(c, t) = dot(we.row(c), h2v) + be(0, c);
  }

  ChunkOutput<S> out;
  out.activity = detail::transpose(act_t);
  out.embeddings = Matrix<S>(s_local, c_dim);
  for (std::size_t s = 0; s < s_local; ++s) {
    const S denom = sum(std::as_const(act_t).row(s)) + kEmbeddingAvgEpsilon;
    for (std::size_t c = 0; c < c_dim; ++c) {
      out.embeddings(s, c) = dot(std::as_const(act_t).row(s), std::as_const(z_t).row(c)) / denom;
    }
  }
  out.silent = detect_silent_slots(values_of(out.activity), silence_threshold);
  return out;
}

template ChunkOutput<double> encode_chunk(const Matrix<double>&, const BasicEncoderParams<double>&,
                                          double);
template ChunkOutput<Var> encode_chunk(const Matrix<double>&, const BasicEncoderParams<Var>&,
                                       double);

std::vector<int> slot_truth(const Chunk& chunk, std::span<const int> permutation) {
  if (permutation.size() != chunk.slot_speakers.size()) {
    throw ValidationError("slot_truth: permutation size differs from slot count");
  }
  std::vector<int> out(permutation.size(), -1);
  for (std::size_t s = 0; s < permutation.size(); ++s) {
    out[s] = chunk.slot_speakers[static_cast<std::size_t>(permutation[s])];
  }
  return out;
}

namespace {

std::string cluster_name(int k) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "cluster%02d", k);
  return buf;
}

}  // namespace

DiarTimeline stitch(std::span<const ChunkOutput<double>> outputs, std::span<const SlotRef> slots,
                    const Matrix<double>& resp, double frame_period) {
  if (resp.rows() != slots.size()) {
    throw ValidationError("stitch: responsibilities and slot map differ in length");
  }
  std::vector<std::size_t> offsets(outputs.size() + 1, 0);
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    offsets[i + 1] = offsets[i] + outputs[i].activity.rows();
  }
  const std::vector<int> labels = hard_assign(resp);
  const std::size_t clusters = resp.cols();
  Matrix<double> global(offsets.back(), clusters, 0.0);
  for (std::size_t n = 0; n < slots.size(); ++n) {
    const SlotRef ref = slots[n];
    if (ref.chunk < 0 || static_cast<std::size_t>(ref.chunk) >= outputs.size()) {
      throw ValidationError("stitch: slot map references a missing chunk");
    }
    const auto& out = outputs[static_cast<std::size_t>(ref.chunk)];
    if (ref.slot < 0 || static_cast<std::size_t>(ref.slot) >= out.activity.cols()) {
      throw ValidationError("stitch: slot map references a missing slot");
    }
    if (!out.silent.empty() && out.silent[static_cast<std::size_t>(ref.slot)]) {
      throw ValidationError("stitch: slot map references a silent slot");
    }
    const auto k = static_cast<std::size_t>(labels[n]);
    const std::size_t offset = offsets[static_cast<std::size_t>(ref.chunk)];
    for (std::size_t t = 0; t < out.activity.rows(); ++t) {
      if (out.activity(t, static_cast<std::size_t>(ref.slot)) >= kActivityThreshold) {
        global(offset + t, k) = 1.0;
      }
    }
  }
  std::vector<std::string> names;
  for (std::size_t k = 0; k < clusters; ++k) names.push_back(cluster_name(static_cast<int>(k)));
  return timeline_from_activity(global, frame_period, names);
}

// --- training ------------------------------------------------------------------

void TrainConfig::validate(const EncoderShape& shape) const {
  hyper.validate();
  weights.validate();
  if (hyper.dim != shape.embed_dim) {
    throw ValidationError("train: iGMM dimension must equal the embedding dimension");
  }
  if (epochs < 0) throw ValidationError("train: epochs must be >= 0");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw ValidationError("train: learning rate must be > 0");
  }
  if (chunk_size < 1) throw ValidationError("train: chunk size must be >= 1");
  if (!(silence_threshold > 0.0 && silence_threshold < 1.0)) {
    throw ValidationError("train: silence threshold must be in (0, 1)");
  }
  if (!(init_tau > 0.0)) throw ValidationError("train: init tau must be > 0");
  if (!(collar >= 0.0)) throw ValidationError("train: collar must be >= 0");
}

namespace {

template <class S>
struct RecordingPass {
  std::vector<Chunk> chunks;
  std::vector<ChunkOutput<S>> outputs;
  std::vector<S> diar;                  // PIT loss per chunk
  BasicEmbeddingSet<S> candidates;      // non-silent slots
  std::vector<int> truth;               // global speaker per candidate, -1 if unmatched
};

template <class S>
RecordingPass<S> forward_recording(const BasicEncoderParams<S>& params, const Recording& rec,
                                   const TrainConfig& config) {
  RecordingPass<S> pass;
  pass.chunks = chunk_recording(rec, config.chunk_size, params.shape.local_speakers).chunks;
  std::vector<S> rows;
  const auto c_dim = static_cast<std::size_t>(params.shape.embed_dim);
  for (const Chunk& chunk : pass.chunks) {
    ChunkOutput<S> out = encode_chunk(chunk.features, params, config.silence_threshold);
    PitResult<S> pit = pit_diar_loss(chunk.labels, out.activity);
    const std::vector<int> truth = slot_truth(chunk, pit.permutation);
    for (std::size_t s = 0; s < out.silent.size(); ++s) {
      if (out.silent[s]) continue;
      pass.candidates.slots.push_back({chunk.index, static_cast<int>(s)});
      pass.truth.push_back(truth[s]);
      for (std::size_t c = 0; c < c_dim; ++c) rows.push_back(out.embeddings(s, c));
    }
    pass.diar.push_back(pit.loss);
    pass.outputs.push_back(std::move(out));
  }
  pass.candidates.values = Matrix<S>(pass.candidates.slots.size(), c_dim, std::move(rows));
  return pass;
}

template <class S>
struct LossTerms {
  S diar{};
  S cluster{};
  S spk{};
  S total{};
  std::size_t embeddings = 0;
  Matrix<double> init;
};

// Assembles the multi-task loss. Terms whose weight is zero are evaluated on
// plain values only, so they add nothing to the tape.
template <class S>
LossTerms<S> assemble_loss(const RecordingPass<S>& pass, const BasicEncoderParams<S>& params,
                           const Recording& rec, const TrainConfig& config,
                           const Matrix<double>* frozen_init) {
  LossTerms<S> terms;
  if (pass.diar.empty()) throw ValidationError("train: recording " + rec.id + " has no chunks");
  terms.diar = sum(std::span<const S>(pass.diar)) / static_cast<double>(pass.diar.size());

  // Embeddings with a matched reference speaker.
  std::vector<std::size_t> keep;
  for (std::size_t n = 0; n < pass.truth.size(); ++n)
    if (pass.truth[n] >= 0) keep.push_back(n);
  const std::size_t c_dim = pass.candidates.values.cols();
  Matrix<S> emb(keep.size(), c_dim);
  std::vector<int> truth;
  std::vector<int> identity;
  for (std::size_t i = 0; i < keep.size(); ++i) {
    const auto src = pass.candidates.values.row(keep[i]);
    std::copy(src.begin(), src.end(), emb.row(i).begin());
    truth.push_back(pass.truth[keep[i]]);
    identity.push_back(rec.speakers[static_cast<std::size_t>(pass.truth[keep[i]])]);
  }
  terms.embeddings = keep.size();
  const Matrix<double> emb_values = values_of(emb);

  terms.cluster = S(0.0);
  if (keep.size() >= 2) {
    if (frozen_init != nullptr) {
      terms.init = *frozen_init;
    } else {
      InitOptions init;
      init.tau = config.init_tau;
      terms.init = init_responsibilities(emb_values, config.hyper.truncation, init);
    }
    if (config.weights.lambda1 > 0.0) {
      const auto run = run_unfolded(emb, config.hyper, terms.init);
      terms.cluster = cluster_loss(run.responsibilities, std::span<const int>(truth));
    } else {
      const auto run = run_unfolded(emb_values, config.hyper, terms.init);
      terms.cluster = S(cluster_loss(run.responsibilities, std::span<const int>(truth)));
    }
  }

  const Matrix<S>& spk_w = params[kSpeakerWeight];
  const Matrix<S>& spk_b = params[kSpeakerBias];
  if (config.weights.lambda2 > 0.0) {
    terms.spk = speaker_id_loss(emb, std::span<const int>(identity), spk_w, spk_b.row(0));
  } else {
    const Matrix<double> w = values_of(spk_w);
    const Matrix<double> b = values_of(spk_b);
    terms.spk = S(speaker_id_loss(emb_values, std::span<const int>(identity), w, b.row(0)));
  }
  terms.total = total_loss(terms.diar, terms.cluster, terms.spk, config.weights);
  return terms;
}

template <class S>
LossBreakdown breakdown(const LossTerms<S>& t) {
  return {value_of(t.diar), value_of(t.cluster), value_of(t.spk), value_of(t.total), t.embeddings};
}

LossAndGradient gradient_on(Tape& tape, const EncoderParams& params, const Recording& rec,
                            const TrainConfig& config, const Matrix<double>* frozen_init) {
  tape.clear();
  const BasicEncoderParams<Var> recorded = record_params(tape, params);
  const RecordingPass<Var> pass = forward_recording(recorded, rec, config);
  LossTerms<Var> terms = assemble_loss(pass, recorded, rec, config, frozen_init);
  LossAndGradient out;
  out.loss = breakdown(terms);
  out.init = std::move(terms.init);
  if (terms.total.is_constant()) {
    out.gradient = zero_encoder(params.shape);
  } else {
    out.gradient = gradient_of(tape.backward(terms.total), recorded);
  }
  return out;
}

}  // namespace

LossBreakdown recording_loss(const EncoderParams& params, const Recording& recording,
                             const TrainConfig& config, const Matrix<double>* frozen_init) {
  config.validate(params.shape);
  const RecordingPass<double> pass = forward_recording(params, recording, config);
  return breakdown(assemble_loss(pass, params, recording, config, frozen_init));
}

LossAndGradient recording_gradient(const EncoderParams& params, const Recording& recording,
                                   const TrainConfig& config, const Matrix<double>* frozen_init) {
  config.validate(params.shape);
  Tape tape;
  return gradient_on(tape, params, recording, config, frozen_init);
}

Diarization diarize(const EncoderParams& params, const Recording& recording,
                    const TrainConfig& config) {
  config.validate(params.shape);
  const RecordingPass<double> pass = forward_recording(params, recording, config);
  Diarization out;
  out.embeddings = pass.candidates;
  out.truth = pass.truth;
  if (pass.candidates.size() == 0) {
    out.responsibilities = Matrix<double>(0, static_cast<std::size_t>(config.hyper.truncation));
    return out;
  }
  InitOptions init;
  init.tau = config.init_tau;
  const Matrix<double> start =
      init_responsibilities(pass.candidates.values, config.hyper.truncation, init);
  out.responsibilities = run_unfolded(pass.candidates.values, config.hyper, start).responsibilities;
  out.labels = hard_assign(out.responsibilities);
  out.timeline = stitch(pass.outputs, pass.candidates.slots, out.responsibilities,
                        recording.frame_period);
  return out;
}

EvalSummary evaluate(const EncoderParams& params, std::span<const Recording> recordings,
                     const TrainConfig& config) {
  EvalSummary sum_all;
  std::size_t ari_count = 0;
  for (const Recording& rec : recordings) {
    const Diarization d = diarize(params, rec, config);
    std::vector<int> pred;
    std::vector<int> truth;
    for (std::size_t n = 0; n < d.truth.size(); ++n) {
      if (d.truth[n] < 0) continue;
      pred.push_back(d.labels[n]);
      truth.push_back(d.truth[n]);
    }
    if (pred.size() >= 2) {
      sum_all.ari += exact_ari(pred, truth);
      ++ari_count;
    }
    const DerReport r = score_der(rec.reference(), d.timeline, config.collar);
    sum_all.der += r.der;
    sum_all.missed += r.missed;
    sum_all.false_alarm += r.false_alarm;
    sum_all.confusion += r.confusion;
  }
  if (ari_count > 0) sum_all.ari /= static_cast<double>(ari_count);
  if (!recordings.empty()) {
    const auto n = static_cast<double>(recordings.size());
    sum_all.der /= n;
    sum_all.missed /= n;
    sum_all.false_alarm /= n;
    sum_all.confusion /= n;
  }
  return sum_all;
}

TrainResult train(EncoderParams params, std::span<const Recording> train_set,
                  std::span<const Recording> heldout, const TrainConfig& config,
                  const std::function<void(const EpochMetrics&)>& on_epoch) {
  validate(params);
  config.validate(params.shape);
  if (train_set.empty()) throw ValidationError("train: corpus is empty");
  const std::span<const Recording> scored = heldout.empty() ? train_set : heldout;

  TrainResult result;
  Tape tape;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    EpochMetrics m;
    m.epoch = epoch;
    for (const Recording& rec : train_set) {
      LossAndGradient step;
      try {
        step = gradient_on(tape, params, rec, config, nullptr);
      } catch (const DomainError& e) {
        // Parameters were finite on entry, so this is a blow-up mid-training.
        throw DivergenceError("train: epoch " + std::to_string(epoch) + ", recording " + rec.id +
                              ": " + e.what());
      }
      if (!std::isfinite(step.loss.total)) {
        throw DivergenceError("train: non-finite loss at epoch " + std::to_string(epoch) +
                              ", recording " + rec.id);
      }
      for (std::size_t i = 0; i < kNumEncoderTensors; ++i) {
        auto& w = params.tensors[i].data();
        const auto& g = step.gradient.tensors[i].data();
        for (std::size_t j = 0; j < w.size(); ++j) {
          if (!std::isfinite(g[j])) {
            throw DivergenceError("train: non-finite gradient at epoch " + std::to_string(epoch) +
                                  ", recording " + rec.id);
          }
          w[j] -= config.learning_rate * g[j];
          if (!std::isfinite(w[j])) {
            throw DivergenceError("train: non-finite parameter at epoch " + std::to_string(epoch) +
                                  ", recording " + rec.id);
          }
        }
      }
      m.diar_loss += step.loss.diar;
      m.cluster_loss += step.loss.cluster;
      m.spk_loss += step.loss.spk;
      m.total_loss += step.loss.total;
    }
    const auto n = static_cast<double>(train_set.size());
    m.diar_loss /= n;
    m.cluster_loss /= n;
    m.spk_loss /= n;
    m.total_loss /= n;
    const EvalSummary e = evaluate(params, scored, config);
    m.ari = e.ari;
    m.der = e.der;
    m.missed = e.missed;
    m.false_alarm = e.false_alarm;
    m.confusion = e.confusion;
    result.history.push_back(m);
    if (on_epoch) on_epoch(m);
  }
  result.params = std::move(params);
  return result;
}

}  // namespace igmmdiar
