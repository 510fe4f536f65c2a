#pragma once

// Desk-scale diarization pipeline: synthetic recordings, chunking, a small
// feed-forward encoder that emits per-chunk speaker activities and
// embeddings, silent-slot detection, multi-task training through the
// unfolded iGMM, and cross-chunk stitching.

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "igmmdiar/autodiff.hpp"
#include "igmmdiar/eval.hpp"
#include "igmmdiar/igmm.hpp"
#include "igmmdiar/losses.hpp"
#include "igmmdiar/matrix.hpp"

namespace igmmdiar {

// --- synthetic data ------------------------------------------------------------

// Identity vectors (unit rows, M x F) of a closed set of training speakers.
struct SpeakerInventory {
  Matrix<double> vectors;
  std::size_t size() const noexcept { return vectors.rows(); }
};

SpeakerInventory make_inventory(int count, int feature_dim, std::uint64_t seed);

struct SynthConfig {
  int speakers = 3;          // S_Global
  int frames = 1000;         // L
  int feature_dim = 16;      // F
  double overlap = 0.1;      // target fraction of frames with two speakers
  double noise = 0.2;        // isotropic feature noise (stddev per dimension)
  int min_turn = 20;         // turn length range in frames
  int max_turn = 80;
  double pause_prob = 0.3;   // chance of a pause at a non-overlapping turn change
  int max_pause = 10;        // frames
  double frame_period = 0.1; // seconds

  void validate() const;
};

struct Recording {
  std::string id;
  Matrix<double> features;  // L x F
  double frame_period = 0.1;
  Matrix<double> activity;  // L x S_Global, entries 0 or 1
  std::vector<int> speakers;  // identity (inventory index) of each global speaker

  std::size_t frames() const noexcept { return features.rows(); }
  // Ground truth as a timeline; speakers are named by speaker_name(identity).
  DiarTimeline reference() const;
};

std::string speaker_name(int identity);

// Turns alternate between randomly chosen speakers; consecutive turns overlap
// so that about `overlap` of the frames carry two speakers, and never more
// than two. Frame features are the sum of the active speakers' identity
// vectors plus Gaussian noise. Without an inventory each speaker gets a fresh
// random unit vector and identities 0..S-1.
Recording synth_recording(const SynthConfig& config, std::uint64_t seed,
                          const SpeakerInventory* inventory = nullptr,
                          std::string id = "rec000");

struct CorpusConfig {
  int recordings = 20;
  std::vector<int> speaker_counts{2, 3, 4};
  int inventory_size = 16;
  int chunks_per_recording = 20;
  int chunk_size = 50;
  SynthConfig synth;  // `speakers` and `frames` are set per recording

  void validate() const;
};

struct Corpus {
  std::uint64_t seed = 0;
  CorpusConfig config;
  SpeakerInventory inventory;
  std::vector<Recording> recordings;
};

// With `inventory` the corpus reuses those speakers (for held-out sets that
// share the training inventory); otherwise a fresh inventory is drawn.
Corpus synth_corpus(const CorpusConfig& config, std::uint64_t seed,
                    const SpeakerInventory* inventory = nullptr);

// --- chunking ------------------------------------------------------------------

struct Chunk {
  int index = 0;
  Matrix<double> features;        // T x F
  Matrix<double> labels;          // T x S_Local
  std::vector<int> slot_speakers; // global speaker column per label slot, -1 if empty
};

struct Chunking {
  std::vector<Chunk> chunks;
  int dropped_speakers = 0;  // speakers beyond S_Local removed from some chunk
};

// Consecutive, non-overlapping chunks of T frames; a trailing partial chunk is
// dropped. Active speakers occupy label slots in order of first activity
// (ties to the lower speaker index); beyond S_Local the latest starters are
// dropped and counted.
Chunking chunk_recording(const Recording& recording, int chunk_size, int local_speakers);

// --- encoder ---------------------------------------------------------------------

struct EncoderShape {
  int feature_dim = 16;   // F
  int hidden_dim = 32;    // D
  int local_speakers = 3; // S_Local
  int embed_dim = 16;     // C
  int inventory = 16;     // speaker-ID classifier classes

  void validate() const;
  friend bool operator==(const EncoderShape&, const EncoderShape&) = default;
};

enum EncoderTensor : std::size_t {
  kTrunk1Weight,    // D x F
  kTrunk1Bias,      // 1 x D
  kTrunk2Weight,    // D x D
  kTrunk2Bias,      // 1 x D
  kActivityWeight,  // S_Local x D
  kActivityBias,    // 1 x S_Local
  kEmbedWeight,     // C x D
  kEmbedBias,       // 1 x C
  kSpeakerWeight,   // M x C
  kSpeakerBias,     // 1 x M
  kNumEncoderTensors,
};

const char* tensor_name(EncoderTensor t);

template <class S>
struct BasicEncoderParams {
  EncoderShape shape;
  std::array<Matrix<S>, kNumEncoderTensors> tensors;

  Matrix<S>& operator[](EncoderTensor t) { return tensors[t]; }
  const Matrix<S>& operator[](EncoderTensor t) const { return tensors[t]; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& m : tensors) n += m.size();
    return n;
  }
};
using EncoderParams = BasicEncoderParams<double>;

// Zero-filled tensors of the right shapes.
EncoderParams zero_encoder(const EncoderShape& shape);
// Weights ~ N(0, 1/fan_in), biases zero.
EncoderParams init_encoder(const EncoderShape& shape, std::uint64_t seed);
// Throws ValidationError on wrong tensor shapes or non-finite entries.
void validate(const EncoderParams& params);

BasicEncoderParams<Var> record_params(Tape& tape, const EncoderParams& params);
EncoderParams gradient_of(const Adjoints& adjoints, const BasicEncoderParams<Var>& recorded);

inline constexpr double kEmbeddingAvgEpsilon = 1e-6;
inline constexpr double kDefaultSilenceThreshold = 0.05;
inline constexpr double kActivityThreshold = 0.5;

template <class S>
struct ChunkOutput {
  Matrix<S> activity;    // T x S_Local in [0, 1]
  Matrix<S> embeddings;  // S_Local x C
  std::vector<bool> silent;
};

// h = tanh(W2 tanh(W1 x + b1) + b2); activity = sigmoid(Wa h + ba);
// z = We h + be; embedding_s = sum_t a_ts z_t / (sum_t a_ts + 1e-6).
template <class S>
ChunkOutput<S> encode_chunk(const Matrix<double>& features, const BasicEncoderParams<S>& params,
                            double silence_threshold = kDefaultSilenceThreshold);

// Slot s is silent iff its mean activity is below `threshold`.
std::vector<bool> detect_silent_slots(const Matrix<double>& activity, double threshold);

// Global speaker column matched to each estimate slot through the PIT
// permutation, or -1 when the matched reference column is empty.
std::vector<int> slot_truth(const Chunk& chunk, std::span<const int> permutation);

// Per-frame union of binarized slot activity (>= 0.5) over the slots assigned
// to each cluster by hard_assign(resp). `slots` lists the chunk/slot of each
// row of `resp`; silent slots must not appear.
DiarTimeline stitch(std::span<const ChunkOutput<double>> outputs, std::span<const SlotRef> slots,
                    const Matrix<double>& resp, double frame_period);

// --- training ----------------------------------------------------------------------

struct TrainConfig {
  IgmmHyper hyper;
  LossWeights weights;
  int epochs = 30;
  double learning_rate = 1.0;
  int chunk_size = 50;
  double silence_threshold = kDefaultSilenceThreshold;
  double init_tau = 1.0;
  double collar = 0.25;

  void validate(const EncoderShape& shape) const;
};

struct LossBreakdown {
  double diar = 0.0;
  double cluster = 0.0;  // -cARI (0 when fewer than two embeddings are retained)
  double spk = 0.0;
  double total = 0.0;
  std::size_t embeddings = 0;
};

// Loss of one recording; `frozen_init` replaces the soft-kmeans initializer
// (used for finite-difference checks, where the initializer is a constant).
LossBreakdown recording_loss(const EncoderParams& params, const Recording& recording,
                             const TrainConfig& config,
                             const Matrix<double>* frozen_init = nullptr);

struct LossAndGradient {
  LossBreakdown loss;
  EncoderParams gradient;
  Matrix<double> init;  // initializer output that was used (empty if none)
};

LossAndGradient recording_gradient(const EncoderParams& params, const Recording& recording,
                                   const TrainConfig& config,
                                   const Matrix<double>* frozen_init = nullptr);

struct Diarization {
  DiarTimeline timeline;           // clusters named cluster00, cluster01, ...
  EmbeddingSet embeddings;         // non-silent slots
  Matrix<double> responsibilities;
  std::vector<int> labels;         // hard_assign
  std::vector<int> truth;          // global speaker per row, -1 if unmatched
};

Diarization diarize(const EncoderParams& params, const Recording& recording,
                    const TrainConfig& config);

struct EvalSummary {
  double ari = 0.0;  // mean exact ARI over recordings with >= 2 labeled embeddings
  double der = 0.0;  // means of the per-recording DER report
  double missed = 0.0;
  double false_alarm = 0.0;
  double confusion = 0.0;
};

EvalSummary evaluate(const EncoderParams& params, std::span<const Recording> recordings,
                     const TrainConfig& config);

struct EpochMetrics {
  int epoch = 0;
  double diar_loss = 0.0;
  double cluster_loss = 0.0;
  double spk_loss = 0.0;
  double total_loss = 0.0;
  double ari = 0.0;
  double der = 0.0;
  double missed = 0.0;
  double false_alarm = 0.0;
  double confusion = 0.0;
};

struct TrainResult {
  EncoderParams params;
  std::vector<EpochMetrics> history;
};

// Plain SGD, one step per training recording, recordings in corpus order.
// Held-out metrics (ARI, DER) are computed after every epoch; when `heldout`
// is empty the training recordings are scored instead. Throws
// DivergenceError as soon as a loss or gradient is non-finite.
TrainResult train(EncoderParams params, std::span<const Recording> train_set,
                  std::span<const Recording> heldout, const TrainConfig& config,
                  const std::function<void(const EpochMetrics&)>& on_epoch = {});

}  // namespace igmmdiar
