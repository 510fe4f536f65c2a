#pragma once

// File formats: corpus and checkpoint JSON, embeddings / truth / assignment
// CSV, metrics CSV, DER report JSON and CSV.
//
// Corpus JSON
//   {"format": "igmmdiar-corpus", "version": 1, "seed": u64,
//    "config": {...CorpusConfig...},
//    "inventory": {"rows": M, "cols": F, "data": [...]},
//    "recordings": [{"id", "frame_period", "speakers": [identity...],
//                    "features": {"rows", "cols", "data"},
//                    "activity": {"rows", "cols", "data"}}, ...]}
// Checkpoint JSON
//   {"format": "igmmdiar-encoder", "version": 1, "seed": u64,
//    "shape": {"feature_dim", "hidden_dim", "local_speakers", "embed_dim", "inventory"},
//    "tensors": {"trunk1.weight": {"rows", "cols", "data"}, ...}}
// Matrices are stored as flat row-major arrays.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "igmmdiar/eval.hpp"
#include "igmmdiar/igmm.hpp"
#include "igmmdiar/matrix.hpp"
#include "igmmdiar/pipeline.hpp"

namespace igmmdiar {

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);

std::string corpus_to_json(const Corpus& corpus);
Corpus corpus_from_json(std::string_view text);

struct Checkpoint {
  std::uint64_t seed = 0;
  EncoderParams params;
};

std::string checkpoint_to_json(const Checkpoint& checkpoint);
Checkpoint checkpoint_from_json(std::string_view text);

// Header `n,i,s,e_1,...,e_C`; row n lists chunk i, slot s and the embedding.
std::string embeddings_to_csv(const EmbeddingSet& set);
EmbeddingSet embeddings_from_csv(std::string_view text);

// Header `n,label`.
std::string labels_to_csv(std::span<const int> labels);
std::vector<int> labels_from_csv(std::string_view text);

// Header `n,label,r_1,...,r_K`.
std::string assignments_to_csv(std::span<const int> labels, const Matrix<double>& resp);

// Header `epoch,L_diar,L_cluster,L_spk,ARI,DER`.
std::string metrics_csv_header();
std::string metrics_csv_row(const EpochMetrics& m);

std::string der_report_json(const DerReport& report, double collar);
// Header `collar,der,missed,false_alarm,confusion,scored_speech` plus one row.
std::string der_report_csv(const DerReport& report, double collar);

}  // namespace igmmdiar
