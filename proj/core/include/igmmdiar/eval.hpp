#pragma once

// Diarization scoring and baselines: timelines, DER with collar and
// missed / false-alarm / confusion breakdown, RTTM I/O, and constrained
// average-linkage agglomerative clustering.

#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "igmmdiar/igmm.hpp"
#include "igmmdiar/matrix.hpp"

namespace igmmdiar {

struct Segment {
  double start = 0.0;  // seconds
  double end = 0.0;
  friend bool operator==(const Segment&, const Segment&) = default;
};

struct DiarTimeline {
  // Speaker label -> sorted, non-overlapping segments.
  std::map<std::string, std::vector<Segment>> speakers;

  // Throws ValidationError on start >= end, unsorted or overlapping segments.
  void validate() const;
  double speech_seconds() const;
  friend bool operator==(const DiarTimeline&, const DiarTimeline&) = default;
};

// Sorts, merges overlapping or touching segments, drops empty speakers.
DiarTimeline canonicalize(DiarTimeline timeline);

// Runs of nonzero entries of column k become segments of speaker names[k].
DiarTimeline timeline_from_activity(const Matrix<double>& activity, double frame_period,
                                    const std::vector<std::string>& names);

struct DerReport {
  double der = 0.0;  // missed + false_alarm + confusion
  double missed = 0.0;
  double false_alarm = 0.0;
  double confusion = 0.0;
  double scored_speech = 0.0;  // seconds of reference speech in scored regions
  double missed_seconds = 0.0;
  double false_alarm_seconds = 0.0;
  double confusion_seconds = 0.0;
};

inline constexpr double kScoringStep = 0.01;  // seconds per scoring frame

// DER on a 10 ms grid. Frames within `collar` seconds of any reference
// boundary are not scored. Speakers are mapped one-to-one by maximum total
// overlap (Hungarian). Per scored frame with n_ref reference and n_hyp
// hypothesis speakers and n_corr correctly mapped ones:
//   missed += max(0, n_ref - n_hyp), false alarm += max(0, n_hyp - n_ref),
//   confusion += min(n_ref, n_hyp) - n_corr.
// Fractions are relative to scored reference speech; all zero if there is none.
DerReport score_der(const DiarTimeline& ref, const DiarTimeline& hyp, double collar);

// One-to-one assignment maximizing total weight; result[r] is the column
// matched to row r or -1.
std::vector<int> max_weight_assignment(const Matrix<double>& weight);

// --- RTTM ----------------------------------------------------------------------

std::string rttm_write(const DiarTimeline& timeline, std::string_view recording_id);

// Recording id -> timeline. Non-SPEAKER records and blank lines are skipped.
// Throws ParseError with the 1-based line number.
std::map<std::string, DiarTimeline> rttm_read(std::string_view text);

// --- constrained AHC ---------------------------------------------------------

struct AhcOptions {
  std::optional<double> threshold;  // stop when the closest feasible pair is farther
  std::optional<int> target;        // stop at this many clusters
};

// Average linkage on cosine distance; clusters joining a cannot-link pair are
// never merged. Labels are numbered in order of first appearance. Throws
// InfeasibleError when `target` cannot be reached under the constraints.
std::vector<int> constrained_ahc(const Matrix<double>& embeddings,
                                 const std::vector<std::pair<int, int>>& cannot_link,
                                 const AhcOptions& options);

// All pairs of rows that come from the same chunk.
std::vector<std::pair<int, int>> same_chunk_pairs(std::span<const SlotRef> slots);

}  // namespace igmmdiar
