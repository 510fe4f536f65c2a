#include "igmmdiar/eval.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <sstream>
#include <tuple>

#include "igmmdiar/errors.hpp"

namespace igmmdiar {

void DiarTimeline::validate() const {
  for (const auto& [name, segs] : speakers) {
    for (std::size_t i = 0; i < segs.size(); ++i) {
      if (!std::isfinite(segs[i].start) || !std::isfinite(segs[i].end) ||
          !(segs[i].start < segs[i].end)) {
        throw ValidationError("timeline: speaker " + name + " has a segment with start >= end");
      }
      if (i > 0 && segs[i].start < segs[i - 1].end) {
        throw ValidationError("timeline: speaker " + name +
                              " has unsorted or overlapping segments");
      }
    }
  }
}

double DiarTimeline::speech_seconds() const {
  double total = 0.0;
  for (const auto& [name, segs] : speakers)
    for (const auto& s : segs) total += s.end - s.start;
  return total;
}

DiarTimeline canonicalize(DiarTimeline timeline) {
  DiarTimeline out;
  for (auto& [name, segs] : timeline.speakers) {
    std::sort(segs.begin(), segs.end(), [](const Segment& a, const Segment& b) {
      return std::tie(a.start, a.end) < std::tie(b.start, b.end);
    });
    std::vector<Segment> merged;
    for (const auto& s : segs) {
      if (!(s.start < s.end)) continue;
      if (!merged.empty() && s.start <= merged.back().end) {
        merged.back().end = std::max(merged.back().end, s.end);
      } else {
        merged.push_back(s);
      }
    }
    if (!merged.empty()) out.speakers.emplace(name, std::move(merged));
  }
  return out;
}

DiarTimeline timeline_from_activity(const Matrix<double>& activity, double frame_period,
                                    const std::vector<std::string>& names) {
  if (names.size() != activity.cols()) {
    throw ValidationError("timeline_from_activity: one name per column required");
  }
  DiarTimeline out;
  for (std::size_t k = 0; k < activity.cols(); ++k) {
    std::vector<Segment> segs;
    std::size_t t = 0;
    while (t < activity.rows()) {
      if (activity(t, k) == 0.0) {
        ++t;
        continue;
      }
      const std::size_t begin = t;
      while (t < activity.rows() && activity(t, k) != 0.0) ++t;
      segs.push_back({static_cast<double>(begin) * frame_period,
                      static_cast<double>(t) * frame_period});
    }
    if (!segs.empty()) out.speakers[names[k]] = std::move(segs);
  }
  return out;
}

namespace {

long to_grid(double seconds) { return std::lround(seconds / kScoringStep); }

std::vector<std::vector<char>> rasterize(const DiarTimeline& tl, long frames) {
  std::vector<std::vector<char>> out;
  for (const auto& [name, segs] : tl.speakers) {
    std::vector<char> active(static_cast<std::size_t>(frames), 0);
    for (const auto& s : segs) {
      const long b = std::clamp(to_grid(s.start), 0L, frames);
      const long e = std::clamp(to_grid(s.end), 0L, frames);
      for (long f = b; f < e; ++f) active[static_cast<std::size_t>(f)] = 1;
    }
    out.push_back(std::move(active));
  }
  return out;
}

double timeline_end(const DiarTimeline& tl) {
  double end = 0.0;
  for (const auto& [name, segs] : tl.speakers)
    for (const auto& s : segs) end = std::max(end, s.end);
  return end;
}

}  // namespace

std::vector<int> max_weight_assignment(const Matrix<double>& weight) {
  // Hungarian algorithm (potentials, O(n^3)) on the square-padded cost -weight.
  const std::size_t rows = weight.rows();
  const std::size_t cols = weight.cols();
  const std::size_t n = std::max(rows, cols);
  std::vector<int> result(rows, -1);
  if (n == 0) return result;
  auto cost = [&](std::size_t i, std::size_t j) {
    return (i < rows && j < cols) ? -weight(i, j) : 0.0;
  };
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> match(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    match[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = match[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  for (std::size_t j = 1; j <= n; ++j) {
    const std::size_t i = match[j];
    if (i >= 1 && i <= rows && j <= cols) result[i - 1] = static_cast<int>(j - 1);
  }
  return result;
}

DerReport score_der(const DiarTimeline& ref, const DiarTimeline& hyp, double collar) {
  if (!(collar >= 0.0) || !std::isfinite(collar)) {
    throw ValidationError("score_der: collar must be a finite value >= 0");
  }
  ref.validate();
  hyp.validate();
  const long frames = to_grid(std::max(timeline_end(ref), timeline_end(hyp)) + collar) + 1;
  const auto ref_act = rasterize(ref, frames);
  const auto hyp_act = rasterize(hyp, frames);

  std::vector<char> scored(static_cast<std::size_t>(frames), 1);
  if (collar > 0.0) {
    for (const auto& [name, segs] : ref.speakers) {
      for (const auto& s : segs) {
        for (double boundary : {s.start, s.end}) {
          const long b = std::clamp(to_grid(boundary - collar), 0L, frames);
          const long e = std::clamp(to_grid(boundary + collar), 0L, frames);
          for (long f = b; f < e; ++f) scored[static_cast<std::size_t>(f)] = 0;
        }
      }
    }
  }

  Matrix<double> overlap(ref_act.size(), hyp_act.size(), 0.0);
  for (std::size_t r = 0; r < ref_act.size(); ++r) {
    for (std::size_t h = 0; h < hyp_act.size(); ++h) {
      long both = 0;
      for (long f = 0; f < frames; ++f) {
        const auto i = static_cast<std::size_t>(f);
        both += scored[i] && ref_act[r][i] && hyp_act[h][i];
      }
      overlap(r, h) = static_cast<double>(both);
    }
  }
  const std::vector<int> mapping = max_weight_assignment(overlap);

  long total = 0, missed = 0, false_alarm = 0, confusion = 0;
  for (long f = 0; f < frames; ++f) {
    const auto i = static_cast<std::size_t>(f);
    if (!scored[i]) continue;
    long n_ref = 0, n_hyp = 0, n_corr = 0;
    for (std::size_t r = 0; r < ref_act.size(); ++r) {
      if (!ref_act[r][i]) continue;
      ++n_ref;
      if (mapping[r] >= 0 && hyp_act[static_cast<std::size_t>(mapping[r])][i]) ++n_corr;
    }
    for (const auto& h : hyp_act) n_hyp += h[i];
    total += n_ref;
    missed += std::max(0L, n_ref - n_hyp);
    false_alarm += std::max(0L, n_hyp - n_ref);
    confusion += std::min(n_ref, n_hyp) - n_corr;
  }

  DerReport report;
  report.scored_speech = static_cast<double>(total) * kScoringStep;
  report.missed_seconds = static_cast<double>(missed) * kScoringStep;
  report.false_alarm_seconds = static_cast<double>(false_alarm) * kScoringStep;
  report.confusion_seconds = static_cast<double>(confusion) * kScoringStep;
  if (total > 0) {
    const auto denom = static_cast<double>(total);
    report.missed = static_cast<double>(missed) / denom;
    report.false_alarm = static_cast<double>(false_alarm) / denom;
    report.confusion = static_cast<double>(confusion) / denom;
  }
  report.der = report.missed + report.false_alarm + report.confusion;
  return report;
}

std::string rttm_write(const DiarTimeline& timeline, std::string_view recording_id) {
  timeline.validate();
  std::vector<std::tuple<double, std::string, double>> rows;
  for (const auto& [name, segs] : timeline.speakers)
    for (const auto& s : segs) rows.emplace_back(s.start, name, s.end);
  std::sort(rows.begin(), rows.end());
  std::string out;
  char buf[64];
  for (const auto& [start, name, end] : rows) {
    out += "SPEAKER ";
    out += recording_id;
    std::snprintf(buf, sizeof(buf), " 1 %.3f %.3f", start, end - start);
    out += buf;
    out += " <NA> <NA> ";
    out += name;
    out += " <NA> <NA>\n";
  }
  return out;
}

namespace {

double parse_number(std::string_view field, std::size_t line, const char* what) {
  double value = 0.0;
  const auto* first = field.data();
  const auto* last = field.data() + field.size();
  const auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last || !std::isfinite(value)) {
    throw ParseError(line, std::string("bad ") + what + " '" + std::string(field) + "'");
  }
  return value;
}

std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    const std::size_t b = i;
    while (i < s.size() && !std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    if (i > b) out.push_back(s.substr(b, i - b));
  }
  return out;
}

double round_millis(double seconds) { return std::round(seconds * 1000.0) / 1000.0; }

}  // namespace

std::map<std::string, DiarTimeline> rttm_read(std::string_view text) {
  std::map<std::string, DiarTimeline> out;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t nl = text.find('\n', pos);
    const std::string_view line =
        text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    const auto fields = split_ws(line);
    if (fields.empty() || fields[0].front() == ';' || fields[0].front() == '#') continue;
    if (fields[0] != "SPEAKER") continue;
    if (fields.size() < 8) throw ParseError(line_no, "SPEAKER record needs at least 8 fields");
    const double start = parse_number(fields[3], line_no, "start time");
    const double dur = parse_number(fields[4], line_no, "duration");
    if (start < 0.0) throw ParseError(line_no, "negative start time");
    if (!(dur > 0.0)) throw ParseError(line_no, "duration must be positive");
    const double end = round_millis(start + dur);
    out[std::string(fields[1])].speakers[std::string(fields[7])].push_back({start, end});
  }
  for (auto& [id, tl] : out) tl = canonicalize(std::move(tl));
  return out;
}

namespace {

double cosine_distance(std::span<const double> a, std::span<const double> b) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0.0 || bb == 0.0) return 1.0;
  return 1.0 - ab / std::sqrt(aa * bb);
}

}  // namespace

std::vector<int> constrained_ahc(const Matrix<double>& embeddings,
                                 const std::vector<std::pair<int, int>>& cannot_link,
                                 const AhcOptions& options) {
  const std::size_t n = embeddings.rows();
  if (!options.threshold && !options.target) {
    throw ValidationError("constrained_ahc: need a threshold or a target count");
  }
  if (options.target && *options.target < 1) {
    throw ValidationError("constrained_ahc: target must be >= 1");
  }
  std::vector<std::vector<char>> forbidden(n, std::vector<char>(n, 0));
  for (const auto& [a, b] : cannot_link) {
    if (a < 0 || b < 0 || static_cast<std::size_t>(a) >= n || static_cast<std::size_t>(b) >= n) {
      throw ValidationError("constrained_ahc: cannot-link index out of range");
    }
    forbidden[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)] = 1;
    forbidden[static_cast<std::size_t>(b)][static_cast<std::size_t>(a)] = 1;
  }
  // Cluster c is represented by its lowest member; dist/forbidden kept in
  // that slot and updated by Lance-Williams for average linkage.
  Matrix<double> dist(n, n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      dist(i, j) = dist(j, i) = cosine_distance(embeddings.row(i), embeddings.row(j));
  std::vector<std::size_t> size(n, 1);
  std::vector<std::size_t> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  std::vector<char> alive(n, 1);
  std::size_t clusters = n;

  while (clusters > 1) {
    if (options.target && clusters <= static_cast<std::size_t>(*options.target)) break;
    double best = std::numeric_limits<double>::infinity();
    std::size_t bi = n, bj = n;
    for (std::size_t i = 0; i < n; ++i) {
      if (!alive[i]) continue;
      for (std::size_t j = i + 1; j < n; ++j) {
        if (!alive[j] || forbidden[i][j]) continue;
        if (dist(i, j) < best) {
          best = dist(i, j);
          bi = i;
          bj = j;
        }
      }
    }
    if (bi == n) {
      if (options.target) {
        throw InfeasibleError("constrained_ahc: cannot reach " +
                              std::to_string(*options.target) +
                              " clusters without violating cannot-link constraints");
      }
      break;
    }
    if (options.threshold && best > *options.threshold) break;
    // Merge bj into bi.
    for (std::size_t k = 0; k < n; ++k) {
      if (!alive[k] || k == bi || k == bj) continue;
      const double merged =
          (static_cast<double>(size[bi]) * dist(bi, k) + static_cast<double>(size[bj]) * dist(bj, k)) /
          static_cast<double>(size[bi] + size[bj]);
      dist(bi, k) = dist(k, bi) = merged;
      const char f = forbidden[bi][k] || forbidden[bj][k];
      forbidden[bi][k] = forbidden[k][bi] = f;
    }
    size[bi] += size[bj];
    alive[bj] = 0;
    for (auto& p : parent)
      if (p == bj) p = bi;
    --clusters;
  }

  std::vector<int> labels(n, -1);
  std::map<std::size_t, int> ids;
  for (std::size_t i = 0; i < n; ++i) {
    auto [it, inserted] = ids.emplace(parent[i], static_cast<int>(ids.size()));
    labels[i] = it->second;
  }
  return labels;
}

std::vector<std::pair<int, int>> same_chunk_pairs(std::span<const SlotRef> slots) {
  std::vector<std::pair<int, int>> out;
  for (std::size_t a = 0; a < slots.size(); ++a)
    for (std::size_t b = a + 1; b < slots.size(); ++b)
      if (slots[a].chunk == slots[b].chunk) out.emplace_back(static_cast<int>(a), static_cast<int>(b));
  return out;
}

}  // namespace igmmdiar
