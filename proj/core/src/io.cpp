#include "igmmdiar/io.hpp"

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "igmmdiar/errors.hpp"

namespace igmmdiar {

using nlohmann::json;

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

namespace {

std::string fmt_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

json matrix_json(const Matrix<double>& m) {
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", m.data()}};
}

Matrix<double> matrix_from(const json& j, const char* what) {
  const auto rows = j.at("rows").get<std::size_t>();
  const auto cols = j.at("cols").get<std::size_t>();
  auto data = j.at("data").get<std::vector<double>>();
  if (data.size() != rows * cols) {
    throw ValidationError(std::string(what) + ": data length does not match rows x cols");
  }
  return Matrix<double>(rows, cols, std::move(data));
}

json synth_json(const SynthConfig& c) {
  return {{"feature_dim", c.feature_dim}, {"overlap", c.overlap},     {"noise", c.noise},
          {"min_turn", c.min_turn},       {"max_turn", c.max_turn},   {"pause_prob", c.pause_prob},
          {"max_pause", c.max_pause},     {"frame_period", c.frame_period}};
}

SynthConfig synth_from(const json& j) {
  SynthConfig c;
  c.feature_dim = j.at("feature_dim").get<int>();
  c.overlap = j.at("overlap").get<double>();
  c.noise = j.at("noise").get<double>();
  c.min_turn = j.at("min_turn").get<int>();
  c.max_turn = j.at("max_turn").get<int>();
  c.pause_prob = j.at("pause_prob").get<double>();
  c.max_pause = j.at("max_pause").get<int>();
  c.frame_period = j.at("frame_period").get<double>();
  return c;
}

void expect_format(const json& j, const char* format) {
  if (j.value("format", std::string()) != format) {
    throw ValidationError(std::string("expected a document with format \"") + format + "\"");
  }
  if (j.value("version", 0) != 1) throw ValidationError("unsupported format version");
}

json parse_json(std::string_view text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    const std::size_t end = std::min<std::size_t>(e.byte, text.size());
    const auto line = 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + end, '\n'));
    throw ParseError(line, std::string("invalid JSON: ") + e.what());
  }
}

}  // namespace

std::string corpus_to_json(const Corpus& corpus) {
  const CorpusConfig& c = corpus.config;
  json j;
  j["format"] = "igmmdiar-corpus";
  j["version"] = 1;
  j["seed"] = corpus.seed;
  j["config"] = {{"recordings", c.recordings},
                 {"speaker_counts", c.speaker_counts},
                 {"inventory_size", c.inventory_size},
                 {"chunks_per_recording", c.chunks_per_recording},
                 {"chunk_size", c.chunk_size},
                 {"synth", synth_json(c.synth)}};
  j["inventory"] = matrix_json(corpus.inventory.vectors);
  json recs = json::array();
  for (const Recording& r : corpus.recordings) {
    recs.push_back({{"id", r.id},
                    {"frame_period", r.frame_period},
                    {"speakers", r.speakers},
                    {"features", matrix_json(r.features)},
                    {"activity", matrix_json(r.activity)}});
  }
  j["recordings"] = std::move(recs);
  return j.dump(1) + "\n";
}

Corpus corpus_from_json(std::string_view text) {
  const json j = parse_json(text);
  try {
    expect_format(j, "igmmdiar-corpus");
    Corpus corpus;
    corpus.seed = j.at("seed").get<std::uint64_t>();
    const json& c = j.at("config");
    corpus.config.recordings = c.at("recordings").get<int>();
    corpus.config.speaker_counts = c.at("speaker_counts").get<std::vector<int>>();
    corpus.config.inventory_size = c.at("inventory_size").get<int>();
    corpus.config.chunks_per_recording = c.at("chunks_per_recording").get<int>();
    corpus.config.chunk_size = c.at("chunk_size").get<int>();
    corpus.config.synth = synth_from(c.at("synth"));
    corpus.config.validate();
    corpus.inventory.vectors = matrix_from(j.at("inventory"), "inventory");
    for (const json& r : j.at("recordings")) {
      Recording rec;
      rec.id = r.at("id").get<std::string>();
      rec.frame_period = r.at("frame_period").get<double>();
      rec.speakers = r.at("speakers").get<std::vector<int>>();
      rec.features = matrix_from(r.at("features"), "features");
      rec.activity = matrix_from(r.at("activity"), "activity");
      if (rec.activity.rows() != rec.features.rows() ||
          rec.activity.cols() != rec.speakers.size()) {
        throw ValidationError("recording " + rec.id + ": inconsistent shapes");
      }
      corpus.recordings.push_back(std::move(rec));
    }
    return corpus;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("corpus JSON: ") + e.what());
  }
}

std::string checkpoint_to_json(const Checkpoint& checkpoint) {
  const EncoderShape& s = checkpoint.params.shape;
  json j;
  j["format"] = "igmmdiar-encoder";
  j["version"] = 1;
  j["seed"] = checkpoint.seed;
  j["shape"] = {{"feature_dim", s.feature_dim},
                {"hidden_dim", s.hidden_dim},
                {"local_speakers", s.local_speakers},
                {"embed_dim", s.embed_dim},
                {"inventory", s.inventory}};
  json tensors = json::object();
  for (std::size_t i = 0; i < kNumEncoderTensors; ++i) {
    tensors[tensor_name(static_cast<EncoderTensor>(i))] = matrix_json(checkpoint.params.tensors[i]);
  }
  j["tensors"] = std::move(tensors);
  return j.dump(1) + "\n";
}

Checkpoint checkpoint_from_json(std::string_view text) {
  const json j = parse_json(text);
  try {
    expect_format(j, "igmmdiar-encoder");
    Checkpoint cp;
    cp.seed = j.at("seed").get<std::uint64_t>();
    const json& s = j.at("shape");
    EncoderShape& shape = cp.params.shape;
    shape.feature_dim = s.at("feature_dim").get<int>();
    shape.hidden_dim = s.at("hidden_dim").get<int>();
    shape.local_speakers = s.at("local_speakers").get<int>();
    shape.embed_dim = s.at("embed_dim").get<int>();
    shape.inventory = s.at("inventory").get<int>();
    const json& t = j.at("tensors");
    for (std::size_t i = 0; i < kNumEncoderTensors; ++i) {
      const char* name = tensor_name(static_cast<EncoderTensor>(i));
      cp.params.tensors[i] = matrix_from(t.at(name), name);
    }
    validate(cp.params);
    return cp;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("checkpoint JSON: ") + e.what());
  }
}

namespace {

// Splits CSV text into lines of comma-separated fields; blank lines are kept
// as empty rows so line numbers stay aligned with the file.
std::vector<std::vector<std::string_view>> split_csv(std::string_view text) {
  std::vector<std::vector<std::string_view>> rows;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    std::vector<std::string_view> fields;
    if (!line.empty()) {
      std::size_t f = 0;
      while (true) {
        const std::size_t comma = line.find(',', f);
        fields.push_back(line.substr(f, comma == std::string_view::npos ? line.npos : comma - f));
        if (comma == std::string_view::npos) break;
        f = comma + 1;
      }
    }
    rows.push_back(std::move(fields));
    pos = end + 1;
  }
  return rows;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  return s;
}

long long parse_int(std::string_view field, std::size_t line, const char* what) {
  field = trim(field);
  long long v = 0;
  const auto [p, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (ec != std::errc() || p != field.data() + field.size()) {
    throw ParseError(line, std::string("invalid integer for ") + what + ": '" +
                               std::string(field) + "'");
  }
  return v;
}

double parse_double(std::string_view field, std::size_t line, const char* what) {
  field = trim(field);
  double v = 0.0;
  const auto [p, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (ec != std::errc() || p != field.data() + field.size() || !std::isfinite(v)) {
    throw ParseError(line, std::string("invalid number for ") + what + ": '" +
                               std::string(field) + "'");
  }
  return v;
}

}  // namespace

std::string embeddings_to_csv(const EmbeddingSet& set) {
  if (set.slots.size() != set.size()) {
    throw ValidationError("embeddings_to_csv: slot map and embeddings differ in length");
  }
  std::string out = "n,i,s";
  for (std::size_t c = 0; c < set.values.cols(); ++c) out += ",e_" + std::to_string(c + 1);
  out += '\n';
  for (std::size_t n = 0; n < set.size(); ++n) {
    out += std::to_string(n) + ',' + std::to_string(set.slots[n].chunk) + ',' +
           std::to_string(set.slots[n].slot);
    for (double v : set.values.row(n)) out += ',' + fmt_double(v);
    out += '\n';
  }
  return out;
}

EmbeddingSet embeddings_from_csv(std::string_view text) {
  const auto rows = split_csv(text);
  if (rows.empty() || rows[0].empty()) throw ParseError(1, "missing header");
  const auto& header = rows[0];
  if (header.size() < 4 || trim(header[0]) != "n" || trim(header[1]) != "i" ||
      trim(header[2]) != "s") {
    throw ParseError(1, "header must be n,i,s,e_1,...,e_C");
  }
  const std::size_t dim = header.size() - 3;
  for (std::size_t c = 0; c < dim; ++c) {
    if (trim(header[c + 3]) != "e_" + std::to_string(c + 1)) {
      throw ParseError(1, "expected column e_" + std::to_string(c + 1));
    }
  }
  std::vector<double> values;
  EmbeddingSet set;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const std::size_t line = r + 1;
    const auto& f = rows[r];
    if (f.empty()) continue;
    if (f.size() != header.size()) {
      throw ParseError(line, "expected " + std::to_string(header.size()) + " fields, got " +
                                 std::to_string(f.size()));
    }
    const long long n = parse_int(f[0], line, "n");
    if (n != static_cast<long long>(set.slots.size())) {
      throw ParseError(line, "row index n must be " + std::to_string(set.slots.size()));
    }
    const long long chunk = parse_int(f[1], line, "i");
    const long long slot = parse_int(f[2], line, "s");
    if (chunk < 0 || slot < 0 || chunk > INT32_MAX || slot > INT32_MAX) {
      throw ParseError(line, "chunk and slot must be non-negative");
    }
    set.slots.push_back({static_cast<int>(chunk), static_cast<int>(slot)});
    for (std::size_t c = 0; c < dim; ++c) values.push_back(parse_double(f[c + 3], line, "e"));
  }
  set.values = Matrix<double>(set.slots.size(), dim, std::move(values));
  validate(set);
  return set;
}

std::string labels_to_csv(std::span<const int> labels) {
  std::string out = "n,label\n";
  for (std::size_t n = 0; n < labels.size(); ++n) {
    out += std::to_string(n) + ',' + std::to_string(labels[n]) + '\n';
  }
  return out;
}

std::vector<int> labels_from_csv(std::string_view text) {
  const auto rows = split_csv(text);
  if (rows.empty() || rows[0].size() != 2 || trim(rows[0][0]) != "n" ||
      trim(rows[0][1]) != "label") {
    throw ParseError(1, "header must be n,label");
  }
  std::vector<int> labels;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const std::size_t line = r + 1;
    const auto& f = rows[r];
    if (f.empty()) continue;
    if (f.size() != 2) throw ParseError(line, "expected 2 fields");
    const long long n = parse_int(f[0], line, "n");
    if (n != static_cast<long long>(labels.size())) {
      throw ParseError(line, "row index n must be " + std::to_string(labels.size()));
    }
    const long long label = parse_int(f[1], line, "label");
    if (label < INT32_MIN || label > INT32_MAX) throw ParseError(line, "label out of range");
    labels.push_back(static_cast<int>(label));
  }
  return labels;
}

std::string assignments_to_csv(std::span<const int> labels, const Matrix<double>& resp) {
  if (labels.size() != resp.rows()) {
    throw ValidationError("assignments_to_csv: labels and responsibilities differ in length");
  }
  std::string out = "n,label";
  for (std::size_t k = 0; k < resp.cols(); ++k) out += ",r_" + std::to_string(k + 1);
  out += '\n';
  for (std::size_t n = 0; n < labels.size(); ++n) {
    out += std::to_string(n) + ',' + std::to_string(labels[n]);
    for (double v : resp.row(n)) out += ',' + fmt_double(v);
    out += '\n';
  }
  return out;
}

std::string metrics_csv_header() { return "epoch,L_diar,L_cluster,L_spk,ARI,DER\n"; }

std::string metrics_csv_row(const EpochMetrics& m) {
  return std::to_string(m.epoch) + ',' + fmt_double(m.diar_loss) + ',' +
         fmt_double(m.cluster_loss) + ',' + fmt_double(m.spk_loss) + ',' + fmt_double(m.ari) +
         ',' + fmt_double(m.der) + '\n';
}

std::string der_report_json(const DerReport& r, double collar) {
  const json j = {{"collar", collar},
                  {"der", r.der},
                  {"missed", r.missed},
                  {"false_alarm", r.false_alarm},
                  {"confusion", r.confusion},
                  {"scored_speech", r.scored_speech},
                  {"missed_seconds", r.missed_seconds},
                  {"false_alarm_seconds", r.false_alarm_seconds},
                  {"confusion_seconds", r.confusion_seconds}};
  return j.dump(2) + "\n";
}

std::string der_report_csv(const DerReport& r, double collar) {
  return "collar,der,missed,false_alarm,confusion,scored_speech\n" + fmt_double(collar) + ',' +
         fmt_double(r.der) + ',' + fmt_double(r.missed) + ',' + fmt_double(r.false_alarm) + ',' +
         fmt_double(r.confusion) + ',' + fmt_double(r.scored_speech) + '\n';
}

}  // namespace igmmdiar
