#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "edeva/analysis.hpp"
#include "edeva/core.hpp"
#include "edeva/metrics.hpp"
#include "edeva/scenarionn.hpp"
#include "edeva/sim.hpp"

namespace edeva {

inline constexpr int kFormatVersion = 1;

struct FileManifest {
  int format_version{kFormatVersion};
  std::string content;
  std::uint64_t config_hash{0};
  std::uint64_t master_seed{0};
  std::string config_json;  // the hashed payload
};

namespace detail {

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_file(const std::string& path, const std::string& body) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << body;
  if (!out) throw std::runtime_error("write failed: " + path);
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::uint32_t crc32(const unsigned char* data, std::size_t len) {
  static const auto table = [] {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  std::uint32_t c = 0xFFFFFFFFu;
  for (std::size_t i = 0; i < len; ++i) c = table[(c ^ data[i]) & 0xFF] ^ (c >> 8);
  return c ^ 0xFFFFFFFFu;
}

inline std::vector<std::string> split_lines(const std::string& body) {
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start < body.size()) {
    std::size_t end = body.find('\n', start);
    if (end == std::string::npos) end = body.size();
    lines.push_back(body.substr(start, end - start));
    start = end + 1;
  }
  return lines;
}

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string::npos) {
      fields.push_back(line.substr(start));
      break;
    }
    fields.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  return fields;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Scenario suites (line-delimited JSON, manifest first)
// ---------------------------------------------------------------------------

namespace detail {

inline nlohmann::json vec2_json(Vec2 v) { return nlohmann::json::array({v.x, v.y}); }
inline Vec2 vec2_from(const nlohmann::json& j) { return {j.at(0), j.at(1)}; }
inline nlohmann::json vec3_json(Vec3 v) { return nlohmann::json::array({v.x, v.y, v.z}); }
inline Vec3 vec3_from(const nlohmann::json& j) { return {j.at(0), j.at(1), j.at(2)}; }

inline nlohmann::json trajectory_json(const Trajectory& t) {
  nlohmann::json j;
  j["dt"] = t.dt;
  auto pts = nlohmann::json::array();
  for (const auto& p : t.points) pts.push_back(vec2_json(p));
  j["points"] = std::move(pts);
  return j;
}

inline Trajectory trajectory_from(const nlohmann::json& j) {
  Trajectory t;
  t.dt = j.at("dt");
  for (const auto& p : j.at("points")) t.points.push_back(vec2_from(p));
  return t;
}

inline nlohmann::json scenario_json(const ScenarioLog& log) {
  nlohmann::json j;
  j["scenario_id"] = log.scenario_id;
  j["kind"] = to_string(log.kind);
  j["seed"] = log.seed;
  nlohmann::json agents;
  for (const auto& [id, states] : log.agents) {
    auto arr = nlohmann::json::array();
    for (const auto& st : states) {
      nlohmann::json s;
      s["t"] = st.timestep;
      s["p"] = vec3_json(st.position);
      s["v"] = vec3_json(st.velocity);
      s["a"] = vec3_json(st.acceleration);
      arr.push_back(std::move(s));
    }
    agents[id] = std::move(arr);
  }
  j["agents"] = std::move(agents);
  nlohmann::json futures;
  for (const auto& [id, traj] : log.futures) futures[id] = trajectory_json(traj);
  j["futures"] = std::move(futures);
  auto ref = nlohmann::json::array();
  for (const auto& p : log.reference_path) ref.push_back(vec2_json(p));
  j["reference_path"] = std::move(ref);
  return j;
}

inline ScenarioLog scenario_from(const nlohmann::json& j) {
  ScenarioLog log;
  log.scenario_id = j.at("scenario_id");
  log.kind = scenario_kind_from_string(j.at("kind"));
  log.seed = j.at("seed");
  for (const auto& [id, arr] : j.at("agents").items()) {
    std::vector<AgentState> states;
    for (const auto& s : arr) {
      AgentState st;
      st.agent_id = id;
      st.timestep = s.at("t");
      st.position = vec3_from(s.at("p"));
      st.velocity = vec3_from(s.at("v"));
      st.acceleration = vec3_from(s.at("a"));
      states.push_back(std::move(st));
    }
    log.agents[id] = std::move(states);
  }
  for (const auto& [id, traj] : j.at("futures").items())
    log.futures[id] = trajectory_from(traj);
  for (const auto& p : j.at("reference_path")) log.reference_path.push_back(vec2_from(p));
  return log;
}

inline nlohmann::json manifest_json(const FileManifest& m) {
  nlohmann::json j;
  j["record"] = "manifest";
  j["format_version"] = m.format_version;
  j["content"] = m.content;
  j["config_hash"] = m.config_hash;
  j["master_seed"] = m.master_seed;
  j["config"] = m.config_json;
  return j;
}

inline FileManifest manifest_from_line(const std::string& line, const std::string& expected) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception&) {
    throw std::runtime_error("malformed manifest at line 1");
  }
  if (!j.contains("record") || j.at("record") != "manifest")
    throw std::runtime_error("missing manifest at line 1");
  FileManifest m;
  m.format_version = j.at("format_version");
  if (m.format_version != kFormatVersion)
    throw std::runtime_error("unsupported format version " +
                             std::to_string(m.format_version));
  m.content = j.at("content");
  if (m.content != expected)
    throw std::runtime_error("unexpected content kind '" + m.content + "', expected '" +
                             expected + "'");
  m.config_hash = j.at("config_hash");
  m.master_seed = j.at("master_seed");
  m.config_json = j.at("config");
  if (fnv1a64(m.config_json) != m.config_hash)
    throw std::runtime_error("manifest config hash mismatch");
  return m;
}

}  // namespace detail

inline FileManifest make_manifest(const std::string& content, std::uint64_t master_seed,
                                  const std::string& config_json) {
  FileManifest m;
  m.content = content;
  m.master_seed = master_seed;
  m.config_json = config_json;
  m.config_hash = fnv1a64(config_json);
  return m;
}

inline void save_scenario_suite(const std::string& path,
                                const std::vector<ScenarioLog>& logs,
                                const FileManifest& manifest) {
  std::string body = detail::manifest_json(manifest).dump() + "\n";
  for (const auto& log : logs) body += detail::scenario_json(log).dump() + "\n";
  detail::write_file(path, body);
}

struct ScenarioSuite {
  FileManifest manifest;
  std::vector<ScenarioLog> logs;
};

inline ScenarioSuite load_scenario_suite(const std::string& path) {
  const auto lines = detail::split_lines(detail::read_file(path));
  if (lines.empty()) throw std::runtime_error("empty suite file: " + path);
  ScenarioSuite suite;
  suite.manifest = detail::manifest_from_line(lines[0], "scenario_suite");
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    try {
      suite.logs.push_back(detail::scenario_from(nlohmann::json::parse(lines[i])));
    } catch (const nlohmann::json::exception&) {
      throw std::runtime_error("malformed scenario at line " + std::to_string(i + 1));
    }
  }
  return suite;
}

// ---------------------------------------------------------------------------
// Prediction records (line-delimited JSON)
// ---------------------------------------------------------------------------

namespace detail {

inline nlohmann::json prediction_json(const ScenarioPredictions& sp) {
  nlohmann::json j;
  j["scenario_id"] = sp.scenario_id;
  j["predictor_id"] = sp.predictor_id;
  auto preds = nlohmann::json::array();
  for (const auto& p : sp.predictions) {
    nlohmann::json q;
    q["agent_id"] = p.agent_id;
    auto modes = nlohmann::json::array();
    for (const auto& m : p.modes) modes.push_back(trajectory_json(m));
    q["modes"] = std::move(modes);
    if (p.mode_probs) q["mode_probs"] = *p.mode_probs;
    preds.push_back(std::move(q));
  }
  j["predictions"] = std::move(preds);
  return j;
}

inline ScenarioPredictions prediction_from(const nlohmann::json& j) {
  ScenarioPredictions sp;
  sp.scenario_id = j.at("scenario_id");
  sp.predictor_id = j.at("predictor_id");
  for (const auto& q : j.at("predictions")) {
    PredictionSet p;
    p.agent_id = q.at("agent_id");
    for (const auto& m : q.at("modes")) p.modes.push_back(trajectory_from(m));
    if (q.contains("mode_probs"))
      p.mode_probs = q.at("mode_probs").get<std::vector<double>>();
    sp.predictions.push_back(std::move(p));
  }
  return sp;
}

}  // namespace detail

inline void save_predictions(const std::string& path,
                             const std::vector<ScenarioPredictions>& preds,
                             const FileManifest& manifest) {
  std::string body = detail::manifest_json(manifest).dump() + "\n";
  for (const auto& sp : preds) body += detail::prediction_json(sp).dump() + "\n";
  detail::write_file(path, body);
}

inline std::vector<ScenarioPredictions> load_predictions(const std::string& path) {
  const auto lines = detail::split_lines(detail::read_file(path));
  if (lines.empty()) throw std::runtime_error("empty predictions file: " + path);
  detail::manifest_from_line(lines[0], "prediction_suite");
  std::vector<ScenarioPredictions> out;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    try {
      out.push_back(detail::prediction_from(nlohmann::json::parse(lines[i])));
    } catch (const nlohmann::json::exception&) {
      throw std::runtime_error("malformed prediction record at line " + std::to_string(i + 1));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Model checkpoints (binary, CRC-protected)
// ---------------------------------------------------------------------------

namespace detail {

inline void put_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline std::uint32_t get_u32(const std::string& buf, std::size_t& pos) {
  if (pos + 4 > buf.size()) throw std::runtime_error("checkpoint truncated");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i)
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
  pos += 4;
  return v;
}

}  // namespace detail

inline constexpr std::uint32_t kCheckpointMagic = 0x4E4E4445;  // "EDNN"

inline void save_checkpoint(const std::string& path, const CriticalityModel& model,
                            const std::string& config_json) {
  std::string payload;
  detail::put_u32(payload, kFormatVersion);
  detail::put_u32(payload, static_cast<std::uint32_t>(config_json.size()));
  payload += config_json;
  const auto params = model.params();
  const auto names = CriticalityModel::param_names();
  detail::put_u32(payload, static_cast<std::uint32_t>(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    detail::put_u32(payload, static_cast<std::uint32_t>(names[i].size()));
    payload += names[i];
    detail::put_u32(payload, static_cast<std::uint32_t>(params[i]->rows()));
    detail::put_u32(payload, static_cast<std::uint32_t>(params[i]->cols()));
    const auto& m = *params[i];
    for (Eigen::Index c = 0; c < m.cols(); ++c)
      for (Eigen::Index r = 0; r < m.rows(); ++r) {
        double v = m(r, c);
        char raw[sizeof(double)];
        std::memcpy(raw, &v, sizeof(double));
        payload.append(raw, sizeof(double));
      }
  }

  std::string body;
  detail::put_u32(body, kCheckpointMagic);
  body += payload;
  detail::put_u32(body, detail::crc32(
                            reinterpret_cast<const unsigned char*>(payload.data()),
                            payload.size()));
  detail::write_file(path, body);
}

struct CheckpointData {
  CriticalityModel model;
  std::string config_json;
};

inline CheckpointData load_checkpoint(const std::string& path) {
  const std::string body = detail::read_file(path);
  std::size_t pos = 0;
  if (detail::get_u32(body, pos) != kCheckpointMagic)
    throw std::runtime_error("not a model checkpoint: " + path);
  if (body.size() < pos + 4) throw std::runtime_error("checkpoint truncated");
  const std::string payload = body.substr(pos, body.size() - pos - 4);
  std::size_t crc_pos = body.size() - 4;
  const std::uint32_t stored_crc = detail::get_u32(body, crc_pos);
  if (stored_crc != detail::crc32(
                        reinterpret_cast<const unsigned char*>(payload.data()),
                        payload.size()))
    throw std::runtime_error("checkpoint checksum failure: " + path);

  std::size_t p = 0;
  const std::uint32_t version = detail::get_u32(payload, p);
  if (version != static_cast<std::uint32_t>(kFormatVersion))
    throw std::runtime_error("unsupported format version " + std::to_string(version));
  const std::uint32_t cfg_len = detail::get_u32(payload, p);
  if (p + cfg_len > payload.size()) throw std::runtime_error("checkpoint truncated");
  CheckpointData out;
  out.config_json = payload.substr(p, cfg_len);
  p += cfg_len;

  out.model = CriticalityModel::zeros();
  auto params = out.model.params();
  const auto names = CriticalityModel::param_names();
  const std::uint32_t count = detail::get_u32(payload, p);
  if (count != params.size())
    throw std::runtime_error("checkpoint tensor count mismatch");
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = detail::get_u32(payload, p);
    if (p + name_len > payload.size()) throw std::runtime_error("checkpoint truncated");
    const std::string name = payload.substr(p, name_len);
    p += name_len;
    if (name != names[i])
      throw std::runtime_error("unexpected tensor '" + name + "', expected '" + names[i] +
                               "'");
    const std::uint32_t rows = detail::get_u32(payload, p);
    const std::uint32_t cols = detail::get_u32(payload, p);
    if (rows != static_cast<std::uint32_t>(params[i]->rows()) ||
        cols != static_cast<std::uint32_t>(params[i]->cols()))
      throw std::runtime_error("shape mismatch for tensor '" + name + "': got " +
                               std::to_string(rows) + "x" + std::to_string(cols) +
                               ", expected " + std::to_string(params[i]->rows()) + "x" +
                               std::to_string(params[i]->cols()));
    if (p + static_cast<std::size_t>(rows) * cols * sizeof(double) > payload.size())
      throw std::runtime_error("checkpoint truncated");
    for (std::uint32_t c = 0; c < cols; ++c)
      for (std::uint32_t r = 0; r < rows; ++r) {
        double v;
        std::memcpy(&v, payload.data() + p, sizeof(double));
        p += sizeof(double);
        (*params[i])(r, c) = v;
      }
  }
  return out;
}

// ---------------------------------------------------------------------------
// CSV exports
// ---------------------------------------------------------------------------

inline constexpr const char* kEvaluationCsvHeader =
    "scenario_id,predictor_id,p_critical,gad,e_error,gad_norm,e_error_norm,score,"
    "efficiency,discomfort,unsafety,overall";

inline void save_evaluations_csv(const std::string& path,
                                 std::vector<EvaluationRecord> records) {
  std::sort(records.begin(), records.end(),
            [](const EvaluationRecord& a, const EvaluationRecord& b) {
              return std::tie(a.scenario_id, a.predictor_id) <
                     std::tie(b.scenario_id, b.predictor_id);
            });
  std::string body = std::string(kEvaluationCsvHeader) + "\n";
  for (const auto& r : records) {
    body += r.scenario_id + "," + r.predictor_id;
    for (double v : {r.p_critical, r.gad, r.e_error, r.gad_norm, r.e_error_norm, r.score,
                     r.performance.efficiency, r.performance.discomfort,
                     r.performance.unsafety, r.performance.overall})
      body += "," + detail::format_double(v);
    body += "\n";
  }
  detail::write_file(path, body);
}

inline std::vector<EvaluationRecord> load_evaluations_csv(const std::string& path) {
  const auto lines = detail::split_lines(detail::read_file(path));
  if (lines.empty() || lines[0] != kEvaluationCsvHeader)
    throw std::runtime_error("unexpected evaluation CSV header in " + path);
  std::vector<EvaluationRecord> out;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const auto f = detail::split_csv(lines[i]);
    if (f.size() != 12)
      throw std::runtime_error("malformed evaluation row at line " + std::to_string(i + 1));
    EvaluationRecord r;
    r.scenario_id = f[0];
    r.predictor_id = f[1];
    r.p_critical = std::stod(f[2]);
    r.gad = std::stod(f[3]);
    r.e_error = std::stod(f[4]);
    r.gad_norm = std::stod(f[5]);
    r.e_error_norm = std::stod(f[6]);
    r.score = std::stod(f[7]);
    r.performance.efficiency = std::stod(f[8]);
    r.performance.discomfort = std::stod(f[9]);
    r.performance.unsafety = std::stod(f[10]);
    r.performance.overall = std::stod(f[11]);
    out.push_back(std::move(r));
  }
  return out;
}

inline constexpr const char* kMetricsCsvHeader =
    "scenario_id,predictor_id,gad,ADE,FDE,minADE,minFDE,aveADE,aveFDE,flags";

inline void save_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows) {
  std::string body = std::string(kMetricsCsvHeader) + "\n";
  for (const auto& r : rows) {  // batch_metrics already orders rows
    body += r.scenario_id + "," + r.predictor_id + "," + detail::format_double(r.gad);
    for (double e : r.errors) body += "," + detail::format_double(e);
    std::string flags;
    for (const auto& fl : r.flags) flags += (flags.empty() ? "" : ";") + fl;
    body += "," + flags + "\n";
  }
  detail::write_file(path, body);
}

inline std::vector<MetricsRow> load_metrics_csv(const std::string& path) {
  const auto lines = detail::split_lines(detail::read_file(path));
  if (lines.empty() || lines[0] != kMetricsCsvHeader)
    throw std::runtime_error("unexpected metrics CSV header in " + path);
  std::vector<MetricsRow> out;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const auto f = detail::split_csv(lines[i]);
    if (f.size() != 10)
      throw std::runtime_error("malformed metrics row at line " + std::to_string(i + 1));
    MetricsRow r;
    r.scenario_id = f[0];
    r.predictor_id = f[1];
    r.gad = std::stod(f[2]);
    for (int k = 0; k < 6; ++k) r.errors[k] = std::stod(f[3 + k]);
    if (!f[9].empty()) {
      std::size_t start = 0;
      while (start <= f[9].size()) {
        std::size_t semi = f[9].find(';', start);
        if (semi == std::string::npos) semi = f[9].size();
        r.flags.push_back(f[9].substr(start, semi - start));
        start = semi + 1;
      }
    }
    out.push_back(std::move(r));
  }
  return out;
}

inline constexpr const char* kPerformanceCsvHeader =
    "scenario_id,predictor_id,efficiency,discomfort,unsafety,overall,emergency_steps,error";

inline void save_performances_csv(const std::string& path,
                                  const std::vector<EpisodeResult>& episodes) {
  std::vector<const EpisodeResult*> rows;
  for (const auto& e : episodes) rows.push_back(&e);
  std::sort(rows.begin(), rows.end(), [](const EpisodeResult* a, const EpisodeResult* b) {
    return std::tie(a->scenario_id, a->predictor_id) <
           std::tie(b->scenario_id, b->predictor_id);
  });
  std::string body = std::string(kPerformanceCsvHeader) + "\n";
  for (const auto* e : rows) {
    body += e->scenario_id + "," + e->predictor_id;
    for (double v : {e->performance.efficiency, e->performance.discomfort,
                     e->performance.unsafety, e->performance.overall})
      body += "," + detail::format_double(v);
    body += "," + std::to_string(e->emergency_steps) + "," + e->error + "\n";
  }
  detail::write_file(path, body);
}

struct PerformanceRow {
  std::string scenario_id;
  std::string predictor_id;
  PerformanceRecord performance;
  int emergency_steps{0};
  std::string error;
};

inline std::vector<PerformanceRow> load_performances_csv(const std::string& path) {
  const auto lines = detail::split_lines(detail::read_file(path));
  if (lines.empty() || lines[0] != kPerformanceCsvHeader)
    throw std::runtime_error("unexpected performance CSV header in " + path);
  std::vector<PerformanceRow> out;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const auto f = detail::split_csv(lines[i]);
    if (f.size() != 8)
      throw std::runtime_error("malformed performance row at line " + std::to_string(i + 1));
    PerformanceRow r;
    r.scenario_id = f[0];
    r.predictor_id = f[1];
    r.performance.efficiency = std::stod(f[2]);
    r.performance.discomfort = std::stod(f[3]);
    r.performance.unsafety = std::stod(f[4]);
    r.performance.overall = std::stod(f[5]);
    r.emergency_steps = std::stoi(f[6]);
    r.error = f[7];
    out.push_back(std::move(r));
  }
  return out;
}

inline constexpr const char* kCorrelationCsvHeader =
    "predictor_id,method,samples,r_efficiency,r_discomfort,r_unsafety,r_overall,auroc";

inline void save_correlations_csv(const std::string& path, const CorrelationReport& report) {
  std::string body = std::string(kCorrelationCsvHeader) + "\n";
  for (const auto& b : report.blocks) {
    body += b.predictor_id + "," + b.method + "," + std::to_string(b.samples);
    for (double v : {b.r_efficiency, b.r_discomfort, b.r_unsafety, b.r_overall,
                     b.auroc_overall})
      body += "," + detail::format_double(v);
    body += "\n";
  }
  detail::write_file(path, body);
}

inline constexpr const char* kRocCsvHeader = "predictor_id,method,threshold,fpr,tpr";

inline void save_roc_csv(const std::string& path, const CorrelationReport& report) {
  std::string body = std::string(kRocCsvHeader) + "\n";
  for (const auto& [key, points] : report.roc)
    for (const auto& pt : points)
      body += key.first + "," + key.second + "," + detail::format_double(pt.threshold) +
              "," + detail::format_double(pt.fpr) + "," + detail::format_double(pt.tpr) +
              "\n";
  detail::write_file(path, body);
}

}  // namespace edeva
