#include "fdi/simulator.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "fdi/error.hpp"

namespace fdi {

using nlohmann::json;

void TraceConfig::validate() const {
  if (!(sigma_theta >= 0.0)) throw std::invalid_argument("sigma_theta must be nonnegative");
  if (!(sigma_n > 0.0)) throw std::invalid_argument("sigma_n must be positive");
  if (horizon_T < 2) throw std::invalid_argument("horizon_T must be at least 2");
}

std::string to_string(NoiseShape shape) {
  return shape == NoiseShape::gaussian ? "gaussian" : "uniform_scaled";
}

NoiseShape noise_shape_from_string(const std::string& s) {
  if (s == "gaussian") return NoiseShape::gaussian;
  if (s == "uniform_scaled") return NoiseShape::uniform_scaled;
  throw ParseError("unknown noise shape '" + s + "'");
}

namespace {

double draw(GaussianStream& stream, NoiseShape shape) {
  if (shape == NoiseShape::gaussian) return stream.next();
  return std::sqrt(3.0) * (2.0 * stream.uniform() - 1.0);
}

}  // namespace

std::pair<Eigen::VectorXd, Eigen::VectorXd> draw_snapshot(const MeasurementMatrix& h,
                                                          const StateVector& theta_bar,
                                                          double sigma_theta, double sigma_n,
                                                          NoiseShape shape,
                                                          GaussianStream& stream) {
  if (theta_bar.size() != h.cols())
    throw std::invalid_argument("draw_snapshot: theta_bar length does not match h");
  Eigen::VectorXd theta(theta_bar.size());
  for (Eigen::Index i = 0; i < theta.size(); ++i)
    theta(i) = theta_bar(i) + sigma_theta * draw(stream, shape);
  Eigen::VectorXd z = h.h * theta;
  for (Eigen::Index i = 0; i < z.size(); ++i) z(i) += sigma_n * draw(stream, shape);
  return {std::move(z), std::move(theta)};
}

MeasurementTrace generate_trace(const MeasurementMatrix& h, const StateVector& theta_bar,
                                const TraceConfig& cfg) {
  cfg.validate();
  if (theta_bar.size() != h.cols())
    throw std::invalid_argument("generate_trace: theta_bar length does not match h");
  MeasurementTrace out;
  out.config = cfg;
  out.row_labels = h.row_labels;
  out.z.resize(h.rows(), cfg.horizon_T);
  out.true_states.resize(h.cols(), cfg.horizon_T);
  GaussianStream stream(cfg.seed);
  for (int t = 0; t < cfg.horizon_T; ++t) {
    auto [z, theta] = draw_snapshot(h, theta_bar, cfg.sigma_theta, cfg.sigma_n, cfg.shape, stream);
    out.z.col(t) = z;
    out.true_states.col(t) = theta;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

namespace {

std::string exact(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

json config_json(const TraceConfig& c) {
  return {{"sigma_theta", c.sigma_theta},
          {"sigma_n", c.sigma_n},
          {"horizon_T", c.horizon_T},
          {"seed", c.seed},
          {"shape", to_string(c.shape)}};
}

TraceConfig config_from(const json& j) {
  TraceConfig c;
  try {
    c.sigma_theta = j.at("sigma_theta").get<double>();
    c.sigma_n = j.at("sigma_n").get<double>();
    c.horizon_T = j.at("horizon_T").get<int>();
    c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("shape")) c.shape = noise_shape_from_string(j.at("shape").get<std::string>());
  } catch (const json::exception& e) {
    throw ParseError(std::string("trace metadata: ") + e.what());
  }
  return c;
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << content;
  if (!out) throw IoError("write failed for '" + path + "'");
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

void write_trace_csv(const MeasurementTrace& trace, const std::string& path) {
  std::string s = "t";
  for (const auto& l : trace.row_labels) s += "," + l.to_string();
  s += "\n";
  for (Eigen::Index t = 0; t < trace.z.cols(); ++t) {
    s += std::to_string(t);
    for (Eigen::Index i = 0; i < trace.z.rows(); ++i) s += "," + exact(trace.z(i, t));
    s += "\n";
  }
  write_file(path, s);
}

void write_trace_sidecar(const MeasurementTrace& trace, const std::string& path) {
  json doc = config_json(trace.config);
  doc["sensors"] = trace.sensors();
  doc["snapshots"] = trace.snapshots();
  write_file(path, doc.dump(2) + "\n");
}

std::string trace_to_json(const MeasurementTrace& trace) {
  json doc;
  doc["config"] = config_json(trace.config);
  doc["row_labels"] = json::array();
  for (const auto& l : trace.row_labels) doc["row_labels"].push_back(l.to_string());
  doc["z"] = json::array();
  for (Eigen::Index t = 0; t < trace.z.cols(); ++t) {
    json col = json::array();
    for (Eigen::Index i = 0; i < trace.z.rows(); ++i) col.push_back(trace.z(i, t));
    doc["z"].push_back(std::move(col));
  }
  return doc.dump() + "\n";
}

MeasurementTrace trace_from_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("trace JSON: ") + e.what());
  }
  MeasurementTrace out;
  if (!doc.contains("config") || !doc.contains("z") || !doc["z"].is_array())
    throw ParseError("trace JSON: missing config or z");
  out.config = config_from(doc["config"]);
  if (doc.contains("row_labels"))
    for (const auto& l : doc["row_labels"]) out.row_labels.push_back(RowLabel::parse(l.get<std::string>()));
  const auto& z = doc["z"];
  const Eigen::Index cols = static_cast<Eigen::Index>(z.size());
  const Eigen::Index rows = cols > 0 ? static_cast<Eigen::Index>(z[0].size()) : 0;
  out.z.resize(rows, cols);
  for (Eigen::Index t = 0; t < cols; ++t) {
    if (static_cast<Eigen::Index>(z[t].size()) != rows) throw ParseError("trace JSON: ragged z");
    for (Eigen::Index i = 0; i < rows; ++i) out.z(i, t) = z[t][i].get<double>();
  }
  out.config.horizon_T = static_cast<int>(cols);
  return out;
}

MeasurementTrace read_trace_csv(const std::string& path) {
  std::istringstream in(read_file(path));
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path + ": empty trace file");
  const auto header = split(line, ',');
  if (header.empty() || header[0] != "t") throw ParseError(path + ": header must start with 't'", 1, 1);
  MeasurementTrace out;
  for (std::size_t i = 1; i < header.size(); ++i) out.row_labels.push_back(RowLabel::parse(header[i]));

  std::vector<std::vector<double>> cols;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto cells = split(line, ',');
    if (cells.size() != header.size())
      throw ParseError(path + ": expected " + std::to_string(header.size()) + " fields", lineno, 1);
    std::vector<double> col;
    for (std::size_t i = 1; i < cells.size(); ++i) {
      char* end = nullptr;
      const double v = std::strtod(cells[i].c_str(), &end);
      if (cells[i].empty() || *end != '\0')
        throw ParseError(path + ": malformed number '" + cells[i] + "'", lineno, static_cast<int>(i + 1));
      col.push_back(v);
    }
    cols.push_back(std::move(col));
  }
  out.z.resize(static_cast<Eigen::Index>(out.row_labels.size()), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t t = 0; t < cols.size(); ++t)
    for (std::size_t i = 0; i < cols[t].size(); ++i)
      out.z(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(t)) = cols[t][i];
  out.config.horizon_T = static_cast<int>(cols.size());
  return out;
}

MeasurementTrace read_trace(const std::string& csv_path, const std::string& sidecar_path) {
  MeasurementTrace out = read_trace_csv(csv_path);
  if (!sidecar_path.empty()) {
    json doc;
    try {
      doc = json::parse(read_file(sidecar_path));
    } catch (const json::parse_error& e) {
      throw ParseError(sidecar_path + ": " + e.what());
    }
    const int t = out.config.horizon_T;
    out.config = config_from(doc);
    if (out.config.horizon_T != t)
      throw ParseError(sidecar_path + ": horizon_T does not match the trace file");
  }
  return out;
}

}  // namespace fdi
