#include "fdi/case_io.hpp"

#include <cctype>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <optional>
#include <queue>
#include <set>
#include <sstream>

#include <json.hpp>

#include "fdi/error.hpp"
#include "fdi/numerics.hpp"

namespace fdi {

std::size_t GridCase::in_service_branch_count() const {
  std::size_t n = 0;
  for (const auto& b : branches) n += b.in_service() ? 1 : 0;
  return n;
}

std::size_t GridCase::bus_index(int id) const {
  for (std::size_t i = 0; i < buses.size(); ++i)
    if (buses[i].id == id) return i;
  throw ParseError("unknown bus id " + std::to_string(id));
}

void validate(const GridCase& g) {
  if (g.buses.empty()) throw ParseError("case has no buses");
  if (!(g.base_mva > 0.0)) throw ParseError("base_mva must be positive");

  std::map<int, std::size_t> index;
  for (std::size_t i = 0; i < g.buses.size(); ++i) {
    if (!index.emplace(g.buses[i].id, i).second)
      throw ParseError("duplicate bus id " + std::to_string(g.buses[i].id));
  }
  if (!index.count(g.reference_bus))
    throw ParseError("reference bus " + std::to_string(g.reference_bus) + " not present");

  std::vector<std::vector<std::size_t>> adj(g.buses.size());
  for (std::size_t k = 0; k < g.branches.size(); ++k) {
    const Branch& br = g.branches[k];
    for (int end : {br.from, br.to}) {
      if (!index.count(end))
        throw ParseError("branch " + std::to_string(k) + " references unknown bus " +
                         std::to_string(end));
    }
    if (!br.in_service()) continue;
    if (br.from == br.to) throw ParseError("branch " + std::to_string(k) + " is a self-loop");
    if (!(br.reactance_x > 0.0) || !std::isfinite(br.reactance_x))
      throw ParseError("branch " + std::to_string(k) + ": nonpositive reactance");
    adj[index[br.from]].push_back(index[br.to]);
    adj[index[br.to]].push_back(index[br.from]);
  }

  std::vector<bool> seen(g.buses.size(), false);
  std::queue<std::size_t> todo;
  todo.push(index[g.reference_bus]);
  seen[index[g.reference_bus]] = true;
  std::size_t reached = 1;
  while (!todo.empty()) {
    const std::size_t u = todo.front();
    todo.pop();
    for (std::size_t v : adj[u]) {
      if (!seen[v]) {
        seen[v] = true;
        ++reached;
        todo.push(v);
      }
    }
  }
  if (reached != g.buses.size()) throw ParseError("graph not connected");
}

// ---------------------------------------------------------------------------
// Row labels
// ---------------------------------------------------------------------------

std::string RowLabel::to_string() const {
  switch (kind) {
    case RowKind::flow_fwd: return "flow_fwd:" + std::to_string(element);
    case RowKind::flow_rev: return "flow_rev:" + std::to_string(element);
    case RowKind::injection: return "injection:" + std::to_string(element);
  }
  return {};
}

RowLabel RowLabel::parse(std::string_view text) {
  const auto colon = text.find(':');
  if (colon == std::string_view::npos) throw ParseError("bad row label '" + std::string(text) + "'");
  const std::string kind(text.substr(0, colon));
  const std::string num(text.substr(colon + 1));
  RowLabel label;
  if (kind == "flow_fwd") label.kind = RowKind::flow_fwd;
  else if (kind == "flow_rev") label.kind = RowKind::flow_rev;
  else if (kind == "injection") label.kind = RowKind::injection;
  else throw ParseError("bad row label kind '" + kind + "'");
  char* end = nullptr;
  const long v = std::strtol(num.c_str(), &end, 10);
  if (num.empty() || *end != '\0') throw ParseError("bad row label index '" + num + "'");
  label.element = static_cast<int>(v);
  return label;
}

// ---------------------------------------------------------------------------
// MATPOWER subset
// ---------------------------------------------------------------------------

namespace {

class MatpowerScanner {
public:
  explicit MatpowerScanner(std::string_view text) : text_(text) {}

  bool done() {
    skip_blank(true);
    return pos_ >= text_.size();
  }

  [[noreturn]] void fail(const std::string& what) const { throw ParseError(what, line_, col_); }

  char peek() const { return pos_ < text_.size() ? text_[pos_] : '\0'; }

  void advance() {
    if (pos_ >= text_.size()) return;
    if (text_[pos_] == '\n') {
      ++line_;
      col_ = 1;
    } else {
      ++col_;
    }
    ++pos_;
  }

  // Skips spaces and comments; newlines too when `newlines` is set.
  void skip_blank(bool newlines) {
    while (pos_ < text_.size()) {
      const char c = text_[pos_];
      if (c == '%') {
        while (pos_ < text_.size() && text_[pos_] != '\n') advance();
      } else if (c == ' ' || c == '\t' || c == '\r' || (newlines && c == '\n')) {
        advance();
      } else if (c == '.' && text_.substr(pos_, 3) == "...") {
        // Continuation: rest of line ignored, newline swallowed.
        while (pos_ < text_.size() && text_[pos_] != '\n') advance();
        advance();
      } else {
        break;
      }
    }
  }

  std::string identifier() {
    std::string out;
    while (pos_ < text_.size() &&
           (std::isalnum(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '_')) {
      out += text_[pos_];
      advance();
    }
    return out;
  }

  void expect(char c) {
    skip_blank(false);
    if (peek() != c) fail(std::string("expected '") + c + "'");
    advance();
  }

  void skip_line() {
    while (pos_ < text_.size() && text_[pos_] != '\n') advance();
  }

  double number() {
    skip_blank(false);
    const std::size_t start = pos_;
    std::size_t len = 0;
    while (start + len < text_.size()) {
      const char c = text_[start + len];
      if (std::isdigit(static_cast<unsigned char>(c)) || c == '.' || c == '-' || c == '+' ||
          c == 'e' || c == 'E' || std::isalpha(static_cast<unsigned char>(c)))
        ++len;
      else
        break;
    }
    const std::string token(text_.substr(start, len));
    if (token == "Inf" || token == "inf") {
      for (std::size_t i = 0; i < len; ++i) advance();
      return INFINITY;
    }
    if (token == "-Inf" || token == "-inf") {
      for (std::size_t i = 0; i < len; ++i) advance();
      return -INFINITY;
    }
    char* end = nullptr;
    const double v = std::strtod(token.c_str(), &end);
    if (token.empty() || end != token.c_str() + token.size()) fail("malformed number '" + token + "'");
    for (std::size_t i = 0; i < len; ++i) advance();
    return v;
  }

  std::vector<std::vector<double>> matrix() {
    expect('[');
    std::vector<std::vector<double>> rows;
    std::vector<double> row;
    auto flush = [&] {
      if (!row.empty()) rows.push_back(std::move(row));
      row.clear();
    };
    for (;;) {
      skip_blank(false);
      const char c = peek();
      if (c == '\0') fail("unterminated matrix");
      if (c == ']') {
        advance();
        flush();
        return rows;
      }
      if (c == ';' || c == '\n') {
        advance();
        flush();
      } else if (c == ',') {
        advance();
      } else {
        row.push_back(number());
      }
    }
  }

  void quoted() {
    const char q = peek();
    advance();
    while (peek() != q) {
      if (peek() == '\0' || peek() == '\n') fail("unterminated string");
      advance();
    }
    advance();
  }

  // Skips a `{ ... }` cell array, honouring quotes and comments.
  void cell_array() {
    advance();
    for (;;) {
      skip_blank(true);
      const char c = peek();
      if (c == '\0') fail("unterminated cell array");
      if (c == '}') {
        advance();
        return;
      }
      if (c == '\'' || c == '"') quoted();
      else advance();
    }
  }

  int line() const { return line_; }
  int col() const { return col_; }

private:
  std::string_view text_;
  std::size_t pos_ = 0;
  int line_ = 1;
  int col_ = 1;
};

using Block = std::vector<std::vector<double>>;

double cell(const std::vector<double>& row, std::size_t col, double fallback) {
  return col < row.size() ? row[col] : fallback;
}

int as_id(double v, const char* what) {
  if (v != std::floor(v) || std::abs(v) > 2e9) throw ParseError(std::string("non-integer ") + what);
  return static_cast<int>(v);
}

}  // namespace

GridCase parse_matpower_case(std::string_view text, std::vector<std::string>* warnings) {
  MatpowerScanner sc(text);
  std::map<std::string, std::pair<Block, int>> blocks;  // name -> (rows, line)
  std::optional<double> base_mva;

  while (!sc.done()) {
    const int line = sc.line();
    const int col = sc.col();
    const std::string word = sc.identifier();
    if (word.empty()) sc.fail(std::string("unexpected character '") + sc.peek() + "'");
    if (word == "function") {
      sc.skip_line();
      continue;
    }
    if (word != "mpc") throw ParseError("unexpected identifier '" + word + "'", line, col);
    sc.expect('.');
    const std::string name = sc.identifier();
    if (name.empty()) sc.fail("expected field name after 'mpc.'");
    sc.expect('=');
    sc.skip_blank(false);

    const char c = sc.peek();
    if (c == '[') {
      Block rows = sc.matrix();
      if (name == "bus" || name == "gen" || name == "branch") {
        blocks[name] = {std::move(rows), line};
      } else if (warnings) {
        warnings->push_back("ignored mpc." + name + " (line " + std::to_string(line) + ")");
      }
    } else if (c == '\'' || c == '"') {
      sc.quoted();
      if (warnings) warnings->push_back("ignored mpc." + name + " (line " + std::to_string(line) + ")");
    } else if (c == '{') {
      sc.cell_array();
      if (warnings) warnings->push_back("ignored mpc." + name + " (line " + std::to_string(line) + ")");
    } else {
      const double v = sc.number();
      if (name == "baseMVA") base_mva = v;
      else if (warnings)
        warnings->push_back("ignored mpc." + name + " (line " + std::to_string(line) + ")");
    }
    sc.skip_blank(false);
    if (sc.peek() == ';') sc.advance();
  }

  if (!base_mva) throw ParseError("missing mpc.baseMVA block");
  for (const char* name : {"bus", "gen", "branch"}) {
    if (!blocks.count(name)) throw ParseError(std::string("missing mpc.") + name + " block");
  }

  GridCase g;
  g.base_mva = *base_mva;
  bool have_ref = false;
  {
    const auto& [rows, line] = blocks["bus"];
    for (const auto& r : rows) {
      if (r.size() < 3) throw ParseError("mpc.bus row needs at least 3 columns", line, 1);
      Bus b;
      b.id = as_id(r[0], "bus id");
      b.load_mw = r[2];
      const int type = as_id(r[1], "bus type");
      if (type == 3) {
        if (have_ref) throw ParseError("more than one type-3 (reference) bus");
        have_ref = true;
        g.reference_bus = b.id;
      }
      g.buses.push_back(b);
    }
  }
  if (!have_ref) throw ParseError("no type-3 (reference) bus");

  std::map<int, std::size_t> index;
  for (std::size_t i = 0; i < g.buses.size(); ++i) {
    if (!index.emplace(g.buses[i].id, i).second)
      throw ParseError("duplicate bus id " + std::to_string(g.buses[i].id));
  }

  {
    const auto& [rows, line] = blocks["gen"];
    for (const auto& r : rows) {
      if (r.size() < 2) throw ParseError("mpc.gen row needs at least 2 columns", line, 1);
      const int bus = as_id(r[0], "generator bus");
      auto it = index.find(bus);
      if (it == index.end()) throw ParseError("generator at unknown bus " + std::to_string(bus));
      if (cell(r, 7, 1.0) > 0.0) g.buses[it->second].gen_mw += r[1];
    }
  }

  {
    const auto& [rows, line] = blocks["branch"];
    for (const auto& r : rows) {
      if (r.size() < 4) throw ParseError("mpc.branch row needs at least 4 columns", line, 1);
      Branch br;
      br.from = as_id(r[0], "branch from-bus");
      br.to = as_id(r[1], "branch to-bus");
      br.reactance_x = r[3];
      br.status = cell(r, 10, 1.0) > 0.0 ? BranchStatus::on : BranchStatus::off;
      g.branches.push_back(br);
    }
  }

  validate(g);
  return g;
}

// ---------------------------------------------------------------------------
// Native JSON
// ---------------------------------------------------------------------------

namespace {

using nlohmann::json;

const json& field(const json& obj, const std::string& key, const std::string& path) {
  if (!obj.is_object()) throw ParseError(path + ": expected object");
  auto it = obj.find(key);
  if (it == obj.end()) throw ParseError(path + "/" + key + ": missing");
  return *it;
}

double number_at(const json& obj, const std::string& key, const std::string& path) {
  const json& v = field(obj, key, path);
  if (!v.is_number()) throw ParseError(path + "/" + key + ": expected number");
  return v.get<double>();
}

int int_at(const json& obj, const std::string& key, const std::string& path) {
  const json& v = field(obj, key, path);
  if (!v.is_number_integer()) throw ParseError(path + "/" + key + ": expected integer");
  return v.get<int>();
}

}  // namespace

GridCase parse_native_case(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("invalid JSON: ") + e.what());
  }
  GridCase g;
  g.base_mva = number_at(doc, "base_mva", "");
  g.reference_bus = int_at(doc, "reference_bus", "");

  const json& buses = field(doc, "buses", "");
  if (!buses.is_array()) throw ParseError("/buses: expected array");
  for (std::size_t i = 0; i < buses.size(); ++i) {
    const std::string path = "/buses/" + std::to_string(i);
    Bus b;
    b.id = int_at(buses[i], "id", path);
    b.load_mw = number_at(buses[i], "load_mw", path);
    b.gen_mw = number_at(buses[i], "gen_mw", path);
    g.buses.push_back(b);
  }

  const json& branches = field(doc, "branches", "");
  if (!branches.is_array()) throw ParseError("/branches: expected array");
  for (std::size_t i = 0; i < branches.size(); ++i) {
    const std::string path = "/branches/" + std::to_string(i);
    Branch br;
    br.from = int_at(branches[i], "from", path);
    br.to = int_at(branches[i], "to", path);
    br.reactance_x = number_at(branches[i], "x", path);
    const int status = int_at(branches[i], "status", path);
    if (status != 0 && status != 1) throw ParseError(path + "/status: expected 0 or 1");
    br.status = status == 1 ? BranchStatus::on : BranchStatus::off;
    g.branches.push_back(br);
  }
  validate(g);
  return g;
}

std::string serialize_native_case(const GridCase& g) {
  json doc;
  doc["base_mva"] = g.base_mva;
  doc["reference_bus"] = g.reference_bus;
  doc["buses"] = json::array();
  for (const Bus& b : g.buses)
    doc["buses"].push_back({{"id", b.id}, {"load_mw", b.load_mw}, {"gen_mw", b.gen_mw}});
  doc["branches"] = json::array();
  for (const Branch& br : g.branches) {
    doc["branches"].push_back({{"from", br.from},
                               {"to", br.to},
                               {"x", br.reactance_x},
                               {"status", br.in_service() ? 1 : 0}});
  }
  return doc.dump(2) + "\n";
}

GridCase load_case(const std::string& path, const std::string& format,
                   std::vector<std::string>* warnings) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open case file '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  std::string fmt = format;
  if (fmt == "auto") {
    const bool json_ext = path.size() >= 5 && path.compare(path.size() - 5, 5, ".json") == 0;
    fmt = json_ext ? "native" : "matpower";
  }
  if (fmt == "matpower") return parse_matpower_case(buf.str(), warnings);
  if (fmt == "native") return parse_native_case(buf.str());
  throw ParseError("unknown case format '" + format + "'");
}

// ---------------------------------------------------------------------------
// DC model
// ---------------------------------------------------------------------------

namespace {

// Column of each bus in the state vector, -1 for the reference.
std::vector<int> state_columns(const GridCase& g) {
  std::vector<int> col(g.buses.size(), -1);
  int next = 0;
  for (std::size_t i = 0; i < g.buses.size(); ++i)
    if (g.buses[i].id != g.reference_bus) col[i] = next++;
  return col;
}

}  // namespace

MeasurementMatrix build_measurement_matrix(const GridCase& g) {
  validate(g);
  const std::vector<int> col = state_columns(g);
  const Eigen::Index n = static_cast<Eigen::Index>(g.buses.size()) - 1;
  const Eigen::Index nb = static_cast<Eigen::Index>(g.buses.size());

  std::vector<std::size_t> live;
  for (std::size_t k = 0; k < g.branches.size(); ++k)
    if (g.branches[k].in_service()) live.push_back(k);
  const Eigen::Index l = static_cast<Eigen::Index>(live.size());

  MeasurementMatrix out;
  out.h = Eigen::MatrixXd::Zero(2 * l + nb, n);
  out.row_labels.reserve(static_cast<std::size_t>(2 * l + nb));

  for (Eigen::Index r = 0; r < l; ++r) {
    const std::size_t k = live[static_cast<std::size_t>(r)];
    const Branch& br = g.branches[k];
    const double y = 1.0 / br.reactance_x;
    const std::size_t fi = g.bus_index(br.from);
    const std::size_t ti = g.bus_index(br.to);
    if (col[fi] >= 0) out.h(r, col[fi]) += y;
    if (col[ti] >= 0) out.h(r, col[ti]) -= y;
    out.h.row(l + r) = -out.h.row(r);
    out.h.row(2 * l + static_cast<Eigen::Index>(fi)) += out.h.row(r);
    out.h.row(2 * l + static_cast<Eigen::Index>(ti)) -= out.h.row(r);
  }
  for (Eigen::Index r = 0; r < l; ++r)
    out.row_labels.push_back({RowKind::flow_fwd, static_cast<int>(live[static_cast<std::size_t>(r)])});
  for (Eigen::Index r = 0; r < l; ++r)
    out.row_labels.push_back({RowKind::flow_rev, static_cast<int>(live[static_cast<std::size_t>(r)])});
  for (const Bus& b : g.buses) out.row_labels.push_back({RowKind::injection, b.id});
  for (std::size_t i = 0; i < g.buses.size(); ++i)
    if (col[i] >= 0) out.state_buses.push_back(g.buses[i].id);
  return out;
}

Eigen::MatrixXd reduced_susceptance(const GridCase& g) {
  validate(g);
  const std::vector<int> col = state_columns(g);
  const Eigen::Index n = static_cast<Eigen::Index>(g.buses.size()) - 1;
  Eigen::MatrixXd b = Eigen::MatrixXd::Zero(n, n);
  for (const Branch& br : g.branches) {
    if (!br.in_service()) continue;
    const double y = 1.0 / br.reactance_x;
    const int i = col[g.bus_index(br.from)];
    const int j = col[g.bus_index(br.to)];
    if (i >= 0) b(i, i) += y;
    if (j >= 0) b(j, j) += y;
    if (i >= 0 && j >= 0) {
      b(i, j) -= y;
      b(j, i) -= y;
    }
  }
  return b;
}

StateVector dc_power_flow(const GridCase& g) {
  const Eigen::MatrixXd b = reduced_susceptance(g);
  const std::vector<int> col = state_columns(g);
  Eigen::VectorXd p = Eigen::VectorXd::Zero(b.rows());
  for (std::size_t i = 0; i < g.buses.size(); ++i)
    if (col[i] >= 0) p(col[i]) = (g.buses[i].gen_mw - g.buses[i].load_mw) / g.base_mva;
  if (b.rows() == 0) return p;
  try {
    return Cholesky(b).solve(p);
  } catch (const NumericalError&) {
    throw NumericalError("dc_power_flow: singular reduced susceptance matrix");
  }
}

}  // namespace fdi
