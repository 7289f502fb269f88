#pragma once

#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace fdi {

struct Bus {
  int id = 0;
  double load_mw = 0.0;
  double gen_mw = 0.0;

  bool operator==(const Bus&) const = default;
};

enum class BranchStatus { off = 0, on = 1 };

struct Branch {
  int from = 0;
  int to = 0;
  double reactance_x = 0.0;  // per-unit
  BranchStatus status = BranchStatus::on;

  bool in_service() const { return status == BranchStatus::on; }
  bool operator==(const Branch&) const = default;
};

/// Bus/branch topology of a transmission grid. Buses keep file order.
struct GridCase {
  std::vector<Bus> buses;
  std::vector<Branch> branches;
  double base_mva = 100.0;
  int reference_bus = 0;

  std::size_t bus_count() const { return buses.size(); }
  std::size_t in_service_branch_count() const;
  /// Position of bus `id` in `buses`; throws ParseError when absent.
  std::size_t bus_index(int id) const;

  bool operator==(const GridCase&) const = default;
};

/// Throws ParseError describing the first violated GridCase invariant.
void validate(const GridCase& g);

enum class RowKind { flow_fwd, flow_rev, injection };

struct RowLabel {
  RowKind kind = RowKind::flow_fwd;
  int element = 0;  // branch index into GridCase::branches, or bus id for injections

  std::string to_string() const;
  static RowLabel parse(std::string_view text);
  bool operator==(const RowLabel&) const = default;
};

/// Fully measured DC model: forward flows, reverse flows, then every bus injection.
struct MeasurementMatrix {
  Eigen::MatrixXd h;                // M x n, per-unit flow per radian
  std::vector<RowLabel> row_labels; // size M
  std::vector<int> state_buses;     // bus id of each column (reference omitted)

  Eigen::Index rows() const { return h.rows(); }
  Eigen::Index cols() const { return h.cols(); }
};

/// Bus voltage angles in radians, reference bus excluded (angle 0).
using StateVector = Eigen::VectorXd;

/// Parses the `mpc.baseMVA`, `mpc.bus`, `mpc.gen` and `mpc.branch` blocks of a MATPOWER
/// case. Other assignments are skipped; a note for each is appended to `warnings`.
GridCase parse_matpower_case(std::string_view text, std::vector<std::string>* warnings = nullptr);

/// Native JSON case schema:
/// {"base_mva", "reference_bus", "buses": [{"id","load_mw","gen_mw"}],
///  "branches": [{"from","to","x","status"}]}
GridCase parse_native_case(std::string_view text);
std::string serialize_native_case(const GridCase& g);

/// Reads and parses a case file; `format` is "matpower", "native" or "auto" (by extension).
GridCase load_case(const std::string& path, const std::string& format = "auto",
                   std::vector<std::string>* warnings = nullptr);

MeasurementMatrix build_measurement_matrix(const GridCase& g);

/// Reduced bus susceptance matrix B (n x n) over the non-reference buses.
Eigen::MatrixXd reduced_susceptance(const GridCase& g);

/// Base-case angles solving B * theta = p with p = (gen - load) / base_mva. The mismatch
/// is absorbed by the reference bus, so only non-reference injections enter the solve.
StateVector dc_power_flow(const GridCase& g);

}  // namespace fdi
