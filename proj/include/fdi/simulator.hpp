#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fdi/case_io.hpp"
#include "fdi/numerics.hpp"

namespace fdi {

/// Distribution family for both state fluctuations and sensor noise. `uniform_scaled` is
/// uniform on [-sqrt(3) sigma, sqrt(3) sigma], matching the Gaussian's variance.
enum class NoiseShape { gaussian, uniform_scaled };

struct TraceConfig {
  double sigma_theta = 0.002;  // radians
  double sigma_n = 0.02;       // per-unit
  int horizon_T = 2;
  std::uint64_t seed = 0;
  NoiseShape shape = NoiseShape::gaussian;

  void validate() const;
};

struct MeasurementTrace {
  Eigen::MatrixXd z;            // M x T
  TraceConfig config;
  Eigen::MatrixXd true_states;  // n x T, oracle use only; never serialized
  std::vector<RowLabel> row_labels;

  Eigen::Index sensors() const { return z.rows(); }
  Eigen::Index snapshots() const { return z.cols(); }
};

/// Column t is h * (theta_bar + eps[t]) + noise[t]. Per snapshot the stream yields the n
/// state draws first, then the M noise draws.
MeasurementTrace generate_trace(const MeasurementMatrix& h, const StateVector& theta_bar,
                                const TraceConfig& cfg);

/// One snapshot drawn from `stream`; returns (z, theta).
std::pair<Eigen::VectorXd, Eigen::VectorXd> draw_snapshot(const MeasurementMatrix& h,
                                                          const StateVector& theta_bar,
                                                          double sigma_theta, double sigma_n,
                                                          NoiseShape shape,
                                                          GaussianStream& stream);

// Serialization. CSV: header `t,<label_0>,...`, one snapshot per line. The sidecar JSON holds
// the TraceConfig plus dimensions.
void write_trace_csv(const MeasurementTrace& trace, const std::string& path);
void write_trace_sidecar(const MeasurementTrace& trace, const std::string& path);
std::string trace_to_json(const MeasurementTrace& trace);
MeasurementTrace read_trace_csv(const std::string& path);
/// Reads the CSV and, when `sidecar_path` is nonempty, restores the config from it.
MeasurementTrace read_trace(const std::string& csv_path, const std::string& sidecar_path);
MeasurementTrace trace_from_json(const std::string& text);

std::string to_string(NoiseShape shape);
NoiseShape noise_shape_from_string(const std::string& s);

}  // namespace fdi
