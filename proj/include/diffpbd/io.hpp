#pragma once

#include <map>
#include <string>
#include <vector>

#include "diffpbd/chain.hpp"
#include "diffpbd/control.hpp"

namespace diffpbd {

/// File-format failure with path (and field or line) context in what().
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Chain description plus the solver settings bundled with it.
struct LoadedChain {
  Chain<double> chain;
  SimConfig config;
  std::vector<std::string> notes;  // free-form provenance remarks
};

inline constexpr int kChainFormatVersion = 1;

/// Reads a .chain JSON file and validates it: positive masses on dynamic
/// links, symmetric positive-definite inertia, unit joint axes (normalized
/// silently when within 1e-6 of unit length), unit quaternions, joint indices
/// in range, and the chain axis convention (each joint's parent outboard axis
/// column equals the child inboard axis column in link coordinates).
LoadedChain load_chain(const std::string& path);
void save_chain(const std::string& path, const LoadedChain& data);

/// Joint-space time series: a header with joint names and dt, then one row
/// per step with time, angles, optional rates, optional torques.
struct TrajectoryData {
  double dt = 0.01;
  std::vector<std::string> joint_names;
  std::vector<double> times;
  std::vector<std::vector<double>> angles;   // [step][joint]
  std::vector<std::vector<double>> rates;    // [step][joint], empty if absent
  std::vector<std::vector<double>> torques;  // [step][joint], empty if absent
  bool has_rates() const { return !rates.empty(); }
  bool has_torques() const { return !torques.empty(); }
  std::size_t steps() const { return times.size(); }
  std::size_t joints() const { return joint_names.size(); }
};

/// Text format; rejects non-monotone time, dt jitter above 1e-9, and row
/// width mismatches. Floats round-trip exactly (shortest representation).
TrajectoryData load_trajectory(const std::string& path);
void write_trajectory(const std::string& path, const TrajectoryData& data);

/// Self-describing experiment artifact: the echoed configuration is enough to
/// reproduce the run, and the named series feed the plot-data emitter.
struct RunResult {
  std::string experiment;
  std::map<std::string, std::string> config;          // echoed settings, stringly typed
  std::vector<double> loss_history;
  std::map<std::string, double> fitted;               // named scalar results
  std::map<std::string, double> rmse;                 // per-joint or per-scheme errors
  std::map<std::string, std::vector<double>> series;  // named per-step columns
};

void save_result(const std::string& path, const RunResult& result);
RunResult load_result(const std::string& path);

void save_map(const std::string& path, const NetTorqueMap& map);
NetTorqueMap load_map(const std::string& path);

/// Writes tab-separated plot files for a known figure kind into out_dir and
/// returns the created paths. Fails when the result lacks a required series,
/// listing the series that are present.
std::vector<std::string> emit_plot_data(const RunResult& result, const std::string& kind,
                                        const std::string& out_dir);

/// Shortest decimal representation that parses back to the same double.
std::string format_double(double x);

}  // namespace diffpbd
