#pragma once

// Config-driven runs: stages, persisted CSVs, the run manifest and reports.

#include "latscat/classical.hpp"
#include "latscat/hamilton_jacobi.hpp"
#include "latscat/potential.hpp"

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

namespace latscat {

/// Exit status: 2 for config errors, 1 for failed certificates, 3 for I/O.
enum ExitCode : int { kExitOk = 0, kExitCertificate = 1, kExitConfig = 2, kExitIo = 3 };

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Tolerances {
  double energy_drift = 1e-8;
  double chebyshev = 1e-12;
  double newton = 1e-10;
  double boundary_mass = 1e-8;
  double isometry = 1e-10;
  double hj_residual = 1e-4;
  double cauchy = 1e-2;  // last increment accepted as converged
};

struct ExperimentConfig {
  std::string name = "run";
  int dim = 1;
  int half_width = 2048;
  PotentialSpec potential;
  EnergyWindow window;
  bool sharp_window = false;
  PacketSpec packet;
  double t0 = 25.0 / 8;
  double final_time = 200.0;
  double ratio = 0.0;  // geometric ratio; 2^(1/n) for an integer n (default n = 16)
  int prefix = 8;
  std::vector<ModifierKind> modifiers{ModifierKind::hj};
  int sign = +1;
  Tolerances tol;

  int classical_samples = 100;
  double classical_step = 0.05;
  int classical_order = 4;
  double classical_time = 200.0;
  double rate_time = 1e5;  // reference trajectory for the asymptotic rates
  double fan_step = 0.05;
  int fan_order = 4;
  double propagation_step = 50.0;

  double fit_min = 25.0;         // Cook and phase rate fits
  double dispersive_from = 50.0;  // dispersive fits and c1 reference
  int region_margin = 4;
  double intertwining_shift = 1.0;  // 0 skips the paired run

  std::uint64_t seed = 1;
  int jobs = 1;
  std::filesystem::path output_dir = "runs";

  /// Throws ConfigError on unknown keys, wrong types or failed validation.
  static ExperimentConfig from_json(const nlohmann::json& j);
  static ExperimentConfig load(const std::filesystem::path& path);
  nlohmann::json to_json() const;
  /// Tolerances, window, packet and the horizon rule L >= max|v| T + 8 / width.
  void validate() const;

  int per_doubling() const;
  TimeSchedule schedule() const;
  /// Largest |v| over the packet's momentum support.
  double packet_speed() const;
};

struct CertificateRow {
  std::string stage, name;
  double value = 0.0, threshold = 0.0;
  bool pass = false;
};

/// Physics checks; "insufficient range" marks fits without enough data.
struct InvariantRow {
  std::string stage, name;
  double value = 0.0;
  std::string target;
  std::string status;  // pass | fail | insufficient range
};

struct RunManifest {
  nlohmann::json config;
  nlohmann::json versions;
  nlohmann::json stages = nlohmann::json::object();  // wall clock, cache use
  std::vector<CertificateRow> certificates;
  std::vector<InvariantRow> invariants;

  nlohmann::json to_json() const;
  static RunManifest from_json(const nlohmann::json& j);
  bool certificates_pass() const;
};

const std::vector<std::string>& stage_names();  // extend ... waveop, then all

/// Runs `stage` and writes outputs under output_dir / name. Returns the exit
/// status; diagnostics go to `log`.
int run_experiment(const ExperimentConfig& cfg, const std::string& stage, std::ostream& log);

/// Prints the invariant and certificate tables of a finished run and writes
/// them as JSON to `json_out` (outside the run directory).
int report_run(const std::filesystem::path& run_dir, const std::filesystem::path& json_out,
               std::ostream& out, std::ostream& err);

/// FNV-1a 64 of a string, as 16 hex digits.
std::string content_hash(const std::string& text);

}  // namespace latscat
