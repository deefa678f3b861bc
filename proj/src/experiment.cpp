#include "latscat/experiment.hpp"

#include "latscat/extension.hpp"
#include "latscat/wave_operators.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>

namespace latscat {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr const char* kVersion = "0.1.0";

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& item : j.items()) {
    const bool known = std::any_of(allowed.begin(), allowed.end(),
                                   [&](const char* k) { return item.key() == k; });
    if (!known) throw ConfigError(where + ": unknown key \"" + item.key() + "\"");
  }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17e", v);
  return buf;
}

std::string short_fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

// CSV with every real in %.17e so that reloads are bit-faithful.
class CsvWriter {
 public:
  CsvWriter(const fs::path& path, const std::vector<std::string>& header) : path_(path), out_(path) {
    if (!out_) throw IoError("cannot write " + path.string());
    for (std::size_t i = 0; i < header.size(); ++i) out_ << (i ? "," : "") << header[i];
    out_ << '\n';
  }
  CsvWriter& operator<<(double v) {
    sep();
    out_ << fmt(v);
    return *this;
  }
  CsvWriter& operator<<(long v) {
    sep();
    out_ << v;
    return *this;
  }
  CsvWriter& operator<<(int v) { return *this << static_cast<long>(v); }
  CsvWriter& operator<<(bool v) { return *this << static_cast<long>(v ? 1 : 0); }
  void end_row() {
    out_ << '\n';
    first_ = true;
  }
  ~CsvWriter() noexcept(false) {
    out_.flush();
    if (!out_ && std::uncaught_exceptions() == 0) throw IoError("write failed: " + path_.string());
  }

 private:
  void sep() {
    if (!first_) out_ << ',';
    first_ = false;
  }
  fs::path path_;
  std::ofstream out_;
  bool first_ = true;
};

// Exclusive ownership of a run directory.
class RunLock {
 public:
  explicit RunLock(const fs::path& dir) : path_(dir / ".lock") {
    fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd_ < 0) throw IoError("run directory is locked by another process: " + path_.string());
    const std::string pid = std::to_string(::getpid()) + "\n";
    if (::write(fd_, pid.data(), pid.size()) < 0) { /* pid is informational */ }
  }
  ~RunLock() {
    ::close(fd_);
    std::error_code ec;
    fs::remove(path_, ec);
  }
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  fs::path path_;
  int fd_ = -1;
};

json window_json(const EnergyWindow& w, bool sharp) {
  return {{"lower", w.lower},           {"upper", w.upper},
          {"margin", w.margin},         {"smoothing", w.smoothing},
          {"hessian_margin", w.hessian_margin}, {"sharp", sharp}};
}

json potential_json(const PotentialSpec& p) {
  json j{{"family", to_string(p.family)}, {"extension", to_string(p.extension)}};
  if (p.family == PotentialFamily::power) {
    j["amplitude"] = p.amplitude;
    j["decay"] = p.decay;
  }
  if (p.family == PotentialFamily::tabulated) {
    j["values_half_width"] = p.table.box().half_width();
    j["values"] = std::vector<double>(p.table.values().begin(), p.table.values().end());
  }
  return j;
}

bool has_power_law(const PotentialSpec& p) { return p.family == PotentialFamily::power && !p.is_zero(); }

std::string status(bool pass) { return pass ? "pass" : "fail"; }

constexpr const char* kInsufficient = "insufficient range";

}  // namespace

// ---------------------------------------------------------------------------
// Config

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  ExperimentConfig c;
  try {
    check_keys(j, {"name", "dimension", "half_width", "potential", "window", "packet", "schedule", "modifiers",
                   "sign", "tolerances", "classical", "fan", "propagation", "diagnostics", "seed", "jobs",
                   "output_dir"},
               "config");
    read(j, "name", c.name);
    read(j, "dimension", c.dim);
    read(j, "half_width", c.half_width);
    read(j, "sign", c.sign);
    read(j, "seed", c.seed);
    read(j, "jobs", c.jobs);
    if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();

    if (j.contains("potential")) {
      const json& p = j.at("potential");
      check_keys(p, {"family", "amplitude", "decay", "extension", "values", "values_half_width"}, "potential");
      c.potential.family = parse_family(p.value("family", std::string("zero")));
      read(p, "amplitude", c.potential.amplitude);
      read(p, "decay", c.potential.decay);
      if (p.contains("extension")) c.potential.extension = parse_policy(p.at("extension").get<std::string>());
      if (c.potential.family == PotentialFamily::tabulated) {
        const int n = p.at("values_half_width").get<int>();
        const auto values = p.at("values").get<std::vector<double>>();
        const LatticeBox box(c.dim, n);
        if (static_cast<Eigen::Index>(values.size()) != box.size())
          throw ConfigError("potential: values must hold (2 values_half_width + 1)^d entries");
        c.potential.table = LatticeFunction(box, Eigen::Map<const RealVector>(values.data(), box.size()));
      }
    }
    if (j.contains("window")) {
      const json& w = j.at("window");
      check_keys(w, {"lower", "upper", "margin", "smoothing", "hessian_margin", "sharp"}, "window");
      read(w, "lower", c.window.lower);
      read(w, "upper", c.window.upper);
      read(w, "margin", c.window.margin);
      read(w, "smoothing", c.window.smoothing);
      read(w, "hessian_margin", c.window.hessian_margin);
      read(w, "sharp", c.sharp_window);
    }
    if (j.contains("packet")) {
      const json& p = j.at("packet");
      check_keys(p, {"center", "width"}, "packet");
      const auto center = p.at("center").get<std::vector<double>>();
      if (center.empty() || center.size() > kMaxDim) throw ConfigError("packet: center must have 1 to 3 entries");
      c.packet.center = Eigen::Map<const Eigen::VectorXd>(center.data(), center.size());
      read(p, "width", c.packet.width);
    }
    if (j.contains("schedule")) {
      const json& s = j.at("schedule");
      check_keys(s, {"t0", "final_time", "ratio", "prefix"}, "schedule");
      read(s, "t0", c.t0);
      read(s, "final_time", c.final_time);
      read(s, "ratio", c.ratio);
      read(s, "prefix", c.prefix);
    }
    if (j.contains("modifiers")) {
      c.modifiers.clear();
      for (const auto& m : j.at("modifiers").get<std::vector<std::string>>()) c.modifiers.push_back(parse_modifier(m));
    }
    if (j.contains("tolerances")) {
      const json& t = j.at("tolerances");
      check_keys(t, {"energy_drift", "chebyshev", "newton", "boundary_mass", "isometry", "hj_residual", "cauchy"},
                 "tolerances");
      read(t, "energy_drift", c.tol.energy_drift);
      read(t, "chebyshev", c.tol.chebyshev);
      read(t, "newton", c.tol.newton);
      read(t, "boundary_mass", c.tol.boundary_mass);
      read(t, "isometry", c.tol.isometry);
      read(t, "hj_residual", c.tol.hj_residual);
      read(t, "cauchy", c.tol.cauchy);
    }
    if (j.contains("classical")) {
      const json& s = j.at("classical");
      check_keys(s, {"samples", "step", "order", "final_time", "rate_time"}, "classical");
      read(s, "samples", c.classical_samples);
      read(s, "step", c.classical_step);
      read(s, "order", c.classical_order);
      read(s, "final_time", c.classical_time);
      read(s, "rate_time", c.rate_time);
    }
    if (j.contains("fan")) {
      const json& s = j.at("fan");
      check_keys(s, {"step", "order"}, "fan");
      read(s, "step", c.fan_step);
      read(s, "order", c.fan_order);
    }
    if (j.contains("propagation")) {
      const json& s = j.at("propagation");
      check_keys(s, {"step"}, "propagation");
      read(s, "step", c.propagation_step);
    }
    if (j.contains("diagnostics")) {
      const json& s = j.at("diagnostics");
      check_keys(s, {"fit_min", "dispersive_from", "region_margin", "intertwining_shift"}, "diagnostics");
      read(s, "fit_min", c.fit_min);
      read(s, "dispersive_from", c.dispersive_from);
      read(s, "region_margin", c.region_margin);
      read(s, "intertwining_shift", c.intertwining_shift);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return from_json(j);
}

json ExperimentConfig::to_json() const {
  json mods = json::array();
  for (ModifierKind m : modifiers) mods.push_back(latscat::to_string(m));
  return {{"name", name},
          {"dimension", dim},
          {"half_width", half_width},
          {"potential", potential_json(potential)},
          {"window", window_json(window, sharp_window)},
          {"packet", {{"center", std::vector<double>(packet.center.begin(), packet.center.end())},
                      {"width", packet.width}}},
          {"schedule", {{"t0", t0}, {"final_time", final_time}, {"ratio", ratio}, {"prefix", prefix}}},
          {"modifiers", mods},
          {"sign", sign},
          {"tolerances",
           {{"energy_drift", tol.energy_drift},
            {"chebyshev", tol.chebyshev},
            {"newton", tol.newton},
            {"boundary_mass", tol.boundary_mass},
            {"isometry", tol.isometry},
            {"hj_residual", tol.hj_residual},
            {"cauchy", tol.cauchy}}},
          {"classical",
           {{"samples", classical_samples},
            {"step", classical_step},
            {"order", classical_order},
            {"final_time", classical_time},
            {"rate_time", rate_time}}},
          {"fan", {{"step", fan_step}, {"order", fan_order}}},
          {"propagation", {{"step", propagation_step}}},
          {"diagnostics",
           {{"fit_min", fit_min},
            {"dispersive_from", dispersive_from},
            {"region_margin", region_margin},
            {"intertwining_shift", intertwining_shift}}},
          {"seed", seed},
          {"jobs", jobs},
          {"output_dir", output_dir.string()}};
}

int ExperimentConfig::per_doubling() const {
  if (ratio == 0.0) return 16;
  if (!(ratio > 1.0)) throw ConfigError("schedule: ratio must exceed 1");
  const int n = static_cast<int>(std::lround(std::log(2.0) / std::log(ratio)));
  if (n < 1 || std::abs(std::pow(2.0, 1.0 / n) - ratio) > 1e-9 * ratio)
    throw ConfigError("schedule: ratio must be 2^(1/n) for an integer n");
  return n;
}

TimeSchedule ExperimentConfig::schedule() const {
  return TimeSchedule::geometric(t0, final_time, per_doubling(), prefix);
}

double ExperimentConfig::packet_speed() const {
  const MomentumGrid grid(LatticeBox(dim, half_width));
  const auto support = packet_support(grid, packet);
  if (support.empty()) throw ConfigError("packet: width below grid resolution");
  double v = 0.0;
  for (Eigen::Index k : support) v = std::max(v, velocity(grid.point(k)).cwiseAbs().maxCoeff());
  return v;
}

void ExperimentConfig::validate() const {
  if (name.empty() || name.find('/') != std::string::npos || name == "." || name == "..")
    throw ConfigError("name must be a plain directory name");
  if (dim < 1 || dim > kMaxDim) throw ConfigError("dimension must be 1, 2 or 3");
  if (half_width < 8) throw ConfigError("half_width must be at least 8");
  if (sign != 1 && sign != -1) throw ConfigError("sign must be +1 or -1");
  if (jobs < 1) throw ConfigError("jobs must be positive");
  if (modifiers.empty()) throw ConfigError("modifiers: at least one is required");
  if (std::set<ModifierKind>(modifiers.begin(), modifiers.end()).size() != modifiers.size())
    throw ConfigError("modifiers: duplicate entry");
  try {
    potential.validate();
    window.validate(dim);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (potential.family == PotentialFamily::tabulated && potential.table.box().dim() != dim)
    throw ConfigError("potential: tabulated values have the wrong dimension");
  for (double t : {tol.energy_drift, tol.chebyshev, tol.newton, tol.boundary_mass, tol.isometry, tol.hj_residual,
                   tol.cauchy})
    if (!(t > 0)) throw ConfigError("tolerances must be positive");
  if (!(t0 > 0) || !(final_time > t0)) throw ConfigError("schedule: need 0 < t0 < final_time");
  if (prefix < 0) throw ConfigError("schedule: prefix must be non-negative");
  per_doubling();
  if (classical_samples < 1 || !(classical_step > 0) || !(classical_time > 0) || !(rate_time > 0))
    throw ConfigError("classical: samples, step and final_time must be positive");
  if (classical_order != 2 && classical_order != 4) throw ConfigError("classical: order must be 2 or 4");
  if (fan_order != 2 && fan_order != 4) throw ConfigError("fan: order must be 2 or 4");
  if (!(fan_step > 0) || !(propagation_step > 0)) throw ConfigError("step sizes must be positive");
  if (!(fit_min > 0) || !(dispersive_from > 0) || region_margin < 0)
    throw ConfigError("diagnostics: fit_min and dispersive_from must be positive, region_margin non-negative");

  if (packet.center.size() != dim) throw ConfigError("packet: center must have one entry per dimension");
  if (!(packet.width > 0)) throw ConfigError("packet: width must be positive");
  const MomentumGrid grid(LatticeBox(dim, half_width));
  if (!in_nondegenerate_shell(window, packet.center))
    throw ConfigError("packet: center is not in the nondegenerate energy shell");
  for (Eigen::Index k : packet_support(grid, packet))
    if (!in_nondegenerate_shell(window, grid.point(k)))
      throw ConfigError("packet: support leaves the nondegenerate energy shell");

  const double need = packet_speed() * final_time + 8.0 * packet.position_width();
  if (half_width < need) {
    std::ostringstream msg;
    msg << "horizon rule violated: L >= max|v| T + 8 / width requires L >= " << std::ceil(need) << ", got L = "
        << half_width;
    throw ConfigError(msg.str());
  }
}

// ---------------------------------------------------------------------------
// Manifest

json RunManifest::to_json() const {
  json certs = json::array(), inv = json::array();
  for (const auto& c : certificates)
    certs.push_back({{"stage", c.stage}, {"name", c.name}, {"value", c.value}, {"threshold", c.threshold},
                     {"pass", c.pass}});
  for (const auto& r : invariants)
    inv.push_back({{"stage", r.stage}, {"name", r.name}, {"value", r.value}, {"target", r.target},
                   {"status", r.status}});
  return {{"config", config}, {"versions", versions},         {"stages", stages},
          {"certificates", certs}, {"invariants", inv}, {"certificates_pass", certificates_pass()}};
}

RunManifest RunManifest::from_json(const json& j) {
  RunManifest m;
  m.config = j.at("config");
  m.versions = j.at("versions");
  m.stages = j.at("stages");
  for (const auto& c : j.at("certificates"))
    m.certificates.push_back({c.at("stage").get<std::string>(), c.at("name").get<std::string>(),
                              c.at("value").is_number() ? c.at("value").get<double>() : NAN,
                              c.at("threshold").get<double>(), c.at("pass").get<bool>()});
  for (const auto& r : j.at("invariants"))
    m.invariants.push_back({r.at("stage").get<std::string>(), r.at("name").get<std::string>(),
                            r.at("value").is_number() ? r.at("value").get<double>() : NAN,
                            r.at("target").get<std::string>(), r.at("status").get<std::string>()});
  return m;
}

bool RunManifest::certificates_pass() const {
  return std::all_of(certificates.begin(), certificates.end(), [](const CertificateRow& c) { return c.pass; });
}

const std::vector<std::string>& stage_names() {
  static const std::vector<std::string> names{"extend", "classical", "hj", "evolve", "cook", "waveop", "all"};
  return names;
}

std::string content_hash(const std::string& text) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---------------------------------------------------------------------------
// Stages

namespace {

// Window-extension source box: the whole lattice in d = 1, a cap beyond.
int extension_half_width(const ExperimentConfig& cfg) {
  return cfg.dim == 1 ? cfg.half_width : std::min(cfg.half_width, 384);
}

class Runner {
 public:
  Runner(const ExperimentConfig& cfg, fs::path dir, std::ostream& log)
      : cfg_(cfg), dir_(std::move(dir)), log_(log), box_(cfg.dim, cfg.half_width), grid_(box_) {}

  RunManifest& manifest() { return manifest_; }

  void load_manifest() {
    manifest_.config = cfg_.to_json();
    manifest_.versions = {{"latscat", kVersion},
                          {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) +
                                        "." + std::to_string(EIGEN_MINOR_VERSION)},
                          {"compiler", __VERSION__},
                          {"csv_format", "%.17e"}};
    const fs::path meta = dir_ / "meta.json";
    if (!fs::exists(meta)) return;
    try {
      std::ifstream in(meta);
      RunManifest old = RunManifest::from_json(json::parse(in));
      if (old.config != manifest_.config) {
        log_ << "config changed; earlier stage results dropped\n";
        return;
      }
      manifest_.stages = old.stages;
      manifest_.certificates = std::move(old.certificates);
      manifest_.invariants = std::move(old.invariants);
    } catch (const std::exception& e) {
      log_ << "ignoring unreadable manifest: " << e.what() << '\n';
    }
  }

  void save_manifest() const {
    const fs::path tmp = dir_ / "meta.json.tmp";
    {
      std::ofstream out(tmp);
      out << manifest_.to_json().dump(2) << '\n';
      if (!out) throw IoError("cannot write " + tmp.string());
    }
    fs::rename(tmp, dir_ / "meta.json");
  }

  void run(const std::string& stage) {
    stage_ = stage;
    std::erase_if(manifest_.certificates, [&](const CertificateRow& c) { return c.stage == stage; });
    std::erase_if(manifest_.invariants, [&](const InvariantRow& r) { return r.stage == stage; });
    stage_info_ = json::object();
    const auto start = std::chrono::steady_clock::now();
    log_ << "[" << stage << "]\n";
    try {
      if (stage == "extend") extend();
      else if (stage == "classical") classical();
      else if (stage == "hj") hj();
      else if (stage == "evolve") evolve();
      else if (stage == "cook") cook();
      else if (stage == "waveop") waveop();
    } catch (const IoError&) {
      throw;
    } catch (const ConfigError&) {
      throw;
    } catch (const fs::filesystem_error&) {
      throw;
    } catch (const std::exception& e) {
      // numerical breakdown (boundary breach, drift, Newton failure) is a failed certificate
      log_ << "  error: " << e.what() << '\n';
      certificate("stage completed: " + std::string(e.what()), 1.0, 0.0, false);
    }
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    stage_info_["wall_seconds"] = wall;
    manifest_.stages[stage] = stage_info_;
  }

 private:
  // -- bookkeeping
  void certificate(const std::string& name, double value, double threshold, std::optional<bool> pass = {}) {
    const bool ok = pass.value_or(value <= threshold);
    manifest_.certificates.push_back({stage_, name, value, threshold, ok});
    log_ << "  cert " << (ok ? "ok  " : "FAIL") << ' ' << name << " = " << short_fmt(value) << '\n';
  }
  void invariant(const std::string& name, double value, const std::string& target, const std::string& st) {
    manifest_.invariants.push_back({stage_, name, value, target, st});
    log_ << "  inv  " << st << ' ' << name << " = " << short_fmt(value) << " (" << target << ")\n";
  }
  // slope invariant with a symmetric band
  void slope_row(const std::string& name, const LogLogFit& fit, double target, double band) {
    std::ostringstream t;
    t << "within " << band << " of " << short_fmt(target);
    if (!fit.sufficient) return invariant(name, fit.slope, t.str(), kInsufficient);
    invariant(name, fit.slope, t.str(), status(std::abs(fit.slope - target) <= band));
  }
  void slope_below(const std::string& name, const LogLogFit& fit, double bound) {
    const std::string t = "<= " + short_fmt(bound);
    if (!fit.sufficient) return invariant(name, fit.slope, t, kInsufficient);
    invariant(name, fit.slope, t, status(fit.slope <= bound));
  }

  fs::path out(const std::string& file) const { return dir_ / file; }
  // V = 0 results are exact up to rounding accumulated along the schedule
  double rounding_bound() const { return 1e-11 * std::max(1.0, cfg_.final_time); }
  double mu() const { return cfg_.potential.decay; }
  bool zero() const { return cfg_.potential.is_zero(); }

  // -- shared objects, built on first use
  std::shared_ptr<const ContinuumPotential> potential() {
    if (pot_) return pot_;
    if (cfg_.potential.extension == ExtensionPolicy::window && !zero()) {
      const PotentialSpec& spec = cfg_.potential;
      auto ext = std::make_shared<const ExtendedPotential>(
          sample_potential(spec, LatticeBox(cfg_.dim, extension_half_width(cfg_))), window_function());
      pot_ = std::make_shared<const ContinuumPotential>(spec, ext);
    } else {
      pot_ = std::make_shared<const ContinuumPotential>(cfg_.potential);
    }
    return pot_;
  }
  const WindowFunction& window_function() {
    if (!wf_) wf_ = build_window();
    return *wf_;
  }
  const Hamiltonian& hamiltonian() {
    if (!h_) h_.emplace(box_, cfg_.potential);
    return *h_;
  }
  const LatticeField& packet() {
    if (!phi_) phi_ = build_wavepacket(box_, cfg_.packet, cfg_.window);
    return *phi_;
  }
  LatticeField windowed() { return apply_multiplier(spectral_window(cfg_.window, grid_, cfg_.sharp_window), packet()); }
  const TimeSchedule& schedule() {
    if (!schedule_) schedule_ = cfg_.schedule();
    return *schedule_;
  }
  std::vector<double> positive_times() {
    std::vector<double> t;
    for (double s : schedule().times)
      if (s > 0) t.push_back(s);
    return t;
  }
  // Doubling chain T/8 .. T restricted to the schedule range.
  std::vector<double> doubling_chain() const {
    std::vector<double> t;
    for (int k = 3; k >= 0; --k) {
      const double v = cfg_.final_time / double(1 << k);
      if (v >= cfg_.t0 * (1 - 1e-12)) t.push_back(v);
    }
    return t;
  }
  PropagatorConfig propagator() const {
    PropagatorConfig p;
    p.tolerance = cfg_.tol.chebyshev;
    p.step = cfg_.propagation_step;
    p.boundary_threshold = cfg_.tol.boundary_mass;
    return p;
  }
  int boundary_margin() const { return default_boundary_margin(box_, cfg_.packet); }

  // Phase table for hj or Dollard, cached under tables/ by a content hash of
  // everything it depends on.
  Modifier modifier(ModifierKind kind) {
    if (kind == ModifierKind::none) return Modifier::none(grid_);
    return Modifier(table(kind));
  }

  std::shared_ptr<const PhaseTable> table(ModifierKind kind) {
    if (auto it = tables_.find(kind); it != tables_.end()) return it->second;
    json key{{"kind", latscat::to_string(kind)},
             {"dimension", cfg_.dim},
             {"half_width", cfg_.half_width},
             {"potential", potential_json(cfg_.potential)},
             {"window", window_json(cfg_.window, false)},
             {"schedule", manifest_.config.at("schedule")},
             {"sign", cfg_.sign},
             {"newton", cfg_.tol.newton},
             {"version", kVersion}};
    if (kind == ModifierKind::hj) {
      key["fan"] = {{"step", cfg_.fan_step}, {"order", cfg_.fan_order}, {"drift", cfg_.tol.energy_drift}};
      if (cfg_.potential.extension == ExtensionPolicy::window) key["extension_half_width"] = extension_half_width(cfg_);
    }
    const std::string hash = content_hash(key.dump());
    const fs::path tables = dir_ / "tables";
    fs::create_directories(tables);
    const fs::path stem = tables / (latscat::to_string(kind) + "-" + hash);
    const fs::path cert = stem.string() + ".cert.json";

    std::shared_ptr<const PhaseTable> t;
    json sidecar;
    if (fs::exists(stem.string() + ".csv") && fs::exists(cert)) {
      try {
        t = std::make_shared<const PhaseTable>(load_phase_table(stem));
        std::ifstream in(cert);
        sidecar = json::parse(in);
        log_ << "  reusing " << stem.filename().string() << '\n';
        stage_info_["cache"][latscat::to_string(kind)] = "hit";
      } catch (const std::exception& e) {
        log_ << "  cached table unusable (" << e.what() << "), rebuilding\n";
        t.reset();
      }
    }
    if (!t) {
      const auto pot = potential();
      if (kind == ModifierKind::hj) {
        FanParams fp;
        fp.sign = cfg_.sign;
        fp.window = cfg_.window;
        fp.jobs = cfg_.jobs;
        fp.flow.potential = pot;
        fp.flow.step = cfg_.fan_step;
        fp.flow.order = cfg_.fan_order;
        fp.flow.drift_tolerance = cfg_.tol.energy_drift;
        const CharacteristicFan fan = build_fan(fp, grid_, schedule());
        t = std::make_shared<const PhaseTable>(invert_and_assemble(fan, grid_, cfg_.window, cfg_.tol.newton));
        sidecar = {{"r1", fan.r1()},
                   {"max_drift", fan.max_drift()},
                   {"smallness", fan.smallness()},
                   {"max_condition", fan.max_condition()},
                   {"region_violations", fan.region_violations()}};
      } else {
        t = std::make_shared<const PhaseTable>(
            dollard_phase(*pot, grid_, cfg_.window, schedule(), cfg_.sign, std::min(1e-10, cfg_.tol.newton)));
        sidecar = json::object();
      }
      try {
        save_phase_table(*t, stem);
      } catch (const std::runtime_error& e) {
        throw IoError(e.what());
      }
      std::ofstream c(cert);
      c << sidecar.dump(2) << '\n';
      if (!c) throw IoError("cannot write " + cert.string());
      stage_info_["cache"][latscat::to_string(kind)] = "miss";
    }
    sidecars_[kind] = sidecar;
    stage_info_["tables"][latscat::to_string(kind)] = stem.filename().string();
    tables_[kind] = t;
    return t;
  }

  // -- extend: window extension of the lattice potential
  void extend() {
    const WindowFunction& w = window_function();
    certificate("window partition residual", w.partition_residual(), 1e-10);
    double kron = 0.0;
    const double norm = std::sqrt(2 * std::numbers::pi);
    for (int k = -10; k <= 10; ++k) kron = std::max(kron, std::abs(w.chi0(k) - (k == 0 ? norm : 0.0)));
    certificate("kernel Kronecker defect", kron, 1e-8);

    const PotentialSpec& spec = cfg_.potential;
    const LatticeBox src(cfg_.dim, extension_half_width(cfg_));
    const ExtendedPotential ext(sample_potential(spec, src), w);

    // reproduction at lattice sites |n|_inf <= 64 (stride 4 beyond d = 1)
    const int reach = std::min(64, static_cast<int>(ext.reliable_radius()));
    const int stride = cfg_.dim == 1 ? 1 : 4;
    double worst = 0.0;
    {
      std::vector<std::string> head;
      for (int j = 1; j <= cfg_.dim; ++j) head.push_back("n_" + std::to_string(j));
      head.insert(head.end(), {"lattice", "extended", "abs_error"});
      CsvWriter csv(out("extension_reproduction.csv"), head);
      const LatticeBox probe(cfg_.dim, reach / stride);
      for (Eigen::Index f = 0; f < probe.size(); ++f) {
        const Site n = probe.site(f) * stride;
        const double lv = lattice_value(spec, n), ev = ext.value(n.cast<double>());
        worst = std::max(worst, std::abs(ev - lv));
        for (int j = 0; j < cfg_.dim; ++j) csv << n[j];
        csv << lv << ev << std::abs(ev - lv);
        csv.end_row();
      }
    }
    certificate("extension reproduces lattice values", worst, 1e-8);

    // decay of d^alpha V~ over dyadic spheres
    std::vector<std::vector<int>> alphas;
    if (cfg_.dim == 1) alphas = {{0}, {1}, {2}};
    else {
      std::vector<int> a(cfg_.dim, 0);
      alphas.push_back(a);
      a[0] = 1;
      alphas.push_back(a);
      a[0] = 2;
      alphas.push_back(a);
      a[0] = 1;
      a[1] = 1;
      alphas.push_back(a);
    }
    std::vector<double> radii;
    const double cap = std::min(ext.reliable_radius(), 1024.0);
    for (double r = 16; r <= cap; r *= 2) radii.push_back(r);
    CsvWriter csv(out("extension_decay.csv"), {"alpha_order", "alpha", "radius", "sup_abs_derivative"});
    for (const auto& a : alphas) {
      int order = 0;
      std::string label;
      for (int x : a) order += x, label += std::to_string(x);
      if (zero()) {
        double sup = 0.0;
        for (double r : radii)
          for (int s : {-1, 1}) sup = std::max(sup, std::abs(ext.derivative(Vec::Constant(cfg_.dim, s * r / std::sqrt(double(cfg_.dim))), a)));
        invariant("zero potential: extension derivative alpha=" + label + " vanishes", sup, "== 0", status(sup == 0.0));
        continue;
      }
      if (radii.size() < 3) {
        invariant("decay slope alpha=" + label, NAN, "fit", kInsufficient);
        continue;
      }
      const DecayProbe dp = symbol_decay_probe(ext, a, radii, cfg_.dim == 1 ? 2 : 64);
      for (std::size_t i = 0; i < dp.radii.size(); ++i) {
        csv << order << std::stol(label) << dp.radii[i] << dp.sup_values[i];
        csv.end_row();
      }
      if (has_power_law(spec)) {
        slope_row("decay slope alpha=" + label, dp.fit, -mu() - order, 0.2);
      }
    }
  }

  // -- classical: escape, rates and variational bounds
  void classical() {
    const auto pot = potential();
    const int d = cfg_.dim;
    const EscapeConstants k = escape_constants(cfg_.window, *pot, d);
    stage_info_["delta"] = k.delta;
    stage_info_["r0"] = k.r0;
    const Region region{cfg_.window, k.r0, cfg_.sign};
    std::mt19937_64 rng(cfg_.seed);
    const auto starts = sample_region_starts(region, *pot, d, cfg_.classical_samples, rng);

    FlowParams p;
    p.potential = pot;
    p.step = cfg_.classical_step;
    p.order = cfg_.classical_order;
    p.drift_tolerance = cfg_.tol.energy_drift;
    p.final_time = cfg_.sign * cfg_.classical_time;

    int holds = 0;
    double drift = 0.0, identity = 0.0;
    {
      std::vector<std::string> head{"sample"};
      for (int j = 1; j <= d; ++j) head.push_back("x0_" + std::to_string(j));
      for (int j = 1; j <= d; ++j) head.push_back("xi0_" + std::to_string(j));
      head.insert(head.end(), {"min_margin", "bound_holds", "monotone", "identity_residual", "max_drift"});
      CsvWriter csv(out("classical_escape.csv"), head);
      for (std::size_t s = 0; s < starts.size(); ++s) {
        const EscapeReport rep = region_escape_probe(starts[s], region, p, k.delta);
        holds += rep.bound_holds;
        drift = std::max(drift, rep.max_drift);
        identity = std::max(identity, rep.identity_residual);
        csv << static_cast<long>(s);
        for (int j = 0; j < d; ++j) csv << starts[s].x[j];
        for (int j = 0; j < d; ++j) csv << starts[s].xi[j];
        csv << rep.min_margin << rep.bound_holds << rep.monotone << rep.identity_residual << rep.max_drift;
        csv.end_row();
      }
    }
    certificate("energy drift (escape samples)", drift, cfg_.tol.energy_drift);
    invariant("escape bound holds (samples)", holds, "== " + std::to_string(starts.size()),
              status(holds == static_cast<int>(starts.size())));
    invariant("escape identity residual", identity, "<= 1e-4", status(identity <= 1e-4));

    // time reversal on the first sample
    const Trajectory fwd = integrate_flow(starts.front(), p, {p.final_time});
    FlowParams back = p;
    back.final_time = -p.final_time;
    const Trajectory rev = integrate_flow(fwd.points.back(), back, {back.final_time});
    const double recover = std::max((rev.points.back().x - starts.front().x).norm(),
                                    (reduce_to_torus(rev.unwrapped_xi.back()) - starts.front().xi).norm());
    invariant("time-reversal recovery", recover, "<= 1e-9", status(recover <= 1e-9));

    // a reference trajectory launched radially on the middle energy
    const double energy = 0.5 * (cfg_.window.lower + cfg_.window.upper);
    auto radial_start = [&](double r) -> std::optional<PhasePoint> {
      Vec x = Vec::Zero(d), xi = Vec::Constant(d, -std::numbers::pi / 2);
      x[0] = cfg_.sign * r * (1 + 1e-12);
      const double c = energy - pot->value(x);
      if (std::abs(c) >= 1) return std::nullopt;
      xi[0] = -std::acos(c);
      return PhasePoint(x, xi);
    };
    std::vector<double> ts;
    const int per = 16;
    const int count = static_cast<int>(std::floor(per * std::log2(cfg_.rate_time)));
    for (int m = count; m >= 0; --m) ts.push_back(cfg_.sign * cfg_.rate_time * std::pow(2.0, -double(m) / per));
    const auto start = radial_start(k.r0);
    if (start) {
      FlowParams rp = p;
      rp.final_time = cfg_.sign * cfg_.rate_time;
      const Trajectory tr = integrate_flow(*start, rp, ts);
      std::ofstream f(out("classical_trajectory.csv"));
      write_trajectory_csv(f, tr);
      if (!f) throw IoError("cannot write classical_trajectory.csv");
      certificate("energy drift (reference trajectory)", tr.max_drift, cfg_.tol.energy_drift);
      if (has_power_law(cfg_.potential)) {
        const AsymptoticMomentum am = asymptotic_momentum(tr, mu());
        LogLogFit mf = am.momentum_fit, pf = am.position_fit;
        if (!am.converged) mf.sufficient = pf.sufficient = false;
        slope_row("momentum rate slope", mf, -mu(), 0.15);
        slope_row("position rate slope", pf, 1 - mu(), 0.15);
      }
    }

    // variational bound over R0, 2R0, 4R0
    if (has_power_law(cfg_.potential)) {
      std::vector<double> vt, rs, sups;
      for (int m = 1; m <= static_cast<int>(cfg_.classical_time); ++m) vt.push_back(cfg_.sign * double(m));
      CsvWriter csv(out("classical_variational.csv"),
                    {"radius", "sup_dxi_dy", "sup_dxi_deta", "sup_dxi_deta_dev", "sup_linear_growth"});
      for (double f : {1.0, 2.0, 4.0}) {
        const auto s = radial_start(f * k.r0);
        if (!s) continue;
        const VariationalEstimate est = variational_probe(*s, Region{cfg_.window, f * k.r0, cfg_.sign}, p, vt);
        csv << f * k.r0 << est.sup_dxi_dy << est.sup_dxi_deta << est.sup_dxi_deta_dev << est.sup_linear_growth;
        csv.end_row();
        rs.push_back(f * k.r0);
        sups.push_back(est.sup_dxi_dy);
      }
      LogLogFit fit = log_log_fit(rs, sups, 0, 1e300, 3, 2.0);
      if (k.r0 <= 1.0) fit.sufficient = false;  // R0 at its floor: <R> is not yet ~ R
      slope_row("variational R-scaling slope", fit, -1 - mu(), 0.3);
    }
  }

  // -- hj: phase tables and their diagnostics
  void hj() {
    bool any = false;
    for (ModifierKind kind : cfg_.modifiers) {
      if (kind == ModifierKind::none) continue;
      any = true;
      const std::string name = latscat::to_string(kind);
      const auto t = table(kind);
      const PhaseDiagnostics diag = phase_diagnostics(*t, *potential(), cfg_.fit_min, cfg_.final_time);
      {
        CsvWriter csv(out("phase_" + name + ".csv"), {"t", "hj_residual", "construction_gap", "phase_growth",
                                                      "gradient_growth", "hessian_deviation"});
        for (std::size_t i = 0; i < diag.times.size(); ++i) {
          csv << diag.times[i] << diag.hj_residual[i] << diag.construction_gap[i] << diag.phase_growth[i]
              << diag.gradient_growth[i] << diag.hessian_deviation[i];
          csv.end_row();
        }
      }
      if (kind == ModifierKind::hj) {
        const json& sc = sidecars_.at(kind);
        certificate("hj residual sup", diag.hj_residual_sup, cfg_.tol.hj_residual);
        certificate("Newton inversion residual", t->newton_residual, cfg_.tol.newton);
        certificate("image containment", t->containment ? 0.0 : 1.0, 0.0);
        certificate("fan energy drift", sc.at("max_drift").get<double>(), cfg_.tol.energy_drift);
        certificate("fan region violations", sc.at("region_violations").get<int>(), 0.0);
        stage_info_["r1"] = t->r1;
      }
      const double growth_sup =
          diag.phase_growth.empty() ? 0.0 : *std::max_element(diag.phase_growth.begin(), diag.phase_growth.end());
      if (zero()) {
        const double bound = rounding_bound();
        invariant(name + ": zero potential phase growth", growth_sup, "<= " + short_fmt(bound),
                  status(growth_sup <= bound));
      } else if (has_power_law(cfg_.potential) && mu() < 1) {
        slope_row(name + ": phase growth slope", diag.phase_fit, 1 - mu(), 0.15);
        if (kind == ModifierKind::hj) slope_row(name + ": Hessian deviation slope", diag.hessian_fit, -mu(), 0.3);
      }
    }
    if (!any) log_ << "  no tabulated modifier configured\n";
  }

  // -- evolve: unitarity of e^{-itH} and the dispersive profile
  void evolve() {
    const Hamiltonian& h = hamiltonian();
    const PropagatorConfig pc = propagator();
    const int margin = boundary_margin();
    LatticeField u = packet();
    const double n0 = u.norm();
    double prev = 0.0, defect = 0.0, bmass = boundary_mass(u, margin);
    {
      CsvWriter csv(out("evolve.csv"), {"t", "norm", "norm_defect", "boundary_mass"});
      csv << 0.0 << n0 << 0.0 << bmass;
      csv.end_row();
      for (double t : positive_times()) {
        u = full_propagate(u, cfg_.sign * (t - prev), h, pc);
        prev = t;
        const double dn = std::abs(u.norm() - n0), bm = boundary_mass(u, margin);
        defect = std::max(defect, dn);
        bmass = std::max(bmass, bm);
        csv << cfg_.sign * t << u.norm() << dn << bm;
        csv.end_row();
      }
    }
    stage_info_["boundary_margin"] = margin;
    certificate("unitarity drift", defect, 1e-9);
    certificate("boundary mass (evolve)", bmass, cfg_.tol.boundary_mass);

    std::vector<double> times;
    for (double t : positive_times())
      if (t >= cfg_.dispersive_from * (1 - 1e-12)) times.push_back(t);
    const auto support = packet_support(grid_, cfg_.packet);
    for (ModifierKind kind : cfg_.modifiers) {
      const std::string name = latscat::to_string(kind);
      if (times.size() < 2) {
        invariant(name + ": dispersive sup-norm slope", NAN, "fit", kInsufficient);
        continue;
      }
      const DispersiveProfile dp = dispersive_profile(packet(), support, modifier(kind), cfg_.sign, times,
                                                      cfg_.region_margin, cfg_.dispersive_from, cfg_.dispersive_from);
      {
        CsvWriter csv(out("dispersive_" + name + ".csv"),
                      {"t", "sup_norm", "outside_mass", "region_size", "size_ratio"});
        for (std::size_t i = 0; i < dp.times.size(); ++i) {
          csv << dp.times[i] << dp.sup_norm[i] << dp.outside_mass[i] << dp.region_size[i] << dp.size_ratio[i];
          csv.end_row();
        }
      }
      slope_row(name + ": dispersive sup-norm slope", dp.sup_fit, -0.5 * cfg_.dim, 0.1);
      const double outside = *std::max_element(dp.outside_mass.begin(), dp.outside_mass.end());
      invariant(name + ": mass outside G_t", outside, "<= 1e-6", status(outside <= 1e-6));
      double worst = 1.0;
      for (double r : dp.size_ratio)
        if (std::abs(std::log(r)) > std::abs(std::log(worst))) worst = r;
      invariant(name + ": |G_t| / (c1 t^d)", worst, "within factor 2", status(worst >= 0.5 && worst <= 2.0));
    }
  }

  // -- cook: the Cook integrand g(t)
  CookDiagnostics cook_for(ModifierKind kind, const LatticeField& w) {
    return cook_series(w, hamiltonian(), modifier(kind), cfg_.sign, positive_times(), cfg_.fit_min, cfg_.final_time);
  }

  void cook_rows(const std::string& name, ModifierKind kind, const CookDiagnostics& c) {
    if (zero()) {
      const double sup = *std::max_element(c.g.begin(), c.g.end());
      invariant(name + ": zero potential g", sup, "== 0", status(sup == 0.0));
      return;
    }
    if (!has_power_law(cfg_.potential)) return;
    if (kind == ModifierKind::none) {
      if (mu() <= 1) slope_row(name + ": cook slope", c.fit, -mu(), 0.15);
      else slope_below(name + ": cook slope", c.fit, -1.0);
    } else if (kind == ModifierKind::hj) {
      slope_below(name + ": cook slope", c.fit, -1 - mu() + 0.15);
    } else {
      slope_below(name + ": cook slope", c.fit, -1.0);
    }
  }

  void cook() {
    const LatticeField w = windowed();
    for (ModifierKind kind : cfg_.modifiers) {
      const std::string name = latscat::to_string(kind);
      const CookDiagnostics c = cook_for(kind, w);
      {
        CsvWriter csv(out("cook_" + name + ".csv"), {"t", "g"});
        for (std::size_t i = 0; i < c.times.size(); ++i) {
          csv << c.times[i] << c.g[i];
          csv.end_row();
        }
      }
      cook_rows(name, kind, c);
    }
  }

  // -- waveop: approximants, Cauchy increments, intertwining and gauge
  void waveop() {
    const std::vector<double> chain = doubling_chain();
    WaveOpConfig wc;
    wc.sign = cfg_.sign;
    wc.window = cfg_.window;
    wc.sharp_window = cfg_.sharp_window;
    wc.times = chain;
    wc.propagator = propagator();
    wc.boundary_margin = boundary_margin();
    wc.jobs = cfg_.jobs;
    stage_info_["times"] = chain;
    stage_info_["boundary_margin"] = wc.boundary_margin;

    const Hamiltonian& h = hamiltonian();
    std::map<ModifierKind, double> last_increment;
    std::optional<WaveOpApproximant> reference;
    ModifierKind reference_kind = cfg_.modifiers.front();
    for (ModifierKind k : cfg_.modifiers)
      if (k == ModifierKind::hj) reference_kind = k;

    for (ModifierKind kind : cfg_.modifiers) {
      const std::string name = latscat::to_string(kind);
      WaveOpApproximant app = approximant(packet(), h, modifier(kind), wc);
      CookDiagnostics c = cook_for(kind, app.windowed);
      attach_increments(c, app, 1e-8);
      {
        CsvWriter csv(out("waveop_" + name + ".csv"), {"T", "norm_defect", "boundary_mass", "increment",
                                                       "cook_integral", "consistent"});
        for (std::size_t m = 0; m < app.times.size(); ++m) {
          csv << app.times[m] << app.norm_defect[m] << app.boundary[m];
          const auto inc = std::find_if(c.increments.begin(), c.increments.end(),
                                        [&](const CauchyIncrement& x) { return std::abs(x.t - chain[m]) < 1e-9; });
          if (inc != c.increments.end()) csv << inc->value << inc->cook_integral << inc->consistent;
          else csv << NAN << NAN << true;
          csv.end_row();
        }
      }
      certificate(name + ": isometry", app.isometry_sup(), cfg_.tol.isometry);
      certificate(name + ": boundary mass", app.boundary_sup(), cfg_.tol.boundary_mass);
      const bool consistent = std::all_of(c.increments.begin(), c.increments.end(),
                                          [](const CauchyIncrement& x) { return x.consistent; });
      invariant(name + ": increments within Cook bound", consistent ? 1.0 : 0.0, "all", status(consistent));
      increment_rows(name, kind, c.increments);
      if (!c.increments.empty()) last_increment[kind] = c.increments.back().value;
      if (kind == reference_kind) reference = std::move(app);
    }

    if (cfg_.intertwining_shift != 0.0 && reference) intertwining(*reference, reference_kind, wc);

    const bool both = last_increment.count(ModifierKind::hj) && last_increment.count(ModifierKind::dollard);
    if (both) gauge(chain, last_increment.at(ModifierKind::hj), last_increment.at(ModifierKind::dollard));
  }

  void increment_rows(const std::string& name, ModifierKind kind, const std::vector<CauchyIncrement>& inc) {
    if (inc.size() < 2) {
      invariant(name + ": Cauchy ratio", NAN, "two increments", kInsufficient);
      return;
    }
    if (zero()) {
      double sup = 0;
      for (const auto& x : inc) sup = std::max(sup, x.value);
      const double bound = rounding_bound();
      invariant(name + ": zero potential increments", sup, "<= " + short_fmt(bound), status(sup <= bound));
      return;
    }
    const bool expect_divergence = kind == ModifierKind::none && has_power_law(cfg_.potential) && mu() <= 1;
    for (std::size_t i = 0; i + 1 < inc.size(); ++i) {
      const double r = inc[i + 1].value / inc[i].value;
      const std::string label = name + ": Cauchy ratio T=" + short_fmt(inc[i + 1].t) + "/" + short_fmt(inc[i].t);
      if (expect_divergence) invariant(label, r, "> 0.5 (no convergence)", status(r > 0.5));
      else invariant(label, r, "<= 0.6", status(r <= 0.6));
    }
    if (!expect_divergence)
      invariant(name + ": last Cauchy increment", inc.back().value, "<= " + short_fmt(cfg_.tol.cauchy),
                status(inc.back().value <= cfg_.tol.cauchy));
  }

  void intertwining(const WaveOpApproximant& app, ModifierKind kind, const WaveOpConfig& wc) {
    const double s = cfg_.intertwining_shift;
    const WaveOpApproximant shifted = approximant(free_propagate(packet(), s), hamiltonian(), modifier(kind), wc);
    const std::vector<double> d = intertwining_defect(app, shifted, hamiltonian(), s, propagator());
    {
      CsvWriter csv(out("intertwining.csv"), {"T", "defect", "boundary_mass"});
      for (std::size_t m = 0; m < d.size(); ++m) {
        csv << app.times[m] << d[m] << std::max(app.boundary[m], shifted.boundary[m]);
        csv.end_row();
      }
    }
    certificate("intertwining: boundary mass", shifted.boundary_sup(), cfg_.tol.boundary_mass);
    if (zero()) {
      const double sup = *std::max_element(d.begin(), d.end());
      invariant("intertwining: zero potential defect", sup, "<= 1e-10", status(sup <= 1e-10));
      return;
    }
    if (d.size() < 3) {
      invariant("intertwining: defect ratio", NAN, "T and T/4", kInsufficient);
      return;
    }
    const double ratio = d.back() / d[d.size() - 3];
    invariant("intertwining: defect ratio T/(T/4)", ratio, "<= 0.5", status(ratio <= 0.5));
    invariant("intertwining: defect at T", d.back(), "<= 5e-2", status(d.back() <= 5e-2));
  }

  void gauge(const std::vector<double>& chain, double last_hj, double last_dollard) {
    try {
      const GaugeReport g =
          modifier_gauge(modifier(ModifierKind::hj), modifier(ModifierKind::dollard), windowed(),
                         packet_support(grid_, cfg_.packet), cfg_.sign, chain, last_hj, last_dollard, cfg_.tol.cauchy);
      CsvWriter csv(out("gauge.csv"), {"T", "phase_increment", "gauge_increment", "residual"});
      for (std::size_t m = 0; m < g.times.size(); ++m) {
        csv << g.times[m];
        csv << (m < g.phase_increment.size() ? g.phase_increment[m] : NAN);
        csv << (m < g.gauge_increment.size() ? g.gauge_increment[m] : NAN);
        csv << g.residual[m];
        csv.end_row();
      }
      if (g.phase_increment.size() < 2) {
        invariant("gauge: phase increments decreasing", NAN, "two increments", kInsufficient);
      } else {
        invariant("gauge: phase increments decreasing", g.phase_increment.back(), "decreasing in T",
                  status(g.phase_decreasing));
      }
    } catch (const WaveOperatorError& e) {
      log_ << "  gauge skipped: " << e.what() << '\n';
      invariant("gauge: both modifiers converged", std::max(last_hj, last_dollard),
                "<= " + short_fmt(cfg_.tol.cauchy), "fail");
    }
  }

  const ExperimentConfig& cfg_;
  fs::path dir_;
  std::ostream& log_;
  LatticeBox box_;
  MomentumGrid grid_;
  RunManifest manifest_;
  std::string stage_;
  json stage_info_;

  std::shared_ptr<const ContinuumPotential> pot_;
  std::optional<WindowFunction> wf_;
  std::optional<Hamiltonian> h_;
  std::optional<LatticeField> phi_;
  std::optional<TimeSchedule> schedule_;
  std::map<ModifierKind, std::shared_ptr<const PhaseTable>> tables_;
  std::map<ModifierKind, json> sidecars_;
};

}  // namespace

int run_experiment(const ExperimentConfig& cfg, const std::string& stage, std::ostream& log) {
  const auto& names = stage_names();
  if (std::find(names.begin(), names.end(), stage) == names.end()) {
    log << "unknown stage \"" << stage << "\"\n";
    return kExitConfig;
  }
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    log << "config error: " << e.what() << '\n';
    return kExitConfig;
  }
  const fs::path dir = cfg.output_dir / cfg.name;
  try {
    fs::create_directories(dir);
    RunLock lock(dir);
    Runner runner(cfg, dir, log);
    runner.load_manifest();
    if (stage == "all") {
      for (const auto& s : names)
        if (s != "all") runner.run(s);
    } else {
      runner.run(stage);
    }
    runner.save_manifest();
    return runner.manifest().certificates_pass() ? kExitOk : kExitCertificate;
  } catch (const ConfigError& e) {
    log << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const IoError& e) {
    log << "i/o error: " << e.what() << '\n';
    return kExitIo;
  } catch (const fs::filesystem_error& e) {
    log << "i/o error: " << e.what() << '\n';
    return kExitIo;
  }
}

// ---------------------------------------------------------------------------
// Report

int report_run(const fs::path& run_dir, const fs::path& json_out, std::ostream& out, std::ostream& err) {
  const fs::path meta = run_dir / "meta.json";
  RunManifest m;
  try {
    std::ifstream in(meta);
    if (!in) {
      err << "missing manifest " << meta.string() << '\n';
      return kExitIo;
    }
    m = RunManifest::from_json(json::parse(in));
  } catch (const std::exception& e) {
    err << "corrupt manifest " << meta.string() << ": " << e.what() << '\n';
    return kExitIo;
  }
  std::error_code ec;
  const fs::path a = fs::weakly_canonical(run_dir, ec), b = fs::weakly_canonical(json_out, ec);
  if (std::mismatch(a.begin(), a.end(), b.begin(), b.end()).first == a.end()) {
    err << "report JSON must be written outside the run directory\n";
    return kExitConfig;
  }

  auto pad = [](std::string s, std::size_t w) {
    if (s.size() < w) s.append(w - s.size(), ' ');
    return s;
  };
  out << "invariants (" << m.config.value("name", "") << ")\n";
  out << pad("stage", 10) << pad("name", 52) << pad("value", 14) << pad("target", 26) << "status\n";
  json inv = json::array(), slopes = json::array(), certs = json::array();
  for (const auto& r : m.invariants) {
    out << pad(r.stage, 10) << pad(r.name, 52) << pad(short_fmt(r.value), 14) << pad(r.target, 26) << r.status
        << '\n';
    json row{{"stage", r.stage}, {"name", r.name}, {"value", r.value}, {"target", r.target}, {"status", r.status}};
    if (r.name.find("slope") != std::string::npos) slopes.push_back(row);
    inv.push_back(std::move(row));
  }
  out << "\nfitted slopes\n";
  for (const auto& s : slopes)
    out << pad(s["name"].get<std::string>(), 52) << pad(short_fmt(s["value"].get<double>()), 14)
        << s["status"].get<std::string>() << '\n';
  out << "\ncertificates\n";
  for (const auto& c : m.certificates) {
    out << pad(c.stage, 10) << pad(c.name, 52) << pad(short_fmt(c.value), 14) << pad("<= " + short_fmt(c.threshold), 26)
        << (c.pass ? "pass" : "fail") << '\n';
    certs.push_back({{"stage", c.stage}, {"name", c.name}, {"value", c.value}, {"threshold", c.threshold},
                     {"pass", c.pass}});
  }
  json report{{"run", run_dir.string()},       {"config", m.config},  {"invariants", inv},
              {"slopes", slopes},              {"certificates", certs}, {"certificates_pass", m.certificates_pass()}};
  std::ofstream o(json_out);
  o << report.dump(2) << '\n';
  if (!o) {
    err << "cannot write " << json_out.string() << '\n';
    return kExitIo;
  }
  return kExitOk;
}

}  // namespace latscat
