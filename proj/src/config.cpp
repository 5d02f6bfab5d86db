#include "ycontrol/config.hpp"

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "ycontrol/errors.hpp"

namespace ycontrol {
namespace {

const std::map<std::string, ExperimentKind>& experiment_names() {
  static const std::map<std::string, ExperimentKind> names = {
      {"linear-check", ExperimentKind::kLinearCheck},
      {"integrand-sweep", ExperimentKind::kIntegrandSweep},
      {"arm-reach", ExperimentKind::kArmReach},
      {"scaling-study", ExperimentKind::kScalingStudy},
      {"alpha-sweep", ExperimentKind::kAlphaSweep},
      {"pulse-control", ExperimentKind::kPulseControl},
  };
  return names;
}

struct UnitEntry {
  Dimension dim;
  double factor;
};

const std::map<std::string, UnitEntry>& units() {
  static const std::map<std::string, UnitEntry> table = {
      {"s", {Dimension::kTime, 1.0}},
      {"ms", {Dimension::kTime, 1e-3}},
      {"us", {Dimension::kTime, 1e-6}},
      {"m", {Dimension::kLength, 1.0}},
      {"cm", {Dimension::kLength, 1e-2}},
      {"mm", {Dimension::kLength, 1e-3}},
      {"rad", {Dimension::kAngle, 1.0}},
      {"deg", {Dimension::kAngle, M_PI / 180.0}},
      {"1/s", {Dimension::kRate, 1.0}},
      {"Hz", {Dimension::kRate, 1.0}},
      {"kg", {Dimension::kMass, 1.0}},
      {"g", {Dimension::kMass, 1e-3}},
      {"kg m^2", {Dimension::kInertia, 1.0}},
      {"kg cm^2", {Dimension::kInertia, 1e-4}},
  };
  return table;
}

const char* dimension_name(Dimension dim) {
  switch (dim) {
    case Dimension::kNone: return "dimensionless";
    case Dimension::kTime: return "time";
    case Dimension::kLength: return "length";
    case Dimension::kAngle: return "angle";
    case Dimension::kRate: return "rate";
    case Dimension::kMass: return "mass";
    case Dimension::kInertia: return "inertia";
  }
  return "?";
}

// Reads one block, remembering which keys were consumed so leftovers can be
// reported as unknown.
class Block {
 public:
  Block(const YAML::Node& node, std::string name) : node_(node), name_(std::move(name)) {
    if (node_ && !node_.IsMap())
      throw ConfigurationError("block '" + name_ + "' must be a mapping");
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return node_ && node_[key];
  }

  std::string text(const std::string& key) {
    const YAML::Node v = node_[key];
    if (!v.IsScalar()) throw ConfigurationError(where(key) + " must be a scalar");
    return v.Scalar();
  }

  void read(const std::string& key, double& out, Dimension dim) {
    if (!has(key)) return;
    try {
      out = parse_quantity(text(key), dim);
    } catch (const ConfigurationError& e) {
      throw ConfigurationError(where(key) + ": " + e.what());
    }
  }

  void read(const std::string& key, int& out) {
    if (!has(key)) return;
    const double v = parse_quantity(text(key), Dimension::kNone);
    if (v != std::floor(v) || std::abs(v) > 2e9)
      throw ConfigurationError(where(key) + " must be an integer");
    out = static_cast<int>(v);
  }

  void read(const std::string& key, std::uint64_t& out) {
    if (!has(key)) return;
    const std::string s = text(key);
    std::size_t pos = 0;
    try {
      out = std::stoull(s, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != s.size() || s.empty() || s[0] == '-')
      throw ConfigurationError(where(key) + " must be a non-negative integer");
  }

  void read(const std::string& key, std::string& out) {
    if (has(key)) out = text(key);
  }

  template <typename T>
  void choose(const std::string& key, T& out, const std::map<std::string, T>& options) {
    if (!has(key)) return;
    const std::string s = text(key);
    auto it = options.find(s);
    if (it == options.end()) {
      std::string list;
      for (const auto& [k, v] : options) list += (list.empty() ? "" : ", ") + k;
      throw ConfigurationError(where(key) + ": '" + s + "' is not one of " + list);
    }
    out = it->second;
  }

  std::vector<double> list(const std::string& key, Dimension dim) {
    std::vector<double> out;
    if (!has(key)) return out;
    const YAML::Node v = node_[key];
    if (!v.IsSequence()) throw ConfigurationError(where(key) + " must be a list");
    for (const auto& item : v) {
      if (!item.IsScalar()) throw ConfigurationError(where(key) + " entries must be scalars");
      try {
        out.push_back(parse_quantity(item.Scalar(), dim));
      } catch (const ConfigurationError& e) {
        throw ConfigurationError(where(key) + ": " + e.what());
      }
    }
    return out;
  }

  void finish() const {
    if (!node_) return;
    for (const auto& kv : node_) {
      const std::string key = kv.first.as<std::string>();
      if (!seen_.count(key)) throw ConfigurationError("unknown key '" + where(key) + "'");
    }
  }

  std::string where(const std::string& key) const {
    return name_.empty() ? key : name_ + "." + key;
  }

 private:
  YAML::Node node_;
  std::string name_;
  std::set<std::string> seen_;
};

void require(bool ok, const std::string& message) {
  if (!ok) throw ConfigurationError(message);
}

// Defaults that depend on the experiment, applied before the file is read.
void apply_defaults(ExperimentConfig& c) {
  switch (c.experiment) {
    case ExperimentKind::kLinearCheck:
      c.system = SystemKind::kLinear;
      c.noise.alpha = 0.25;
      c.noise.m_y = 10.0;
      c.horizon = {1.0, 0.5, 1e-3, 0.05};
      c.paths = 10000;
      c.record_stride = 1;
      break;
    case ExperimentKind::kIntegrandSweep:
      c.sweep.alpha = {0.25, 0.8};
      c.noise.m_y = 10.0;
      break;
    case ExperimentKind::kScalingStudy:
      c.system = SystemKind::kLinear;
      c.linear = {-1.0, 1.0, 0.0, 1000.0};
      c.noise.alpha = 0.25;
      c.horizon = {0.5, 0.5, 5e-5, 0.01};
      c.sweep.m_y = {2500, 5000, 10000, 20000};
      c.paths = 4000;
      c.tolerance = 1e-6;
      break;
    case ExperimentKind::kArmReach:
    case ExperimentKind::kAlphaSweep:
    case ExperimentKind::kPulseControl:
      c.system = SystemKind::kArm;
      c.noise.alpha = 0.25;
      c.noise.m_y = 20000.0;
      c.horizon = {0.65, 0.01, 1e-4, 5e-3};
      c.tolerance = 1e-5;  // 0.01 mm
      c.paths = 2000;
      if (c.experiment == ExperimentKind::kAlphaSweep) {
        c.sweep.alpha = {0.25, 0.45, 0.8};
        c.optimizer.schedule = ScheduleMode::kAuto;
      }
      if (c.experiment == ExperimentKind::kPulseControl) {
        c.sweep.ensemble_sizes = {50, 100, 200, 400};
        c.paths = 400;
      }
      break;
  }
}

void check_preconditions(const ExperimentConfig& c) {
  require(c.threads >= 1, "threads must be >= 1");
  require(c.paths >= 2, "ensemble.paths must be >= 2");
  require(c.record_stride >= 1, "ensemble.record_stride must be >= 1");
  require(c.tolerance > 0.0, "target.tolerance must be positive");
  if (c.experiment != ExperimentKind::kIntegrandSweep) {
    try {
      c.horizon.validate();
      c.horizon.total_steps();
    } catch (const Error& e) {
      throw ConfigurationError(std::string("horizon: ") + e.what());
    }
  }
  require(c.noise.alpha > 0.0 && c.noise.alpha <= 1.0, "noise.alpha must be in (0, 1]");
  require(c.noise.m_y > 0.0, "noise.m_y must be positive");
  require(c.kappa >= 0.0, "noise.kappa must be >= 0");

  switch (c.experiment) {
    case ExperimentKind::kLinearCheck:
      require(c.system == SystemKind::kLinear, "linear-check needs system.kind = linear");
      require(c.check.instances >= 1 && c.check.probes >= 1,
              "check.instances and check.probes must be >= 1");
      require(c.check.q_min != 0.0 || c.check.q_max != 0.0, "check q range is degenerate");
      break;
    case ExperimentKind::kIntegrandSweep:
      require(!c.sweep.alpha.empty(), "sweep.alpha must list at least one value");
      for (double a : c.sweep.alpha)
        require(a > 0.0 && a <= 1.0, "sweep.alpha values must be in (0, 1]");
      require(c.sweep.points >= 3, "sweep.points must be >= 3");
      break;
    case ExperimentKind::kScalingStudy: {
      const auto& m = c.sweep.m_y;
      require(m.size() >= 4, "scaling-study needs at least 4 sweep.m_y values");
      for (double v : m) require(v > 0.0, "sweep.m_y values must be positive");
      const auto [lo, hi] = std::minmax_element(m.begin(), m.end());
      // The 2.5k..20k acceptance set spans a factor of 8, just short of a
      // decade, so that is the floor enforced here.
      require(*hi / *lo >= 8.0 - 1e-9, "sweep.m_y must span at least a factor of 8");
      break;
    }
    case ExperimentKind::kArmReach:
      require(c.system == SystemKind::kArm, "arm-reach needs system.kind = arm");
      break;
    case ExperimentKind::kAlphaSweep:
      require(c.system == SystemKind::kArm, "alpha-sweep needs system.kind = arm");
      require(!c.sweep.alpha.empty(), "sweep.alpha must list at least one value");
      for (double a : c.sweep.alpha)
        require(a > 0.0 && a <= 1.0, "sweep.alpha values must be in (0, 1]");
      break;
    case ExperimentKind::kPulseControl:
      require(!c.sweep.ensemble_sizes.empty(), "sweep.ensemble_sizes must not be empty");
      for (int n : c.sweep.ensemble_sizes)
        require(n >= 1, "sweep.ensemble_sizes values must be >= 1");
      require(c.pulse.bin_width > 0.0 && c.pulse.baseline_rate >= 0.0,
              "pulse.bin_width must be positive and pulse.baseline_rate >= 0");
      break;
  }
  if (c.system == SystemKind::kLinear) {
    require(c.linear.q != 0.0, "system.q must be nonzero");
  } else {
    try {
      c.arm.params.validate();
    } catch (const Error& e) {
      throw ConfigurationError(std::string("system: ") + e.what());
    }
    require(c.arm.length_unit > 0.0, "system.length_unit must be positive");
  }
}

}  // namespace

std::string to_string(ExperimentKind kind) {
  for (const auto& [name, k] : experiment_names())
    if (k == kind) return name;
  return "?";
}

ExperimentKind parse_experiment(const std::string& name) {
  auto it = experiment_names().find(name);
  if (it == experiment_names().end())
    throw ConfigurationError("unknown experiment '" + name + "'");
  return it->second;
}

double parse_quantity(const std::string& text, Dimension dim) {
  std::size_t pos = 0;
  double value = 0.0;
  try {
    value = std::stod(text, &pos);
  } catch (const std::exception&) {
    throw ConfigurationError("'" + text + "' is not a number");
  }
  if (!std::isfinite(value)) throw ConfigurationError("'" + text + "' is not finite");
  std::string unit = text.substr(pos);
  unit.erase(0, unit.find_first_not_of(" \t"));
  unit.erase(unit.find_last_not_of(" \t") + 1);
  if (unit.empty()) {
    if (dim == Dimension::kNone) return value;
    throw ConfigurationError("'" + text + "' needs a " + dimension_name(dim) + " unit");
  }
  auto it = units().find(unit);
  if (it == units().end()) throw ConfigurationError("unknown unit '" + unit + "'");
  if (it->second.dim != dim)
    throw ConfigurationError("'" + text + "' is not a " + std::string(dimension_name(dim)));
  return value * it->second.factor;
}

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

ExperimentConfig parse_config(const std::string& text,
                              std::optional<ExperimentKind> expected) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::Exception& e) {
    throw ConfigurationError(std::string("malformed config: ") + e.what());
  }
  if (!root.IsMap()) throw ConfigurationError("config must be a mapping of keys and blocks");

  ExperimentConfig c;
  c.source_text = text;
  c.hash = fnv1a64(text);

  Block top(root, "");
  if (top.has("experiment")) {
    c.experiment = parse_experiment(top.text("experiment"));
    if (expected && *expected != c.experiment)
      throw ConfigurationError("config is for '" + to_string(c.experiment) + "', not '" +
                               to_string(*expected) + "'");
  } else if (expected) {
    c.experiment = *expected;
  } else {
    throw ConfigurationError("config needs an 'experiment' key");
  }
  apply_defaults(c);
  top.read("seed", c.seed);
  top.read("threads", c.threads);
  top.read("output", c.output);

  auto sub = [&](const std::string& name) {
    top.has(name);
    return Block(root[name], name);
  };

  {
    Block b = sub("system");
    b.choose<SystemKind>("kind", c.system,
                         {{"linear", SystemKind::kLinear}, {"arm", SystemKind::kArm}});
    b.read("p", c.linear.p, Dimension::kRate);
    b.read("q", c.linear.q, Dimension::kNone);
    b.read("x0", c.linear.x0, Dimension::kNone);
    b.read("z0", c.linear.z0, Dimension::kNone);
    auto& a = c.arm.params;
    b.read("m1", a.m1, Dimension::kMass);
    b.read("m2", a.m2, Dimension::kMass);
    b.read("l1", a.l1, Dimension::kLength);
    b.read("l2", a.l2, Dimension::kLength);
    b.read("r1", a.r1, Dimension::kLength);
    b.read("r2", a.r2, Dimension::kLength);
    b.read("I1", a.I1, Dimension::kInertia);
    b.read("I2", a.I2, Dimension::kInertia);
    b.read("gamma0", a.gamma0, Dimension::kNone);
    b.read("length_unit", c.arm.length_unit, Dimension::kLength);
    b.read("max_speed", c.arm.max_speed, Dimension::kRate);
    b.read("target_theta1", c.arm.target_theta[0], Dimension::kAngle);
    b.read("target_theta2", c.arm.target_theta[1], Dimension::kAngle);
    b.choose<ArmObjective>("objective", c.arm.objective,
                           {{"hand", ArmObjective::kHand}, {"angles", ArmObjective::kAngles}});
    b.choose<CoriolisConvention>(
        "coriolis", a.coriolis,
        {{"energy-consistent", CoriolisConvention::kEnergyConsistent},
         {"printed", CoriolisConvention::kPrinted}});
    b.finish();
  }
  {
    Block b = sub("noise");
    b.read("alpha", c.noise.alpha, Dimension::kNone);
    b.read("kappa", c.kappa, Dimension::kNone);
    b.read("m_y", c.noise.m_y, Dimension::kNone);
    b.finish();
  }
  {
    Block b = sub("horizon");
    b.read("reach_time", c.horizon.reach_time, Dimension::kTime);
    b.read("hold_time", c.horizon.hold_time, Dimension::kTime);
    b.read("dt_integrate", c.horizon.dt_integrate, Dimension::kTime);
    b.read("dt_control", c.horizon.dt_control, Dimension::kTime);
    b.finish();
  }
  {
    Block b = sub("target");
    // Objective units: length for the hand, angle for joint angles, plain
    // for the linear plant.
    if (b.has("tolerance")) {
      const std::string s = b.text("tolerance");
      Dimension dim = Dimension::kNone;
      if (c.system == SystemKind::kArm)
        dim = c.arm.objective == ArmObjective::kHand ? Dimension::kLength : Dimension::kAngle;
      c.tolerance = parse_quantity(s, dim);
    }
    b.finish();
  }
  {
    Block b = sub("optimizer");
    b.choose<ScheduleMode>("schedule", c.optimizer.schedule,
                           {{"lifted", ScheduleMode::kLifted},
                            {"direct", ScheduleMode::kDirect},
                            {"optimized", ScheduleMode::kOptimized},
                            {"auto", ScheduleMode::kAuto}});
    b.read("max_iters", c.optimizer.max_iters);
    b.read("restarts", c.optimizer.restarts);
    b.read("penalty_weight", c.optimizer.penalty_weight, Dimension::kNone);
    b.read("max_penalty", c.optimizer.max_penalty, Dimension::kNone);
    b.read("dt_integrate", c.optimizer.dt_integrate, Dimension::kTime);
    b.choose<ReachRegularization>(
        "regularization", c.optimizer.regularization,
        {{"minimum-effort", ReachRegularization::kMinimumEffort},
         {"equal-contribution", ReachRegularization::kEqualContribution}});
    b.finish();
    require(c.optimizer.max_iters >= 1 && c.optimizer.restarts >= 1,
            "optimizer.max_iters and optimizer.restarts must be >= 1");
  }
  {
    Block b = sub("ensemble");
    b.read("paths", c.paths);
    b.read("record_stride", c.record_stride);
    b.choose<EscapePolicy>("escape", c.escape,
                           {{"abort", EscapePolicy::kAbort},
                            {"drop", EscapePolicy::kDropAndFlag}});
    b.finish();
  }
  {
    Block b = sub("check");
    b.read("instances", c.check.instances);
    b.read("probes", c.check.probes);
    b.read("p_min", c.check.p_min, Dimension::kRate);
    b.read("p_max", c.check.p_max, Dimension::kRate);
    b.read("q_min", c.check.q_min, Dimension::kNone);
    b.read("q_max", c.check.q_max, Dimension::kNone);
    b.read("x0_min", c.check.x0_min, Dimension::kNone);
    b.read("x0_max", c.check.x0_max, Dimension::kNone);
    b.read("z0_min", c.check.z0_min, Dimension::kNone);
    b.read("z0_max", c.check.z0_max, Dimension::kNone);
    b.read("z_limit", c.check.z_limit, Dimension::kNone);
    b.finish();
  }
  {
    Block b = sub("sweep");
    if (b.has("m_y")) c.sweep.m_y = b.list("m_y", Dimension::kNone);
    if (b.has("alpha")) c.sweep.alpha = b.list("alpha", Dimension::kNone);
    if (b.has("ensemble_sizes")) {
      c.sweep.ensemble_sizes.clear();
      for (double v : b.list("ensemble_sizes", Dimension::kNone)) {
        require(v == std::floor(v) && v > 0 && v < 1e8, "sweep.ensemble_sizes must be integers");
        c.sweep.ensemble_sizes.push_back(static_cast<int>(v));
      }
    }
    b.read("g", c.sweep.g, Dimension::kNone);
    b.read("f", c.sweep.f, Dimension::kNone);
    b.read("points", c.sweep.points);
    b.read("slope_tolerance", c.sweep.slope_tolerance, Dimension::kNone);
    b.finish();
  }
  {
    Block b = sub("pulse");
    b.read("n_exc", c.pulse.n_exc);
    b.read("n_inh", c.pulse.n_inh);
    b.read("baseline_rate", c.pulse.baseline_rate, Dimension::kRate);
    b.read("bin_width", c.pulse.bin_width, Dimension::kTime);
    b.finish();
  }
  top.finish();

  finalize_config(c);
  return c;
}

void finalize_config(ExperimentConfig& c) {
  if (c.paper_scale && c.system == SystemKind::kArm) c.horizon.dt_integrate = 1e-5;
  const int channels = c.system == SystemKind::kArm ? 2 : 1;
  c.noise.kappa = VectorXd::Constant(channels, c.kappa);
  check_preconditions(c);
}

ExperimentConfig load_config(const std::string& path,
                             std::optional<ExperimentKind> expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigurationError("cannot read config '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), expected);
}

}  // namespace ycontrol
