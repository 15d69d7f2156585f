#pragma once

#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "stochnull/carleman.hpp"
#include "stochnull/coefficients.hpp"
#include "stochnull/control.hpp"
#include "stochnull/errors.hpp"
#include "stochnull/experiments.hpp"
#include "stochnull/expression.hpp"
#include "stochnull/grid.hpp"
#include "stochnull/scenario.hpp"
#include "stochnull/spde.hpp"

namespace stochnull {

struct ProblemConfig {
  double L = 1.0;
  int N = 32;
  int M = 8;
  double T = 1.0;
  Interval g0{0.25, 0.75};
  Interval g1{0.4, 0.6};
  std::string a = "1", a1 = "0", a2 = "0", b1 = "0", b2 = "0", b = "0";
  DiffusionScheme scheme = DiffusionScheme::kSdirk2;
  int max_steps = ScenarioTree::kDefaultMaxSteps;
  std::string y0 = "sin(pi*x)";
  std::string yT = "sin(pi*x)";
  double terminal_noise = 0.5;  // yT(leaf) = yT(x)·(1 + terminal_noise·W(T))
};

struct CarlemanConfig {
  CarlemanDirection direction = CarlemanDirection::kBackward;
  double mu = 2.0;
  double c0 = 1.0;
  int exclude = 1;
  int samples = 50;
  std::vector<double> lambda_multiples{1, 2, 4};
  std::vector<double> mu_values{8, 16, 32, 64};
};

struct HumSectionConfig {
  bool epsilon_from_mesh = true;  // "h2"
  double epsilon = 1e-2;
  double cg_tol = 1e-12;
  int cg_max_iter = 2000;
};

struct ExperimentConfig {
  unsigned seed = 1;
  int power_iters = 30;
  ObservabilityDirection observability = ObservabilityDirection::kForward15;
  std::vector<double> horizons{0.25, 0.5, 1, 2};
  double steps_per_unit_time = 128;
  ScalingQuantity sweep_quantity = ScalingQuantity::kObservability;
  std::vector<double> epsilons{1e-1, 1e-2, 1e-3, 1e-4};
  HumDirection sweep_direction = HumDirection::kForward;
  std::string output_dir = "out";
};

struct RunConfig {
  std::string source = "<defaults>";
  ProblemConfig problem;
  CarlemanConfig carleman;
  HumSectionConfig hum;
  ExperimentConfig experiment;
  CoefficientFunctions coefficients;
  ScalarField y0, yT;

  SpatialGrid grid() const { return build_grid(problem.L, problem.N, problem.g0, problem.g1); }

  ScenarioTree tree() const { return ScenarioTree::binary(problem.M, problem.T, problem.max_steps); }

  SpdeProblem spde() const {
    const SpatialGrid g = grid();
    const ScenarioTree t = tree();
    return SpdeProblem(g, t, sample_coefficients(g, t, coefficients), problem.scheme);
  }

  HumConfig hum_config(const SpatialGrid& g) const {
    HumConfig c;
    c.epsilon = hum.epsilon_from_mesh ? default_epsilon(g) : hum.epsilon;
    c.cg_tol = hum.cg_tol;
    c.cg_max_iter = hum.cg_max_iter;
    return c;
  }

  /// Resolved configuration, one `key = value` per line under section headers.
  std::string echo() const;
};

namespace internal {

inline std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::string join(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + fmt17(v[i]);
  return s;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

inline const char* scheme_name(DiffusionScheme s) {
  return s == DiffusionScheme::kSdirk2 ? "sdirk2" : "backward_euler";
}

}  // namespace internal

inline std::string RunConfig::echo() const {
  using internal::fmt17;
  std::ostringstream o;
  const ProblemConfig& p = problem;
  o << "[problem]\n"
    << "L = " << fmt17(p.L) << "\nN = " << p.N << "\nM = " << p.M << "\nT = " << fmt17(p.T) << "\n"
    << "g0 = " << fmt17(p.g0.lo) << ", " << fmt17(p.g0.hi) << "\n"
    << "g1 = " << fmt17(p.g1.lo) << ", " << fmt17(p.g1.hi) << "\n"
    << "a = " << p.a << "\na1 = " << p.a1 << "\na2 = " << p.a2 << "\nb1 = " << p.b1 << "\nb2 = " << p.b2
    << "\nb = " << p.b << "\n"
    << "scheme = " << internal::scheme_name(p.scheme) << "\nmax_steps = " << p.max_steps << "\n"
    << "y0 = " << p.y0 << "\nyT = " << p.yT << "\nterminal_noise = " << fmt17(p.terminal_noise) << "\n";
  const CarlemanConfig& c = carleman;
  o << "[carleman]\n"
    << "direction = " << (c.direction == CarlemanDirection::kBackward ? "backward" : "forward") << "\n"
    << "mu = " << fmt17(c.mu) << "\nc0 = " << fmt17(c.c0) << "\nexclude = " << c.exclude
    << "\nsamples = " << c.samples << "\nlambda_multiples = " << internal::join(c.lambda_multiples)
    << "\nmu_values = " << internal::join(c.mu_values) << "\n";
  o << "[hum]\n"
    << "epsilon = " << (hum.epsilon_from_mesh ? std::string("h2") : fmt17(hum.epsilon)) << "\n"
    << "cg_tol = " << fmt17(hum.cg_tol) << "\ncg_max_iter = " << hum.cg_max_iter << "\n";
  const ExperimentConfig& e = experiment;
  o << "[experiment]\n"
    << "seed = " << e.seed << "\npower_iters = " << e.power_iters
    << "\nobservability = " << to_string(e.observability) << "\nhorizons = " << internal::join(e.horizons)
    << "\nsteps_per_unit_time = " << fmt17(e.steps_per_unit_time)
    << "\nsweep_quantity = " << (e.sweep_quantity == ScalingQuantity::kObservability ? "observability" : "control_cost")
    << "\nepsilons = " << internal::join(e.epsilons)
    << "\nsweep_direction = " << (e.sweep_direction == HumDirection::kForward ? "forward" : "backward")
    << "\noutput_dir = " << e.output_dir << "\n";
  return o.str();
}

namespace internal {

class ConfigParser {
 public:
  explicit ConfigParser(std::string source) : source_(std::move(source)) {}

  RunConfig parse(std::istream& in) {
    RunConfig cfg;
    cfg.source = source_;
    install(cfg);
    std::string line, section;
    int number = 0;
    while (std::getline(in, line)) {
      ++number;
      const auto comment = line.find_first_of("#;");
      const std::string text = trim(comment == std::string::npos ? line : line.substr(0, comment));
      if (text.empty()) continue;
      if (text.front() == '[') {
        if (text.back() != ']') fail(number, "malformed section header '" + text + "'");
        section = trim(text.substr(1, text.size() - 2));
        if (!known_sections().count(section)) fail(number, "unknown section [" + section + "]");
        if (!sections_.emplace(section, number).second)
          fail(number, "section [" + section + "] repeated (first at line " +
                           std::to_string(sections_[section]) + ")");
        continue;
      }
      if (section.empty()) fail(number, "key outside of any section");
      const auto eq = text.find('=');
      if (eq == std::string::npos) fail(number, "expected 'key = value' in [" + section + "]");
      const std::string key = trim(text.substr(0, eq));
      const std::string value = trim(text.substr(eq + 1));
      const std::string qualified = section + "." + key;
      auto it = setters_.find(qualified);
      if (it == setters_.end()) fail(number, "unknown key '" + key + "' in [" + section + "]");
      if (!lines_.emplace(qualified, number).second)
        fail(number, "key '" + key + "' repeated in [" + section + "] (first at line " +
                         std::to_string(lines_[qualified]) + ")");
      if (value.empty()) fail(number, "[" + section + "] " + key + ": empty value");
      try {
        it->second(value);
      } catch (const ValidationError& e) {
        fail(number, "[" + section + "] " + key + ": " + e.what());
      }
    }
    if (!sections_.count("problem")) fail(0, "missing section [problem]");
    validate(cfg);
    return cfg;
  }

 private:
  static const std::map<std::string, int>& known_sections() {
    static const std::map<std::string, int> s{{"problem", 0}, {"carleman", 1}, {"hum", 2}, {"experiment", 3}};
    return s;
  }

  [[noreturn]] void fail(int line, const std::string& message) const {
    throw ValidationError(line > 0 ? source_ + ":" + std::to_string(line) + ": " + message
                                   : source_ + ": " + message);
  }

  // Location of a key for cross-field errors; falls back to the section header.
  int line_of(const std::string& section, const std::string& key) const {
    auto it = lines_.find(section + "." + key);
    if (it != lines_.end()) return it->second;
    auto s = sections_.find(section);
    return s != sections_.end() ? s->second : 0;
  }

  static double number(const std::string& v) {
    errno = 0;
    char* end = nullptr;
    const double d = std::strtod(v.c_str(), &end);
    if (end == v.c_str() || trim(end) != "" || errno == ERANGE || !std::isfinite(d))
      throw ValidationError("'" + v + "' is not a finite number");
    return d;
  }

  static int integer(const std::string& v) {
    errno = 0;
    char* end = nullptr;
    const long n = std::strtol(v.c_str(), &end, 10);
    if (end == v.c_str() || trim(end) != "" || errno == ERANGE || n < -1000000000L || n > 1000000000L)
      throw ValidationError("'" + v + "' is not an integer");
    return static_cast<int>(n);
  }

  static std::vector<double> list(const std::string& v) {
    std::vector<double> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(number(trim(item)));
    if (out.empty()) throw ValidationError("empty list");
    return out;
  }

  static Interval interval(const std::string& v) {
    const std::vector<double> p = list(v);
    if (p.size() != 2) throw ValidationError("an interval needs exactly two numbers 'lo, hi'");
    if (!(p[0] < p[1])) throw ValidationError("interval (" + fmt17(p[0]) + ", " + fmt17(p[1]) + ") is empty");
    return {p[0], p[1]};
  }

  template <typename E>
  static E choice(const std::string& v, const std::map<std::string, E>& options) {
    auto it = options.find(v);
    if (it != options.end()) return it->second;
    std::string names;
    for (const auto& [k, _] : options) names += (names.empty() ? "" : ", ") + k;
    throw ValidationError("'" + v + "' is not one of {" + names + "}");
  }

  static void positive(double v) {
    if (!(v > 0)) throw ValidationError("must be positive");
  }

  void install(RunConfig& c) {
    auto& s = setters_;
    ProblemConfig& p = c.problem;
    s["problem.L"] = [&p](const std::string& v) { p.L = number(v), positive(p.L); };
    s["problem.N"] = [&p](const std::string& v) { p.N = integer(v); };
    s["problem.M"] = [&p](const std::string& v) { p.M = integer(v); };
    s["problem.T"] = [&p](const std::string& v) { p.T = number(v), positive(p.T); };
    s["problem.g0"] = [&p](const std::string& v) { p.g0 = interval(v); };
    s["problem.g1"] = [&p](const std::string& v) { p.g1 = interval(v); };
    auto expr = [](std::string* text, ScalarField* field) {
      return [text, field](const std::string& v) {
        *field = ScalarField::parse(v);
        *text = v;
      };
    };
    s["problem.a"] = expr(&p.a, &c.coefficients.a);
    s["problem.a1"] = expr(&p.a1, &c.coefficients.a1);
    s["problem.a2"] = expr(&p.a2, &c.coefficients.a2);
    s["problem.b1"] = expr(&p.b1, &c.coefficients.b1);
    s["problem.b2"] = expr(&p.b2, &c.coefficients.b2);
    s["problem.b"] = expr(&p.b, &c.coefficients.b);
    s["problem.y0"] = expr(&p.y0, &c.y0);
    s["problem.yT"] = expr(&p.yT, &c.yT);
    c.y0 = ScalarField::parse(p.y0);
    c.yT = ScalarField::parse(p.yT);
    s["problem.scheme"] = [&p](const std::string& v) {
      p.scheme = choice<DiffusionScheme>(
          v, {{"sdirk2", DiffusionScheme::kSdirk2}, {"backward_euler", DiffusionScheme::kBackwardEuler}});
    };
    s["problem.max_steps"] = [&p](const std::string& v) { p.max_steps = integer(v); };
    s["problem.terminal_noise"] = [&p](const std::string& v) { p.terminal_noise = number(v); };

    CarlemanConfig& k = c.carleman;
    s["carleman.direction"] = [&k](const std::string& v) {
      k.direction = choice<CarlemanDirection>(
          v, {{"backward", CarlemanDirection::kBackward}, {"forward", CarlemanDirection::kForward}});
    };
    s["carleman.mu"] = [&k](const std::string& v) { k.mu = number(v); };
    s["carleman.c0"] = [&k](const std::string& v) { k.c0 = number(v), positive(k.c0); };
    s["carleman.exclude"] = [&k](const std::string& v) { k.exclude = integer(v); };
    s["carleman.samples"] = [&k](const std::string& v) { k.samples = integer(v); };
    s["carleman.lambda_multiples"] = [&k](const std::string& v) { k.lambda_multiples = list(v); };
    s["carleman.mu_values"] = [&k](const std::string& v) { k.mu_values = list(v); };

    HumSectionConfig& h = c.hum;
    s["hum.epsilon"] = [&h](const std::string& v) {
      h.epsilon_from_mesh = v == "h2";
      if (!h.epsilon_from_mesh) h.epsilon = number(v), positive(h.epsilon);
    };
    s["hum.cg_tol"] = [&h](const std::string& v) { h.cg_tol = number(v); };
    s["hum.cg_max_iter"] = [&h](const std::string& v) { h.cg_max_iter = integer(v); };

    ExperimentConfig& e = c.experiment;
    s["experiment.seed"] = [&e](const std::string& v) {
      const int n = integer(v);
      if (n < 0) throw ValidationError("must be non-negative");
      e.seed = static_cast<unsigned>(n);
    };
    s["experiment.power_iters"] = [&e](const std::string& v) { e.power_iters = integer(v); };
    s["experiment.observability"] = [&e](const std::string& v) {
      e.observability = choice<ObservabilityDirection>(
          v, {{"backward_1_3", ObservabilityDirection::kBackward13}, {"forward_1_5", ObservabilityDirection::kForward15}});
    };
    s["experiment.horizons"] = [&e](const std::string& v) { e.horizons = list(v); };
    s["experiment.steps_per_unit_time"] = [&e](const std::string& v) {
      e.steps_per_unit_time = number(v), positive(e.steps_per_unit_time);
    };
    s["experiment.sweep_quantity"] = [&e](const std::string& v) {
      e.sweep_quantity = choice<ScalingQuantity>(
          v, {{"observability", ScalingQuantity::kObservability}, {"control_cost", ScalingQuantity::kControlCost}});
    };
    s["experiment.epsilons"] = [&e](const std::string& v) { e.epsilons = list(v); };
    s["experiment.sweep_direction"] = [&e](const std::string& v) {
      e.sweep_direction = choice<HumDirection>(v, {{"forward", HumDirection::kForward}, {"backward", HumDirection::kBackward}});
    };
    s["experiment.output_dir"] = [&e](const std::string& v) { e.output_dir = v; };
  }

  void check(bool ok, const std::string& section, const std::string& key, const std::string& message) const {
    if (!ok) fail(line_of(section, key), "[" + section + "] " + key + ": " + message);
  }

  void validate(RunConfig& c) const {
    const ProblemConfig& p = c.problem;
    check(p.N >= 4, "problem", "N", "N = " + std::to_string(p.N) + " is below the minimum of 4");
    check(p.M >= 2, "problem", "M", "M = " + std::to_string(p.M) + " is below the minimum of 2");
    check(p.max_steps >= 1 && p.max_steps <= 20, "problem", "max_steps", "must lie in [1, 20]");
    check(p.M <= p.max_steps, "problem", "M",
          "M = " + std::to_string(p.M) + " exceeds max_steps = " + std::to_string(p.max_steps));
    check(p.g0.lo > 0 && p.g0.hi < p.L, "problem", "g0",
          "g0 " + p.g0.to_string() + " must lie inside (0, " + fmt17(p.L) + ")");
    check(p.g0.lo < p.g1.lo && p.g1.hi < p.g0.hi, "problem", "g1",
          "g1 " + p.g1.to_string() + " is not strictly contained in g0 " + p.g0.to_string());
    try {
      c.grid();
    } catch (const ValidationError& e) {
      fail(line_of("problem", "g0"), std::string("[problem] ") + e.what());
    }
    try {
      const SpatialGrid g = c.grid();
      sample_coefficients(g, ScenarioTree::collapsed(p.M, p.T), c.coefficients);
    } catch (const ValidationError& e) {
      fail(line_of("problem", "a"), std::string("[problem] ") + e.what());
    }

    const CarlemanConfig& k = c.carleman;
    check(k.mu >= 1, "carleman", "mu", "must be >= 1");
    check(k.exclude >= 1 && 2 * k.exclude <= p.M, "carleman", "exclude", "must lie in [1, M/2]");
    check(k.samples >= 1, "carleman", "samples", "must be >= 1");
    for (double m : k.lambda_multiples) check(m >= 1, "carleman", "lambda_multiples", "entries must be >= 1");
    for (double m : k.mu_values) check(m >= 1, "carleman", "mu_values", "entries must be >= 1");

    check(c.hum.cg_tol > 0 && c.hum.cg_tol < 1, "hum", "cg_tol", "must lie in (0, 1)");
    check(c.hum.cg_max_iter >= 1, "hum", "cg_max_iter", "must be >= 1");

    const ExperimentConfig& e = c.experiment;
    check(e.power_iters >= 5, "experiment", "power_iters", "must be >= 5");
    for (double t : e.horizons) check(t > 0, "experiment", "horizons", "entries must be positive");
    for (double v : e.epsilons) check(v > 0, "experiment", "epsilons", "entries must be positive");
    check(!e.output_dir.empty(), "experiment", "output_dir", "must not be empty");
  }

  std::string source_;
  std::map<std::string, std::function<void(const std::string&)>> setters_;
  std::map<std::string, int> lines_;
  std::map<std::string, int> sections_;
};

}  // namespace internal

inline RunConfig parse_config_text(const std::string& text, const std::string& source = "<string>") {
  std::istringstream in(text);
  return internal::ConfigParser(source).parse(in);
}

inline RunConfig parse_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError(path + ": cannot open configuration file");
  return internal::ConfigParser(path).parse(in);
}

}  // namespace stochnull
