#pragma once

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "stochnull/carleman.hpp"
#include "stochnull/config.hpp"
#include "stochnull/control.hpp"
#include "stochnull/errors.hpp"
#include "stochnull/experiments.hpp"
#include "stochnull/psi.hpp"
#include "stochnull/spde.hpp"

namespace stochnull {

inline const std::vector<std::string>& subcommands() {
  static const std::vector<std::string> s{"simulate",       "control-forward", "control-backward",
                                          "observability",  "carleman-check",  "appendix-check",
                                          "sweep-T",        "sweep-eps"};
  return s;
}

enum ExitCode { kExitOk = 0, kExitValidation = 1, kExitNumerical = 2 };

namespace internal {

/// Writes CSV, two-column data and report files under one directory. Every file
/// starts with the same '#' header block; line endings are LF on every platform.
class OutputSet {
 public:
  OutputSet(const RunConfig& cfg, const std::string& subcommand, std::string dir)
      : subcommand_(subcommand), dir_(std::move(dir)) {
    std::ostringstream h;
    h << "# stochnull " << subcommand << "\n# config: " << cfg.source << "\n# seed: " << cfg.experiment.seed << "\n";
    std::istringstream echo(cfg.echo());
    std::string line;
    while (std::getline(echo, line)) h << "# " << line << "\n";
    header_ = h.str();
    std::error_code ec;
    std::filesystem::create_directories(dir_, ec);
    if (ec) throw ValidationError("cannot create output directory '" + dir_ + "': " + ec.message());
  }

  using Row = std::vector<std::string>;

  void csv(const Row& columns, const std::vector<Row>& rows, const std::string& suffix = ".csv") const {
    std::string body = join_row(columns);
    for (const Row& r : rows) body += join_row(r);
    write(subcommand_ + suffix, body);
  }

  void dat(const std::string& x, const std::string& y, const std::vector<std::array<double, 2>>& points) const {
    std::string body = "# " + x + " " + y + "\n";
    for (const auto& [a, b] : points) body += fmt17(a) + " " + fmt17(b) + "\n";
    write(subcommand_ + ".dat", body);
  }

  void report(const std::vector<std::pair<std::string, std::string>>& entries) const {
    std::string body;
    for (const auto& [k, v] : entries) body += k + ": " + v + "\n";
    write(subcommand_ + ".report.txt", body);
  }

  std::string path(const std::string& name) const { return (std::filesystem::path(dir_) / name).string(); }

 private:
  static std::string join_row(const Row& r) {
    std::string s;
    for (std::size_t i = 0; i < r.size(); ++i) s += (i ? "," : "") + r[i];
    return s + "\n";
  }

  void write(const std::string& name, const std::string& body) const {
    std::ofstream out(path(name), std::ios::binary | std::ios::trunc);
    if (!out) throw ValidationError("cannot write '" + path(name) + "'");
    out << header_ << body;
  }

  std::string subcommand_, dir_, header_;
};

inline std::string num(double v) { return fmt17(v); }
inline std::string num(int v) { return std::to_string(v); }
inline std::string flag(bool b) { return b ? "1" : "0"; }

inline Eigen::VectorXd nodal(const SpatialGrid& g, const ScalarField& f, double t) {
  Eigen::VectorXd v(g.N);
  for (int i = 0; i < g.N; ++i) v[i] = f(t, g.x[i]);
  return v;
}

/// yT(x)·(1 + noise·W(T)) on every leaf.
inline Eigen::MatrixXd terminal_data(const RunConfig& cfg, const SpdeProblem& p) {
  const ScenarioTree& tree = p.tree();
  const Eigen::VectorXd base = nodal(p.grid(), cfg.yT, tree.horizon());
  Eigen::MatrixXd yT(p.grid().N, tree.leaf_count());
  for (int k = 0; k < tree.leaf_count(); ++k)
    yT.col(k) = (1 + cfg.problem.terminal_noise * tree.brownian(tree.steps(), k)) * base;
  return yT;
}

inline double level_energy(const SpdeProblem& p, const AdaptedField& f, int n) {
  const ScenarioTree& tree = p.tree();
  Eigen::RowVectorXd e(tree.nodes_at(n));
  for (int k = 0; k < tree.nodes_at(n); ++k) e[k] = p.grid().norm2(f.col(tree.index(n, k)));
  return tower_mean(e)[0];
}

inline std::vector<std::pair<std::string, std::string>> hum_entries(const HumReport& r, const char* exponent,
                                                                    double uncontrolled) {
  return {{"terminal_norm", num(r.terminal_norm)},
          {"uncontrolled_norm", num(uncontrolled)},
          {"control_cost", num(r.control_cost)},
          {exponent, num(r.cost_exponent)},
          {"bound_ratio", num(r.bound_ratio)},
          {"epsilon", num(r.epsilon)},
          {"cg_iterations", num(r.cg_iterations)},
          {"converged", flag(r.converged)},
          {"cg_residual", num(r.cg_residual)},
          {"identity_lhs", num(r.identity_lhs)},
          {"identity_rhs", num(r.identity_rhs)},
          {"identity_residual", num(r.identity_residual)}};
}

inline int run_simulate(const RunConfig& cfg, const OutputSet& out) {
  const SpdeProblem p = cfg.spde();
  const ScenarioTree& tree = p.tree();
  const Eigen::VectorXd y0 = nodal(p.grid(), cfg.y0, 0.0);
  const ForwardSolution fwd = forward_solve(p, y0);
  const BackwardSolution bwd = backward_solve(p, terminal_data(cfg, p), BackwardMode::kControlled12);
  std::vector<OutputSet::Row> rows;
  for (int n = 0; n <= tree.steps(); ++n)
    rows.push_back({num(n), num(tree.time(n)), num(level_energy(p, fwd.y, n)), num(level_energy(p, bwd.z, n))});
  out.csv({"level", "t", "forward_energy", "backward_energy"}, rows);

  std::mt19937_64 rng(cfg.experiment.seed);
  std::normal_distribution<double> nd;
  auto draw = [&](int rows_, int cols) {
    Eigen::MatrixXd m(rows_, cols);
    for (int c = 0; c < cols; ++c)
      for (int r = 0; r < rows_; ++r) m(r, c) = nd(rng);
    return m;
  };
  AdaptedField u, v;
  u.values = draw(p.grid().N, tree.node_count());
  v.values = draw(p.grid().N, tree.node_count());
  const Eigen::MatrixXd zT = draw(p.grid().N, tree.leaf_count());
  const double gap = duality_gap(p, y0, &u, &v, zT);
  out.report({{"forward_terminal_energy", num(level_energy(p, fwd.y, tree.steps()))},
              {"backward_initial_energy", num(level_energy(p, bwd.z, 0))},
              {"duality_gap", num(gap)}});
  if (!(gap <= 1e-10)) throw NumericalError("duality gap " + num(gap) + " exceeds 1e-10");
  return kExitOk;
}

inline int run_control_forward(const RunConfig& cfg, const OutputSet& out) {
  const SpdeProblem p = cfg.spde();
  const ScenarioTree& tree = p.tree();
  const Eigen::VectorXd y0 = nodal(p.grid(), cfg.y0, 0.0);
  const ForwardHumResult r = hum_forward(p, y0, cfg.hum_config(p.grid()));
  const ForwardSolution free = forward_solve(p, y0);
  std::vector<OutputSet::Row> rows;
  for (int n = 0; n <= tree.steps(); ++n)
    rows.push_back({num(n), num(tree.time(n)), num(level_energy(p, r.y.y, n)),
                    num(n < tree.steps() ? level_energy(p, r.u, n) : 0.0),
                    num(n < tree.steps() && r.v.values.size() ? level_energy(p, r.v, n) : 0.0)});
  out.csv({"level", "t", "state_energy", "u_energy", "v_energy"}, rows);
  out.report(hum_entries(r.report, "K", level_energy(p, free.y, tree.steps())));
  return kExitOk;
}

inline int run_control_backward(const RunConfig& cfg, const OutputSet& out) {
  const SpdeProblem p = cfg.spde();
  const ScenarioTree& tree = p.tree();
  const Eigen::MatrixXd yT = terminal_data(cfg, p);
  const BackwardHumResult r = hum_backward(p, yT, cfg.hum_config(p.grid()));
  const BackwardSolution free = backward_solve(p, yT, BackwardMode::kControlled12);
  std::vector<OutputSet::Row> rows;
  for (int n = 0; n <= tree.steps(); ++n)
    rows.push_back({num(n), num(tree.time(n)), num(level_energy(p, r.y.z, n)),
                    num(n < tree.steps() ? level_energy(p, r.u, n) : 0.0)});
  out.csv({"level", "t", "state_energy", "u_energy"}, rows);
  out.report(hum_entries(r.report, "M", p.grid().norm2(free.root())));
  return kExitOk;
}

inline PowerIterationOptions power_options(const RunConfig& cfg) {
  PowerIterationOptions o;
  o.iters = cfg.experiment.power_iters;
  o.seed = cfg.experiment.seed;
  return o;
}

inline int run_observability(const RunConfig& cfg, const OutputSet& out) {
  const SpdeProblem p = cfg.spde();
  const ObservabilityDirection d = cfg.experiment.observability;
  const ObservabilityEstimate e = observability_constant(p, d, power_options(cfg));
  std::vector<OutputSet::Row> rows;
  for (std::size_t k = 0; k < e.history.size(); ++k) rows.push_back({num(static_cast<int>(k)), num(e.history[k])});
  out.csv({"iteration", "rayleigh_quotient"}, rows);
  const bool backward = d == ObservabilityDirection::kBackward13;
  out.report({{"direction", to_string(d)},
              {"c_obs", num(e.c_obs)},
              {"iterations", num(e.iterations)},
              {"residual", num(e.residual)},
              {"method", e.method},
              {"reseeded", flag(e.reseeded)},
              {"flagged", flag(e.flagged)},
              {backward ? "K" : "M", num(backward ? k_cost_exponent(p) : m_cost_exponent(p))}});
  if (e.flagged) throw NumericalError("observation form vanished: loss of observability at this discretization");
  return kExitOk;
}

inline int run_carleman_check(const RunConfig& cfg, const OutputSet& out) {
  const SpdeProblem p = cfg.spde();
  const CarlemanConfig& c = cfg.carleman;
  const PsiFunction psi = build_psi(p.grid(), cfg.problem.g1);
  const CarlemanStudy st = carleman_sample_study(p, psi, c.mu, c.direction, c.samples, c.lambda_multiples,
                                                 cfg.experiment.seed, c.c0, c.exclude);
  std::vector<OutputSet::Row> rows;
  for (const CarlemanSample& s : st.samples)
    rows.push_back({num(s.sample), num(s.lambda_multiple), num(s.lhs), num(s.rhs), num(s.ratio)});
  out.csv({"sample", "lambda_multiple", "lhs", "rhs", "ratio"}, rows);
  std::vector<std::pair<std::string, std::string>> rep{{"lambda_threshold", num(st.lambda_threshold)}};
  for (std::size_t i = 0; i < st.multiples.size(); ++i) {
    rep.push_back({"median_ratio[" + num(st.multiples[i]) + "]", num(st.medians[i])});
    rep.push_back({"max_ratio[" + num(st.multiples[i]) + "]", num(st.maxima[i])});
  }
  rep.push_back({"maxima_finite", flag(st.maxima_finite)});
  rep.push_back({"medians_non_increasing", flag(st.medians_non_increasing)});
  out.report(rep);
  return kExitOk;
}

inline int run_appendix_check(const RunConfig& cfg, const OutputSet& out) {
  const SpdeProblem p = cfg.spde();
  const CarlemanConfig& c = cfg.carleman;
  const PsiFunction psi = build_psi(p.grid(), cfg.problem.g1);
  std::vector<std::array<double, 2>> pairs;
  for (double mu : c.mu_values) pairs.push_back({lambda_threshold(mu, psi, cfg.problem.T, c.c0), mu});
  const std::vector<LeadingOrderRow> table =
      leading_order_check(psi, cfg.coefficients.a, p.coeffs().beta, pairs, p.tree(), c.c0);
  std::vector<OutputSet::Row> rows;
  std::vector<double> lmu, ldev;
  bool b_positive = true;
  double margin = INFINITY;
  for (const LeadingOrderRow& r : table) {
    rows.push_back({num(r.mu), num(r.lambda), num(r.a_deviation), num(r.b_deviation), num(r.b_min),
                    flag(r.b_positive), num(r.c11_margin), flag(r.flagged)});
    if (r.flagged) continue;
    if (r.a_deviation > 0) {
      lmu.push_back(std::log(r.mu));
      ldev.push_back(std::log(r.a_deviation));
    }
    if (r.mu >= 64) {
      b_positive = b_positive && r.b_positive;
      margin = std::min(margin, r.c11_margin);
    }
  }
  out.csv({"mu", "lambda", "a_deviation", "b_deviation", "b_min", "b_positive", "c11_margin", "flagged"}, rows);
  std::vector<std::pair<std::string, std::string>> rep;
  if (lmu.size() >= 2) {
    const LinearFit f = fit_line(lmu, ldev);
    rep.push_back({"a_deviation_loglog_slope", num(f.slope)});
    rep.push_back({"a_deviation_loglog_r2", num(f.r2)});
  }
  rep.push_back({"b_positive_mu_ge_64", flag(b_positive)});
  rep.push_back({"c11_margin_mu_ge_64", num(margin)});
  out.report(rep);
  return kExitOk;
}

inline int run_sweep_T(const RunConfig& cfg, const OutputSet& out) {
  const ProblemConfig& pc = cfg.problem;
  ScalingSetup s;
  s.L = pc.L;
  s.N = pc.N;
  s.g0 = pc.g0;
  s.g1 = pc.g1;
  s.coefficients = cfg.coefficients;
  s.scheme = pc.scheme;
  s.horizons = cfg.experiment.horizons;
  s.steps_per_unit_time = cfg.experiment.steps_per_unit_time;
  s.max_steps = pc.max_steps;
  s.quantity = cfg.experiment.sweep_quantity;
  s.direction = cfg.experiment.observability;
  s.power = power_options(cfg);
  s.hum.cg_tol = cfg.hum.cg_tol;
  s.hum.cg_max_iter = cfg.hum.cg_max_iter;
  s.hum.epsilon = cfg.hum.epsilon;
  s.epsilon_from_mesh = cfg.hum.epsilon_from_mesh;
  s.initial = cfg.y0;
  const ScalingTable t = cost_scaling_sweep(s);
  std::vector<OutputSet::Row> rows;
  std::vector<std::array<double, 2>> points;
  for (const ScalingRow& r : t.rows) {
    rows.push_back({num(r.T), num(r.steps), flag(r.collapsed), num(r.value), num(r.exponent), num(r.iterations),
                    flag(r.flagged)});
    points.push_back({1 / r.T, std::log(r.value)});
  }
  const bool backward = s.direction == ObservabilityDirection::kBackward13;
  const char* exponent = s.quantity == ScalingQuantity::kControlCost || backward ? "K" : "M";
  out.csv({"T", "steps", "collapsed", "value", exponent, "iterations", "flagged"}, rows);
  out.dat("inv_T", "log_value", points);
  std::vector<std::pair<std::string, std::string>> rep{
      {"quantity", s.quantity == ScalingQuantity::kObservability ? "observability" : "control_cost"},
      {"direction", to_string(s.direction)},
      {"steps_per_unit_time", num(s.steps_per_unit_time)},
      {"steps_ratio_exact", flag(t.steps_ratio_exact)},
      {"rows", num(static_cast<int>(t.rows.size()))},
      {"complete", flag(t.complete)}};
  if (t.complete) {
    rep.push_back({"slope", num(t.fit.slope)});
    rep.push_back({"intercept", num(t.fit.intercept)});
    rep.push_back({"r2", num(t.fit.r2)});
    rep.push_back({"slope_T_minus_4", num(t.fit_t4.slope)});
    rep.push_back({"r2_T_minus_4", num(t.fit_t4.r2)});
  } else {
    rep.push_back({"error", t.error});
  }
  out.report(rep);
  if (!t.complete) throw NumericalError("sweep aborted: " + t.error);
  return kExitOk;
}

inline int run_sweep_eps(const RunConfig& cfg, const OutputSet& out) {
  const SpdeProblem p = cfg.spde();
  const HumDirection d = cfg.experiment.sweep_direction;
  const Eigen::MatrixXd data = d == HumDirection::kForward ? Eigen::MatrixXd(nodal(p.grid(), cfg.y0, 0.0))
                                                           : terminal_data(cfg, p);
  const EpsilonTable t = epsilon_sweep(p, d, data, cfg.experiment.epsilons, cfg.hum_config(p.grid()));
  std::vector<OutputSet::Row> rows;
  std::vector<std::array<double, 2>> points;
  for (const EpsilonRow& r : t.rows) {
    rows.push_back({num(r.epsilon), num(r.terminal_norm), num(r.control_cost), num(r.iterations), flag(r.converged),
                    num(r.identity_residual)});
    points.push_back({r.epsilon, r.terminal_norm});
  }
  out.csv({"epsilon", "terminal_norm", "control_cost", "iterations", "converged", "identity_residual"}, rows);
  out.dat("epsilon", "terminal_norm", points);
  out.report({{"direction", d == HumDirection::kForward ? "forward" : "backward"},
              {"uncontrolled_norm", num(t.uncontrolled_norm)},
              {d == HumDirection::kForward ? "K" : "M", num(t.cost_exponent)},
              {"terminal_decreasing", flag(t.terminal_decreasing)},
              {"cost_variation", num(t.cost_variation)}});
  return kExitOk;
}

}  // namespace internal

/// Dispatches one subcommand; diagnostics go to `err`. Outputs land in
/// `output_dir` when given, otherwise in the configured directory.
inline int run(const std::string& subcommand, const RunConfig& cfg, std::ostream& err,
               const std::string& output_dir = "") {
  using Handler = int (*)(const RunConfig&, const internal::OutputSet&);
  static const std::map<std::string, Handler> handlers{{"simulate", internal::run_simulate},
                                                       {"control-forward", internal::run_control_forward},
                                                       {"control-backward", internal::run_control_backward},
                                                       {"observability", internal::run_observability},
                                                       {"carleman-check", internal::run_carleman_check},
                                                       {"appendix-check", internal::run_appendix_check},
                                                       {"sweep-T", internal::run_sweep_T},
                                                       {"sweep-eps", internal::run_sweep_eps}};
  try {
    auto it = handlers.find(subcommand);
    if (it == handlers.end()) throw ValidationError("unknown subcommand '" + subcommand + "'");
    const internal::OutputSet out(cfg, subcommand, output_dir.empty() ? cfg.experiment.output_dir : output_dir);
    return it->second(cfg, out);
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  }
}

inline int run_file(const std::string& subcommand, const std::string& config_path, std::ostream& err,
                    const std::string& output_dir = "") {
  try {
    return run(subcommand, parse_config(config_path), err, output_dir);
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  }
}

}  // namespace stochnull
