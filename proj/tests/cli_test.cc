#include "stochnull/cli.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <gtest/gtest.h>

namespace stochnull {
namespace {

namespace fs = std::filesystem;

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path scratch(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("stochnull_cli_test_" + name);
  fs::remove_all(d);
  return d;
}

// Body below the '#' header block.
std::string body(const std::string& text) {
  std::istringstream in(text);
  std::string line, out;
  while (std::getline(in, line))
    if (line.empty() || line[0] != '#') out += line + "\n";
  return out;
}

const char* kSmall =
    "[problem]\nN = 12\nM = 4\na1 = 1\na2 = 0.5\nb1 = 0.5\nb2 = 0.5\nb = 0.5\n"
    "[carleman]\nsamples = 4\n[experiment]\nseed = 3\nhorizons = 0.5, 1, 1.5, 2\nsteps_per_unit_time = 4\n";

TEST(Cli, ControlForwardOnDefaultConfig) {
  const fs::path d = scratch("default");
  std::ostringstream err;
  EXPECT_EQ(run_file("control-forward", STOCHNULL_SAMPLES_DIR "/default.ini", err, d.string()), kExitOk) << err.str();
  const std::string rep = slurp(d / "control-forward.report.txt");
  for (const char* key : {"terminal_norm: ", "control_cost: ", "K: ", "bound_ratio: "})
    EXPECT_NE(rep.find(std::string("\n") + key), std::string::npos) << key;
  EXPECT_TRUE(fs::exists(d / "control-forward.csv"));
}

TEST(Cli, CarlemanCheckColumns) {
  const fs::path d = scratch("carleman");
  std::ostringstream err;
  ASSERT_EQ(run("carleman-check", parse_config_text(kSmall), err, d.string()), kExitOk) << err.str();
  const std::string csv = body(slurp(d / "carleman-check.csv"));
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "sample,lambda_multiple,lhs,rhs,ratio");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 4 * 3);
}

TEST(Cli, SweepNeedsFourHorizons) {
  RunConfig c = parse_config_text(kSmall);
  c.experiment.horizons = {0.5, 1.0, 2.0};
  std::ostringstream err;
  EXPECT_EQ(run("sweep-T", c, err, scratch("sweep3").string()), kExitValidation);
  EXPECT_NE(err.str().find("at least 4"), std::string::npos) << err.str();
}

TEST(Cli, ValidationFailuresExitOne) {
  std::ostringstream err;
  EXPECT_EQ(run("plot", parse_config_text(kSmall), err, scratch("plot").string()), kExitValidation);
  EXPECT_EQ(run_file("simulate", "/nonexistent/run.ini", err), kExitValidation);
  RunConfig c = parse_config_text(kSmall);
  c.experiment.epsilons = {1e-3, 1e-2, 1e-1};
  EXPECT_EQ(run("sweep-eps", c, err, scratch("eps").string()), kExitValidation);
}

TEST(Cli, NumericalFailureExitsTwoAndKeepsPartialTable) {
  const fs::path d = scratch("numerical");
  const RunConfig c = parse_config_text(
      "[problem]\nN = 8\na2 = exp(350*t)\n[experiment]\nhorizons = 0.5, 1, 1.5, 2\nsteps_per_unit_time = 4\n");
  std::ostringstream err;
  EXPECT_EQ(run("sweep-T", c, err, d.string()), kExitNumerical);
  EXPECT_NE(slurp(d / "sweep-T.report.txt").find("complete: 0"), std::string::npos);
  const std::string csv = body(slurp(d / "sweep-T.csv"));
  EXPECT_EQ(csv.rfind("0.5,", csv.find('\n') + 1), csv.find('\n') + 1);
}

TEST(Cli, EverySubcommandRunsAndHeadersEchoConfig) {
  const fs::path d = scratch("all");
  RunConfig c = parse_config_text(kSmall);
  for (const std::string& s : subcommands()) {
    if (s == "sweep-T") c.problem.a2 = c.problem.b2 = "0", c.coefficients.a2 = 0.0, c.coefficients.b2 = 0.0;
    std::ostringstream err;
    EXPECT_EQ(run(s, c, err, d.string()), kExitOk) << s << ": " << err.str();
  }
  for (const auto& entry : fs::directory_iterator(d)) {
    const std::string text = slurp(entry.path());
    EXPECT_EQ(text.rfind("# stochnull ", 0), 0u) << entry.path();
    EXPECT_NE(text.find("# seed: 3\n"), std::string::npos) << entry.path();
    EXPECT_NE(text.find("# [problem]\n# L = 1\n# N = 12\n"), std::string::npos) << entry.path();
    EXPECT_EQ(text.find('\r'), std::string::npos) << entry.path();
  }
  EXPECT_TRUE(fs::exists(d / "sweep-T.dat"));
  EXPECT_TRUE(fs::exists(d / "sweep-eps.dat"));
}

TEST(Cli, OutputsAreByteIdentical) {
  const RunConfig c = parse_config_text(kSmall);
  for (const char* s : {"simulate", "control-backward", "observability", "sweep-eps"}) {
    const fs::path a = scratch("det_a"), b = scratch("det_b");
    std::ostringstream err;
    ASSERT_EQ(run(s, c, err, a.string()), kExitOk) << err.str();
    ASSERT_EQ(run(s, c, err, b.string()), kExitOk) << err.str();
    for (const auto& entry : fs::directory_iterator(a))
      EXPECT_EQ(slurp(entry.path()), slurp(b / entry.path().filename())) << s;
  }
}

TEST(Cli, SimulateReportsDualityGap) {
  const fs::path d = scratch("simulate");
  std::ostringstream err;
  ASSERT_EQ(run("simulate", parse_config_text(kSmall), err, d.string()), kExitOk);
  const std::string rep = slurp(d / "simulate.report.txt");
  const auto pos = rep.find("duality_gap: ");
  ASSERT_NE(pos, std::string::npos);
  EXPECT_LE(std::stod(rep.substr(pos + 13)), 1e-10);
}

}  // namespace
}  // namespace stochnull
