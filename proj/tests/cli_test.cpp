#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "ppkit/cli.hpp"

namespace {

using namespace ppkit;
namespace fs = std::filesystem;

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("ppkit_cli_" + std::to_string(::getpid()) + "_" +
            ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const {
    return (dir_ / name).string();
  }

  RunConfig make_config(nlohmann::json doc, const std::string& out) {
    doc["out"] = path(out);
    const std::string cfg_path = path("config_" + out + ".json");
    write_text_file(cfg_path, doc.dump(2));
    return RunConfig::load(cfg_path, std::nullopt, std::nullopt);
  }

  fs::path dir_;
};

nlohmann::json base_sim_config(std::uint64_t seed) {
  nlohmann::json j;
  j["seed"] = seed;
  j["window"] = {{"rect", {0.0, 0.0, 10.0, 10.0}}};
  j["grid"] = {{"nx", 32}, {"ny", 32}};
  j["model"] = {{"beta", {{0.0}}}, {"sigma", 1.0}, {"phi", 4.0}};
  return j;
}

TEST_F(CliTest, SimulateWritesDeterministicOutputs) {
  const auto cfg_a = make_config(base_sim_config(7), "a");
  const auto cfg_b = make_config(base_sim_config(7), "b");
  cmd_simulate(cfg_a);
  cmd_simulate(cfg_b);
  for (const char* name : {"events.csv", "field.asc", "summary.json"}) {
    const auto a = read_text_file(path("a/" + std::string(name)));
    const auto b = read_text_file(path("b/" + std::string(name)));
    EXPECT_EQ(a, b) << name;
    EXPECT_FALSE(a.empty());
  }
  // A different seed changes the events.
  const auto cfg_c = make_config(base_sim_config(8), "c");
  cmd_simulate(cfg_c);
  EXPECT_NE(read_text_file(path("a/events.csv")),
            read_text_file(path("c/events.csv")));
}

TEST_F(CliTest, SimulateCountNearAppendixAExpectation) {
  // Average simulated count over seeds sits near 100 (beta=0 on [0,10]^2).
  double total = 0.0;
  const int reps = 40;
  for (int i = 0; i < reps; ++i) {
    const auto cfg = make_config(base_sim_config(1000 + i), "rep");
    cmd_simulate(cfg);
    const auto summary =
        nlohmann::json::parse(read_text_file(path("rep/summary.json")));
    total += summary["n"].get<double>();
  }
  EXPECT_NEAR(total / reps, 100.0, 25.0);
}

TEST_F(CliTest, SimulateOutputRoundTripsThroughLoadEvents) {
  const auto cfg = make_config(base_sim_config(7), "rt");
  cmd_simulate(cfg);
  const auto w = std::make_shared<const Window>(Window::rect(0, 0, 10, 10));
  const Projection identity{0.0, 0.0, 180.0 / kPi};
  const auto loaded = load_events(path("rt/events.csv"), *w, identity);
  const auto summary =
      nlohmann::json::parse(read_text_file(path("rt/summary.json")));
  EXPECT_EQ(loaded.table.size(), summary["n"].get<std::size_t>());
  EXPECT_EQ(loaded.dropped_outside, 0u);
}

TEST_F(CliTest, SimulateLatticeWritesPanels) {
  auto j = base_sim_config(3);
  j["model"] = {{"beta", {{0.0}}},
                {"lattice", {{"sigma", {0.1, 1.0}}, {"phi", {0.1, 4.0}}}}};
  const auto cfg = make_config(j, "lattice");
  cmd_simulate(cfg);
  EXPECT_TRUE(fs::exists(path("lattice/panels.svg")));
  const auto summary =
      nlohmann::json::parse(read_text_file(path("lattice/summary.json")));
  EXPECT_EQ(summary["counts"].size(), 4u);
  for (const auto& [key, value] : summary["counts"].items())
    EXPECT_TRUE(fs::exists(path("lattice/events_" + key + ".csv")));
}

std::string write_events_csv(const fs::path& dir, const EventTable& t,
                             const std::string& name) {
  const std::string p = (dir / name).string();
  write_text_file(p, events_to_csv(t));
  return p;
}

TEST_F(CliTest, DiagnoseUniformFailsToRejectCsr) {
  // Uniform synthetic events: the CSR verdict is "fail to reject".
  Rng rng(5);
  EventTable t;
  for (int i = 0; i < 120; ++i) {
    EventRow r;
    r.id = std::to_string(i + 1);
    r.lon = rng.uniform(0.0, 10.0);
    r.lat = rng.uniform(0.0, 10.0);
    r.group = "G";
    t.rows.push_back(r);
  }
  nlohmann::json j;
  j["seed"] = 11;
  j["window"] = {{"rect", {0.0, 0.0, 10.0, 10.0}}};
  j["grid"] = {{"nx", 24}, {"ny", 24}};
  j["events"] = write_events_csv(dir_, t, "uniform.csv");
  j["k"] = {{"n_sim", 99}, {"n_radii", 16}};
  const auto cfg = make_config(j, "diag");
  cmd_diagnose(cfg);
  const auto report =
      nlohmann::json::parse(read_text_file(path("diag/report.json")));
  EXPECT_EQ(report["k"]["all"]["verdict"].get<std::string>(),
            "fail to reject CSR");
  EXPECT_TRUE(fs::exists(path("diag/k_all.csv")));
  EXPECT_TRUE(fs::exists(path("diag/k_all.svg")));
  EXPECT_TRUE(fs::exists(path("diag/config.json")));
}

TEST_F(CliTest, DiagnoseClusteredRejectsCsr) {
  // Strongly clustered LGCP events: CSR rejected with a clustering verdict.
  auto w = std::make_shared<const Window>(Window::rect(0, 0, 10, 10));
  const auto grid = GridSpec::cover(*w, 32, 32);
  LgcpModel m;
  m.beta = {{std::log(1.5)}};
  m.cov = ExpCovParams{1.4, 2.0};
  m.grid = grid;
  const auto sim = simulate_lgcp(m, w, 424242);
  ASSERT_GE(sim.pattern.size(), 30u);
  const Projection identity{0.0, 0.0, 180.0 / kPi};
  nlohmann::json j;
  j["seed"] = 12;
  j["window"] = {{"rect", {0.0, 0.0, 10.0, 10.0}}};
  j["grid"] = {{"nx", 24}, {"ny", 24}};
  j["events"] = write_events_csv(
      dir_, pattern_to_events(sim.pattern, identity), "clustered.csv");
  j["k"] = {{"n_sim", 99}, {"n_radii", 16}};
  const auto cfg = make_config(j, "diag");
  cmd_diagnose(cfg);
  const auto report =
      nlohmann::json::parse(read_text_file(path("diag/report.json")));
  EXPECT_TRUE(report["k"]["all"]["reject_csr"].get<bool>());
  EXPECT_NE(report["k"]["all"]["verdict"].get<std::string>().find("clustering"),
            std::string::npos);
}

TEST_F(CliTest, DiagnoseCrossRepulsionFlagged) {
  auto w = std::make_shared<const Window>(Window::rect(0, 0, 10, 10));
  const auto grid = GridSpec::cover(*w, 32, 32);
  LgcpModel m;
  m.beta = {{std::log(1.2)}, {std::log(1.2)}};
  m.lmc = LmcParams{{0.3, 1.0}, {0.3, 1.0}, {1.3, 3.0}, -1};
  m.grid = grid;
  const auto sim = simulate_bivariate_lgcp(m, w, 5150);
  ASSERT_GE(sim.pattern1.size(), 20u);
  ASSERT_GE(sim.pattern2.size(), 20u);
  const Projection identity{0.0, 0.0, 180.0 / kPi};
  EventTable all = pattern_to_events(sim.pattern1, identity, "A");
  for (auto& r : all.rows) r.group = "A";
  EventTable t2 = pattern_to_events(sim.pattern2, identity, "B");
  for (std::size_t i = 0; i < t2.rows.size(); ++i) {
    t2.rows[i].group = "B";
    t2.rows[i].id = std::to_string(all.rows.size() + i + 1);
    all.rows.push_back(t2.rows[i]);
  }
  nlohmann::json j;
  j["seed"] = 13;
  j["window"] = {{"rect", {0.0, 0.0, 10.0, 10.0}}};
  j["grid"] = {{"nx", 24}, {"ny", 24}};
  j["events"] = write_events_csv(dir_, all, "two_groups.csv");
  j["groups"] = {"A", "B"};
  j["k"] = {{"n_sim", 99}, {"n_radii", 16}};
  const auto cfg = make_config(j, "diag");
  cmd_diagnose(cfg);
  const auto report =
      nlohmann::json::parse(read_text_file(path("diag/report.json")));
  const auto verdict = report["cross"]["A_B"]["verdict"].get<std::string>();
  EXPECT_NE(verdict.find("repulsion"), std::string::npos) << verdict;
  EXPECT_TRUE(fs::exists(path("diag/k_cross_A_B.csv")));
}

nlohmann::json fit_config(const std::string& events_path, std::uint64_t seed) {
  nlohmann::json j;
  j["seed"] = seed;
  j["window"] = {{"rect", {0.0, 0.0, 10.0, 10.0}}};
  j["grid"] = {{"nx", 16}, {"ny", 16}};
  j["events"] = events_path;
  j["mcmc"] = {{"burn_in", 1500}, {"thin", 3}, {"n_samples", 120}};
  j["k"] = {{"n_radii", 24}};
  return j;
}

TEST_F(CliTest, FitWritesPosteriorAndSummarySchema) {
  auto w = std::make_shared<const Window>(Window::rect(0, 0, 10, 10));
  const auto grid = GridSpec::cover(*w, 16, 16);
  LgcpModel m;
  m.beta = {{std::log(1.2)}};
  m.cov = ExpCovParams{1.0, 2.0};
  m.grid = grid;
  const auto sim = simulate_lgcp(m, w, 2001);
  const Projection identity{0.0, 0.0, 180.0 / kPi};
  const auto events = write_events_csv(
      dir_, pattern_to_events(sim.pattern, identity), "events.csv");

  const auto cfg = make_config(fit_config(events, 31), "fit");
  cmd_fit(cfg);
  for (const char* f :
       {"mcm.json", "posterior.csv", "summary.json", "trace.json"})
    EXPECT_TRUE(fs::exists(path("fit/" + std::string(f)))) << f;

  const auto summary =
      nlohmann::json::parse(read_text_file(path("fit/summary.json")));
  ASSERT_TRUE(summary.contains("coefficients"));
  ASSERT_TRUE(summary.contains("covariance"));
  for (const char* key : {"median", "lower", "upper"}) {
    EXPECT_TRUE(
        summary["coefficients"]["process1"]["intercept"].contains(key));
    EXPECT_TRUE(summary["covariance"]["process1"]["sigma"].contains(key));
    EXPECT_TRUE(summary["covariance"]["process1"]["phi"].contains(key));
  }
  const double lower =
      summary["covariance"]["process1"]["phi"]["lower"].get<double>();
  EXPECT_GT(lower, 0.0);

  // Rerun with the same config: byte-identical posterior.
  const auto cfg2 = make_config(fit_config(events, 31), "fit2");
  cmd_fit(cfg2);
  EXPECT_EQ(read_text_file(path("fit/posterior.csv")),
            read_text_file(path("fit2/posterior.csv")));
  EXPECT_EQ(read_text_file(path("fit/summary.json")),
            read_text_file(path("fit2/summary.json")));
}

TEST_F(CliTest, ReportFromPosteriorCsv) {
  // Hand-written bivariate posterior at the Table 3 medians: the reported
  // cross-correlation curve passes through (0, -0.64).
  std::ostringstream posterior;
  posterior << "draw,beta1_intercept,beta2_intercept,sigma1,phi1,sigma2,phi2,"
               "sigma3,phi3\n";
  for (int t = 1; t <= 8; ++t)
    posterior << t << ",0,0,1.29,6.79,2.09,130.49,2.28,78.43\n";
  const std::string posterior_path = path("posterior.csv");
  write_text_file(posterior_path, posterior.str());

  nlohmann::json j;
  j["seed"] = 5;
  j["window"] = {{"rect", {0.0, 0.0, 400.0, 400.0}}};
  j["grid"] = {{"nx", 8}, {"ny", 8}};
  j["sign"] = -1;
  j["k"] = {{"n_radii", 32}, {"r_max", 235.29}};
  j["report"] = {{"posterior", posterior_path}};
  const auto cfg = make_config(j, "rep");
  cmd_report(cfg);
  EXPECT_TRUE(fs::exists(path("rep/corr_cross_corr.csv")));
  EXPECT_TRUE(fs::exists(path("rep/corr_cross_corr.svg")));

  // First curve row is h=0: median -0.64.
  std::ifstream in(path("rep/corr_cross_corr.csv"));
  std::string header, first;
  std::getline(in, header);
  std::getline(in, first);
  const auto fields = detail::split_csv(first);
  EXPECT_NEAR(detail::parse_double(fields[1], "median"), -0.64, 0.005);
}

TEST_F(CliTest, ReportRatioMapIdenticalPosteriorsGiveUnitRatio) {
  std::ostringstream posterior;
  posterior << "draw,beta1_intercept,sigma1,phi1\n";
  for (int t = 1; t <= 10; ++t) posterior << t << ",0.2,0.9,2.0\n";
  const std::string pa = path("pa.csv");
  write_text_file(pa, posterior.str());

  nlohmann::json j;
  j["seed"] = 5;
  j["window"] = {{"rect", {0.0, 0.0, 10.0, 10.0}}};
  j["grid"] = {{"nx", 8}, {"ny", 8}};
  j["report"] = {{"posterior", pa}, {"posterior_b", pa}, {"n_sim", 20}};
  const auto cfg = make_config(j, "rep");
  cmd_report(cfg);
  ASSERT_TRUE(fs::exists(path("rep/ratio_p1.asc")));
  const auto ratio = read_ascii_grid(path("rep/ratio_p1.asc"));
  for (double v : ratio.values)
    if (v != ratio.nodata) EXPECT_NEAR(v, 1.0, 1e-9);
  const auto flags = read_ascii_grid(path("rep/ratio_p1_flags.asc"));
  for (double v : flags.values)
    if (v != flags.nodata) EXPECT_DOUBLE_EQ(v, 0.0);
}

TEST_F(CliTest, MissingConfigKeysAreActionable) {
  nlohmann::json j;
  j["seed"] = 1;
  const auto cfg = make_config(j, "bad");
  try {
    cmd_diagnose(cfg);
    FAIL() << "expected error";
  } catch (const std::exception& e) {
    EXPECT_NE(std::string(e.what()).find("window"), std::string::npos);
  }

  nlohmann::json k;
  k["window"] = {{"rect", {0, 0, 1, 1}}};
  const std::string cfg_path = path("noseed.json");
  write_text_file(cfg_path, k.dump());
  k["out"] = path("x");
  write_text_file(cfg_path, k.dump());
  try {
    RunConfig::load(cfg_path, std::nullopt, std::nullopt);
    FAIL() << "expected error";
  } catch (const std::exception& e) {
    EXPECT_NE(std::string(e.what()).find("seed"), std::string::npos);
  }
}

}  // namespace
