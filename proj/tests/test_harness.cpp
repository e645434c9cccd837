#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>

#include "gcr/experiment.hpp"
#include "gcr/metrics.hpp"
#include "gcr/report.hpp"

using namespace gcr;

namespace {

RunRecord synthetic(const std::vector<long>& steps, const std::vector<double>& returns) {
  RunRecord r;
  r.env = "synthetic";
  r.mode = "test";
  r.eval_steps = steps;
  r.eval_returns = returns;
  r.diag_viol.assign(steps.size(), 0.0);
  r.diag_eq.assign(steps.size(), 0.0);
  r.diag_phi.assign(steps.size(), 0.0);
  return r;
}

}  // namespace

TEST_CASE("auc: rectangle, triangle and the three-checkpoint hand case") {
  const RunRecord flat = synthetic({0, 50, 100}, {1.0, 1.0, 1.0});
  REQUIRE(auc_at_n(flat, 100, 1) == Catch::Approx(100.0));
  const RunRecord ramp = synthetic({0, 50, 100}, {0.0, 0.5, 1.0});
  REQUIRE(auc_at_n(ramp, 100, 1) == Catch::Approx(50.0));
  const RunRecord hand = synthetic({0, 10, 20}, {0.0, 2.0, 2.0});
  REQUIRE(auc_at_n(hand, 20, 1) == Catch::Approx(30.0));
  REQUIRE_THROWS_AS(auc_at_n(hand, 21, 1), std::invalid_argument);
}

TEST_CASE("steps_to_threshold: immediate, clipped and interior crossings") {
  const RunRecord rec = synthetic({10, 20, 30, 40}, {0.0, 1.0, 5.0, 6.0});
  REQUIRE(steps_to_threshold(rec, -1.0, 40, 1) == 10);   // below all returns
  REQUIRE(steps_to_threshold(rec, 100.0, 40, 1) == 40);  // never reached -> n
  REQUIRE(steps_to_threshold(rec, 4.0, 40, 1) == 30);    // third checkpoint
}

TEST_CASE("final_return: constant, last-20% and degenerate") {
  const RunRecord c = synthetic({1, 2, 3}, {2.5, 2.5, 2.5});
  REQUIRE(final_return(c) == Catch::Approx(2.5));
  std::vector<long> steps(10);
  std::vector<double> rets(10, 0.0);
  for (int i = 0; i < 10; ++i) steps[i] = i + 1;
  rets[8] = 4.0;
  rets[9] = 6.0;
  REQUIRE(final_return(synthetic(steps, rets)) == Catch::Approx(5.0));
  REQUIRE(final_return(synthetic({7}, {3.0})) == Catch::Approx(3.0));
}

TEST_CASE("bootstrap_ci: degenerate, two-point edges and reproducibility") {
  const auto [lo, hi] = bootstrap_ci({3.0, 3.0, 3.0}, 500, 0.95, 1);
  REQUIRE(lo == 3.0);
  REQUIRE(hi == 3.0);
  const auto [l2, h2] = bootstrap_ci({0.0, 10.0}, 20000, 0.95, 7);
  REQUIRE(l2 == Catch::Approx(0.0).margin(1e-9));
  REQUIRE(h2 == Catch::Approx(10.0).margin(1e-9));
  const auto a = bootstrap_ci({1.0, 2.0, 5.0}, 1000, 0.95, 3);
  const auto b = bootstrap_ci({1.0, 2.0, 5.0}, 1000, 0.95, 3);
  REQUIRE(a == b);
  REQUIRE_THROWS_AS(bootstrap_ci({1.0}, 100), std::invalid_argument);
}

TEST_CASE("within-window variance distinguishes flat from oscillating series") {
  std::vector<long> steps(30);
  std::vector<double> flat(30, 1.0), osc(30);
  for (int i = 0; i < 30; ++i) {
    steps[i] = i + 1;
    osc[i] = i % 2 ? 1.0 : -1.0;
  }
  REQUIRE(within_window_variance(synthetic(steps, flat), 10) == 0.0);
  REQUIRE(within_window_variance(synthetic(steps, osc), 10) > 0.5);
}

TEST_CASE("smoothing window centers and clips") {
  const std::vector<double> sm = smooth_returns({0.0, 3.0, 6.0}, 3);
  REQUIRE(sm[0] == Catch::Approx(1.5));  // clipped at the left edge
  REQUIRE(sm[1] == Catch::Approx(3.0));
  REQUIRE(sm[2] == Catch::Approx(4.5));
}

TEST_CASE("config round trip and hashing") {
  ExperimentConfig cfg;
  cfg.env = "e4_noisy_rps_chain";
  cfg.mode = "sym_only";
  cfg.seeds = {4, 5, 6};
  cfg.soft.lambda_ord = 0.75;
  cfg.envp.rps.eta = 0.3;
  const std::string text = serialize_config(cfg);
  const ExperimentConfig back = parse_config_text(text);
  REQUIRE(back.env == cfg.env);
  REQUIRE(back.mode == cfg.mode);
  REQUIRE(back.seeds == cfg.seeds);
  REQUIRE(back.soft.lambda_ord == cfg.soft.lambda_ord);
  REQUIRE(back.envp.rps.eta == cfg.envp.rps.eta);
  REQUIRE(config_hash(back) == config_hash(cfg));
  ExperimentConfig other = cfg;
  other.soft.lambda_ord = 0.5;
  REQUIRE(config_hash(other) != config_hash(cfg));
}

TEST_CASE("config parser rejects unknown keys and bad values") {
  REQUIRE_THROWS_AS(parse_config_text("unknown_knob = 3\n"), std::invalid_argument);
  REQUIRE_THROWS_AS(parse_config_text("mode = warp_speed\n"), std::invalid_argument);
  const ExperimentConfig ok = parse_config_text("# comment\nenv = e2_button_perm\nbatch = 8\n");
  REQUIRE(ok.env == "e2_button_perm");
  REQUIRE(ok.soft.batch == 8);
}

TEST_CASE("record round trip through a file") {
  RunRecord rec = synthetic({100, 200}, {0.123456789012345, -7.5});
  rec.env = "e4_noisy_rps_chain";
  rec.mode = "soft";
  rec.seed = 17;
  rec.config_hash = 0xabcdef;
  rec.total_steps = 200;
  rec.diag_viol = {0.5, 0.25};
  rec.diag_eq = {0.0, 1e-17};
  rec.diag_phi = {2.0, 0.0};
  const auto path = std::filesystem::temp_directory_path() / "gcr_test_record.rec";
  save_record(rec, path.string());
  const RunRecord back = load_record(path.string());
  REQUIRE(serialize_record(back) == serialize_record(rec));
  std::filesystem::remove(path);
  REQUIRE_THROWS_AS(load_record("/nonexistent/gcr.rec"), std::invalid_argument);
}

TEST_CASE("metrics csv is schema-stable and matches auc_at_n") {
  const RunRecord a = synthetic({0, 10, 20}, {1.0, 1.0, 1.0});
  const RunRecord b = synthetic({0, 10, 20}, {2.0, 2.0, 2.0});
  const std::string csv = metrics_csv({a, b}, 0.5, 1);
  std::istringstream is(csv);
  std::string line;
  std::getline(is, line);
  REQUIRE(line == "env,mode,seed,auc,steps_to_thr,final_return");
  std::getline(is, line);
  REQUIRE(line.find(detail::fmt_double(auc_at_n(a, 20, 1))) != std::string::npos);
  std::getline(is, line);
  REQUIRE(line.find("40") != std::string::npos);  // auc of the constant-2 record
}

TEST_CASE("curves csv and svg render") {
  const RunRecord a = synthetic({10, 20}, {0.0, 1.0});
  const std::string csv = curves_csv({a});
  REQUIRE(csv.find("synthetic,test,0,10,0") != std::string::npos);
  const std::string svg = curves_svg({a});
  REQUIRE(svg.find("<svg") != std::string::npos);
  REQUIRE(svg.find("polyline") != std::string::npos);
  REQUIRE(svg.find("</svg>") != std::string::npos);
}

TEST_CASE("summarize aggregates across seeds") {
  const RunRecord a = synthetic({10, 20}, {1.0, 1.0});
  const RunRecord b = synthetic({10, 20}, {3.0, 3.0});
  const MetricsSummary s = summarize({a, b}, 0.0, 20, 1, 500);
  REQUIRE(s.final_return_mean == Catch::Approx(2.0));
  REQUIRE(s.worst_seed_final == Catch::Approx(1.0));
  REQUIRE(s.ci_final.first >= 1.0);
  REQUIRE(s.ci_final.second <= 3.0);
}

TEST_CASE("median helper") {
  REQUIRE(median({3.0, 1.0, 2.0}) == 2.0);
  REQUIRE(median({4.0, 1.0, 2.0, 3.0}) == 2.5);
}
