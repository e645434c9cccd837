#pragma once

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "gcr/common.hpp"
#include "gcr/envs.hpp"
#include "gcr/trainer.hpp"

namespace gcr {

// Full experiment description. Serialized as flat `key = value` lines;
// unknown keys are errors so configs cannot silently drift.
struct ExperimentConfig {
  std::string env = "e4_noisy_rps_chain";
  std::string mode = "soft";
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
  long total_steps = 20000;
  long eval_every = 0;  // 0: total_steps/100
  int eval_episodes = 20;
  double threshold = 18.0;
  int window = 5;
  SoftConfig soft;
  HardConfig hard;
  EnvParams envp;
};

namespace detail {

inline std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

inline std::string serialize_config(const ExperimentConfig& c) {
  std::ostringstream os;
  const auto put = [&](const std::string& k, const std::string& v) { os << k << " = " << v << "\n"; };
  const auto putd = [&](const std::string& k, double v) { put(k, detail::fmt_double(v)); };
  const auto puti = [&](const std::string& k, long v) { put(k, std::to_string(v)); };
  put("env", c.env);
  put("mode", c.mode);
  {
    std::ostringstream ss;
    for (std::size_t i = 0; i < c.seeds.size(); ++i) ss << (i ? "," : "") << c.seeds[i];
    put("seeds", ss.str());
  }
  puti("total_steps", c.total_steps);
  puti("eval_every", c.eval_every);
  puti("eval_episodes", c.eval_episodes);
  putd("threshold", c.threshold);
  puti("window", c.window);
  putd("lambda_sym", c.soft.lambda_sym);
  putd("lambda_dag", c.soft.lambda_dag);
  putd("lambda_ord", c.soft.lambda_ord);
  putd("gamma_grp", c.soft.gamma_grp);
  putd("gamma_perm", c.soft.gamma_perm);
  putd("gamma_div", c.soft.gamma_div);
  putd("mu_start", c.soft.mu_schedule.start);
  putd("mu_end", c.soft.mu_schedule.end);
  puti("mu_horizon", c.soft.mu_schedule.horizon);
  putd("ord_start_frac", c.soft.ord_start_frac);
  putd("delta", c.soft.delta);
  putd("tau", c.soft.tau);
  puti("knn_k", c.soft.knn_k);
  putd("percentile_p", c.soft.percentile_p);
  putd("min_score", c.soft.min_score);
  puti("t_iso", c.soft.t_iso);
  putd("lr_q", c.soft.lr_q);
  putd("lr_bank", c.soft.lr_bank);
  putd("lr_iso", c.soft.lr_iso);
  putd("lambda_rank", c.soft.lambda_rank);
  putd("eps_start", c.soft.epsilon_schedule.start);
  putd("eps_end", c.soft.epsilon_schedule.end);
  puti("eps_horizon", c.soft.epsilon_schedule.horizon);
  puti("target_sync", c.soft.target_sync);
  puti("batch", c.soft.batch);
  puti("buffer_cap", c.soft.buffer_cap);
  puti("bank_k", c.soft.bank_k);
  puti("sinkhorn_iters", c.soft.sinkhorn_iters);
  putd("sinkhorn_temp", c.soft.sinkhorn_temp);
  putd("sigma_loc", c.soft.sigma_loc);
  putd("tau_loc", c.soft.tau_loc);
  putd("hard_eta", c.hard.eta);
  putd("hard_eta_mu", c.hard.eta_mu);
  putd("hard_lambda", c.hard.lambda);
  putd("hard_gate_threshold", c.hard.gate_threshold);
  puti("hard_group_period_r", c.hard.group_period_r);
  putd("hard_eps_damp", c.hard.eps_damp);
  putd("hard_xi_active", c.hard.xi_active);
  putd("e1_p_asym", c.envp.grid.p_asym);
  putd("e1_eps_noise", c.envp.grid.eps_noise);
  putd("e1_step_reward", c.envp.grid.step_reward);
  putd("e1_goal_reward", c.envp.grid.goal_reward);
  puti("e1_max_steps", c.envp.grid.max_steps);
  putd("e1_gamma", c.envp.grid.gamma);
  putd("e4_eta", c.envp.rps.eta);
  putd("e4_step_cost", c.envp.rps.step_cost);
  putd("e4_goal_reward", c.envp.rps.goal_reward);
  puti("e4_max_steps", c.envp.rps.max_steps);
  putd("e4_gamma", c.envp.rps.gamma);
  putd("e2_wrong_press_reward", c.envp.button.wrong_press_reward);
  putd("e2_success_reward", c.envp.button.success_reward);
  puti("e2_max_steps", c.envp.button.max_steps);
  putd("e2_gamma", c.envp.button.gamma);
  return os.str();
}

inline std::uint64_t config_hash(const ExperimentConfig& c) { return fnv1a64(serialize_config(c)); }

// Parses `key = value` text (also accepts `key value`); '#' starts a comment.
inline ExperimentConfig parse_config_text(const std::string& text) {
  ExperimentConfig c;
  std::map<std::string, std::string> kv;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    std::string key, eq, value;
    std::istringstream ls(line);
    if (!(ls >> key)) continue;
    if (!(ls >> eq)) throw std::invalid_argument("config line " + std::to_string(lineno) + ": missing value");
    if (eq == "=") {
      if (!(ls >> value))
        throw std::invalid_argument("config line " + std::to_string(lineno) + ": missing value");
    } else {
      value = eq;
    }
    kv[key] = value;
  }
  const auto take = [&](const std::string& k) {
    const auto it = kv.find(k);
    if (it == kv.end()) return std::string();
    const std::string v = it->second;
    kv.erase(it);
    return v;
  };
  const auto set_d = [&](const std::string& k, double& slot) {
    const std::string v = take(k);
    if (!v.empty()) slot = std::stod(v);
  };
  const auto set_l = [&](const std::string& k, long& slot) {
    const std::string v = take(k);
    if (!v.empty()) slot = std::stol(v);
  };
  const auto set_i = [&](const std::string& k, int& slot) {
    const std::string v = take(k);
    if (!v.empty()) slot = std::stoi(v);
  };
  const auto set_s = [&](const std::string& k, std::string& slot) {
    const std::string v = take(k);
    if (!v.empty()) slot = v;
  };
  set_s("env", c.env);
  set_s("mode", c.mode);
  {
    const std::string v = take("seeds");
    if (!v.empty()) {
      c.seeds.clear();
      std::istringstream ss(v);
      std::string tok;
      while (std::getline(ss, tok, ',')) c.seeds.push_back(std::stoull(tok));
      require(!c.seeds.empty(), "config: empty seeds list");
    }
  }
  set_l("total_steps", c.total_steps);
  set_l("eval_every", c.eval_every);
  set_i("eval_episodes", c.eval_episodes);
  set_d("threshold", c.threshold);
  set_i("window", c.window);
  set_d("lambda_sym", c.soft.lambda_sym);
  set_d("lambda_dag", c.soft.lambda_dag);
  set_d("lambda_ord", c.soft.lambda_ord);
  set_d("gamma_grp", c.soft.gamma_grp);
  set_d("gamma_perm", c.soft.gamma_perm);
  set_d("gamma_div", c.soft.gamma_div);
  set_d("mu_start", c.soft.mu_schedule.start);
  set_d("mu_end", c.soft.mu_schedule.end);
  set_l("mu_horizon", c.soft.mu_schedule.horizon);
  set_d("ord_start_frac", c.soft.ord_start_frac);
  set_d("delta", c.soft.delta);
  set_d("tau", c.soft.tau);
  set_i("knn_k", c.soft.knn_k);
  set_d("percentile_p", c.soft.percentile_p);
  set_d("min_score", c.soft.min_score);
  set_i("t_iso", c.soft.t_iso);
  set_d("lr_q", c.soft.lr_q);
  set_d("lr_bank", c.soft.lr_bank);
  set_d("lr_iso", c.soft.lr_iso);
  set_d("lambda_rank", c.soft.lambda_rank);
  set_d("eps_start", c.soft.epsilon_schedule.start);
  set_d("eps_end", c.soft.epsilon_schedule.end);
  set_l("eps_horizon", c.soft.epsilon_schedule.horizon);
  set_i("target_sync", c.soft.target_sync);
  set_i("batch", c.soft.batch);
  set_i("buffer_cap", c.soft.buffer_cap);
  set_i("bank_k", c.soft.bank_k);
  set_i("sinkhorn_iters", c.soft.sinkhorn_iters);
  set_d("sinkhorn_temp", c.soft.sinkhorn_temp);
  set_d("sigma_loc", c.soft.sigma_loc);
  set_d("tau_loc", c.soft.tau_loc);
  set_d("hard_eta", c.hard.eta);
  set_d("hard_eta_mu", c.hard.eta_mu);
  set_d("hard_lambda", c.hard.lambda);
  set_d("hard_gate_threshold", c.hard.gate_threshold);
  set_i("hard_group_period_r", c.hard.group_period_r);
  set_d("hard_eps_damp", c.hard.eps_damp);
  set_d("hard_xi_active", c.hard.xi_active);
  set_d("e1_p_asym", c.envp.grid.p_asym);
  set_d("e1_eps_noise", c.envp.grid.eps_noise);
  set_d("e1_step_reward", c.envp.grid.step_reward);
  set_d("e1_goal_reward", c.envp.grid.goal_reward);
  set_i("e1_max_steps", c.envp.grid.max_steps);
  set_d("e1_gamma", c.envp.grid.gamma);
  set_d("e4_eta", c.envp.rps.eta);
  set_d("e4_step_cost", c.envp.rps.step_cost);
  set_d("e4_goal_reward", c.envp.rps.goal_reward);
  set_i("e4_max_steps", c.envp.rps.max_steps);
  set_d("e4_gamma", c.envp.rps.gamma);
  set_d("e2_wrong_press_reward", c.envp.button.wrong_press_reward);
  set_d("e2_success_reward", c.envp.button.success_reward);
  set_i("e2_max_steps", c.envp.button.max_steps);
  set_d("e2_gamma", c.envp.button.gamma);
  if (!kv.empty())
    throw std::invalid_argument("config: unknown key '" + kv.begin()->first + "'");
  parse_mode(c.mode);  // validates
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), "cannot open config file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

// --- record files ----------------------------------------------------------
// Line-delimited text: a header block followed by one checkpoint per line
//   C <step> <return> <viol_mean> <eq_mean> <phi_mean>
// Doubles are printed with 17 significant digits so records round-trip and
// identical runs produce byte-identical files.

inline std::string serialize_record(const RunRecord& rec) {
  std::ostringstream os;
  os << "# gcr-record v1\n";
  os << "env " << rec.env << "\n";
  os << "mode " << rec.mode << "\n";
  os << "seed " << rec.seed << "\n";
  os << "config_hash " << rec.config_hash << "\n";
  os << "total_steps " << rec.total_steps << "\n";
  for (std::size_t i = 0; i < rec.eval_steps.size(); ++i) {
    os << "C " << rec.eval_steps[i] << " " << detail::fmt_double(rec.eval_returns[i]) << " "
       << detail::fmt_double(rec.diag_viol[i]) << " " << detail::fmt_double(rec.diag_eq[i]) << " "
       << detail::fmt_double(rec.diag_phi[i]) << "\n";
  }
  return os.str();
}

inline void save_record(const RunRecord& rec, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), "cannot write record file '" + path + "'");
  out << serialize_record(rec);
}

inline RunRecord load_record(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), "cannot open record file '" + path + "'");
  RunRecord rec;
  std::string line;
  bool header_seen = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      require(line.find("gcr-record") != std::string::npos, "record: bad magic in '" + path + "'");
      header_seen = true;
      continue;
    }
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "env") {
      ls >> rec.env;
    } else if (tag == "mode") {
      ls >> rec.mode;
    } else if (tag == "seed") {
      ls >> rec.seed;
    } else if (tag == "config_hash") {
      ls >> rec.config_hash;
    } else if (tag == "total_steps") {
      ls >> rec.total_steps;
    } else if (tag == "C") {
      long step;
      double ret, viol, eq, phi;
      ls >> step >> ret >> viol >> eq >> phi;
      require(!ls.fail(), "record: malformed checkpoint line in '" + path + "'");
      rec.eval_steps.push_back(step);
      rec.eval_returns.push_back(ret);
      rec.diag_viol.push_back(viol);
      rec.diag_eq.push_back(eq);
      rec.diag_phi.push_back(phi);
    } else {
      throw std::invalid_argument("record: unknown tag '" + tag + "' in '" + path + "'");
    }
  }
  require(header_seen, "record: missing header in '" + path + "'");
  return rec;
}

// Runs one seed of the configured experiment.
inline RunRecord run_experiment(const ExperimentConfig& cfg, std::uint64_t seed) {
  RunOptions opt;
  opt.total_steps = cfg.total_steps;
  opt.eval_every = cfg.eval_every;
  opt.eval_episodes = cfg.eval_episodes;
  opt.config_hash = config_hash(cfg);
  return train_run(cfg.env, parse_mode(cfg.mode), cfg.soft, cfg.hard, cfg.envp, seed, opt);
}

}  // namespace gcr
