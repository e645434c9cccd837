#include <catch2/catch_amalgamated.hpp>

#include "gcr/envs.hpp"
#include "gcr/mdp.hpp"
#include "gcr/order.hpp"
#include "gcr/trainer.hpp"

using namespace gcr;

TEST_CASE("grid: observation dynamics match the identity MDP under any episode frame") {
  RotMirrorGrid env;
  const TabularMdp mdp = env.export_mdp();
  Rng rng(12);
  for (int episode = 0; episode < 20; ++episode) {
    int s = env.reset(rng());
    for (int t = 0; t < 50; ++t) {
      const int a = std::uniform_int_distribution<int>(0, 3)(rng);
      const StepResult r = env.step(s, a);
      REQUIRE(mdp.transition[a](s, r.next_state) == 1.0);  // deterministic at p_asym = 0
      REQUIRE(r.reward == mdp.reward(s, a));
      if (r.done) break;
      s = r.next_state;
    }
  }
}

TEST_CASE("grid: moving right from a free interior cell") {
  RotMirrorGrid env;
  const TabularMdp mdp = env.export_mdp();
  bool checked = false;
  for (int y = 1; y < 18 && !checked; ++y) {
    for (int x = 1; x < 17 && !checked; ++x) {
      const int s = RotMirrorGrid::cell(x, y);
      const int t = RotMirrorGrid::cell(x + 1, y);
      if (env.is_obstacle(s) || env.is_obstacle(t) || s == env.goal_state() ||
          t == env.goal_state())
        continue;
      REQUIRE(mdp.transition[3](s, t) == 1.0);  // action 3 = right
      REQUIRE(mdp.reward(s, 3) == -1.0);
      checked = true;
    }
  }
  REQUIRE(checked);
}

TEST_CASE("grid export: stochastic rows normalize and goal is terminal") {
  RotMirrorGridParams p;
  p.p_asym = 0.5;
  p.eps_noise = 0.2;
  RotMirrorGrid env(p);
  const TabularMdp mdp = env.export_mdp();
  mdp.validate();
  REQUIRE(mdp.terminal[env.goal_state()] == 1);
}

TEST_CASE("grid oracle symmetries satisfy invariance exactly") {
  RotMirrorGrid env;
  const TabularMdp mdp = env.export_mdp();
  const auto syms = env.oracle_symmetries();
  REQUIRE(syms.size() == 6);
  REQUIRE(syms[0].name == "identity");
  for (int s = 0; s < mdp.n_states; ++s) REQUIRE(syms[0].state_map[s] == s);

  for (const OracleSymmetry& g : syms) {
    for (int s = 0; s < mdp.n_states; ++s) {
      for (int a = 0; a < 4; ++a) {
        const int ts = g.state_map[s];
        const int ta = g.action_perm[a];
        REQUIRE(mdp.reward(ts, ta) == mdp.reward(s, a));
        for (int s2 = 0; s2 < mdp.n_states; ++s2)
          REQUIRE(std::abs(mdp.transition[ta](ts, g.state_map[s2]) - mdp.transition[a](s, s2)) <=
                  1e-12);
      }
    }
  }
}

TEST_CASE("grid: mirror_h swaps left and right") {
  RotMirrorGrid env;
  const auto syms = env.oracle_symmetries();
  const auto mh = std::find_if(syms.begin(), syms.end(),
                               [](const OracleSymmetry& g) { return g.name == "mirror_h"; });
  REQUIRE(mh != syms.end());
  REQUIRE(mh->action_perm[2] == 3);
  REQUIRE(mh->action_perm[3] == 2);
  REQUIRE(mh->action_perm[0] == 0);
  REQUIRE(mh->action_perm[1] == 1);
}

TEST_CASE("grid: rot90 composed four times is the identity pair") {
  RotMirrorGrid env;
  const auto syms = env.oracle_symmetries();
  const auto rot = std::find_if(syms.begin(), syms.end(),
                                [](const OracleSymmetry& g) { return g.name == "rot90"; });
  REQUIRE(rot != syms.end());
  for (int s = 0; s < env.n_states(); ++s) {
    int t = s;
    for (int i = 0; i < 4; ++i) t = rot->state_map[t];
    REQUIRE(t == s);
  }
  for (int a = 0; a < 4; ++a) {
    int b = a;
    for (int i = 0; i < 4; ++i) b = rot->action_perm[b];
    REQUIRE(b == a);
  }
}

TEST_CASE("grid: symmetry breaking disables the oracle list") {
  RotMirrorGridParams p;
  p.p_asym = 0.3;
  RotMirrorGrid env(p);
  REQUIRE(env.oracle_symmetries().empty());
}

TEST_CASE("grid: free cells are mutually reachable in the export") {
  RotMirrorGrid env;
  const TabularMdp mdp = env.export_mdp();
  // BFS over positive-probability moves from the goal's neighborhood
  std::vector<int> seen(mdp.n_states, 0);
  std::vector<int> stack = {env.goal_state()};
  seen[env.goal_state()] = 1;
  while (!stack.empty()) {
    const int s = stack.back();
    stack.pop_back();
    for (int a = 0; a < 4; ++a)
      for (int t = 0; t < mdp.n_states; ++t)
        if (mdp.transition[a](t, s) > 0.0 && !seen[t] && !env.is_obstacle(t)) {
          seen[t] = 1;
          stack.push_back(t);
        }
  }
  for (int s = 0; s < mdp.n_states; ++s)
    if (!env.is_obstacle(s)) REQUIRE(seen[s] == 1);
}

TEST_CASE("rps chain: eta=0 is a deterministic monotone chain") {
  NoisyRpsChain env;
  const TabularMdp mdp = env.export_mdp();
  mdp.validate();
  REQUIRE(mdp.n_states == 13);
  for (int k = 0; k < 9; ++k) REQUIRE(mdp.transition[2](k, k + 1) == 1.0);
  // values strictly increase toward the goal
  const QModel q = solve_q_star(mdp, 1e-10);
  for (int k = 0; k + 1 < 9; ++k) REQUIRE(q.vmax(k) < q.vmax(k + 1));
  // rooms unreachable from the chain
  for (int a = 0; a < 3; ++a)
    for (int s = 0; s < 10; ++s)
      for (int m = 10; m < 13; ++m) REQUIRE(mdp.transition[a](s, m) == 0.0);
}

TEST_CASE("rps chain: forward from state k reaches k+1") {
  NoisyRpsChain env;
  int s = env.reset(1);
  REQUIRE(s == 0);
  for (int k = 0; k < 9; ++k) {
    const StepResult r = env.step(k, 2);
    REQUIRE(r.next_state == k + 1);
  }
}

TEST_CASE("rps payoffs are cyclic") {
  for (int a = 0; a < 3; ++a) {
    int beaten = 0;
    for (int m = 0; m < 3; ++m)
      if (NoisyRpsChain::beats(a, m)) ++beaten;
    REQUIRE(beaten == 1);
    REQUIRE_FALSE(NoisyRpsChain::beats(a, a));
  }
  REQUIRE(NoisyRpsChain::beats(0, 2));  // rock > scissors
  REQUIRE(NoisyRpsChain::beats(2, 1));  // scissors > paper
  REQUIRE(NoisyRpsChain::beats(1, 0));  // paper > rock
}

TEST_CASE("rps chain: empirical transitions match the export within 3 sigma") {
  NoisyRpsChainParams p;
  p.eta = 0.3;
  NoisyRpsChain env(p);
  const TabularMdp mdp = env.export_mdp();
  Rng rng(5150);
  const int samples = 100000;
  for (const auto& [s, a] : std::vector<std::pair<int, int>>{{3, 2}, {6, 2}, {11, 1}}) {
    std::vector<int> counts(mdp.n_states, 0);
    for (int t = 0; t < samples; ++t) {
      env.reset(rng());
      ++counts[env.step(s, a).next_state];
    }
    for (int s2 = 0; s2 < mdp.n_states; ++s2) {
      const double prob = mdp.transition[a](s, s2);
      const double sigma = std::sqrt(prob * (1.0 - prob) / samples);
      REQUIRE(std::abs(counts[s2] / static_cast<double>(samples) - prob) <= 3.0 * sigma + 1e-12);
    }
  }
}

TEST_CASE("rps chain: on-policy batches propose cyclic candidates") {
  NoisyRpsChainParams p;
  p.eta = 0.3;
  NoisyRpsChain env(p);
  QModel q = QModel::make_linear_one_hot(env.n_states(), env.n_actions());
  Rng rng(808);
  int cyclic_batches = 0;
  for (int b = 0; b < 50; ++b) {
    TransitionBatch batch;
    int s = env.reset(rng());
    while (batch.size() < 64) {
      const int a = std::uniform_int_distribution<int>(0, 2)(rng);
      const StepResult r = env.step(s, a);
      batch.entries.push_back({s, a, r.reward, r.next_state, r.done});
      s = r.done ? env.reset(rng()) : r.next_state;
    }
    const auto [targets, nudges] = td_targets(batch, q, env.gamma());
    Mat features(batch.size(), env.n_states());
    std::vector<Vec> rows(batch.size());
    for (int i = 0; i < batch.size(); ++i) {
      features.row(i) = q.feature(batch.entries[i].s).transpose();
      rows[i] = q.values(batch.entries[i].s2);
    }
    const Vec scores = preference_scores(nudges, rows, 1.0);
    const auto cands = knn_candidates(features, scores, nudges, 5, 50.0, 1.0);
    // cycle detection on the raw candidate graph
    std::vector<std::vector<int>> adj(batch.size());
    std::vector<int> indeg(batch.size(), 0);
    for (const PrefEdge& e : cands) {
      adj[e.u].push_back(e.v);
      ++indeg[e.v];
    }
    std::vector<int> stack;
    for (int i = 0; i < batch.size(); ++i)
      if (indeg[i] == 0) stack.push_back(i);
    int seen = 0;
    while (!stack.empty()) {
      const int u = stack.back();
      stack.pop_back();
      ++seen;
      for (int v : adj[u])
        if (--indeg[v] == 0) stack.push_back(v);
    }
    if (seen < batch.size()) ++cyclic_batches;
  }
  REQUIRE(cyclic_batches >= 1);
}

TEST_CASE("button env: correct presses advance, wrong presses reset") {
  ButtonPermTabular env;
  Rng rng(7);
  int s = env.reset(rng());
  REQUIRE(s == 0);
  const auto& sigma = env.sigma();
  const auto& target = env.target_sequence();
  StepResult r = env.step(0, sigma[target[0]]);
  REQUIRE(r.next_state == 1);
  // a wrong press from state 1 resets; pick any index that is not the right one
  const int right = sigma[target[1]];
  const int wrong = right == 0 ? 1 : 0;
  r = env.step(1, wrong);
  REQUIRE(r.next_state == 0);
  REQUIRE(r.reward < 0.0);
}

TEST_CASE("button env: completing the sequence succeeds and the export matches") {
  ButtonPermTabular env;
  Rng rng(99);
  for (int episode = 0; episode < 5; ++episode) {
    int s = env.reset(rng());
    const TabularMdp mdp = env.export_mdp();
    mdp.validate();
    REQUIRE(mdp.n_states == static_cast<int>(env.target_sequence().size()) + 1);
    double total = 0.0;
    bool done = false;
    while (!done) {
      const int a = env.sigma()[env.target_sequence()[s]];
      const StepResult r = env.step(s, a);
      REQUIRE(mdp.transition[a](s, r.next_state) == 1.0);
      REQUIRE(r.reward == mdp.reward(s, a));
      total += r.reward;
      s = r.next_state;
      done = r.done;
    }
    REQUIRE(total == 1.0);
    REQUIRE(s == mdp.n_states - 1);
  }
}

TEST_CASE("envs reject invalid ids") {
  NoisyRpsChain rps;
  rps.reset(0);
  REQUIRE_THROWS_AS(rps.step(99, 0), std::invalid_argument);
  REQUIRE_THROWS_AS(rps.step(0, 7), std::invalid_argument);
  RotMirrorGrid grid;
  grid.reset(0);
  REQUIRE_THROWS_AS(grid.step(-1, 0), std::invalid_argument);
  REQUIRE_THROWS_AS(grid.step(0, 4), std::invalid_argument);
}

TEST_CASE("make_env dispatch and unknown names") {
  REQUIRE(make_env("e1_rotmirror_grid")->name() == "e1_rotmirror_grid");
  REQUIRE(make_env("e4_noisy_rps_chain")->n_actions() == 3);
  REQUIRE(make_env("e2_button_perm")->n_actions() == 6);
  REQUIRE_THROWS_AS(make_env("atari_pong"), std::invalid_argument);
}

TEST_CASE("episodes are seed-deterministic") {
  for (const char* name : {"e1_rotmirror_grid", "e4_noisy_rps_chain", "e2_button_perm"}) {
    auto a = make_env(name);
    auto b = make_env(name);
    int sa = a->reset(1234);
    int sb = b->reset(1234);
    REQUIRE(sa == sb);
    for (int t = 0; t < 40; ++t) {
      const int act = t % a->n_actions();
      const StepResult ra = a->step(sa, act);
      const StepResult rb = b->step(sb, act);
      REQUIRE(ra.next_state == rb.next_state);
      REQUIRE(ra.reward == rb.reward);
      REQUIRE(ra.done == rb.done);
      if (ra.done) break;
      sa = ra.next_state;
      sb = rb.next_state;
    }
  }
}
