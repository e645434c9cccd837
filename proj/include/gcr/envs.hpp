#pragma once

#include <algorithm>
#include <array>
#include <memory>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "gcr/common.hpp"
#include "gcr/mdp.hpp"

namespace gcr {

struct StepResult {
  int next_state = 0;
  double reward = 0.0;
  bool done = false;
};

// Paired (state map, action relabel) witnessing Def-style MDP invariance:
// r(T s, Pi a) = r(s, a) and P(. | T s, Pi a) is the pushforward of P(. | s, a).
struct OracleSymmetry {
  std::string name;
  std::vector<int> state_map;
  std::vector<int> action_perm;
};

// Episodic tabular environment. reset() starts a new episode (sampling any
// per-episode latent structure) and returns the start state; step() advances
// and reports done at terminal states or the episode cap. export_mdp()
// produces the dense MDP matching step() in distribution across episodes.
class Env {
 public:
  virtual ~Env() = default;
  virtual std::string name() const = 0;
  virtual int n_states() const = 0;
  virtual int n_actions() const = 0;
  virtual double gamma() const = 0;
  virtual int reset(std::uint64_t seed) = 0;
  virtual StepResult step(int state, int action) = 0;
  virtual TabularMdp export_mdp() const = 0;
  virtual std::vector<OracleSymmetry> oracle_symmetries() const { return {}; }
  // low-dimensional coordinate embedding, one row per state; used for
  // neighborhood construction in the order branch
  virtual Mat coordinate_features() const {
    return Mat::Identity(n_states(), n_states());
  }
};

// ---------------------------------------------------------------------------
// E1: rotation/mirror gridworld.
//
// 19x19 grid, four move actions, obstacles arranged symmetrically under the
// dihedral transforms so that every per-episode observation transform induces
// exactly the identity MDP when p_asym = 0. Each episode samples one of
// {identity, rot90, rot180, rot270, mirror_h, mirror_v} as the observation
// frame; actions are relabeled coherently. With probability p_asym an episode
// additionally perturbs one (state, action): that transition is redirected to
// a uniformly chosen free neighbor with probability eps_noise.
// Rewards: step_reward per move, plus goal_reward on reaching the goal.
// Obstacle cells remain in the state space as unreachable zero self-loops.
// ---------------------------------------------------------------------------

struct RotMirrorGridParams {
  double p_asym = 0.0;
  double eps_noise = 0.1;
  double step_reward = -1.0;
  double goal_reward = 0.0;
  int max_steps = 400;
  double gamma = 0.99;
};

class RotMirrorGrid final : public Env {
 public:
  static constexpr int kSize = 19;
  enum Transform { kIdentity = 0, kRot90, kRot180, kRot270, kMirrorH, kMirrorV };

  explicit RotMirrorGrid(RotMirrorGridParams params = {}) : params_(params) {
    require(params_.p_asym >= 0.0 && params_.p_asym <= 1.0, "RotMirrorGrid: bad p_asym");
    require(params_.eps_noise >= 0.0 && params_.eps_noise <= 1.0, "RotMirrorGrid: bad eps_noise");
    build_layout();
  }

  std::string name() const override { return "e1_rotmirror_grid"; }
  int n_states() const override { return kSize * kSize; }
  int n_actions() const override { return 4; }
  double gamma() const override { return params_.gamma; }
  int goal_state() const { return goal_; }
  bool is_obstacle(int s) const { return obstacle_[s]; }

  int reset(std::uint64_t seed) override {
    rng_.seed(mix_seed(seed, 0xe1e1'e1e1ull));
    steps_ = 0;
    transform_ = static_cast<Transform>(std::uniform_int_distribution<int>(0, 5)(rng_));
    perturbed_ = std::uniform_real_distribution<double>(0.0, 1.0)(rng_) < params_.p_asym;
    if (perturbed_) {
      std::uniform_int_distribution<int> pick_state(0, static_cast<int>(free_cells_.size()) - 1);
      do {
        perturb_state_ = free_cells_[pick_state(rng_)];
      } while (perturb_state_ == goal_);
      perturb_action_ = std::uniform_int_distribution<int>(0, 3)(rng_);
      const std::vector<int>& nb = neighbors_[perturb_state_];
      perturb_target_ =
          nb.empty() ? perturb_state_
                     : nb[std::uniform_int_distribution<int>(0, static_cast<int>(nb.size()) - 1)(rng_)];
    }
    int start = goal_;
    std::uniform_int_distribution<int> pick(0, static_cast<int>(free_cells_.size()) - 1);
    while (start == goal_) start = free_cells_[pick(rng_)];
    return apply_transform(transform_, start);
  }

  StepResult step(int state, int action) override {
    require(state >= 0 && state < n_states(), "RotMirrorGrid::step: state out of range");
    require(action >= 0 && action < 4, "RotMirrorGrid::step: action out of range");
    const int latent = apply_transform(inverse_of(transform_), state);
    require(!obstacle_[latent], "RotMirrorGrid::step: state is an obstacle cell");
    const int latent_action = inv_action_perm(transform_, action);
    int next = latent;
    if (latent != goal_) {
      next = move(latent, latent_action);
      if (perturbed_ && latent == perturb_state_ && latent_action == perturb_action_) {
        if (std::uniform_real_distribution<double>(0.0, 1.0)(rng_) < params_.eps_noise)
          next = perturb_target_;
      }
    }
    ++steps_;
    StepResult out;
    out.next_state = apply_transform(transform_, next);
    if (latent == goal_) {
      out.reward = 0.0;
    } else {
      out.reward = params_.step_reward + (next == goal_ ? params_.goal_reward : 0.0);
    }
    out.done = next == goal_ || steps_ >= params_.max_steps;
    return out;
  }

  TabularMdp export_mdp() const override {
    TabularMdp mdp;
    mdp.n_states = n_states();
    mdp.n_actions = 4;
    mdp.gamma = params_.gamma;
    mdp.reward = Mat::Zero(mdp.n_states, 4);
    mdp.terminal.assign(mdp.n_states, 0);
    for (int a = 0; a < 4; ++a) mdp.transition.push_back(Mat::Zero(mdp.n_states, mdp.n_states));
    const int n_candidates = static_cast<int>(free_cells_.size()) - 1;  // goal excluded
    const double q_pick =
        n_candidates > 0 ? params_.p_asym / (static_cast<double>(n_candidates) * 4.0) : 0.0;
    for (int s = 0; s < mdp.n_states; ++s) {
      const bool inert = obstacle_[s] || s == goal_;
      if (inert) {
        mdp.terminal[s] = 1;
        for (int a = 0; a < 4; ++a) mdp.transition[a](s, s) = 1.0;
        continue;
      }
      for (int a = 0; a < 4; ++a) {
        const int nxt = move(s, a);
        const double leak = q_pick * params_.eps_noise;
        mdp.transition[a](s, nxt) += 1.0 - leak;
        const std::vector<int>& nb = neighbors_[s];
        if (nb.empty()) {
          mdp.transition[a](s, s) += leak;
        } else {
          for (int t : nb) mdp.transition[a](s, t) += leak / static_cast<double>(nb.size());
        }
        mdp.reward(s, a) = params_.step_reward + (nxt == goal_ ? params_.goal_reward : 0.0);
      }
    }
    return mdp;
  }

  // All six observation transforms as exact symmetries; only valid without
  // symmetry breaking.
  std::vector<OracleSymmetry> oracle_symmetries() const override {
    if (params_.p_asym != 0.0) return {};
    static const char* names[6] = {"identity", "rot90", "rot180", "rot270", "mirror_h", "mirror_v"};
    std::vector<OracleSymmetry> out;
    for (int t = 0; t < 6; ++t) {
      OracleSymmetry g;
      g.name = names[t];
      g.state_map.resize(n_states());
      for (int s = 0; s < n_states(); ++s)
        g.state_map[s] = apply_transform(static_cast<Transform>(t), s);
      g.action_perm.resize(4);
      for (int a = 0; a < 4; ++a) g.action_perm[a] = action_perm(static_cast<Transform>(t), a);
      out.push_back(std::move(g));
    }
    return out;
  }

  Mat coordinate_features() const override {
    Mat f(n_states(), 2);
    for (int s = 0; s < n_states(); ++s) {
      auto [x, y] = coords(s);
      f(s, 0) = (x - 9.0) / 9.0;
      f(s, 1) = (y - 9.0) / 9.0;
    }
    return f;
  }

  // Cell arithmetic is exposed for tests.
  static int cell(int x, int y) { return y * kSize + x; }
  static std::pair<int, int> coords(int s) { return {s % kSize, s / kSize}; }

  static int apply_transform(Transform t, int s) {
    auto [x, y] = coords(s);
    const int n = kSize - 1;
    switch (t) {
      case kIdentity: return cell(x, y);
      case kRot90: return cell(n - y, x);
      case kRot180: return cell(n - x, n - y);
      case kRot270: return cell(y, n - x);
      case kMirrorH: return cell(n - x, y);
      case kMirrorV: return cell(x, n - y);
    }
    return s;
  }

  static Transform inverse_of(Transform t) {
    switch (t) {
      case kRot90: return kRot270;
      case kRot270: return kRot90;
      default: return t;  // identity, rot180 and mirrors are involutions
    }
  }

  // Action offsets: 0=up (y-1), 1=down (y+1), 2=left (x-1), 3=right (x+1).
  static std::pair<int, int> action_offset(int a) {
    switch (a) {
      case 0: return {0, -1};
      case 1: return {0, 1};
      case 2: return {-1, 0};
      default: return {1, 0};
    }
  }

  // Relabel derived from the linear part of the transform, so that
  // move(T s, Pi a) = T move(s, a) on a symmetric layout.
  static int action_perm(Transform t, int a) {
    auto [dx, dy] = action_offset(a);
    int tx = dx, ty = dy;
    switch (t) {
      case kIdentity: break;
      case kRot90: tx = -dy; ty = dx; break;
      case kRot180: tx = -dx; ty = -dy; break;
      case kRot270: tx = dy; ty = -dx; break;
      case kMirrorH: tx = -dx; break;
      case kMirrorV: ty = -dy; break;
    }
    for (int b = 0; b < 4; ++b) {
      auto [bx, by] = action_offset(b);
      if (bx == tx && by == ty) return b;
    }
    return a;
  }

 private:
  void build_layout() {
    obstacle_.assign(n_states(), 0);
    goal_ = cell(9, 9);
    // base cells, closed under the full dihedral orbit to keep every
    // transform an exact automorphism of the layout
    const std::array<std::pair<int, int>, 4> base = {{{4, 2}, {7, 6}, {2, 7}, {12, 3}}};
    for (auto [x, y] : base) {
      const int s = cell(x, y);
      for (int t = 0; t < 6; ++t) obstacle_[apply_transform(static_cast<Transform>(t), s)] = 1;
      // the two diagonal mirrors complete the orbit closure
      obstacle_[cell(y, x)] = 1;
      obstacle_[cell(kSize - 1 - y, kSize - 1 - x)] = 1;
      for (int t = 0; t < 6; ++t) {
        obstacle_[apply_transform(static_cast<Transform>(t), cell(y, x))] = 1;
        obstacle_[apply_transform(static_cast<Transform>(t), cell(kSize - 1 - y, kSize - 1 - x))] = 1;
      }
    }
    obstacle_[goal_] = 0;
    free_cells_.clear();
    neighbors_.assign(n_states(), {});
    for (int s = 0; s < n_states(); ++s) {
      if (obstacle_[s]) continue;
      free_cells_.push_back(s);
      auto [x, y] = coords(s);
      for (int a = 0; a < 4; ++a) {
        auto [dx, dy] = action_offset(a);
        const int nx = x + dx, ny = y + dy;
        if (nx < 0 || ny < 0 || nx >= kSize || ny >= kSize) continue;
        if (!obstacle_[cell(nx, ny)]) neighbors_[s].push_back(cell(nx, ny));
      }
    }
  }

  static int inv_action_perm(Transform t, int a) {
    for (int b = 0; b < 4; ++b)
      if (action_perm(t, b) == a) return b;
    return a;
  }

  int move(int s, int a) const {
    auto [x, y] = coords(s);
    auto [dx, dy] = action_offset(a);
    const int nx = x + dx, ny = y + dy;
    if (nx < 0 || ny < 0 || nx >= kSize || ny >= kSize) return s;
    const int t = cell(nx, ny);
    return obstacle_[t] ? s : t;
  }

  RotMirrorGridParams params_;
  std::vector<std::uint8_t> obstacle_;
  std::vector<std::vector<int>> neighbors_;
  std::vector<int> free_cells_;
  int goal_ = 0;
  Rng rng_;
  Transform transform_ = kIdentity;
  bool perturbed_ = false;
  int perturb_state_ = 0;
  int perturb_action_ = 0;
  int perturb_target_ = 0;
  int steps_ = 0;
};

// ---------------------------------------------------------------------------
// E4: noisy rock-paper-scissors chain.
//
// States 0..9 form a goal-distance chain (9 terminal), states 10..12 are RPS
// rooms (room m = opponent plays m). Chain actions: 0=stay, 1=back,
// 2=forward (so the zero-value greedy tie does not start out optimal). With
// probability eta, forward moves from states {3, 6} detour into
// a uniformly chosen room; one room round (payoff 0 beat / -1 tie / -2 loss,
// cyclic dominance) rejoins the chain at state 4 or 7 with equal probability.
// Every step costs step_cost; entering the goal pays goal_reward.
// ---------------------------------------------------------------------------

struct NoisyRpsChainParams {
  double eta = 0.0;
  double step_cost = -0.05;
  double goal_reward = 20.0;
  int max_steps = 60;
  double gamma = 0.99;
};

class NoisyRpsChain final : public Env {
 public:
  static constexpr int kChainLen = 10;
  static constexpr int kGoal = 9;

  explicit NoisyRpsChain(NoisyRpsChainParams params = {}) : params_(params) {
    require(params_.eta >= 0.0 && params_.eta <= 1.0, "NoisyRpsChain: bad eta");
  }

  std::string name() const override { return "e4_noisy_rps_chain"; }
  int n_states() const override { return kChainLen + 3; }
  int n_actions() const override { return 3; }
  double gamma() const override { return params_.gamma; }

  // a beats m cyclically: rock(0) > scissors(2) > paper(1) > rock(0).
  static bool beats(int a, int m) {
    return (a == 0 && m == 2) || (a == 2 && m == 1) || (a == 1 && m == 0);
  }
  static double rps_payoff(int a, int m) {
    if (a == m) return -1.0;
    return beats(a, m) ? 0.0 : -2.0;
  }

  Mat coordinate_features() const override {
    Mat f = Mat::Zero(n_states(), 3);
    for (int s = 0; s < kChainLen; ++s) f(s, 0) = (s + 1.0) / kChainLen;
    for (int m = 0; m < 3; ++m) {
      f(kChainLen + m, 1) = 1.0;
      f(kChainLen + m, 2) = (m + 1.0) / 3.0;
    }
    return f;
  }

  int reset(std::uint64_t seed) override {
    rng_.seed(mix_seed(seed, 0xe4e4'e4e4ull));
    steps_ = 0;
    return 0;
  }

  StepResult step(int state, int action) override {
    require(state >= 0 && state < n_states(), "NoisyRpsChain::step: state out of range");
    require(action >= 0 && action < 3, "NoisyRpsChain::step: action out of range");
    ++steps_;
    StepResult out;
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    if (state == kGoal) {
      out.next_state = kGoal;
      out.reward = 0.0;
      out.done = true;
      return out;
    }
    if (state >= kChainLen) {
      const int room = state - kChainLen;
      out.reward = params_.step_cost + rps_payoff(action, room);
      out.next_state = unit(rng_) < 0.5 ? 4 : 7;
    } else {
      out.reward = params_.step_cost;
      int next = state;
      if (action == 2) {
        if ((state == 3 || state == 6) && unit(rng_) < params_.eta) {
          next = kChainLen + std::uniform_int_distribution<int>(0, 2)(rng_);
        } else {
          next = state + 1;
        }
      } else if (action == 1) {
        next = std::max(0, state - 1);
      }
      if (next == kGoal) out.reward += params_.goal_reward;
      out.next_state = next;
    }
    out.done = out.next_state == kGoal || steps_ >= params_.max_steps;
    return out;
  }

  TabularMdp export_mdp() const override {
    TabularMdp mdp;
    mdp.n_states = n_states();
    mdp.n_actions = 3;
    mdp.gamma = params_.gamma;
    mdp.reward = Mat::Zero(mdp.n_states, 3);
    mdp.terminal.assign(mdp.n_states, 0);
    mdp.terminal[kGoal] = 1;
    for (int a = 0; a < 3; ++a) mdp.transition.push_back(Mat::Zero(mdp.n_states, mdp.n_states));
    for (int s = 0; s < mdp.n_states; ++s) {
      for (int a = 0; a < 3; ++a) {
        if (s == kGoal) {
          mdp.transition[a](s, s) = 1.0;
          continue;
        }
        if (s >= kChainLen) {
          mdp.reward(s, a) = params_.step_cost + rps_payoff(a, s - kChainLen);
          mdp.transition[a](s, 4) = 0.5;
          mdp.transition[a](s, 7) = 0.5;
          continue;
        }
        mdp.reward(s, a) = params_.step_cost;
        if (a == 2) {
          if ((s == 3 || s == 6) && params_.eta > 0.0) {
            mdp.transition[a](s, s + 1) = 1.0 - params_.eta;
            for (int m = 0; m < 3; ++m) mdp.transition[a](s, kChainLen + m) = params_.eta / 3.0;
            mdp.reward(s, a) += (1.0 - params_.eta) * (s + 1 == kGoal ? params_.goal_reward : 0.0);
          } else {
            mdp.transition[a](s, s + 1) = 1.0;
            if (s + 1 == kGoal) mdp.reward(s, a) += params_.goal_reward;
          }
        } else if (a == 1) {
          mdp.transition[a](s, std::max(0, s - 1)) = 1.0;
        } else {
          mdp.transition[a](s, s) = 1.0;
        }
      }
    }
    return mdp;
  }

 private:
  NoisyRpsChainParams params_;
  Rng rng_;
  int steps_ = 0;
};

// ---------------------------------------------------------------------------
// E2 (tabular simplification): button-sequence task under a per-episode
// uniform permutation sigma of the six action indices. The observation is the
// progress index through the fixed semantic target sequence; pressing
// sigma(target[progress]) advances, any other press resets progress.
// ---------------------------------------------------------------------------

struct ButtonPermParams {
  double wrong_press_reward = -0.1;
  double success_reward = 1.0;
  int max_steps = 40;
  double gamma = 0.99;
};

class ButtonPermTabular final : public Env {
 public:
  static constexpr int kButtons = 6;

  explicit ButtonPermTabular(ButtonPermParams params = {}) : params_(params) {
    target_ = {2, 0, 3, 1};
    sigma_.resize(kButtons);
    std::iota(sigma_.begin(), sigma_.end(), 0);
  }

  std::string name() const override { return "e2_button_perm"; }
  int n_states() const override { return static_cast<int>(target_.size()) + 1; }
  int n_actions() const override { return kButtons; }
  double gamma() const override { return params_.gamma; }
  const std::vector<int>& sigma() const { return sigma_; }
  const std::vector<int>& target_sequence() const { return target_; }

  int reset(std::uint64_t seed) override {
    rng_.seed(mix_seed(seed, 0xe2e2'e2e2ull));
    steps_ = 0;
    std::iota(sigma_.begin(), sigma_.end(), 0);
    std::shuffle(sigma_.begin(), sigma_.end(), rng_);
    return 0;
  }

  StepResult step(int state, int action) override {
    require(state >= 0 && state < n_states(), "ButtonPermTabular::step: state out of range");
    require(action >= 0 && action < kButtons, "ButtonPermTabular::step: action out of range");
    ++steps_;
    StepResult out;
    const int goal = n_states() - 1;
    if (state == goal) {
      out.next_state = goal;
      out.done = true;
      return out;
    }
    if (action == sigma_[target_[state]]) {
      out.next_state = state + 1;
      out.reward = out.next_state == goal ? params_.success_reward : 0.0;
    } else {
      out.next_state = 0;
      out.reward = params_.wrong_press_reward;
    }
    out.done = out.next_state == goal || steps_ >= params_.max_steps;
    return out;
  }

  // Dense MDP of the current episode's permutation.
  TabularMdp export_mdp() const override {
    TabularMdp mdp;
    mdp.n_states = n_states();
    mdp.n_actions = kButtons;
    mdp.gamma = params_.gamma;
    mdp.reward = Mat::Zero(mdp.n_states, kButtons);
    mdp.terminal.assign(mdp.n_states, 0);
    const int goal = mdp.n_states - 1;
    mdp.terminal[goal] = 1;
    for (int a = 0; a < kButtons; ++a)
      mdp.transition.push_back(Mat::Zero(mdp.n_states, mdp.n_states));
    for (int s = 0; s < mdp.n_states; ++s) {
      for (int a = 0; a < kButtons; ++a) {
        if (s == goal) {
          mdp.transition[a](s, s) = 1.0;
          continue;
        }
        if (a == sigma_[target_[s]]) {
          mdp.transition[a](s, s + 1) = 1.0;
          if (s + 1 == goal) mdp.reward(s, a) = params_.success_reward;
        } else {
          mdp.transition[a](s, 0) = 1.0;
          mdp.reward(s, a) = params_.wrong_press_reward;
        }
      }
    }
    return mdp;
  }

 private:
  ButtonPermParams params_;
  std::vector<int> target_;
  std::vector<int> sigma_;
  Rng rng_;
  int steps_ = 0;
};

struct EnvParams {
  RotMirrorGridParams grid;
  NoisyRpsChainParams rps;
  ButtonPermParams button;
};

inline std::unique_ptr<Env> make_env(const std::string& name, const EnvParams& params = {}) {
  if (name == "e1_rotmirror_grid") return std::make_unique<RotMirrorGrid>(params.grid);
  if (name == "e4_noisy_rps_chain") return std::make_unique<NoisyRpsChain>(params.rps);
  if (name == "e2_button_perm") return std::make_unique<ButtonPermTabular>(params.button);
  throw std::invalid_argument("make_env: unknown environment '" + name + "'");
}

}  // namespace gcr
