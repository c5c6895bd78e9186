#include <gtest/gtest.h>

#include <cmath>

#include "vistab/train.hpp"

using namespace vistab;

namespace {

ModelConfig tiny_model() {
  ModelConfig m;
  m.d_mem = 4;
  m.head_width = 16;
  return m;
}

TrainConfig tiny_train(std::size_t episodes) {
  TrainConfig c;
  c.episodes = episodes;
  c.seed = 3;
  c.rl.batch = 16;
  c.rl.updates_per_trial = 1;
  c.rl.target_sync = 5;
  c.rl.learning_rate = 1e-3;
  return c;
}

struct Fixture {
  Rng rng{11};
  Vae<float> vae{VaeConfig{}, rng};
  FeatureCache cache{vae};
};

std::vector<float> flat_values(Agent<float>& agent) {
  ParamList<float> ps;
  agent.collect_all(ps);
  std::vector<float> out;
  for (auto* p : ps) out.insert(out.end(), p->value().data().begin(), p->value().data().end());
  return out;
}

}  // namespace

TEST(Replay, CapacityCountsTransitions) {
  ReplayBuffer buf(10);
  for (int i = 0; i < 4; ++i) {
    EpisodeRecord e;
    e.actions.assign(3, 0);
    e.rewards.assign(3, 0.0);
    buf.push(e);
  }
  EXPECT_EQ(buf.episodes(), 3u);
  EXPECT_EQ(buf.transitions(), 9u);
  Rng rng(1);
  auto s = buf.sample(7, rng);
  std::size_t n = 0;
  for (auto* e : s) n += e->length();
  EXPECT_GE(n, 7u);
  EXPECT_LT(n - 3, 7u);  // stops as soon as the count is reached
}

TEST(Supervised, LabelRules) {
  TrialSpec change, none;
  change.is_change_trial = true;
  none.is_change_trial = false;
  const std::vector<double> zeros(7, 0.0), ones(7, 1.0);
  EXPECT_EQ(supervised_labels(Controller::SupervisedActions, none), zeros);
  EXPECT_EQ(supervised_labels(Controller::SupervisedActions, change),
            (std::vector<double>{0, 0, 0, 0, 0, 1, 1}));
  EXPECT_EQ(supervised_labels(Controller::SupervisedBeliefs, change), ones);
  EXPECT_EQ(supervised_labels(Controller::SupervisedBeliefs, none), zeros);
}

TEST(Supervised, BceOfPerfectPredictorVanishes) {
  Tape<double> tape;
  Tensord logits({4, 1});
  const std::vector<double> y{1, 0, 0, 1};
  for (std::size_t i = 0; i < 4; ++i) logits(i, 0) = y[i] ? 40.0 : -40.0;
  EXPECT_LT(bce_with_logits(tape.constant(logits), y).value().item(), 1e-15);
  // Zero logits: ln 2 regardless of labels.
  EXPECT_NEAR(bce_with_logits(tape.constant(Tensord({4, 1})), y).value().item(), std::log(2.0), 1e-12);
  // One confident mistake among two rows: (40 + ln(1+e^-40)) / 2.
  Tensord two({2, 1});
  two(0, 0) = 40.0;
  two(1, 0) = 40.0;
  EXPECT_NEAR(bce_with_logits(tape.constant(two), {1, 0}).value().item(), 20.0, 1e-9);
}

TEST(Train, SameSeedGivesIdenticalLogAndParameters) {
  std::vector<std::vector<double>> logs(2);
  std::vector<std::vector<float>> params(2);
  for (int run = 0; run < 2; ++run) {
    Fixture f;
    Rng init(5);
    Agent<float> agent(tiny_model(), init);
    train<float>(agent, f.cache, tiny_train(12), [&](const TrainRecord<float>& r) {
      logs[run].push_back(r.trial.reward);
      logs[run].push_back(r.update.total);
      logs[run].push_back(r.update.td_abs);
      for (auto& row : r.trial.alpha)
        for (double a : row) logs[run].push_back(std::isnan(a) ? -1.0 : a);
    });
    params[run] = flat_values(agent);
  }
  EXPECT_EQ(logs[0], logs[1]);
  EXPECT_EQ(params[0], params[1]);
}

TEST(Train, LogsUpdatesAndTargetSync) {
  Fixture f;
  Rng init(6);
  Agent<float> agent(tiny_model(), init);
  auto before = flat_values(agent);
  std::size_t episodes = 0, last_updates = 0;
  auto cfg = tiny_train(10);
  train<float>(agent, f.cache, cfg, [&](const TrainRecord<float>& r) {
    ++episodes;
    last_updates = r.updates;
    EXPECT_TRUE(std::isfinite(r.update.total));
    EXPECT_EQ(r.trial.td.size(), r.trial.actions.size());
  });
  EXPECT_EQ(episodes, 10u);
  EXPECT_EQ(last_updates, 10u);
  EXPECT_NE(before, flat_values(agent));
  // 10 updates with sync every 5: target equals online heads.
  ParamList<float> a, b;
  agent.heads.collect(a);
  agent.target.collect(b);
  for (std::size_t k = 0; k < a.size(); ++k) EXPECT_EQ(a[k]->value(), b[k]->value());
}

TEST(Train, RejectsBadConfig) {
  Fixture f;
  Rng init(7);
  Agent<float> agent(tiny_model(), init);
  auto cfg = tiny_train(1);
  cfg.task.validities = {0.3};
  EXPECT_THROW(train<float>(agent, f.cache, cfg), ConfigError);
  cfg = tiny_train(1);
  cfg.rl.eta = 0;
  EXPECT_THROW(train<float>(agent, f.cache, cfg), ConfigError);
  Agent<float> sup(tiny_model(), init, Controller::SupervisedActions);
  EXPECT_THROW(train<float>(sup, f.cache, tiny_train(1)), ConfigError);
  EXPECT_THROW(train_supervised<float>(agent, f.cache, tiny_train(1)), ConfigError);
}

TEST(Train, SupervisedRunsAndIsDeterministic) {
  std::vector<std::vector<double>> logs(2);
  for (int run = 0; run < 2; ++run) {
    Fixture f;
    Rng init(8);
    Agent<float> agent(tiny_model(), init, Controller::SupervisedBeliefs);
    train_supervised<float>(agent, f.cache, tiny_train(9), [&](const TrainRecord<float>& r) {
      logs[run].push_back(r.update.total);
      logs[run].push_back(r.trial.reward);
      // Beliefs are only read out from the change time on.
      for (std::size_t t = 0; t < r.trial.actions.size() && t < std::size_t(kChangeTime); ++t)
        EXPECT_EQ(r.trial.actions[t], 0);
    });
  }
  EXPECT_EQ(logs[0], logs[1]);
}

namespace {

// Two-state chain A -> B -> end with reward 1 on leaving B, for either
// action. V*(B) = 1 and V*(A) = gamma.
std::vector<Transition> toy_chain() {
  const std::vector<float> a{1, 0}, b{0, 1};
  std::vector<Transition> out;
  for (int act : {0, 1}) {
    out.push_back({a, b, act, 0.0, false});
    out.push_back({b, {}, act, 1.0, true});
  }
  return out;
}

double value_of(Heads<double>& heads, std::vector<double> h, const Support& s) {
  Tensord x({1, h.size()});
  for (std::size_t j = 0; j < h.size(); ++j) x(0, j) = h[j];
  auto o = evaluate_heads(heads, x);
  return state_value(o.pi[0], o.q[0], s);
}

}  // namespace

TEST(Offline, ToyChainValueFixedPoint) {
  for (auto kind : {TargetKind::Binned, TargetKind::Projected}) {
    Rng rng(9);
    Support s;
    Heads<double> online(2, 32, s.atoms, rng), target(2, 32, s.atoms, rng);
    RlHyper hyper;
    hyper.target = kind;
    hyper.learning_rate = 3e-3;
    hyper.batch = 16;
    hyper.target_sync = 20;
    auto log = train_offline(online, target, toy_chain(), hyper, s, 1500, rng);
    const double va = value_of(online, {1, 0}, s), vb = value_of(online, {0, 1}, s);
    EXPECT_NEAR(vb, 1.0, 0.05) << to_string(kind);
    EXPECT_NEAR(va, hyper.gamma, 0.05) << to_string(kind);
    EXPECT_LT(log.back().critic, log.front().critic);
  }
}

TEST(Offline, RejectsEmptyAndRaggedData) {
  Rng rng(10);
  Heads<double> online(2, 8, 15, rng), target(2, 8, 15, rng);
  EXPECT_THROW(train_offline(online, target, {}, RlHyper{}, Support{}, 1, rng), ConfigError);
  std::vector<Transition> bad{{{1, 0}, {0, 1}, 0, 0.0, false}, {{1, 0, 0}, {0, 1}, 0, 0.0, false}};
  EXPECT_THROW(train_offline(online, target, bad, RlHyper{.batch = 64}, Support{}, 1, rng), DimensionError);
}
