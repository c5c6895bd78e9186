#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "vistab/io/checkpoint.hpp"
#include "vistab/io/config.hpp"
#include "vistab/io/trial_log.hpp"

using namespace vistab;

TEST(Config, DefaultsMatchModuleDefaults) {
  ExperimentConfig c = parse_config("");
  EXPECT_EQ(c.model.d_mem, 64u);
  EXPECT_EQ(c.model.support.atoms, 15u);
  EXPECT_EQ(c.rl.gamma, 0.95);
  EXPECT_EQ(c.rl.batch, 64u);
  EXPECT_EQ(c.rl.updates_per_trial, 4u);
  EXPECT_EQ(c.rl.target_sync, 200u);
  EXPECT_EQ(c.rl.replay_capacity, 50000u);
  EXPECT_EQ(c.env.difficulty.k_start, 65.0);
  EXPECT_EQ(c.controller(), Controller::ActorCritic);
}

TEST(Config, SectionsCommentsAndDottedKeys) {
  auto c = parse_config(
      "# smoke run\n"
      "env.fixed_delta = 60\n"
      "[rl]\n"
      "eta = 0.1   # sharper improvement\n"
      "target = projected\n"
      "[model]\n"
      "variant = tokens\n"
      "[env]\n"
      "cue_positions = S4\n"
      "validities = 0.5, 1\n");
  EXPECT_EQ(*c.env.fixed_delta, 60.0);
  EXPECT_EQ(c.rl.eta, 0.1);
  EXPECT_EQ(c.rl.target, TargetKind::Projected);
  EXPECT_EQ(c.model.variant, FeedbackVariant::Tokens);
  EXPECT_EQ(c.env.cue_positions, std::vector<Location>{Location::S4});
  EXPECT_EQ(c.env.validities, (std::vector<double>{0.5, 1.0}));
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  EXPECT_THROW(parse_config("rl.gamm = 0.9\n"), ConfigError);
  EXPECT_THROW(parse_config("[rl]\nlearning = 1\n"), ConfigError);
  EXPECT_THROW(parse_config("rl.gamma = fast\n"), ConfigError);
  EXPECT_THROW(parse_config("rl.gamma = 1.5\n"), ConfigError);
  EXPECT_THROW(parse_config("model.variant = cosine\n"), ConfigError);
  EXPECT_THROW(parse_config("env.validities = 0.3\n"), ConfigError);
  EXPECT_THROW(parse_config("run.supervised = labels\n"), ConfigError);
  EXPECT_THROW(parse_config("just words\n"), ConfigError);
  try {
    parse_config("\n\nrl.nope = 1\n");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
  }
}

TEST(Config, TextRoundTrip) {
  auto c = parse_config("rl.eta = 0.1\nenv.fixed_delta = 60\nrun.seed = 99\neval.change = true\n");
  const auto text = to_text(c);
  auto again = parse_config(text);
  EXPECT_EQ(to_text(again), text);
  EXPECT_EQ(again.run.seed, 99u);
  EXPECT_EQ(*again.eval.change, true);
}

namespace {

Checkpoint sample_checkpoint() {
  Rng rng(3);
  Linear<float> a("a", 3, 2, rng), b("b", 2, 1, rng);
  ParamList<float> ps;
  a.collect(ps);
  b.collect(ps);
  Checkpoint c;
  append_records(c, ps);
  c.config = to_text(ExperimentConfig{});
  c.rng_state = rng.state();
  return c;
}

}  // namespace

TEST(Checkpoint, ByteIdenticalRoundTrip) {
  auto c = sample_checkpoint();
  std::stringstream s1;
  write_checkpoint(s1, c);
  const auto bytes = s1.str();
  EXPECT_EQ(bytes.substr(0, 4), "VSTB");
  std::istringstream in(bytes);
  auto back = read_checkpoint(in);
  EXPECT_EQ(back, c);
  std::stringstream s2;
  write_checkpoint(s2, back);
  EXPECT_EQ(s2.str(), bytes);
}

TEST(Checkpoint, RestoresParametersAndRng) {
  auto c = sample_checkpoint();
  Rng other(77);
  Linear<float> a("a", 3, 2, other), b("b", 2, 1, other);
  ParamList<float> ps;
  a.collect(ps);
  b.collect(ps);
  restore_records(c, ps);
  EXPECT_EQ(std::vector<float>(ps[0]->value().data().begin(), ps[0]->value().data().end()), c.records[0].data);
  Rng r;
  r.set_state(c.rng_state);
  Rng ref(3);
  Linear<float> ra("a", 3, 2, ref), rb("b", 2, 1, ref);
  EXPECT_EQ(r.next_u64(), ref.next_u64());
}

TEST(Checkpoint, Errors) {
  auto c = sample_checkpoint();
  std::stringstream s;
  write_checkpoint(s, c);
  auto bytes = s.str();
  {
    auto bad = bytes;
    bad[4] = 9;  // version field
    std::istringstream in(bad);
    EXPECT_THROW(read_checkpoint(in), CheckpointError);
  }
  {
    std::istringstream in(bytes.substr(0, bytes.size() - 3));
    EXPECT_THROW(read_checkpoint(in), CheckpointError);
  }
  {
    std::istringstream in("NOPE" + bytes.substr(4));
    EXPECT_THROW(read_checkpoint(in), CheckpointError);
  }
  EXPECT_THROW(load_checkpoint("/nonexistent/agent.ckpt"), CheckpointError);
  Rng rng(1);
  Linear<float> wrong("a", 4, 2, rng);
  ParamList<float> ps;
  wrong.collect(ps);
  EXPECT_THROW(restore_records(c, ps), CheckpointError);
  Linear<float> missing("z", 3, 2, rng);
  ps.clear();
  missing.collect(ps);
  EXPECT_THROW(restore_records(c, ps), CheckpointError);
}

TEST(Checkpoint, SchemaChangeRequiresVersionBump) {
  // Layout of a default agent at this checkpoint version. Changing any
  // parameter name or shape changes the fingerprint; update it together
  // with kCheckpointVersion.
  ASSERT_EQ(kCheckpointVersion, 1u);
  Rng rng(1);
  Agent<float> agent(ModelConfig{}, rng);
  ParamList<float> ps;
  agent.collect_all(ps);
  Vae<float> vae(VaeConfig{}, rng);
  vae.collect(ps);
  std::ostringstream layout;
  for (auto* p : ps) {
    layout << p->name();
    for (auto d : p->value().shape()) layout << ' ' << d;
    layout << '\n';
  }
  EXPECT_EQ(schema_fingerprint(ps), 13382567911044460797ull) << layout.str();
}

namespace {

TrialRecord sample_record() {
  TrialRecord r;
  r.trial_id = 4;
  r.seed = 123456789012345ull;
  r.cue_position = Location::S4;
  r.validity = 0.75;
  r.change_trial = true;
  r.change_position = Location::S2;
  r.delta = -12.5;
  r.end_t = 5;
  r.actions = {0, 0, 0, 0, 0, 1};
  r.reward = 1;
  r.outcome = Outcome::Hit;
  for (int t = 0; t < kTimesteps; ++t)
    for (int j = 0; j < kPatches; ++j) r.alpha[t][j] = t <= 5 ? 0.1 * (j + 1) + t / 3.0 : NAN;
  r.value = {0.1, 0.2, 0.30000000000000004, 0.4, 0.5, 0.9};
  r.td = {0.01, -0.02, 0.0, 0.1, 0.4, 0.1};
  return r;
}

}  // namespace

TEST(TrialLog, HeaderAndRoundTrip) {
  const auto cols = trial_log_columns();
  EXPECT_EQ(cols.size(), 11u + 28u + 2u);
  EXPECT_EQ(cols.front(), "trial_id");
  EXPECT_EQ(cols[11], "alpha_t0_s1");
  std::vector<TrialRecord> recs{sample_record()};
  recs.push_back(sample_record());
  recs[1].change_trial = false;
  recs[1].change_position.reset();
  recs[1].outcome = Outcome::CorrectReject;
  recs[1].value.clear();
  recs[1].td.clear();
  std::stringstream s;
  write_trial_log(s, recs);
  auto back = read_trial_log(s);
  ASSERT_EQ(back.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    std::stringstream a, b;
    write_trial_log(a, {recs[i]});
    write_trial_log(b, {back[i]});
    EXPECT_EQ(a.str(), b.str());
    EXPECT_EQ(back[i].value, recs[i].value);
    EXPECT_EQ(back[i].actions, recs[i].actions);
    EXPECT_EQ(back[i].change_position, recs[i].change_position);
  }
  EXPECT_TRUE(std::isnan(back[0].alpha[6][0]));
}

TEST(TrialLog, EmptyLogIsHeaderOnly) {
  std::stringstream s;
  write_trial_log(s, {});
  EXPECT_EQ(s.str(), trial_log_header() + "\n");
  EXPECT_TRUE(read_trial_log(s).empty());
}

TEST(TrialLog, RejectsForeignHeader) {
  std::istringstream s("a,b,c\n");
  EXPECT_THROW(read_trial_log(s), ConfigError);
}

TEST(Transitions, RoundTripIsExact) {
  Rng rng(5);
  std::vector<Transition> data;
  for (int i = 0; i < 5; ++i) {
    Transition t;
    for (int j = 0; j < 3; ++j) {
      t.h.push_back(float(rng.normal()));
      t.h_next.push_back(float(rng.normal()));
    }
    t.action = i % 2;
    t.reward = i == 4;
    t.terminal = i == 4;
    if (t.terminal) t.h_next.assign(3, 0.0f);
    data.push_back(t);
  }
  std::stringstream s;
  write_transitions(s, data);
  auto back = read_transitions(s);
  ASSERT_EQ(back.size(), data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    EXPECT_EQ(back[i].h, data[i].h);
    EXPECT_EQ(back[i].h_next, data[i].h_next);
    EXPECT_EQ(back[i].action, data[i].action);
    EXPECT_EQ(back[i].reward, data[i].reward);
    EXPECT_EQ(back[i].terminal, data[i].terminal);
  }
}
