// vistab: command-line front end.
//
//   vistab pretrain-vae --out vae.ckpt
//   vistab train --checkpoint vae.ckpt --out agent.ckpt
//   vistab eval --checkpoint agent.ckpt --out trials.csv
//   vistab perturb --checkpoint agent.ckpt --force zero:S1@t>=5 --out trials.csv
//   vistab analyze --kind psychometric --log trials.csv --out results/run1
//   vistab probe export|train|eval ...
//   vistab render --t 5 --out frame.pgm
//
// Errors go to stderr as one line "error: <kind>: <message>" with a nonzero
// exit status.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "vistab/experiments.hpp"
#include "vistab/io/artifacts.hpp"
#include "vistab/io/tables.hpp"
#include "vistab/io/trial_log.hpp"
#include "vistab/train.hpp"

using namespace vistab;

namespace {

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string checkpoint;
  std::string out;
  std::optional<std::size_t> trials;
  std::vector<double> validity;
  std::vector<std::string> cue_pos;
  std::vector<double> delta_grid;
  std::vector<std::string> force;
  std::string variant;
  std::string supervised;
  std::string change = "config";  // config, random, true, false
  // train
  std::string transitions;
  std::size_t updates = 1000;
  // eval
  std::string transitions_out;
  // analyze
  std::string kind;
  std::string log;
  // probe
  std::string data;
  std::string source = "memory";
  std::string label = "change";
  int timestep = kTimesteps - 1;
  // render
  int t = -1;
};

ExperimentConfig load_options_config(const Options& o) {
  ExperimentConfig cfg = o.config_path.empty() ? ExperimentConfig{} : load_config(o.config_path);
  if (o.seed) cfg.run.seed = *o.seed;
  if (!o.variant.empty()) cfg.model.variant = parse_variant(o.variant);
  if (!o.supervised.empty()) cfg.run.supervised = o.supervised;
  cfg.validate();
  return cfg;
}

EvalGrid grid_from(const Options& o, EvalGrid grid) {
  if (o.trials) grid.trials = *o.trials;
  if (!o.validity.empty()) grid.validities = o.validity;
  if (!o.cue_pos.empty()) {
    grid.cue_positions.clear();
    for (const auto& s : o.cue_pos) grid.cue_positions.push_back(parse_location(s));
  }
  if (!o.delta_grid.empty()) grid.deltas = o.delta_grid;
  if (o.change == "random") grid.change.reset();
  if (o.change == "true") grid.change = true;
  if (o.change == "false") grid.change = false;
  for (double v : grid.validities)
    if (!is_valid_validity(v)) throw ConfigError("bad validity " + detail::format_double(v));
  return grid;
}

void require(const std::string& value, const char* flag) {
  if (value.empty()) throw ConfigError(std::string("missing ") + flag);
}

std::vector<ForceRule> forces_from(const Options& o) {
  std::vector<ForceRule> rules;
  for (const auto& f : o.force) rules.push_back(parse_force(f));
  return rules;
}

int cmd_pretrain_vae(const Options& o) {
  require(o.out, "--out");
  const auto cfg = load_options_config(o);
  Rng rng(cfg.run.seed);
  Vae<float> vae(cfg.vae, rng);
  const auto res = pretrain_vae(vae, cfg.vae, cfg.vae_run, rng);
  save_checkpoint(o.out, vae_checkpoint(vae, cfg, rng));
  CsvTable log{{"step", "loss", "mse"}, {}};
  for (std::size_t i = 0; i < res.loss.size(); ++i)
    log.add({std::to_string(i), detail::fmt(res.loss[i]), detail::fmt(res.reconstruction_mse[i])});
  save_csv(o.out + ".log.csv", log);
  return 0;
}

int cmd_train_offline(const Options& o, const ExperimentConfig& overrides) {
  auto loaded = load_agent(o.checkpoint);
  if (loaded.agent.controller != Controller::ActorCritic) throw ConfigError("offline training needs an actor-critic agent");
  std::ifstream in(o.transitions);
  if (!in) throw ConfigError("cannot open transitions '" + o.transitions + "'");
  const auto data = read_transitions(in);
  auto cfg = loaded.config;
  cfg.rl = overrides.rl;
  cfg.run.seed = overrides.run.seed;
  Rng rng(cfg.run.seed);
  const auto stats = train_offline(loaded.agent.heads, loaded.agent.target, data, cfg.rl, cfg.model.support, o.updates,
                                   rng, cfg.run.grad_clip);
  save_checkpoint(o.out, agent_checkpoint(*loaded.vae, loaded.agent, cfg, rng));
  CsvTable log{{"update", "loss", "critic", "actor", "td_abs", "grad_norm"}, {}};
  for (std::size_t i = 0; i < stats.size(); ++i)
    log.add({std::to_string(i), detail::fmt(stats[i].total), detail::fmt(stats[i].critic), detail::fmt(stats[i].actor),
             detail::fmt(stats[i].td_abs), detail::fmt(stats[i].grad_norm)});
  save_csv(o.out + ".log.csv", log);
  return 0;
}

int cmd_train(const Options& o) {
  require(o.out, "--out");
  require(o.checkpoint, "--checkpoint");
  auto cfg = load_options_config(o);
  if (!o.transitions.empty()) return cmd_train_offline(o, cfg);
  const auto source = load_checkpoint(o.checkpoint);
  // The encoder keeps the architecture it was pretrained with.
  cfg.vae = parse_config(source.config).vae;
  auto vae = restore_vae(source, cfg.vae);
  FeatureCache cache(*vae);
  Rng init(cfg.run.seed);
  Agent<float> agent(cfg.model, init, cfg.controller());
  CsvTable log{{"episode", "k", "reward", "end_t", "outcome", "loss", "critic", "actor", "td_abs", "grad_norm",
                "updates"},
               {}};
  auto on_episode = [&](const TrainRecord<float>& r) {
    log.add({std::to_string(r.episode), detail::fmt(r.k), std::to_string(r.trial.reward),
             std::to_string(r.trial.end_t), outcome_code(r.trial.outcome), detail::fmt(r.update.total),
             detail::fmt(r.update.critic), detail::fmt(r.update.actor), detail::fmt(r.update.td_abs),
             detail::fmt(r.update.grad_norm), std::to_string(r.updates)});
  };
  if (agent.controller == Controller::ActorCritic) {
    train<float>(agent, cache, cfg.train_config(), on_episode);
  } else {
    train_supervised<float>(agent, cache, cfg.train_config(), on_episode);
  }
  save_checkpoint(o.out, agent_checkpoint(*vae, agent, cfg, init));
  save_csv(o.out + ".log.csv", log);
  return 0;
}

void dump_transitions(LoadedAgent& loaded, FeatureCache& cache, const EvalGrid& grid, std::uint64_t seed,
                      const std::string& path) {
  std::vector<Transition> data;
  Rng unused(seed);
  for (const auto& spec : grid_trials(grid, seed)) {
    const auto r = run_trial(loaded.agent, cache, spec, unused, {.mode = ActMode::Greedy, .keep_memory = true});
    for (std::size_t t = 0; t < r.actions.size(); ++t) {
      Transition tr;
      const auto& h = r.memory[t].data();
      tr.h.assign(h.begin(), h.end());
      tr.action = r.actions[t];
      tr.reward = r.rewards[t];
      tr.terminal = t + 1 == r.actions.size();
      if (!tr.terminal) {
        const auto& hn = r.memory[t + 1].data();
        tr.h_next.assign(hn.begin(), hn.end());
      }
      data.push_back(std::move(tr));
    }
  }
  std::ofstream os(path);
  if (!os) throw ConfigError("cannot write '" + path + "'");
  write_transitions(os, data);
}

int cmd_eval(const Options& o, bool perturb) {
  require(o.out, "--out");
  require(o.checkpoint, "--checkpoint");
  if (perturb && o.force.empty()) throw ConfigError("perturb needs at least one --force");
  auto loaded = load_agent(o.checkpoint);
  if (!o.config_path.empty()) loaded.config.eval = load_config(o.config_path).eval;
  const auto grid = grid_from(o, loaded.config.eval);
  const auto seed = o.seed.value_or(loaded.config.run.seed);
  const auto rules = forces_from(o);
  FeatureCache cache(*loaded.vae);
  save_trial_log(o.out, evaluate(loaded.agent, cache, grid, seed, rules));
  if (!o.transitions_out.empty()) dump_transitions(loaded, cache, grid, seed, o.transitions_out);
  return 0;
}

int cmd_analyze(const Options& o) {
  require(o.out, "--out");
  require(o.log, "--log");
  const auto records = load_trial_log(o.log);
  if (o.kind == "psychometric") {
    const auto t = psychometric_tables(records);
    save_csv(o.out + "_psychometric_points.csv", t.points);
    save_csv(o.out + "_psychometric_fit.csv", t.fits);
    if (!t.errors.empty()) throw AnalysisError("fit failed for " + std::to_string(t.errors.size()) + " curve(s); " +
                                               t.errors.front());
  } else if (o.kind == "sdt") {
    save_csv(o.out + "_sdt.csv", sdt_table(records));
  } else if (o.kind == "attention") {
    save_csv(o.out + "_attention.csv", attention_table(records));
  } else if (o.kind == "value") {
    save_csv(o.out + "_value.csv", value_table(records));
  } else {
    throw ConfigError("unknown analysis kind '" + o.kind + "'");
  }
  return 0;
}

int label_of(const std::string& label, const TrialSpec& s) {
  if (label == "change") return s.is_change_trial ? 1 : 0;
  if (label == "change_pos") return s.is_change_trial && s.change_position ? index(*s.change_position) : kPatches;
  if (label == "cue_pos") return index(s.cue_position);
  throw ConfigError("unknown probe label '" + label + "'");
}

std::size_t classes_of(const std::string& label) {
  return label == "change" ? 2 : label == "change_pos" ? kPatches + 1 : kPatches;
}

int cmd_probe_export(const Options& o) {
  require(o.checkpoint, "--checkpoint");
  require(o.out, "--out");
  if (o.timestep < 0 || o.timestep >= kTimesteps) throw ConfigError("--timestep must be in 0..6");
  if (o.source != "memory" && o.source != "actor") throw ConfigError("--source must be memory or actor");
  auto loaded = load_agent(o.checkpoint);
  if (o.source == "actor" && loaded.agent.controller != Controller::ActorCritic)
    throw ConfigError("--source actor needs an actor-critic agent");
  const auto grid = grid_from(o, loaded.config.eval);
  const auto seed = o.seed.value_or(loaded.config.run.seed);
  FeatureCache cache(*loaded.vae);
  ProbeDataset d;
  d.classes = classes_of(o.label);
  std::vector<Tensorf> rows;
  Rng unused(seed);
  for (const auto& spec : grid_trials(grid, seed)) {
    const auto r = run_trial(loaded.agent, cache, spec, unused,
                             {.mode = ActMode::Greedy, .keep_memory = true, .run_to_end = true});
    rows.push_back(o.source == "memory" ? r.memory[o.timestep] : r.actor_hidden[o.timestep]);
    d.labels.push_back(label_of(o.label, spec));
  }
  const std::size_t dim = rows.empty() ? 0 : rows.front().size();
  d.x = Tensorf({rows.size(), dim});
  for (std::size_t i = 0; i < rows.size(); ++i) std::copy_n(rows[i].data().begin(), dim, d.x.row_span(i).begin());
  save_csv(o.out, probe_dataset_table(d));
  return 0;
}

// Train and eval share one seeded 80/20 split of the dataset file.
std::pair<ProbeDataset, ProbeDataset> probe_split(const Options& o, std::uint64_t seed) {
  require(o.data, "--data");
  const auto d = probe_dataset_from(load_csv(o.data));
  Rng rng(seed);
  return split(d, 0.8, rng);
}

int cmd_probe_train(const Options& o) {
  require(o.out, "--out");
  const auto cfg = load_options_config(o);
  auto [train_set, test_set] = probe_split(o, cfg.run.seed);
  Rng rng(cfg.run.seed + 1);
  ProbeReport report;
  auto probe = train_probe(train_set, cfg.probe, rng, &report);
  for (const auto& d : report.diagnostics) std::cerr << "warning: " << d << '\n';
  save_checkpoint(o.out, probe_checkpoint(probe, to_text(cfg)));
  CsvTable log{{"epoch", "loss"}, {}};
  for (std::size_t i = 0; i < report.epoch_loss.size(); ++i)
    log.add({std::to_string(i), detail::fmt(report.epoch_loss[i])});
  save_csv(o.out + ".log.csv", log);
  return 0;
}

int cmd_probe_eval(const Options& o) {
  require(o.out, "--out");
  require(o.checkpoint, "--checkpoint");
  const auto ckpt = load_checkpoint(o.checkpoint);
  auto probe = restore_probe(ckpt);
  const auto seed = o.seed.value_or(parse_config(ckpt.config).run.seed);
  auto [train_set, test_set] = probe_split(o, seed);
  const auto m = confusion(probe, test_set);
  save_csv(o.out, confusion_table(m));
  std::cout << "accuracy " << detail::fmt(m.accuracy()) << " n " << test_set.size() << '\n';
  return 0;
}

int cmd_render(const Options& o) {
  require(o.out, "--out");
  if (o.t < 0 || o.t >= kTimesteps) throw ConfigError("--t must be in 0..6");
  const auto cfg = load_options_config(o);
  TrialRequest req;
  req.cue_validity = o.validity.empty() ? 1.0 : o.validity.front();
  req.cue_position = o.cue_pos.empty() ? Location::S1 : parse_location(o.cue_pos.front());
  req.sigma = cfg.env.sigma;
  if (!o.delta_grid.empty()) req.delta = o.delta_grid.front();
  if (o.change == "true") req.change = true;
  if (o.change == "false") req.change = false;
  if (!is_valid_validity(req.cue_validity)) throw ConfigError("bad validity");
  Rng rng(cfg.run.seed);
  const auto spec = sample_trial(rng, req);
  std::ofstream os(o.out, std::ios::binary);
  if (!os) throw ConfigError("cannot write '" + o.out + "'");
  write_pgm(os, render(spec, o.t));
  return 0;
}

const char* error_kind(const std::exception& e) {
  if (dynamic_cast<const CheckpointError*>(&e)) return "checkpoint";
  if (dynamic_cast<const ConfigError*>(&e)) return "config";
  if (dynamic_cast<const DimensionError*>(&e)) return "dimension";
  if (dynamic_cast<const FitError*>(&e)) return "fit";
  if (dynamic_cast<const AnalysisError*>(&e)) return "analysis";
  if (dynamic_cast<const NumericalError*>(&e)) return "numerical";
  return "internal";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Recurrent attention agent workbench"};
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* c) {
    c->add_option("--config", o.config_path, "Config file (key = value)");
    c->add_option("--seed", o.seed, "Run seed");
    c->add_option("--out", o.out, "Output path");
  };
  auto grid = [&](CLI::App* c) {
    c->add_option("--trials", o.trials, "Trials per grid cell");
    c->add_option("--validity", o.validity, "Cue validities")->delimiter(',');
    c->add_option("--cue-pos", o.cue_pos, "Cued locations (S1..S4)")->delimiter(',');
    c->add_option("--delta-grid", o.delta_grid, "Change magnitudes in degrees")->delimiter(',');
    c->add_option("--change", o.change, "Pin trial type")->check(CLI::IsMember({"config", "random", "true", "false"}));
  };

  auto* pre = app.add_subcommand("pretrain-vae", "Pretrain the patch encoder");
  common(pre);

  auto* tr = app.add_subcommand("train", "Train an agent on a pretrained encoder");
  common(tr);
  tr->add_option("--checkpoint", o.checkpoint, "Encoder checkpoint (agent checkpoint for offline mode)");
  tr->add_option("--variant", o.variant, "Feedback variant")->check(CLI::IsMember({"tokens", "additive", "multiplicative"}));
  tr->add_option("--supervised", o.supervised, "Supervised baseline")->check(CLI::IsMember({"actions", "beliefs"}));
  tr->add_option("--transitions", o.transitions, "Offline mode: train the heads on a transition file");
  tr->add_option("--updates", o.updates, "Offline gradient updates");

  auto* ev = app.add_subcommand("eval", "Greedy evaluation over a condition grid");
  common(ev);
  grid(ev);
  ev->add_option("--checkpoint", o.checkpoint, "Agent checkpoint");
  ev->add_option("--force", o.force, "Attention forcing rule (repeatable)");
  ev->add_option("--transitions-out", o.transitions_out, "Also write memory-space transitions");

  auto* pe = app.add_subcommand("perturb", "Evaluation under attention forcing");
  common(pe);
  grid(pe);
  pe->add_option("--checkpoint", o.checkpoint, "Agent checkpoint");
  pe->add_option("--force", o.force, "Attention forcing rule, e.g. zero:S4@t>=5 (repeatable)");

  auto* an = app.add_subcommand("analyze", "Tables from a trial log");
  common(an);
  an->add_option("--kind", o.kind, "Analysis")->required()->check(CLI::IsMember({"psychometric", "sdt", "attention", "value"}));
  an->add_option("--log", o.log, "Trial log")->required();

  auto* pr = app.add_subcommand("probe", "Decoding probes on internal state");
  pr->require_subcommand(1);
  auto* px = pr->add_subcommand("export", "Write a probe dataset from agent rollouts");
  common(px);
  grid(px);
  px->add_option("--checkpoint", o.checkpoint, "Agent checkpoint");
  px->add_option("--source", o.source, "memory or actor")->check(CLI::IsMember({"memory", "actor"}));
  px->add_option("--label", o.label, "Target")->check(CLI::IsMember({"change", "change_pos", "cue_pos"}));
  px->add_option("--timestep", o.timestep, "Timestep to read (0..6)");
  auto* pt = pr->add_subcommand("train", "Train a probe on the 80% split");
  common(pt);
  pt->add_option("--data", o.data, "Probe dataset")->required();
  auto* pv = pr->add_subcommand("eval", "Confusion matrix on the 20% split");
  common(pv);
  pv->add_option("--data", o.data, "Probe dataset")->required();
  pv->add_option("--checkpoint", o.checkpoint, "Probe checkpoint");

  auto* re = app.add_subcommand("render", "Write one frame as PGM");
  common(re);
  grid(re);
  re->add_option("--t", o.t, "Timestep (0..6)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << "error: usage: " << e.what() << '\n';
    return 2;
  }

  try {
    if (*pre) return cmd_pretrain_vae(o);
    if (*tr) return cmd_train(o);
    if (*ev) return cmd_eval(o, false);
    if (*pe) return cmd_eval(o, true);
    if (*an) return cmd_analyze(o);
    if (*px) return cmd_probe_export(o);
    if (*pt) return cmd_probe_train(o);
    if (*pv) return cmd_probe_eval(o);
    if (*re) return cmd_render(o);
  } catch (const std::exception& e) {
    std::string msg = e.what();
    for (auto& ch : msg)
      if (ch == '\n') ch = ' ';
    std::cerr << "error: " << error_kind(e) << ": " << msg << '\n';
    return 1;
  }
  return 1;
}
