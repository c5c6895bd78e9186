#pragma once

#include <memory>
#include <string>

#include "vistab/analysis/probe.hpp"
#include "vistab/io/checkpoint.hpp"
#include "vistab/io/config.hpp"

namespace vistab {

// Checkpoint kinds share one file format. A VAE checkpoint holds only the
// "vae.*" records; an agent checkpoint holds the encoder it was trained on
// plus every agent parameter; a probe checkpoint holds "probe.*" records.
// All carry the config snapshot they were produced under.

inline Checkpoint vae_checkpoint(Vae<float>& vae, const ExperimentConfig& cfg, const Rng& rng) {
  Checkpoint c;
  ParamList<float> ps;
  vae.collect(ps);
  append_records(c, ps);
  c.config = to_text(cfg);
  c.rng_state = rng.state();
  return c;
}

inline std::unique_ptr<Vae<float>> restore_vae(const Checkpoint& c, const VaeConfig& cfg) {
  Rng scratch(0);
  auto vae = std::make_unique<Vae<float>>(cfg, scratch);
  ParamList<float> ps;
  vae->collect(ps);
  restore_records(c, ps);
  return vae;
}

inline Checkpoint agent_checkpoint(Vae<float>& vae, Agent<float>& agent, const ExperimentConfig& cfg, const Rng& rng) {
  auto c = vae_checkpoint(vae, cfg, rng);
  ParamList<float> ps;
  agent.collect_all(ps);
  append_records(c, ps);
  return c;
}

/// A trained agent with the encoder it sees the world through.
struct LoadedAgent {
  ExperimentConfig config;
  std::unique_ptr<Vae<float>> vae;
  Agent<float> agent;
};

inline LoadedAgent restore_agent(const Checkpoint& c) {
  LoadedAgent out;
  out.config = parse_config(c.config);
  out.vae = restore_vae(c, out.config.vae);
  Rng scratch(0);
  out.agent = Agent<float>(out.config.model, scratch, out.config.controller());
  ParamList<float> ps;
  out.agent.collect_all(ps);
  restore_records(c, ps);
  return out;
}

inline LoadedAgent load_agent(const std::string& path) {
  const auto c = load_checkpoint(path);
  if (!c.find("lstm.w_i")) throw CheckpointError("'" + path + "' is not an agent checkpoint");
  return restore_agent(c);
}

inline Checkpoint probe_checkpoint(Probe<float>& probe, const std::string& config_text) {
  Checkpoint c;
  ParamList<float> ps;
  probe.collect(ps);
  append_records(c, ps);
  c.config = config_text;
  return c;
}

/// Probe dimensions are read back from the record shapes.
inline Probe<float> restore_probe(const Checkpoint& c) {
  const auto* l1 = c.find("probe.l1.weight");
  const auto* l2 = c.find("probe.l2.weight");
  const auto* head = c.find("probe.head.weight");
  if (!l1 || !l2 || !head) throw CheckpointError("not a probe checkpoint");
  Rng scratch(0);
  Probe<float> probe(l1->shape[0], head->shape[1], scratch, l1->shape[1], l2->shape[1]);
  ParamList<float> ps;
  probe.collect(ps);
  restore_records(c, ps);
  return probe;
}

}  // namespace vistab
