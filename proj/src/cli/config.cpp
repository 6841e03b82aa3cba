#include "fedplatoon/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include <yaml-cpp/yaml.h>

namespace fedplatoon {
namespace {

int line_of(const YAML::Node& node) { return node.Mark().line >= 0 ? node.Mark().line + 1 : 0; }

// A mapping node whose keys must all be consumed.
class Section {
 public:
  Section(const YAML::Node& node, std::string name) : node_(node), name_(std::move(name)) {
    if (!node_.IsMap()) throw ConfigError(name_ + " must be a mapping", line_of(node_));
  }

  int line() const { return line_of(node_); }
  const std::string& name() const { return name_; }

  YAML::Node take(const std::string& key) {
    seen_.insert(key);
    return node_[key];
  }

  template <typename T>
  void read(const std::string& key, T& out) {
    const YAML::Node v = take(key);
    if (!v) return;
    if (!v.IsScalar()) throw ConfigError(qualified(key) + " must be a scalar", line_of(v));
    try {
      out = v.as<T>();
    } catch (const YAML::Exception&) {
      throw ConfigError(qualified(key) + ": cannot read '" + v.Scalar() + "'", line_of(v));
    }
  }

  template <typename T>
  void read_list(const std::string& key, std::vector<T>& out) {
    const YAML::Node v = take(key);
    if (!v) return;
    if (!v.IsSequence()) throw ConfigError(qualified(key) + " must be a list", line_of(v));
    std::vector<T> items;
    for (const auto& item : v) {
      try {
        items.push_back(item.as<T>());
      } catch (const YAML::Exception&) {
        throw ConfigError(qualified(key) + ": cannot read list entry", line_of(item));
      }
    }
    out = std::move(items);
  }

  template <typename E>
  void read_enum(const std::string& key, E& out, const std::vector<std::pair<std::string, E>>& names) {
    std::string text;
    read(key, text);
    if (text.empty()) return;
    for (const auto& [n, e] : names) {
      if (n == text) {
        out = e;
        return;
      }
    }
    std::string options;
    for (const auto& [n, _] : names) options += (options.empty() ? "" : ", ") + n;
    throw ConfigError(qualified(key) + ": unknown value '" + text + "' (expected " + options + ")", line_of(node_[key]));
  }

  void finish() const {
    for (auto it = node_.begin(); it != node_.end(); ++it) {
      const std::string key = it->first.Scalar();
      if (!seen_.contains(key)) throw ConfigError("unknown key '" + qualified(key) + "'", line_of(it->first));
    }
  }

  std::string qualified(const std::string& key) const { return name_.empty() ? key : name_ + "." + key; }

 private:
  YAML::Node node_;
  std::string name_;
  std::set<std::string> seen_;
};

// Runs a validator and reports failures at the given line.
void check_at(int line, const std::function<void()>& validate) {
  try {
    validate();
  } catch (const InvalidParameter& e) {
    throw ConfigError(e.what(), line);
  } catch (const ConfigError& e) {
    if (e.line() > 0) throw;
    throw ConfigError(e.what(), line);
  }
}

const std::vector<std::pair<std::string, TopologyKind>> kTopologies = {
    {"none", TopologyKind::kNone}, {"inter", TopologyKind::kInter}, {"intra", TopologyKind::kIntra}};
const std::vector<std::pair<std::string, AggregationKind>> kAggregations = {
    {"weights", AggregationKind::kWeights}, {"gradients", AggregationKind::kGradients}};
const std::vector<std::pair<std::string, IntraGroup>> kIntraGroups = {
    {"predecessors", IntraGroup::kPredecessors}, {"predecessor-only", IntraGroup::kPredecessorOnly}};

void read_vehicle(Section& s, VehicleParams& v) {
  s.read("tau", v.tau);
  s.read("h", v.h);
  s.read("r", v.r);
  s.read("length", v.length);
  s.read("u_max", v.u_max);
}

template <typename F>
void with_section(Section& parent, const std::string& key, F&& body) {
  const YAML::Node node = parent.take(key);
  if (!node) return;
  Section s(node, parent.qualified(key));
  body(s);
  s.finish();
}

ExperimentConfig parse_root(const YAML::Node& root) {
  if (!root || root.IsNull()) throw ConfigError("empty configuration", 1);
  Section top(root, "");

  ExperimentConfig c;
  std::string base;
  top.read("preset", base);
  if (!base.empty()) {
    try {
      c = preset(base);
    } catch (const ConfigError& e) {
      throw ConfigError(e.what(), line_of(root["preset"]));
    }
  }

  top.read("name", c.name);
  top.read_enum("topology", c.topology, kTopologies);
  top.read_enum("intra_group", c.intra_group, kIntraGroups);
  top.read_enum("aggregation", c.aggregation, kAggregations);
  top.read("update_delay", c.update_delay);
  top.read("cutoff_ratio", c.cutoff_ratio);
  top.read("platoons", c.platoons);
  top.read("followers", c.followers);
  top.read("episodes", c.episodes);
  top.read("divergence_limit", c.divergence_limit);

  with_section(top, "seeds", [&](Section& s) {
    s.read("train", c.train_seed);
    s.read("eval", c.eval_seed);
  });
  with_section(top, "episode", [&](Section& s) {
    s.read("steps", c.episode.steps);
    s.read("step_time", c.episode.step_time);
    s.read("init_ep", c.episode.init_ep);
    s.read("init_ev", c.episode.init_ev);
    s.read("init_a", c.episode.init_a);
    check_at(s.line(), [&] { c.episode.validate(); });
  });
  with_section(top, "vehicle", [&](Section& s) {
    read_vehicle(s, c.vehicle);
    check_at(s.line(), [&] { c.vehicle.validate(); });
  });
  if (const YAML::Node overrides = top.take("vehicle_overrides")) {
    if (!overrides.IsSequence()) throw ConfigError("vehicle_overrides must be a list", line_of(overrides));
    c.vehicle_overrides.clear();
    for (const auto& item : overrides) {
      Section s(item, "vehicle_overrides");
      int index = 0;
      s.read("vehicle", index);
      if (index < 1) throw ConfigError("vehicle_overrides entries need a 1-based 'vehicle' index", s.line());
      if (index > c.followers) {
        throw ConfigError("vehicle override " + std::to_string(index) + " exceeds followers", s.line());
      }
      VehicleParams v = c.vehicle;
      read_vehicle(s, v);
      s.finish();
      check_at(s.line(), [&] { v.validate(); });
      if (!c.vehicle_overrides.emplace(index - 1, v).second) {
        throw ConfigError("vehicle " + std::to_string(index) + " is overridden twice", s.line());
      }
    }
  }
  with_section(top, "leader_input", [&](Section& s) {
    s.read("mean", c.leader_input.mean);
    s.read("std", c.leader_input.std);
    s.read("clip", c.leader_input.clip);
    check_at(s.line(), [&] { c.leader_input.validate(); });
  });
  with_section(top, "reward", [&](Section& s) {
    s.read("a", c.reward.a_c);
    s.read("b", c.reward.b_c);
    s.read("c", c.reward.c_c);
    s.read("d", c.reward.d_c);
    s.read("max_ep", c.reward.max_ep);
    s.read("max_ev", c.reward.max_ev);
    s.read("max_u", c.reward.max_u);
    s.read("max_a", c.reward.max_a);
    check_at(s.line(), [&] { c.reward.validate(); });
  });
  with_section(top, "agent", [&](Section& s) {
    auto& a = c.agent;
    s.read("actor_lr", a.actor_lr);
    s.read("critic_lr", a.critic_lr);
    s.read("batch_size", a.batch_size);
    s.read("gamma", a.gamma);
    s.read("target_mix", a.target_mix);
    s.read("buffer_capacity", a.buffer_capacity);
    s.read("adam_beta1", a.adam_beta1);
    s.read("adam_beta2", a.adam_beta2);
    s.read("adam_epsilon", a.adam_epsilon);
    s.read("bn_momentum", a.bn_momentum);
    s.read("bn_epsilon", a.bn_epsilon);
    s.read("ou_theta", a.ou_theta);
    s.read("ou_sigma", a.ou_sigma);
    s.read("ou_mu", a.ou_mu);
    s.read("ou_dt", a.ou_dt);
    s.read_list("actor_hidden", a.actor_hidden);
    s.read("critic_state_hidden", a.critic_state_hidden);
    s.read("critic_action_hidden", a.critic_action_hidden);
    s.read_list("critic_hidden", a.critic_hidden);
    check_at(s.line(), [&] { a.validate(); });
  });
  top.finish();

  auto line_for = [&](std::initializer_list<const char*> keys) {
    for (const char* k : keys) {
      if (root[k]) return line_of(root[k]);
    }
    return 1;
  };
  check_at(line_for({"topology", "platoons", "followers"}), [&] { c.topology_spec().validate(); });
  check_at(line_for({"update_delay", "cutoff_ratio", "episodes"}), [&] { c.schedule().validate(); });
  check_at(line_for({"name", "preset"}), [&] { c.validate(); });
  return c;
}

std::string num(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  std::string s(buf, res.ptr);
  // Keep floats recognisable as floats to a human reader.
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return s;
}

template <typename Int>
std::string list(const std::vector<Int>& v) {
  std::string s = "[";
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + std::to_string(v[i]);
  return s + "]";
}

void dump_vehicle(std::ostringstream& out, const VehicleParams& v, const char* indent) {
  out << indent << "tau: " << num(v.tau) << "\n";
  out << indent << "h: " << num(v.h) << "\n";
  out << indent << "r: " << num(v.r) << "\n";
  out << indent << "length: " << num(v.length) << "\n";
  out << indent << "u_max: " << num(v.u_max) << "\n";
}

ExperimentConfig base_preset(std::string name, int platoons, int followers) {
  ExperimentConfig c;
  c.name = std::move(name);
  c.platoons = platoons;
  c.followers = followers;
  return c;
}

ExperimentConfig frl_preset(std::string name, TopologyKind topology, AggregationKind aggregation, double delay,
                            double cutoff, int platoons, int followers) {
  ExperimentConfig c = base_preset(std::move(name), platoons, followers);
  c.topology = topology;
  c.aggregation = aggregation;
  c.update_delay = delay;
  c.cutoff_ratio = cutoff;
  return c;
}

std::vector<ExperimentConfig> all_presets() {
  using A = AggregationKind;
  using T = TopologyKind;
  std::vector<ExperimentConfig> out = {
      base_preset("nofrl-2veh", 1, 2),
      base_preset("nofrl-inter", 2, 2),
      frl_preset("inter-gradients", T::kInter, A::kGradients, 0.1, 0.8, 2, 2),
      frl_preset("inter-weights", T::kInter, A::kWeights, 30.0, 1.0, 2, 2),
      frl_preset("intra-gradients", T::kIntra, A::kGradients, 0.4, 0.5, 1, 2),
      frl_preset("intra-weights", T::kIntra, A::kWeights, 0.1, 1.0, 1, 2),
  };
  for (int n : {3, 4, 5}) out.push_back(base_preset("nofrl-" + std::to_string(n) + "veh", 1, n));
  for (int n : {3, 4, 5}) {
    out.push_back(frl_preset("intra-weights-" + std::to_string(n) + "veh", T::kIntra, A::kWeights, 0.1, 1.0, 1, n));
  }
  return out;
}

}  // namespace

std::string to_string(TopologyKind kind) {
  for (const auto& [n, e] : kTopologies) {
    if (e == kind) return n;
  }
  return "?";
}

std::string to_string(AggregationKind kind) {
  for (const auto& [n, e] : kAggregations) {
    if (e == kind) return n;
  }
  return "?";
}

std::string to_string(IntraGroup group) {
  for (const auto& [n, e] : kIntraGroups) {
    if (e == group) return n;
  }
  return "?";
}

ExperimentConfig parse_config(std::string_view text) {
  YAML::Node root;
  try {
    root = YAML::Load(std::string(text));
  } catch (const YAML::Exception& e) {
    throw ConfigError(e.msg, e.mark.line >= 0 ? e.mark.line + 1 : 0);
  }
  return parse_root(root);
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  try {
    return parse_config(text.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::string dump_config(const ExperimentConfig& c) {
  std::ostringstream out;
  out << "name: " << c.name << "\n";
  out << "topology: " << to_string(c.topology) << "\n";
  out << "intra_group: " << to_string(c.intra_group) << "\n";
  out << "aggregation: " << to_string(c.aggregation) << "\n";
  out << "update_delay: " << num(c.update_delay) << "\n";
  out << "cutoff_ratio: " << num(c.cutoff_ratio) << "\n";
  out << "platoons: " << c.platoons << "\n";
  out << "followers: " << c.followers << "\n";
  out << "episodes: " << c.episodes << "\n";
  out << "divergence_limit: " << num(c.divergence_limit) << "\n";
  out << "seeds:\n  train: " << c.train_seed << "\n  eval: " << c.eval_seed << "\n";
  out << "episode:\n";
  out << "  steps: " << c.episode.steps << "\n";
  out << "  step_time: " << num(c.episode.step_time) << "\n";
  out << "  init_ep: " << num(c.episode.init_ep) << "\n";
  out << "  init_ev: " << num(c.episode.init_ev) << "\n";
  out << "  init_a: " << num(c.episode.init_a) << "\n";
  out << "vehicle:\n";
  dump_vehicle(out, c.vehicle, "  ");
  if (c.vehicle_overrides.empty()) {
    out << "vehicle_overrides: []\n";
  } else {
    out << "vehicle_overrides:\n";
    for (const auto& [i, v] : c.vehicle_overrides) {
      out << "  - vehicle: " << i + 1 << "\n";
      dump_vehicle(out, v, "    ");
    }
  }
  out << "leader_input:\n";
  out << "  mean: " << num(c.leader_input.mean) << "\n";
  out << "  std: " << num(c.leader_input.std) << "\n";
  out << "  clip: " << num(c.leader_input.clip) << "\n";
  out << "reward:\n";
  out << "  a: " << num(c.reward.a_c) << "\n";
  out << "  b: " << num(c.reward.b_c) << "\n";
  out << "  c: " << num(c.reward.c_c) << "\n";
  out << "  d: " << num(c.reward.d_c) << "\n";
  out << "  max_ep: " << num(c.reward.max_ep) << "\n";
  out << "  max_ev: " << num(c.reward.max_ev) << "\n";
  out << "  max_u: " << num(c.reward.max_u) << "\n";
  out << "  max_a: " << num(c.reward.max_a) << "\n";
  const auto& a = c.agent;
  out << "agent:\n";
  out << "  actor_lr: " << num(a.actor_lr) << "\n";
  out << "  critic_lr: " << num(a.critic_lr) << "\n";
  out << "  batch_size: " << a.batch_size << "\n";
  out << "  gamma: " << num(a.gamma) << "\n";
  out << "  target_mix: " << num(a.target_mix) << "\n";
  out << "  buffer_capacity: " << a.buffer_capacity << "\n";
  out << "  adam_beta1: " << num(a.adam_beta1) << "\n";
  out << "  adam_beta2: " << num(a.adam_beta2) << "\n";
  out << "  adam_epsilon: " << num(a.adam_epsilon) << "\n";
  out << "  bn_momentum: " << num(a.bn_momentum) << "\n";
  out << "  bn_epsilon: " << num(a.bn_epsilon) << "\n";
  out << "  ou_theta: " << num(a.ou_theta) << "\n";
  out << "  ou_sigma: " << num(a.ou_sigma) << "\n";
  out << "  ou_mu: " << num(a.ou_mu) << "\n";
  out << "  ou_dt: " << num(a.ou_dt) << "\n";
  out << "  actor_hidden: " << list(a.actor_hidden) << "\n";
  out << "  critic_state_hidden: " << a.critic_state_hidden << "\n";
  out << "  critic_action_hidden: " << a.critic_action_hidden << "\n";
  out << "  critic_hidden: " << list(a.critic_hidden) << "\n";
  return out.str();
}

std::vector<std::string> preset_names() {
  std::vector<std::string> names;
  for (const auto& p : all_presets()) names.push_back(p.name);
  return names;
}

ExperimentConfig preset(std::string_view name) {
  for (auto& p : all_presets()) {
    if (p.name == name) return p;
  }
  throw ConfigError("unknown preset '" + std::string(name) + "'");
}

}  // namespace fedplatoon
