// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "diif/harness/container.hpp"
#include "diif/policy.hpp"
#include "diif/sim/tasks.hpp"

namespace diif {

namespace detail {

inline std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

inline long long parse_int(const std::string& key, const std::string& v) {
  size_t used = 0;
  long long out = 0;
  try {
    out = std::stoll(v, &used);
  } catch (const std::exception&) {
    fail("config: key '", key, "' wants an integer, got '", v, "'");
  }
  require(used == v.size(), "config: key '", key, "' wants an integer, got '",
          v, "'");
  return out;
}

inline double parse_double(const std::string& key, const std::string& v) {
  size_t used = 0;
  double out = 0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    fail("config: key '", key, "' wants a number, got '", v, "'");
  }
  require(used == v.size(), "config: key '", key, "' wants a number, got '", v,
          "'");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  fail("config: key '", key, "' wants true|false, got '", v, "'");
}

}  // namespace detail

/// Flat key=value text. '#' starts a comment, blank lines are skipped,
/// duplicate keys are an error so a typo cannot silently lose a setting.
inline std::map<std::string, std::string> parse_kv_text(
    const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  int ln = 0;
  while (std::getline(in, line)) {
    ++ln;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    require(eq != std::string::npos, "config line ", ln,
            ": expected key=value, got '", line, "'");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string val = detail::trim(line.substr(eq + 1));
    require(!key.empty(), "config line ", ln, ": empty key");
    require(!kv.count(key), "config line ", ln, ": duplicate key '", key, "'");
    kv[key] = val;
  }
  return kv;
}

inline std::map<std::string, std::string> load_kv_file(
    const std::string& path) {
  std::ifstream f(path);
  require(f.good(), "config: cannot open '", path, "'");
  std::string text((std::istreambuf_iterator<char>(f)),
                   std::istreambuf_iterator<char>());
  return parse_kv_text(text);
}

/// Everything one training run needs, with published defaults. lr and
/// warmup of 0/-1 mean "use the generator-specific default".
struct TrainConfig {
  PolicyTag arch = PolicyTag::decoupled_interaction;
  GenKind gen = GenKind::fm;
  InteractionConfig interaction;
  TaskName task = TaskName::dual_pick;

  int horizon = 8;
  int n_obs_steps = 3;
  int n_action_steps = 6;
  int num_inference_steps = 10;
  int diffusion_T = 100;

  int d_vis = 64;
  int d_state = 32;
  int enc_width = 64;
  int sel_width = 64;
  int gen_width = 512;
  int gen_layers = 4;
  int n_points = 32;

  int batch = 120;
  int epochs = 300;
  double lr = 0.0;
  long long warmup = -1;
  double weight_decay = 1e-6;
  double ema_decay = 0.9999;

  int demos = 100;
  int eval_episodes = 100;
  uint64_t seed = 0;

  double effective_lr() const {
    if (lr > 0) return lr;
    return gen == GenKind::ddim ? 1e-4 : 3e-5;
  }
  long long effective_warmup() const {
    if (warmup >= 0) return warmup;
    return gen == GenKind::ddim ? 500 : 10;
  }
  int K() const { return make_task(task).K; }
};

inline PolicyConfig to_policy_config(const TrainConfig& c) {
  PolicyConfig p;
  p.tag = c.arch;
  p.gen = c.gen;
  p.interaction = c.interaction;
  p.K = c.K();
  p.coord_dim = 2;
  p.n_points = c.n_points;
  p.n_joints = 3;
  p.action_dim = 4;
  p.horizon = c.horizon;
  p.n_obs_steps = c.n_obs_steps;
  p.n_action_steps = c.n_action_steps;
  p.d_vis = c.d_vis;
  p.d_state = c.d_state;
  p.enc_width = c.enc_width;
  p.sel_width = c.sel_width;
  p.gen_width = c.gen_width;
  p.gen_layers = c.gen_layers;
  p.diffusion_T = c.diffusion_T;
  p.num_inference_steps = c.num_inference_steps;
  return p;
}

inline void apply_config_kv(TrainConfig& c,
                            const std::map<std::string, std::string>& kv) {
  using detail::parse_bool;
  using detail::parse_double;
  using detail::parse_int;
  for (const auto& [key, v] : kv) {
    if (key == "arch") c.arch = policy_tag_from_name(v);
    else if (key == "generator") c.gen = gen_kind_from_name(v);
    else if (key == "variant") c.interaction.variant = variant_from_name(v);
    else if (key == "use_alpha") c.interaction.use_alpha = parse_bool(key, v);
    else if (key == "use_beta") c.interaction.use_beta = parse_bool(key, v);
    else if (key == "alpha_pin") c.interaction.alpha_pin = parse_double(key, v);
    else if (key == "detach_exchange")
      c.interaction.detach_exchange = parse_bool(key, v);
    else if (key == "task") c.task = task_from_name(v);
    else if (key == "horizon") c.horizon = static_cast<int>(parse_int(key, v));
    else if (key == "n_obs_steps")
      c.n_obs_steps = static_cast<int>(parse_int(key, v));
    else if (key == "n_action_steps")
      c.n_action_steps = static_cast<int>(parse_int(key, v));
    else if (key == "num_inference_steps")
      c.num_inference_steps = static_cast<int>(parse_int(key, v));
    else if (key == "diffusion_T")
      c.diffusion_T = static_cast<int>(parse_int(key, v));
    else if (key == "d_vis") c.d_vis = static_cast<int>(parse_int(key, v));
    else if (key == "d_state") c.d_state = static_cast<int>(parse_int(key, v));
    else if (key == "enc_width")
      c.enc_width = static_cast<int>(parse_int(key, v));
    else if (key == "sel_width")
      c.sel_width = static_cast<int>(parse_int(key, v));
    else if (key == "gen_width")
      c.gen_width = static_cast<int>(parse_int(key, v));
    else if (key == "gen_layers")
      c.gen_layers = static_cast<int>(parse_int(key, v));
    else if (key == "n_points")
      c.n_points = static_cast<int>(parse_int(key, v));
    else if (key == "batch") c.batch = static_cast<int>(parse_int(key, v));
    else if (key == "epochs") c.epochs = static_cast<int>(parse_int(key, v));
    else if (key == "lr") c.lr = parse_double(key, v);
    else if (key == "warmup") c.warmup = parse_int(key, v);
    else if (key == "weight_decay") c.weight_decay = parse_double(key, v);
    else if (key == "ema_decay") c.ema_decay = parse_double(key, v);
    else if (key == "demos") c.demos = static_cast<int>(parse_int(key, v));
    else if (key == "eval_episodes")
      c.eval_episodes = static_cast<int>(parse_int(key, v));
    else if (key == "seed")
      c.seed = static_cast<uint64_t>(parse_int(key, v));
    else
      fail("config: unknown key '", key, "'");
  }
}

inline TrainConfig train_config_from_kv(
    const std::map<std::string, std::string>& kv) {
  TrainConfig c;
  apply_config_kv(c, kv);
  return c;
}

/// Canonical text form: every key on its own line, fixed order, exact
/// numeric formatting. Two configs hash equal iff this text matches.
inline std::string canonical_config_text(const TrainConfig& c) {
  std::ostringstream out;
  out.precision(17);
  out << "alpha_pin=" << c.interaction.alpha_pin << '\n'
      << "arch=" << policy_tag_name(c.arch) << '\n'
      << "batch=" << c.batch << '\n'
      << "d_state=" << c.d_state << '\n'
      << "d_vis=" << c.d_vis << '\n'
      << "demos=" << c.demos << '\n'
      << "detach_exchange=" << (c.interaction.detach_exchange ? "true" : "false")
      << '\n'
      << "diffusion_T=" << c.diffusion_T << '\n'
      << "ema_decay=" << c.ema_decay << '\n'
      << "enc_width=" << c.enc_width << '\n'
      << "epochs=" << c.epochs << '\n'
      << "eval_episodes=" << c.eval_episodes << '\n'
      << "gen_layers=" << c.gen_layers << '\n'
      << "gen_width=" << c.gen_width << '\n'
      << "generator=" << gen_kind_name(c.gen) << '\n'
      << "horizon=" << c.horizon << '\n'
      << "lr=" << c.effective_lr() << '\n'
      << "n_action_steps=" << c.n_action_steps << '\n'
      << "n_obs_steps=" << c.n_obs_steps << '\n'
      << "n_points=" << c.n_points << '\n'
      << "num_inference_steps=" << c.num_inference_steps << '\n'
      << "seed=" << c.seed << '\n'
      << "sel_width=" << c.sel_width << '\n'
      << "task=" << task_name(c.task) << '\n'
      << "use_alpha=" << (c.interaction.use_alpha ? "true" : "false") << '\n'
      << "use_beta=" << (c.interaction.use_beta ? "true" : "false") << '\n'
      << "variant=" << variant_name(c.interaction.variant) << '\n'
      << "warmup=" << c.effective_warmup() << '\n'
      << "weight_decay=" << c.weight_decay << '\n';
  return out.str();
}

inline uint64_t config_hash(const TrainConfig& c) {
  return fnv1a64(canonical_config_text(c));
}

}  // namespace diif
