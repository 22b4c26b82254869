/*
 * Software License Agreement (Apache License)
 *
 * Copyright (c) 2026, stso contributors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "stso/experiment.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iostream>
#include <limits>
#include <set>
#include <sstream>

#include "stso/error.hpp"

namespace stso {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint format assumes a little-endian host");

// Iteration index reserved for evaluation and simulation rollouts.
constexpr std::uint32_t kEvaluationIteration = 0xFFFFFFFFu;

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

/// Typed, path-aware access to one JSON object.
class Reader {
 public:
  Reader(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) throw ConfigError(path_, "must be an object");
  }

  void allow(std::initializer_list<const char*> keys) const {
    for (const auto& item : obj_.items()) {
      if (std::none_of(keys.begin(), keys.end(), [&](const char* k) { return item.key() == k; }))
        throw ConfigError(join(path_, item.key()), "unknown key");
    }
  }

  bool has(const char* key) const { return obj_.contains(key); }
  const json& at(const char* key) const { return obj_.at(key); }
  std::string path(const char* key) const { return join(path_, key); }

  double number(const char* key, double fallback) const {
    if (!has(key)) return fallback;
    return to_number(at(key), path(key));
  }
  int integer(const char* key, int fallback) const {
    if (!has(key)) return fallback;
    const json& v = at(key);
    if (!v.is_number_integer()) throw ConfigError(path(key), "expected an integer");
    return v.get<int>();
  }
  bool boolean(const char* key, bool fallback) const {
    if (!has(key)) return fallback;
    if (!at(key).is_boolean()) throw ConfigError(path(key), "expected true or false");
    return at(key).get<bool>();
  }
  std::string string(const char* key, const std::string& fallback) const {
    if (!has(key)) return fallback;
    if (!at(key).is_string()) throw ConfigError(path(key), "expected a string");
    return at(key).get<std::string>();
  }
  std::vector<double> numbers(const char* key) const {
    const json& v = at(key);
    if (v.is_number()) return {to_number(v, path(key))};
    if (!v.is_array()) throw ConfigError(path(key), "expected a number or an array of numbers");
    std::vector<double> out;
    for (std::size_t i = 0; i < v.size(); ++i) out.push_back(to_number(v[i], path(key) + "[" + std::to_string(i) + "]"));
    return out;
  }
  std::vector<int> integers(const char* key) const {
    const json& v = at(key);
    if (v.is_number_integer()) return {v.get<int>()};
    if (!v.is_array()) throw ConfigError(path(key), "expected an integer or an array of integers");
    std::vector<int> out;
    for (const auto& x : v) {
      if (!x.is_number_integer()) throw ConfigError(path(key), "expected integers");
      out.push_back(x.get<int>());
    }
    return out;
  }
  Reader sub(const char* key) const { return Reader(at(key), path(key)); }

  static double to_number(const json& v, const std::string& path) {
    if (v.is_number()) return v.get<double>();
    if (v.is_string()) {
      const auto s = v.get<std::string>();
      if (s == "inf" || s == "infinity") return std::numeric_limits<double>::infinity();
    }
    throw ConfigError(path, "expected a number");
  }

 private:
  const json& obj_;
  std::string path_;
};

int dimension(SystemId id) { return id == SystemId::kHeat2d || id == SystemId::kSoftLimb2d ? 2 : 1; }

template <class T>
std::array<T, 2> axis_values(const std::vector<T>& v, int dim, const std::string& path, T fill) {
  if (v.size() == 1) return {v[0], dim == 2 ? v[0] : fill};
  if (static_cast<int>(v.size()) != dim) throw ConfigError(path, "expected " + std::to_string(dim) + " entries");
  return {v[0], dim == 2 ? v[1] : fill};
}

json axis_json(const std::array<double, 2>& v, int dim) { return dim == 2 ? json{v[0], v[1]} : json{v[0]}; }
json axis_json(const std::array<int, 2>& v, int dim) { return dim == 2 ? json{v[0], v[1]} : json{v[0]}; }

json number_json(double x) {
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  return x;
}

void flatten(const json& node, const std::string& path, std::vector<std::string>& out) {
  if (node.is_object()) {
    for (const auto& item : node.items()) flatten(item.value(), join(path, item.key()), out);
  } else {
    out.push_back(path);
  }
}

int channel_index(const json& v, const std::string& path, const std::vector<std::string>& names) {
  if (v.is_number_integer()) return v.get<int>();
  if (v.is_string()) {
    const auto it = std::find(names.begin(), names.end(), v.get<std::string>());
    if (it != names.end()) return static_cast<int>(it - names.begin());
    throw ConfigError(path, "unknown channel '" + v.get<std::string>() + "'");
  }
  throw ConfigError(path, "expected a channel index or name");
}

std::vector<std::string> channel_names(SystemId id) {
  switch (id) {
    case SystemId::kHeat1d:
    case SystemId::kHeat2d: return {"temperature"};
    case SystemId::kBurgers1d: return {"velocity"};
    case SystemId::kNagumo1d: return {"voltage"};
    case SystemId::kEulerBernoulli1d: return {"deflection", "deflection_velocity"};
    case SystemId::kSoftLimb2d: return {"d_x", "d_y", "v_x", "v_y"};
  }
  return {};
}

}  // namespace

ExperimentConfig parse_config(const json& doc) {
  Reader root(doc, "");
  root.allow({"system", "grid", "time", "noise", "physics", "cost", "policy", "actuators", "optimizer", "seed",
              "output", "checkpoint_every", "paper_values"});
  if (!root.has("system")) throw ConfigError("system", "missing required field");
  ExperimentConfig cfg;
  const SystemId id = system_id_from_string(root.string("system", ""));
  SystemConfig& sys = cfg.system;
  sys = default_system_config(id);
  const int dim = dimension(id);

  if (root.has("grid")) {
    const Reader g = root.sub("grid");
    g.allow({"points", "extent"});
    if (g.has("points")) sys.points = axis_values(g.integers("points"), dim, g.path("points"), 1);
    if (g.has("extent")) sys.extent = axis_values(g.numbers("extent"), dim, g.path("extent"), 0.0);
  }
  if (root.has("time")) {
    const Reader t = root.sub("time");
    t.allow({"dt", "horizon"});
    sys.dt = t.number("dt", sys.dt);
    sys.horizon = t.number("horizon", sys.horizon);
  }
  if (root.has("noise")) {
    const Reader n = root.sub("noise");
    n.allow({"rho"});
    sys.rho = n.number("rho", sys.rho);
  }
  if (root.has("physics")) {
    const Reader p = root.sub("physics");
    p.allow({"epsilon", "alpha", "boundary_value", "kelvin_voigt", "viscous_damping", "density", "tensile",
             "shear_modulus", "retardation", "gravity", "gravity_scale", "actuation_gain", "initial",
             "initial_amplitude", "initial_mode"});
    sys.epsilon = p.number("epsilon", sys.epsilon);
    sys.alpha = p.number("alpha", sys.alpha);
    sys.boundary_value = p.number("boundary_value", sys.boundary_value);
    sys.kelvin_voigt = p.number("kelvin_voigt", sys.kelvin_voigt);
    sys.viscous_damping = p.number("viscous_damping", sys.viscous_damping);
    sys.density = p.number("density", sys.density);
    sys.tensile = p.number("tensile", sys.tensile);
    sys.shear_modulus = p.number("shear_modulus", sys.shear_modulus);
    sys.retardation = p.number("retardation", sys.retardation);
    sys.gravity = p.number("gravity", sys.gravity);
    sys.gravity_scale = p.number("gravity_scale", sys.gravity_scale);
    sys.actuation_gain = p.number("actuation_gain", sys.actuation_gain);
    sys.initial = p.string("initial", sys.initial);
    sys.initial_amplitude = p.number("initial_amplitude", sys.initial_amplitude);
    sys.initial_mode = p.integer("initial_mode", sys.initial_mode);
  }
  sys.validate();
  const Grid grid = sys.grid();
  const auto names = channel_names(id);

  if (root.has("cost")) {
    const Reader c = root.sub("cost");
    c.allow({"regions"});
    if (c.has("regions")) {
      const json& regions = c.at("regions");
      if (!regions.is_array()) throw ConfigError(c.path("regions"), "expected an array");
      for (std::size_t k = 0; k < regions.size(); ++k) {
        const Reader r(regions[k], c.path("regions") + "[" + std::to_string(k) + "]");
        r.allow({"channel", "lo", "hi", "target", "kappa"});
        if (!r.has("lo") || !r.has("hi")) throw ConfigError(r.path("lo"), "regions need lo and hi");
        CostRegion region;
        region.channel = r.has("channel") ? channel_index(r.at("channel"), r.path("channel"), names) : 0;
        region.lo = axis_values(r.numbers("lo"), dim, r.path("lo"), 0.0);
        region.hi = axis_values(r.numbers("hi"), dim, r.path("hi"), 0.0);
        region.target = r.number("target", 1.0);
        region.kappa = r.number("kappa", 1.0);
        cfg.cost.regions.push_back(region);
      }
    }
  }
  cfg.cost.validate(grid, static_cast<int>(names.size()));

  if (root.has("policy")) {
    const Reader p = root.sub("policy");
    p.allow({"kind", "hidden", "filters", "kernel", "zero_output_layer"});
    cfg.policy.kind = p.string("kind", cfg.policy.kind);
    if (p.has("hidden")) cfg.policy.hidden = p.integers("hidden");
    if (p.has("filters")) cfg.policy.filters = p.integers("filters");
    cfg.policy.kernel = p.integer("kernel", cfg.policy.kernel);
    cfg.policy.zero_output_layer = p.boolean("zero_output_layer", cfg.policy.zero_output_layer);
    if (cfg.policy.kind != "mlp" && cfg.policy.kind != "cnn") throw ConfigError(p.path("kind"), "expected mlp or cnn");
  }
  for (int h : cfg.policy.hidden)
    if (h < 1) throw ConfigError("policy.hidden", "layer widths must be positive");
  for (int f : cfg.policy.filters)
    if (f < 1) throw ConfigError("policy.filters", "filter counts must be positive");
  if (cfg.policy.kernel < 1 || cfg.policy.kernel % 2 == 0) throw ConfigError("policy.kernel", "must be odd and positive");

  cfg.actuators.init_lo = {0.0, 0.0};
  cfg.actuators.init_hi = grid.extent;
  if (root.has("actuators")) {
    const Reader a = root.sub("actuators");
    a.allow({"count", "init_lo", "init_hi", "width"});
    cfg.actuators.count = a.integer("count", cfg.actuators.count);
    if (a.has("init_lo")) cfg.actuators.init_lo = axis_values(a.numbers("init_lo"), dim, a.path("init_lo"), 0.0);
    if (a.has("init_hi")) cfg.actuators.init_hi = axis_values(a.numbers("init_hi"), dim, a.path("init_hi"), 0.0);
    cfg.actuators.width = a.number("width", cfg.actuators.width);
  }
  if (cfg.actuators.count < 1) throw ConfigError("actuators.count", "need at least one actuator");
  if (!(cfg.actuators.width >= min_width(grid))) throw ConfigError("actuators.width", "must be at least half a spacing");
  for (int axis = 0; axis < dim; ++axis) {
    const double lo = cfg.actuators.init_lo[axis], hi = cfg.actuators.init_hi[axis];
    if (!(lo >= 0.0 && lo <= hi && hi <= grid.extent[axis]))
      throw ConfigError("actuators.init_lo", "initial placement box must lie inside the domain");
  }

  if (root.has("optimizer")) {
    const Reader o = root.sub("optimizer");
    o.allow({"iterations", "rollouts", "lr_theta", "lr_positions", "lr_widths", "gradient_mode", "hold_fixed",
             "workers", "max_diverged_fraction"});
    auto& s = cfg.optimizer;
    s.iterations = o.integer("iterations", s.iterations);
    s.rollouts = o.integer("rollouts", s.rollouts);
    s.lr_theta = o.number("lr_theta", s.lr_theta);
    s.lr_positions = o.number("lr_positions", s.lr_positions);
    s.lr_widths = o.number("lr_widths", s.lr_widths);
    const auto mode = o.string("gradient_mode", "literal");
    if (mode == "literal")
      s.mode = GradientMode::kLiteral;
    else if (mode == "stop")
      s.mode = GradientMode::kStopWeights;
    else
      throw ConfigError(o.path("gradient_mode"), "expected literal or stop");
    const auto hold = o.string("hold_fixed", "states");
    if (hold == "states")
      s.frozen = FrozenNoise::kImplied;
    else if (hold == "noise")
      s.frozen = FrozenNoise::kRecorded;
    else
      throw ConfigError(o.path("hold_fixed"), "expected states or noise");
    s.workers = o.integer("workers", s.workers);
    s.max_diverged_fraction = o.number("max_diverged_fraction", s.max_diverged_fraction);
  }
  const auto& s = cfg.optimizer;
  if (s.iterations < 1) throw ConfigError("optimizer.iterations", "must be at least 1");
  if (s.rollouts < 1) throw ConfigError("optimizer.rollouts", "must be at least 1");
  if (s.workers < 1) throw ConfigError("optimizer.workers", "must be at least 1");
  for (auto [v, name] : {std::pair{s.lr_theta, "lr_theta"}, {s.lr_positions, "lr_positions"}, {s.lr_widths, "lr_widths"}})
    if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError(std::string("optimizer.") + name, "must be >= 0");

  if (root.has("seed")) {
    if (!doc.at("seed").is_number_unsigned() && !(doc.at("seed").is_number_integer() && doc.at("seed").get<long long>() >= 0))
      throw ConfigError("seed", "expected a non-negative integer");
    cfg.seed = doc.at("seed").get<std::uint64_t>();
  }
  cfg.output = root.string("output", cfg.output);
  cfg.checkpoint_every = root.integer("checkpoint_every", cfg.checkpoint_every);
  if (cfg.checkpoint_every < 0) throw ConfigError("checkpoint_every", "must be >= 0");

  std::set<std::string> paper;
  if (root.has("paper_values")) {
    const json& pv = doc.at("paper_values");
    if (!pv.is_array()) throw ConfigError("paper_values", "expected an array of dotted keys");
    for (const auto& k : pv) {
      if (!k.is_string()) throw ConfigError("paper_values", "expected strings");
      paper.insert(k.get<std::string>());
    }
  }
  std::vector<std::string> keys;
  json resolved = to_json(cfg);
  resolved.erase("paper_values");
  flatten(resolved, "", keys);
  for (const auto& k : paper)
    if (std::find(keys.begin(), keys.end(), k) == keys.end()) throw ConfigError("paper_values", "unknown key '" + k + "'");
  for (const auto& k : keys) cfg.provenance[k] = paper.count(k) ? "paper" : "artifact-default";
  return cfg;
}

json load_config_document(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("", "cannot open config file " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("", path.string() + ": " + e.what());
  }
}

ExperimentConfig load_config(const fs::path& path) { return parse_config(load_config_document(path)); }

json to_json(const ExperimentConfig& cfg) {
  const SystemConfig& s = cfg.system;
  const int dim = dimension(s.id);
  json doc;
  doc["system"] = to_string(s.id);
  doc["grid"] = {{"points", axis_json(s.points, dim)}, {"extent", axis_json(s.extent, dim)}};
  doc["time"] = {{"dt", s.dt}, {"horizon", s.horizon}};
  doc["noise"] = {{"rho", number_json(s.rho)}};
  doc["physics"] = {{"epsilon", s.epsilon},
                    {"alpha", s.alpha},
                    {"boundary_value", s.boundary_value},
                    {"kelvin_voigt", s.kelvin_voigt},
                    {"viscous_damping", s.viscous_damping},
                    {"density", s.density},
                    {"tensile", s.tensile},
                    {"shear_modulus", s.shear_modulus},
                    {"retardation", s.retardation},
                    {"gravity", s.gravity},
                    {"gravity_scale", s.gravity_scale},
                    {"actuation_gain", s.actuation_gain},
                    {"initial", s.initial},
                    {"initial_amplitude", s.initial_amplitude},
                    {"initial_mode", s.initial_mode}};
  json regions = json::array();
  for (const auto& r : cfg.cost.regions)
    regions.push_back({{"channel", r.channel},
                       {"lo", axis_json(r.lo, dim)},
                       {"hi", axis_json(r.hi, dim)},
                       {"target", r.target},
                       {"kappa", r.kappa}});
  doc["cost"] = {{"regions", regions}};
  doc["policy"] = {{"kind", cfg.policy.kind},
                   {"hidden", cfg.policy.hidden},
                   {"filters", cfg.policy.filters},
                   {"kernel", cfg.policy.kernel},
                   {"zero_output_layer", cfg.policy.zero_output_layer}};
  doc["actuators"] = {{"count", cfg.actuators.count},
                      {"init_lo", axis_json(cfg.actuators.init_lo, dim)},
                      {"init_hi", axis_json(cfg.actuators.init_hi, dim)},
                      {"width", cfg.actuators.width}};
  const auto& o = cfg.optimizer;
  doc["optimizer"] = {{"iterations", o.iterations},
                      {"rollouts", o.rollouts},
                      {"lr_theta", o.lr_theta},
                      {"lr_positions", o.lr_positions},
                      {"lr_widths", o.lr_widths},
                      {"gradient_mode", o.mode == GradientMode::kLiteral ? "literal" : "stop"},
                      {"hold_fixed", o.frozen == FrozenNoise::kImplied ? "states" : "noise"},
                      {"workers", o.workers},
                      {"max_diverged_fraction", o.max_diverged_fraction}};
  doc["seed"] = cfg.seed;
  doc["output"] = cfg.output;
  doc["checkpoint_every"] = cfg.checkpoint_every;
  json paper = json::array();
  for (const auto& [k, v] : cfg.provenance)
    if (v == "paper") paper.push_back(k);
  doc["paper_values"] = paper;
  return doc;
}

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("", "override '" + assignment + "' is not key=value");
  std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::parse_error&) {
    value = text;
  }
  static const std::map<std::string, std::string> aliases = {
      {"K", "optimizer.iterations"}, {"R", "optimizer.rollouts"}, {"T", "time.horizon"},
      {"dt", "time.dt"},             {"rho", "noise.rho"},        {"seed", "seed"}};
  if (key == "J") {
    if (!value.is_number_integer()) throw ConfigError("grid.points", "J must be an integer");
    const bool two_d = doc.contains("system") && doc["system"].is_string() &&
                       dimension(system_id_from_string(doc["system"].get<std::string>())) == 2;
    doc["grid"]["points"] = two_d ? json{value, value} : json{value};
    return;
  }
  if (const auto it = aliases.find(key); it != aliases.end()) key = it->second;
  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError(key, "malformed override key");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    if (node->contains(part) && !(*node)[part].is_object()) throw ConfigError(key, "not an object");
    node = &(*node)[part];
    start = dot + 1;
  }
}

Policy make_policy(const ExperimentConfig& cfg, const System& system) {
  const int outputs = cfg.actuators.count;
  Policy p = cfg.policy.kind == "cnn"
                 ? Policy::cnn(system.state_channels(), system.grid().dim == 2 ? system.grid().points[1] : 1,
                               system.grid().points[0], cfg.policy.filters, cfg.policy.kernel, outputs)
                 : Policy::mlp(static_cast<int>(system.state_size()), cfg.policy.hidden, outputs);
  RandomStream rng(StreamKey{cfg.seed, StreamPurpose::kPolicyInit, 0, 0, 0});
  p.xavier_init(rng, cfg.policy.zero_output_layer);
  return p;
}

TrainingState initial_training_state(const ExperimentConfig& cfg, const System& system) {
  TrainingState st{make_policy(cfg, system), {}, {}, 0};
  RandomStream rng(StreamKey{cfg.seed, StreamPurpose::kActuatorInit, 0, 0, 0});
  const int dim = system.grid().dim;
  st.design = random_design(system.grid(), cfg.actuators.count, std::span<const double>(cfg.actuators.init_lo.data(), dim),
                            std::span<const double>(cfg.actuators.init_hi.data(), dim), cfg.actuators.width, rng);
  st.adam.theta.lr = cfg.optimizer.lr_theta;
  st.adam.positions.lr = cfg.optimizer.lr_positions;
  st.adam.widths.lr = cfg.optimizer.lr_widths;
  return st;
}

namespace {

struct Blob {
  json tensors = json::array();
  std::vector<double> payload;

  void add(const std::string& name, std::vector<int> shape, std::span<const double> values) {
    tensors.push_back({{"name", name}, {"shape", shape}, {"offset", payload.size()}, {"count", values.size()}});
    payload.insert(payload.end(), values.begin(), values.end());
  }
};

json adam_json(const AdamGroup& g) {
  return {{"step", g.step}, {"lr", g.lr}, {"beta1", g.beta1}, {"beta2", g.beta2}, {"eps", g.eps}};
}

}  // namespace

void save_checkpoint(const fs::path& path, const TrainingState& state, std::uint64_t seed, const std::string& system) {
  Blob blob;
  const auto params = state.policy.parameters();
  for (const auto& t : state.policy.tensors())
    blob.add("policy/" + t.name, t.shape, params.subspan(t.offset, t.size));
  const auto& d = state.design;
  blob.add("design/virtual_positions", {d.count, d.dim}, d.virtual_positions);
  blob.add("design/positions", {d.count, d.dim}, d.positions);
  blob.add("design/widths", {d.count}, d.widths);
  for (auto [name, g] : {std::pair<const char*, const AdamGroup*>{"theta", &state.adam.theta},
                         {"positions", &state.adam.positions},
                         {"widths", &state.adam.widths}}) {
    blob.add(std::string("adam/") + name + "/m", {static_cast<int>(g->m.size())}, g->m);
    blob.add(std::string("adam/") + name + "/v", {static_cast<int>(g->v.size())}, g->v);
  }
  json header = {{"format", "stso-checkpoint"},
                 {"version", 1},
                 {"iteration", state.iteration},
                 {"seed", seed},
                 {"system", system},
                 {"design", {{"dim", d.dim}, {"count", d.count}}},
                 {"adam",
                  {{"theta", adam_json(state.adam.theta)},
                   {"positions", adam_json(state.adam.positions)},
                   {"widths", adam_json(state.adam.widths)}}},
                 {"tensors", blob.tensors}};
  const std::string text = header.dump();
  const std::uint64_t length = text.size();
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
    out.write(reinterpret_cast<const char*>(&length), sizeof length);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    out.write(reinterpret_cast<const char*>(blob.payload.data()),
              static_cast<std::streamsize>(blob.payload.size() * sizeof(double)));
    if (!out) throw std::runtime_error("short write on checkpoint " + path.string());
  }
  fs::rename(tmp, path);
}

json load_checkpoint(const fs::path& path, TrainingState& state) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("resume", "cannot open checkpoint " + path.string());
  std::uint64_t length = 0;
  in.read(reinterpret_cast<char*>(&length), sizeof length);
  if (!in || length > (1u << 30)) throw std::runtime_error("corrupt checkpoint header in " + path.string());
  std::string text(length, '\0');
  in.read(text.data(), static_cast<std::streamsize>(length));
  const json header = json::parse(text);
  if (header.value("format", "") != "stso-checkpoint") throw std::runtime_error(path.string() + " is not a checkpoint");
  std::vector<double> payload;
  std::size_t total = 0;
  for (const auto& t : header["tensors"]) total = std::max(total, t["offset"].get<std::size_t>() + t["count"].get<std::size_t>());
  payload.resize(total);
  in.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(total * sizeof(double)));
  if (!in) throw std::runtime_error("truncated checkpoint " + path.string());

  std::map<std::string, std::vector<double>> tensors;
  for (const auto& t : header["tensors"]) {
    const auto off = t["offset"].get<std::size_t>();
    const auto n = t["count"].get<std::size_t>();
    tensors[t["name"].get<std::string>()] = std::vector<double>(payload.begin() + off, payload.begin() + off + n);
  }
  auto take = [&](const std::string& name) -> const std::vector<double>& {
    const auto it = tensors.find(name);
    if (it == tensors.end()) throw std::runtime_error("checkpoint lacks tensor " + name);
    return it->second;
  };

  std::vector<double> params(state.policy.parameter_count());
  for (const auto& t : state.policy.tensors()) {
    const auto& v = take("policy/" + t.name);
    if (v.size() != t.size) throw ConfigError("policy", "checkpoint architecture differs from the config");
    std::copy(v.begin(), v.end(), params.begin() + static_cast<std::ptrdiff_t>(t.offset));
  }
  state.policy.set_parameters(params);
  auto& d = state.design;
  d.dim = header["design"]["dim"].get<int>();
  d.count = header["design"]["count"].get<int>();
  if (d.count != static_cast<int>(state.policy.output_size()))
    throw ConfigError("actuators.count", "checkpoint actuator count differs from the config");
  d.virtual_positions = take("design/virtual_positions");
  d.positions = take("design/positions");
  d.widths = take("design/widths");
  for (auto [name, g] : {std::pair<const char*, AdamGroup*>{"theta", &state.adam.theta},
                         {"positions", &state.adam.positions},
                         {"widths", &state.adam.widths}}) {
    const json& h = header["adam"][name];
    g->step = h["step"].get<std::uint64_t>();
    g->lr = h["lr"].get<double>();
    g->beta1 = h["beta1"].get<double>();
    g->beta2 = h["beta2"].get<double>();
    g->eps = h["eps"].get<double>();
    g->m = take(std::string("adam/") + name + "/m");
    g->v = take(std::string("adam/") + name + "/v");
  }
  state.iteration = header["iteration"].get<int>();
  return header;
}

json report_line(const IterationRecord& rec) {
  return {{"iteration", rec.iteration},
          {"loss", rec.loss},
          {"mean_J", rec.mean_J},
          {"min_J", rec.min_J},
          {"max_J", rec.max_J},
          {"mean_final_error", rec.mean_final_error},
          {"diverged", rec.diverged},
          {"positions", rec.positions},
          {"widths", rec.widths}};
}

namespace {

std::string fmt(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

std::string csv_header(const Grid& g, const std::string& tail) {
  return g.dim == 2 ? "t,x,y,channel," + tail : "t,x,channel," + tail;
}

std::string csv_prefix(const Grid& g, double t, std::size_t node, const std::string& channel) {
  std::string s = fmt(t) + "," + fmt(g.coordinate(node, 0)) + ",";
  if (g.dim == 2) s += fmt(g.coordinate(node, 1)) + ",";
  return s + channel + ",";
}

std::ofstream open_output(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

}  // namespace

void write_trajectory_csv(const fs::path& path, const System& system, const Trajectory& traj) {
  auto out = open_output(path);
  const Grid& g = system.grid();
  const auto names = system.channel_names();
  out << csv_header(g, "value") << "\n";
  for (std::size_t t = 0; t < traj.states.size(); ++t) {
    const double time = static_cast<double>(t) * system.config().dt;
    for (int c = 0; c < system.state_channels(); ++c) {
      const auto v = traj.states[t].channel(c);
      for (std::size_t n = 0; n < g.node_count(); ++n) out << csv_prefix(g, time, n, names[c]) << fmt(v[n]) << "\n";
    }
  }
}

namespace {

json manifest(const ExperimentConfig& cfg) {
  return {{"config", to_json(cfg)}, {"provenance", cfg.provenance}, {"seed", cfg.seed}};
}

void mark_overrides(ExperimentConfig& cfg, const std::vector<std::string>& overrides, bool seed_flag) {
  for (const auto& o : overrides) {
    json probe = json::object();
    probe["system"] = to_string(cfg.system.id);
    apply_override(probe, o);
    probe.erase("system");
    std::vector<std::string> keys;
    flatten(probe, "", keys);
    for (const auto& k : keys)
      if (cfg.provenance.count(k)) cfg.provenance[k] = "override";
  }
  if (seed_flag) cfg.provenance["seed"] = "override";
}

/// Keeps the JSON lines whose iteration is at most `last`.
void truncate_jsonl(const fs::path& path, int last) {
  if (!fs::exists(path)) return;
  std::ifstream in(path);
  std::vector<std::string> keep;
  for (std::string line; std::getline(in, line);) {
    if (line.empty()) continue;
    if (json::parse(line).value("iteration", 0) <= last) keep.push_back(line);
  }
  in.close();
  std::ofstream out(path, std::ios::trunc);
  for (const auto& l : keep) out << l << "\n";
}

fs::path checkpoint_path(const fs::path& dir, int iteration) {
  char name[32];
  std::snprintf(name, sizeof name, "ckpt_%04d.bin", iteration);
  return dir / "checkpoints" / name;
}

/// Accepts a checkpoint file path or a bare name such as ckpt_0100.
fs::path resolve_checkpoint(const fs::path& given, const fs::path& run_dir) {
  if (fs::exists(given)) return given;
  for (const std::string& cand : {given.string() + ".bin", (run_dir / "checkpoints" / given).string(),
                               (run_dir / "checkpoints" / given).string() + ".bin"})
    if (fs::exists(cand)) return cand;
  throw ConfigError("resume", "checkpoint " + given.string() + " not found");
}

}  // namespace

void cmd_run(const RunRequest& req) {
  json doc;
  fs::path ckpt;
  if (req.config) {
    doc = load_config_document(*req.config);
  } else if (req.resume) {
    // the run directory holds the resolved config of the interrupted run
    fs::path guess = fs::path(*req.resume);
    fs::path run_dir = req.out ? *req.out : guess.parent_path().parent_path();
    ckpt = resolve_checkpoint(guess, run_dir);
    run_dir = req.out ? *req.out : ckpt.parent_path().parent_path();
    std::ifstream in(run_dir / "manifest.json");
    if (!in) throw ConfigError("config", "no --config given and no manifest.json next to the checkpoint");
    doc = json::parse(in)["config"];
  } else {
    throw ConfigError("config", "missing --config");
  }
  for (const auto& o : req.overrides) apply_override(doc, o);
  if (req.seed) doc["seed"] = *req.seed;
  if (req.out) doc["output"] = req.out->string();
  ExperimentConfig cfg = parse_config(doc);
  if (std::isinf(cfg.system.rho)) throw ConfigError("noise.rho", "training needs finite rho");
  mark_overrides(cfg, req.overrides, req.seed.has_value());
  if (req.out) cfg.provenance["output"] = "override";

  const auto system = make_system(cfg.system);
  TrainingState state = initial_training_state(cfg, *system);
  const fs::path dir = cfg.output;
  if (req.resume) {
    if (ckpt.empty()) ckpt = resolve_checkpoint(*req.resume, dir);
    const json header = load_checkpoint(ckpt, state);
    if (header["seed"].get<std::uint64_t>() != cfg.seed) throw ConfigError("seed", "checkpoint was written with another seed");
    if (header["system"].get<std::string>() != to_string(cfg.system.id))
      throw ConfigError("system", "checkpoint belongs to another system");
  }
  fs::create_directories(dir / "checkpoints");
  {
    std::ofstream out(dir / "manifest.json", std::ios::trunc);
    out << manifest(cfg).dump(2) << "\n";
  }
  const fs::path report_path = dir / "report.jsonl";
  const fs::path timing_path = dir / "timing.jsonl";
  if (req.resume) {
    truncate_jsonl(report_path, state.iteration);
    truncate_jsonl(timing_path, state.iteration);
  } else {
    std::ofstream(report_path, std::ios::trunc);
    std::ofstream(timing_path, std::ios::trunc);
  }
  std::ofstream report(report_path, std::ios::app);
  std::ofstream timing(timing_path, std::ios::app);

  const RunContext ctx{*system, cfg.cost, cfg.optimizer, cfg.seed};
  const int total = cfg.optimizer.iterations;
  const int every_print = std::max(1, total / 20);
  run(ctx, state, [&](const IterationRecord& rec, const TrainingState& st) {
    report << report_line(rec).dump() << "\n";
    report.flush();
    timing << json{{"iteration", rec.iteration}, {"wall_seconds", rec.wall_seconds}}.dump() << "\n";
    timing.flush();
    if (cfg.checkpoint_every > 0 && rec.iteration % cfg.checkpoint_every == 0)
      save_checkpoint(checkpoint_path(dir, rec.iteration), st, cfg.seed, to_string(cfg.system.id));
    if (!req.quiet && (rec.iteration % every_print == 0 || rec.iteration == total))
      std::cerr << "iteration " << rec.iteration << "/" << total << "  loss " << rec.loss << "  mean J " << rec.mean_J
                << "\n";
  });
  save_checkpoint(checkpoint_path(dir, state.iteration), state, cfg.seed, to_string(cfg.system.id));

  const InfluenceMatrix m = influence(state.design, system->grid());
  const StateVector init = initial_state_for(*system, cfg.seed, static_cast<int>(kEvaluationIteration), 0);
  const StreamKey key{cfg.seed, StreamPurpose::kNoise, kEvaluationIteration, 0, 0};
  write_trajectory_csv(dir / "trajectory_noise_on.csv", *system, rollout(*system, state.policy, m, init, key));
  write_trajectory_csv(dir / "trajectory_noise_off.csv", *system,
                       rollout(*system, state.policy, m, init, key, RolloutOptions{true, false}));
}

void cmd_simulate(const SimulateRequest& req) {
  json doc = load_config_document(req.config);
  for (const auto& o : req.overrides) apply_override(doc, o);
  if (req.seed) doc["seed"] = *req.seed;
  const ExperimentConfig cfg = parse_config(doc);
  if (req.rollouts < 1) throw ConfigError("rollouts", "need at least one rollout");
  const auto system = make_system(cfg.system);
  TrainingState state = initial_training_state(cfg, *system);
  if (req.source == "zero") {
    std::vector<double> zeros(state.policy.parameter_count(), 0.0);
    state.policy.set_parameters(zeros);
  } else {
    if (!fs::exists(req.source)) throw ConfigError("source", "checkpoint " + req.source + " not found");
    load_checkpoint(req.source, state);
  }
  const fs::path dir = req.out ? *req.out : fs::path(cfg.output) / "simulate";
  fs::create_directories(dir);
  const InfluenceMatrix m = influence(state.design, system->grid());
  std::vector<Trajectory> runs(static_cast<std::size_t>(req.rollouts));
  parallel_for(req.rollouts, cfg.optimizer.workers, [&](int r) {
    const StateVector init = initial_state_for(*system, cfg.seed, static_cast<int>(kEvaluationIteration), r);
    const StreamKey key{cfg.seed, StreamPurpose::kNoise, kEvaluationIteration, static_cast<std::uint32_t>(r), 0};
    runs[r] = rollout(*system, state.policy, m, init, key);
  });
  for (int r = 0; r < req.rollouts; ++r) {
    char name[32];
    std::snprintf(name, sizeof name, "rollout_%03d.csv", r);
    write_trajectory_csv(dir / name, *system, runs[r]);
  }

  std::vector<const Trajectory*> ok;
  for (const auto& t : runs)
    if (!t.diverged) ok.push_back(&t);
  if (ok.size() < runs.size()) std::cerr << runs.size() - ok.size() << " rollouts diverged; left out of the summary\n";
  auto out = open_output(dir / "summary.csv");
  const Grid& g = system->grid();
  const auto names = system->channel_names();
  out << csv_header(g, "mean,two_sigma") << "\n";
  if (ok.empty()) return;
  const std::size_t steps = ok.front()->states.size();
  for (std::size_t t = 0; t < steps; ++t) {
    const double time = static_cast<double>(t) * cfg.system.dt;
    for (int c = 0; c < system->state_channels(); ++c)
      for (std::size_t n = 0; n < g.node_count(); ++n) {
        double mean = 0.0;
        for (const auto* tr : ok) mean += tr->states[t].channel(c)[n];
        mean /= static_cast<double>(ok.size());
        double var = 0.0;
        for (const auto* tr : ok) {
          const double e = tr->states[t].channel(c)[n] - mean;
          var += e * e;
        }
        var = ok.size() > 1 ? var / static_cast<double>(ok.size() - 1) : 0.0;
        out << csv_prefix(g, time, n, names[c]) << fmt(mean) << "," << fmt(2.0 * std::sqrt(var)) << "\n";
      }
  }
}

void cmd_export(const ExportRequest& req) {
  const fs::path dir = req.run_dir;
  if (!fs::is_directory(dir)) throw ConfigError("run_dir", dir.string() + " is not a directory");
  const fs::path out_path = req.out ? *req.out : dir / ("export_" + req.kind + ".csv");
  if (req.kind == "convergence") {
    std::ifstream in(dir / "report.jsonl");
    if (!in) throw ConfigError("run_dir", "no report.jsonl in " + dir.string());
    std::vector<json> lines;
    for (std::string line; std::getline(in, line);)
      if (!line.empty()) lines.push_back(json::parse(line));
    auto out = open_output(out_path);
    out << "iteration,loss,mean_J\n";
    for (const auto& l : lines)
      out << l["iteration"].get<int>() << "," << fmt(l["loss"].get<double>()) << "," << fmt(l["mean_J"].get<double>())
          << "\n";
    return;
  }
  if (req.kind != "contour" && req.kind != "final_snapshot")
    throw ConfigError("kind", "expected contour, final_snapshot or convergence");
  if (req.trajectory != "noise_on" && req.trajectory != "noise_off")
    throw ConfigError("trajectory", "expected noise_on or noise_off");
  const fs::path src = dir / ("trajectory_" + req.trajectory + ".csv");
  std::ifstream in(src);
  if (!in) throw ConfigError("run_dir", "no " + src.filename().string() + " in " + dir.string());
  std::string header;
  std::getline(in, header);
  if (header != "t,x,channel,value" && header != "t,x,y,channel,value")
    throw std::runtime_error(src.string() + " has an unexpected header");
  std::vector<std::string> rows;
  for (std::string line; std::getline(in, line);)
    if (!line.empty()) rows.push_back(line);
  auto time_of = [](const std::string& row) { return std::stod(row.substr(0, row.find(','))); };
  auto out = open_output(out_path);
  out << header << "\n";
  if (req.kind == "contour") {
    for (const auto& r : rows) out << r << "\n";
    return;
  }
  double last = -std::numeric_limits<double>::infinity();
  for (const auto& r : rows) last = std::max(last, time_of(r));
  for (const auto& r : rows)
    if (time_of(r) == last) out << r << "\n";
}

}  // namespace stso
