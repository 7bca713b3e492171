#include "resmimic/config.hpp"

#include <yaml-cpp/yaml.h>

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "resmimic/errors.hpp"

namespace resmimic {
namespace {

std::vector<double> broadcast(const std::vector<double>& v, int n, const std::string& key) {
  if (v.size() == 1) return std::vector<double>(static_cast<std::size_t>(n), v[0]);
  if (static_cast<int>(v.size()) != n)
    throw ConfigError("expected a scalar or " + std::to_string(n) + " entries, got " +
                          std::to_string(v.size()),
                      key);
  return v;
}

std::string format_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

// Enum <-> string glue shared by the reader and the writer.
struct EnumText {
  static std::string to(ResidualMode m) { return to_string(m); }
  static void from(const std::string& s, ResidualMode& m) { m = residual_mode_from_string(s); }
  static std::string to(BinningMode m) { return m == BinningMode::kProduct ? "product" : "marginal"; }
  static void from(const std::string& s, BinningMode& m) {
    if (s == "marginal") m = BinningMode::kMarginal;
    else if (s == "product") m = BinningMode::kProduct;
    else throw ConfigError("expected marginal or product, got '" + s + "'", "key_dofs.binning");
  }
  static std::string to(ErrorKind k) { return to_string(k); }
  static void from(const std::string& s, ErrorKind& k) { k = error_kind_from_string(s); }
};

template <class T>
concept Enum = std::is_enum_v<T>;

class Reader {
 public:
  Reader(YAML::Node node, std::string path) : node_(std::move(node)), path_(std::move(path)) {
    if (!node_.IsMap()) throw ConfigError("expected a mapping", path_.empty() ? "<root>" : path_);
  }

  bool has(const char* key) const { return static_cast<bool>(node_[key]); }

  template <class T>
  void field(const char* key, T& value) {
    seen_.insert(key);
    const YAML::Node n = node_[key];
    if (!n) return;
    read(n, value, full(key));
  }

  template <class F>
  void section(const char* key, F&& body) {
    seen_.insert(key);
    const YAML::Node n = node_[key];
    if (!n) return;
    Reader sub(n, full(key));
    body(sub);
    sub.finish();
  }

  template <class T, class F>
  void optional_section(const char* key, std::optional<T>& value, F&& body) {
    seen_.insert(key);
    const YAML::Node n = node_[key];
    if (!n) return;
    value.emplace();
    Reader sub(n, full(key));
    body(sub, *value);
    sub.finish();
  }

  template <class T, class F>
  void list(const char* key, std::vector<T>& items, F&& body) {
    seen_.insert(key);
    const YAML::Node n = node_[key];
    if (!n) return;
    if (!n.IsSequence()) throw ConfigError("expected a list", full(key));
    items.clear();
    for (std::size_t i = 0; i < n.size(); ++i) {
      Reader sub(n[i], full(key) + "[" + std::to_string(i) + "]");
      T item{};
      body(sub, item);
      sub.finish();
      items.push_back(std::move(item));
    }
  }

  void finish() const {
    for (const auto& kv : node_) {
      const auto key = kv.first.as<std::string>();
      if (!seen_.count(key)) throw ConfigError("unknown key", full(key.c_str()));
    }
  }

 private:
  std::string full(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

  template <class T>
  static T scalar(const YAML::Node& n, const std::string& key) {
    if (!n.IsScalar()) throw ConfigError("expected a scalar", key);
    try {
      return n.as<T>();
    } catch (const YAML::Exception&) {
      throw ConfigError("cannot parse '" + n.Scalar() + "'", key);
    }
  }

  static void read(const YAML::Node& n, int& v, const std::string& key) { v = scalar<int>(n, key); }
  static void read(const YAML::Node& n, double& v, const std::string& key) { v = scalar<double>(n, key); }
  static void read(const YAML::Node& n, bool& v, const std::string& key) { v = scalar<bool>(n, key); }
  static void read(const YAML::Node& n, std::uint64_t& v, const std::string& key) {
    v = scalar<std::uint64_t>(n, key);
  }
  static void read(const YAML::Node& n, std::string& v, const std::string& key) {
    v = scalar<std::string>(n, key);
  }
  static void read(const YAML::Node& n, std::filesystem::path& v, const std::string& key) {
    v = scalar<std::string>(n, key);
  }
  template <Enum E>
  static void read(const YAML::Node& n, E& v, const std::string& key) {
    const auto s = scalar<std::string>(n, key);
    try {
      EnumText::from(s, v);
    } catch (const ConfigError& e) {
      throw ConfigError("expected one of the documented names, got '" + s + "'", key);
    }
  }
  static void read(const YAML::Node& n, Range& v, const std::string& key) {
    if (!n.IsSequence() || n.size() != 2) throw ConfigError("expected [lo, hi]", key);
    v.lo = scalar<double>(n[0], key);
    v.hi = scalar<double>(n[1], key);
  }
  template <class T>
  static void read(const YAML::Node& n, std::vector<T>& v, const std::string& key) {
    v.clear();
    if (n.IsScalar()) {
      v.push_back(scalar<T>(n, key));
      return;
    }
    if (!n.IsSequence()) throw ConfigError("expected a scalar or a list", key);
    for (const auto& e : n) v.push_back(scalar<T>(e, key));
  }

  YAML::Node node_;
  std::string path_;
  std::set<std::string> seen_;
};

class Writer {
 public:
  explicit Writer(YAML::Emitter& out) : out_(out) {}

  bool has(const char*) const { return true; }

  template <class T>
  void field(const char* key, const T& value) {
    out_ << YAML::Key << key << YAML::Value;
    write(value);
  }

  template <class F>
  void section(const char* key, F&& body) {
    out_ << YAML::Key << key << YAML::Value << YAML::BeginMap;
    body(*this);
    out_ << YAML::EndMap;
  }

  template <class T, class F>
  void optional_section(const char* key, std::optional<T>& value, F&& body) {
    if (!value) return;
    out_ << YAML::Key << key << YAML::Value << YAML::BeginMap;
    body(*this, *value);
    out_ << YAML::EndMap;
  }

  template <class T, class F>
  void list(const char* key, std::vector<T>& items, F&& body) {
    out_ << YAML::Key << key << YAML::Value << YAML::BeginSeq;
    for (auto& item : items) {
      out_ << YAML::BeginMap;
      body(*this, item);
      out_ << YAML::EndMap;
    }
    out_ << YAML::EndSeq;
  }

 private:
  void write(int v) { out_ << v; }
  void write(double v) { out_ << format_double(v); }
  void write(bool v) { out_ << (v ? "true" : "false"); }
  void write(std::uint64_t v) { out_ << std::to_string(v); }
  void write(const std::string& v) { out_ << YAML::DoubleQuoted << v; }
  void write(const std::filesystem::path& v) { out_ << YAML::DoubleQuoted << v.string(); }
  template <Enum E>
  void write(E v) { out_ << EnumText::to(v); }
  void write(const Range& r) { out_ << YAML::Flow << YAML::BeginSeq << format_double(r.lo) << format_double(r.hi) << YAML::EndSeq; }
  void write(const std::vector<double>& v) {
    out_ << YAML::Flow << YAML::BeginSeq;
    for (double x : v) out_ << format_double(x);
    out_ << YAML::EndSeq;
  }
  void write(const std::vector<int>& v) {
    out_ << YAML::Flow << YAML::BeginSeq;
    for (int x : v) out_ << x;
    out_ << YAML::EndSeq;
  }

  YAML::Emitter& out_;
};

template <class IO>
void visit_robot(IO& io, RobotSpec& r) {
  io.field("n_links", r.n_links);
  io.field("base", r.base);
  io.field("link_length", r.link_length);
  io.field("link_mass", r.link_mass);
  io.field("link_inertia", r.link_inertia);
  io.field("joint_damping", r.joint_damping);
  io.field("joint_limit_lo", r.joint_limit_lo);
  io.field("joint_limit_hi", r.joint_limit_hi);
  io.field("joint_vel_limit", r.joint_vel_limit);
  io.field("torque_limit", r.torque_limit);
  io.field("kp", r.kp);
  io.field("kd", r.kd);
  io.field("base_mass", r.base_mass);
  io.field("base_inertia", r.base_inertia);
  io.field("foot_links", r.foot_links);
  io.field("gravity", r.gravity);
  io.field("contact_stiffness", r.contact_stiffness);
  io.field("contact_damping", r.contact_damping);
  io.field("contact_tangent_damping", r.contact_tangent_damping);
}

template <class IO>
void visit_synth(IO& io, SynthClipSpec& s) {
  io.field("name", s.name);
  io.field("seed", s.seed);
  io.field("duration_s", s.duration_s);
  io.field("fps", s.fps);
  io.field("n_phrases", s.n_phrases);
  io.field("tail_fraction", s.tail_fraction);
  io.field("blend_s", s.blend_s);
  io.field("center", s.center);
  io.field("amplitude_lo", s.amplitude_lo);
  io.field("amplitude_hi", s.amplitude_hi);
  io.field("frequency_lo", s.frequency_lo);
  io.field("frequency_hi", s.frequency_hi);
  io.field("tail_amplitude", s.tail_amplitude);
  io.field("root_height", s.root_height);
  io.field("pitch_amplitude", s.pitch_amplitude);
  io.field("pitch_frequency", s.pitch_frequency);
}

template <class IO>
void visit(IO& io, ExperimentConfig& c) {
  io.field("schema_version", c.schema_version);
  io.field("seed", c.seed);
  io.field("workers", c.workers);
  io.field("output_dir", c.output_dir);
  io.section("robot", [&](IO& s) { visit_robot(s, c.robot); });
  io.list("clips", c.clips, [](IO& s, ClipSource& src) {
    std::string path = src.path.string();
    s.field("path", path);
    src.path = path;
    s.field("csv_fps", src.csv_fps);
    s.optional_section("synth", src.synth, [](IO& t, SynthClipSpec& spec) { visit_synth(t, spec); });
  });
  io.section("obs", [&](IO& s) {
    s.field("history", c.obs.history);
    s.section("scales", [&](IO& t) {
      auto& sc = c.obs.scales;
      t.field("q", sc.q);
      t.field("qdot", sc.qdot);
      t.field("gravity", sc.gravity);
      t.field("ang_vel", sc.ang_vel);
      t.field("action", sc.action);
      t.field("q_ref", sc.q_ref);
      t.field("v_base", sc.v_base);
      t.field("link_pos", sc.link_pos);
      t.field("xi", sc.xi);
    });
  });
  io.section("residual", [&](IO& s) {
    auto& r = c.residual;
    s.field("mode", r.mode);
    s.field("mask", r.mask);
    s.field("bound_quantile", r.bound_quantile);
    s.field("bound_ratio", r.bound_ratio);
    s.field("min_bound", r.min_bound);
    s.field("action_scale", r.action_scale);
    s.field("absolute_action_scale", r.absolute_action_scale);
    s.field("default_pose", r.default_pose);
  });
  io.section("key_dofs", [&](IO& s) {
    s.field("quantile", c.key_dofs.quantile);
    s.field("bins", c.key_dofs.bins);
    s.field("binning", c.key_dofs.binning);
  });
  io.section("reward", [&](IO& s) {
    auto& r = c.reward;
    s.list("tracking", r.tracking, [](IO& t, TrackingTerm& term) {
      t.field("name", term.name);
      t.field("kind", term.kind);
      t.field("weight", term.weight);
      t.field("sigma", term.sigma);
    });
    s.field("lambda_torque", r.lambda_torque);
    s.field("lambda_action_rate", r.lambda_action_rate);
    s.field("lambda_limits", r.lambda_limits);
    s.field("lambda_contact", r.lambda_contact);
    s.field("lambda_termination", r.lambda_termination);
    s.field("s_min", r.s_min);
    s.field("s_max", r.s_max);
    s.field("soft_limit_margin", r.soft_limit_margin);
    s.field("contact_force_threshold", r.contact_force_threshold);
  });
  io.section("sampler", [&](IO& s) {
    auto& sc = c.sampler;
    s.field("uniform_time", sc.mix.uniform_time);
    s.field("balanced", sc.mix.balanced);
    s.field("priority", sc.mix.priority);
    s.field("priority_warmup_iters", sc.priority_warmup_iters);
    s.field("attribute_failure_to_start", sc.attribute_failure_to_start);
    s.section("rsi_jitter", [&](IO& t) {
      auto& j = sc.rsi_jitter;
      t.field("q", j.q);
      t.field("qdot", j.qdot);
      t.field("root_pos", j.root_pos);
      t.field("root_vel", j.root_vel);
      t.field("pitch", j.pitch);
      t.field("pitch_rate", j.pitch_rate);
    });
  });
  io.section("priority", [&](IO& s) {
    s.field("alpha", c.priority.alpha);
    s.field("beta", c.priority.beta);
    s.field("epsilon", c.priority.epsilon);
  });
  io.section("balance", [&](IO& s) {
    s.field("max_iterations", c.balance.max_iterations);
    s.field("tolerance", c.balance.tolerance);
  });
  io.section("ppo", [&](IO& s) {
    auto& p = c.ppo;
    s.field("gamma", p.gamma);
    s.field("gae_lambda", p.gae_lambda);
    s.field("entropy_coef", p.entropy_coef);
    s.field("learning_rate", p.learning_rate);
    s.field("desired_kl", p.desired_kl);
    s.field("adaptive_lr", p.adaptive_lr);
    s.field("clip_ratio", p.clip_ratio);
    s.field("value_coef", p.value_coef);
    s.field("epochs", p.epochs);
    s.field("minibatches", p.minibatches);
    s.field("max_grad_norm", p.max_grad_norm);
    s.field("per_head_normalize", p.per_head_normalize);
    s.field("min_lr", p.min_lr);
    s.field("max_lr", p.max_lr);
  });
  io.section("network", [&](IO& s) {
    s.field("hidden", c.network.hidden);
    s.field("init_log_std", c.network.init_log_std);
  });
  io.section("curriculum", [&](IO& s) {
    auto& cu = c.curriculum;
    s.field("eps_q", cu.eps_q);
    s.field("eps_q_min", cu.eps_q_min);
    s.field("eps_q_max", cu.eps_q_max);
    s.field("tighten_factor", cu.tighten_factor);
    s.field("target_length", cu.target_length);
    s.field("length_ema", cu.length_ema);
  });
  io.section("randomization", [&](IO& s) {
    auto& r = c.randomization;
    s.field("mass_scale", r.mass_scale);
    s.field("inertia_scale", r.inertia_scale);
    s.field("friction", r.friction);
    s.field("kp_scale", r.kp_scale);
    s.field("kd_scale", r.kd_scale);
    s.field("action_delay_min", r.action_delay_min);
    s.field("action_delay_max", r.action_delay_max);
    s.field("max_action_delay", r.max_action_delay);
    s.field("obs_noise_std", r.obs_noise_std);
    s.field("torque_noise_std", r.torque_noise_std);
  });
  io.section("termination", [&](IO& s) {
    s.field("enabled", c.termination.enabled);
    s.field("attitude_ratio", c.termination.attitude_ratio);
    s.field("attitude_floor", c.termination.attitude_floor);
    s.field("limit_tolerance", c.termination.limit_tolerance);
  });
  io.section("sim", [&](IO& s) {
    s.field("decimation", c.decimation);
    s.field("dt", c.dt);
  });
  io.section("training", [&](IO& s) {
    auto& t = c.training;
    s.field("iterations", t.iterations);
    s.field("n_envs", t.n_envs);
    s.field("steps_per_env", t.steps_per_env);
    s.field("checkpoint_every", t.checkpoint_every);
    s.field("sampler_log_every", t.sampler_log_every);
  });
  io.section("eval", [&](IO& s) {
    s.field("every", c.eval.every);
    s.field("terminate", c.eval.terminate);
    s.field("eps_q", c.eval.eps_q);
  });
}

void require(bool ok, const std::string& key, const std::string& msg) {
  if (!ok) throw ConfigError(msg, key);
}

}  // namespace

RobotModel RobotSpec::build_model() const {
  require(n_links >= 1 && n_links <= 64, "robot.n_links", "must lie in [1, 64]");
  RobotModel m;
  m.link_length = broadcast(link_length, n_links, "robot.link_length");
  m.link_mass = broadcast(link_mass, n_links, "robot.link_mass");
  if (link_inertia.empty()) {
    for (int i = 0; i < n_links; ++i)
      m.link_inertia.push_back(m.link_mass[i] * m.link_length[i] * m.link_length[i] / 12.0);
  } else {
    m.link_inertia = broadcast(link_inertia, n_links, "robot.link_inertia");
  }
  m.joint_damping = broadcast(joint_damping, n_links, "robot.joint_damping");
  const auto lo = broadcast(joint_limit_lo, n_links, "robot.joint_limit_lo");
  const auto hi = broadcast(joint_limit_hi, n_links, "robot.joint_limit_hi");
  for (int i = 0; i < n_links; ++i) m.joint_limits.push_back({lo[i], hi[i]});
  m.joint_vel_limit = broadcast(joint_vel_limit, n_links, "robot.joint_vel_limit");
  m.joint_torque_limit = broadcast(torque_limit, n_links, "robot.torque_limit");
  if (base == "fixed") m.base_mode = BaseMode::kFixed;
  else if (base == "floating") m.base_mode = BaseMode::kFloating;
  else throw ConfigError("expected fixed or floating, got '" + base + "'", "robot.base");
  m.base_mass = base_mass;
  m.base_inertia = base_inertia;
  m.foot_links = foot_links;
  m.gravity = gravity;
  m.contact_stiffness = contact_stiffness;
  m.contact_damping = contact_damping;
  m.contact_tangent_damping = contact_tangent_damping;
  m.validate();
  return m;
}

PdGains RobotSpec::build_gains() const {
  PdGains g;
  const auto p = broadcast(kp, n_links, "robot.kp");
  const auto d = broadcast(kd, n_links, "robot.kd");
  g.kp = Eigen::Map<const Vec>(p.data(), n_links);
  g.kd = Eigen::Map<const Vec>(d.data(), n_links);
  g.validate(n_links);
  return g;
}

SynthSpec SynthClipSpec::resolve(const RobotModel& model) const {
  const int n = model.n_joints();
  SynthSpec s;
  s.duration_s = duration_s;
  s.fps = fps;
  s.n_joints = n;
  s.center = broadcast(center, n, "synth.center");
  const auto alo = broadcast(amplitude_lo, n, "synth.amplitude_lo");
  const auto ahi = broadcast(amplitude_hi, n, "synth.amplitude_hi");
  const auto flo = broadcast(frequency_lo, n, "synth.frequency_lo");
  const auto fhi = broadcast(frequency_hi, n, "synth.frequency_hi");
  for (int j = 0; j < n; ++j) {
    s.amplitude.push_back({alo[j], ahi[j]});
    s.frequency.push_back({flo[j], fhi[j]});
  }
  s.tail_amplitude = broadcast(tail_amplitude, n, "synth.tail_amplitude");
  s.limits = model.joint_limits;
  s.n_phrases = n_phrases;
  s.tail_fraction = tail_fraction;
  s.blend_s = blend_s;
  s.root_height = root_height;
  s.pitch_amplitude = pitch_amplitude;
  s.pitch_frequency = pitch_frequency;
  s.validate();
  return s;
}

void ExperimentConfig::validate() const {
  require(schema_version == kConfigSchemaVersion, "schema_version",
          "unsupported version " + std::to_string(schema_version));
  require(workers >= 1 && workers <= 256, "workers", "must lie in [1, 256]");
  const RobotModel model = robot.build_model();
  robot.build_gains();
  const int n = model.n_joints();
  require(!clips.empty(), "clips", "at least one clip source is required");
  for (std::size_t i = 0; i < clips.size(); ++i) {
    const auto key = "clips[" + std::to_string(i) + "]";
    const auto& src = clips[i];
    require(src.synth.has_value() != !src.path.empty(), key, "give exactly one of path or synth");
    require(src.csv_fps > 0, key + ".csv_fps", "must be > 0");
    if (src.synth) src.synth->resolve(model);
  }
  obs.validate();
  require(residual.bound_quantile > 0 && residual.bound_quantile <= 1, "residual.bound_quantile",
          "must lie in (0, 1]");
  require(residual.bound_ratio > 0, "residual.bound_ratio", "must be > 0");
  require(residual.min_bound > 0, "residual.min_bound", "must be > 0");
  require(residual.action_scale > 0, "residual.action_scale", "must be > 0");
  require(residual.absolute_action_scale > 0, "residual.absolute_action_scale", "must be > 0");
  broadcast(residual.default_pose, n, "residual.default_pose");
  require(key_dofs.quantile >= 0 && key_dofs.quantile < 1, "key_dofs.quantile", "must lie in [0, 1)");
  require(key_dofs.bins >= 2 && key_dofs.bins <= 1024, "key_dofs.bins", "must lie in [2, 1024]");
  reward.validate();
  sampler.validate();
  require(priority.alpha > 0 && priority.alpha <= 1, "priority.alpha", "must lie in (0, 1]");
  require(priority.beta >= 0, "priority.beta", "must be >= 0");
  require(priority.epsilon > 0, "priority.epsilon", "must be > 0");
  require(balance.max_iterations >= 1, "balance.max_iterations", "must be >= 1");
  require(balance.tolerance > 0, "balance.tolerance", "must be > 0");
  ppo.validate();
  require(!network.hidden.empty(), "network.hidden", "need at least one hidden layer");
  for (int h : network.hidden) require(h >= 1 && h <= 4096, "network.hidden", "sizes must lie in [1, 4096]");
  require(network.init_log_std >= GaussianHead::kMinLogStd && network.init_log_std <= GaussianHead::kMaxLogStd,
          "network.init_log_std", "must lie in [-5, 1]");
  curriculum.validate();
  randomization.validate();
  require(termination.attitude_ratio > 0, "termination.attitude_ratio", "must be > 0");
  require(termination.attitude_floor >= 0, "termination.attitude_floor", "must be >= 0");
  require(termination.limit_tolerance >= 0, "termination.limit_tolerance", "must be >= 0");
  require(decimation >= 1 && decimation <= 1000, "sim.decimation", "must lie in [1, 1000]");
  require(dt > 0 && dt <= 0.01, "sim.dt", "must lie in (0, 0.01]");
  require(training.iterations >= 0, "training.iterations", "must be >= 0");
  require(training.n_envs >= 1, "training.n_envs", "must be >= 1");
  require(training.steps_per_env >= 1, "training.steps_per_env", "must be >= 1");
  require(training.n_envs * training.steps_per_env >= ppo.minibatches, "training.n_envs",
          "batch smaller than the number of minibatches");
  require(training.checkpoint_every >= 0, "training.checkpoint_every", "must be >= 0");
  require(training.sampler_log_every >= 0, "training.sampler_log_every", "must be >= 0");
  require(eval.every >= 0, "eval.every", "must be >= 0");
  require(eval.eps_q > 0, "eval.eps_q", "must be > 0");
}

ExperimentConfig parse_config(const std::string& text, const std::filesystem::path& base_dir) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("YAML syntax error: ") + e.what(), "<file>");
  }
  if (!root || !root.IsMap()) throw ConfigError("expected a mapping at top level", "<root>");
  if (!root["schema_version"]) throw ConfigError("missing", "schema_version");
  ExperimentConfig c;
  Reader reader(root, "");
  visit(reader, c);
  reader.finish();
  for (auto& src : c.clips)
    if (!src.path.empty() && src.path.is_relative() && !base_dir.empty()) src.path = base_dir / src.path;
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string(), "--config");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.parent_path());
}

std::string dump_config(const ExperimentConfig& config) {
  ExperimentConfig copy = config;
  YAML::Emitter out;
  out << YAML::BeginMap;
  Writer writer(out);
  visit(writer, copy);
  out << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

std::string config_hash(const ExperimentConfig& config) {
  const std::string text = dump_config(config);
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace resmimic
