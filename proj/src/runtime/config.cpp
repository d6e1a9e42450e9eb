#include "wmnav/config.hpp"

#include <fstream>
#include "json.hpp"
#include <set>
#include <sstream>

#include "wmnav/error.hpp"

namespace wmnav {

using nlohmann::json;

namespace {

// Reads typed keys out of one section and remembers which keys were seen, so
// leftovers can be reported as unknown.
class Section {
 public:
  Section(const json& root, std::string name) : name_(std::move(name)) {
    if (!root.contains(name_)) return;
    obj_ = root.at(name_);
    if (!obj_.is_object()) throw ConfigError("config section '" + name_ + "' must be an object");
  }

  template <class T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    if (!obj_.contains(key)) return;
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!obj_.at(key).is_boolean()) throw ConfigError("");
      } else if constexpr (std::is_integral_v<T>) {
        if (!obj_.at(key).is_number_integer()) throw ConfigError("");
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!obj_.at(key).is_number()) throw ConfigError("");
      } else {
        if (!obj_.at(key).is_string()) throw ConfigError("");
      }
      out = obj_.at(key).get<T>();
    } catch (const std::exception&) {
      throw ConfigError("config key '" + name_ + "." + key + "' has the wrong type");
    }
  }

  template <class T>
  void get_optional(const std::string& key, std::optional<T>& out) {
    seen_.insert(key);
    if (!obj_.contains(key) || obj_.at(key).is_null()) return;
    T v{};
    get(key, v);
    out = v;
  }

  template <class T, class Check>
  void check(const std::string& key, const T& v, Check ok, const char* what) {
    if (!ok(v)) throw ConfigError("config key '" + name_ + "." + key + "' must be " + what);
  }

  void finish() const {
    if (obj_.is_null()) return;
    for (const auto& [k, v] : obj_.items())
      if (!seen_.count(k)) throw ConfigError("unknown config key '" + name_ + "." + k + "'");
  }

 private:
  std::string name_;
  json obj_;
  std::set<std::string> seen_;
};

const auto positive = [](auto v) { return v > 0; };
const auto non_negative = [](auto v) { return v >= 0; };
const auto unit_interval = [](auto v) { return v >= 0 && v <= 1; };

template <class T, class F>
void bounded(Section& s, const std::string& key, T& v, F ok, const char* what) {
  s.get(key, v);
  s.check(key, v, ok, what);
}

}  // namespace

AppConfig parse_config(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!root.is_object()) throw ConfigError("config must be a JSON object");
  static const std::set<std::string> sections{"data",   "vae",    "encoder", "memory",
                                              "statecheck", "policy", "eval",    "corruption"};
  for (const auto& [k, v] : root.items())
    if (!sections.count(k)) throw ConfigError("unknown config section '" + k + "'");

  AppConfig c;
  {
    Section s(root, "data");
    auto& d = c.data;
    bounded(s, "map_size", d.map_size, [](int v) { return v >= 2; }, "at least 2");
    bounded(s, "vae_images", d.vae_images, positive, "positive");
    bounded(s, "train_views", d.train_views, positive, "positive");
    bounded(s, "test_views", d.test_views, positive, "positive");
    bounded(s, "train_sequences", d.train_sequences, positive, "positive");
    bounded(s, "test_sequences", d.test_sequences, positive, "positive");
    bounded(s, "sequence_length", d.sequence_length, [](int v) { return v >= 2; }, "at least 2");
    s.finish();
  }
  {
    Section s(root, "vae");
    auto& v = c.vae;
    int latent = v.latent_dim;
    s.get("latent_dim", latent);
    s.check("latent_dim", latent, [](int x) { return x == kLatentDim; }, "32");
    bounded(s, "beta", v.beta, non_negative, "non-negative");
    bounded(s, "epochs", v.epochs, positive, "positive");
    bounded(s, "batch_size", v.batch_size, positive, "positive");
    bounded(s, "lr", v.lr, positive, "positive");
    s.finish();
  }
  {
    Section s(root, "encoder");
    auto& e = c.encoder;
    std::string mode = loss_mode_name(e.mode);
    s.get("mode", mode);
    try {
      e.mode = loss_mode_from_name(mode);
    } catch (const Error&) {
      throw ConfigError("config key 'encoder.mode' must be cosine-infonce or mse");
    }
    bounded(s, "tau", e.tau, positive, "positive");
    bounded(s, "batch_size", e.batch_size, [](int v) { return v >= 2; }, "at least 2");
    bounded(s, "epochs", e.epochs, positive, "positive");
    bounded(s, "lr", e.lr, positive, "positive");
    bounded(s, "hidden", e.hidden, positive, "positive");
    s.finish();
  }
  {
    Section s(root, "memory");
    auto& m = c.memory;
    bounded(s, "hidden", m.hidden, positive, "positive");
    bounded(s, "mixtures", m.mixtures, positive, "positive");
    bounded(s, "chunk", m.chunk, positive, "positive");
    bounded(s, "epochs", m.epochs, positive, "positive");
    bounded(s, "batch_size", m.batch_size, positive, "positive");
    bounded(s, "lr", m.lr, positive, "positive");
    bounded(s, "grad_clip", m.grad_clip, non_negative, "non-negative");
    s.finish();
  }
  {
    Section s(root, "statecheck");
    auto& st = c.statecheck;
    bounded(s, "anchors", st.anchors, positive, "positive");
    s.get_optional("rho", st.rho);
    bounded(s, "rho_percentile", st.rho_percentile, [](double q) { return q >= 0 && q <= 100; }, "in [0,100]");
    s.finish();
  }
  {
    Section s(root, "policy");
    auto& p = c.policy;
    auto& q = p.ppo;
    s.get("clip", q.clip);
    s.get("gamma", q.gamma);
    s.get("lambda", q.lambda);
    s.get("epochs", q.epochs);
    s.get("minibatch", q.minibatch);
    s.get("entropy_coef", q.entropy_coef);
    s.get("value_coef", q.value_coef);
    s.get("rollout", q.rollout);
    s.get("lr", q.lr);
    s.get("max_grad_norm", q.max_grad_norm);
    s.get("hidden", q.hidden);
    s.get("init_log_std", q.init_log_std);
    s.get("waypoint_threshold_m", q.waypoint_threshold_m);
    s.get("waypoint_resolution_m", q.waypoint_resolution_m);
    s.get("waypoint_reward", q.waypoint_reward);
    s.get("step_penalty", q.step_penalty);
    s.get("collision_penalty", q.collision_penalty);
    s.get("timeout", q.timeout);
    bounded(s, "corridor_length_m", p.corridor_length_m, positive, "positive");
    bounded(s, "max_steps", p.max_steps, positive, "positive");
    bounded(s, "eval_episodes", p.eval_episodes, positive, "positive");
    bounded(s, "check_every", p.check_every, non_negative, "non-negative");
    bounded(s, "check_episodes", p.check_episodes, positive, "positive");
    bounded(s, "stop_success", p.stop_success, unit_interval, "in [0,1]");
    s.get("stop_at_milestone", p.stop_at_milestone);
    s.finish();
    try {
      q.validate();
    } catch (const ContractError& e) {
      throw ConfigError(std::string("policy: ") + e.what());
    }
  }
  {
    Section s(root, "eval");
    auto& e = c.eval;
    s.get("encoder_mode", e.encoder_mode);
    try {
      e.encoder_mode = loss_mode_name(loss_mode_from_name(e.encoder_mode));
    } catch (const Error&) {
      throw ConfigError("config key 'eval.encoder_mode' must be cosine-infonce or mse");
    }
    s.get("use_asc", e.use_asc);
    s.get("use_memory", e.use_memory);
    bounded(s, "episodes", e.episodes, positive, "positive");
    s.get("style_family", e.style_family);
    try {
      (void)family_from_name(e.style_family);
    } catch (const Error&) {
      throw ConfigError("config key 'eval.style_family' must be train or holdout");
    }
    s.get("dump_frames", e.dump_frames);
    s.finish();
  }
  {
    Section s(root, "corruption");
    auto& k = c.corruption;
    bounded(s, "drop_rate", k.drop_rate, unit_interval, "in [0,1]");
    bounded(s, "garble_rate", k.garble_rate, unit_interval, "in [0,1]");
    bounded(s, "delay_every", k.delay_every, non_negative, "non-negative");
    s.finish();
  }
  return c;
}

AppConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingFileError("config file not found: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string dump_config(const AppConfig& c) {
  const auto& q = c.policy.ppo;
  json j{
      {"data",
       {{"map_size", c.data.map_size},
        {"vae_images", c.data.vae_images},
        {"train_views", c.data.train_views},
        {"test_views", c.data.test_views},
        {"train_sequences", c.data.train_sequences},
        {"test_sequences", c.data.test_sequences},
        {"sequence_length", c.data.sequence_length}}},
      {"vae",
       {{"latent_dim", c.vae.latent_dim},
        {"beta", c.vae.beta},
        {"epochs", c.vae.epochs},
        {"batch_size", c.vae.batch_size},
        {"lr", c.vae.lr}}},
      {"encoder",
       {{"mode", loss_mode_name(c.encoder.mode)},
        {"tau", c.encoder.tau},
        {"batch_size", c.encoder.batch_size},
        {"epochs", c.encoder.epochs},
        {"lr", c.encoder.lr},
        {"hidden", c.encoder.hidden}}},
      {"memory",
       {{"hidden", c.memory.hidden},
        {"mixtures", c.memory.mixtures},
        {"chunk", c.memory.chunk},
        {"epochs", c.memory.epochs},
        {"batch_size", c.memory.batch_size},
        {"lr", c.memory.lr},
        {"grad_clip", c.memory.grad_clip}}},
      {"statecheck",
       {{"anchors", c.statecheck.anchors},
        {"rho", c.statecheck.rho ? json(*c.statecheck.rho) : json(nullptr)},
        {"rho_percentile", c.statecheck.rho_percentile}}},
      {"policy",
       {{"clip", q.clip},
        {"gamma", q.gamma},
        {"lambda", q.lambda},
        {"epochs", q.epochs},
        {"minibatch", q.minibatch},
        {"entropy_coef", q.entropy_coef},
        {"value_coef", q.value_coef},
        {"rollout", q.rollout},
        {"lr", q.lr},
        {"max_grad_norm", q.max_grad_norm},
        {"hidden", q.hidden},
        {"init_log_std", q.init_log_std},
        {"waypoint_threshold_m", q.waypoint_threshold_m},
        {"waypoint_resolution_m", q.waypoint_resolution_m},
        {"waypoint_reward", q.waypoint_reward},
        {"step_penalty", q.step_penalty},
        {"collision_penalty", q.collision_penalty},
        {"timeout", q.timeout},
        {"corridor_length_m", c.policy.corridor_length_m},
        {"max_steps", c.policy.max_steps},
        {"eval_episodes", c.policy.eval_episodes},
        {"check_every", c.policy.check_every},
        {"check_episodes", c.policy.check_episodes},
        {"stop_success", c.policy.stop_success},
        {"stop_at_milestone", c.policy.stop_at_milestone}}},
      {"eval",
       {{"encoder_mode", c.eval.encoder_mode},
        {"use_asc", c.eval.use_asc},
        {"use_memory", c.eval.use_memory},
        {"episodes", c.eval.episodes},
        {"style_family", c.eval.style_family},
        {"dump_frames", c.eval.dump_frames}}},
      {"corruption",
       {{"drop_rate", c.corruption.drop_rate},
        {"garble_rate", c.corruption.garble_rate},
        {"delay_every", c.corruption.delay_every}}},
  };
  return j.dump(2) + "\n";
}

}  // namespace wmnav
