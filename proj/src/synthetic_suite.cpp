#include "stellar/synthetic_suite.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace stellar {

namespace {

double clampd(double v, double lo, double hi) { return std::min(std::max(v, lo), hi); }

double dist2d(const Vec& a, const Vec& b) {
  const double dx = a[0] - b[0];
  const double dy = a[1] - b[1];
  return std::sqrt(dx * dx + dy * dy);
}

// Step vector toward a target, scaled so each component respects the
// per-step bound (keeps the commanded direction exact under env clamping).
Vec step_toward(const Vec& from, const Vec& to) {
  Vec d{to[0] - from[0], to[1] - from[1]};
  const double mx = std::max(std::abs(d[0]), std::abs(d[1]));
  if (mx > kMaxStepLen) {
    d[0] *= kMaxStepLen / mx;
    d[1] *= kMaxStepLen / mx;
  }
  return d;
}

}  // namespace

LangTokens::LangTokens(std::vector<int> t) : tokens(std::move(t)) {
  if (tokens.size() != kLangLen) throw std::invalid_argument("LangTokens: wrong length");
  for (int tok : tokens)
    if (tok < 0 || tok >= kVocabSize) throw std::invalid_argument("LangTokens: token out of range");
}

void TaskSpec::validate() const {
  if (primitives.empty() || primitives.size() > 4)
    throw std::invalid_argument("TaskSpec: primitive sequence length must be 1..4");
  for (const auto& p : primitives) {
    if (p.center.size() != 2) throw std::invalid_argument("TaskSpec: region center must be 2-D");
    if (!(p.radius > 0.0)) throw std::invalid_argument("TaskSpec: region radius must be positive");
    for (double c : p.center)
      if (std::abs(c) + p.radius > 1.0)
        throw std::invalid_argument("TaskSpec: region outside the unit workspace");
  }
  if (horizon < 1) throw std::invalid_argument("TaskSpec: horizon must be positive");
  if (agent_start.size() != 2 || object_start.size() != 2)
    throw std::invalid_argument("TaskSpec: start positions must be 2-D");
}

ActionChunk ActionChunk::zeros() {
  ActionChunk c;
  c.rows.assign(kChunkHorizon, Vec(kActionDim, 0.0));
  return c;
}

TaskEnv::TaskEnv(TaskSpec spec) : spec_(std::move(spec)) { spec_.validate(); }

void TaskEnv::reset(Rng& rng) {
  std::uniform_real_distribution<double> jitter(-kInitJitter, kInitJitter);
  state_ = EnvState{};
  state_.agent_pos = {clampd(spec_.agent_start[0] + jitter(rng), -1.0, 1.0),
                      clampd(spec_.agent_start[1] + jitter(rng), -1.0, 1.0)};
  state_.object_pos = {clampd(spec_.object_start[0] + jitter(rng), -1.0, 1.0),
                       clampd(spec_.object_start[1] + jitter(rng), -1.0, 1.0)};
  advance_completion(false);  // a lucky jitter may already satisfy the first region
}

ObsVector TaskEnv::observe() const {
  ObsVector obs;
  obs.features.assign(kObsDim, 0.0);
  obs.features[0] = state_.agent_pos[0];
  obs.features[1] = state_.agent_pos[1];
  obs.features[2] = state_.gripper_closed ? 1.0 : 0.0;
  obs.features[3] = state_.object_pos[0];
  obs.features[4] = state_.object_pos[1];
  if (!success()) {
    const auto type = spec_.primitives[static_cast<std::size_t>(state_.completed)].type;
    obs.features[5 + static_cast<int>(type)] = 1.0;
  }
  return obs;
}

void TaskEnv::step(const Vec& action) {
  if (action.size() != kActionDim) throw std::invalid_argument("TaskEnv::step: bad action dim");
  const double dx = clampd(action[0], -kMaxStepLen, kMaxStepLen);
  const double dy = clampd(action[1], -kMaxStepLen, kMaxStepLen);
  const double g = clampd(action[2], -1.0, 1.0);

  bool toggled = false;
  if (g > kGripperToggleLevel) {
    state_.gripper_closed = !state_.gripper_closed;
    toggled = true;
  }

  const bool contact = dist2d(state_.agent_pos, state_.object_pos) <= kContactRadius;
  const Vec old_pos = state_.agent_pos;
  state_.agent_pos = {clampd(old_pos[0] + dx, -1.0, 1.0), clampd(old_pos[1] + dy, -1.0, 1.0)};
  if (contact) {
    state_.object_pos = {clampd(state_.object_pos[0] + (state_.agent_pos[0] - old_pos[0]), -1.0, 1.0),
                         clampd(state_.object_pos[1] + (state_.agent_pos[1] - old_pos[1]), -1.0, 1.0)};
  }
  advance_completion(toggled);
  ++state_.step;
}

void TaskEnv::advance_completion(bool toggled) {
  while (!success()) {
    const auto& p = spec_.primitives[static_cast<std::size_t>(state_.completed)];
    bool done = false;
    switch (p.type) {
      case PrimitiveType::ReachRegion:
        done = dist2d(state_.agent_pos, p.center) <= p.radius;
        break;
      case PrimitiveType::ToggleGripper:
        if (toggled && dist2d(state_.agent_pos, p.center) <= p.radius) {
          done = true;
          toggled = false;  // one toggle event completes at most one primitive
        }
        break;
      case PrimitiveType::PushToRegion:
        done = dist2d(state_.object_pos, p.center) <= p.radius;
        break;
    }
    if (!done) break;
    ++state_.completed;
  }
}

Vec scripted_expert(const TaskSpec& spec, const EnvState& state) {
  if (state.completed >= static_cast<int>(spec.primitives.size())) return {0.0, 0.0, -1.0};
  const auto& p = spec.primitives[static_cast<std::size_t>(state.completed)];
  switch (p.type) {
    case PrimitiveType::ReachRegion: {
      const Vec d = step_toward(state.agent_pos, p.center);
      return {d[0], d[1], -1.0};
    }
    case PrimitiveType::ToggleGripper: {
      if (dist2d(state.agent_pos, p.center) > 0.5 * p.radius) {
        const Vec d = step_toward(state.agent_pos, p.center);
        return {d[0], d[1], -1.0};
      }
      return {0.0, 0.0, 1.0};
    }
    case PrimitiveType::PushToRegion: {
      if (dist2d(state.agent_pos, state.object_pos) > 0.75 * kContactRadius) {
        const Vec d = step_toward(state.agent_pos, state.object_pos);
        return {d[0], d[1], -1.0};
      }
      const Vec d = step_toward(state.object_pos, p.center);
      return {d[0], d[1], -1.0};
    }
  }
  return {0.0, 0.0, -1.0};
}

LangTokens lang_for_task(int task_id, const std::vector<Primitive>& primitives) {
  std::vector<int> tokens(kLangLen, kPadToken);
  tokens[0] = 1 + (task_id / 10) % 10;
  tokens[1] = 11 + task_id % 10;
  for (std::size_t i = 0; i < primitives.size() && i + 2 < kLangLen; ++i)
    tokens[i + 2] = 21 + static_cast<int>(primitives[i].type);
  return LangTokens(std::move(tokens));
}

std::vector<TaskSpec> generate_task_set(std::uint64_t seed, int n_tasks, int shared_pool_size,
                                        const TaskSetOptions& options) {
  if (n_tasks < 1) throw std::invalid_argument("generate_task_set: n_tasks must be >= 1");
  if (shared_pool_size < 2) throw std::invalid_argument("generate_task_set: pool size must be >= 2");

  Rng pool_rng = derive_rng(seed, "task_pool");
  std::uniform_int_distribution<int> type_dist(0, 2);
  std::uniform_real_distribution<double> center_dist(-0.7, 0.7);
  std::vector<Primitive> pool(static_cast<std::size_t>(shared_pool_size));
  for (auto& p : pool) {
    p.type = static_cast<PrimitiveType>(type_dist(pool_rng));
    p.center = {center_dist(pool_rng), center_dist(pool_rng)};
    p.radius = options.region_radius;
  }

  std::vector<TaskSpec> tasks;
  tasks.reserve(static_cast<std::size_t>(n_tasks));
  for (int j = 0; j < n_tasks; ++j) {
    Rng rng = derive_rng(seed, "task", static_cast<std::uint64_t>(j));
    const int max_len = std::min({options.max_primitives, shared_pool_size, 4});
    const int min_len = std::clamp(options.min_primitives, 1, max_len);
    std::uniform_int_distribution<int> len_dist(min_len, max_len);
    const int len = len_dist(rng);

    std::vector<int> order(pool.size());
    std::iota(order.begin(), order.end(), 0);
    for (int i = 0; i < len; ++i) {
      std::uniform_int_distribution<int> pick(i, static_cast<int>(order.size()) - 1);
      std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(pick(rng))]);
    }

    TaskSpec spec;
    spec.task_id = j;
    for (int i = 0; i < len; ++i)
      spec.primitives.push_back(pool[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])]);
    std::uniform_real_distribution<double> start_dist(-0.75, 0.75);
    spec.agent_start = {start_dist(rng), start_dist(rng)};
    spec.object_start = {start_dist(rng), start_dist(rng)};
    spec.horizon = 30 + 40 * len;
    spec.lang = lang_for_task(j, spec.primitives);

    spec.name = "task" + std::to_string(j) + ":";
    for (const auto& p : spec.primitives) {
      static const char* kNames[] = {"reach", "toggle", "push"};
      spec.name += std::string(" ") + kNames[static_cast<int>(p.type)];
    }
    spec.validate();
    tasks.push_back(std::move(spec));
  }
  return tasks;
}

std::vector<Demo> generate_demos(const TaskSpec& spec, int n_demos, std::uint64_t seed) {
  std::vector<Demo> demos;
  TaskEnv env(spec);
  const int max_attempts = std::max(20 * n_demos, 50);
  for (int attempt = 0; attempt < max_attempts && static_cast<int>(demos.size()) < n_demos;
       ++attempt) {
    Rng rng = derive_rng(seed, "episode", static_cast<std::uint64_t>(attempt));
    env.reset(rng);
    Demo demo;
    demo.task_id = spec.task_id;
    for (int t = 0; t < spec.horizon && !env.success(); ++t) {
      Transition tr;
      tr.obs = env.observe();
      tr.action = scripted_expert(spec, env.state());
      env.step(tr.action);
      demo.transitions.push_back(std::move(tr));
    }
    demo.success = env.success();
    if (demo.success && !demo.transitions.empty()) demos.push_back(std::move(demo));
  }
  if (static_cast<int>(demos.size()) < n_demos)
    throw std::runtime_error("generate_demos: expert could not collect enough successes for task " +
                             std::to_string(spec.task_id));
  return demos;
}

ActionChunk ExpertPolicy::plan(const LangTokens& lang, const ObsVector& obs, Rng& rng) {
  (void)lang;
  (void)rng;
  // Mirror the environment from the observation and simulate the controller
  // forward one chunk; executing the same actions keeps mirror and env in
  // lockstep because the dynamics are deterministic.
  EnvState st;
  st.agent_pos = {obs.features[0], obs.features[1]};
  st.gripper_closed = obs.features[2] > 0.5;
  st.object_pos = {obs.features[3], obs.features[4]};
  st.completed = completed_;

  TaskEnv mirror(spec_);
  mirror.restore_state(st);
  ActionChunk chunk;
  for (int t = 0; t < kChunkHorizon; ++t) {
    Vec a = scripted_expert(spec_, mirror.state());
    mirror.step(a);
    chunk.rows.push_back(std::move(a));
  }
  completed_ = mirror.state().completed;
  return chunk;
}

RolloutResult rollout(RolloutPolicy& policy, const TaskSpec& spec, Rng& rng, int max_steps) {
  RolloutResult result;
  if (max_steps <= 0) {
    result.diagnostic = "max_steps is 0";
    return result;
  }
  TaskEnv env(spec);
  env.reset(rng);
  policy.begin_episode();

  while (result.steps < max_steps && !env.success()) {
    const ObsVector obs = env.observe();
    ActionChunk chunk = policy.plan(spec.lang, obs, rng);
    if (chunk.rows.size() != kChunkHorizon)
      throw std::logic_error("rollout: policy returned a malformed chunk");
    for (const auto& row : chunk.rows) {
      if (!all_finite(row)) {
        result.diagnostic = "non-finite action at step " + std::to_string(result.steps);
        return result;
      }
      Transition tr;
      tr.obs = env.observe();
      tr.action = row;
      env.step(row);
      result.trace.push_back(std::move(tr));
      ++result.steps;
      if (env.success() || result.steps >= max_steps) break;
    }
  }
  result.success = env.success();
  return result;
}

namespace {

Json transition_to_json(const Transition& t) {
  return Json{{"o", t.obs.features}, {"a", t.action}};
}

Transition transition_from_json(const Json& j) {
  Transition t;
  t.obs.features = j.at("o").get<Vec>();
  t.action = j.at("a").get<Vec>();
  if (t.obs.features.size() != kObsDim || t.action.size() != kActionDim)
    throw std::runtime_error("demo record: bad transition dims");
  return t;
}

}  // namespace

Bytes demos_to_bytes(const std::vector<Demo>& demos) {
  Json arr = Json::array();
  for (const auto& d : demos) {
    Json trs = Json::array();
    for (const auto& t : d.transitions) trs.push_back(transition_to_json(t));
    arr.push_back({{"task_id", d.task_id}, {"success", d.success}, {"transitions", std::move(trs)}});
  }
  return to_versioned_cbor(1, Json{{"demos", std::move(arr)}});
}

std::vector<Demo> demos_from_bytes(const Bytes& bytes) {
  const Json body = from_versioned_cbor(bytes, 1, "demo record");
  std::vector<Demo> demos;
  try {
    for (const auto& jd : body.at("demos")) {
      Demo d;
      d.task_id = jd.at("task_id").get<int>();
      d.success = jd.at("success").get<bool>();
      for (const auto& jt : jd.at("transitions")) d.transitions.push_back(transition_from_json(jt));
      demos.push_back(std::move(d));
    }
  } catch (const Json::exception& e) {
    throw std::runtime_error(std::string("demo record: malformed payload (") + e.what() + ")");
  }
  return demos;
}

Json task_set_to_json(const std::vector<TaskSpec>& tasks) {
  Json arr = Json::array();
  for (const auto& t : tasks) {
    Json prims = Json::array();
    for (const auto& p : t.primitives)
      prims.push_back(
          {{"type", static_cast<int>(p.type)}, {"center", p.center}, {"radius", p.radius}});
    arr.push_back({{"task_id", t.task_id},
                   {"name", t.name},
                   {"primitives", std::move(prims)},
                   {"lang", t.lang.tokens},
                   {"horizon", t.horizon},
                   {"agent_start", t.agent_start},
                   {"object_start", t.object_start}});
  }
  return Json{{"tasks", std::move(arr)}};
}

std::vector<TaskSpec> task_set_from_json(const Json& j) {
  std::vector<TaskSpec> tasks;
  try {
    for (const auto& jt : j.at("tasks")) {
      TaskSpec t;
      t.task_id = jt.at("task_id").get<int>();
      t.name = jt.at("name").get<std::string>();
      for (const auto& jp : jt.at("primitives")) {
        Primitive p;
        p.type = static_cast<PrimitiveType>(jp.at("type").get<int>());
        p.center = jp.at("center").get<Vec>();
        p.radius = jp.at("radius").get<double>();
        t.primitives.push_back(std::move(p));
      }
      t.lang = LangTokens(jt.at("lang").get<std::vector<int>>());
      t.horizon = jt.at("horizon").get<int>();
      t.agent_start = jt.at("agent_start").get<Vec>();
      t.object_start = jt.at("object_start").get<Vec>();
      t.validate();
      tasks.push_back(std::move(t));
    }
  } catch (const Json::exception& e) {
    throw std::runtime_error(std::string("task set: malformed payload (") + e.what() + ")");
  }
  return tasks;
}

}  // namespace stellar
