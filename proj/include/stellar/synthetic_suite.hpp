#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "stellar/numerics.hpp"
#include "stellar/rng.hpp"
#include "stellar/serialize.hpp"

namespace stellar {

inline constexpr int kVocabSize = 32;
inline constexpr int kLangLen = 6;
inline constexpr int kPadToken = 0;
inline constexpr int kObsDim = 8;       // agent(2) | gripper(1) | object(2) | active-type one-hot(3)
inline constexpr int kActionDim = 3;    // dx, dy, gripper command
inline constexpr int kChunkHorizon = 4;
inline constexpr double kMaxStepLen = 0.2;
inline constexpr double kContactRadius = 0.12;
inline constexpr double kInitJitter = 0.1;
inline constexpr double kGripperToggleLevel = 0.5;  // command above this toggles

struct LangTokens {
  std::vector<int> tokens;  // always kLangLen long, padded with kPadToken

  LangTokens() : tokens(kLangLen, kPadToken) {}
  explicit LangTokens(std::vector<int> t);
};

enum class PrimitiveType { ReachRegion = 0, ToggleGripper = 1, PushToRegion = 2 };

struct Primitive {
  PrimitiveType type = PrimitiveType::ReachRegion;
  Vec center{0.0, 0.0};
  double radius = 0.22;
};

struct TaskSpec {
  int task_id = 0;
  std::string name;
  std::vector<Primitive> primitives;  // 1..4, executed in order
  LangTokens lang;
  int horizon = 0;
  Vec agent_start{-0.8, -0.8};
  Vec object_start{0.3, 0.0};

  void validate() const;
};

struct ObsVector {
  Vec features;  // kObsDim
};

struct ActionChunk {
  std::vector<Vec> rows;  // kChunkHorizon rows of kActionDim

  static ActionChunk zeros();
};

struct EnvState {
  Vec agent_pos{0.0, 0.0};
  bool gripper_closed = false;
  Vec object_pos{0.0, 0.0};
  int step = 0;
  int completed = 0;  // primitives finished so far (latched, in order)
};

// Deterministic 2-D manipulation environment. All randomness enters through
// the seeded initial-state jitter in reset().
class TaskEnv {
 public:
  explicit TaskEnv(TaskSpec spec);

  void reset(Rng& rng);
  ObsVector observe() const;
  void step(const Vec& action);
  bool success() const { return state_.completed >= static_cast<int>(spec_.primitives.size()); }

  const EnvState& state() const { return state_; }
  void restore_state(EnvState st) { state_ = std::move(st); }
  const TaskSpec& spec() const { return spec_; }

 private:
  TaskSpec spec_;
  EnvState state_;
  void advance_completion(bool toggled);
};

// Proportional controller toward the active primitive's target. Deterministic.
Vec scripted_expert(const TaskSpec& spec, const EnvState& state);

// Language tokens for a task: two id tokens plus one token per primitive type.
LangTokens lang_for_task(int task_id, const std::vector<Primitive>& primitives);

struct TaskSetOptions {
  int min_primitives = 1;
  int max_primitives = 3;
  double region_radius = 0.22;
};

// Tasks composed from a shared primitive pool so subskills repeat across
// tasks. Deterministic per seed.
std::vector<TaskSpec> generate_task_set(std::uint64_t seed, int n_tasks, int shared_pool_size,
                                        const TaskSetOptions& options = {});

struct Transition {
  ObsVector obs;
  Vec action;  // kActionDim
};

struct Demo {
  int task_id = 0;
  std::vector<Transition> transitions;
  bool success = false;
};

// Expert rollouts with seeded jitter; only successful episodes are kept.
std::vector<Demo> generate_demos(const TaskSpec& spec, int n_demos, std::uint64_t seed);

class RolloutPolicy {
 public:
  virtual ~RolloutPolicy() = default;
  virtual void begin_episode() {}
  virtual ActionChunk plan(const LangTokens& lang, const ObsVector& obs, Rng& rng) = 0;
};

// The scripted expert exposed through the chunked policy interface: it
// mirrors the environment from observations and re-plans every chunk.
class ExpertPolicy : public RolloutPolicy {
 public:
  explicit ExpertPolicy(TaskSpec spec) : spec_(std::move(spec)) {}
  void begin_episode() override { completed_ = 0; }
  ActionChunk plan(const LangTokens& lang, const ObsVector& obs, Rng& rng) override;

 private:
  TaskSpec spec_;
  int completed_ = 0;
};

struct RolloutResult {
  bool success = false;
  int steps = 0;
  std::vector<Transition> trace;
  std::string diagnostic;
};

RolloutResult rollout(RolloutPolicy& policy, const TaskSpec& spec, Rng& rng, int max_steps);

Bytes demos_to_bytes(const std::vector<Demo>& demos);
std::vector<Demo> demos_from_bytes(const Bytes& bytes);

Json task_set_to_json(const std::vector<TaskSpec>& tasks);
std::vector<TaskSpec> task_set_from_json(const Json& j);

}  // namespace stellar
