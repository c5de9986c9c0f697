#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "stellar/numerics.hpp"

namespace stellar::ad {

// Named parameter blocks with accumulated gradients. Blocks may be added
// lazily (e.g. embedding rows for clusters discovered mid-run).
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Vec value;
    Vec grad;
  };

  int add(std::string name, Vec init);
  Entry& at(int id) { return entries_.at(static_cast<std::size_t>(id)); }
  const Entry& at(int id) const { return entries_.at(static_cast<std::size_t>(id)); }
  int size() const { return static_cast<int>(entries_.size()); }
  void zero_grad();

  std::size_t total_size() const;
  Vec flatten() const;
  void set_flat(const Vec& flat);
  Vec flat_grad() const;

 private:
  std::vector<Entry> entries_;
};

class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(ParamStore& ps);
  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }

  // Moment state, exposed for checkpointing.
  long step_count() const { return t_; }
  const std::vector<Vec>& m() const { return m_; }
  const std::vector<Vec>& v() const { return v_; }
  void restore(long t, std::vector<Vec> m, std::vector<Vec> v);

 private:
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<Vec> m_, v_;
};

// Reverse-mode tape over vector-valued nodes. Node ids are indices into the
// tape; buffers are reused across reset() so per-call allocation settles after
// the first pass. With grad disabled the tape is a plain forward evaluator.
class Tape {
 public:
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  void reset() { count_ = 0; }
  bool grad_enabled() const { return grad_enabled_; }
  std::size_t node_count() const { return count_; }

  int constant(Vec v);
  int scalar(double s) { return constant(Vec{s}); }
  int param(ParamStore& ps, int entry);

  const Vec& val(int id) const;
  double scalar_val(int id) const;
  const Vec& grad_of(int id) const;

  int add(int a, int b);
  int sub(int a, int b);
  int mul(int a, int b);
  int scale(int a, double c);
  int add_const(int a, const Vec& c);
  int mul_const(int a, const Vec& c);
  int tanh_op(int a);
  int softplus_op(int a);
  int exp_op(int a);
  int log_op(int a);
  int sqrt_op(int a);
  int scale_by(int vec, int scalar_node);

  // w is a row-major (rows x cols) parameter block, x has size cols.
  int matvec(int w, int x, std::size_t rows, std::size_t cols);

  int concat(const std::vector<int>& parts);
  int slice(int a, std::size_t offset, std::size_t len);
  int pick(int a, std::size_t index);
  int sum(int a);
  int mean(int a);
  int dot(int a, int b);
  int softmax_op(int a);
  int log_sum_exp_op(int a);
  int rms_norm(int a, double eps = 1e-8);
  int sum_sq_diff(int a, const Vec& target);

  // Seeds d(loss)=1 and sweeps the tape in reverse; accumulates into every
  // reachable ParamStore entry's grad. loss must be a scalar node.
  void backward(int loss);

 private:
  struct Node {
    Vec value;
    Vec grad;
    std::function<void(Tape&, int)> back;  // (tape, own id)
    ParamStore* store = nullptr;
    int entry = -1;
  };

  std::vector<Node> nodes_;
  std::size_t count_ = 0;
  bool grad_enabled_ = true;

  Node& node(int id) { return nodes_[static_cast<std::size_t>(id)]; }
  const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }
  int push(Vec value);
  int push_like(std::size_t n);
  void set_back(int id, std::function<void(Tape&, int)> fn);
};

}  // namespace stellar::ad
