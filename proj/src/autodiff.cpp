#include "stellar/autodiff.hpp"

#include <algorithm>
#include <stdexcept>

namespace stellar::ad {

// ---------------------------------------------------------------------------
// ParamStore
// ---------------------------------------------------------------------------

int ParamStore::add(std::string name, Vec init) {
  Entry e;
  e.name = std::move(name);
  e.grad.assign(init.size(), 0.0);
  e.value = std::move(init);
  entries_.push_back(std::move(e));
  return static_cast<int>(entries_.size()) - 1;
}

void ParamStore::zero_grad() {
  for (auto& e : entries_) std::fill(e.grad.begin(), e.grad.end(), 0.0);
}

std::size_t ParamStore::total_size() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.size();
  return n;
}

Vec ParamStore::flatten() const {
  Vec flat;
  flat.reserve(total_size());
  for (const auto& e : entries_) flat.insert(flat.end(), e.value.begin(), e.value.end());
  return flat;
}

void ParamStore::set_flat(const Vec& flat) {
  if (flat.size() != total_size()) throw std::invalid_argument("ParamStore::set_flat: size mismatch");
  std::size_t off = 0;
  for (auto& e : entries_) {
    std::copy(flat.begin() + off, flat.begin() + off + e.value.size(), e.value.begin());
    off += e.value.size();
  }
}

Vec ParamStore::flat_grad() const {
  Vec flat;
  flat.reserve(total_size());
  for (const auto& e : entries_) flat.insert(flat.end(), e.grad.begin(), e.grad.end());
  return flat;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

void Adam::step(ParamStore& ps) {
  ++t_;
  m_.resize(static_cast<std::size_t>(ps.size()));
  v_.resize(static_cast<std::size_t>(ps.size()));
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (int i = 0; i < ps.size(); ++i) {
    auto& e = ps.at(i);
    auto& m = m_[static_cast<std::size_t>(i)];
    auto& v = v_[static_cast<std::size_t>(i)];
    if (m.size() != e.value.size()) m.assign(e.value.size(), 0.0);
    if (v.size() != e.value.size()) v.assign(e.value.size(), 0.0);
    for (std::size_t j = 0; j < e.value.size(); ++j) {
      const double g = e.grad[j];
      m[j] = beta1_ * m[j] + (1.0 - beta1_) * g;
      v[j] = beta2_ * v[j] + (1.0 - beta2_) * g * g;
      e.value[j] -= lr_ * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + eps_);
    }
  }
}

void Adam::restore(long t, std::vector<Vec> m, std::vector<Vec> v) {
  t_ = t;
  m_ = std::move(m);
  v_ = std::move(v);
}

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

int Tape::push(Vec value) {
  const int id = static_cast<int>(count_);
  if (count_ < nodes_.size()) {
    Node& n = nodes_[count_];
    n.value = std::move(value);
    n.back = nullptr;
    n.store = nullptr;
    n.entry = -1;
  } else {
    Node n;
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
  }
  ++count_;
  return id;
}

int Tape::push_like(std::size_t n) {
  const int id = static_cast<int>(count_);
  if (count_ < nodes_.size()) {
    Node& nd = nodes_[count_];
    nd.value.resize(n);
    nd.back = nullptr;
    nd.store = nullptr;
    nd.entry = -1;
  } else {
    Node nd;
    nd.value.resize(n);
    nodes_.push_back(std::move(nd));
  }
  ++count_;
  return id;
}

void Tape::set_back(int id, std::function<void(Tape&, int)> fn) {
  if (grad_enabled_) node(id).back = std::move(fn);
}

int Tape::constant(Vec v) { return push(std::move(v)); }

int Tape::param(ParamStore& ps, int entry) {
  const int id = push(ps.at(entry).value);
  node(id).store = &ps;
  node(id).entry = entry;
  return id;
}

const Vec& Tape::val(int id) const { return node(id).value; }

double Tape::scalar_val(int id) const {
  const Vec& v = val(id);
  if (v.size() != 1) throw std::logic_error("Tape::scalar_val: node is not scalar");
  return v[0];
}

const Vec& Tape::grad_of(int id) const { return node(id).grad; }

int Tape::add(int a, int b) {
  const std::size_t n = val(a).size();
  if (val(b).size() != n) throw std::invalid_argument("Tape::add: size mismatch");
  const int out = push_like(n);
  const Vec& va = val(a);
  const Vec& vb = val(b);
  Vec& vo = node(out).value;
  for (std::size_t i = 0; i < va.size(); ++i) vo[i] = va[i] + vb[i];
  set_back(out, [a, b](Tape& t, int self) {
    const Vec& g = t.node(self).grad;
    Vec& ga = t.node(a).grad;
    Vec& gb = t.node(b).grad;
    for (std::size_t i = 0; i < g.size(); ++i) {
      ga[i] += g[i];
      gb[i] += g[i];
    }
  });
  return out;
}

int Tape::sub(int a, int b) {
  const std::size_t n = val(a).size();
  if (val(b).size() != n) throw std::invalid_argument("Tape::sub: size mismatch");
  const int out = push_like(n);
  const Vec& va = val(a);
  const Vec& vb = val(b);
  Vec& vo = node(out).value;
  for (std::size_t i = 0; i < va.size(); ++i) vo[i] = va[i] - vb[i];
  set_back(out, [a, b](Tape& t, int self) {
    const Vec& g = t.node(self).grad;
    Vec& ga = t.node(a).grad;
    Vec& gb = t.node(b).grad;
    for (std::size_t i = 0; i < g.size(); ++i) {
      ga[i] += g[i];
      gb[i] -= g[i];
    }
  });
  return out;
}

int Tape::mul(int a, int b) {
  const std::size_t n = val(a).size();
  if (val(b).size() != n) throw std::invalid_argument("Tape::mul: size mismatch");
  const int out = push_like(n);
  const Vec& va = val(a);
  const Vec& vb = val(b);
  Vec& vo = node(out).value;
  for (std::size_t i = 0; i < va.size(); ++i) vo[i] = va[i] * vb[i];
  set_back(out, [a, b](Tape& t, int self) {
    const Vec& g = t.node(self).grad;
    const Vec& va = t.val(a);
    const Vec& vb = t.val(b);
    Vec& ga = t.node(a).grad;
    Vec& gb = t.node(b).grad;
    for (std::size_t i = 0; i < g.size(); ++i) {
      ga[i] += g[i] * vb[i];
      gb[i] += g[i] * va[i];
    }
  });
  return out;
}

int Tape::scale(int a, double c) {
  const int out = push_like(val(a).size());
  const Vec& va = val(a);
  Vec& vo = node(out).value;
  for (std::size_t i = 0; i < va.size(); ++i) vo[i] = va[i] * c;
  set_back(out, [a, c](Tape& t, int self) {
    const Vec& g = t.node(self).grad;
    Vec& ga = t.node(a).grad;
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c;
  });
  return out;
}

int Tape::add_const(int a, const Vec& c) {
  if (val(a).size() != c.size()) throw std::invalid_argument("Tape::add_const: size mismatch");
  const int out = push_like(c.size());
  const Vec& va = val(a);
  Vec& vo = node(out).value;
  for (std::size_t i = 0; i < va.size(); ++i) vo[i] = va[i] + c[i];
  set_back(out, [a](Tape& t, int self) {
    const Vec& g = t.node(self).grad;
    Vec& ga = t.node(a).grad;
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
  return out;
}

int Tape::mul_const(int a, const Vec& c) {
  if (val(a).size() != c.size()) throw std::invalid_argument("Tape::mul_const: size mismatch");
  const int out = push_like(c.size());
  const Vec& va = val(a);
  Vec& vo = node(out).value;
  for (std::size_t i = 0; i < va.size(); ++i) vo[i] = va[i] * c[i];
  set_back(out, [a, c](Tape& t, int self) {
    const Vec& g = t.node(self).grad;
    Vec& ga = t.node(a).grad;
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c[i];
  });
  return out;
}

int Tape::tanh_op(int a) {
  const int out = push_like(val(a).size());
  const Vec& va = val(a);
  Vec& vo = node(out).value;
  for (std::size_t i = 0; i < va.size(); ++i) vo[i] = std::tanh(va[i]);
  set_back(out, [a](Tape& t, int self) {
    const Vec& g = t.node(self).grad;
    const Vec& y = t.val(self);
    Vec& ga = t.node(a).grad;
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
  });
  return out;
}

int Tape::softplus_op(int a) {
  const int out = push_like(val(a).size());
  const Vec& va = val(a);
  Vec& vo = node(out).value;
  for (std::size_t i = 0; i < va.size(); ++i) {
    const double x = va[i];
    vo[i] = x > 30.0 ? x : (x < -30.0 ? std::exp(x) : std::log1p(std::exp(x)));
  }
  set_back(out, [a](Tape& t, int self) {
    const Vec& g = t.node(self).grad;
    const Vec& x = t.val(a);
    Vec& ga = t.node(a).grad;
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / (1.0 + std::exp(-x[i]));
  });
  return out;
}

int Tape::exp_op(int a) {
  const int out = push_like(val(a).size());
  const Vec& va = val(a);
  Vec& vo = node(out).value;
  for (std::size_t i = 0; i < va.size(); ++i) vo[i] = std::exp(va[i]);
  set_back(out, [a](Tape& t, int self) {
    const Vec& g = t.node(self).grad;
    const Vec& y = t.val(self);
    Vec& ga = t.node(a).grad;
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
  });
  return out;
}

int Tape::log_op(int a) {
  const int out = push_like(val(a).size());
  const Vec& va = val(a);
  Vec& vo = node(out).value;
  for (std::size_t i = 0; i < va.size(); ++i) vo[i] = std::log(va[i]);
  set_back(out, [a](Tape& t, int self) {
    const Vec& g = t.node(self).grad;
    const Vec& x = t.val(a);
    Vec& ga = t.node(a).grad;
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / x[i];
  });
  return out;
}

int Tape::sqrt_op(int a) {
  const int out = push_like(val(a).size());
  const Vec& va = val(a);
  Vec& vo = node(out).value;
  for (std::size_t i = 0; i < va.size(); ++i) vo[i] = std::sqrt(va[i]);
  set_back(out, [a](Tape& t, int self) {
    const Vec& g = t.node(self).grad;
    const Vec& y = t.val(self);
    Vec& ga = t.node(a).grad;
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * 0.5 / y[i];
  });
  return out;
}

int Tape::scale_by(int vec, int scalar_node) {
  const double s = scalar_val(scalar_node);
  const int out = push_like(val(vec).size());
  const Vec& va = val(vec);
  Vec& vo = node(out).value;
  for (std::size_t i = 0; i < va.size(); ++i) vo[i] = va[i] * s;
  set_back(out, [vec, scalar_node](Tape& t, int self) {
    const Vec& g = t.node(self).grad;
    const Vec& va = t.val(vec);
    const double s = t.scalar_val(scalar_node);
    Vec& gv = t.node(vec).grad;
    Vec& gs = t.node(scalar_node).grad;
    double acc = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
      gv[i] += g[i] * s;
      acc += g[i] * va[i];
    }
    gs[0] += acc;
  });
  return out;
}

int Tape::matvec(int w, int x, std::size_t rows, std::size_t cols) {
  if (val(w).size() != rows * cols || val(x).size() != cols)
    throw std::invalid_argument("Tape::matvec: shape mismatch");
  const int out = push_like(rows);
  const Vec& vw = val(w);
  const Vec& vx = val(x);
  Vec& vo = node(out).value;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* wr = vw.data() + r * cols;
    double acc = 0.0;
    for (std::size_t c = 0; c < cols; ++c) acc += wr[c] * vx[c];
    vo[r] = acc;
  }
  set_back(out, [w, x, rows, cols](Tape& t, int self) {
    const Vec& g = t.node(self).grad;
    const Vec& vw = t.val(w);
    const Vec& vx = t.val(x);
    Vec& gw = t.node(w).grad;
    Vec& gx = t.node(x).grad;
    for (std::size_t r = 0; r < rows; ++r) {
      const double gr = g[r];
      if (gr == 0.0) continue;
      double* gwr = gw.data() + r * cols;
      const double* wr = vw.data() + r * cols;
      for (std::size_t c = 0; c < cols; ++c) {
        gwr[c] += gr * vx[c];
        gx[c] += gr * wr[c];
      }
    }
  });
  return out;
}

int Tape::concat(const std::vector<int>& parts) {
  std::size_t n = 0;
  for (int p : parts) n += val(p).size();
  const int out = push_like(n);
  Vec& vo = node(out).value;
  std::size_t off = 0;
  for (int p : parts) {
    const Vec& vp = val(p);
    std::copy(vp.begin(), vp.end(), vo.begin() + static_cast<std::ptrdiff_t>(off));
    off += vp.size();
  }
  set_back(out, [parts](Tape& t, int self) {
    const Vec& g = t.node(self).grad;
    std::size_t off = 0;
    for (int p : parts) {
      Vec& gp = t.node(p).grad;
      for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[off + i];
      off += gp.size();
    }
  });
  return out;
}

int Tape::slice(int a, std::size_t offset, std::size_t len) {
  if (offset + len > val(a).size()) throw std::invalid_argument("Tape::slice: out of range");
  const int out = push_like(len);
  const Vec& va = val(a);
  Vec& vo = node(out).value;
  std::copy(va.begin() + static_cast<std::ptrdiff_t>(offset),
            va.begin() + static_cast<std::ptrdiff_t>(offset + len), vo.begin());
  set_back(out, [a, offset, len](Tape& t, int self) {
    const Vec& g = t.node(self).grad;
    Vec& ga = t.node(a).grad;
    for (std::size_t i = 0; i < len; ++i) ga[offset + i] += g[i];
  });
  return out;
}

int Tape::pick(int a, std::size_t index) { return slice(a, index, 1); }

int Tape::sum(int a) {
  const Vec& va = val(a);
  double acc = 0.0;
  for (double x : va) acc += x;
  const int out = push(Vec{acc});
  set_back(out, [a](Tape& t, int self) {
    const double g = t.node(self).grad[0];
    Vec& ga = t.node(a).grad;
    for (double& x : ga) x += g;
  });
  return out;
}

int Tape::mean(int a) {
  const std::size_t n = val(a).size();
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

int Tape::dot(int a, int b) {
  const Vec& va = val(a);
  const Vec& vb = val(b);
  if (va.size() != vb.size()) throw std::invalid_argument("Tape::dot: size mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < va.size(); ++i) acc += va[i] * vb[i];
  const int out = push(Vec{acc});
  set_back(out, [a, b](Tape& t, int self) {
    const double g = t.node(self).grad[0];
    const Vec& va = t.val(a);
    const Vec& vb = t.val(b);
    Vec& ga = t.node(a).grad;
    Vec& gb = t.node(b).grad;
    for (std::size_t i = 0; i < va.size(); ++i) {
      ga[i] += g * vb[i];
      gb[i] += g * va[i];
    }
  });
  return out;
}

int Tape::softmax_op(int a) {
  const int out = push(softmax(val(a)));
  set_back(out, [a](Tape& t, int self) {
    const Vec& g = t.node(self).grad;
    const Vec& y = t.val(self);
    Vec& ga = t.node(a).grad;
    double gy = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) gy += g[i] * y[i];
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += y[i] * (g[i] - gy);
  });
  return out;
}

int Tape::log_sum_exp_op(int a) {
  const int out = push(Vec{log_sum_exp(val(a))});
  set_back(out, [a](Tape& t, int self) {
    const double g = t.node(self).grad[0];
    const Vec sm = softmax(t.val(a));
    Vec& ga = t.node(a).grad;
    for (std::size_t i = 0; i < sm.size(); ++i) ga[i] += g * sm[i];
  });
  return out;
}

int Tape::rms_norm(int a, double eps) {
  const Vec& x = val(a);
  const std::size_t n = x.size();
  double ms = 0.0;
  for (double v : x) ms += v * v;
  ms = ms / static_cast<double>(n) + eps;
  const double r = std::sqrt(ms);
  const int out = push_like(n);
  const Vec& xv = val(a);
  Vec& vo = node(out).value;
  for (std::size_t i = 0; i < n; ++i) vo[i] = xv[i] / r;
  set_back(out, [a, r](Tape& t, int self) {
    const Vec& g = t.node(self).grad;
    const Vec& y = t.val(self);
    Vec& ga = t.node(a).grad;
    const std::size_t n = g.size();
    double gy = 0.0;
    for (std::size_t i = 0; i < n; ++i) gy += g[i] * y[i];
    gy /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) ga[i] += (g[i] - y[i] * gy) / r;
  });
  return out;
}

int Tape::sum_sq_diff(int a, const Vec& target) {
  const Vec& va = val(a);
  if (va.size() != target.size()) throw std::invalid_argument("Tape::sum_sq_diff: size mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < va.size(); ++i) {
    const double d = va[i] - target[i];
    acc += d * d;
  }
  const int out = push(Vec{acc});
  set_back(out, [a, target](Tape& t, int self) {
    const double g = t.node(self).grad[0];
    const Vec& va = t.val(a);
    Vec& ga = t.node(a).grad;
    for (std::size_t i = 0; i < va.size(); ++i) ga[i] += g * 2.0 * (va[i] - target[i]);
  });
  return out;
}

void Tape::backward(int loss) {
  if (!grad_enabled_) throw std::logic_error("Tape::backward: gradients disabled");
  if (val(loss).size() != 1) throw std::logic_error("Tape::backward: loss must be scalar");
  for (std::size_t i = 0; i < count_; ++i) {
    Node& n = nodes_[i];
    n.grad.assign(n.value.size(), 0.0);
  }
  node(loss).grad[0] = 1.0;
  for (int i = loss; i >= 0; --i) {
    Node& n = node(i);
    if (n.back) n.back(*this, i);
    if (n.store != nullptr) {
      Vec& pg = n.store->at(n.entry).grad;
      for (std::size_t j = 0; j < pg.size(); ++j) pg[j] += n.grad[j];
    }
  }
}

}  // namespace stellar::ad
