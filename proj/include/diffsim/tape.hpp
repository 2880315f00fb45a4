#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace diffsim {

class Tape;

// Handle to a scalar on a tape. id < 0 marks a constant that owns no node;
// constants fold through arithmetic without recording.
struct Value {
  Tape* tape = nullptr;
  std::int32_t id = -1;
  double v = 0.0;

  Value() = default;
  Value(double c) : tape(nullptr), id(-1), v(c) {}  // NOLINT(google-explicit-constructor)
  Value(Tape* t, std::int32_t i, double val) : tape(t), id(i), v(val) {}

  bool is_const() const { return id < 0; }
};

namespace detail {

enum class NodeKind : std::uint8_t {
  kLeaf = 0,
  kOp,       // unary/binary op with precomputed partials
  kSvd,      // svd3x3 body; a = payload index
  kSvdOut,   // svd3x3 output slot; a = payload index, b = slot
  kSeg,      // checkpoint segment body; a = payload index
  kSegOut,   // checkpoint segment output slot; a = payload index, b = slot
};

struct Node {
  std::int32_t a = -1;
  std::int32_t b = -1;
  double pa = 0.0;
  double pb = 0.0;
};

struct SvdPayload {
  std::int32_t in[9];    // node ids of F entries, row-major; -1 for constants
  double f[9];           // input values
  double u[9], s[3], vt[9];
  double out_adj[21];    // U(9), S(3), V(9) cotangents gathered during backward
};

// Defined in svd3.hpp.
void svd3x3_values(const double f[9], double u[9], double s[3], double vt[9]);
void svd3x3_adjoint(const double u[9], const double s[3], const double vt[9],
                    const double out_adj[21], double f_adj[9]);

}  // namespace detail

// Deterministic forward replay of a recorded segment: given the tape to
// record on and the captured entry scalars, produce the exit scalars.
using SegmentFn =
    std::function<std::vector<Value>(Tape&, std::span<const Value>)>;

namespace detail {

struct SegPayload {
  SegmentFn fn;
  std::vector<std::int32_t> in_ids;  // -1 entries are constants
  std::vector<double> in_vals;
  std::vector<double> out_vals;
  std::vector<double> out_adj;
};

}  // namespace detail

// Append-only record of scalar operations with reverse-mode adjoints.
// Topological order is append order; one tape belongs to one worker.
class Tape {
 public:
  Value var(double v, bool requires_grad = true) {
    (void)requires_grad;
    nodes_.push_back({});
    kinds_.push_back(detail::NodeKind::kLeaf);
    return Value(this, static_cast<std::int32_t>(nodes_.size()) - 1, v);
  }

  Value constant(double v) { return Value(nullptr, -1, v); }

  bool recording() const { return recording_; }
  void set_recording(bool on) { recording_ = on; }

  std::size_t size() const { return nodes_.size(); }

  void clear() {
    nodes_.clear();
    kinds_.clear();
    svd_payloads_.clear();
    seg_payloads_.clear();
    adjoints_.clear();
  }

  // Records a node with up to two differentiable inputs and precomputed
  // local partials. Untracked when recording is off or both inputs are
  // constants.
  Value record(double out, const Value& a, double pa) {
    if (!recording_ || a.id < 0) return Value(this, -1, out);
    nodes_.push_back({a.id, -1, pa, 0.0});
    kinds_.push_back(detail::NodeKind::kOp);
    return Value(this, static_cast<std::int32_t>(nodes_.size()) - 1, out);
  }

  Value record(double out, const Value& a, double pa, const Value& b,
               double pb) {
    if (!recording_ || (a.id < 0 && b.id < 0)) return Value(this, -1, out);
    nodes_.push_back({a.id, b.id, pa, pb});
    kinds_.push_back(detail::NodeKind::kOp);
    return Value(this, static_cast<std::int32_t>(nodes_.size()) - 1, out);
  }

  // Runs the reverse sweep from a scalar root. Adjoints are recomputed from
  // scratch on every call, so repeated backward passes are identical.
  void backward(const Value& root) {
    if (root.is_const() || root.tape != this)
      throw std::invalid_argument("backward: root must be recorded on this tape");
    adjoints_.assign(nodes_.size(), 0.0);
    adjoints_[root.id] = 1.0;
    for (auto& p : svd_payloads_)
      for (double& x : p.out_adj) x = 0.0;
    for (auto& p : seg_payloads_) p.out_adj.assign(p.out_vals.size(), 0.0);

    for (std::int32_t i = static_cast<std::int32_t>(nodes_.size()) - 1; i >= 0;
         --i) {
      const double g = adjoints_[i];
      switch (kinds_[i]) {
        case detail::NodeKind::kLeaf:
          break;
        case detail::NodeKind::kOp: {
          if (g == 0.0) break;
          const detail::Node& n = nodes_[i];
          if (n.a >= 0) adjoints_[n.a] += n.pa * g;
          if (n.b >= 0) adjoints_[n.b] += n.pb * g;
          break;
        }
        case detail::NodeKind::kSvdOut: {
          const detail::Node& n = nodes_[i];
          svd_payloads_[n.a].out_adj[n.b] += g;
          break;
        }
        case detail::NodeKind::kSvd:
          backward_svd(svd_payloads_[nodes_[i].a]);
          break;
        case detail::NodeKind::kSegOut: {
          const detail::Node& n = nodes_[i];
          seg_payloads_[n.a].out_adj[n.b] += g;
          break;
        }
        case detail::NodeKind::kSeg:
          backward_segment(nodes_[i].a);
          break;
      }
    }
  }

  double grad(const Value& leaf) const {
    if (leaf.is_const()) return 0.0;
    if (adjoints_.empty()) throw std::logic_error("grad: no backward pass ran");
    return adjoints_[leaf.id];
  }

  // svd3x3: F = U * diag(S) * V^T of a row-major 3x3 input. U, V proper up to
  // a shared sign; S descending, nonnegative for det(F) > 0. Outputs are
  // written row-major into u_out / vt_out.
  void svd3x3(const Value f_in[9], Value u_out[9], Value s_out[3],
              Value vt_out[9]);

  // Records a recompute-on-backward segment. The forward values of the exit
  // scalars come from a non-recording replay; during backward the segment is
  // replayed onto a fresh tape to recover intermediates.
  std::vector<Value> checkpoint(const SegmentFn& fn,
                                std::span<const Value> inputs) {
    if (!recording_) return fn(*this, inputs);
    detail::SegPayload payload;
    payload.fn = fn;
    payload.in_ids.reserve(inputs.size());
    payload.in_vals.reserve(inputs.size());
    for (const Value& in : inputs) {
      payload.in_ids.push_back(in.id);
      payload.in_vals.push_back(in.v);
    }
    {
      Tape scratch;
      scratch.set_recording(false);
      std::vector<Value> lifted;
      lifted.reserve(inputs.size());
      for (double x : payload.in_vals) lifted.push_back(Value(&scratch, -1, x));
      auto out = fn(scratch, lifted);
      payload.out_vals.reserve(out.size());
      for (auto& o : out) payload.out_vals.push_back(o.v);
    }
    const std::int32_t pidx = static_cast<std::int32_t>(seg_payloads_.size());
    seg_payloads_.push_back(std::move(payload));
    nodes_.push_back({pidx, -1, 0.0, 0.0});
    kinds_.push_back(detail::NodeKind::kSeg);
    std::vector<Value> result;
    const auto& out_vals = seg_payloads_[pidx].out_vals;
    result.reserve(out_vals.size());
    for (std::size_t k = 0; k < out_vals.size(); ++k) {
      nodes_.push_back({pidx, static_cast<std::int32_t>(k), 0.0, 0.0});
      kinds_.push_back(detail::NodeKind::kSegOut);
      result.push_back(Value(this, static_cast<std::int32_t>(nodes_.size()) - 1,
                             out_vals[k]));
    }
    return result;
  }

  // Peak node count seen on any tape involved in the latest backward,
  // counting this tape plus the largest segment replay tape.
  std::size_t peak_live_nodes() const {
    return nodes_.size() + peak_subtape_nodes_;
  }

 private:
  void backward_svd(detail::SvdPayload& p);

  void backward_segment(std::int32_t pidx) {
    detail::SegPayload& p = seg_payloads_[pidx];
    Tape sub;
    std::vector<Value> leaves;
    leaves.reserve(p.in_vals.size());
    for (double x : p.in_vals) leaves.push_back(sub.var(x));
    auto out = p.fn(sub, leaves);
    if (out.size() != p.out_vals.size())
      throw std::runtime_error("checkpoint replay: output arity changed");
    for (std::size_t k = 0; k < out.size(); ++k) {
      if (out[k].v != p.out_vals[k])
        throw std::runtime_error(
            "checkpoint replay: non-deterministic forward (exit value " +
            std::to_string(k) + " changed)");
    }
    // Seed all segment-output cotangents through one synthetic root.
    Value root = sub.constant(0.0);
    for (std::size_t k = 0; k < out.size(); ++k) {
      if (out[k].is_const() || p.out_adj[k] == 0.0) continue;
      root = sub.record(0.0, root, 1.0, out[k], p.out_adj[k]);
    }
    if (!root.is_const()) {
      sub.backward(root);
      for (std::size_t k = 0; k < leaves.size(); ++k) {
        if (p.in_ids[k] >= 0) adjoints_[p.in_ids[k]] += sub.grad(leaves[k]);
      }
    }
    if (sub.size() > peak_subtape_nodes_) peak_subtape_nodes_ = sub.size();
  }

  std::vector<detail::Node> nodes_;
  std::vector<detail::NodeKind> kinds_;
  std::vector<detail::SvdPayload> svd_payloads_;
  std::vector<detail::SegPayload> seg_payloads_;
  std::vector<double> adjoints_;
  std::size_t peak_subtape_nodes_ = 0;
  bool recording_ = true;
};

namespace detail {

inline Tape* tape_of(const Value& a, const Value& b) {
  return a.tape ? a.tape : b.tape;
}

}  // namespace detail

// ---- arithmetic primitives ----

inline Value operator+(const Value& a, const Value& b) {
  Tape* t = detail::tape_of(a, b);
  if (!t) return Value(a.v + b.v);
  return t->record(a.v + b.v, a, 1.0, b, 1.0);
}

inline Value operator-(const Value& a, const Value& b) {
  Tape* t = detail::tape_of(a, b);
  if (!t) return Value(a.v - b.v);
  return t->record(a.v - b.v, a, 1.0, b, -1.0);
}

inline Value operator-(const Value& a) {
  if (!a.tape) return Value(-a.v);
  return a.tape->record(-a.v, a, -1.0);
}

inline Value operator*(const Value& a, const Value& b) {
  Tape* t = detail::tape_of(a, b);
  if (!t) return Value(a.v * b.v);
  return t->record(a.v * b.v, a, b.v, b, a.v);
}

inline Value operator/(const Value& a, const Value& b) {
  Tape* t = detail::tape_of(a, b);
  const double out = a.v / b.v;
  if (!t) return Value(out);
  return t->record(out, a, 1.0 / b.v, b, -out / b.v);
}

inline Value& operator+=(Value& a, const Value& b) { return a = a + b; }
inline Value& operator-=(Value& a, const Value& b) { return a = a - b; }
inline Value& operator*=(Value& a, const Value& b) { return a = a * b; }
inline Value& operator/=(Value& a, const Value& b) { return a = a / b; }

inline Value exp(const Value& a) {
  const double out = std::exp(a.v);
  if (!a.tape) return Value(out);
  return a.tape->record(out, a, out);
}

inline Value log(const Value& a) {
  if (!(a.v > 0.0))
    throw std::domain_error("log: argument must be positive, got " +
                            std::to_string(a.v));
  const double out = std::log(a.v);
  if (!a.tape) return Value(out);
  return a.tape->record(out, a, 1.0 / a.v);
}

inline Value sqrt(const Value& a) {
  if (a.v < 0.0)
    throw std::domain_error("sqrt: argument must be nonnegative, got " +
                            std::to_string(a.v));
  const double out = std::sqrt(a.v);
  if (!a.tape) return Value(out);
  return a.tape->record(out, a, out > 0.0 ? 0.5 / out : 0.0);
}

inline Value tanh(const Value& a) {
  const double out = std::tanh(a.v);
  if (!a.tape) return Value(out);
  return a.tape->record(out, a, 1.0 - out * out);
}

inline Value sin(const Value& a) {
  if (!a.tape) return Value(std::sin(a.v));
  return a.tape->record(std::sin(a.v), a, std::cos(a.v));
}

inline Value cos(const Value& a) {
  if (!a.tape) return Value(std::cos(a.v));
  return a.tape->record(std::cos(a.v), a, -std::sin(a.v));
}

inline Value atan2(const Value& y, const Value& x) {
  Tape* t = detail::tape_of(y, x);
  const double out = std::atan2(y.v, x.v);
  if (!t) return Value(out);
  const double d = y.v * y.v + x.v * x.v;
  return t->record(out, y, x.v / d, x, -y.v / d);
}

inline Value abs(const Value& a) {
  if (!a.tape) return Value(std::fabs(a.v));
  return a.tape->record(std::fabs(a.v), a, a.v > 0.0 ? 1.0 : (a.v < 0.0 ? -1.0 : 0.0));
}

// min/max/clamp take the active branch's subgradient and zero at ties,
// matching source-transform AD on branch selection.
inline Value min(const Value& a, const Value& b) {
  Tape* t = detail::tape_of(a, b);
  const double out = a.v < b.v ? a.v : b.v;
  if (!t) return Value(out);
  return t->record(out, a, a.v < b.v ? 1.0 : 0.0, b, b.v < a.v ? 1.0 : 0.0);
}

inline Value max(const Value& a, const Value& b) {
  Tape* t = detail::tape_of(a, b);
  const double out = a.v > b.v ? a.v : b.v;
  if (!t) return Value(out);
  return t->record(out, a, a.v > b.v ? 1.0 : 0.0, b, b.v > a.v ? 1.0 : 0.0);
}

inline Value clamp(const Value& a, double lo, double hi) {
  const double out = a.v < lo ? lo : (a.v > hi ? hi : a.v);
  if (!a.tape) return Value(out);
  return a.tape->record(out, a, (a.v > lo && a.v < hi) ? 1.0 : 0.0);
}

// Branch select on a boolean predicate; the predicate itself carries no
// gradient.
inline Value where(bool cond, const Value& a, const Value& b) {
  const Value& pick = cond ? a : b;
  Tape* t = detail::tape_of(a, b);
  if (!t || pick.id < 0) return Value(pick.v);
  return t->record(pick.v, pick, 1.0);
}

inline Value sum(std::span<const Value> xs) {
  Value acc(0.0);
  for (const Value& x : xs) acc += x;
  return acc;
}

// ---- double overloads so templated physics code compiles for both types ----

inline double exp(double a) { return std::exp(a); }
inline double log(double a) { return std::log(a); }
inline double sqrt(double a) { return std::sqrt(a); }
inline double tanh(double a) { return std::tanh(a); }
inline double sin(double a) { return std::sin(a); }
inline double cos(double a) { return std::cos(a); }
inline double atan2(double y, double x) { return std::atan2(y, x); }
inline double abs(double a) { return std::fabs(a); }
inline double min(double a, double b) { return a < b ? a : b; }
inline double max(double a, double b) { return a > b ? a : b; }
inline double clamp(double a, double lo, double hi) {
  return a < lo ? lo : (a > hi ? hi : a);
}
inline double where(bool cond, double a, double b) { return cond ? a : b; }

inline double value_of(double x) { return x; }
inline double value_of(const Value& x) { return x.v; }

inline void Tape::svd3x3(const Value f_in[9], Value u_out[9], Value s_out[3],
                         Value vt_out[9]) {
  detail::SvdPayload p{};
  bool any_tracked = false;
  for (int i = 0; i < 9; ++i) {
    p.in[i] = f_in[i].id;
    p.f[i] = f_in[i].v;
    if (f_in[i].id >= 0) any_tracked = true;
  }
  detail::svd3x3_values(p.f, p.u, p.s, p.vt);
  if (!recording_ || !any_tracked) {
    for (int i = 0; i < 9; ++i) u_out[i] = Value(this, -1, p.u[i]);
    for (int i = 0; i < 3; ++i) s_out[i] = Value(this, -1, p.s[i]);
    for (int i = 0; i < 9; ++i) vt_out[i] = Value(this, -1, p.vt[i]);
    return;
  }
  const std::int32_t pidx = static_cast<std::int32_t>(svd_payloads_.size());
  svd_payloads_.push_back(p);
  nodes_.push_back({pidx, -1, 0.0, 0.0});
  kinds_.push_back(detail::NodeKind::kSvd);
  auto emit = [&](std::int32_t slot, double val) {
    nodes_.push_back({pidx, slot, 0.0, 0.0});
    kinds_.push_back(detail::NodeKind::kSvdOut);
    return Value(this, static_cast<std::int32_t>(nodes_.size()) - 1, val);
  };
  for (int i = 0; i < 9; ++i) u_out[i] = emit(i, p.u[i]);
  for (int i = 0; i < 3; ++i) s_out[i] = emit(9 + i, p.s[i]);
  for (int i = 0; i < 9; ++i) vt_out[i] = emit(12 + i, p.vt[i]);
}

}  // namespace diffsim

#include "diffsim/svd3.hpp"

namespace diffsim {

inline void Tape::backward_svd(detail::SvdPayload& p) {
  double f_adj[9];
  detail::svd3x3_adjoint(p.u, p.s, p.vt, p.out_adj, f_adj);
  for (int i = 0; i < 9; ++i) {
    if (p.in[i] >= 0) adjoints_[p.in[i]] += f_adj[i];
  }
}

}  // namespace diffsim
