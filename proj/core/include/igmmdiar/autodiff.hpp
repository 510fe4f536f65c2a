#pragma once

// Reverse-mode automatic differentiation on a linear tape.
//
// Every operation on a Var that depends on a recorded variable appends one
// node to the owning Tape together with the local partial derivatives with
// respect to its parents, evaluated eagerly. Nodes are appended in evaluation
// order, so the tape is already topologically sorted and backward() is a
// single reverse sweep. Operations whose operands are all constants fold to a
// constant Var and record nothing.
//
// Values are computed with exactly the same floating-point operations, in the
// same order, as the double overloads in numerics.hpp, so an algorithm
// templated on its scalar type yields identical results in both modes.

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "igmmdiar/errors.hpp"
#include "igmmdiar/numerics.hpp"

namespace igmmdiar {

class Tape;

class Var {
 public:
  Var() = default;
  // Implicit: a double participates in expressions as a constant.
  Var(double constant) : value_(constant) {}  // NOLINT

  double value() const noexcept { return value_; }
  bool is_constant() const noexcept { return tape_ == nullptr; }
  const Tape* tape() const noexcept { return tape_; }
  std::uint32_t index() const noexcept { return index_; }

 private:
  friend class Tape;
  friend class NodeBuilder;
  Var(Tape* tape, std::uint32_t index, double value)
      : tape_(tape), index_(index), value_(value) {}

  Tape* tape_ = nullptr;
  std::uint32_t index_ = 0;
  double value_ = 0.0;
};

class Tape;

// Gradient of one seed with respect to every node recorded before it.
class Adjoints {
 public:
  double wrt(const Var& v) const;
  std::vector<double> wrt(std::span<const Var> vs) const;

 private:
  friend class Tape;
  Adjoints(const Tape* tape, std::vector<double> adjoint)
      : tape_(tape), adjoint_(std::move(adjoint)) {}

  const Tape* tape_;
  std::vector<double> adjoint_;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // New independent variable (leaf node).
  Var variable(double value);
  std::vector<Var> variables(std::span<const double> values);

  std::size_t node_count() const noexcept { return edge_end_.size(); }
  std::size_t edge_count() const noexcept { return edges_.size(); }

  void reserve(std::size_t nodes, std::size_t edges);
  // Drops all nodes but keeps capacity. Vars recorded earlier become invalid.
  void clear() noexcept;

  // Reverse sweep from a scalar seed recorded on this tape. Throws StateError
  // when the seed is a constant or belongs to another tape.
  Adjoints backward(const Var& seed) const;

 private:
  friend class NodeBuilder;
  struct Edge {
    std::uint32_t parent;
    double partial;
  };

  std::vector<std::uint32_t> edge_end_;
  std::vector<Edge> edges_;
};

// Appends a single node. Parents that are constants are skipped; if no parent
// is recorded the result is a constant.
class NodeBuilder {
 public:
  NodeBuilder() = default;

  void add(const Var& parent, double partial) {
    if (parent.tape_ == nullptr) return;
    if (tape_ == nullptr) {
      tape_ = parent.tape_;
    } else if (tape_ != parent.tape_) {
      throw StateError("autodiff: operands recorded on different tapes");
    }
    tape_->edges_.push_back({parent.index_, partial});
  }

  Var finish(double value) {
    if (tape_ == nullptr) return Var(value);
    const auto index = static_cast<std::uint32_t>(tape_->edge_end_.size());
    tape_->edge_end_.push_back(static_cast<std::uint32_t>(tape_->edges_.size()));
    return Var(tape_, index, value);
  }

 private:
  Tape* tape_ = nullptr;
};

inline double value_of(const Var& v) { return v.value(); }

// --- arithmetic -------------------------------------------------------------

inline Var operator+(const Var& a, const Var& b) {
  NodeBuilder n;
  n.add(a, 1.0);
  n.add(b, 1.0);
  return n.finish(a.value() + b.value());
}

inline Var operator-(const Var& a, const Var& b) {
  NodeBuilder n;
  n.add(a, 1.0);
  n.add(b, -1.0);
  return n.finish(a.value() - b.value());
}

inline Var operator-(const Var& a) {
  NodeBuilder n;
  n.add(a, -1.0);
  return n.finish(-a.value());
}

inline Var operator*(const Var& a, const Var& b) {
  NodeBuilder n;
  n.add(a, b.value());
  n.add(b, a.value());
  return n.finish(a.value() * b.value());
}

Var operator/(const Var& a, const Var& b);

inline Var operator+(const Var& a, double b) { return a + Var(b); }
inline Var operator+(double a, const Var& b) { return Var(a) + b; }
inline Var operator-(const Var& a, double b) { return a - Var(b); }
inline Var operator-(double a, const Var& b) { return Var(a) - b; }
inline Var operator*(const Var& a, double b) { return a * Var(b); }
inline Var operator*(double a, const Var& b) { return Var(a) * b; }
inline Var operator/(const Var& a, double b) { return a / Var(b); }
inline Var operator/(double a, const Var& b) { return Var(a) / b; }

inline Var& operator+=(Var& a, const Var& b) { return a = a + b; }
inline Var& operator-=(Var& a, const Var& b) { return a = a - b; }
inline Var& operator*=(Var& a, const Var& b) { return a = a * b; }
inline Var& operator/=(Var& a, const Var& b) { return a = a / b; }

// Comparisons look at values only.
inline bool operator<(const Var& a, const Var& b) { return a.value() < b.value(); }
inline bool operator>(const Var& a, const Var& b) { return a.value() > b.value(); }
inline bool operator<=(const Var& a, const Var& b) { return a.value() <= b.value(); }
inline bool operator>=(const Var& a, const Var& b) { return a.value() >= b.value(); }
inline bool operator==(const Var& a, const Var& b) { return a.value() == b.value(); }

// --- elementary functions ----------------------------------------------------

Var exp(const Var& x);
// Throws DomainError for x <= 0.
Var log(const Var& x);
Var sqrt(const Var& x);
Var pow(const Var& x, double p);
Var pow(const Var& x, const Var& p);
// Subgradient 0 at exactly 0.
Var abs(const Var& x);
Var tanh(const Var& x);
Var sigmoid(const Var& x);
Var digamma(const Var& x);

// --- reductions (one node each) ---------------------------------------------

Var sum(std::span<const Var> xs);
Var dot(std::span<const Var> a, std::span<const Var> b);
Var dot(std::span<const Var> a, std::span<const double> b);
Var squared_norm(std::span<const Var> a);
Var squared_distance(std::span<const Var> a, std::span<const Var> b);
// Sum of |a_i - b_i|; subgradient 0 where a_i == b_i.
Var l1_distance(std::span<const Var> a, std::span<const Var> b);

// --- convenience ------------------------------------------------------------

struct ValueAndGradient {
  double value = 0.0;
  std::vector<double> gradient;
};

// Records f on a fresh tape at the given point and returns f and its gradient.
template <class F>
ValueAndGradient value_and_gradient(F&& f, std::span<const double> at) {
  Tape tape;
  const std::vector<Var> xs = tape.variables(at);
  const Var y = f(std::span<const Var>(xs));
  ValueAndGradient out{y.value(), std::vector<double>(at.size(), 0.0)};
  if (!y.is_constant()) out.gradient = tape.backward(y).wrt(xs);
  return out;
}

}  // namespace igmmdiar

#include "igmmdiar/matrix.hpp"

namespace igmmdiar {

inline Matrix<double> values_of(const Matrix<Var>& m) {
  return transform<double>(m, [](const Var& v) { return v.value(); });
}
inline const Matrix<double>& values_of(const Matrix<double>& m) { return m; }

inline Matrix<Var> constants_of(const Matrix<double>& m) {
  return transform<Var>(m, [](double v) { return Var(v); });
}

// Leaf variables on `tape` holding the entries of m.
inline Matrix<Var> variables_of(Tape& tape, const Matrix<double>& m) {
  return Matrix<Var>(m.rows(), m.cols(), tape.variables(m.data()));
}

}  // namespace igmmdiar
