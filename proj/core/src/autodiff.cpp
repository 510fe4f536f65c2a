#include "igmmdiar/autodiff.hpp"

#include <string>

namespace igmmdiar {

double Adjoints::wrt(const Var& v) const {
  if (v.is_constant()) return 0.0;
  if (v.tape() != tape_) throw StateError("autodiff: variable belongs to another tape");
  return v.index() < adjoint_.size() ? adjoint_[v.index()] : 0.0;
}

std::vector<double> Adjoints::wrt(std::span<const Var> vs) const {
  std::vector<double> out;
  out.reserve(vs.size());
  for (const auto& v : vs) out.push_back(wrt(v));
  return out;
}

Var Tape::variable(double value) {
  const auto index = static_cast<std::uint32_t>(edge_end_.size());
  edge_end_.push_back(static_cast<std::uint32_t>(edges_.size()));
  return Var(this, index, value);
}

std::vector<Var> Tape::variables(std::span<const double> values) {
  std::vector<Var> out;
  out.reserve(values.size());
  for (double v : values) out.push_back(variable(v));
  return out;
}

void Tape::reserve(std::size_t nodes, std::size_t edges) {
  edge_end_.reserve(nodes);
  edges_.reserve(edges);
}

void Tape::clear() noexcept {
  edge_end_.clear();
  edges_.clear();
}

Adjoints Tape::backward(const Var& seed) const {
  if (seed.is_constant()) {
    throw StateError("autodiff: backward seed was not recorded (nothing to differentiate)");
  }
  if (seed.tape() != this || seed.index() >= edge_end_.size()) {
    throw StateError("autodiff: backward seed does not belong to this tape");
  }
  const std::size_t n = seed.index() + 1;
  std::vector<double> adjoint(n, 0.0);
  adjoint[seed.index()] = 1.0;
  for (std::size_t i = n; i-- > 0;) {
    const double a = adjoint[i];
    if (a == 0.0) continue;
    const std::uint32_t begin = i == 0 ? 0 : edge_end_[i - 1];
    const std::uint32_t end = edge_end_[i];
    for (std::uint32_t e = begin; e < end; ++e) {
      adjoint[edges_[e].parent] += a * edges_[e].partial;
    }
  }
  return Adjoints(this, std::move(adjoint));
}

Var operator/(const Var& a, const Var& b) {
  if (b.value() == 0.0) throw DomainError("autodiff: division by zero");
  const double q = a.value() / b.value();
  NodeBuilder n;
  n.add(a, 1.0 / b.value());
  n.add(b, -q / b.value());
  return n.finish(q);
}

Var exp(const Var& x) {
  const double y = std::exp(x.value());
  NodeBuilder n;
  n.add(x, y);
  return n.finish(y);
}

Var log(const Var& x) {
  if (!(x.value() > 0.0)) {
    throw DomainError("autodiff: log of non-positive value " + std::to_string(x.value()));
  }
  NodeBuilder n;
  n.add(x, 1.0 / x.value());
  return n.finish(std::log(x.value()));
}

Var sqrt(const Var& x) {
  if (x.value() < 0.0) throw DomainError("autodiff: sqrt of negative value");
  const double y = std::sqrt(x.value());
  NodeBuilder n;
  if (!x.is_constant()) {
    if (y == 0.0) throw DomainError("autodiff: sqrt is not differentiable at 0");
    n.add(x, 0.5 / y);
  }
  return n.finish(y);
}

Var pow(const Var& x, double p) {
  const double y = std::pow(x.value(), p);
  NodeBuilder n;
  n.add(x, p == 0.0 ? 0.0 : p * std::pow(x.value(), p - 1.0));
  return n.finish(y);
}

Var pow(const Var& x, const Var& p) {
  if (p.is_constant()) return pow(x, p.value());
  if (!(x.value() > 0.0)) {
    throw DomainError("autodiff: pow with recorded exponent needs a positive base");
  }
  const double y = std::pow(x.value(), p.value());
  NodeBuilder n;
  n.add(x, p.value() * std::pow(x.value(), p.value() - 1.0));
  n.add(p, y * std::log(x.value()));
  return n.finish(y);
}

Var abs(const Var& x) {
  const double v = x.value();
  NodeBuilder n;
  n.add(x, v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0));
  return n.finish(std::abs(v));
}

Var tanh(const Var& x) {
  const double y = std::tanh(x.value());
  NodeBuilder n;
  n.add(x, 1.0 - y * y);
  return n.finish(y);
}

Var sigmoid(const Var& x) {
  const double y = igmmdiar::sigmoid(x.value());
  NodeBuilder n;
  n.add(x, y * (1.0 - y));
  return n.finish(y);
}

Var digamma(const Var& x) {
  const double y = igmmdiar::digamma(x.value());
  NodeBuilder n;
  if (!x.is_constant()) n.add(x, trigamma(x.value()));
  return n.finish(y);
}

Var sum(std::span<const Var> xs) {
  double acc = 0.0;
  NodeBuilder n;
  for (const auto& x : xs) {
    acc += x.value();
    n.add(x, 1.0);
  }
  return n.finish(acc);
}

Var dot(std::span<const Var> a, std::span<const Var> b) {
  if (a.size() != b.size()) throw ValidationError("dot: length mismatch");
  double acc = 0.0;
  NodeBuilder n;
  for (std::size_t i = 0; i < a.size(); ++i) {
    acc += a[i].value() * b[i].value();
    n.add(a[i], b[i].value());
    n.add(b[i], a[i].value());
  }
  return n.finish(acc);
}

Var dot(std::span<const Var> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ValidationError("dot: length mismatch");
  double acc = 0.0;
  NodeBuilder n;
  for (std::size_t i = 0; i < a.size(); ++i) {
    acc += a[i].value() * b[i];
    n.add(a[i], b[i]);
  }
  return n.finish(acc);
}

Var squared_norm(std::span<const Var> a) {
  double acc = 0.0;
  NodeBuilder n;
  for (const auto& x : a) {
    acc += x.value() * x.value();
    n.add(x, 2.0 * x.value());
  }
  return n.finish(acc);
}

Var squared_distance(std::span<const Var> a, std::span<const Var> b) {
  if (a.size() != b.size()) throw ValidationError("squared_distance: length mismatch");
  double acc = 0.0;
  NodeBuilder n;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i].value() - b[i].value();
    acc += d * d;
    n.add(a[i], 2.0 * d);
    n.add(b[i], -2.0 * d);
  }
  return n.finish(acc);
}

}  // namespace igmmdiar

namespace igmmdiar {

Var l1_distance(std::span<const Var> a, std::span<const Var> b) {
  if (a.size() != b.size()) throw ValidationError("l1_distance: length mismatch");
  double acc = 0.0;
  NodeBuilder n;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i].value() - b[i].value();
    acc += std::abs(d);
    const double g = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
    n.add(a[i], g);
    n.add(b[i], -g);
  }
  return n.finish(acc);
}

}  // namespace igmmdiar
