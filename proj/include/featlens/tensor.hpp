#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace featlens {

using Shape = std::vector<int>;

inline int64_t numel(const Shape& s) {
  int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

inline void check(bool cond, const std::string& msg) {
  if (!cond) throw std::runtime_error(msg);
}

// ---------------------------------------------------------------------------
// Seeded RNG. splitmix64 core with hand-rolled uniform/normal so that streams
// are identical across standard libraries and platforms.
// ---------------------------------------------------------------------------
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed ^ 0x9e3779b97f4a7c15ULL) {}

  uint64_t next_u64() {
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // [0, 1)
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // [0, n)
  int uniform_int(int n) { return int(next_u64() % uint64_t(n)); }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0, u2 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 1e-300);
    u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  // Derived stream, e.g. one per dataset item.
  static uint64_t derive(uint64_t seed, uint64_t stream) {
    uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = size_t(next_u64() % i);
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// ---------------------------------------------------------------------------
// Autodiff node. Values are written once by the op that creates the node and
// never mutated afterwards; backward accumulates into separate grad buffers.
// ---------------------------------------------------------------------------
template <typename S>
struct Node {
  Shape shape;
  std::vector<S> value;
  std::vector<S> grad;  // allocated on demand; frozen leaves never get one
  bool requires_grad = false;
  bool is_leaf = false;
  std::string name;
  std::vector<std::shared_ptr<Node<S>>> parents;
  std::function<void(Node<S>&)> backward;

  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), S(0));
  }
};

template <typename S>
class TensorT {
 public:
  using Scalar = S;

  TensorT() = default;
  explicit TensorT(std::shared_ptr<Node<S>> n) : node_(std::move(n)) {}

  static TensorT zeros(Shape shape, bool requires_grad = false) {
    return filled(std::move(shape), S(0), requires_grad);
  }

  static TensorT filled(Shape shape, S v, bool requires_grad = false) {
    auto n = std::make_shared<Node<S>>();
    n->value.assign(size_t(numel(shape)), v);
    n->shape = std::move(shape);
    n->requires_grad = requires_grad;
    n->is_leaf = true;
    return TensorT(std::move(n));
  }

  static TensorT from_data(Shape shape, std::vector<S> data, bool requires_grad = false) {
    check(int64_t(data.size()) == numel(shape),
          "tensor data length " + std::to_string(data.size()) + " does not match shape " +
              shape_str(shape));
    auto n = std::make_shared<Node<S>>();
    n->shape = std::move(shape);
    n->value = std::move(data);
    n->requires_grad = requires_grad;
    n->is_leaf = true;
    return TensorT(std::move(n));
  }

  static TensorT randn(Shape shape, Rng& rng, double stddev, bool requires_grad = false) {
    std::vector<S> d(size_t(numel(shape)));
    for (auto& x : d) x = S(rng.normal() * stddev);
    return from_data(std::move(shape), std::move(d), requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int dim(int i) const { return node_->shape[size_t(i)]; }
  int rank() const { return int(node_->shape.size()); }
  int64_t size() const { return int64_t(node_->value.size()); }

  std::span<const S> data() const { return node_->value; }
  // Leaf mutation is for initialization and optimizer updates only.
  std::span<S> mutable_data() {
    check(node_->is_leaf, "only leaf tensors may be mutated");
    return node_->value;
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool b) {
    check(node_->is_leaf, "requires_grad can only be toggled on leaves");
    node_->requires_grad = b;
    if (!b) node_->grad.clear();
  }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const S> grad() const { return node_->grad; }
  std::span<S> mutable_grad() { return node_->grad; }
  void clear_grad() {
    if (!node_->grad.empty()) node_->grad.assign(node_->grad.size(), S(0));
  }

  const std::string& name() const { return node_->name; }
  TensorT& set_name(std::string n) {
    node_->name = std::move(n);
    return *this;
  }

  S item() const {
    check(size() == 1, "item() requires a single-element tensor, got " + shape_str(shape()));
    return node_->value[0];
  }

  S at(std::initializer_list<int> idx) const {
    check(int(idx.size()) == rank(), "index rank mismatch");
    int64_t off = 0;
    int i = 0;
    for (int v : idx) {
      off = off * node_->shape[size_t(i)] + v;
      ++i;
    }
    return node_->value[size_t(off)];
  }

  // Value copy with no graph history; used when features feed a module that
  // must not backpropagate into their producer.
  TensorT detach(bool requires_grad = false) const {
    auto n = std::make_shared<Node<S>>();
    n->shape = node_->shape;
    n->value = node_->value;
    n->requires_grad = requires_grad;
    n->is_leaf = true;
    return TensorT(std::move(n));
  }

  template <typename T>
  TensorT<T> cast() const {
    std::vector<T> d(node_->value.size());
    for (size_t i = 0; i < d.size(); ++i) d[i] = T(node_->value[i]);
    return TensorT<T>::from_data(node_->shape, std::move(d), false);
  }

  bool all_finite() const {
    for (S v : node_->value)
      if (!std::isfinite(double(v))) return false;
    return true;
  }

  std::shared_ptr<Node<S>> node() const { return node_; }
  Node<S>* raw() const { return node_.get(); }

 private:
  std::shared_ptr<Node<S>> node_;
};

using Tensor = TensorT<float>;
using DTensor = TensorT<double>;

// Op-node factory. requires_grad propagates from parents; backward is only
// attached when some parent wants gradients.
template <typename S>
TensorT<S> make_op(Shape shape, std::vector<S> value, std::vector<TensorT<S>> parents,
                   std::function<void(Node<S>&)> backward) {
  auto n = std::make_shared<Node<S>>();
  check(int64_t(value.size()) == numel(shape), "op output size mismatch");
  n->shape = std::move(shape);
  n->value = std::move(value);
  for (auto& p : parents) {
    n->parents.push_back(p.node());
    n->requires_grad = n->requires_grad || p.requires_grad();
  }
  if (n->requires_grad) n->backward = std::move(backward);
  return TensorT<S>(std::move(n));
}

// Reverse-mode sweep from a scalar root. Each node is visited exactly once;
// leaves with requires_grad=false are never written to.
template <typename S>
void backward(const TensorT<S>& root) {
  check(root.size() == 1, "backward requires a scalar root");
  if (!root.requires_grad()) return;

  std::vector<Node<S>*> order;
  std::unordered_set<Node<S>*> seen;
  // Iterative post-order DFS; graphs can be deep for long conv stacks.
  std::vector<std::pair<Node<S>*, size_t>> stack;
  stack.emplace_back(root.raw(), 0);
  seen.insert(root.raw());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<S>* p = node->parents[next++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node<S>* n : order) n->ensure_grad();
  root.raw()->grad[0] += S(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<S>* n = *it;
    if (n->backward) n->backward(*n);
  }
}

// ---------------------------------------------------------------------------
// SGD with momentum over a parameter set. Velocity state lives here and
// persists across steps; frozen parameters are left untouched.
// ---------------------------------------------------------------------------
template <typename S>
class SgdT {
 public:
  explicit SgdT(std::vector<TensorT<S>> params) : params_(std::move(params)) {
    vel_.resize(params_.size());
    for (size_t i = 0; i < params_.size(); ++i)
      vel_[i].assign(size_t(params_[i].size()), S(0));
  }

  void step(double lr, double momentum) {
    check(lr > 0.0, "sgd: lr must be positive");
    check(momentum >= 0.0 && momentum < 1.0, "sgd: momentum must be in [0,1)");
    for (size_t i = 0; i < params_.size(); ++i) {
      auto& p = params_[i];
      if (!p.requires_grad()) continue;
      check(p.has_grad(), "sgd: missing gradient on trainable parameter '" + p.name() + "'");
      auto g = p.grad();
      auto v = std::span<S>(vel_[i]);
      auto d = p.mutable_data();
      for (size_t j = 0; j < d.size(); ++j) {
        v[j] = S(momentum) * v[j] + g[j];
        d[j] -= S(lr) * v[j];
      }
      p.clear_grad();
    }
  }

  const std::vector<TensorT<S>>& params() const { return params_; }

 private:
  std::vector<TensorT<S>> params_;
  std::vector<std::vector<S>> vel_;
};

using Sgd = SgdT<float>;

// FNV-1a over raw parameter bits, in registration order. Used to prove that
// frozen hosts are bit-identical across training runs.
template <typename S>
uint64_t param_checksum(const std::vector<TensorT<S>>& params) {
  uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](const void* p, size_t n) {
    const unsigned char* b = static_cast<const unsigned char*>(p);
    for (size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& t : params) {
    auto d = t.data();
    mix(d.data(), d.size() * sizeof(S));
  }
  return h;
}

}  // namespace featlens
