#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "dcvlm/error.hpp"
#include "dcvlm/random.hpp"

namespace dcvlm {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

template <typename T>
class Tensor;

namespace detail {

template <typename T>
struct Node;

template <typename T>
struct GradFn {
    const char* name = "";
    std::vector<std::shared_ptr<Node<T>>> inputs;
    /// Receives the gradient of the output and accumulates into the inputs.
    std::function<void(std::span<const T>)> backward;
};

template <typename T>
struct Node {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;
    bool requires_grad = false;
    bool consumed = false;
    std::uint64_t id = 0;
    std::unique_ptr<GradFn<T>> grad_fn;

    /// Zero-initialised gradient storage, allocated on first use.
    std::span<T> grad_buffer() {
        if (grad.size() != data.size()) grad.assign(data.size(), T {0});
        return grad;
    }
};

std::uint64_t next_node_id();

}  // namespace detail

/// Thread-local switch for graph recording. Evaluation code disables it so
/// no backward closures are retained.
class NoGradGuard {
 public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

    static bool grad_enabled();

 private:
    bool previous_;
};

/// Dense row-major tensor handle. Copies share the underlying node; results
/// of operations are fresh nodes, so a tensor recorded on a graph is never
/// mutated afterwards. Only leaves expose mutable data.
template <typename T>
class Tensor {
 public:
    using value_type = T;

    Tensor() = default;
    explicit Tensor(std::shared_ptr<detail::Node<T>> node) : node_(std::move(node)) {}

    static Tensor from_vector(Shape shape, std::vector<T> data, bool requires_grad = false);
    static Tensor full(Shape shape, T value, bool requires_grad = false);
    static Tensor zeros(Shape shape, bool requires_grad = false) {
        return full(std::move(shape), T {0}, requires_grad);
    }
    static Tensor ones(Shape shape, bool requires_grad = false) {
        return full(std::move(shape), T {1}, requires_grad);
    }
    static Tensor scalar(T value, bool requires_grad = false) {
        return full({}, value, requires_grad);
    }
    static Tensor uniform(Shape shape, double lo, double hi, Rng& rng, bool requires_grad = false);
    static Tensor normal(Shape shape, double stddev, Rng& rng, bool requires_grad = false);

    bool defined() const noexcept { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t numel() const { return node_->data.size(); }

    std::span<const T> data() const { return node_->data; }
    /// Mutation is restricted to leaves (parameters, inputs).
    std::span<T> mutable_data();
    std::vector<T> to_vector() const { return node_->data; }

    T item() const;
    T at(std::initializer_list<std::size_t> index) const;

    bool requires_grad() const { return node_->requires_grad; }
    Tensor& set_requires_grad(bool flag);
    bool is_leaf() const { return node_->grad_fn == nullptr; }

    bool has_grad() const { return node_->grad.size() == node_->data.size() && !node_->data.empty(); }
    std::span<const T> grad() const { return node_->grad; }
    void zero_grad() { node_->grad.clear(); }

    /// A new leaf holding a copy of the data, detached from any graph.
    Tensor detach() const;

    template <typename U>
    Tensor<U> cast() const {
        std::vector<U> out(node_->data.begin(), node_->data.end());
        return Tensor<U>::from_vector(node_->shape, std::move(out));
    }

    const std::shared_ptr<detail::Node<T>>& node() const { return node_; }

 private:
    std::shared_ptr<detail::Node<T>> node_;
};

/// Topologically ordered list of recorded operations reachable from a root.
/// Node ids grow monotonically with creation, so ordering by id is a valid
/// topological order.
template <typename T>
class Tape {
 public:
    struct Entry {
        std::uint64_t id;
        std::vector<std::uint64_t> input_ids;
        const char* op;
    };

    static Tape record(const Tensor<T>& root);

    const std::vector<Entry>& entries() const { return entries_; }
    std::size_t size() const { return entries_.size(); }
    /// Nodes in the same order as entries(); valid while the root is alive.
    const std::vector<detail::Node<T>*>& nodes() const { return nodes_; }

 private:
    std::vector<Entry> entries_;
    std::vector<detail::Node<T>*> nodes_;
};

/// Reverse pass from a scalar loss. The graph is single-use: afterwards every
/// visited node is marked consumed and a second call throws.
template <typename T>
void backward(const Tensor<T>& loss);

/// Builds an op result. `backward` receives d(loss)/d(output) and must
/// accumulate into whichever inputs require grad.
template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> data, const char* op,
                      std::initializer_list<Tensor<T>> inputs,
                      std::function<void(std::span<const T>)> backward_fn);

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> data, const char* op,
                      const std::vector<Tensor<T>>& inputs,
                      std::function<void(std::span<const T>)> backward_fn);

/// Gradient storage of `t` if it takes part in differentiation, else empty.
template <typename T>
std::span<T> grad_sink(const Tensor<T>& t) {
    return t.requires_grad() ? t.node()->grad_buffer() : std::span<T> {};
}

}  // namespace dcvlm
