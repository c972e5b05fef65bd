#include "dcvlm/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <new>
#include <numeric>
#include <sstream>
#include <unordered_set>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace dcvlm {

namespace {

#if defined(__GLIBC__)
// Activation buffers are allocated and freed every step. Keeping them on the
// heap instead of fresh mmap pages avoids a page-fault storm per op.
const bool heap_tuned = [] {
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    return true;
}();
#endif

}  // namespace

const char* error_code_name(ErrorCode code) {
    switch (code) {
        case ErrorCode::dimension: return "dimension";
        case ErrorCode::domain: return "domain";
        case ErrorCode::degenerate_reduction: return "degenerate_reduction";
        case ErrorCode::contract: return "contract";
        case ErrorCode::configuration: return "configuration";
        case ErrorCode::shape: return "shape";
        case ErrorCode::argument: return "argument";
        case ErrorCode::capacity: return "capacity";
        case ErrorCode::undefined_metric: return "undefined_metric";
        case ErrorCode::provider: return "provider";
        case ErrorCode::training: return "training";
        case ErrorCode::io: return "io";
        case ErrorCode::parse: return "parse";
    }
    return "unknown";
}

std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t {1}, std::multiplies<> {});
}

std::string shape_str(const Shape& shape) {
    std::ostringstream out;
    out << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out << ", ";
        out << shape[i];
    }
    out << ')';
    return out.str();
}

namespace detail {
std::uint64_t next_node_id() {
    static std::atomic<std::uint64_t> counter {1};
    return counter.fetch_add(1, std::memory_order_relaxed);
}
}  // namespace detail

namespace {
thread_local bool g_grad_enabled = true;

template <typename T>
std::shared_ptr<detail::Node<T>> new_node(Shape shape, std::vector<T> data) {
    for (auto d : shape) require(d > 0, ErrorCode::shape, "tensor dimensions must be positive, got " + shape_str(shape));
    require(shape_numel(shape) == data.size(), ErrorCode::shape,
            "shape " + shape_str(shape) + " does not match " + std::to_string(data.size()) + " elements");
    auto node = std::make_shared<detail::Node<T>>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->id = detail::next_node_id();
    return node;
}
}  // namespace

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool NoGradGuard::grad_enabled() { return g_grad_enabled; }

template <typename T>
Tensor<T> Tensor<T>::from_vector(Shape shape, std::vector<T> data, bool requires_grad) {
    auto node = new_node<T>(std::move(shape), std::move(data));
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
    const auto n = shape_numel(shape);
    return from_vector(std::move(shape), std::vector<T>(n, value), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::uniform(Shape shape, double lo, double hi, Rng& rng, bool requires_grad) {
    std::vector<T> data(shape_numel(shape));
    for (auto& v : data) v = static_cast<T>(rng.uniform(lo, hi));
    return from_vector(std::move(shape), std::move(data), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::normal(Shape shape, double stddev, Rng& rng, bool requires_grad) {
    std::vector<T> data(shape_numel(shape));
    for (auto& v : data) v = static_cast<T>(stddev * rng.normal());
    return from_vector(std::move(shape), std::move(data), requires_grad);
}

template <typename T>
std::size_t Tensor<T>::dim(std::size_t axis) const {
    require(axis < rank(), ErrorCode::dimension,
            "axis " + std::to_string(axis) + " out of range for shape " + shape_str(shape()));
    return node_->shape[axis];
}

template <typename T>
std::span<T> Tensor<T>::mutable_data() {
    require(is_leaf(), ErrorCode::contract, "in-place mutation of a recorded (non-leaf) tensor");
    return node_->data;
}

template <typename T>
T Tensor<T>::item() const {
    require(numel() == 1, ErrorCode::contract,
            "item() on tensor of shape " + shape_str(shape()));
    return node_->data[0];
}

template <typename T>
T Tensor<T>::at(std::initializer_list<std::size_t> index) const {
    require(index.size() == rank(), ErrorCode::dimension,
            "index rank mismatch for shape " + shape_str(shape()));
    std::size_t flat = 0;
    std::size_t axis = 0;
    for (auto i : index) {
        require(i < node_->shape[axis], ErrorCode::dimension, "index out of range");
        flat = flat * node_->shape[axis] + i;
        ++axis;
    }
    return node_->data[flat];
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool flag) {
    require(is_leaf(), ErrorCode::contract, "requires_grad can only be set on leaves");
    node_->requires_grad = flag;
    if (!flag) node_->grad.clear();
    return *this;
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
    return from_vector(node_->shape, node_->data);
}

template <typename T>
Tape<T> Tape<T>::record(const Tensor<T>& root) {
    Tape tape;
    std::vector<detail::Node<T>*> stack {root.node().get()};
    std::unordered_set<detail::Node<T>*> seen {root.node().get()};
    while (!stack.empty()) {
        auto* node = stack.back();
        stack.pop_back();
        if (node->consumed)
            fail(ErrorCode::contract, "graph already consumed by a previous backward pass (single-use tape)");
        if (!node->grad_fn) continue;
        tape.nodes_.push_back(node);
        for (auto& in : node->grad_fn->inputs) {
            if (in->requires_grad && seen.insert(in.get()).second) stack.push_back(in.get());
        }
    }
    std::sort(tape.nodes_.begin(), tape.nodes_.end(),
              [](const auto* a, const auto* b) { return a->id < b->id; });
    tape.entries_.reserve(tape.nodes_.size());
    for (auto* node : tape.nodes_) {
        Entry entry {node->id, {}, node->grad_fn->name};
        for (auto& in : node->grad_fn->inputs) entry.input_ids.push_back(in->id);
        tape.entries_.push_back(std::move(entry));
    }
    return tape;
}

template <typename T>
void backward(const Tensor<T>& loss) {
    require(loss.defined(), ErrorCode::contract, "backward on an undefined tensor");
    require(loss.numel() == 1, ErrorCode::contract,
            "backward requires a scalar loss, got shape " + shape_str(loss.shape()));
    require(loss.requires_grad(), ErrorCode::contract, "loss does not depend on any parameter requiring grad");
    auto tape = Tape<T>::record(loss);
    auto* root = loss.node().get();
    root->grad_buffer()[0] = T {1};
    const auto& nodes = tape.nodes();
    for (auto it = nodes.rbegin(); it != nodes.rend(); ++it) {
        auto* node = *it;
        if (node->grad.size() == node->data.size()) node->grad_fn->backward(node->grad);
    }
    for (auto* node : nodes) {
        node->consumed = true;
        node->grad_fn.reset();
        if (node != root) {
            node->grad.clear();
            node->grad.shrink_to_fit();
        }
    }
}

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> data, const char* op,
                      const std::vector<Tensor<T>>& inputs,
                      std::function<void(std::span<const T>)> backward_fn) {
    auto node = new_node<T>(std::move(shape), std::move(data));
    bool needs_grad = false;
    if (NoGradGuard::grad_enabled()) {
        for (const auto& in : inputs) needs_grad = needs_grad || in.requires_grad();
    }
    if (needs_grad) {
        node->requires_grad = true;
        auto fn = std::make_unique<detail::GradFn<T>>();
        fn->name = op;
        for (const auto& in : inputs) fn->inputs.push_back(in.node());
        fn->backward = std::move(backward_fn);
        node->grad_fn = std::move(fn);
    }
    return Tensor<T>(std::move(node));
}

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> data, const char* op,
                      std::initializer_list<Tensor<T>> inputs,
                      std::function<void(std::span<const T>)> backward_fn) {
    return make_result<T>(std::move(shape), std::move(data), op, std::vector<Tensor<T>>(inputs),
                          std::move(backward_fn));
}

#define DCVLM_INSTANTIATE(T)                                                                         \
    template class Tensor<T>;                                                                        \
    template class Tape<T>;                                                                          \
    template void backward<T>(const Tensor<T>&);                                                     \
    template Tensor<T> make_result<T>(Shape, std::vector<T>, const char*,                            \
                                      const std::vector<Tensor<T>>&,                                 \
                                      std::function<void(std::span<const T>)>);                      \
    template Tensor<T> make_result<T>(Shape, std::vector<T>, const char*,                            \
                                      std::initializer_list<Tensor<T>>,                              \
                                      std::function<void(std::span<const T>)>);

DCVLM_INSTANTIATE(float)
DCVLM_INSTANTIATE(double)

}  // namespace dcvlm

// Eigen peels unaligned leading elements onto a scalar path whose rounding
// differs from the fused vector body, so results would depend on where each
// buffer happened to land. Every allocation starts on a cache line instead.
namespace {

constexpr std::size_t buffer_alignment = 64;

void* aligned_or_null(std::size_t n) noexcept {
    const std::size_t rounded = (std::max<std::size_t>(n, 1) + buffer_alignment - 1) & ~(buffer_alignment - 1);
    return std::aligned_alloc(buffer_alignment, rounded);
}

void* aligned_or_throw(std::size_t n) {
    for (;;) {
        if (void* p = aligned_or_null(n)) return p;
        auto handler = std::get_new_handler();
        if (!handler) throw std::bad_alloc();
        handler();
    }
}

}  // namespace

void* operator new(std::size_t n) { return aligned_or_throw(n); }
void* operator new[](std::size_t n) { return aligned_or_throw(n); }
void* operator new(std::size_t n, const std::nothrow_t&) noexcept { return aligned_or_null(n); }
void* operator new[](std::size_t n, const std::nothrow_t&) noexcept { return aligned_or_null(n); }
void operator delete(void* p) noexcept { std::free(p); }
void operator delete[](void* p) noexcept { std::free(p); }
void operator delete(void* p, std::size_t) noexcept { std::free(p); }
void operator delete[](void* p, std::size_t) noexcept { std::free(p); }
void operator delete(void* p, const std::nothrow_t&) noexcept { std::free(p); }
void operator delete[](void* p, const std::nothrow_t&) noexcept { std::free(p); }
