#ifndef FETALSEG_TENSOR_HPP
#define FETALSEG_TENSOR_HPP

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "fetalseg/common.hpp"

namespace fetalseg {

using Shape = std::vector<int>;

inline std::int64_t numel(const Shape& s) {
    std::int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ']';
    return os.str();
}

// Dense row-major tensor with reverse-mode autodiff. Value semantics via a
// shared node: copies alias the same storage, ops build a DAG of nodes, and
// backward() walks it in reverse topological order accumulating into .grad.
//
// T is float for training and double for finite-difference verification.
template <typename T>
class Tensor {
public:
    struct Node {
        Shape shape;
        std::vector<T> value;
        std::vector<T> grad;   // allocated on demand, same length as value
        bool requires_grad = false;
        std::vector<std::shared_ptr<Node>> parents;
        std::function<void(Node&)> backprop;  // adds into parents' grad

        void ensure_grad() {
            if (grad.size() != value.size()) grad.assign(value.size(), T(0));
        }
    };

    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        return filled(std::move(shape), T(0), requires_grad);
    }

    static Tensor filled(Shape shape, T v, bool requires_grad = false) {
        Tensor t;
        t.node_ = std::make_shared<Node>();
        t.node_->shape = std::move(shape);
        t.node_->value.assign(static_cast<size_t>(numel(t.node_->shape)), v);
        t.node_->requires_grad = requires_grad;
        return t;
    }

    static Tensor from_data(Shape shape, std::vector<T> data, bool requires_grad = false) {
        if (numel(shape) != static_cast<std::int64_t>(data.size()))
            throw std::invalid_argument("tensor: shape " + shape_str(shape) + " does not match data length " +
                                        std::to_string(data.size()));
        Tensor t;
        t.node_ = std::make_shared<Node>();
        t.node_->shape = std::move(shape);
        t.node_->value = std::move(data);
        t.node_->requires_grad = requires_grad;
        return t;
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    int dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
    std::int64_t size() const { return static_cast<std::int64_t>(node_->value.size()); }
    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool b) { node_->requires_grad = b; }

    T* data() { return node_->value.data(); }
    const T* data() const { return node_->value.data(); }
    std::vector<T>& values() { return node_->value; }
    const std::vector<T>& values() const { return node_->value; }

    bool has_grad() const { return !node_->grad.empty(); }
    std::vector<T>& grad() {
        node_->ensure_grad();
        return node_->grad;
    }
    const std::vector<T>& grad() const { return node_->grad; }

    void zero_grad() {
        if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
    }

    // Drops autodiff history, keeping storage shared.
    Tensor detach() const {
        Tensor t;
        t.node_ = std::make_shared<Node>();
        t.node_->shape = node_->shape;
        t.node_->value = node_->value;
        t.node_->requires_grad = false;
        return t;
    }

    std::shared_ptr<Node> node() const { return node_; }

    // Builds an op result node. parents/backprop wire the reverse pass.
    static Tensor make_result(Shape shape, std::vector<T> value, std::vector<std::shared_ptr<Node>> parents,
                              std::function<void(Node&)> backprop) {
        Tensor t;
        t.node_ = std::make_shared<Node>();
        t.node_->shape = std::move(shape);
        t.node_->value = std::move(value);
        bool any = false;
        for (const auto& p : parents) any = any || p->requires_grad;
        t.node_->requires_grad = any;
        if (any) {
            t.node_->parents = std::move(parents);
            t.node_->backprop = std::move(backprop);
        }
        return t;
    }

    // Reverse pass from this tensor. seed must match the tensor's length;
    // for scalars it defaults to {1}.
    void backward(const std::vector<T>* seed = nullptr) {
        if (!node_->requires_grad) throw std::invalid_argument("backward: tensor does not require grad");
        if (seed == nullptr && size() != 1)
            throw std::invalid_argument("backward: non-scalar output needs an explicit seed gradient");
        if (seed != nullptr && static_cast<std::int64_t>(seed->size()) != size())
            throw std::invalid_argument("backward: seed length mismatch");

        std::vector<Node*> order;
        std::unordered_set<Node*> seen;
        topo(node_.get(), seen, order);

        node_->ensure_grad();
        if (seed)
            for (size_t i = 0; i < seed->size(); ++i) node_->grad[i] += (*seed)[i];
        else
            node_->grad[0] += T(1);

        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            Node* n = *it;
            if (n->backprop) {
                for (auto& p : n->parents)
                    if (p->requires_grad) p->ensure_grad();
                n->backprop(*n);
            }
        }
    }

private:
    static void topo(Node* n, std::unordered_set<Node*>& seen, std::vector<Node*>& order) {
        if (!n->requires_grad || seen.count(n)) return;
        seen.insert(n);
        for (auto& p : n->parents) topo(p.get(), seen, order);
        order.push_back(n);
    }

    std::shared_ptr<Node> node_;
};

// Every substrate op must leave only finite values behind.
template <typename T>
void check_finite(const char* op, const std::vector<T>& v) {
    for (size_t i = 0; i < v.size(); ++i) {
        if (!std::isfinite(v[i]))
            throw NumericError(std::string(op) + ": non-finite value at flat index " + std::to_string(i));
    }
}

}  // namespace fetalseg

#endif
