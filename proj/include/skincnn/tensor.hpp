#pragma once

#include <algorithm>
#include <cstring>
#include <functional>
#include <limits>
#include <memory>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "skincnn/common.hpp"

namespace skincnn {

// Dense row-major tensor, NCHW for images. float for normal use, double for
// gradient testing (every op below is templated on the scalar type).
//
// Tensor is a cheap handle: copies share storage. Values are never mutated by
// forward ops; data() writes are reserved for initialization, optimizer steps
// and checkpoint loading.
template <typename T>
class Tensor {
public:
    struct Storage {
        Shape shape;
        std::vector<T> values;
        std::vector<T> grad; // empty means zero / not yet touched
        bool requires_grad = false;
    };

    Tensor() = default;

    explicit Tensor(Shape shape, bool requires_grad = false)
        : st_(std::make_shared<Storage>())
    {
        st_->shape = std::move(shape);
        st_->values.assign(shape_size(st_->shape), T(0));
        st_->requires_grad = requires_grad;
    }

    static Tensor from(Shape shape, std::vector<T> values, bool requires_grad = false)
    {
        SKINCNN_CHECK(values.size() == shape_size(shape),
                      "tensor data length ", values.size(), " does not match shape ", shape_str(shape));
        Tensor t;
        t.st_ = std::make_shared<Storage>();
        t.st_->shape = std::move(shape);
        t.st_->values = std::move(values);
        t.st_->requires_grad = requires_grad;
        return t;
    }

    static Tensor full(Shape shape, T value, bool requires_grad = false)
    {
        Tensor t(std::move(shape), requires_grad);
        for (auto& v : t.st_->values)
            v = value;
        return t;
    }

    static Tensor scalar(T value, bool requires_grad = false)
    {
        return from({1}, {value}, requires_grad);
    }

    bool defined() const { return st_ != nullptr; }
    const Shape& shape() const { return st_->shape; }
    std::size_t ndim() const { return st_->shape.size(); }
    std::size_t dim(std::size_t i) const { return st_->shape[i]; }
    std::size_t size() const { return st_->values.size(); }

    T* data() { return st_->values.data(); }
    const T* data() const { return st_->values.data(); }
    std::vector<T>& values() { return st_->values; }
    const std::vector<T>& values() const { return st_->values; }
    T item() const
    {
        SKINCNN_CHECK(size() == 1, "item() on non-scalar tensor of shape ", shape_str(shape()));
        return st_->values[0];
    }

    bool requires_grad() const { return st_ && st_->requires_grad; }
    void set_requires_grad(bool on) { st_->requires_grad = on; }

    // Gradient buffer, allocated to zeros on first access.
    std::vector<T>& grad()
    {
        if (st_->grad.empty())
            st_->grad.assign(st_->values.size(), T(0));
        return st_->grad;
    }
    bool has_grad() const { return !st_->grad.empty(); }
    // Read access that treats an untouched buffer as zero.
    T grad_at(std::size_t i) const { return st_->grad.empty() ? T(0) : st_->grad[i]; }
    void zero_grad() { st_->grad.clear(); }

    // Deep copy of the values (fresh storage, no grad).
    Tensor clone() const
    {
        Tensor t;
        t.st_ = std::make_shared<Storage>();
        t.st_->shape = st_->shape;
        t.st_->values = st_->values;
        t.st_->requires_grad = st_->requires_grad;
        return t;
    }

    Storage* storage() const { return st_.get(); }

    bool same_storage(const Tensor& other) const { return st_ == other.st_; }

private:
    std::shared_ptr<Storage> st_;
};

// Records one forward pass. Each executed primitive pushes a node holding its
// output and a pull closure that routes the output adjoint to the inputs.
// Nodes are appended in execution order, so the reverse sweep is a valid
// topological order by construction.
//
// backward() may be called more than once; each call recomputes the same
// adjoints from scratch and adds them into the persistent grad buffers, so
// gradients accumulate until explicitly zeroed.
// Tracks, across one forward pass, the closest approach of any relu input to
// its kink and of any pooling window to an argmax tie. Gradient checks sample
// inputs until both margins clear 1e-3, keeping finite differences valid.
struct SmoothnessProbe {
    double min_relu_margin = std::numeric_limits<double>::infinity();
    double min_pool_margin = std::numeric_limits<double>::infinity();

    double worst() const { return std::min(min_relu_margin, min_pool_margin); }
};

template <typename T>
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    SmoothnessProbe* probe = nullptr;

    void record(const Tensor<T>& out, std::function<void(const std::vector<T>&)> pull)
    {
        produced_.insert(out.storage());
        nodes_.push_back(Node{out, std::move(pull)});
    }

    bool produced(const Tensor<T>& t) const { return produced_.count(t.storage()) != 0; }
    std::size_t node_count() const { return nodes_.size(); }

    // Adjoint slot for a tensor during the current backward sweep; created
    // zero-filled on first use. Pull closures call this for their inputs.
    std::vector<T>& adjoint(const Tensor<T>& t)
    {
        auto& slot = adj_[t.storage()];
        if (slot.empty())
            slot.assign(t.size(), T(0));
        return slot;
    }

    void backward(const Tensor<T>& loss)
    {
        SKINCNN_CHECK(loss.defined() && loss.size() == 1,
                      "backward needs a scalar loss, got shape ",
                      loss.defined() ? shape_str(loss.shape()) : "<undefined>");
        SKINCNN_CHECK(produced(loss), "loss tensor was not produced on this tape");
        adj_.clear();
        adjoint(loss)[0] = T(1);
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
            auto f = adj_.find(it->out.storage());
            if (f == adj_.end())
                continue; // loss does not depend on this node
            it->pull(f->second);
        }
        for (auto& [st, g] : adj_) {
            if (!st->requires_grad)
                continue;
            if (st->grad.empty())
                st->grad.assign(st->values.size(), T(0));
            for (std::size_t i = 0; i < g.size(); ++i)
                st->grad[i] += g[i];
        }
        adj_.clear();
    }

private:
    struct Node {
        Tensor<T> out;
        std::function<void(const std::vector<T>&)> pull;
    };

    std::vector<Node> nodes_;
    std::unordered_set<const typename Tensor<T>::Storage*> produced_;
    std::unordered_map<typename Tensor<T>::Storage*, std::vector<T>> adj_;
};

} // namespace skincnn
