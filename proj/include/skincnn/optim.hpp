#pragma once

#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "skincnn/param.hpp"

namespace skincnn {

// Momentum buffers keyed by parameter name. Buffers are kept only for
// currently-trainable parameters; a parameter frozen after some steps loses
// its buffer and restarts from zero velocity if unfrozen later.
template <typename T>
struct OptimizerState {
    std::unordered_map<std::string, std::vector<T>> velocity;
};

// v <- momentum * v + g ; p <- p - lr(group) * v ; gradients zeroed after.
// Non-trainable parameters stay bit-identical.
template <typename T>
void sgd_step(std::vector<Parameter<T>>& params, OptimizerState<T>& state,
              const std::map<Group, T>& lr_by_group, T momentum)
{
    for (auto& p : params) {
        if (!p.trainable) {
            state.velocity.erase(p.name);
            continue;
        }
        auto it = lr_by_group.find(p.group);
        SKINCNN_CHECK(it != lr_by_group.end(), "no learning rate for group ",
                      group_name(p.group), " (parameter ", p.name, ")");
        const T lr = it->second;
        auto* storage = p.tensor.storage();
        SKINCNN_CHECK(!storage->grad.empty(), "missing gradient for trainable parameter ",
                      p.name);
        auto& v = state.velocity[p.name];
        if (v.empty())
            v.assign(p.tensor.size(), T(0));
        SKINCNN_CHECK(v.size() == p.tensor.size(), "velocity size mismatch for ", p.name);
        T* w = p.tensor.data();
        const T* g = storage->grad.data();
        for (std::size_t i = 0; i < v.size(); ++i) {
            v[i] = momentum * v[i] + g[i];
            w[i] -= lr * v[i];
        }
        p.tensor.zero_grad();
    }
}

} // namespace skincnn
