#include <unordered_map>
#include <unordered_set>

#include "priorfill/numerics/ops.hpp"
#include "priorfill/numerics/tensor.hpp"

namespace priorfill {

namespace {

// Post-order over the graph reachable from `root`; reversed it is a valid
// processing order for the reverse sweep.
std::vector<Tensor> topo_order(const Tensor& root) {
    std::vector<Tensor> order;
    std::unordered_set<TensorImpl*> seen;
    struct Frame {
        Tensor t;
        size_t next = 0;
    };
    std::vector<Frame> stack;
    stack.push_back({root, 0});
    seen.insert(root.impl());
    while (!stack.empty()) {
        Frame& f = stack.back();
        const auto& gf = f.t.grad_fn();
        if (gf && f.next < gf->inputs.size()) {
            const Tensor& in = gf->inputs[f.next++];
            if (in.defined() && in.requires_grad() && seen.insert(in.impl()).second)
                stack.push_back({in, 0});
            continue;
        }
        order.push_back(f.t);
        stack.pop_back();
    }
    return order;
}

void sweep(const Tensor& out, const std::unordered_set<TensorImpl*>* targets, bool create_graph,
           std::unordered_map<TensorImpl*, Tensor>& result, bool accumulate_leaves) {
    if (out.numel() != 1)
        throw ContractError("backward requires a scalar output, got shape " +
                            shape_str(out.shape()));
    if (!out.requires_grad()) return;

    std::vector<Tensor> order = topo_order(out);

    std::unordered_map<TensorImpl*, bool> needed;
    for (const Tensor& t : order) {  // children before parents
        bool n = targets ? targets->count(t.impl()) > 0 : t.requires_grad();
        if (!n && t.grad_fn())
            for (const Tensor& in : t.grad_fn()->inputs)
                if (in.defined() && needed[in.impl()]) n = true;
        needed[t.impl()] = n;
    }

    std::unordered_map<TensorImpl*, Tensor> grads;
    grads[out.impl()] = Tensor::ones(out.shape(), out.dtype());

    GradModeGuard mode(create_graph);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        const Tensor& t = *it;
        auto g_it = grads.find(t.impl());
        if (g_it == grads.end()) continue;
        Tensor g = g_it->second;
        grads.erase(g_it);

        if (targets && targets->count(t.impl())) result[t.impl()] = g;
        if (!t.grad_fn()) {
            if (accumulate_leaves && t.requires_grad()) Tensor(t).accumulate_grad(g);
            continue;
        }
        const GradFn& gf = *t.grad_fn();
        std::vector<bool> needs(gf.inputs.size(), false);
        bool any = false;
        for (size_t i = 0; i < gf.inputs.size(); ++i) {
            const Tensor& in = gf.inputs[i];
            needs[i] = in.defined() && in.requires_grad() && needed[in.impl()];
            any = any || needs[i];
        }
        if (!any) continue;
        std::vector<Tensor> in_grads = gf.fn(g, needs);
        for (size_t i = 0; i < gf.inputs.size(); ++i) {
            if (!needs[i]) continue;
            const Tensor& in = gf.inputs[i];
            if (i >= in_grads.size() || !in_grads[i].defined())
                throw ContractError("backward of '" + gf.name + "' produced no gradient for input " +
                                    std::to_string(i));
            if (in_grads[i].shape() != in.shape())
                throw ShapeError("backward of '" + gf.name + "' produced gradient " +
                                 shape_str(in_grads[i].shape()) + " for input " +
                                 shape_str(in.shape()));
            auto& slot = grads[in.impl()];
            slot = slot.defined() ? add(slot, in_grads[i]) : in_grads[i];
        }
    }
}

}  // namespace

void backward(const Tensor& loss, bool create_graph) {
    std::unordered_map<TensorImpl*, Tensor> unused;
    sweep(loss, nullptr, create_graph, unused, true);
}

std::vector<Tensor> grad(const Tensor& out, const std::vector<Tensor>& inputs, bool create_graph) {
    std::unordered_set<TensorImpl*> targets;
    for (const Tensor& in : inputs) {
        if (!in.requires_grad()) throw ContractError("grad(): input does not require grad");
        targets.insert(in.impl());
    }
    std::unordered_map<TensorImpl*, Tensor> result;
    sweep(out, &targets, create_graph, result, false);
    std::vector<Tensor> grads;
    grads.reserve(inputs.size());
    for (const Tensor& in : inputs) {
        auto it = result.find(in.impl());
        grads.push_back(it != result.end() ? it->second : Tensor::zeros(in.shape(), in.dtype()));
    }
    return grads;
}

}  // namespace priorfill
