#include "sdaut/autodiff.hpp"

#include <stdexcept>

namespace sdaut {

namespace {
thread_local Tape* g_active = nullptr;
}

Tape::Tape() : previous_(g_active) { g_active = this; }

Tape::~Tape() {
    if (g_active == this) g_active = previous_;
}

Tape* Tape::active() { return g_active; }

void Tape::record(std::vector<std::shared_ptr<TensorImpl>> inputs, std::shared_ptr<TensorImpl> output, BackwardFn fn) {
    if (consumed_) throw std::logic_error("recording onto a consumed tape; call reset() first");
    nodes_.push_back(Node{std::move(inputs), std::move(output), std::move(fn)});
}

void Tape::backward(const Tensor& loss) {
    if (consumed_) throw std::logic_error("backward called twice without reset");
    if (loss.numel() != 1) throw ShapeError("backward requires a scalar loss, got " + to_string(loss.shape()));
    if (nodes_.empty()) throw std::logic_error("backward on an empty tape");
    consumed_ = true;

    auto& seed = autodiff::grad_of(loss.impl());
    seed[0] += 1.0;

    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        auto& out = it->output;
        if (out->grad.empty()) continue;
        it->backward(*out);
        if (!out->is_leaf) {
            // Intermediate gradients are consumed exactly once.
            out->grad.clear();
            out->grad.shrink_to_fit();
        }
    }
    for (const auto& node : nodes_) {
        for (const auto& in : node.inputs) {
            if (in->is_leaf && in->requires_grad) autodiff::grad_of(in);
        }
    }
}

void Tape::reset() {
    nodes_.clear();
    consumed_ = false;
}

NoGradScope::NoGradScope() : saved_(g_active) { g_active = nullptr; }
NoGradScope::~NoGradScope() { g_active = saved_; }

namespace autodiff {

bool should_record(std::initializer_list<const Tensor*> inputs) {
    if (g_active == nullptr) return false;
    for (const Tensor* t : inputs) {
        if (t != nullptr && t->defined() && t->requires_grad()) return true;
    }
    return false;
}

bool should_record(const std::vector<Tensor>& inputs) {
    if (g_active == nullptr) return false;
    for (const Tensor& t : inputs) {
        if (t.defined() && t.requires_grad()) return true;
    }
    return false;
}

Tensor make_result(Shape shape, std::vector<double> values, const char* op, const std::vector<Tensor>& inputs,
                   BackwardFn fn) {
    finalize_values(values, op);
    Tensor out(std::move(shape), std::move(values));
    if (fn && should_record(inputs)) {
        out.impl()->requires_grad = true;
        out.impl()->is_leaf = false;
        std::vector<std::shared_ptr<TensorImpl>> impls;
        impls.reserve(inputs.size());
        for (const auto& t : inputs) {
            if (t.defined()) impls.push_back(t.impl());
        }
        g_active->record(std::move(impls), out.impl(), std::move(fn));
    }
    return out;
}

std::vector<double>& grad_of(const std::shared_ptr<TensorImpl>& t) {
    if (t->grad.empty()) t->grad.assign(t->data.size(), 0.0);
    return t->grad;
}

}  // namespace autodiff

}  // namespace sdaut
