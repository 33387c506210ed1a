#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "sdaut/tensor.hpp"

namespace sdaut {

/// Receives the recorded output (values and incoming gradient) and accumulates
/// into the gradients of the inputs it captured.
using BackwardFn = std::function<void(const TensorImpl& out)>;

/// Records primitive applications while it is the active tape. Nodes are
/// appended in execution order, which is a topological order of the graph, so
/// the reverse sweep in backward() visits every node after all its consumers.
///
///   Tape tape;
///   Tensor loss = ops::sum(ops::mul(x, x));
///   tape.backward(loss);  // x.grad() now holds 2x
class Tape {
public:
    Tape();
    ~Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Innermost live tape, or nullptr when nothing is recording.
    static Tape* active();

    void record(std::vector<std::shared_ptr<TensorImpl>> inputs, std::shared_ptr<TensorImpl> output, BackwardFn fn);

    /// Reverse sweep from a scalar loss. Every leaf that requires grad and was
    /// read by a recorded primitive ends up with a gradient buffer (zeros if the
    /// loss does not depend on it). A second call without reset() throws.
    void backward(const Tensor& loss);
    void reset();

    std::size_t size() const { return nodes_.size(); }
    bool consumed() const { return consumed_; }

private:
    struct Node {
        std::vector<std::shared_ptr<TensorImpl>> inputs;
        std::shared_ptr<TensorImpl> output;
        BackwardFn backward;
    };

    std::vector<Node> nodes_;
    bool consumed_ = false;
    Tape* previous_ = nullptr;
};

/// Suspends recording for its lifetime.
class NoGradScope {
public:
    NoGradScope();
    ~NoGradScope();
    NoGradScope(const NoGradScope&) = delete;
    NoGradScope& operator=(const NoGradScope&) = delete;

private:
    Tape* saved_;
};

namespace autodiff {

/// True when a tape is recording and at least one input requires grad.
bool should_record(std::initializer_list<const Tensor*> inputs);
bool should_record(const std::vector<Tensor>& inputs);

/// Builds a primitive's result: finalizes values, and when recording, marks the
/// output as differentiable and registers `fn` on the active tape.
Tensor make_result(Shape shape, std::vector<double> values, const char* op, const std::vector<Tensor>& inputs,
                   BackwardFn fn);

/// Gradient buffer of `t`, allocated as zeros on first use.
std::vector<double>& grad_of(const std::shared_ptr<TensorImpl>& t);

}  // namespace autodiff

}  // namespace sdaut
