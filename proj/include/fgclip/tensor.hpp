#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace fgclip {

// Dense row-major 64-bit float array with an optional gradient buffer.
// Tensors participate in a define-by-run tape: ops record themselves on the
// thread-local active tape whenever any input requires grad.
struct Tensor {
    std::vector<long> shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until first accumulation
    bool requires_grad = false;
    std::string name;  // set for parameters, useful in diagnostics

    long numel() const {
        long n = 1;
        for (long s : shape) n *= s;
        return n;
    }
    long dim(size_t i) const { return shape.at(i); }
    size_t ndim() const { return shape.size(); }

    bool has_grad() const { return !grad.empty(); }
    void ensure_grad() {
        if (grad.empty()) grad.assign(data.size(), 0.0);
    }
    void zero_grad() {
        if (!grad.empty()) grad.assign(grad.size(), 0.0);
    }

    // 2-D accessors (row-major).
    double& at(long i, long j) { return data[i * shape[1] + j]; }
    double at(long i, long j) const { return data[i * shape[1] + j]; }
};

using TensorPtr = std::shared_ptr<Tensor>;

TensorPtr make_tensor(std::vector<long> shape, bool requires_grad = false);
TensorPtr make_tensor(std::vector<long> shape, std::vector<double> data, bool requires_grad = false);
TensorPtr make_scalar(double value, bool requires_grad = false);

std::string shape_str(const std::vector<long>& shape);

// Records ops in construction order. Construction order is topological by
// definition, so a single reverse sweep visits each op once with all output
// gradients already accumulated.
class Tape {
  public:
    using BackwardFn = std::function<void()>;

    void record(const char* kernel, std::vector<TensorPtr> inputs, TensorPtr output, BackwardFn bw);

    // Seeds root->grad with 1 and runs every recorded backward rule in
    // reverse order. Root must be scalar. Gradients accumulate additively,
    // so fan-out is handled by the per-op += rules.
    void backward(const TensorPtr& root);

    size_t size() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }

    static Tape* active();

  private:
    friend class TapeScope;
    struct Node {
        const char* kernel;
        std::vector<TensorPtr> inputs;
        TensorPtr output;
        BackwardFn bw;
    };
    std::vector<Node> nodes_;
};

// RAII scope installing a tape as the thread-local recorder. Forward passes
// outside any scope (inference, finite-difference probes) record nothing.
class TapeScope {
  public:
    TapeScope();
    ~TapeScope();
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;
    Tape& tape() { return tape_; }

  private:
    Tape tape_;
    Tape* prev_;
};

namespace testing {
// Fault-injection hook: scales the gradient flowing through mul's backward
// rule. Exists so the selfcheck negative control can prove the gradient
// checker actually detects a broken backward rule.
extern double backward_fault_scale;
}  // namespace testing

}  // namespace fgclip
