#include "fgclip/tensor.hpp"

#include <sstream>

#include "fgclip/error.hpp"

namespace fgclip {

namespace {
thread_local Tape* g_active_tape = nullptr;
}

namespace testing {
double backward_fault_scale = 1.0;
}

TensorPtr make_tensor(std::vector<long> shape, bool requires_grad) {
    auto t = std::make_shared<Tensor>();
    t->shape = std::move(shape);
    t->data.assign(t->numel(), 0.0);
    t->requires_grad = requires_grad;
    return t;
}

TensorPtr make_tensor(std::vector<long> shape, std::vector<double> data, bool requires_grad) {
    auto t = std::make_shared<Tensor>();
    t->shape = std::move(shape);
    if (static_cast<long>(data.size()) != t->numel())
        throw ShapeError("make_tensor: data size " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(t->shape));
    t->data = std::move(data);
    t->requires_grad = requires_grad;
    return t;
}

TensorPtr make_scalar(double value, bool requires_grad) {
    return make_tensor({1}, {value}, requires_grad);
}

std::string shape_str(const std::vector<long>& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << "x";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

Tape* Tape::active() { return g_active_tape; }

void Tape::record(const char* kernel, std::vector<TensorPtr> inputs, TensorPtr output, BackwardFn bw) {
    nodes_.push_back(Node{kernel, std::move(inputs), std::move(output), std::move(bw)});
}

void Tape::backward(const TensorPtr& root) {
    if (!root) throw ShapeError("backward: null root");
    if (root->numel() != 1)
        throw ShapeError("backward: root must be scalar, got shape " + shape_str(root->shape));
    root->ensure_grad();
    root->grad[0] += 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        if (!it->output->has_grad()) continue;  // not on any path from the root
        it->bw();
    }
}

TapeScope::TapeScope() : prev_(g_active_tape) { g_active_tape = &tape_; }

TapeScope::~TapeScope() { g_active_tape = prev_; }

}  // namespace fgclip
