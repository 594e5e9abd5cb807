#pragma once

#include <functional>
#include <vector>

#include "fgclip/tensor.hpp"

namespace fgclip {

// Differentiable ops over Tensor. Forward results are computed eagerly via
// the kernels in kernels.hpp; when a tape is active and any input requires
// grad, a backward rule is recorded. All backward rules accumulate (+=).

// Elementwise, same shape.
TensorPtr add(const TensorPtr& a, const TensorPtr& b);
TensorPtr mul(const TensorPtr& a, const TensorPtr& b);

// a[N x d] + row vector b[d], broadcast over rows (bias add).
TensorPtr add_rowvec(const TensorPtr& a, const TensorPtr& b);

// Multiply by compile-time constant / by a learnable scalar tensor [1].
TensorPtr scale(const TensorPtr& a, double c);
TensorPtr mul_scalar(const TensorPtr& a, const TensorPtr& s);

TensorPtr matmul(const TensorPtr& a, const TensorPtr& b);
TensorPtr transpose(const TensorPtr& a);
TensorPtr reshape(const TensorPtr& a, std::vector<long> shape);

// 2-D concat along axis 0 (rows) or 1 (cols).
TensorPtr concat(const std::vector<TensorPtr>& parts, int axis);
TensorPtr slice_rows(const TensorPtr& a, long r0, long r1);
TensorPtr slice_cols(const TensorPtr& a, long c0, long c1);

// Stacks K tensors of shape [d] or [1 x d] into [K x d].
TensorPtr stack_rows(const std::vector<TensorPtr>& rows);

// Mean over one axis of a 1-D or 2-D tensor; mean/sum over all elements.
TensorPtr mean_axis(const TensorPtr& a, int axis);
TensorPtr mean_all(const TensorPtr& a);
TensorPtr sum_all(const TensorPtr& a);

TensorPtr gelu(const TensorPtr& a);
TensorPtr exp_op(const TensorPtr& a);
TensorPtr reciprocal(const TensorPtr& a);
TensorPtr clamp(const TensorPtr& a, double lo, double hi);

// Row-wise layer norm over the last axis; a is [N x d] or [d].
TensorPtr layer_norm(const TensorPtr& a, const TensorPtr& gamma, const TensorPtr& beta,
                     double eps = 1e-5);

// Row lookup: table[V x d], ids in [0, V) -> [len(ids) x d].
TensorPtr embedding(const TensorPtr& table, const std::vector<long>& ids);

// Row-wise softmax / log-softmax with max subtraction; a is [N x M].
TensorPtr softmax_rowwise(const TensorPtr& a);
TensorPtr log_softmax_rowwise(const TensorPtr& a);

// L2 normalization along `axis` (1-D: axis 0; 2-D: axis 1 = rows, axis 0 =
// cols). Slices with norm < 1e-12 map to zero; their indices are appended to
// *zero_slices when provided.
TensorPtr l2_normalize(const TensorPtr& a, int axis, std::vector<long>* zero_slices = nullptr);

// Diagonal of a square matrix -> [N].
TensorPtr gather_diag(const TensorPtr& a);

// Central finite differences of loss_fn against tape gradients. Returns the
// max over all parameter entries of |analytic - numeric| / max(1, |analytic|,
// |numeric|). loss_fn must rebuild the loss from current parameter values and
// be deterministic (checked: two evaluations must agree bitwise).
double finite_difference_check(const std::function<TensorPtr()>& loss_fn,
                               const std::vector<TensorPtr>& params, double h);

namespace detail {
// Shared by ops defined in other translation units (roi_align, patchify).
bool grad_enabled(const std::vector<TensorPtr>& inputs);
void record(const char* kernel, std::vector<TensorPtr> inputs, TensorPtr out, Tape::BackwardFn bw);
}  // namespace detail

}  // namespace fgclip
