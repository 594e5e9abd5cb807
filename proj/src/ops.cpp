#include "fgclip/ops.hpp"

#include <cmath>
#include <cstring>

#include "fgclip/error.hpp"
#include "fgclip/kernels.hpp"

namespace fgclip {

namespace detail {

bool grad_enabled(const std::vector<TensorPtr>& inputs) {
    if (!Tape::active()) return false;
    for (const auto& t : inputs)
        if (t && t->requires_grad) return true;
    return false;
}

void record(const char* kernel, std::vector<TensorPtr> inputs, TensorPtr out, Tape::BackwardFn bw) {
    out->requires_grad = true;
    Tape::active()->record(kernel, std::move(inputs), std::move(out), std::move(bw));
}

}  // namespace detail

namespace {

using detail::grad_enabled;
using detail::record;

void check_same_shape(const char* kernel, const TensorPtr& a, const TensorPtr& b) {
    if (a->shape != b->shape)
        throw ShapeError(std::string(kernel) + ": shape mismatch " + shape_str(a->shape) + " vs " +
                         shape_str(b->shape));
}

void check_2d(const char* kernel, const TensorPtr& a) {
    if (a->ndim() != 2)
        throw ShapeError(std::string(kernel) + ": expected 2-D tensor, got " + shape_str(a->shape));
}

// dA[i,p] += sum_j G[i,j] * B[p,j]
void acc_matmul_a_bt(const double* g, const double* b, double* da, long n, long k, long m) {
#pragma omp parallel for schedule(static) if (n * k * m >= (1 << 14))
    for (long i = 0; i < n; ++i) {
        const double* gi = g + i * m;
        double* dai = da + i * k;
        for (long p = 0; p < k; ++p) {
            const double* bp = b + p * m;
            double acc = 0.0;
            for (long j = 0; j < m; ++j) acc += gi[j] * bp[j];
            dai[p] += acc;
        }
    }
}

// dB[p,j] += sum_i A[i,p] * G[i,j]
void acc_matmul_at_b(const double* a, const double* g, double* db, long n, long k, long m) {
#pragma omp parallel for schedule(static) if (n * k * m >= (1 << 14))
    for (long p = 0; p < k; ++p) {
        double* dbp = db + p * m;
        for (long i = 0; i < n; ++i) {
            const double av = a[i * k + p];
            const double* gi = g + i * m;
            for (long j = 0; j < m; ++j) dbp[j] += av * gi[j];
        }
    }
}

}  // namespace

TensorPtr add(const TensorPtr& a, const TensorPtr& b) {
    check_same_shape("add", a, b);
    auto out = make_tensor(a->shape);
    kernels::add(a->data.data(), b->data.data(), out->data.data(), a->numel());
    if (grad_enabled({a, b})) {
        record("add", {a, b}, out, [a, b, out] {
            if (a->requires_grad) {
                a->ensure_grad();
                kernels::axpy(out->grad.data(), 1.0, a->grad.data(), a->numel());
            }
            if (b->requires_grad) {
                b->ensure_grad();
                kernels::axpy(out->grad.data(), 1.0, b->grad.data(), b->numel());
            }
        });
    }
    return out;
}

TensorPtr mul(const TensorPtr& a, const TensorPtr& b) {
    check_same_shape("multiply", a, b);
    auto out = make_tensor(a->shape);
    kernels::mul(a->data.data(), b->data.data(), out->data.data(), a->numel());
    if (grad_enabled({a, b})) {
        record("multiply", {a, b}, out, [a, b, out] {
            const long n = a->numel();
            const double fault = testing::backward_fault_scale;
            if (a->requires_grad) {
                a->ensure_grad();
                for (long i = 0; i < n; ++i) a->grad[i] += fault * out->grad[i] * b->data[i];
            }
            if (b->requires_grad) {
                b->ensure_grad();
                for (long i = 0; i < n; ++i) b->grad[i] += fault * out->grad[i] * a->data[i];
            }
        });
    }
    return out;
}

TensorPtr add_rowvec(const TensorPtr& a, const TensorPtr& b) {
    check_2d("add_rowvec", a);
    if (b->ndim() != 1 || b->dim(0) != a->dim(1))
        throw ShapeError("add_rowvec: row vector " + shape_str(b->shape) + " does not match " +
                         shape_str(a->shape));
    const long n = a->dim(0), d = a->dim(1);
    auto out = make_tensor(a->shape);
    for (long i = 0; i < n; ++i)
        for (long j = 0; j < d; ++j) out->data[i * d + j] = a->data[i * d + j] + b->data[j];
    if (grad_enabled({a, b})) {
        record("add_rowvec", {a, b}, out, [a, b, out, n, d] {
            if (a->requires_grad) {
                a->ensure_grad();
                kernels::axpy(out->grad.data(), 1.0, a->grad.data(), n * d);
            }
            if (b->requires_grad) {
                b->ensure_grad();
                for (long i = 0; i < n; ++i)
                    for (long j = 0; j < d; ++j) b->grad[j] += out->grad[i * d + j];
            }
        });
    }
    return out;
}

TensorPtr scale(const TensorPtr& a, double c) {
    auto out = make_tensor(a->shape);
    const long n = a->numel();
    for (long i = 0; i < n; ++i) out->data[i] = a->data[i] * c;
    if (grad_enabled({a})) {
        record("scale", {a}, out, [a, out, c] {
            a->ensure_grad();
            kernels::axpy(out->grad.data(), c, a->grad.data(), a->numel());
        });
    }
    return out;
}

TensorPtr mul_scalar(const TensorPtr& a, const TensorPtr& s) {
    if (s->numel() != 1)
        throw ShapeError("mul_scalar: scalar operand has shape " + shape_str(s->shape));
    auto out = make_tensor(a->shape);
    const long n = a->numel();
    const double sv = s->data[0];
    for (long i = 0; i < n; ++i) out->data[i] = a->data[i] * sv;
    if (grad_enabled({a, s})) {
        record("mul_scalar", {a, s}, out, [a, s, out] {
            const long n2 = a->numel();
            if (a->requires_grad) {
                a->ensure_grad();
                kernels::axpy(out->grad.data(), s->data[0], a->grad.data(), n2);
            }
            if (s->requires_grad) {
                s->ensure_grad();
                double acc = 0.0;
                for (long i = 0; i < n2; ++i) acc += out->grad[i] * a->data[i];
                s->grad[0] += acc;
            }
        });
    }
    return out;
}

TensorPtr matmul(const TensorPtr& a, const TensorPtr& b) {
    check_2d("matmul", a);
    check_2d("matmul", b);
    if (a->dim(1) != b->dim(0))
        throw ShapeError("matmul: inner dimensions disagree, " + shape_str(a->shape) + " x " +
                         shape_str(b->shape));
    const long n = a->dim(0), k = a->dim(1), m = b->dim(1);
    auto out = make_tensor({n, m});
    kernels::matmul(a->data.data(), b->data.data(), out->data.data(), n, k, m);
    if (grad_enabled({a, b})) {
        record("matmul", {a, b}, out, [a, b, out, n, k, m] {
            if (a->requires_grad) {
                a->ensure_grad();
                acc_matmul_a_bt(out->grad.data(), b->data.data(), a->grad.data(), n, k, m);
            }
            if (b->requires_grad) {
                b->ensure_grad();
                acc_matmul_at_b(a->data.data(), out->grad.data(), b->grad.data(), n, k, m);
            }
        });
    }
    return out;
}

TensorPtr transpose(const TensorPtr& a) {
    check_2d("transpose", a);
    const long n = a->dim(0), m = a->dim(1);
    auto out = make_tensor({m, n});
    for (long i = 0; i < n; ++i)
        for (long j = 0; j < m; ++j) out->data[j * n + i] = a->data[i * m + j];
    if (grad_enabled({a})) {
        record("transpose", {a}, out, [a, out, n, m] {
            a->ensure_grad();
            for (long i = 0; i < n; ++i)
                for (long j = 0; j < m; ++j) a->grad[i * m + j] += out->grad[j * n + i];
        });
    }
    return out;
}

TensorPtr reshape(const TensorPtr& a, std::vector<long> shape) {
    auto out = make_tensor(std::move(shape));
    if (out->numel() != a->numel())
        throw ShapeError("reshape: cannot view " + shape_str(a->shape) + " as " +
                         shape_str(out->shape));
    out->data = a->data;
    if (grad_enabled({a})) {
        record("reshape", {a}, out, [a, out] {
            a->ensure_grad();
            kernels::axpy(out->grad.data(), 1.0, a->grad.data(), a->numel());
        });
    }
    return out;
}

TensorPtr concat(const std::vector<TensorPtr>& parts, int axis) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    if (axis != 0 && axis != 1) throw ShapeError("concat: axis must be 0 or 1");
    for (const auto& p : parts) check_2d("concat", p);
    long rows = parts[0]->dim(0), cols = parts[0]->dim(1);
    if (axis == 0) {
        rows = 0;
        for (const auto& p : parts) {
            if (p->dim(1) != cols)
                throw ShapeError("concat: column mismatch " + shape_str(p->shape) + " vs cols=" +
                                 std::to_string(cols));
            rows += p->dim(0);
        }
    } else {
        cols = 0;
        for (const auto& p : parts) {
            if (p->dim(0) != rows)
                throw ShapeError("concat: row mismatch " + shape_str(p->shape) + " vs rows=" +
                                 std::to_string(rows));
            cols += p->dim(1);
        }
    }
    auto out = make_tensor({rows, cols});
    if (axis == 0) {
        long r = 0;
        for (const auto& p : parts) {
            std::memcpy(out->data.data() + r * cols, p->data.data(), sizeof(double) * p->numel());
            r += p->dim(0);
        }
    } else {
        long c = 0;
        for (const auto& p : parts) {
            const long pc = p->dim(1);
            for (long i = 0; i < rows; ++i)
                std::memcpy(out->data.data() + i * cols + c, p->data.data() + i * pc,
                            sizeof(double) * pc);
            c += pc;
        }
    }
    if (grad_enabled(parts)) {
        auto out_w = out;
        record("concat", parts, out, [parts, out_w, rows, cols, axis] {
            if (axis == 0) {
                long r = 0;
                for (const auto& p : parts) {
                    if (p->requires_grad) {
                        p->ensure_grad();
                        kernels::axpy(out_w->grad.data() + r * cols, 1.0, p->grad.data(), p->numel());
                    }
                    r += p->dim(0);
                }
            } else {
                long c = 0;
                for (const auto& p : parts) {
                    const long pc = p->dim(1);
                    if (p->requires_grad) {
                        p->ensure_grad();
                        for (long i = 0; i < rows; ++i)
                            for (long j = 0; j < pc; ++j)
                                p->grad[i * pc + j] += out_w->grad[i * cols + c + j];
                    }
                    c += pc;
                }
            }
        });
    }
    return out;
}

TensorPtr slice_rows(const TensorPtr& a, long r0, long r1) {
    check_2d("slice_rows", a);
    if (r0 < 0 || r1 > a->dim(0) || r0 >= r1)
        throw ShapeError("slice_rows: range [" + std::to_string(r0) + "," + std::to_string(r1) +
                         ") invalid for " + shape_str(a->shape));
    const long cols = a->dim(1);
    auto out = make_tensor({r1 - r0, cols});
    std::memcpy(out->data.data(), a->data.data() + r0 * cols, sizeof(double) * out->numel());
    if (grad_enabled({a})) {
        record("slice_rows", {a}, out, [a, out, r0, cols] {
            a->ensure_grad();
            kernels::axpy(out->grad.data(), 1.0, a->grad.data() + r0 * cols, out->numel());
        });
    }
    return out;
}

TensorPtr slice_cols(const TensorPtr& a, long c0, long c1) {
    check_2d("slice_cols", a);
    if (c0 < 0 || c1 > a->dim(1) || c0 >= c1)
        throw ShapeError("slice_cols: range [" + std::to_string(c0) + "," + std::to_string(c1) +
                         ") invalid for " + shape_str(a->shape));
    const long rows = a->dim(0), cols = a->dim(1), w = c1 - c0;
    auto out = make_tensor({rows, w});
    for (long i = 0; i < rows; ++i)
        std::memcpy(out->data.data() + i * w, a->data.data() + i * cols + c0, sizeof(double) * w);
    if (grad_enabled({a})) {
        record("slice_cols", {a}, out, [a, out, rows, cols, c0, w] {
            a->ensure_grad();
            for (long i = 0; i < rows; ++i)
                for (long j = 0; j < w; ++j) a->grad[i * cols + c0 + j] += out->grad[i * w + j];
        });
    }
    return out;
}

TensorPtr stack_rows(const std::vector<TensorPtr>& rows) {
    if (rows.empty()) throw ShapeError("stack_rows: no inputs");
    const long d = rows[0]->numel();
    for (const auto& r : rows) {
        if (r->ndim() > 2 || r->numel() != d || (r->ndim() == 2 && r->dim(0) != 1))
            throw ShapeError("stack_rows: expected row vectors of length " + std::to_string(d) +
                             ", got " + shape_str(r->shape));
    }
    const long k = static_cast<long>(rows.size());
    auto out = make_tensor({k, d});
    for (long i = 0; i < k; ++i)
        std::memcpy(out->data.data() + i * d, rows[i]->data.data(), sizeof(double) * d);
    if (grad_enabled(rows)) {
        record("stack_rows", rows, out, [rows, out, d] {
            for (size_t i = 0; i < rows.size(); ++i) {
                if (!rows[i]->requires_grad) continue;
                rows[i]->ensure_grad();
                kernels::axpy(out->grad.data() + static_cast<long>(i) * d, 1.0,
                              rows[i]->grad.data(), d);
            }
        });
    }
    return out;
}

TensorPtr mean_axis(const TensorPtr& a, int axis) {
    if (a->ndim() == 1) {
        if (axis != 0) throw ShapeError("mean_axis: 1-D tensor has only axis 0");
        const long n = a->dim(0);
        auto out = make_tensor({1});
        double acc = 0.0;
        for (long i = 0; i < n; ++i) acc += a->data[i];
        out->data[0] = acc / static_cast<double>(n);
        if (grad_enabled({a})) {
            record("mean_axis", {a}, out, [a, out, n] {
                a->ensure_grad();
                const double g = out->grad[0] / static_cast<double>(n);
                for (long i = 0; i < n; ++i) a->grad[i] += g;
            });
        }
        return out;
    }
    check_2d("mean_axis", a);
    const long rows = a->dim(0), cols = a->dim(1);
    if (axis == 0) {
        auto out = make_tensor({cols});
        for (long j = 0; j < cols; ++j) {
            double acc = 0.0;
            for (long i = 0; i < rows; ++i) acc += a->data[i * cols + j];
            out->data[j] = acc / static_cast<double>(rows);
        }
        if (grad_enabled({a})) {
            record("mean_axis", {a}, out, [a, out, rows, cols] {
                a->ensure_grad();
                for (long i = 0; i < rows; ++i)
                    for (long j = 0; j < cols; ++j)
                        a->grad[i * cols + j] += out->grad[j] / static_cast<double>(rows);
            });
        }
        return out;
    }
    if (axis != 1) throw ShapeError("mean_axis: axis must be 0 or 1");
    auto out = make_tensor({rows});
    for (long i = 0; i < rows; ++i) {
        double acc = 0.0;
        for (long j = 0; j < cols; ++j) acc += a->data[i * cols + j];
        out->data[i] = acc / static_cast<double>(cols);
    }
    if (grad_enabled({a})) {
        record("mean_axis", {a}, out, [a, out, rows, cols] {
            a->ensure_grad();
            for (long i = 0; i < rows; ++i)
                for (long j = 0; j < cols; ++j)
                    a->grad[i * cols + j] += out->grad[i] / static_cast<double>(cols);
        });
    }
    return out;
}

TensorPtr mean_all(const TensorPtr& a) {
    const long n = a->numel();
    auto out = make_tensor({1});
    double acc = 0.0;
    for (long i = 0; i < n; ++i) acc += a->data[i];
    out->data[0] = acc / static_cast<double>(n);
    if (grad_enabled({a})) {
        record("mean_all", {a}, out, [a, out, n] {
            a->ensure_grad();
            const double g = out->grad[0] / static_cast<double>(n);
            for (long i = 0; i < n; ++i) a->grad[i] += g;
        });
    }
    return out;
}

TensorPtr sum_all(const TensorPtr& a) {
    const long n = a->numel();
    auto out = make_tensor({1});
    double acc = 0.0;
    for (long i = 0; i < n; ++i) acc += a->data[i];
    out->data[0] = acc;
    if (grad_enabled({a})) {
        record("sum_all", {a}, out, [a, out, n] {
            a->ensure_grad();
            const double g = out->grad[0];
            for (long i = 0; i < n; ++i) a->grad[i] += g;
        });
    }
    return out;
}

TensorPtr gelu(const TensorPtr& a) {
    auto out = make_tensor(a->shape);
    kernels::gelu(a->data.data(), out->data.data(), a->numel());
    if (grad_enabled({a})) {
        record("gelu", {a}, out, [a, out] {
            a->ensure_grad();
            kernels::gelu_backward(a->data.data(), out->grad.data(), a->grad.data(), a->numel());
        });
    }
    return out;
}

TensorPtr exp_op(const TensorPtr& a) {
    auto out = make_tensor(a->shape);
    const long n = a->numel();
    for (long i = 0; i < n; ++i) out->data[i] = std::exp(a->data[i]);
    if (grad_enabled({a})) {
        record("exp", {a}, out, [a, out, n] {
            a->ensure_grad();
            for (long i = 0; i < n; ++i) a->grad[i] += out->grad[i] * out->data[i];
        });
    }
    return out;
}

TensorPtr reciprocal(const TensorPtr& a) {
    auto out = make_tensor(a->shape);
    const long n = a->numel();
    for (long i = 0; i < n; ++i) out->data[i] = 1.0 / a->data[i];
    if (grad_enabled({a})) {
        record("reciprocal", {a}, out, [a, out, n] {
            a->ensure_grad();
            for (long i = 0; i < n; ++i)
                a->grad[i] -= out->grad[i] * out->data[i] * out->data[i];
        });
    }
    return out;
}

TensorPtr clamp(const TensorPtr& a, double lo, double hi) {
    if (lo > hi) throw ShapeError("clamp: lo > hi");
    auto out = make_tensor(a->shape);
    const long n = a->numel();
    for (long i = 0; i < n; ++i) {
        double v = a->data[i];
        out->data[i] = v < lo ? lo : (v > hi ? hi : v);
    }
    if (grad_enabled({a})) {
        record("clamp", {a}, out, [a, out, lo, hi, n] {
            a->ensure_grad();
            for (long i = 0; i < n; ++i)
                if (a->data[i] > lo && a->data[i] < hi) a->grad[i] += out->grad[i];
        });
    }
    return out;
}

TensorPtr layer_norm(const TensorPtr& a, const TensorPtr& gamma, const TensorPtr& beta, double eps) {
    const bool was_1d = a->ndim() == 1;
    const long rows = was_1d ? 1 : a->dim(0);
    const long cols = was_1d ? a->dim(0) : a->dim(1);
    if (a->ndim() > 2) throw ShapeError("layer_norm: expected 1-D or 2-D, got " + shape_str(a->shape));
    if (gamma->numel() != cols || beta->numel() != cols)
        throw ShapeError("layer_norm: gamma/beta " + shape_str(gamma->shape) + "/" +
                         shape_str(beta->shape) + " do not match last axis of " + shape_str(a->shape));
    auto out = make_tensor(a->shape);
    kernels::layer_norm_rows(a->data.data(), gamma->data.data(), beta->data.data(),
                             out->data.data(), rows, cols, eps);
    if (grad_enabled({a, gamma, beta})) {
        // Stats are recomputed in backward; cheaper than caching at desk scale.
        record("layer_norm", {a, gamma, beta}, out, [a, gamma, beta, out, rows, cols, eps] {
            if (a->requires_grad) a->ensure_grad();
            if (gamma->requires_grad) gamma->ensure_grad();
            if (beta->requires_grad) beta->ensure_grad();
            std::vector<double> xhat(cols), gg(cols);
            for (long i = 0; i < rows; ++i) {
                const double* xr = a->data.data() + i * cols;
                const double* gr = out->grad.data() + i * cols;
                double mean = 0.0;
                for (long j = 0; j < cols; ++j) mean += xr[j];
                mean /= static_cast<double>(cols);
                double var = 0.0;
                for (long j = 0; j < cols; ++j) {
                    const double d = xr[j] - mean;
                    var += d * d;
                }
                var /= static_cast<double>(cols);
                const double inv_std = 1.0 / std::sqrt(var + eps);
                double mean_gg = 0.0, mean_ggx = 0.0;
                for (long j = 0; j < cols; ++j) {
                    xhat[j] = (xr[j] - mean) * inv_std;
                    gg[j] = gr[j] * gamma->data[j];
                    mean_gg += gg[j];
                    mean_ggx += gg[j] * xhat[j];
                }
                mean_gg /= static_cast<double>(cols);
                mean_ggx /= static_cast<double>(cols);
                if (a->requires_grad)
                    for (long j = 0; j < cols; ++j)
                        a->grad[i * cols + j] += (gg[j] - mean_gg - xhat[j] * mean_ggx) * inv_std;
                if (gamma->requires_grad)
                    for (long j = 0; j < cols; ++j) gamma->grad[j] += gr[j] * xhat[j];
                if (beta->requires_grad)
                    for (long j = 0; j < cols; ++j) beta->grad[j] += gr[j];
            }
        });
    }
    return out;
}

TensorPtr embedding(const TensorPtr& table, const std::vector<long>& ids) {
    check_2d("embedding", table);
    const long v = table->dim(0), d = table->dim(1);
    for (long id : ids)
        if (id < 0 || id >= v)
            throw DataError("embedding: token id " + std::to_string(id) + " out of range [0," +
                            std::to_string(v) + ")");
    const long t = static_cast<long>(ids.size());
    auto out = make_tensor({t, d});
    for (long i = 0; i < t; ++i)
        std::memcpy(out->data.data() + i * d, table->data.data() + ids[i] * d, sizeof(double) * d);
    if (grad_enabled({table})) {
        record("embedding", {table}, out, [table, out, ids, d] {
            table->ensure_grad();
            for (size_t i = 0; i < ids.size(); ++i)
                for (long j = 0; j < d; ++j)
                    table->grad[ids[i] * d + j] += out->grad[static_cast<long>(i) * d + j];
        });
    }
    return out;
}

TensorPtr softmax_rowwise(const TensorPtr& a) {
    check_2d("softmax_rowwise", a);
    const long rows = a->dim(0), cols = a->dim(1);
    auto out = make_tensor(a->shape);
    kernels::softmax_rows(a->data.data(), out->data.data(), rows, cols);
    if (grad_enabled({a})) {
        record("softmax_rowwise", {a}, out, [a, out, rows, cols] {
            a->ensure_grad();
            for (long i = 0; i < rows; ++i) {
                const double* y = out->data.data() + i * cols;
                const double* g = out->grad.data() + i * cols;
                double dot = 0.0;
                for (long j = 0; j < cols; ++j) dot += g[j] * y[j];
                for (long j = 0; j < cols; ++j) a->grad[i * cols + j] += y[j] * (g[j] - dot);
            }
        });
    }
    return out;
}

TensorPtr log_softmax_rowwise(const TensorPtr& a) {
    check_2d("log_softmax_rowwise", a);
    const long rows = a->dim(0), cols = a->dim(1);
    auto out = make_tensor(a->shape);
    kernels::log_softmax_rows(a->data.data(), out->data.data(), rows, cols);
    if (grad_enabled({a})) {
        record("log_softmax_rowwise", {a}, out, [a, out, rows, cols] {
            a->ensure_grad();
            for (long i = 0; i < rows; ++i) {
                const double* y = out->data.data() + i * cols;
                const double* g = out->grad.data() + i * cols;
                double gsum = 0.0;
                for (long j = 0; j < cols; ++j) gsum += g[j];
                for (long j = 0; j < cols; ++j)
                    a->grad[i * cols + j] += g[j] - std::exp(y[j]) * gsum;
            }
        });
    }
    return out;
}

TensorPtr l2_normalize(const TensorPtr& a, int axis, std::vector<long>* zero_slices) {
    constexpr double kEps = 1e-12;
    if (a->ndim() == 2 && axis == 0) {
        // Column normalization via the row path on the transpose.
        auto t = transpose(a);
        auto norm = l2_normalize(t, 1, zero_slices);
        return transpose(norm);
    }
    const bool was_1d = a->ndim() == 1;
    if (!was_1d) check_2d("l2_normalize", a);
    if (was_1d && axis != 0) throw ShapeError("l2_normalize: 1-D tensor has only axis 0");
    if (!was_1d && axis != 1) throw ShapeError("l2_normalize: axis must be 0 or 1");
    const long rows = was_1d ? 1 : a->dim(0);
    const long cols = was_1d ? a->dim(0) : a->dim(1);
    auto out = make_tensor(a->shape);
    std::vector<unsigned char> flags(rows, 0);
    kernels::l2_normalize_rows(a->data.data(), out->data.data(), rows, cols, kEps, flags.data());
    if (zero_slices)
        for (long i = 0; i < rows; ++i)
            if (flags[i]) zero_slices->push_back(i);
    if (grad_enabled({a})) {
        record("l2_normalize", {a}, out, [a, out, rows, cols, flags] {
            a->ensure_grad();
            for (long i = 0; i < rows; ++i) {
                if (flags[i]) continue;  // zero slice: output and gradient are both zero
                const double* xr = a->data.data() + i * cols;
                const double* yr = out->data.data() + i * cols;
                const double* gr = out->grad.data() + i * cols;
                double sq = 0.0, dot = 0.0;
                for (long j = 0; j < cols; ++j) {
                    sq += xr[j] * xr[j];
                    dot += gr[j] * yr[j];
                }
                const double inv_norm = 1.0 / std::sqrt(sq);
                for (long j = 0; j < cols; ++j)
                    a->grad[i * cols + j] += (gr[j] - yr[j] * dot) * inv_norm;
            }
        });
    }
    return out;
}

TensorPtr gather_diag(const TensorPtr& a) {
    check_2d("gather_diag", a);
    if (a->dim(0) != a->dim(1))
        throw ShapeError("gather_diag: matrix not square, " + shape_str(a->shape));
    const long n = a->dim(0);
    auto out = make_tensor({n});
    for (long i = 0; i < n; ++i) out->data[i] = a->data[i * n + i];
    if (grad_enabled({a})) {
        record("gather_diag", {a}, out, [a, out, n] {
            a->ensure_grad();
            for (long i = 0; i < n; ++i) a->grad[i * n + i] += out->grad[i];
        });
    }
    return out;
}

double finite_difference_check(const std::function<TensorPtr()>& loss_fn,
                               const std::vector<TensorPtr>& params, double h) {
    if (!(h >= 1e-7 && h <= 1e-3))
        throw ConfigError("finite_difference_check: h must lie in [1e-7, 1e-3]");

    // Determinism gate: two untaped evaluations must agree bitwise.
    const double v1 = loss_fn()->data[0];
    const double v2 = loss_fn()->data[0];
    if (std::memcmp(&v1, &v2, sizeof(double)) != 0)
        throw NumericError("finite_difference_check: loss_fn is not deterministic (" +
                           std::to_string(v1) + " vs " + std::to_string(v2) + ")");

    for (const auto& p : params) p->zero_grad();
    std::vector<std::vector<double>> analytic;
    {
        TapeScope scope;
        auto loss = loss_fn();
        scope.tape().backward(loss);
    }
    analytic.reserve(params.size());
    for (const auto& p : params)
        analytic.push_back(p->has_grad() ? p->grad : std::vector<double>(p->data.size(), 0.0));

    double max_rel = 0.0;
    for (size_t pi = 0; pi < params.size(); ++pi) {
        auto& p = *params[pi];
        for (size_t i = 0; i < p.data.size(); ++i) {
            const double saved = p.data[i];
            p.data[i] = saved + h;
            const double up = loss_fn()->data[0];
            p.data[i] = saved - h;
            const double down = loss_fn()->data[0];
            p.data[i] = saved;
            const double numeric = (up - down) / (2.0 * h);
            const double a = analytic[pi][i];
            const double denom = std::max({1.0, std::fabs(a), std::fabs(numeric)});
            const double rel = std::fabs(a - numeric) / denom;
            if (rel > max_rel) max_rel = rel;
        }
    }
    return max_rel;
}

}  // namespace fgclip
