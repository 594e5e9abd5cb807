#pragma once

#include <cstddef>

// Raw array kernels behind the tensor ops. Each kernel comes in two builds:
// a serial reference (*_ref) and an OpenMP version that parallelizes over
// independent output elements. Per-element reduction order is identical in
// both, so results are bitwise equal for any thread count; the test suite
// asserts this and tools/bench_kernels compares their throughput.
namespace fgclip::kernels {

// c[n x m] = a[n x k] * b[k x m]
void matmul_ref(const double* a, const double* b, double* c, long n, long k, long m);
void matmul(const double* a, const double* b, double* c, long n, long k, long m);

// out[i] = a[i] + b[i]
void add_ref(const double* a, const double* b, double* out, long n);
void add(const double* a, const double* b, double* out, long n);

// out[i] = a[i] * b[i]
void mul_ref(const double* a, const double* b, double* out, long n);
void mul(const double* a, const double* b, double* out, long n);

// out[i] += a[i] * s   (gradient accumulation)
void axpy_ref(const double* a, double s, double* out, long n);
void axpy(const double* a, double s, double* out, long n);

// Exact GELU, x * Phi(x) with the erf form.
void gelu_ref(const double* x, double* out, long n);
void gelu(const double* x, double* out, long n);
void gelu_backward_ref(const double* x, const double* gout, double* gx, long n);
void gelu_backward(const double* x, const double* gout, double* gx, long n);

// Row-wise layer norm over [rows x cols] with per-column gamma/beta.
void layer_norm_rows_ref(const double* x, const double* gamma, const double* beta,
                         double* out, long rows, long cols, double eps);
void layer_norm_rows(const double* x, const double* gamma, const double* beta,
                     double* out, long rows, long cols, double eps);

// Row-wise softmax with per-row max subtraction.
void softmax_rows_ref(const double* x, double* out, long rows, long cols);
void softmax_rows(const double* x, double* out, long rows, long cols);

// Row-wise x - max - log(sum(exp(x - max))).
void log_softmax_rows_ref(const double* x, double* out, long rows, long cols);
void log_softmax_rows(const double* x, double* out, long rows, long cols);

// Row-wise L2 normalization; rows with norm < eps map to zero and have
// zero_flags[row] set when zero_flags is non-null.
void l2_normalize_rows_ref(const double* x, double* out, long rows, long cols,
                           double eps, unsigned char* zero_flags);
void l2_normalize_rows(const double* x, double* out, long rows, long cols,
                       double eps, unsigned char* zero_flags);

}  // namespace fgclip::kernels
