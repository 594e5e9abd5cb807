#include "fgclip/kernels.hpp"

#include <cmath>

namespace fgclip::kernels {

namespace {

// Below this many scalar operations the OpenMP fork costs more than it saves.
constexpr long kParallelThreshold = 1 << 14;

inline void matmul_row(const double* a, const double* b, double* c, long i, long k, long m) {
    const double* ai = a + i * k;
    double* ci = c + i * m;
    for (long j = 0; j < m; ++j) ci[j] = 0.0;
    for (long p = 0; p < k; ++p) {
        const double av = ai[p];
        const double* bp = b + p * m;
        for (long j = 0; j < m; ++j) ci[j] += av * bp[j];
    }
}

inline double gelu_one(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }

inline double gelu_grad_one(double x) {
    const double cdf = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
    const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
    return cdf + x * pdf;
}

inline void layer_norm_row(const double* xr, const double* gamma, const double* beta,
                           double* outr, long cols, double eps) {
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
    for (long j = 0; j < cols; ++j) outr[j] = (xr[j] - mean) * inv_std * gamma[j] + beta[j];
}

inline void softmax_row(const double* xr, double* outr, long cols) {
    double mx = xr[0];
    for (long j = 1; j < cols; ++j) mx = xr[j] > mx ? xr[j] : mx;
    double sum = 0.0;
    for (long j = 0; j < cols; ++j) {
        outr[j] = std::exp(xr[j] - mx);
        sum += outr[j];
    }
    const double inv = 1.0 / sum;
    for (long j = 0; j < cols; ++j) outr[j] *= inv;
}

inline void log_softmax_row(const double* xr, double* outr, long cols) {
    double mx = xr[0];
    for (long j = 1; j < cols; ++j) mx = xr[j] > mx ? xr[j] : mx;
    double sum = 0.0;
    for (long j = 0; j < cols; ++j) sum += std::exp(xr[j] - mx);
    const double lse = mx + std::log(sum);
    for (long j = 0; j < cols; ++j) outr[j] = xr[j] - lse;
}

inline void l2_normalize_row(const double* xr, double* outr, long cols, double eps,
                             unsigned char* flag) {
    double sq = 0.0;
    for (long j = 0; j < cols; ++j) sq += xr[j] * xr[j];
    const double norm = std::sqrt(sq);
    if (norm < eps) {
        for (long j = 0; j < cols; ++j) outr[j] = 0.0;
        if (flag) *flag = 1;
        return;
    }
    const double inv = 1.0 / norm;
    for (long j = 0; j < cols; ++j) outr[j] = xr[j] * inv;
    if (flag) *flag = 0;
}

}  // namespace

void matmul_ref(const double* a, const double* b, double* c, long n, long k, long m) {
    for (long i = 0; i < n; ++i) matmul_row(a, b, c, i, k, m);
}

void matmul(const double* a, const double* b, double* c, long n, long k, long m) {
    if (n * k * m < kParallelThreshold) {
        matmul_ref(a, b, c, n, k, m);
        return;
    }
#pragma omp parallel for schedule(static)
    for (long i = 0; i < n; ++i) matmul_row(a, b, c, i, k, m);
}

void add_ref(const double* a, const double* b, double* out, long n) {
    for (long i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

void add(const double* a, const double* b, double* out, long n) {
    if (n < kParallelThreshold) {
        add_ref(a, b, out, n);
        return;
    }
#pragma omp parallel for schedule(static)
    for (long i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

void mul_ref(const double* a, const double* b, double* out, long n) {
    for (long i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

void mul(const double* a, const double* b, double* out, long n) {
    if (n < kParallelThreshold) {
        mul_ref(a, b, out, n);
        return;
    }
#pragma omp parallel for schedule(static)
    for (long i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

void axpy_ref(const double* a, double s, double* out, long n) {
    for (long i = 0; i < n; ++i) out[i] += a[i] * s;
}

void axpy(const double* a, double s, double* out, long n) {
    if (n < kParallelThreshold) {
        axpy_ref(a, s, out, n);
        return;
    }
#pragma omp parallel for schedule(static)
    for (long i = 0; i < n; ++i) out[i] += a[i] * s;
}

void gelu_ref(const double* x, double* out, long n) {
    for (long i = 0; i < n; ++i) out[i] = gelu_one(x[i]);
}

void gelu(const double* x, double* out, long n) {
    if (n < kParallelThreshold) {
        gelu_ref(x, out, n);
        return;
    }
#pragma omp parallel for schedule(static)
    for (long i = 0; i < n; ++i) out[i] = gelu_one(x[i]);
}

void gelu_backward_ref(const double* x, const double* gout, double* gx, long n) {
    for (long i = 0; i < n; ++i) gx[i] += gout[i] * gelu_grad_one(x[i]);
}

void gelu_backward(const double* x, const double* gout, double* gx, long n) {
    if (n < kParallelThreshold) {
        gelu_backward_ref(x, gout, gx, n);
        return;
    }
#pragma omp parallel for schedule(static)
    for (long i = 0; i < n; ++i) gx[i] += gout[i] * gelu_grad_one(x[i]);
}

void layer_norm_rows_ref(const double* x, const double* gamma, const double* beta,
                         double* out, long rows, long cols, double eps) {
    for (long i = 0; i < rows; ++i) layer_norm_row(x + i * cols, gamma, beta, out + i * cols, cols, eps);
}

void layer_norm_rows(const double* x, const double* gamma, const double* beta,
                     double* out, long rows, long cols, double eps) {
    if (rows * cols < kParallelThreshold) {
        layer_norm_rows_ref(x, gamma, beta, out, rows, cols, eps);
        return;
    }
#pragma omp parallel for schedule(static)
    for (long i = 0; i < rows; ++i) layer_norm_row(x + i * cols, gamma, beta, out + i * cols, cols, eps);
}

void softmax_rows_ref(const double* x, double* out, long rows, long cols) {
    for (long i = 0; i < rows; ++i) softmax_row(x + i * cols, out + i * cols, cols);
}

void softmax_rows(const double* x, double* out, long rows, long cols) {
    if (rows * cols < kParallelThreshold) {
        softmax_rows_ref(x, out, rows, cols);
        return;
    }
#pragma omp parallel for schedule(static)
    for (long i = 0; i < rows; ++i) softmax_row(x + i * cols, out + i * cols, cols);
}

void log_softmax_rows_ref(const double* x, double* out, long rows, long cols) {
    for (long i = 0; i < rows; ++i) log_softmax_row(x + i * cols, out + i * cols, cols);
}

void log_softmax_rows(const double* x, double* out, long rows, long cols) {
    if (rows * cols < kParallelThreshold) {
        log_softmax_rows_ref(x, out, rows, cols);
        return;
    }
#pragma omp parallel for schedule(static)
    for (long i = 0; i < rows; ++i) log_softmax_row(x + i * cols, out + i * cols, cols);
}

void l2_normalize_rows_ref(const double* x, double* out, long rows, long cols,
                           double eps, unsigned char* zero_flags) {
    for (long i = 0; i < rows; ++i)
        l2_normalize_row(x + i * cols, out + i * cols, cols, eps, zero_flags ? zero_flags + i : nullptr);
}

void l2_normalize_rows(const double* x, double* out, long rows, long cols,
                       double eps, unsigned char* zero_flags) {
    if (rows * cols < kParallelThreshold) {
        l2_normalize_rows_ref(x, out, rows, cols, eps, zero_flags);
        return;
    }
#pragma omp parallel for schedule(static)
    for (long i = 0; i < rows; ++i)
        l2_normalize_row(x + i * cols, out + i * cols, cols, eps, zero_flags ? zero_flags + i : nullptr);
}

}  // namespace fgclip::kernels
