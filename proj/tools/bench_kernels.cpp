// Times the serial reference kernels against their OpenMP builds and prints a
// side-by-side table. The two must agree bitwise (asserted here on every run,
// and again in the unit tests); only throughput may differ.

#include <chrono>
#include <cstdio>
#include <cstring>
#include <functional>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "fgclip/kernels.hpp"
#include "fgclip/rng.hpp"

using Clock = std::chrono::steady_clock;

namespace {

double time_of(const std::function<void()>& fn, int reps) {
    fn();  // warm up
    const auto t0 = Clock::now();
    for (int i = 0; i < reps; ++i) fn();
    return std::chrono::duration<double>(Clock::now() - t0).count() / reps;
}

std::vector<double> random_vec(fgclip::Rng& rng, size_t n) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.next_real(-1.0, 1.0);
    return v;
}

bool bitwise_equal(const std::vector<double>& a, const std::vector<double>& b) {
    return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

void report(const char* name, double serial_s, double omp_s, double flops, bool identical) {
    std::printf("%-22s %10.3f ms %10.3f ms   x%-5.2f  %8.2f GF/s  bitwise=%s\n", name,
                serial_s * 1e3, omp_s * 1e3, serial_s / omp_s, flops / omp_s * 1e-9,
                identical ? "yes" : "NO");
}

}  // namespace

int main() {
    using namespace fgclip::kernels;
#ifdef _OPENMP
    std::printf("OpenMP enabled, max threads = %d\n", omp_get_max_threads());
#else
    std::printf("OpenMP disabled; both columns run the serial path\n");
#endif
    std::printf("%-22s %13s %13s %8s %14s\n", "kernel", "serial", "openmp", "speedup", "throughput");

    fgclip::Rng rng(42);

    for (long n : {128L, 256L, 512L}) {
        auto a = random_vec(rng, n * n);
        auto b = random_vec(rng, n * n);
        std::vector<double> c1(n * n), c2(n * n);
        const int reps = n >= 512 ? 3 : 10;
        const double ts = time_of([&] { matmul_ref(a.data(), b.data(), c1.data(), n, n, n); }, reps);
        const double tp = time_of([&] { matmul(a.data(), b.data(), c2.data(), n, n, n); }, reps);
        char name[64];
        std::snprintf(name, sizeof(name), "matmul %ldx%ldx%ld", n, n, n);
        report(name, ts, tp, 2.0 * n * n * n, bitwise_equal(c1, c2));
    }

    {
        const long rows = 4096, cols = 256;
        auto x = random_vec(rng, rows * cols);
        auto gamma = random_vec(rng, cols);
        auto beta = random_vec(rng, cols);
        std::vector<double> o1(rows * cols), o2(rows * cols);
        const double ts = time_of(
            [&] { layer_norm_rows_ref(x.data(), gamma.data(), beta.data(), o1.data(), rows, cols, 1e-5); }, 5);
        const double tp = time_of(
            [&] { layer_norm_rows(x.data(), gamma.data(), beta.data(), o2.data(), rows, cols, 1e-5); }, 5);
        report("layer_norm 4096x256", ts, tp, 8.0 * rows * cols, bitwise_equal(o1, o2));
    }

    {
        const long rows = 4096, cols = 256;
        auto x = random_vec(rng, rows * cols);
        std::vector<double> o1(rows * cols), o2(rows * cols);
        const double ts = time_of([&] { softmax_rows_ref(x.data(), o1.data(), rows, cols); }, 5);
        const double tp = time_of([&] { softmax_rows(x.data(), o2.data(), rows, cols); }, 5);
        report("softmax 4096x256", ts, tp, 5.0 * rows * cols, bitwise_equal(o1, o2));
    }

    {
        const long n = 1 << 22;
        auto x = random_vec(rng, n);
        std::vector<double> o1(n), o2(n);
        const double ts = time_of([&] { gelu_ref(x.data(), o1.data(), n); }, 5);
        const double tp = time_of([&] { gelu(x.data(), o2.data(), n); }, 5);
        report("gelu 4M", ts, tp, 8.0 * n, bitwise_equal(o1, o2));
    }

    {
        const long rows = 4096, cols = 256;
        auto x = random_vec(rng, rows * cols);
        std::vector<double> o1(rows * cols), o2(rows * cols);
        const double ts =
            time_of([&] { l2_normalize_rows_ref(x.data(), o1.data(), rows, cols, 1e-12, nullptr); }, 5);
        const double tp =
            time_of([&] { l2_normalize_rows(x.data(), o2.data(), rows, cols, 1e-12, nullptr); }, 5);
        report("l2_normalize 4096x256", ts, tp, 3.0 * rows * cols, bitwise_equal(o1, o2));
    }

    return 0;
}
