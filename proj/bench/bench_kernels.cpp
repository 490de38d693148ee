// Times the OpenMP kernels against the serial reference implementations and
// prints a speedup table. Usage: cmma_bench [repeats]

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "cmma/ops.hpp"
#include "cmma/reference.hpp"
#include "cmma/attention.hpp"
#include "cmma/retrieval.hpp"
#include "cmma/rng.hpp"
#include "cmma/tensor.hpp"

using cmma::Rng;
using cmma::Tensor;

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-1.0, 1.0);
    return t;
}

volatile double g_sink = 0.0;

double time_one(const std::function<Tensor()>& fn, int repeats) {
    fn();  // warm up
    const auto start = std::chrono::steady_clock::now();
    for (int i = 0; i < repeats; ++i) {
        const Tensor out = fn();
        g_sink += out[0];
    }
    const double total =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    return total / repeats;
}

void report(const char* name, double serial_ms, double parallel_ms, double max_diff) {
    std::printf("%-28s %10.3f ms %10.3f ms %8.2fx   max |diff| %.3g\n", name, serial_ms, parallel_ms,
                serial_ms / parallel_ms, max_diff);
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = std::abs(a[i] - b[i]);
        if (d > worst) worst = d;
    }
    return worst;
}

}  // namespace

int main(int argc, char** argv) {
    const int repeats = argc > 1 ? std::atoi(argv[1]) : 20;
#ifdef _OPENMP
    std::printf("threads: %d, repeats: %d\n", omp_get_max_threads(), repeats);
#else
    std::printf("threads: 1 (OpenMP off), repeats: %d\n", repeats);
#endif
    std::printf("%-28s %13s %13s %9s\n", "kernel", "serial", "parallel", "speedup");

    Rng rng(1);

    {
        const Tensor x = random_tensor({256, 16, 8}, rng);
        const Tensor w = random_tensor({256, 256}, rng);
        const Tensor b = random_tensor({256}, rng);
        const double serial = time_one([&] { return cmma::ref::conv1x1(x, w, b); }, repeats);
        const double parallel = time_one([&] { return cmma::ops::conv1x1(x, w, b); }, repeats);
        report("conv1x1 256->256 @16x8", serial, parallel,
               max_abs_diff(cmma::ref::conv1x1(x, w, b), cmma::ops::conv1x1(x, w, b)));
    }
    {
        const Tensor x = random_tensor({32, 64, 32}, rng);
        const Tensor w = random_tensor({64, 32, 3, 3}, rng);
        const Tensor b = random_tensor({64}, rng);
        const double serial = time_one([&] { return cmma::ref::conv2d(x, w, b, 2, 1); }, repeats);
        const double parallel = time_one([&] { return cmma::ops::conv2d(x, w, b, 2, 1); }, repeats);
        report("conv2d 3x3 s2 32->64 @64x32", serial, parallel,
               max_abs_diff(cmma::ref::conv2d(x, w, b, 2, 1), cmma::ops::conv2d(x, w, b, 2, 1)));
    }
    {
        const Tensor q = random_tensor({256, 64}, rng);
        const Tensor g = random_tensor({512, 64}, rng);
        const double serial = time_one([&] { return cmma::ref::pairwise_distances(q, g); }, repeats);
        const double parallel =
            time_one([&] { return cmma::retrieval::pairwise_distances(q, g); }, repeats);
        report("distances 256x512 @64", serial, parallel,
               max_abs_diff(cmma::ref::pairwise_distances(q, g),
                            cmma::retrieval::pairwise_distances(q, g)));
    }
    {
        // per-slice softmax via the batched path vs a slice-by-slice loop
        const Tensor r = random_tensor({64, 8, 16, 8}, rng);
        const auto serial_fn = [&] {
            Tensor out(r.shape());
            const std::size_t hw = 128;
            for (std::size_t s = 0; s < 64 * 8; ++s) {
                Tensor slice({16, 8});
                for (std::size_t i = 0; i < hw; ++i) slice[i] = r[s * hw + i];
                const Tensor y = cmma::ref::global_softmax(slice);
                for (std::size_t i = 0; i < hw; ++i) out[s * hw + i] = y[i];
            }
            return out;
        };
        const auto parallel_fn = [&] {
            return cmma::attention::attention_distributions(r).values;
        };
        const double serial = time_one(serial_fn, repeats);
        const double parallel = time_one(parallel_fn, repeats);
        report("softmax 512 slices @16x8", serial, parallel,
               max_abs_diff(serial_fn(), parallel_fn()));
    }
    return 0;
}
