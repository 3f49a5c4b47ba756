// Compares the OpenMP kernels against the serial reference implementations at
// model-shaped sizes. Not part of the test suite; run manually:
//   ./bench_kernels [repeats]

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <random>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "crossecg/kernels.hpp"

using namespace crossecg;

namespace {

using clock_type = std::chrono::steady_clock;

double time_ms(const std::function<void()>& fn, int repeats) {
    fn(); // warm up
    const auto t0 = clock_type::now();
    for (int i = 0; i < repeats; ++i) fn();
    const auto t1 = clock_type::now();
    return std::chrono::duration<double, std::milli>(t1 - t0).count() / repeats;
}

std::vector<double> randvec(size_t n, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<double> v(n);
    for (double& x : v) x = u(rng);
    return v;
}

void row(const char* name, double serial_ms, double omp_ms, double gflop) {
    std::printf("%-28s %10.2f ms %10.2f ms %8.2fx %8.2f GFLOP/s\n", name, serial_ms, omp_ms,
                serial_ms / omp_ms, gflop / (omp_ms * 1e-3) / 1e9);
}

} // namespace

int main(int argc, char** argv) {
    const int repeats = argc > 1 ? std::atoi(argv[1]) : 3;
    std::mt19937_64 rng(7);

#ifdef _OPENMP
    std::printf("OpenMP threads: %d\n", omp_get_max_threads());
#else
    std::printf("built without OpenMP\n");
#endif
    std::printf("%-28s %13s %13s %9s %17s\n", "kernel", "serial", "omp", "speedup", "throughput");

    { // multi-scale shaped conv: B=8, 1->64 channels, K=11, L=1800
        const int B = 8, Cin = 1, Cout = 64, L = 1800, K = 11;
        auto x = randvec(static_cast<size_t>(B) * Cin * L, rng);
        auto w = randvec(static_cast<size_t>(Cout) * Cin * K, rng);
        auto bias = randvec(static_cast<size_t>(Cout), rng);
        std::vector<double> y(static_cast<size_t>(B) * Cout * L);
        const double flops = 2.0 * B * Cout * Cin * K * L;
        const double s = time_ms(
            [&] { kernels::serial::conv1d_forward(x.data(), w.data(), bias.data(), y.data(), B, Cin, Cout, L, K); },
            repeats);
        const double p = time_ms(
            [&] { kernels::conv1d_forward(x.data(), w.data(), bias.data(), y.data(), B, Cin, Cout, L, K); },
            repeats);
        row("conv1d 1->64 K11 L1800", s, p, flops);
    }

    { // deep conv shaped: B=8, 256->256, K=3, L=600
        const int B = 8, Cin = 256, Cout = 256, L = 600, K = 3;
        auto x = randvec(static_cast<size_t>(B) * Cin * L, rng);
        auto w = randvec(static_cast<size_t>(Cout) * Cin * K, rng);
        auto bias = randvec(static_cast<size_t>(Cout), rng);
        std::vector<double> y(static_cast<size_t>(B) * Cout * L);
        const double flops = 2.0 * B * Cout * Cin * K * L;
        const double s = time_ms(
            [&] { kernels::serial::conv1d_forward(x.data(), w.data(), bias.data(), y.data(), B, Cin, Cout, L, K); },
            repeats);
        const double p = time_ms(
            [&] { kernels::conv1d_forward(x.data(), w.data(), bias.data(), y.data(), B, Cin, Cout, L, K); },
            repeats);
        row("conv1d 256->256 K3 L600", s, p, flops);
    }

    { // attention score matmul: q^T k, B=8, Cq=8, L=600
        const int B = 8, Cq = 8, L = 600;
        auto q = randvec(static_cast<size_t>(B) * Cq * L, rng);
        auto k = randvec(static_cast<size_t>(B) * Cq * L, rng);
        std::vector<double> scores(static_cast<size_t>(B) * L * L);
        const double flops = 2.0 * B * L * static_cast<double>(L) * Cq;
        const double s = time_ms(
            [&] { kernels::serial::bmm(q.data(), true, k.data(), false, scores.data(), B, L, Cq, L); },
            repeats);
        const double p = time_ms(
            [&] { kernels::bmm(q.data(), true, k.data(), false, scores.data(), B, L, Cq, L); },
            repeats);
        row("bmm q^T.k  Cq8 L600", s, p, flops);
    }

    { // attention value mix: v . A^T, B=8, C=64, L=600
        const int B = 8, C = 64, L = 600;
        auto v = randvec(static_cast<size_t>(B) * C * L, rng);
        auto a = randvec(static_cast<size_t>(B) * L * L, rng);
        std::vector<double> out(static_cast<size_t>(B) * C * L);
        const double flops = 2.0 * B * C * static_cast<double>(L) * L;
        const double s = time_ms(
            [&] { kernels::serial::bmm(v.data(), false, a.data(), true, out.data(), B, C, L, L); },
            repeats);
        const double p = time_ms(
            [&] { kernels::bmm(v.data(), false, a.data(), true, out.data(), B, C, L, L); },
            repeats);
        row("bmm v.A^T  C64 L600", s, p, flops);
    }

    { // embedding projection: B=256, 512->128
        const int B = 256, F = 512, G = 128;
        auto x = randvec(static_cast<size_t>(B) * F, rng);
        auto w = randvec(static_cast<size_t>(F) * G, rng);
        auto bias = randvec(static_cast<size_t>(G), rng);
        std::vector<double> y(static_cast<size_t>(B) * G);
        const double flops = 2.0 * B * F * G;
        const double s = time_ms(
            [&] { kernels::serial::linear_forward(x.data(), w.data(), bias.data(), y.data(), B, F, G); },
            repeats);
        const double p = time_ms(
            [&] { kernels::linear_forward(x.data(), w.data(), bias.data(), y.data(), B, F, G); },
            repeats);
        row("linear 512->128 B256", s, p, flops);
    }

    return 0;
}
