// Times the OpenMP kernels against their serial references and checks the
// outputs stay bit-identical while doing so.

#include <chrono>
#include <cstdio>
#include <functional>
#include <string>

#include "fb/kernels.hpp"
#include "fb/rng.hpp"
#include "fb/tensor.hpp"

using namespace fb;
namespace k = fb::kernels;

namespace {

double time_ms(const std::function<void()>& fn, int reps) {
    fn();  // warm up
    auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < reps; ++i) fn();
    auto t1 = std::chrono::steady_clock::now();
    return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

void report(const char* name, double serial_ms, double parallel_ms, bool identical) {
    std::printf("%-24s serial %9.3f ms   omp %9.3f ms   speedup %5.2fx   %s\n", name, serial_ms,
                parallel_ms, serial_ms / parallel_ms, identical ? "bit-identical" : "MISMATCH");
}

}  // namespace

int main(int argc, char** argv) {
    const int scale = (argc > 1) ? std::stoi(argv[1]) : 1;
    const int reps = 5;
    Rng rng(1);

    {
        const int m = 256 * scale, kk = 256, n = 256;
        Tensor a({m, kk}), b({kk, n}), c1({m, n}), c2({m, n});
        for (auto& v : a.data) v = rng.normal();
        for (auto& v : b.data) v = rng.normal();
        double ts = time_ms([&] { k::serial::matmul(a.ptr(), b.ptr(), c1.ptr(), m, kk, n); }, reps);
        double tp = time_ms([&] { k::matmul(a.ptr(), b.ptr(), c2.ptr(), m, kk, n); }, reps);
        report("matmul 256^3", ts, tp, c1.data == c2.data);
    }
    {
        const int rows = 4096 * scale, dim = 512;
        Tensor x({rows, dim}), y1({rows, dim}), y2({rows, dim}), mu({rows}), rs({rows});
        for (auto& v : x.data) v = rng.normal();
        double ts = time_ms(
            [&] { k::serial::layernorm_forward(x.ptr(), y1.ptr(), mu.ptr(), rs.ptr(), rows, dim); },
            reps);
        double tp = time_ms(
            [&] { k::layernorm_forward(x.ptr(), y2.ptr(), mu.ptr(), rs.ptr(), rows, dim); }, reps);
        report("layernorm 4096x512", ts, tp, y1.data == y2.data);
    }
    {
        const int batch = 8 * scale, t = 256, heads = 8, dim = 256;
        Tensor qkv({batch * t, 3 * dim}), o1({batch * t, dim}), o2({batch * t, dim});
        Tensor p1({batch, heads, t, t}), p2({batch, heads, t, t});
        for (auto& v : qkv.data) v = rng.normal();
        double ts = time_ms(
            [&] { k::serial::attention_forward(qkv.ptr(), o1.ptr(), p1.ptr(), batch, t, heads, dim); },
            reps);
        double tp = time_ms(
            [&] { k::attention_forward(qkv.ptr(), o2.ptr(), p2.ptr(), batch, t, heads, dim); }, reps);
        report("attention 8x256x256", ts, tp, o1.data == o2.data);
    }
    {
        const int h = 128 * scale, w = 128, cin = 16, cout = 32;
        Tensor x({h, w, cin}), wt({cout, cin, 3, 3}), b({cout}), y1({h, w, cout}), y2({h, w, cout});
        for (auto& v : x.data) v = rng.normal();
        for (auto& v : wt.data) v = rng.normal();
        double ts = time_ms(
            [&] { k::serial::conv3x3_forward(x.ptr(), wt.ptr(), b.ptr(), y1.ptr(), h, w, cin, cout, 1); },
            reps);
        double tp = time_ms(
            [&] { k::conv3x3_forward(x.ptr(), wt.ptr(), b.ptr(), y2.ptr(), h, w, cin, cout, 1); },
            reps);
        report("conv3x3 128x128x16->32", ts, tp, y1.data == y2.data);
    }
    {
        const std::int64_t n = 1 << 22;
        Tensor x({n}), y1({n}), y2({n});
        for (auto& v : x.data) v = rng.normal();
        double ts = time_ms([&] { k::serial::gelu_forward(x.ptr(), y1.ptr(), n); }, reps);
        double tp = time_ms([&] { k::gelu_forward(x.ptr(), y2.ptr(), n); }, reps);
        report("gelu 4M", ts, tp, y1.data == y2.data);
    }
    return 0;
}
