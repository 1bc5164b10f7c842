// Times the OpenMP pair kernel against the serial reference across sequence
// lengths, plus the recurrent formulation for scale. Outputs are checked for
// bitwise equality while timing.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <vector>

#include "cspw/attention.hpp"
#include "cspw/recurrent.hpp"

using namespace cspw;

namespace {

double time_ms(const std::function<void()>& fn, int reps) {
    auto start = std::chrono::steady_clock::now();
    for (int r = 0; r < reps; ++r) fn();
    auto end = std::chrono::steady_clock::now();
    return std::chrono::duration<double, std::milli>(end - start).count() / reps;
}

}  // namespace

int main() {
    const int64_t d_model = 32, d = 16, power = 2;
    RotationRates rates = make_rates(d, 4096);
    MultisetBasis basis = build_basis(d, power);

    std::printf("%8s %14s %14s %9s %14s\n", "t", "serial_ms", "openmp_ms", "speedup",
                "recurrent_ms");
    for (int64_t t : {256, 512, 1024}) {
        RngStream rng(7, static_cast<uint64_t>(t));
        Matrix x = gauss(rng, t, d_model);
        HeadParams params;
        auto draw = [&](int64_t r, int64_t c) {
            Matrix m = gauss(rng, r, c);
            for (double& v : m.data) v *= 1.0 / std::sqrt(static_cast<double>(d_model));
            return m;
        };
        params.w_q = draw(d_model, d);
        params.w_k = draw(d_model, d);
        params.w_v = draw(d_model, d);
        params.w_gamma = draw(d_model, 1);
        params.w_beta = draw(d_model, 1);
        Matrix q = matmul(x, params.w_q);
        Matrix k = matmul(x, params.w_k);
        Matrix v = matmul(x, params.w_v);

        Matrix b_serial, b_parallel;
        int reps = t >= 1024 ? 3 : 10;
        double serial_ms = time_ms(
            [&] {
                b_serial = preattention_serial(Variant::ConformalSympow, q, k, x, params, rates,
                                               power);
            },
            reps);
        double parallel_ms = time_ms(
            [&] {
                b_parallel =
                    preattention(Variant::ConformalSympow, q, k, x, params, rates, power);
            },
            reps);
        if (std::memcmp(b_serial.data.data(), b_parallel.data.data(),
                        b_serial.size() * sizeof(double)) != 0) {
            std::printf("MISMATCH at t=%lld\n", static_cast<long long>(t));
            return 1;
        }

        std::vector<double> gamma = gate_values(x, params.w_gamma);
        std::vector<double> beta = beta_values(x, params.w_beta);
        double recurrent_ms = time_ms(
            [&] {
                run_recurrent(Variant::ConformalSympow, q, k, v, gamma, beta, rates, basis,
                              nullptr, 1e-12);
            },
            reps);

        std::printf("%8lld %14.3f %14.3f %8.2fx %14.3f\n", static_cast<long long>(t), serial_ms,
                    parallel_ms, serial_ms / parallel_ms, recurrent_ms);
    }
    return 0;
}
