#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ilq/policy.hpp"

namespace ilq {

// Bit-packed signed integer matrix. 4-bit values pack two per byte in linear
// element order (row-major), low nibble first, two's complement. Scales are
// per-tensor (size 1) or per-row.
struct PackedMatrix {
    int rows = 0, cols = 0, bits = 8;
    std::vector<uint8_t> buf;   // ceil(rows*cols*bits/8) bytes
    std::vector<float> scale;   // size 1 or rows

    size_t packed_bytes() const { return buf.size(); }
    bool per_row_scale() const { return scale.size() > 1; }
};

PackedMatrix pack_matrix(const std::vector<int>& values, int rows, int cols, int bits,
                         std::vector<float> scale);
std::vector<int> unpack_matrix(const PackedMatrix& m);

struct IntGemmResult {
    int rows = 0, cols = 0;
    std::vector<int32_t> acc;  // exact int32 accumulators
    double scale = 1.0;        // s_a * s_b for per-tensor operands
};

// OpenMP kernel: unpacks b transposed once, then runs contiguous int dot
// products; the reduction over k stays sequential per output element so any
// thread count gives bit-identical results. Requires per-tensor scales.
IntGemmResult gemm_int(const PackedMatrix& a, const PackedMatrix& b);
// serial unpack-then-multiply reference kept for testing
IntGemmResult gemm_int_serial(const PackedMatrix& a, const PackedMatrix& b);

std::vector<float> dequantize(const IntGemmResult& r);

// naive FP32 baseline on identical shapes (row-parallel, k-sequential)
void gemm_fp32(const float* a, const float* b, float* c, int m, int n, int k);

// Deployed integer-path inference for a quantized checkpoint: packed weights,
// unsigned activation codes, int32 accumulation, float dequant per layer.
// Matches the fake-quantized training forward within 1e-5 per element.
std::vector<float> quantized_policy_forward(const GaussianPolicy& p,
                                            const std::vector<float>& obs);
// use_quant=false falls back to the FP matmul path (bit-exact vs the tensor
// module forward)
std::vector<float> deployed_policy_forward(const GaussianPolicy& p, const std::vector<float>& obs,
                                           bool use_quant);

struct BenchReport {
    int m = 0, n = 0, k = 0, bits = 8, reps = 0;
    double median_ns = 0, p10_ns = 0, p90_ns = 0;
    uint64_t bytes_moved = 0;
    double fp32_median_ns = 0;
    double speedup = 0;  // fp32_median / packed median
    uint64_t packed_weight_bytes = 0, fp32_weight_bytes = 0;
};

// warm timings only: 5 warmup reps excluded, reps >= 30 enforced
BenchReport bench_gemm(int m, int n, int k, int bits, int reps, uint64_t seed = 1);
std::string bench_report_json(const BenchReport& r);

// packed-weights checkpoint section ("PKWS", versioned)
std::vector<uint8_t> build_packed_section(const GaussianPolicy& p);
std::vector<PackedMatrix> parse_packed_section(const std::vector<uint8_t>& bytes);

}  // namespace ilq
