#include "ilq/kernels.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>

#include <nlohmann/json.hpp>

#include "ilq/errors.hpp"
#include "ilq/rng.hpp"

namespace ilq {

namespace {

int bits_qmin(int bits) { return -(1 << (bits - 1)); }
int bits_qmax(int bits) { return (1 << (bits - 1)) - 1; }

void check_bits(int bits) {
    if (bits != 4 && bits != 8) {
        throw PackError("packed matrices support 4 or 8 bits, got " + std::to_string(bits));
    }
}

}  // namespace

PackedMatrix pack_matrix(const std::vector<int>& values, int rows, int cols, int bits,
                         std::vector<float> scale) {
    check_bits(bits);
    if (static_cast<int64_t>(values.size()) != static_cast<int64_t>(rows) * cols) {
        throw PackError("pack: value count does not match " + std::to_string(rows) + "x" +
                        std::to_string(cols));
    }
    if (scale.size() != 1 && static_cast<int>(scale.size()) != rows) {
        throw PackError("pack: scale must be per-tensor or per-row");
    }
    const int qn = bits_qmin(bits), qp = bits_qmax(bits);
    PackedMatrix m;
    m.rows = rows;
    m.cols = cols;
    m.bits = bits;
    m.scale = std::move(scale);
    const size_t nbytes = (values.size() * static_cast<size_t>(bits) + 7) / 8;
    m.buf.assign(nbytes, 0);
    for (size_t i = 0; i < values.size(); ++i) {
        const int v = values[i];
        if (v < qn || v > qp) {
            throw PackError("pack: value " + std::to_string(v) + " at index " + std::to_string(i) +
                            " outside [" + std::to_string(qn) + "," + std::to_string(qp) + "]");
        }
        if (bits == 8) {
            m.buf[i] = static_cast<uint8_t>(static_cast<int8_t>(v));
        } else {
            const uint8_t nib = static_cast<uint8_t>(v & 0xF);
            if (i % 2 == 0) {
                m.buf[i / 2] |= nib;  // even linear index -> low nibble
            } else {
                m.buf[i / 2] |= static_cast<uint8_t>(nib << 4);
            }
        }
    }
    return m;
}

std::vector<int> unpack_matrix(const PackedMatrix& m) {
    const size_t n = static_cast<size_t>(m.rows) * m.cols;
    std::vector<int> out(n);
    if (m.bits == 8) {
        for (size_t i = 0; i < n; ++i) out[i] = static_cast<int8_t>(m.buf[i]);
    } else {
        for (size_t i = 0; i < n; ++i) {
            const uint8_t byte = m.buf[i / 2];
            const uint8_t nib = (i % 2 == 0) ? (byte & 0xF) : (byte >> 4);
            out[i] = nib >= 8 ? static_cast<int>(nib) - 16 : static_cast<int>(nib);
        }
    }
    return out;
}

namespace {

void check_gemm_dims(const PackedMatrix& a, const PackedMatrix& b) {
    if (a.cols != b.rows) {
        throw ShapeError("gemm_int: inner dims disagree, a is " + std::to_string(a.rows) + "x" +
                         std::to_string(a.cols) + ", b is " + std::to_string(b.rows) + "x" +
                         std::to_string(b.cols));
    }
    if (a.per_row_scale() || b.per_row_scale()) {
        throw ShapeError("gemm_int: per-tensor scales required on both operands");
    }
    const int64_t qp = static_cast<int64_t>(bits_qmax(std::max(a.bits, b.bits)));
    const int64_t k_limit = (1LL << 31) / (qp * qp);
    if (a.cols > k_limit) {
        throw DomainError("gemm_int: k=" + std::to_string(a.cols) +
                          " exceeds the int32 accumulation bound " + std::to_string(k_limit));
    }
}

std::vector<int8_t> unpack_i8(const PackedMatrix& m) {
    const size_t n = static_cast<size_t>(m.rows) * m.cols;
    std::vector<int8_t> out(n);
    if (m.bits == 8) {
        std::memcpy(out.data(), m.buf.data(), n);
    } else {
        for (size_t i = 0; i < n; ++i) {
            const uint8_t byte = m.buf[i / 2];
            const uint8_t nib = (i % 2 == 0) ? (byte & 0xF) : (byte >> 4);
            out[i] = static_cast<int8_t>(nib >= 8 ? static_cast<int>(nib) - 16
                                                  : static_cast<int>(nib));
        }
    }
    return out;
}

}  // namespace

IntGemmResult gemm_int(const PackedMatrix& a, const PackedMatrix& b) {
    check_gemm_dims(a, b);
    const int m = a.rows, k = a.cols, n = b.cols;
    const std::vector<int8_t> a8 = unpack_i8(a);
    // transpose b during unpack so every dot product is contiguous
    const std::vector<int8_t> b8 = unpack_i8(b);
    std::vector<int8_t> bt(static_cast<size_t>(n) * k);
    for (int p = 0; p < k; ++p) {
        for (int j = 0; j < n; ++j) {
            bt[static_cast<size_t>(j) * k + p] = b8[static_cast<size_t>(p) * n + j];
        }
    }
    IntGemmResult r;
    r.rows = m;
    r.cols = n;
    r.scale = static_cast<double>(a.scale[0]) * b.scale[0];
    r.acc.assign(static_cast<size_t>(m) * n, 0);
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) {
        const int8_t* arow = a8.data() + static_cast<size_t>(i) * k;
        int32_t* crow = r.acc.data() + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const int8_t* brow = bt.data() + static_cast<size_t>(j) * k;
            int32_t acc = 0;
            for (int p = 0; p < k; ++p) {
                acc += static_cast<int32_t>(arow[p]) * static_cast<int32_t>(brow[p]);
            }
            crow[j] = acc;
        }
    }
    return r;
}

IntGemmResult gemm_int_serial(const PackedMatrix& a, const PackedMatrix& b) {
    check_gemm_dims(a, b);
    const int m = a.rows, k = a.cols, n = b.cols;
    const std::vector<int> av = unpack_matrix(a);
    const std::vector<int> bv = unpack_matrix(b);
    IntGemmResult r;
    r.rows = m;
    r.cols = n;
    r.scale = static_cast<double>(a.scale[0]) * b.scale[0];
    r.acc.assign(static_cast<size_t>(m) * n, 0);
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            int32_t acc = 0;
            for (int p = 0; p < k; ++p) {
                acc += av[static_cast<size_t>(i) * k + p] * bv[static_cast<size_t>(p) * n + j];
            }
            r.acc[static_cast<size_t>(i) * n + j] = acc;
        }
    }
    return r;
}

std::vector<float> dequantize(const IntGemmResult& r) {
    std::vector<float> out(r.acc.size());
    for (size_t i = 0; i < out.size(); ++i) {
        out[i] = static_cast<float>(static_cast<double>(r.acc[i]) * r.scale);
    }
    return out;
}

void gemm_fp32(const float* a, const float* b, float* c, int m, int n, int k) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) {
        float* crow = c + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) crow[j] = 0.0f;
        for (int p = 0; p < k; ++p) {
            const float av = a[static_cast<size_t>(i) * k + p];
            const float* brow = b + static_cast<size_t>(p) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// ---- deployed policy forward ---------------------------------------------------

std::vector<float> deployed_policy_forward(const GaussianPolicy& p, const std::vector<float>& obs,
                                           bool use_quant) {
    if (!use_quant) {
        return policy_mu_sigma(p, obs).first;  // FP path, bit-exact vs tensor forward
    }
    return quantized_policy_forward(p, obs);
}

std::vector<float> quantized_policy_forward(const GaussianPolicy& p,
                                            const std::vector<float>& obs) {
    if (!p.quantized()) {
        throw ConfigError("quantized_policy_forward: checkpoint carries no quant spec");
    }
    if (static_cast<int>(obs.size()) != p.input_dim()) {
        throw ShapeError("quantized_policy_forward: bad observation size");
    }
    const int hidden_layers = p.n_layers() - 1;
    std::vector<int32_t> xq;  // unsigned activation codes after the first hidden layer
    float x_step = 0;

    auto weight_codes = [&](int l, int in, int out) {
        const auto& wq = p.weight_quant[l];
        const bool per_channel = wq.spec.granularity == Granularity::PerChannel;
        const auto& w = p.weights[l].data();
        std::vector<int32_t> wbar(w.size());
        for (size_t i = 0; i < w.size(); ++i) {
            const float s = wq.step.data()[per_channel ? (i % out) : 0];
            const float u = std::min(std::max(w[i] / s, static_cast<float>(wq.spec.qmin())),
                                     static_cast<float>(wq.spec.qmax()));
            wbar[i] = static_cast<int32_t>(round_half_even(u));
        }
        (void)in;
        return wbar;
    };

    for (int l = 0; l < hidden_layers; ++l) {
        const int in = p.layer_dims[l], out = p.layer_dims[l + 1];
        const auto& wq = p.weight_quant[l];
        const bool per_channel = wq.spec.granularity == Granularity::PerChannel;
        const std::vector<int32_t> wbar = weight_codes(l, in, out);
        std::vector<float> z(out);
        if (l == 0) {
            // float observation against integer weights
            for (int j = 0; j < out; ++j) {
                double acc = 0;
                for (int i = 0; i < in; ++i) {
                    acc += static_cast<double>(obs[i]) * wbar[static_cast<size_t>(i) * out + j];
                }
                const float s_w = wq.step.data()[per_channel ? static_cast<size_t>(j) : 0];
                z[j] = static_cast<float>(acc * s_w) + p.biases[l].data()[j];
            }
        } else {
            // int32 accumulation over unsigned activation codes, one dequant at the end
            for (int j = 0; j < out; ++j) {
                int32_t acc = 0;
                for (int i = 0; i < in; ++i) {
                    acc += xq[i] * wbar[static_cast<size_t>(i) * out + j];
                }
                const float s_w = wq.step.data()[per_channel ? static_cast<size_t>(j) : 0];
                z[j] = static_cast<float>(static_cast<double>(acc) *
                                          static_cast<double>(x_step) * s_w) +
                       p.biases[l].data()[j];
            }
        }
        // tanh, then unsigned activation quantization feeding the next layer
        const auto& aq = p.act_quant[l];
        const float sa = aq.step.data()[0];
        const float aqp = static_cast<float>(aq.spec.qmax());
        xq.assign(out, 0);
        for (int j = 0; j < out; ++j) {
            const float h = std::tanh(z[j]);
            const float u = std::min(std::max(h / sa, 0.0f), aqp);
            xq[j] = static_cast<int32_t>(round_half_even(u));
        }
        x_step = sa;
    }

    // final layer stays full precision
    const int l = hidden_layers;
    const int in = p.layer_dims[l], out = p.layer_dims[l + 1];
    std::vector<float> h(in);
    if (hidden_layers == 0) {
        h = obs;
    } else {
        for (int i = 0; i < in; ++i) h[i] = static_cast<float>(xq[i]) * x_step;
    }
    const auto& w = p.weights[l].data();
    std::vector<float> z(out);
    for (int j = 0; j < out; ++j) {
        double acc = 0;
        for (int i = 0; i < in; ++i) {
            acc += static_cast<double>(h[i]) * w[static_cast<size_t>(i) * out + j];
        }
        z[j] = static_cast<float>(acc) + p.biases[l].data()[j];
    }
    return z;
}

// ---- bench ------------------------------------------------------------------------

BenchReport bench_gemm(int m, int n, int k, int bits, int reps, uint64_t seed) {
    if (reps < 30) throw ConfigError("bench: reps must be >= 30");
    check_bits(bits);
    Rng rng(stream_seed(seed, 0xbe9c4));
    const int qn = bits_qmin(bits), qp = bits_qmax(bits);
    std::vector<int> av(static_cast<size_t>(m) * k), bv(static_cast<size_t>(k) * n);
    for (int& v : av) v = rng.uniform_int(qn, qp);
    for (int& v : bv) v = rng.uniform_int(qn, qp);
    const PackedMatrix a = pack_matrix(av, m, k, bits, {0.01f});
    const PackedMatrix b = pack_matrix(bv, k, n, bits, {0.02f});

    std::vector<float> af(av.begin(), av.end()), bf(bv.begin(), bv.end());
    std::vector<float> cf(static_cast<size_t>(m) * n);

    using clock = std::chrono::steady_clock;
    auto time_ns = [](auto&& fn) {
        const auto t0 = clock::now();
        fn();
        const auto t1 = clock::now();
        return static_cast<double>(
            std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0).count());
    };

    volatile int64_t sink = 0;
    std::vector<double> packed_times, fp_times;
    for (int r = 0; r < reps + 5; ++r) {
        const double t = time_ns([&] {
            IntGemmResult res = gemm_int(a, b);
            sink = sink + res.acc[0];
        });
        if (r >= 5) packed_times.push_back(t);
    }
    for (int r = 0; r < reps + 5; ++r) {
        const double t = time_ns([&] {
            gemm_fp32(af.data(), bf.data(), cf.data(), m, n, k);
            sink = sink + static_cast<int64_t>(cf[0]);
        });
        if (r >= 5) fp_times.push_back(t);
    }
    std::sort(packed_times.begin(), packed_times.end());
    std::sort(fp_times.begin(), fp_times.end());
    auto quantile = [](const std::vector<double>& v, double q) {
        const size_t idx = static_cast<size_t>(std::llround(q * (v.size() - 1)));
        return v[idx];
    };

    BenchReport rep;
    rep.m = m;
    rep.n = n;
    rep.k = k;
    rep.bits = bits;
    rep.reps = reps;
    rep.median_ns = quantile(packed_times, 0.5);
    rep.p10_ns = quantile(packed_times, 0.1);
    rep.p90_ns = quantile(packed_times, 0.9);
    rep.fp32_median_ns = quantile(fp_times, 0.5);
    rep.speedup = rep.fp32_median_ns / rep.median_ns;
    rep.bytes_moved = a.packed_bytes() + b.packed_bytes() +
                      static_cast<uint64_t>(m) * n * sizeof(int32_t);
    rep.packed_weight_bytes = b.packed_bytes();
    rep.fp32_weight_bytes = static_cast<uint64_t>(k) * n * sizeof(float);
    return rep;
}

std::string bench_report_json(const BenchReport& r) {
    nlohmann::json j{{"m", r.m},
                     {"n", r.n},
                     {"k", r.k},
                     {"bits", r.bits},
                     {"reps", r.reps},
                     {"median_ns", r.median_ns},
                     {"p10_ns", r.p10_ns},
                     {"p90_ns", r.p90_ns},
                     {"bytes_moved", r.bytes_moved},
                     {"fp32_median_ns", r.fp32_median_ns},
                     {"speedup", r.speedup},
                     {"packed_weight_bytes", r.packed_weight_bytes},
                     {"fp32_weight_bytes", r.fp32_weight_bytes}};
    return j.dump(2);
}

// ---- packed checkpoint section -----------------------------------------------------

namespace {

template <typename T>
void append_pod(std::vector<uint8_t>& out, T v) {
    const uint8_t* p = reinterpret_cast<const uint8_t*>(&v);
    out.insert(out.end(), p, p + sizeof(T));
}

template <typename T>
T read_pod(const std::vector<uint8_t>& in, size_t& off) {
    if (off + sizeof(T) > in.size()) throw TruncatedError("packed section truncated");
    T v;
    std::memcpy(&v, in.data() + off, sizeof(T));
    off += sizeof(T);
    return v;
}

}  // namespace

std::vector<uint8_t> build_packed_section(const GaussianPolicy& p) {
    if (!p.quantized()) {
        throw ConfigError("build_packed_section: policy carries no quant spec");
    }
    std::vector<uint8_t> out;
    out.insert(out.end(), {'P', 'K', 'W', 'S'});
    append_pod<uint32_t>(out, 1);  // section version
    append_pod<uint32_t>(out, static_cast<uint32_t>(p.weight_quant.size()));
    for (size_t l = 0; l < p.weight_quant.size(); ++l) {
        const auto& wq = p.weight_quant[l];
        const int in = p.layer_dims[l], cols = p.layer_dims[l + 1];
        const bool per_channel = wq.spec.granularity == Granularity::PerChannel;
        // store W transposed so per-channel scales are per-row
        std::vector<int> codes(static_cast<size_t>(cols) * in);
        std::vector<float> scales;
        const auto& w = p.weights[l].data();
        for (int j = 0; j < cols; ++j) {
            const float s = wq.step.data()[per_channel ? static_cast<size_t>(j) : 0];
            for (int i = 0; i < in; ++i) {
                const float u = std::min(
                    std::max(w[static_cast<size_t>(i) * cols + j] / s,
                             static_cast<float>(wq.spec.qmin())),
                    static_cast<float>(wq.spec.qmax()));
                codes[static_cast<size_t>(j) * in + i] =
                    static_cast<int>(round_half_even(u));
            }
        }
        if (per_channel) {
            scales = wq.step.data();
        } else {
            scales = {wq.step.data()[0]};
        }
        PackedMatrix pm = pack_matrix(codes, cols, in, wq.spec.bits, scales);
        append_pod<uint32_t>(out, static_cast<uint32_t>(pm.rows));
        append_pod<uint32_t>(out, static_cast<uint32_t>(pm.cols));
        append_pod<uint32_t>(out, static_cast<uint32_t>(pm.bits));
        append_pod<uint32_t>(out, static_cast<uint32_t>(pm.scale.size()));
        for (float s : pm.scale) append_pod<float>(out, s);
        append_pod<uint64_t>(out, pm.buf.size());
        out.insert(out.end(), pm.buf.begin(), pm.buf.end());
    }
    return out;
}

std::vector<PackedMatrix> parse_packed_section(const std::vector<uint8_t>& bytes) {
    size_t off = 0;
    if (bytes.size() < 4 || std::memcmp(bytes.data(), "PKWS", 4) != 0) {
        throw BadMagicError("packed section: bad magic");
    }
    off = 4;
    const uint32_t version = read_pod<uint32_t>(bytes, off);
    if (version != 1) {
        throw VersionError("packed section version " + std::to_string(version) + " unsupported");
    }
    const uint32_t count = read_pod<uint32_t>(bytes, off);
    std::vector<PackedMatrix> out(count);
    for (uint32_t i = 0; i < count; ++i) {
        PackedMatrix& m = out[i];
        m.rows = static_cast<int>(read_pod<uint32_t>(bytes, off));
        m.cols = static_cast<int>(read_pod<uint32_t>(bytes, off));
        m.bits = static_cast<int>(read_pod<uint32_t>(bytes, off));
        const uint32_t ns = read_pod<uint32_t>(bytes, off);
        m.scale.resize(ns);
        for (uint32_t s = 0; s < ns; ++s) m.scale[s] = read_pod<float>(bytes, off);
        const uint64_t nb = read_pod<uint64_t>(bytes, off);
        if (off + nb > bytes.size()) throw TruncatedError("packed section truncated");
        m.buf.assign(bytes.begin() + off, bytes.begin() + off + nb);
        off += nb;
    }
    return out;
}

}  // namespace ilq
