#include <doctest.h>

#include <cmath>

#include "ilq/errors.hpp"
#include "ilq/quant.hpp"
#include "ilq/rng.hpp"

using namespace ilq;

namespace {

// brute-force re-implementation of the quantizer used as the grid oracle
double round_half_even_d(double x) {
    const double f = std::floor(x);
    const double d = x - f;
    if (d < 0.5) return f;
    if (d > 0.5) return f + 1.0;
    return std::fmod(f, 2.0) == 0.0 ? f : f + 1.0;
}

struct BruteResult {
    int q;
    float dq;
};

BruteResult brute_rtn(float w, float s, int bits, bool is_signed) {
    const double qn = is_signed ? -std::pow(2.0, bits - 1) : 0.0;
    const double qp = is_signed ? std::pow(2.0, bits - 1) - 1.0 : std::pow(2.0, bits) - 1.0;
    // mirror the float32 division of the contract, then clip/round in double
    const float u = w / s;
    const double clipped = std::min(std::max(static_cast<double>(u), qn), qp);
    const double n = round_half_even_d(clipped);
    return {static_cast<int>(n), static_cast<float>(n) * s};
}

QuantSpec spec_of(int bits, bool is_signed) {
    QuantSpec sp;
    sp.bits = bits;
    sp.is_signed = is_signed;
    return sp;
}

}  // namespace

TEST_CASE("rtn matches the worked examples") {
    QuantSpec s4 = spec_of(4, true);
    auto r = rtn_quantize({0.0f}, 0.1f, s4);
    CHECK(r.q[0] == 0);
    CHECK(r.dq[0] == 0.0f);

    r = rtn_quantize({0.37f}, 0.1f, s4);
    CHECK(r.q[0] == 4);  // clip(3.7, -8, 7) -> 4
    CHECK(r.dq[0] == doctest::Approx(0.4f));

    r = rtn_quantize({2.0f}, 0.1f, s4);
    CHECK(r.q[0] == 7);  // clipped high
    CHECK(r.dq[0] == doctest::Approx(0.7f));

    QuantSpec u4 = spec_of(4, false);
    r = rtn_quantize({-0.3f}, 0.1f, u4);
    CHECK(r.q[0] == 0);  // clipped low, unsigned
    CHECK(r.dq[0] == 0.0f);
}

TEST_CASE("rtn rejects non-positive step sizes") {
    CHECK_THROWS_AS(rtn_quantize({1.0f}, 0.0f, spec_of(4, true)), DomainError);
    CHECK_THROWS_AS(rtn_quantize({1.0f}, -0.5f, spec_of(8, true)), DomainError);
}

TEST_CASE("rtn equals the brute-force oracle on a dense grid") {
    // 6001 w values x bits {2,4,8} x signed/unsigned, exact equality
    for (int bits : {2, 4, 8}) {
        for (bool is_signed : {true, false}) {
            const QuantSpec sp = spec_of(bits, is_signed);
            std::vector<float> ws;
            ws.reserve(6001);
            for (int i = 0; i <= 6000; ++i) ws.push_back(-3.0f + 0.001f * i);
            const float s = 0.037f;
            const RtnResult got = rtn_quantize(ws, s, sp);
            for (size_t i = 0; i < ws.size(); ++i) {
                const BruteResult want = brute_rtn(ws[i], s, bits, is_signed);
                REQUIRE(got.q[i] == want.q);
                REQUIRE(got.dq[i] == want.dq);
            }
        }
    }
}

TEST_CASE("rounding ties go to even") {
    CHECK(round_half_even(0.5f) == 0.0f);
    CHECK(round_half_even(1.5f) == 2.0f);
    CHECK(round_half_even(2.5f) == 2.0f);
    CHECK(round_half_even(-0.5f) == 0.0f);
    CHECK(round_half_even(-1.5f) == -2.0f);
    CHECK(round_half_even(-2.5f) == -2.0f);
}

TEST_CASE("quantization error bound |dq - clip(w)| <= s/2 over the grid") {
    for (int bits : {2, 4, 8}) {
        const QuantSpec sp = spec_of(bits, true);
        const float s = 0.05f;
        for (int i = 0; i <= 6000; ++i) {
            const float w = -3.0f + 0.001f * i;
            const RtnResult r = rtn_quantize({w}, s, sp);
            const float lo = sp.qmin() * s, hi = sp.qmax() * s;
            const float clipped = std::min(std::max(w, lo), hi);
            CHECK(std::fabs(r.dq[0] - clipped) <= s / 2 + 1e-6f);
        }
    }
}

TEST_CASE("idempotence: re-quantizing dq is exact") {
    Rng rng(3);
    const QuantSpec sp = spec_of(4, true);
    for (int i = 0; i < 500; ++i) {
        const float w = static_cast<float>(rng.uniform(-2, 2));
        const float s = static_cast<float>(rng.uniform(0.01, 0.5));
        const RtnResult once = rtn_quantize({w}, s, sp);
        const RtnResult twice = rtn_quantize({once.dq[0]}, s, sp);
        CHECK(twice.dq[0] == once.dq[0]);
    }
}

TEST_CASE("monotonicity in w for fixed s") {
    const QuantSpec sp = spec_of(4, true);
    float prev = -1e9f;
    for (int i = 0; i <= 6000; ++i) {
        const float w = -3.0f + 0.001f * i;
        const float dq = rtn_quantize({w}, 0.07f, sp).dq[0];
        CHECK(dq >= prev);
        prev = dq;
    }
}

TEST_CASE("ste mask equals the closed-interval indicator") {
    const QuantSpec sp = spec_of(4, true);
    const float s = 0.1f;
    CHECK(ste_weight_grad({0.3f}, s, sp, {1.0f})[0] == 1.0f);  // inside
    CHECK(ste_weight_grad({2.0f}, s, sp, {1.0f})[0] == 0.0f);  // outside
    // w/s == 7 exactly (both powers of two): closed interval includes it
    CHECK(ste_weight_grad({1.75f}, 0.25f, sp, {1.0f})[0] == 1.0f);
    CHECK(ste_weight_grad({-2.0f}, 0.25f, sp, {1.0f})[0] == 1.0f);  // exactly at qmin
    for (int i = 0; i <= 6000; ++i) {
        const float w = -3.0f + 0.001f * i;
        const float u = w / s;
        const float want = (u >= sp.qmin() && u <= sp.qmax()) ? 0.5f : 0.0f;
        CHECK(ste_weight_grad({w}, s, sp, {0.5f})[0] == want);
    }
}

TEST_CASE("lsq step gradient on the worked examples") {
    const QuantSpec sp = spec_of(4, true);
    CHECK(lsq_step_grad({0.0f, 0.0f}, 0.1f, sp, {1.0f, 1.0f}) == 0.0f);

    // d(dq)/ds = round(3.7) - 3.7 = 0.3, scaled by g = 1/sqrt(N*qmax)
    const float gscale = 1.0f / std::sqrt(1.0f * sp.qmax());
    CHECK(lsq_step_grad({0.37f}, 0.1f, sp, {1.0f}) ==
          doctest::Approx(0.3f * gscale).epsilon(1e-4));

    // clipped high: d(dq)/ds = qmax = 7
    CHECK(lsq_step_grad({2.0f}, 0.1f, sp, {1.0f}) ==
          doctest::Approx(7.0f * gscale).epsilon(1e-5));
}

TEST_CASE("lsq/ste gradients match finite differences of the straight-through surrogate") {
    // The implemented backward is the derivative of
    //   f(w, s) = (clip(w/s) + c) * s,  c = round(clip(w0/s0)) - clip(w0/s0)
    // with the rounding residual c frozen at the base point. Central
    // differences of f check both the weight mask and the step formula.
    Rng rng(17);
    const double h = 1e-5;
    int tested = 0;
    for (int trial = 0; tested < 1000; ++trial) {
        const int bits = (trial % 3 == 0) ? 2 : (trial % 3 == 1) ? 4 : 8;
        const QuantSpec sp = spec_of(bits, trial % 2 == 0);
        const double s = rng.uniform(0.02, 0.4);
        const double w = rng.uniform(-2, 2);
        const double u = w / s;
        const double qn = sp.qmin(), qp = sp.qmax();
        const double clipped = std::min(std::max(u, qn), qp);
        const double frac = clipped - std::floor(clipped);
        if (std::fabs(frac - 0.5) < 1e-3) continue;  // rounding boundary
        if (std::fabs(u - qn) < 1e-3 || std::fabs(u - qp) < 1e-3) continue;

        const double c = round_half_even_d(clipped) - clipped;
        auto surrogate = [&](double w_, double s_) {
            const double cl = std::min(std::max(w_ / s_, qn), qp);
            return (cl + c) * s_;
        };
        const double fd_s = (surrogate(w, s + h) - surrogate(w, s - h)) / (2 * h);
        const double fd_w = (surrogate(w + h, s) - surrogate(w - h, s)) / (2 * h);

        const double gscale = 1.0 / std::sqrt(1.0 * sp.qmax());
        const double got_s =
            lsq_step_grad({static_cast<float>(w)}, static_cast<float>(s), sp, {1.0f});
        const double got_w =
            ste_weight_grad({static_cast<float>(w)}, static_cast<float>(s), sp, {1.0f})[0];
        CHECK(std::fabs(got_s - gscale * fd_s) <=
              1e-4 * std::max({1.0, std::fabs(got_s), std::fabs(gscale * fd_s)}));
        CHECK(std::fabs(got_w - fd_w) <= 1e-4 * std::max(1.0, std::fabs(fd_w)));
        tested += 1;
    }
    CHECK(tested == 1000);
}

TEST_CASE("init_step_size formula, floor, homogeneity") {
    const QuantSpec sp = spec_of(4, true);
    CHECK(init_step_size({0.0f, 0.0f, 0.0f}, sp) == 1e-3f);

    std::vector<float> pm1;
    for (int i = 0; i < 64; ++i) pm1.push_back(i % 2 ? 1.0f : -1.0f);
    CHECK(init_step_size(pm1, sp) == doctest::Approx(2.0 / std::sqrt(7.0)).epsilon(1e-6));

    std::vector<float> w{0.3f, -0.8f, 0.05f}, w10;
    for (float v : w) w10.push_back(10 * v);
    CHECK(init_step_size(w10, sp) ==
          doctest::Approx(10.0 * init_step_size(w, sp)).epsilon(1e-5));
}

TEST_CASE("fake_quant_forward: rounding bound and purity") {
    QuantSpec sp = spec_of(8, false);
    sp.method = QuantMethod::LSQ;
    FakeQuantizer q = FakeQuantizer::make(sp, {0.004f});
    std::vector<float> xs = {0.1f, 0.5f, 0.9f, 0.3f};
    Tensor x = Tensor::from_data({1, 4}, xs);
    Tensor y1 = fake_quant_forward(x, q);
    Tensor y2 = fake_quant_forward(x, q);
    CHECK(y1.data() == y2.data());
    for (size_t i = 0; i < xs.size(); ++i) {
        CHECK(std::fabs(y1.data()[i] - xs[i]) <= 0.004f / 2 + 1e-7f);
    }
}

TEST_CASE("fake_quant_forward gradcheck via the frozen-residual surrogate") {
    Rng rng(23);
    QuantSpec sp = spec_of(4, true);
    sp.method = QuantMethod::LSQ;
    int tested = 0;
    while (tested < 200) {
        const float s = static_cast<float>(rng.uniform(0.05, 0.3));
        std::vector<float> xs(6);
        bool usable = true;
        for (auto& v : xs) {
            v = static_cast<float>(rng.uniform(-1.5, 1.5));
            const double u = v / s;
            const double cl = std::min(std::max(u, -8.0), 7.0);
            const double frac = cl - std::floor(cl);
            if (std::fabs(frac - 0.5) < 2e-3 || std::fabs(u + 8) < 2e-3 ||
                std::fabs(u - 7) < 2e-3)
                usable = false;
        }
        if (!usable) continue;

        FakeQuantizer q = FakeQuantizer::make(sp, {s});
        q.step.set_requires_grad(true);
        Tensor x = Tensor::from_data({2, 3}, xs, true);
        Tensor loss = mean(square(fake_quant_forward(x, q)));
        x.zero_grad();
        q.step.zero_grad();
        backward(loss);

        std::vector<double> resid(xs.size());
        for (size_t i = 0; i < xs.size(); ++i) {
            const double cl = std::min(std::max(static_cast<double>(xs[i]) / s, -8.0), 7.0);
            resid[i] = round_half_even_d(cl) - cl;
        }
        auto surrogate = [&](const std::vector<double>& x_, double s_) {
            double acc = 0;
            for (size_t i = 0; i < x_.size(); ++i) {
                const double cl = std::min(std::max(x_[i] / s_, -8.0), 7.0);
                const double dq = (cl + resid[i]) * s_;
                acc += dq * dq;
            }
            return acc / static_cast<double>(x_.size());
        };
        std::vector<double> xd(xs.begin(), xs.end());
        const double h = 1e-5;
        for (size_t i = 0; i < xd.size(); ++i) {
            std::vector<double> up = xd, dn = xd;
            up[i] += h;
            dn[i] -= h;
            const double fd = (surrogate(up, s) - surrogate(dn, s)) / (2 * h);
            CHECK(std::fabs(x.grad()[i] - fd) <=
                  1e-3 * std::max({1.0, std::fabs(fd), std::fabs((double)x.grad()[i])}));
        }
        const double fd_s = (surrogate(xd, s + h) - surrogate(xd, s - h)) / (2 * h);
        const double gscale = 1.0 / std::sqrt(static_cast<double>(xs.size()) * sp.qmax());
        CHECK(std::fabs(q.step.grad()[0] - gscale * fd_s) <=
              1e-3 * std::max(1.0, std::fabs(gscale * fd_s)));
        tested += 1;
    }
}

TEST_CASE("per-channel quantization applies one step per output column") {
    QuantSpec sp = spec_of(4, true);
    sp.granularity = Granularity::PerChannel;
    FakeQuantizer q = FakeQuantizer::make(sp, {0.1f, 0.2f});
    Tensor w = Tensor::from_data({2, 2}, {0.37f, 0.37f, -0.12f, -0.12f});
    Tensor out = fake_quant_forward(w, q);
    CHECK(out.data()[0] == doctest::Approx(0.4f));   // col 0: round(3.7)=4, s=0.1
    CHECK(out.data()[1] == doctest::Approx(0.4f));   // col 1: round(1.85)=2, s=0.2
    CHECK(out.data()[2] == doctest::Approx(-0.1f));  // round(-1.2) = -1
    CHECK(out.data()[3] == doctest::Approx(-0.2f));  // round(-0.6) = -1
}

TEST_CASE("per-channel mode is rejected for activations") {
    QuantSpec sp = spec_of(4, false);
    sp.granularity = Granularity::PerChannel;
    FakeQuantizer q = FakeQuantizer::make(sp, {0.1f, 0.2f});
    Tensor x = Tensor::from_data({2, 2}, {0.1f, 0.2f, 0.3f, 0.4f});
    CHECK_THROWS_AS(fake_quant_forward(x, q), ConfigError);
}

TEST_CASE("step clamp keeps s positive") {
    QuantSpec sp = spec_of(4, true);
    FakeQuantizer q = FakeQuantizer::make(sp, {0.1f});
    q.step.data()[0] = -1.0f;
    q.clamp_step();
    CHECK(q.step.data()[0] == kStepFloor);
}
