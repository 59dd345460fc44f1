#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "ilq/errors.hpp"
#include "ilq/policy.hpp"

using namespace ilq;
namespace fs = std::filesystem;

namespace {

const double kLog2Pi = std::log(2.0 * std::numbers::pi);

fs::path tmp_file(const std::string& name) {
    return fs::temp_directory_path() / ("ilq_test_" + name);
}

std::vector<char> slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("zero weights give a zero mean vector") {
    GaussianPolicy p = init_policy({3, 4, 2}, 1);
    for (auto& w : p.weights)
        for (auto& v : w.data()) v = 0;
    auto [mu, sigma] = policy_mu_sigma(p, {0.5f, -0.3f, 1.0f});
    CHECK(mu == std::vector<float>{0, 0});
    CHECK(sigma[0] > 0);
}

TEST_CASE("fixed seed init is reproducible") {
    GaussianPolicy a = init_policy({4, 8, 2}, 99);
    GaussianPolicy b = init_policy({4, 8, 2}, 99);
    for (int l = 0; l < a.n_layers(); ++l) {
        CHECK(a.weights[l].data() == b.weights[l].data());
        CHECK(a.biases[l].data() == b.biases[l].data());
    }
}

TEST_CASE("forward rejects wrong observation width") {
    GaussianPolicy p = init_policy({3, 4, 2}, 1);
    CHECK_THROWS_AS(forward(p, Tensor::zeros({1, 5})), ShapeError);
}

TEST_CASE("log_prob closed-form values") {
    GaussianPolicy p = init_policy({2, 4, 1}, 5);
    for (auto& v : p.log_std.data()) v = 0.0f;  // sigma = 1

    // a = mu: -1/2 log(2*pi)
    auto [mu, sigma] = policy_mu_sigma(p, {0.1f, 0.2f});
    const float lp_mean = policy_log_prob_value(p, {0.1f, 0.2f}, {mu[0]});
    CHECK(lp_mean == doctest::Approx(-0.5 * kLog2Pi).epsilon(1e-5));

    // a = mu + sigma: -1/2 - 1/2 log(2*pi)
    const float lp_1s = policy_log_prob_value(p, {0.1f, 0.2f}, {mu[0] + 1.0f});
    CHECK(lp_1s == doctest::Approx(-0.5 - 0.5 * kLog2Pi).epsilon(1e-5));

    // d-dimensional at the mean: -d/2 log(2*pi)
    GaussianPolicy p3 = init_policy({2, 4, 3}, 6);
    for (auto& v : p3.log_std.data()) v = 0.0f;
    auto mu3 = policy_mu_sigma(p3, {0.1f, 0.2f}).first;
    const float lp3 = policy_log_prob_value(p3, {0.1f, 0.2f}, mu3);
    CHECK(lp3 == doctest::Approx(-1.5 * kLog2Pi).epsilon(1e-5));
}

TEST_CASE("log_prob is maximized at a = mu") {
    GaussianPolicy p = init_policy({2, 8, 1}, 7);
    auto mu = policy_mu_sigma(p, {0.4f, -0.4f}).first;
    const float at_mu = policy_log_prob_value(p, {0.4f, -0.4f}, mu);
    for (float d : {-0.5f, -0.1f, 0.1f, 0.5f}) {
        CHECK(policy_log_prob_value(p, {0.4f, -0.4f}, {mu[0] + d}) < at_mu);
    }
}

TEST_CASE("log_prob gradient matches finite differences") {
    GaussianPolicy p = init_policy({2, 4, 2}, 11);
    Tensor obs = Tensor::from_data({2, 2}, {0.3f, -0.2f, 0.8f, 0.1f});
    Tensor act = Tensor::from_data({2, 2}, {0.2f, 0.0f, -0.1f, 0.5f});
    Tensor loss = mean(log_prob(p, obs, act));
    auto params = trainable_params(p);
    for (auto& prm : params) prm.zero_grad();
    backward(loss);

    auto eval = [&] { return mean(log_prob(p, obs, act)).item(); };
    const float h = 1e-3f;
    for (auto& prm : params) {
        for (size_t i = 0; i < prm.data().size(); ++i) {
            const float orig = prm.data()[i];
            prm.data()[i] = orig + h;
            const double up = eval();
            prm.data()[i] = orig - h;
            const double dn = eval();
            prm.data()[i] = orig;
            const double fd = (up - dn) / (2 * h);
            const double got = prm.grad()[i];
            CHECK(std::fabs(got - fd) <= 2e-3 * std::max({1.0, std::fabs(got), std::fabs(fd)}));
        }
    }
}

TEST_CASE("sampling: deterministic mode returns mu, seeded mode reproducible") {
    GaussianPolicy p = init_policy({2, 4, 2}, 13);
    auto mu = policy_mu_sigma(p, {0.3f, 0.3f}).first;
    CHECK(policy_act(p, {0.3f, 0.3f}, nullptr) == mu);

    Rng r1(77), r2(77);
    CHECK(policy_act(p, {0.3f, 0.3f}, &r1) == policy_act(p, {0.3f, 0.3f}, &r2));
}

TEST_CASE("sampling: empirical mean within 3 sigma / sqrt(n) of mu") {
    GaussianPolicy p = init_policy({2, 4, 1}, 17);
    for (auto& v : p.log_std.data()) v = std::log(0.5f);
    auto mu = policy_mu_sigma(p, {0.2f, -0.2f}).first;
    Rng rng(123);
    const int n = 100000;
    double acc = 0;
    for (int i = 0; i < n; ++i) acc += policy_act(p, {0.2f, -0.2f}, &rng)[0];
    const double mean = acc / n;
    CHECK(std::fabs(mean - mu[0]) < 3.0 * 0.5 / std::sqrt(static_cast<double>(n)));
}

TEST_CASE("quantizer-off equivalence is bit exact") {
    GaussianPolicy p = init_policy({4, 8, 8, 2}, 19);
    GaussianPolicy q = clone_policy(p);
    attach_quantizers(q, PolicyQuantConfig{8, QuantMethod::LSQ, Granularity::PerTensor},
                      {0.01f, 0.01f});
    Tensor obs = Tensor::from_data({3, 4}, std::vector<float>(12, 0.25f));
    NoGradGuard ng;
    CHECK(forward(q, obs, /*use_quant=*/false).data() == forward(p, obs).data());
}

TEST_CASE("8-bit quantized forward stays close to FP forward") {
    GaussianPolicy p = init_policy({4, 16, 16, 2}, 20);
    GaussianPolicy q = clone_policy(p);
    // well-scaled steps: weights via init_step_size, activations ~1/127
    QuantSpec ws{8, true, Granularity::PerTensor, QuantMethod::RTN};
    std::vector<float> act_steps = {1.0f / 127, 1.0f / 127};
    attach_quantizers(q, PolicyQuantConfig{8, QuantMethod::RTN, Granularity::PerTensor},
                      act_steps);
    NoGradGuard ng;
    Tensor obs = Tensor::from_data({1, 4}, {0.3f, -0.1f, 0.5f, 0.2f});
    auto mu_fp = forward(p, obs).data();
    auto mu_q = forward(q, obs).data();
    for (size_t i = 0; i < mu_fp.size(); ++i) {
        CHECK(std::fabs(mu_fp[i] - mu_q[i]) < 0.1f);
    }
}

TEST_CASE("checkpoint round-trip is byte identical") {
    GaussianPolicy p = init_policy({4, 8, 2}, 23);
    p.env_name = "cartpole";
    p.provenance = "bc_fp";
    const auto path1 = tmp_file("rt1.ilq");
    const auto path2 = tmp_file("rt2.ilq");
    save_policy(p, path1.string());
    GaussianPolicy loaded = load_policy(path1.string());
    save_policy(loaded, path2.string());
    CHECK(slurp(path1) == slurp(path2));
    CHECK(loaded.layer_dims == p.layer_dims);
    CHECK(loaded.env_name == p.env_name);
    for (int l = 0; l < p.n_layers(); ++l) {
        CHECK(loaded.weights[l].data() == p.weights[l].data());
        CHECK(loaded.biases[l].data() == p.biases[l].data());
    }
    CHECK(loaded.log_std.data() == p.log_std.data());
    fs::remove(path1);
    fs::remove(path2);
}

TEST_CASE("quantized checkpoint restores specs and steps field by field") {
    GaussianPolicy p = init_policy({4, 8, 8, 2}, 29);
    attach_quantizers(p, PolicyQuantConfig{4, QuantMethod::LSQ, Granularity::PerTensor},
                      {0.02f, 0.03f});
    const auto path = tmp_file("quant.ilq");
    save_policy(p, path.string());
    GaussianPolicy loaded = load_policy(path.string());
    REQUIRE(loaded.quantized());
    CHECK(loaded.quant->bits == 4);
    CHECK(loaded.quant->method == QuantMethod::LSQ);
    REQUIRE(loaded.weight_quant.size() == p.weight_quant.size());
    for (size_t l = 0; l < p.weight_quant.size(); ++l) {
        CHECK(loaded.weight_quant[l].step.data() == p.weight_quant[l].step.data());
        CHECK(loaded.act_quant[l].step.data() == p.act_quant[l].step.data());
        CHECK(loaded.weight_quant[l].spec.bits == 4);
        CHECK(loaded.act_quant[l].spec.is_signed == false);
    }
    fs::remove(path);
}

TEST_CASE("checkpoint error classes: magic, version, truncation") {
    GaussianPolicy p = init_policy({3, 4, 1}, 31);
    const auto path = tmp_file("err.ilq");
    save_policy(p, path.string());

    auto bytes = slurp(path);
    {
        auto bad = bytes;
        bad[0] = 'X';
        std::ofstream f(path, std::ios::binary | std::ios::trunc);
        f.write(bad.data(), static_cast<std::streamsize>(bad.size()));
        f.close();
        CHECK_THROWS_AS(load_policy(path.string()), BadMagicError);
    }
    {
        auto bad = bytes;
        bad[4] = 99;  // version field
        std::ofstream f(path, std::ios::binary | std::ios::trunc);
        f.write(bad.data(), static_cast<std::streamsize>(bad.size()));
        f.close();
        CHECK_THROWS_AS(load_policy(path.string()), VersionError);
    }
    {
        std::ofstream f(path, std::ios::binary | std::ios::trunc);
        f.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
        f.close();
        CHECK_THROWS_AS(load_policy(path.string()), TruncatedError);
    }
    fs::remove(path);
}

TEST_CASE("packed section round-trips through save/load") {
    GaussianPolicy p = init_policy({4, 6, 2}, 37);
    attach_quantizers(p, PolicyQuantConfig{4, QuantMethod::RTN, Granularity::PerTensor}, {0.02f});
    const std::vector<uint8_t> section = {'P', 'K', 'W', 'S', 1, 0, 0, 0, 0, 0, 0, 0};
    const auto path = tmp_file("packed.ilq");
    save_policy(p, path.string(), &section);
    std::vector<uint8_t> got;
    GaussianPolicy loaded = load_policy(path.string(), &got);
    CHECK(got == section);
    fs::remove(path);
}

TEST_CASE("hidden_activations exposes post-tanh values") {
    GaussianPolicy p = init_policy({2, 3, 1}, 41);
    auto acts = hidden_activations(p, {0.5f, -0.5f});
    REQUIRE(acts.size() == 1);
    CHECK(acts[0].size() == 3);
    for (float v : acts[0]) {
        CHECK(v >= -1.0f);
        CHECK(v <= 1.0f);
    }
}
