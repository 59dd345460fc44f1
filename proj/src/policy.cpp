#include "ilq/policy.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

#include <nlohmann/json.hpp>

#include "ilq/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace ilq {

namespace {

constexpr float kLogStdInit = -0.5f;
constexpr float kLogStdMin = -5.0f;
constexpr float kLogStdMax = 2.0f;
const float kHalfLog2Pi = 0.5f * std::log(2.0f * static_cast<float>(std::numbers::pi));

}  // namespace

GaussianPolicy init_policy(const std::vector<int>& layer_dims, uint64_t seed) {
    if (layer_dims.size() < 2) {
        throw ConfigError("init_policy: need at least input and action dims");
    }
    GaussianPolicy p;
    p.layer_dims = layer_dims;
    p.seed = seed;
    Rng rng(stream_seed(seed, 0xb01dface));
    for (size_t l = 0; l + 1 < layer_dims.size(); ++l) {
        const int in = layer_dims[l], out = layer_dims[l + 1];
        const double bound = std::sqrt(6.0 / (in + out));  // Xavier uniform, tanh net
        std::vector<float> w(static_cast<size_t>(in) * out);
        for (float& x : w) x = static_cast<float>(rng.uniform(-bound, bound));
        p.weights.push_back(Tensor::from_data({in, out}, std::move(w), true));
        p.biases.push_back(Tensor::zeros({out}, true));
    }
    p.log_std = Tensor::full({layer_dims.back()}, kLogStdInit, true);
    return p;
}

GaussianPolicy clone_policy(const GaussianPolicy& p) {
    GaussianPolicy c;
    c.layer_dims = p.layer_dims;
    for (const auto& w : p.weights) c.weights.push_back(w.clone());
    for (const auto& b : p.biases) c.biases.push_back(b.clone());
    c.log_std = p.log_std.clone();
    c.quant = p.quant;
    for (const auto& q : p.weight_quant)
        c.weight_quant.push_back(FakeQuantizer::make(q.spec, q.step.data()));
    for (const auto& q : p.act_quant)
        c.act_quant.push_back(FakeQuantizer::make(q.spec, q.step.data()));
    c.env_name = p.env_name;
    c.provenance = p.provenance;
    c.seed = p.seed;
    return c;
}

void set_requires_grad(GaussianPolicy& p, bool rg) {
    for (auto& w : p.weights) w.set_requires_grad(rg);
    for (auto& b : p.biases) b.set_requires_grad(rg);
    p.log_std.set_requires_grad(rg);
    for (auto& q : p.weight_quant) q.step.set_requires_grad(rg && q.trainable());
    for (auto& q : p.act_quant) q.step.set_requires_grad(rg && q.trainable());
}

std::vector<Tensor> trainable_params(GaussianPolicy& p) {
    std::vector<Tensor> params;
    for (auto& w : p.weights) params.push_back(w);
    for (auto& b : p.biases) params.push_back(b);
    params.push_back(p.log_std);
    for (auto& q : p.weight_quant)
        if (q.step.requires_grad()) params.push_back(q.step);
    for (auto& q : p.act_quant)
        if (q.step.requires_grad()) params.push_back(q.step);
    return params;
}

void post_update_clamp(GaussianPolicy& p) {
    for (float& v : p.log_std.data()) v = std::min(std::max(v, kLogStdMin), kLogStdMax);
    for (auto& q : p.weight_quant) q.clamp_step();
    for (auto& q : p.act_quant) q.clamp_step();
}

void attach_quantizers(GaussianPolicy& p, const PolicyQuantConfig& cfg,
                       const std::vector<float>& act_steps) {
    const int hidden_layers = p.n_layers() - 1;
    if (static_cast<int>(act_steps.size()) != hidden_layers) {
        throw ConfigError("attach_quantizers: need one activation step per hidden layer");
    }
    p.quant = cfg;
    p.weight_quant.clear();
    p.act_quant.clear();
    for (int l = 0; l < hidden_layers; ++l) {
        QuantSpec wspec;
        wspec.bits = cfg.bits;
        wspec.is_signed = true;
        wspec.granularity = cfg.granularity;
        wspec.method = cfg.method;
        std::vector<float> steps;
        if (cfg.granularity == Granularity::PerChannel) {
            const int in = p.layer_dims[l], out = p.layer_dims[l + 1];
            for (int c = 0; c < out; ++c) {
                std::vector<float> col(in);
                for (int r = 0; r < in; ++r)
                    col[r] = p.weights[l].data()[static_cast<size_t>(r) * out + c];
                steps.push_back(init_step_size(col, wspec));
            }
        } else {
            steps.push_back(init_step_size(p.weights[l].data(), wspec));
        }
        p.weight_quant.push_back(FakeQuantizer::make(wspec, std::move(steps)));

        QuantSpec aspec;
        aspec.bits = cfg.bits;
        aspec.is_signed = false;
        aspec.granularity = Granularity::PerTensor;
        aspec.method = cfg.method;
        p.act_quant.push_back(FakeQuantizer::make(aspec, {act_steps[l]}));
    }
}

Tensor forward(const GaussianPolicy& p, const Tensor& obs, bool use_quant) {
    if (obs.shape().size() != 2 || obs.shape()[1] != p.input_dim()) {
        throw ShapeError("policy forward: observation width must be " +
                         std::to_string(p.input_dim()));
    }
    const bool q = use_quant && p.quantized();
    Tensor x = obs;
    for (int l = 0; l + 1 < p.n_layers(); ++l) {
        const Tensor w = q ? fake_quant_forward(p.weights[l], p.weight_quant[l]) : p.weights[l];
        Tensor h = tanh(add_bias(matmul(x, w), p.biases[l]));
        x = q ? fake_quant_forward(h, p.act_quant[l]) : h;
    }
    return add_bias(matmul(x, p.weights.back()), p.biases.back());
}

Tensor log_prob(const GaussianPolicy& p, const Tensor& obs, const Tensor& actions) {
    if (actions.shape().size() != 2 || actions.shape()[1] != p.action_dim()) {
        throw ShapeError("log_prob: action width must be " + std::to_string(p.action_dim()));
    }
    const int batch = obs.shape()[0];
    Tensor mu = forward(p, obs);
    Tensor diff = sub(actions, mu);
    Tensor inv_var = exp(scale(p.log_std, -2.0f));                    // [d]
    Tensor quad = mul(square(diff), rep_rows(inv_var, batch));        // [B x d]
    Tensor per_dim_const = add_scalar(scale(p.log_std, -1.0f), -kHalfLog2Pi);
    return row_sum(add(scale(quad, -0.5f), rep_rows(per_dim_const, batch)));
}

std::pair<std::vector<float>, std::vector<float>> policy_mu_sigma(const GaussianPolicy& p,
                                                                  const std::vector<float>& obs) {
    NoGradGuard ng;
    Tensor o = Tensor::from_data({1, static_cast<int>(obs.size())}, obs);
    Tensor mu = forward(p, o);
    std::vector<float> sigma(p.action_dim());
    for (int d = 0; d < p.action_dim(); ++d) sigma[d] = std::exp(p.log_std.data()[d]);
    return {mu.data(), sigma};
}

std::vector<float> policy_act(const GaussianPolicy& p, const std::vector<float>& obs, Rng* rng) {
    auto [mu, sigma] = policy_mu_sigma(p, obs);
    if (rng == nullptr) return mu;
    for (size_t d = 0; d < mu.size(); ++d)
        mu[d] += sigma[d] * static_cast<float>(rng->normal());
    return mu;
}

float policy_log_prob_value(const GaussianPolicy& p, const std::vector<float>& obs,
                            const std::vector<float>& action) {
    NoGradGuard ng;
    Tensor o = Tensor::from_data({1, static_cast<int>(obs.size())}, obs);
    Tensor a = Tensor::from_data({1, static_cast<int>(action.size())}, action);
    return log_prob(p, o, a).data()[0];
}

std::vector<float> policy_output_vector(const GaussianPolicy& p, const std::vector<float>& obs) {
    NoGradGuard ng;
    Tensor o = Tensor::from_data({1, static_cast<int>(obs.size())}, obs);
    std::vector<float> out = forward(p, o).data();
    out.insert(out.end(), p.log_std.data().begin(), p.log_std.data().end());
    return out;
}

std::vector<std::vector<float>> hidden_activations(const GaussianPolicy& p,
                                                   const std::vector<float>& obs) {
    NoGradGuard ng;
    std::vector<std::vector<float>> acts;
    Tensor x = Tensor::from_data({1, static_cast<int>(obs.size())}, obs);
    for (int l = 0; l + 1 < p.n_layers(); ++l) {
        x = tanh(add_bias(matmul(x, p.weights[l]), p.biases[l]));
        acts.push_back(x.data());
    }
    return acts;
}

// ---- checkpoint IO ----------------------------------------------------------

namespace {

using nlohmann::json;

void write_bytes(std::ofstream& f, const void* p, size_t n) {
    f.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

void write_u32(std::ofstream& f, uint32_t v) { write_bytes(f, &v, 4); }
void write_u64(std::ofstream& f, uint64_t v) { write_bytes(f, &v, 8); }

void read_exact(std::ifstream& f, void* p, size_t n, const char* what) {
    f.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<size_t>(f.gcount()) != n) {
        throw TruncatedError(std::string("checkpoint truncated while reading ") + what);
    }
}

uint32_t read_u32(std::ifstream& f, const char* what) {
    uint32_t v;
    read_exact(f, &v, 4, what);
    return v;
}

uint64_t read_u64(std::ifstream& f, const char* what) {
    uint64_t v;
    read_exact(f, &v, 8, what);
    return v;
}

struct BlobDecl {
    std::string name;
    const std::vector<float>* data;
};

std::vector<BlobDecl> declare_blobs(const GaussianPolicy& p) {
    std::vector<BlobDecl> blobs;
    for (int l = 0; l < p.n_layers(); ++l)
        blobs.push_back({"W" + std::to_string(l), &p.weights[l].data()});
    for (int l = 0; l < p.n_layers(); ++l)
        blobs.push_back({"b" + std::to_string(l), &p.biases[l].data()});
    blobs.push_back({"log_std", &p.log_std.data()});
    if (p.quantized()) {
        for (size_t l = 0; l < p.weight_quant.size(); ++l)
            blobs.push_back({"sw" + std::to_string(l), &p.weight_quant[l].step.data()});
        for (size_t l = 0; l < p.act_quant.size(); ++l)
            blobs.push_back({"sa" + std::to_string(l), &p.act_quant[l].step.data()});
    }
    return blobs;
}

}  // namespace

void save_policy(const GaussianPolicy& p, const std::string& path,
                 const std::vector<uint8_t>* packed_section) {
    json meta;
    meta["format"] = kCheckpointVersion;
    meta["env"] = p.env_name;
    meta["seed"] = p.seed;
    meta["provenance"] = p.provenance;
    meta["layer_dims"] = p.layer_dims;
    if (p.quantized()) {
        meta["quant"] = {{"bits", p.quant->bits},
                         {"method", to_string(p.quant->method)},
                         {"granularity", to_string(p.quant->granularity)}};
    } else {
        meta["quant"] = nullptr;
    }
    const auto blobs = declare_blobs(p);
    json blob_list = json::array();
    for (const auto& b : blobs) {
        blob_list.push_back({{"name", b.name}, {"size", b.data->size()}});
    }
    meta["blobs"] = blob_list;

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw CheckpointError("cannot open '" + path + "' for writing");
    write_bytes(f, "ILQ1", 4);
    write_u32(f, kCheckpointVersion);
    const std::string meta_str = meta.dump();
    write_u64(f, meta_str.size());
    write_bytes(f, meta_str.data(), meta_str.size());
    write_u64(f, blobs.size());
    for (const auto& b : blobs) {
        write_u64(f, b.data->size());
        write_bytes(f, b.data->data(), b.data->size() * sizeof(float));
    }
    if (packed_section && !packed_section->empty()) {
        write_bytes(f, packed_section->data(), packed_section->size());
    }
    if (!f) throw CheckpointError("write failed for '" + path + "'");
}

GaussianPolicy load_policy(const std::string& path, std::vector<uint8_t>* packed_section) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw CheckpointError("cannot open '" + path + "'");
    char magic[4];
    read_exact(f, magic, 4, "magic");
    if (std::memcmp(magic, "ILQ1", 4) != 0) {
        throw BadMagicError("'" + path + "' is not an ILQ1 checkpoint");
    }
    const uint32_t version = read_u32(f, "version");
    if (version != kCheckpointVersion) {
        throw VersionError("checkpoint version " + std::to_string(version) + " unsupported (want " +
                           std::to_string(kCheckpointVersion) + ")");
    }
    const uint64_t meta_len = read_u64(f, "metadata length");
    std::string meta_str(meta_len, '\0');
    read_exact(f, meta_str.data(), meta_len, "metadata");
    json meta;
    try {
        meta = json::parse(meta_str);
    } catch (const json::exception& e) {
        throw CheckpointError(std::string("bad checkpoint metadata: ") + e.what());
    }

    GaussianPolicy p;
    p.layer_dims = meta.at("layer_dims").get<std::vector<int>>();
    p.env_name = meta.at("env").get<std::string>();
    p.seed = meta.at("seed").get<uint64_t>();
    p.provenance = meta.at("provenance").get<std::string>();

    const uint64_t blob_count = read_u64(f, "blob count");
    std::vector<std::pair<std::string, std::vector<float>>> blobs;
    const auto declared = meta.at("blobs");
    if (declared.size() != blob_count) {
        throw CheckpointError("blob count does not match metadata declaration");
    }
    for (uint64_t i = 0; i < blob_count; ++i) {
        const uint64_t count = read_u64(f, "blob size");
        if (count != declared[i].at("size").get<uint64_t>()) {
            throw CheckpointError("blob '" + declared[i].at("name").get<std::string>() +
                                  "' size does not match declaration");
        }
        std::vector<float> data(count);
        read_exact(f, data.data(), count * sizeof(float), "blob data");
        blobs.emplace_back(declared[i].at("name").get<std::string>(), std::move(data));
    }

    auto take = [&](const std::string& name) -> std::vector<float> {
        for (auto& [n, d] : blobs) {
            if (n == name) return std::move(d);
        }
        throw CheckpointError("checkpoint missing blob '" + name + "'");
    };

    const int layers = static_cast<int>(p.layer_dims.size()) - 1;
    for (int l = 0; l < layers; ++l) {
        const int in = p.layer_dims[l], out = p.layer_dims[l + 1];
        auto w = take("W" + std::to_string(l));
        if (static_cast<int64_t>(w.size()) != static_cast<int64_t>(in) * out) {
            throw CheckpointError("weight blob W" + std::to_string(l) + " has wrong size");
        }
        p.weights.push_back(Tensor::from_data({in, out}, std::move(w), true));
    }
    for (int l = 0; l < layers; ++l) {
        auto b = take("b" + std::to_string(l));
        p.biases.push_back(
            Tensor::from_data({p.layer_dims[l + 1]}, std::move(b), true));
    }
    p.log_std = Tensor::from_data({p.layer_dims.back()}, take("log_std"), true);

    if (!meta.at("quant").is_null()) {
        PolicyQuantConfig cfg;
        cfg.bits = meta["quant"].at("bits").get<int>();
        cfg.method = method_from_string(meta["quant"].at("method").get<std::string>());
        cfg.granularity = granularity_from_string(meta["quant"].at("granularity").get<std::string>());
        p.quant = cfg;
        for (int l = 0; l < layers - 1; ++l) {
            QuantSpec ws{cfg.bits, true, cfg.granularity, cfg.method};
            p.weight_quant.push_back(FakeQuantizer::make(ws, take("sw" + std::to_string(l))));
            QuantSpec as{cfg.bits, false, Granularity::PerTensor, cfg.method};
            p.act_quant.push_back(FakeQuantizer::make(as, take("sa" + std::to_string(l))));
        }
    }

    if (packed_section) {
        packed_section->clear();
        char c;
        while (f.get(c)) packed_section->push_back(static_cast<uint8_t>(c));
    }
    return p;
}

}  // namespace ilq
