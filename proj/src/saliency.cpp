#include "ilq/saliency.hpp"

#include <cmath>

#include "ilq/errors.hpp"

namespace ilq {

namespace {

// mirror with edge duplication: -1 -> 0, n -> n-1
int reflect(int idx, int n) {
    if (idx < 0) return -idx - 1;
    if (idx >= n) return 2 * n - idx - 1;
    return idx;
}

std::vector<float> gaussian_kernel_1d(float sigma) {
    const int radius = static_cast<int>(std::ceil(3.0f * sigma));
    std::vector<float> k(2 * radius + 1);
    float sum = 0;
    for (int i = -radius; i <= radius; ++i) {
        k[i + radius] = std::exp(-static_cast<float>(i * i) / (2.0f * sigma * sigma));
        sum += k[i + radius];
    }
    for (float& v : k) v /= sum;
    return k;
}

}  // namespace

std::vector<float> gaussian_blur(const std::vector<float>& grid, int rows, int cols, float sigma) {
    const auto k = gaussian_kernel_1d(sigma);
    const int radius = static_cast<int>(k.size() / 2);
    std::vector<float> tmp(grid.size()), out(grid.size());
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            float acc = 0;
            for (int d = -radius; d <= radius; ++d) {
                acc += k[d + radius] * grid[static_cast<size_t>(r) * cols + reflect(c + d, cols)];
            }
            tmp[static_cast<size_t>(r) * cols + c] = acc;
        }
    }
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            float acc = 0;
            for (int d = -radius; d <= radius; ++d) {
                acc += k[d + radius] * tmp[static_cast<size_t>(reflect(r + d, rows)) * cols + c];
            }
            out[static_cast<size_t>(r) * cols + c] = acc;
        }
    }
    return out;
}

std::vector<float> gaussian_perturb(const std::vector<float>& grid, int rows, int cols, int i,
                                    int j, float sigma_mask, float sigma_blur) {
    if (i < 0 || i >= rows || j < 0 || j >= cols) {
        throw DomainError("gaussian_perturb: location (" + std::to_string(i) + "," +
                          std::to_string(j) + ") outside " + std::to_string(rows) + "x" +
                          std::to_string(cols) + " grid");
    }
    const std::vector<float> blurred = gaussian_blur(grid, rows, cols, sigma_blur);
    std::vector<float> out(grid.size());
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            const float d2 = static_cast<float>((r - i) * (r - i) + (c - j) * (c - j));
            const float m = std::exp(-d2 / (2.0f * sigma_mask * sigma_mask));
            const size_t idx = static_cast<size_t>(r) * cols + c;
            out[idx] = grid[idx] * (1.0f - m) + blurred[idx] * m;
        }
    }
    return out;
}

namespace {

float score_from_outputs(const std::vector<float>& a, const std::vector<float>& b) {
    double acc = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(a[i]) - b[i];
        acc += d * d;
    }
    return static_cast<float>(0.5 * acc);
}

// shared inner loop: blur once per observation, then score every location
SaliencyMap map_impl(const GaussianPolicy& p, const std::vector<float>& obs, int rows, int cols,
                     int grid_offset) {
    std::vector<float> grid(obs.begin() + grid_offset, obs.begin() + grid_offset + rows * cols);
    const std::vector<float> blurred = gaussian_blur(grid, rows, cols, kSigmaBlur);
    const std::vector<float> base_out = policy_output_vector(p, obs);
    SaliencyMap m;
    m.rows = rows;
    m.cols = cols;
    m.s.assign(static_cast<size_t>(rows) * cols, 0.0f);
#pragma omp parallel for schedule(static)
    for (int loc = 0; loc < rows * cols; ++loc) {
        const int i = loc / cols, j = loc % cols;
        std::vector<float> perturbed = obs;
        for (int r = 0; r < rows; ++r) {
            for (int c = 0; c < cols; ++c) {
                const float d2 = static_cast<float>((r - i) * (r - i) + (c - j) * (c - j));
                const float mask = std::exp(-d2 / (2.0f * kSigmaMask * kSigmaMask));
                const size_t idx = static_cast<size_t>(r) * cols + c;
                perturbed[grid_offset + idx] =
                    grid[idx] * (1.0f - mask) + blurred[idx] * mask;
            }
        }
        m.s[loc] = score_from_outputs(base_out, policy_output_vector(p, perturbed));
    }
    return m;
}

}  // namespace

float saliency_score(const GaussianPolicy& p, const std::vector<float>& obs, int rows, int cols,
                     int grid_offset, int i, int j) {
    std::vector<float> grid(obs.begin() + grid_offset, obs.begin() + grid_offset + rows * cols);
    const std::vector<float> perturbed_grid = gaussian_perturb(grid, rows, cols, i, j);
    std::vector<float> perturbed = obs;
    std::copy(perturbed_grid.begin(), perturbed_grid.end(), perturbed.begin() + grid_offset);
    return score_from_outputs(policy_output_vector(p, obs), policy_output_vector(p, perturbed));
}

SaliencyMap saliency_map(const GaussianPolicy& p, const std::vector<float>& obs, int rows,
                         int cols, int grid_offset) {
    if (grid_offset + rows * cols > static_cast<int>(obs.size())) {
        throw ShapeError("saliency_map: grid does not fit in observation");
    }
    return map_impl(p, obs, rows, cols, grid_offset);
}

float mean_saliency(const SaliencyMap& m) {
    double acc = 0;
    for (float v : m.s) acc += v;
    return static_cast<float>(acc / static_cast<double>(m.s.size()));
}

float mean_saliency(const GaussianPolicy& p, const std::vector<float>& obs, int rows, int cols,
                    int grid_offset) {
    return mean_saliency(saliency_map(p, obs, rows, cols, grid_offset));
}

float attdiv(const SaliencyMap& q, const SaliencyMap& fp, float floor) {
    if (q.s.size() != fp.s.size()) throw ShapeError("attdiv: map sizes differ");
    double sum_q = 0, sum_fp = 0;
    for (size_t i = 0; i < q.s.size(); ++i) {
        sum_q += q.s[i] + floor;
        sum_fp += fp.s[i] + floor;
    }
    double kl = 0;
    for (size_t i = 0; i < q.s.size(); ++i) {
        const double pq = (q.s[i] + floor) / sum_q;
        const double pf = (fp.s[i] + floor) / sum_fp;
        kl += pq * std::log(pq / pf);
    }
    return static_cast<float>(kl);
}

float attdiv(const GaussianPolicy& policy_q, const GaussianPolicy& policy_fp,
             const std::vector<float>& obs, int rows, int cols, int grid_offset) {
    return attdiv(saliency_map(policy_q, obs, rows, cols, grid_offset),
                  saliency_map(policy_fp, obs, rows, cols, grid_offset), kAttdivFloor);
}

}  // namespace ilq
