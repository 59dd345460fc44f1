#pragma once

#include <vector>

#include "ilq/policy.hpp"

namespace ilq {

constexpr float kSigmaMask = 1.5f;
constexpr float kSigmaBlur = 2.0f;
constexpr float kAttdivFloor = 1e-8f;

// Perturbation saliency over the grid portion of an observation. Entries are
// half squared output changes, so always >= 0.
struct SaliencyMap {
    int rows = 0, cols = 0;
    std::vector<float> s;

    float at(int i, int j) const { return s[static_cast<size_t>(i) * cols + j]; }
};

// separable Gaussian blur with reflected boundaries
std::vector<float> gaussian_blur(const std::vector<float>& grid, int rows, int cols, float sigma);

// phi(I,i,j) = I*(1-M) + blur(I)*M with M a Gaussian mask peaking at 1 on (i,j)
std::vector<float> gaussian_perturb(const std::vector<float>& grid, int rows, int cols, int i,
                                    int j, float sigma_mask = kSigmaMask,
                                    float sigma_blur = kSigmaBlur);

// 0.5 * || out(I) - out(phi(I,i,j)) ||^2 over the policy output vector, where
// the grid occupies obs[grid_offset .. grid_offset + rows*cols)
float saliency_score(const GaussianPolicy& p, const std::vector<float>& obs, int rows, int cols,
                     int grid_offset, int i, int j);

// all rows*cols locations; per-location evaluations may run in parallel and
// are combined by index
SaliencyMap saliency_map(const GaussianPolicy& p, const std::vector<float>& obs, int rows,
                         int cols, int grid_offset);

float mean_saliency(const SaliencyMap& m);
float mean_saliency(const GaussianPolicy& p, const std::vector<float>& obs, int rows, int cols,
                    int grid_offset);

// KL(normalize(q + floor) || normalize(fp + floor))
float attdiv(const SaliencyMap& q, const SaliencyMap& fp, float floor = kAttdivFloor);
float attdiv(const GaussianPolicy& policy_q, const GaussianPolicy& policy_fp,
             const std::vector<float>& obs, int rows, int cols, int grid_offset);

}  // namespace ilq
