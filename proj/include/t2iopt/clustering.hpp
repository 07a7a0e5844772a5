#pragma once

#include <vector>

#include "t2iopt/backends.hpp"
#include "t2iopt/common.hpp"

namespace t2i {

struct ClusterAssignment {
    std::vector<int> labels;                     // one per input point
    std::vector<std::vector<double>> centroids;  // k_effective points
    double inertia = 0.0;                        // within-cluster sum of squares
    int k_effective = 1;
};

struct ClusterPosterior {
    std::vector<double> priors;
    std::vector<double> likelihoods;
    std::vector<double> posteriors;
    int best = 0;  // argmax posterior, lowest index on ties
};

// Seeded k-means++ with Lloyd iterations (<=100, tol 1e-6 on centroid
// movement). Exact-duplicate points collapse before clustering, so
// k_effective = min(k, #distinct points). Deterministic for a fixed seed.
ClusterAssignment kmeans_fit(const std::vector<EmbeddingVector>& points, int k, long seed);

// L_j = (mean cluster score - 1) / 4, clamped to [1e-6, 1]. Scores in [1,5].
std::vector<double> compute_likelihoods(const ClusterAssignment& assignment,
                                        const std::vector<double>& scores);

// posterior_j = L_j P_j / sum_k L_k P_k
ClusterPosterior bayesian_update(const std::vector<double>& priors,
                                 const std::vector<double>& likelihoods);

// Uniform prior over k clusters.
std::vector<double> uniform_prior(int k);

// Carries posterior mass across rounds: each new cluster inherits the mass of
// its nearest previous centroid; previous mass claimed by no new cluster is
// redistributed uniformly; result renormalized.
std::vector<double> carry_prior_forward(const ClusterPosterior& previous,
                                        const std::vector<std::vector<double>>& previous_centroids,
                                        const std::vector<std::vector<double>>& new_centroids);

constexpr double kLikelihoodFloor = 1e-6;

}  // namespace t2i
