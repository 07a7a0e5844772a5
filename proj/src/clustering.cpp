#include "t2iopt/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <random>

namespace t2i {

namespace {

double sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
    double d = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        double t = a[i] - b[i];
        d += t * t;
    }
    return d;
}

}  // namespace

ClusterAssignment kmeans_fit(const std::vector<EmbeddingVector>& points, int k, long seed) {
    if (points.empty()) throw PreconditionError("kmeans_fit: points must be non-empty");
    if (k < 1) throw PreconditionError("kmeans_fit: k must be >= 1");
    std::size_t dim = points.front().dim;
    for (const auto& p : points)
        if (p.dim != dim || p.values.size() != dim) throw DimMismatch("kmeans_fit: mixed dimensions");

    // collapse exact duplicates; cluster the distinct points
    std::map<std::vector<double>, int> distinct_index;
    std::vector<std::vector<double>> distinct;
    std::vector<int> point_to_distinct(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) {
        auto [it, inserted] = distinct_index.try_emplace(points[i].values, static_cast<int>(distinct.size()));
        if (inserted) distinct.push_back(points[i].values);
        point_to_distinct[i] = it->second;
    }

    int k_eff = std::min<int>(k, static_cast<int>(distinct.size()));

    // k-means++ seeding over distinct points
    std::mt19937_64 rng(static_cast<std::uint64_t>(seed));
    std::vector<std::vector<double>> centroids;
    {
        std::uniform_int_distribution<std::size_t> first(0, distinct.size() - 1);
        centroids.push_back(distinct[first(rng)]);
        std::vector<double> d2(distinct.size());
        while (static_cast<int>(centroids.size()) < k_eff) {
            double total = 0.0;
            for (std::size_t i = 0; i < distinct.size(); ++i) {
                double best = std::numeric_limits<double>::max();
                for (const auto& c : centroids) best = std::min(best, sq_dist(distinct[i], c));
                d2[i] = best;
                total += best;
            }
            std::size_t chosen = 0;
            if (total > 0.0) {
                std::uniform_real_distribution<double> u(0.0, total);
                double r = u(rng), acc = 0.0;
                for (std::size_t i = 0; i < distinct.size(); ++i) {
                    acc += d2[i];
                    if (acc >= r) {
                        chosen = i;
                        break;
                    }
                }
            }
            centroids.push_back(distinct[chosen]);
        }
    }

    std::vector<int> labels(distinct.size(), 0);
    for (int iter = 0; iter < 100; ++iter) {
        // assignment step, lowest index wins ties
        for (std::size_t i = 0; i < distinct.size(); ++i) {
            double best = std::numeric_limits<double>::max();
            int best_j = 0;
            for (int j = 0; j < k_eff; ++j) {
                double d = sq_dist(distinct[i], centroids[j]);
                if (d < best) {
                    best = d;
                    best_j = j;
                }
            }
            labels[i] = best_j;
        }
        // update step
        std::vector<std::vector<double>> next(k_eff, std::vector<double>(dim, 0.0));
        std::vector<int> counts(k_eff, 0);
        for (std::size_t i = 0; i < distinct.size(); ++i) {
            for (std::size_t d = 0; d < dim; ++d) next[labels[i]][d] += distinct[i][d];
            ++counts[labels[i]];
        }
        double movement = 0.0;
        for (int j = 0; j < k_eff; ++j) {
            if (counts[j] == 0) {
                next[j] = centroids[j];  // keep an empty cluster's centroid in place
                continue;
            }
            for (std::size_t d = 0; d < dim; ++d) next[j][d] /= counts[j];
            movement = std::max(movement, std::sqrt(sq_dist(next[j], centroids[j])));
        }
        centroids = std::move(next);
        if (movement < 1e-6) break;
    }

    // final assignment and inertia over the original (duplicated) points
    ClusterAssignment out;
    out.k_effective = k_eff;
    out.centroids = centroids;
    out.labels.resize(points.size());
    out.inertia = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
        int lab = labels[point_to_distinct[i]];
        out.labels[i] = lab;
        out.inertia += sq_dist(points[i].values, centroids[lab]);
    }

    // drop empty clusters so every label is in [0, k_effective)
    std::vector<int> used(k_eff, 0);
    for (int lab : out.labels) used[lab] = 1;
    if (std::count(used.begin(), used.end(), 1) != k_eff) {
        std::vector<int> remap(k_eff, -1);
        std::vector<std::vector<double>> kept;
        for (int j = 0; j < k_eff; ++j)
            if (used[j]) {
                remap[j] = static_cast<int>(kept.size());
                kept.push_back(out.centroids[j]);
            }
        for (int& lab : out.labels) lab = remap[lab];
        out.centroids = std::move(kept);
        out.k_effective = static_cast<int>(out.centroids.size());
    }
    return out;
}

std::vector<double> compute_likelihoods(const ClusterAssignment& assignment,
                                        const std::vector<double>& scores) {
    if (scores.size() != assignment.labels.size())
        throw PreconditionError("compute_likelihoods: one score per point required");
    std::vector<double> sum(assignment.k_effective, 0.0);
    std::vector<int> count(assignment.k_effective, 0);
    for (std::size_t i = 0; i < scores.size(); ++i) {
        sum[assignment.labels[i]] += scores[i];
        ++count[assignment.labels[i]];
    }
    std::vector<double> lik(assignment.k_effective);
    for (int j = 0; j < assignment.k_effective; ++j) {
        if (count[j] == 0) throw EmptyCluster("compute_likelihoods: cluster " + std::to_string(j));
        double mean = sum[j] / count[j];
        lik[j] = std::clamp((mean - 1.0) / 4.0, kLikelihoodFloor, 1.0);
    }
    return lik;
}

std::vector<double> uniform_prior(int k) {
    if (k < 1) throw PreconditionError("uniform_prior: k must be >= 1");
    return std::vector<double>(k, 1.0 / k);
}

ClusterPosterior bayesian_update(const std::vector<double>& priors,
                                 const std::vector<double>& likelihoods) {
    if (priors.empty() || priors.size() != likelihoods.size())
        throw PreconditionError("bayesian_update: size mismatch");
    double prior_sum = 0.0;
    bool any_lik = false;
    for (std::size_t j = 0; j < priors.size(); ++j) {
        if (priors[j] < 0.0 || likelihoods[j] < 0.0)
            throw PreconditionError("bayesian_update: negative input");
        prior_sum += priors[j];
        any_lik = any_lik || likelihoods[j] > 0.0;
    }
    if (std::abs(prior_sum - 1.0) > 1e-9) throw PreconditionError("bayesian_update: priors must sum to 1");
    if (!any_lik) throw DegenerateEvidence("bayesian_update: all likelihoods zero");

    ClusterPosterior out;
    out.priors = priors;
    out.likelihoods = likelihoods;
    double z = 0.0;
    for (std::size_t j = 0; j < priors.size(); ++j) z += likelihoods[j] * priors[j];
    if (z <= 0.0) throw DegenerateEvidence("bayesian_update: zero evidence");
    out.posteriors.resize(priors.size());
    out.best = 0;
    for (std::size_t j = 0; j < priors.size(); ++j) {
        out.posteriors[j] = likelihoods[j] * priors[j] / z;
        if (out.posteriors[j] > out.posteriors[out.best]) out.best = static_cast<int>(j);
    }
    return out;
}

std::vector<double> carry_prior_forward(const ClusterPosterior& previous,
                                        const std::vector<std::vector<double>>& previous_centroids,
                                        const std::vector<std::vector<double>>& new_centroids) {
    if (previous.posteriors.size() != previous_centroids.size())
        throw PreconditionError("carry_prior_forward: posterior/centroid mismatch");
    if (new_centroids.empty()) throw PreconditionError("carry_prior_forward: no new centroids");

    std::size_t k_new = new_centroids.size();
    std::vector<double> mass(k_new, 0.0);
    std::vector<int> nearest(k_new, 0);
    std::vector<int> claims(previous_centroids.size(), 0);
    for (std::size_t j = 0; j < k_new; ++j) {
        double best = std::numeric_limits<double>::max();
        for (std::size_t p = 0; p < previous_centroids.size(); ++p) {
            if (new_centroids[j].size() != previous_centroids[p].size())
                throw DimMismatch("carry_prior_forward: centroid dimension mismatch");
            double d = sq_dist(new_centroids[j], previous_centroids[p]);
            if (d < best) {
                best = d;
                nearest[j] = static_cast<int>(p);
            }
        }
        ++claims[nearest[j]];
    }
    // split each previous cluster's mass evenly among the new clusters that claim it
    for (std::size_t j = 0; j < k_new; ++j)
        mass[j] = previous.posteriors[nearest[j]] / claims[nearest[j]];
    // orphaned previous mass is redistributed uniformly
    double orphaned = 0.0;
    for (std::size_t p = 0; p < previous_centroids.size(); ++p)
        if (claims[p] == 0) orphaned += previous.posteriors[p];
    for (double& m : mass) m += orphaned / static_cast<double>(k_new);

    double total = 0.0;
    for (double m : mass) total += m;
    for (double& m : mass) m /= total;
    return mass;
}

}  // namespace t2i
