#pragma once

#include "onion/rng.hpp"
#include "onion/types.hpp"

namespace onion {

struct SimConfig {
    int d = 20;   // latent dimension
    int p = 300;  // feature count
    double sigma = 2.0;
    int k = 2;  // factor count: k-1 confounders plus the label factor
    std::vector<double> concentration = {40.0, 50.0};
    Index n = 1000;  // requested sample count
    std::uint64_t seed = 0;
};

void validate(const SimConfig& config);

// Weights and mixing vector drawn once per world; samples are then drawn
// repeatedly against them.
struct SimWorld {
    std::vector<Matrix> W_x;  // k matrices, d x p
    std::vector<Vector> W_y;  // k vectors, length d
    Vector alpha;             // k-simplex from Dir(concentration)
};

SimWorld sim_world(const SimConfig& config);

// Per sample: Z_i ~ N(0, I_d); X row = sum_i Z_i W_x_i + N(0, sigma^2 I_p);
// Y_i = Z_i . W_y_i + N(0, sigma^2) for i < k; the label indicates whether
// sum_i alpha_i Y_i + alpha_k Z_k . W_y_k + noise exceeds 0.
Dataset sim_draw(const SimWorld& world, const SimConfig& config, Index n, Rng& rng);

struct TrainTestSplit {
    Dataset train;
    Dataset test;
};

// Partitions samples into train/test candidates first, then keeps only
// training samples with (Y_1 < 0 and label 1) or (Y_1 >= 0 and label 0).
// The test side is left unfiltered. Requires exactly one confounder.
TrainTestSplit confound_split(const Dataset& data, double test_fraction, std::uint64_t seed);

// Equalizes the four sign(Y_1) x label quadrants by subsampling.
Dataset balance_quadrants(const Dataset& data, std::uint64_t seed);

// Oversamples in fixed-size batches until the post-filter training quota and
// the test quota are both met. Per-sample train/test assignment happens
// before the confounding filter.
TrainTestSplit sim_confounded_dataset(const SimWorld& world, const SimConfig& config,
                                      Index train_quota, Index test_quota, double test_fraction,
                                      Rng& rng, bool strict_balance = false);

// Synthetic sex-style cohort: a binary group covariate, a pair of pure
// group-proxy features with opposite signs, label-bearing features, and
// noise features. Group and label are drawn independently; confounding is
// induced downstream by biased subsampling.
struct CohortConfig {
    Index n = 800;
    int proxy_features = 2;
    int label_features = 10;
    int noise_features = 18;
    double proxy_noise = 0.05;
    double label_signal = 0.5;
    std::uint64_t seed = 0;
};

Dataset synth_cohort(const CohortConfig& config);

}  // namespace onion
