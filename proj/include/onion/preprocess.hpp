#pragma once

#include "onion/types.hpp"

namespace onion {

// Train-fitted clip/standardize state. Fitted exactly once, on training data.
struct PreprocessorState {
    RowVector mean;
    RowVector stddev;          // sample standard deviation of the clipped training values
    RowVector clip_threshold;  // per-feature 99th percentile of training values
    std::vector<bool> zero_variance;  // flagged features are divided by 1, not dropped
    double depth_constant = 1e6;
};

// Scales each row to sum to depth_constant (counts-per-constant normalization).
Matrix depth_normalize(const Eigen::Ref<const Matrix>& X, double depth_constant);

// Linear-interpolation quantile of a feature column, q in [0, 1].
double quantile(Vector values, double q);

PreprocessorState fit_preprocessor(const Eigen::Ref<const Matrix>& X_train,
                                   double clip_quantile = 0.99);

// Clip to the stored thresholds, then standardize with the stored mean/sd.
Matrix apply_preprocessor(const PreprocessorState& state, const Eigen::Ref<const Matrix>& X);

struct Centered {
    Matrix values;
    RowVector mean;
};

Centered center_columns(const Eigen::Ref<const Matrix>& X);

struct PcaResult {
    Matrix train_scores;
    Matrix test_scores;
    Matrix basis;               // p x components, orthonormal columns
    Vector explained_variance;  // non-increasing
    RowVector mean;             // training column means
    int components = 0;
    bool rank_deficient = false;  // requested components exceeded numerical rank
};

// Projection basis is fitted on centered training data only; both matrices are
// projected onto the same basis. Uses the p x p covariance or its n x n dual,
// whichever is smaller. Sign convention: each component's entry of largest
// absolute value is made positive.
PcaResult pca_reduce(const Eigen::Ref<const Matrix>& X_train,
                     const Eigen::Ref<const Matrix>& X_test, int components);

}  // namespace onion
