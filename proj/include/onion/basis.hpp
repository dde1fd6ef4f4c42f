#pragma once

#include "onion/rng.hpp"
#include "onion/types.hpp"

#include <functional>

namespace onion {

// p x m matrix with orthonormal columns spanning the confounded subspace.
struct OrthonormalBasis {
    Matrix W;

    Index p() const { return W.rows(); }
    Index m() const { return W.cols(); }
};

// One entry per confounder passed to onion_fit, in order. A degenerate
// confounder (no signal left in the deflated data) contributes no basis
// column; column_index is -1 for it.
struct OnionFitReport {
    std::vector<int> iterations;
    std::vector<bool> converged;
    std::vector<bool> degenerate;
    std::vector<double> captured_covariance;  // (Y_i' X w_i)^2 on the centered data
    std::vector<int> column_index;
};

struct OnionFit {
    OrthonormalBasis basis;
    OnionFitReport report;
};

struct PowerIterationResult {
    Vector v;
    int iterations = 0;
    bool converged = false;
};

// Dominant eigenvector of a symmetric PSD operator given as v -> Mv.
// Stops when |1 - |u_t . u_{t-1}|| < tol. If the operator annihilates the
// random start, retries once from a fixed vector before raising ZeroOperator.
PowerIterationResult power_iteration(const std::function<Vector(const Vector&)>& apply,
                                     Index dim, double tol, int max_iter, Rng& rng);

// Sequentially extracts unit directions maximizing covariance with each
// confounder, deflating the data between extractions so the directions come
// out mutually orthogonal. X must be column-centered; confounders are
// centered internally. Degenerate confounders are skipped with a report flag.
OnionFit onion_fit(const Eigen::Ref<const Matrix>& X, const std::vector<Vector>& confounders,
                   double tol = 1e-10, int max_iter = 1000, std::uint64_t seed = 0);

// X_n = X - X W W'. Consumes no covariate labels, so it applies to unseen
// test data as-is. An empty basis returns X unchanged.
Matrix onion_transform(const Eigen::Ref<const Matrix>& X, const OrthonormalBasis& basis);

}  // namespace onion
