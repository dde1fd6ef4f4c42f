#include "onion/preprocess.hpp"

#include <algorithm>
#include <cmath>

namespace onion {

Matrix depth_normalize(const Eigen::Ref<const Matrix>& X, double depth_constant) {
    if (depth_constant <= 0) throw Error("depth_constant must be positive");
    check_finite(X, "depth_normalize");
    Vector sums = X.rowwise().sum();
    for (Index i = 0; i < sums.size(); ++i) {
        if (sums[i] == 0.0) throw ZeroRowSum("row " + std::to_string(i) + " sums to 0");
    }
    return X.array().colwise() * (depth_constant / sums.array());
}

double quantile(Vector values, double q) {
    if (values.size() == 0) throw Error("quantile of empty vector");
    std::sort(values.begin(), values.end());
    const double pos = q * static_cast<double>(values.size() - 1);
    const Index lo = static_cast<Index>(std::floor(pos));
    const Index hi = static_cast<Index>(std::ceil(pos));
    const double frac = pos - static_cast<double>(lo);
    return values[lo] + frac * (values[hi] - values[lo]);
}

PreprocessorState fit_preprocessor(const Eigen::Ref<const Matrix>& X_train, double clip_quantile) {
    const Index n = X_train.rows();
    const Index p = X_train.cols();
    if (n < 2) throw TooFewSamples("fit_preprocessor requires n >= 2");
    check_finite(X_train, "fit_preprocessor");

    PreprocessorState st;
    st.clip_threshold.resize(p);
    for (Index j = 0; j < p; ++j) st.clip_threshold[j] = quantile(X_train.col(j), clip_quantile);

    Matrix clipped = X_train.cwiseMin(st.clip_threshold.replicate(n, 1));
    st.mean = clipped.colwise().mean();
    st.stddev = ((clipped.rowwise() - st.mean).array().square().colwise().sum() /
                 static_cast<double>(n - 1))
                    .sqrt();
    st.zero_variance.assign(static_cast<size_t>(p), false);
    for (Index j = 0; j < p; ++j) {
        if (st.stddev[j] == 0.0) {
            st.zero_variance[static_cast<size_t>(j)] = true;
            st.stddev[j] = 1.0;  // keeps feature indices stable across folds
        }
    }
    return st;
}

Matrix apply_preprocessor(const PreprocessorState& state, const Eigen::Ref<const Matrix>& X) {
    if (X.cols() != state.mean.size())
        throw DimensionMismatch("apply_preprocessor: feature count mismatch");
    Matrix out = X.cwiseMin(state.clip_threshold.replicate(X.rows(), 1));
    out.rowwise() -= state.mean;
    out.array().rowwise() /= state.stddev.array();
    return out;
}

Centered center_columns(const Eigen::Ref<const Matrix>& X) {
    Centered c;
    c.mean = X.colwise().mean();
    c.values = X.rowwise() - c.mean;
    return c;
}

namespace {

// Flip each column so its entry of largest absolute value is positive.
void fix_signs(Matrix& basis) {
    for (Index j = 0; j < basis.cols(); ++j) {
        Index imax;
        basis.col(j).cwiseAbs().maxCoeff(&imax);
        if (basis(imax, j) < 0) basis.col(j) = -basis.col(j);
    }
}

}  // namespace

PcaResult pca_reduce(const Eigen::Ref<const Matrix>& X_train,
                     const Eigen::Ref<const Matrix>& X_test, int components) {
    const Index n = X_train.rows();
    const Index p = X_train.cols();
    if (X_test.cols() != p) throw DimensionMismatch("pca_reduce: test feature count mismatch");
    if (components < 1 || components > std::min(n, p))
        throw Error("pca_reduce: components must be in [1, min(n, p)]");

    PcaResult res;
    Centered c = center_columns(X_train);
    res.mean = c.mean;
    const double denom = n > 1 ? static_cast<double>(n - 1) : 1.0;

    Matrix basis;
    Vector eigvals;
    if (p <= n) {
        Matrix cov = c.values.transpose() * c.values / denom;
        Eigen::SelfAdjointEigenSolver<Matrix> es(cov);
        // eigenvalues come out ascending; reverse to non-increasing variance order
        eigvals = es.eigenvalues().reverse();
        basis = es.eigenvectors().rowwise().reverse();
    } else {
        // dual form: eigenvectors of the n x n Gram matrix, mapped back to feature space
        Matrix gram = c.values * c.values.transpose() / denom;
        Eigen::SelfAdjointEigenSolver<Matrix> es(gram);
        eigvals = es.eigenvalues().reverse();
        Matrix u = es.eigenvectors().rowwise().reverse();
        basis.resize(p, n);
        for (Index j = 0; j < n; ++j) {
            Vector v = c.values.transpose() * u.col(j);
            const double norm = v.norm();
            basis.col(j) = norm > 0 ? Vector(v / norm) : v;
        }
    }

    const double lead = std::max(eigvals[0], 0.0);
    const double rank_tol = lead * 1e-10;
    int rank = 0;
    for (Index j = 0; j < eigvals.size(); ++j) {
        if (eigvals[j] > rank_tol) ++rank;
    }
    res.components = components;
    if (components > rank) {
        res.rank_deficient = true;
        res.components = std::max(rank, 1);
    }

    res.basis = basis.leftCols(res.components);
    fix_signs(res.basis);
    res.explained_variance = eigvals.head(res.components).cwiseMax(0.0);
    res.train_scores = c.values * res.basis;
    res.test_scores = (X_test.rowwise() - res.mean) * res.basis;
    return res;
}

}  // namespace onion
