#include "onion/basis.hpp"

#include <cmath>

namespace onion {

PowerIterationResult power_iteration(const std::function<Vector(const Vector&)>& apply,
                                     Index dim, double tol, int max_iter, Rng& rng) {
    if (dim < 1) throw Error("power_iteration: dimension must be positive");
    if (tol <= 0 || max_iter < 1) throw Error("power_iteration: bad tol/max_iter");

    Vector u(dim);
    for (Index i = 0; i < dim; ++i) u[i] = rng.normal();
    u.normalize();

    Vector mu = apply(u);
    if (mu.norm() == 0.0) {
        // deterministic restart before giving up
        u = Vector::Zero(dim);
        u[0] = 1.0;
        mu = apply(u);
        if (mu.norm() == 0.0) throw ZeroOperator("power_iteration: operator maps start to 0");
    }

    PowerIterationResult res;
    for (res.iterations = 1; res.iterations <= max_iter; ++res.iterations) {
        Vector next = mu / mu.norm();
        const double cosine = std::abs(next.dot(u));
        u = next;
        if (std::abs(1.0 - cosine) < tol) {
            res.converged = true;
            break;
        }
        if (res.iterations == max_iter) break;
        mu = apply(u);
        if (mu.norm() == 0.0) throw ZeroOperator("power_iteration: operator collapsed to 0");
    }
    res.v = u;
    return res;
}

OnionFit onion_fit(const Eigen::Ref<const Matrix>& X, const std::vector<Vector>& confounders,
                   double tol, int max_iter, std::uint64_t seed) {
    const Index n = X.rows();
    const Index p = X.cols();
    if (confounders.empty()) throw Error("onion_fit: need at least one confounder");
    if (static_cast<Index>(confounders.size()) > p)
        throw Error("onion_fit: more confounders than features");
    const double scale = 1.0 + X.cwiseAbs().maxCoeff();
    if ((X.colwise().mean().cwiseAbs().maxCoeff()) > 1e-6 * scale)
        throw Error("onion_fit: X must be column-centered");
    for (const auto& y : confounders) {
        if (y.size() != n) throw DimensionMismatch("onion_fit: confounder length != n");
    }

    const double x_norm = X.norm();
    Rng rng(seed);
    Matrix deflated = X;
    std::vector<Vector> columns;
    OnionFit fit;
    auto& rep = fit.report;

    for (size_t i = 0; i < confounders.size(); ++i) {
        if (!columns.empty()) {
            const Vector& w = columns.back();
            deflated -= (deflated * w) * w.transpose();
        }
        Vector y = confounders[i].array() - confounders[i].mean();
        const double y_norm = y.norm();

        // Covariance of the deflated data with this confounder; if it is
        // numerically zero the basis vector cannot be determined.
        Vector xty = deflated.transpose() * y;
        if (xty.norm() < tol * x_norm * y_norm || y_norm == 0.0) {
            rep.iterations.push_back(0);
            rep.converged.push_back(false);
            rep.degenerate.push_back(true);
            rep.captured_covariance.push_back(0.0);
            rep.column_index.push_back(-1);
            continue;
        }

        // Y_i Y_i' is rank one, so M = X_d' Y_i Y_i' X_d is applied without
        // ever materializing a p x p matrix.
        auto op = [&](const Vector& v) -> Vector {
            const double s = y.dot(deflated * v);
            return deflated.transpose() * (y * s);
        };
        PowerIterationResult pw = power_iteration(op, p, tol, max_iter, rng);

        Vector w = pw.v;
        const double yxw = y.dot(X * w);
        if (yxw < 0) w = -w;  // determinism across seeds and platforms

        rep.iterations.push_back(pw.iterations);
        rep.converged.push_back(pw.converged);
        rep.degenerate.push_back(false);
        rep.captured_covariance.push_back(std::pow(y.dot(X * w), 2));
        rep.column_index.push_back(static_cast<int>(columns.size()));
        columns.push_back(std::move(w));
    }

    fit.basis.W.resize(p, static_cast<Index>(columns.size()));
    for (size_t j = 0; j < columns.size(); ++j) fit.basis.W.col(static_cast<Index>(j)) = columns[j];
    return fit;
}

Matrix onion_transform(const Eigen::Ref<const Matrix>& X, const OrthonormalBasis& basis) {
    if (basis.m() == 0) return X;
    if (X.cols() != basis.p()) throw DimensionMismatch("onion_transform: feature count mismatch");
    return X - (X * basis.W) * basis.W.transpose();
}

}  // namespace onion
