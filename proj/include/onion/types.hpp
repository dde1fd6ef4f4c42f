#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>
#include <vector>

namespace onion {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;
using Index = Eigen::Index;

// Base class for all toolkit errors.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DimensionMismatch : Error {
    using Error::Error;
};
struct ZeroRowSum : Error {
    using Error::Error;
};
struct ZeroOperator : Error {
    using Error::Error;
};
struct NonFiniteLoss : Error {
    using Error::Error;
};
struct ConfigError : Error {
    using Error::Error;
};
struct DegenerateDesign : Error {
    using Error::Error;
};
struct EmptyTrainingSet : Error {
    using Error::Error;
};
struct EmptyClass : Error {
    using Error::Error;
};
struct SingleClass : Error {
    using Error::Error;
};
struct TooFewSamples : Error {
    using Error::Error;
};
struct EmptyCellRequired : Error {
    using Error::Error;
};

enum class CovariateType { continuous, binary };

struct Covariate {
    std::string name;
    CovariateType type = CovariateType::continuous;
    Vector values;
};

// Confounders Y_1..Y_{k-1} plus the binary label Y_k. Zero confounders is legal.
struct CovariateSet {
    std::vector<Covariate> confounders;
    Vector label;
};

struct Dataset {
    Matrix X;
    CovariateSet cov;

    Index n() const { return X.rows(); }
    Index p() const { return X.cols(); }
};

inline void check_finite(const Eigen::Ref<const Matrix>& X, const char* what) {
    if (!X.allFinite()) throw Error(std::string(what) + ": non-finite entries");
}

inline void check_binary_label(const Eigen::Ref<const Vector>& y) {
    for (Index i = 0; i < y.size(); ++i) {
        if (y[i] != 0.0 && y[i] != 1.0) throw Error("label must contain only 0 and 1");
    }
}

// Validates vector lengths against the paired data matrix and the label alphabet.
inline void check_dataset(const Dataset& ds) {
    if (ds.n() < 1 || ds.p() < 1) throw Error("dataset must be non-empty");
    check_finite(ds.X, "data matrix");
    if (ds.cov.label.size() != ds.n()) throw DimensionMismatch("label length != sample count");
    check_binary_label(ds.cov.label);
    for (const auto& c : ds.cov.confounders) {
        if (c.values.size() != ds.n())
            throw DimensionMismatch("confounder '" + c.name + "' length != sample count");
    }
}

// Select rows of a matrix by index list.
inline Matrix take_rows(const Eigen::Ref<const Matrix>& X, const std::vector<Index>& idx) {
    Matrix out(static_cast<Index>(idx.size()), X.cols());
    for (Index i = 0; i < out.rows(); ++i) out.row(i) = X.row(idx[static_cast<size_t>(i)]);
    return out;
}

inline Vector take(const Eigen::Ref<const Vector>& v, const std::vector<Index>& idx) {
    Vector out(static_cast<Index>(idx.size()));
    for (Index i = 0; i < out.size(); ++i) out[i] = v[idx[static_cast<size_t>(i)]];
    return out;
}

inline Dataset take_samples(const Dataset& ds, const std::vector<Index>& idx) {
    Dataset out;
    out.X = take_rows(ds.X, idx);
    out.cov.label = take(ds.cov.label, idx);
    out.cov.confounders.reserve(ds.cov.confounders.size());
    for (const auto& c : ds.cov.confounders)
        out.cov.confounders.push_back({c.name, c.type, take(c.values, idx)});
    return out;
}

}  // namespace onion
