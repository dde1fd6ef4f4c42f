#include "onion/models.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace onion {

namespace {

constexpr std::uint64_t kInitStream = 0x11;
constexpr std::uint64_t kSplitStream = 0x22;
constexpr std::uint64_t kTrainStream = 0x33;

double sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

// Mean cross entropy from logits; stable for large |z|.
double bce_from_logits(const Vector& z, const Eigen::Ref<const Vector>& y) {
    double s = 0.0;
    for (Index i = 0; i < z.size(); ++i)
        s += std::max(z[i], 0.0) - z[i] * y[i] + std::log1p(std::exp(-std::abs(z[i])));
    return s / static_cast<double>(z.size());
}

struct StackCache {
    std::vector<Matrix> inputs;  // input fed to each layer
    std::vector<Matrix> pre;     // pre-activation of each layer
};

// Applies the layer stack; ReLU after every layer when relu_after_last,
// otherwise the final layer output stays linear.
Matrix stack_forward(const std::vector<Layer>& layers, Matrix h, bool relu_after_last,
                     StackCache* cache) {
    for (size_t l = 0; l < layers.size(); ++l) {
        const Layer& L = layers[l];
        if (h.cols() != L.W.cols()) throw DimensionMismatch("layer input width mismatch");
        if (cache) cache->inputs.push_back(h);
        Matrix a = h * L.W.transpose();
        a.rowwise() += L.b.transpose();
        if (cache) cache->pre.push_back(a);
        const bool relu_here = relu_after_last || l + 1 < layers.size();
        h = relu_here ? Matrix(a.cwiseMax(0.0)) : std::move(a);
    }
    return h;
}

// Backpropagates dout through the stack, filling per-layer gradients and
// returning the gradient w.r.t. the stack input.
Matrix stack_backward(const std::vector<Layer>& layers, const StackCache& cache, Matrix dout,
                      bool relu_after_last, std::vector<Layer>& grads) {
    grads.resize(layers.size());
    for (size_t l = layers.size(); l-- > 0;) {
        const bool relu_here = relu_after_last || l + 1 < layers.size();
        Matrix da = relu_here
                        ? Matrix((cache.pre[l].array() > 0.0).select(dout.array(), 0.0))
                        : std::move(dout);
        grads[l].W = da.transpose() * cache.inputs[l];
        grads[l].b = da.colwise().sum();
        dout = da * layers[l].W;
    }
    return dout;
}

double weight_l2(const std::vector<Layer>& layers) {
    double s = 0.0;
    for (const auto& L : layers) s += L.W.squaredNorm();
    return s;
}

void add_l2_grads(const std::vector<Layer>& layers, double l2, std::vector<Layer>& grads) {
    for (size_t l = 0; l < layers.size(); ++l) grads[l].W += l2 * layers[l].W;
}

Vector head_output(const NetworkParams& params, const std::vector<Layer>& head,
                   const Eigen::Ref<const Matrix>& X) {
    Matrix h = stack_forward(params.extractor, X, true, nullptr);
    return stack_forward(head, std::move(h), false, nullptr).col(0);
}

double confounder_loss_one(const Vector& out, const Vector& target, CovariateType type) {
    if (type == CovariateType::binary) return bce_from_logits(out, target);
    return (out - target).squaredNorm() / static_cast<double>(out.size());
}

Layer init_layer(Index out, Index in, Rng& rng) {
    Layer L;
    L.W.resize(out, in);
    const double scale = 1.0 / std::sqrt(static_cast<double>(in));
    for (Index r = 0; r < out; ++r)
        for (Index c = 0; c < in; ++c) L.W(r, c) = rng.normal() * scale;
    L.b = Vector::Zero(out);
    return L;
}

struct AdamTensor {
    Matrix mW, vW;
    Vector mb, vb;
    long t = 0;
};

constexpr double kBeta1 = 0.9;
constexpr double kBeta2 = 0.999;
constexpr double kEps = 1e-8;

void adam_step(Layer& layer, const Layer& grad, AdamTensor& st, double lr) {
    if (st.t == 0) {
        st.mW = Matrix::Zero(layer.W.rows(), layer.W.cols());
        st.vW = st.mW;
        st.mb = Vector::Zero(layer.b.size());
        st.vb = st.mb;
    }
    ++st.t;
    const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(st.t));
    const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(st.t));
    st.mW = kBeta1 * st.mW + (1.0 - kBeta1) * grad.W;
    st.vW = kBeta2 * st.vW + (1.0 - kBeta2) * grad.W.cwiseProduct(grad.W);
    st.mb = kBeta1 * st.mb + (1.0 - kBeta1) * grad.b;
    st.vb = kBeta2 * st.vb + (1.0 - kBeta2) * grad.b.cwiseProduct(grad.b);
    layer.W -= (lr / c1) * st.mW.cwiseQuotient(((st.vW / c2).cwiseSqrt().array() + kEps).matrix());
    layer.b -= (lr / c1) * st.mb.cwiseQuotient(((st.vb / c2).cwiseSqrt().array() + kEps).matrix());
}

std::vector<Index> draw_batch(Rng& rng, Index n, int batch) {
    std::vector<Index> idx(static_cast<size_t>(batch));
    for (auto& i : idx) i = static_cast<Index>(rng.below(static_cast<std::uint64_t>(n)));
    return idx;
}

void validate_train_inputs(const Eigen::Ref<const Matrix>& X, const Eigen::Ref<const Vector>& y,
                           const TrainConfig& cfg) {
    if (X.rows() != y.size()) throw DimensionMismatch("label length != sample count");
    check_finite(X, "training data");
    check_binary_label(y);
    if (cfg.learning_rate <= 0 || cfg.batch_size < 1 || cfg.iterations < 1 ||
        cfg.hidden_units < 1 || cfg.adversary_steps_per_label_step < 1 ||
        cfg.checkpoint_every < 1)
        throw ConfigError("train config fields must be positive");
}

// Shared alternating loop. Rule 1 descends L_k for extractor + label head;
// rule 2 (only when confounder heads exist) descends each L_i for its head
// and ascends sum_i L_i for the extractor. Checkpoint runs every
// checkpoint_every steps and after the final one.
template <typename CheckpointFn>
void train_loop(NetworkParams& params, const Eigen::Ref<const Matrix>& X,
                const Eigen::Ref<const Vector>& y, const std::vector<Vector>& conf_values,
                const TrainConfig& cfg, Rng& rng, CheckpointFn&& checkpoint) {
    const Index n = X.rows();
    std::vector<AdamTensor> ext_state(params.extractor.size());
    std::vector<AdamTensor> head_state(params.label_head.size());
    std::vector<std::vector<AdamTensor>> conf_state(params.confounder_heads.size());
    for (size_t i = 0; i < conf_state.size(); ++i)
        conf_state[i].resize(params.confounder_heads[i].size());
    const bool adversarial = !params.confounder_heads.empty();

    for (int s = 1; s <= cfg.iterations; ++s) {
        const auto idx = draw_batch(rng, n, cfg.batch_size);
        const Matrix Xb = take_rows(X, idx);
        const Vector yb = take(y, idx);
        LabelGrads lg = label_gradients(params, Xb, yb, cfg.l2);
        if (!std::isfinite(lg.loss)) throw NonFiniteLoss("label loss diverged at step " +
                                                         std::to_string(s));
        for (size_t l = 0; l < params.extractor.size(); ++l)
            adam_step(params.extractor[l], lg.extractor[l], ext_state[l], cfg.learning_rate);
        for (size_t l = 0; l < params.label_head.size(); ++l)
            adam_step(params.label_head[l], lg.label_head[l], head_state[l], cfg.learning_rate);

        if (adversarial) {
            for (int a = 0; a < cfg.adversary_steps_per_label_step; ++a) {
                const auto aidx = draw_batch(rng, n, cfg.batch_size);
                const Matrix Xa = take_rows(X, aidx);
                std::vector<Vector> conf_batch(conf_values.size());
                for (size_t i = 0; i < conf_values.size(); ++i)
                    conf_batch[i] = take(conf_values[i], aidx);
                AdversaryGrads ag = adversary_gradients(params, Xa, conf_batch);
                for (double v : ag.losses)
                    if (!std::isfinite(v))
                        throw NonFiniteLoss("confounder loss diverged at step " +
                                            std::to_string(s));
                for (size_t i = 0; i < params.confounder_heads.size(); ++i)
                    for (size_t l = 0; l < params.confounder_heads[i].size(); ++l)
                        adam_step(params.confounder_heads[i][l], ag.heads[i][l], conf_state[i][l],
                                  cfg.learning_rate);
                // gradient reversal: feed the negated gradient so the Adam
                // step ascends the confounder loss on the shared extractor
                for (size_t l = 0; l < params.extractor.size(); ++l) {
                    Layer neg{-ag.extractor[l].W, -ag.extractor[l].b};
                    adam_step(params.extractor[l], neg, ext_state[l], cfg.learning_rate);
                }
            }
        }
        if (s % cfg.checkpoint_every == 0 || s == cfg.iterations) checkpoint(params, s);
    }
}

}  // namespace

Vector predict_logits(const NetworkParams& params, const Eigen::Ref<const Matrix>& X) {
    return head_output(params, params.label_head, X);
}

Vector predict_proba(const NetworkParams& params, const Eigen::Ref<const Matrix>& X) {
    Vector z = predict_logits(params, X);
    Vector p(z.size());
    for (Index i = 0; i < z.size(); ++i)
        p[i] = std::clamp(sigmoid(z[i]), 1e-12, 1.0 - 1e-12);
    return p;
}

double label_loss(const NetworkParams& params, const Eigen::Ref<const Matrix>& X,
                  const Eigen::Ref<const Vector>& y, double l2) {
    const Vector z = predict_logits(params, X);
    double loss = bce_from_logits(z, y);
    if (l2 > 0)
        loss += 0.5 * l2 * (weight_l2(params.extractor) + weight_l2(params.label_head));
    return loss;
}

std::vector<double> confounder_losses(const NetworkParams& params,
                                      const Eigen::Ref<const Matrix>& X,
                                      const std::vector<Vector>& confounders) {
    if (confounders.size() != params.confounder_heads.size())
        throw DimensionMismatch("confounder count != head count");
    std::vector<double> losses(confounders.size());
    Matrix h = stack_forward(params.extractor, X, true, nullptr);
    for (size_t i = 0; i < confounders.size(); ++i) {
        Vector out = stack_forward(params.confounder_heads[i], h, false, nullptr).col(0);
        losses[i] = confounder_loss_one(out, confounders[i], params.confounder_types[i]);
    }
    return losses;
}

LabelGrads label_gradients(const NetworkParams& params, const Eigen::Ref<const Matrix>& X,
                           const Eigen::Ref<const Vector>& y, double l2) {
    const double B = static_cast<double>(X.rows());
    StackCache ec, hc;
    Matrix h = stack_forward(params.extractor, X, true, &ec);
    Vector z = stack_forward(params.label_head, h, false, &hc).col(0);

    LabelGrads g;
    g.loss = bce_from_logits(z, y);
    Matrix dz(z.size(), 1);
    for (Index i = 0; i < z.size(); ++i) dz(i, 0) = (sigmoid(z[i]) - y[i]) / B;
    Matrix dh = stack_backward(params.label_head, hc, std::move(dz), false, g.label_head);
    stack_backward(params.extractor, ec, std::move(dh), true, g.extractor);
    if (l2 > 0) {
        g.loss += 0.5 * l2 * (weight_l2(params.extractor) + weight_l2(params.label_head));
        add_l2_grads(params.extractor, l2, g.extractor);
        add_l2_grads(params.label_head, l2, g.label_head);
    }
    return g;
}

AdversaryGrads adversary_gradients(const NetworkParams& params, const Eigen::Ref<const Matrix>& X,
                                   const std::vector<Vector>& confounders) {
    if (confounders.size() != params.confounder_heads.size())
        throw DimensionMismatch("confounder count != head count");
    const double B = static_cast<double>(X.rows());
    StackCache ec;
    Matrix h = stack_forward(params.extractor, X, true, &ec);

    AdversaryGrads g;
    g.losses.resize(confounders.size());
    g.heads.resize(confounders.size());
    Matrix dh_total = Matrix::Zero(h.rows(), h.cols());
    for (size_t i = 0; i < confounders.size(); ++i) {
        StackCache hc;
        Vector out = stack_forward(params.confounder_heads[i], h, false, &hc).col(0);
        const Vector& target = confounders[i];
        if (target.size() != X.rows())
            throw DimensionMismatch("confounder batch length mismatch");
        g.losses[i] = confounder_loss_one(out, target, params.confounder_types[i]);
        Matrix dout(out.size(), 1);
        if (params.confounder_types[i] == CovariateType::binary) {
            for (Index r = 0; r < out.size(); ++r) dout(r, 0) = (sigmoid(out[r]) - target[r]) / B;
        } else {
            for (Index r = 0; r < out.size(); ++r) dout(r, 0) = 2.0 * (out[r] - target[r]) / B;
        }
        dh_total += stack_backward(params.confounder_heads[i], hc, std::move(dout), false,
                                   g.heads[i]);
    }
    stack_backward(params.extractor, ec, std::move(dh_total), true, g.extractor);
    return g;
}

LogregFit logreg_fit(const Eigen::Ref<const Matrix>& X, const Eigen::Ref<const Vector>& y,
                     const TrainConfig& config) {
    validate_train_inputs(X, y, config);
    LogregFit fit;
    fit.params.kind = ModelKind::logreg;
    // zero init keeps the convex fit deterministic and leaves centered
    // uninformative features untouched under full-batch training
    fit.params.label_head.push_back({Matrix::Zero(1, X.cols()), Vector::Zero(1)});

    Rng rng(sub_seed(config.seed, kTrainStream));
    train_loop(fit.params, X, y, {}, config, rng, [&](const NetworkParams& p, int step) {
        fit.history.push_back({step, label_loss(p, X, y, config.l2)});
    });
    return fit;
}

Holdout training_holdout(const Eigen::Ref<const Vector>& y, const TrainConfig& config) {
    return stratified_holdout(y, config.validation_fraction, sub_seed(config.seed, kSplitStream));
}

MlpFit mlp_fit(const Eigen::Ref<const Matrix>& X, const Eigen::Ref<const Vector>& y,
               const TrainConfig& config) {
    validate_train_inputs(X, y, config);
    const Holdout ho = training_holdout(y, config);
    const Matrix Xtr = take_rows(X, ho.train);
    const Vector ytr = take(y, ho.train);
    const Matrix Xval = take_rows(X, ho.val);
    const Vector yval = take(y, ho.val);

    MlpFit fit;
    Rng init(sub_seed(config.seed, kInitStream));
    fit.params.kind = ModelKind::mlp;
    fit.params.extractor.push_back(init_layer(config.hidden_units, X.cols(), init));
    fit.params.label_head.push_back(init_layer(1, config.hidden_units, init));

    double best_acc = -1.0;
    NetworkParams best;
    Rng rng(sub_seed(config.seed, kTrainStream));
    train_loop(fit.params, Xtr, ytr, {}, config, rng, [&](const NetworkParams& p, int step) {
        const Vector proba = predict_proba(p, Xval);
        double correct = 0;
        for (Index i = 0; i < proba.size(); ++i)
            correct += ((proba[i] > 0.5) == (yval[i] > 0.5)) ? 1.0 : 0.0;
        const double acc = correct / static_cast<double>(proba.size());
        fit.history.push_back({step, label_loss(p, Xtr, ytr, config.l2), acc});
        if (acc > best_acc) {
            best_acc = acc;
            best = p;
        }
    });
    fit.final_params = fit.params;
    fit.params = std::move(best);
    return fit;
}

DannFit dann_fit(const Eigen::Ref<const Matrix>& X, const Eigen::Ref<const Vector>& y,
                 const std::vector<Covariate>& confounders, const TrainConfig& config,
                 const ValidationSet& validation) {
    validate_train_inputs(X, y, config);
    std::vector<double> weights = config.adversary_loss_weights;
    if (weights.empty()) weights.assign(confounders.size(), 1.0);
    if (weights.size() != confounders.size())
        throw ConfigError("adversary_loss_weights length != number of confounders");
    if (validation.confounders.size() != confounders.size())
        throw DimensionMismatch("validation confounder count mismatch");
    std::vector<Vector> conf_values;
    for (const auto& c : confounders) {
        if (c.values.size() != X.rows())
            throw DimensionMismatch("confounder '" + c.name + "' length != sample count");
        if (c.type == CovariateType::binary) check_binary_label(c.values);
        conf_values.push_back(c.values);
    }

    DannFit fit;
    Rng init(sub_seed(config.seed, kInitStream));
    fit.params.kind = ModelKind::dann;
    fit.params.extractor.push_back(init_layer(config.hidden_units, X.cols(), init));
    fit.params.label_head.push_back(init_layer(1, config.hidden_units, init));
    for (const auto& c : confounders) {
        std::vector<Layer> head;
        head.push_back(init_layer(config.hidden_units, config.hidden_units, init));
        head.push_back(init_layer(1, config.hidden_units, init));
        fit.params.confounder_heads.push_back(std::move(head));
        fit.params.confounder_types.push_back(c.type);
    }

    double best_metric = std::numeric_limits<double>::infinity();
    NetworkParams best;
    Rng rng(sub_seed(config.seed, kTrainStream));
    train_loop(fit.params, X, y, conf_values, config, rng,
               [&](const NetworkParams& p, int step) {
                   LossRecord rec;
                   rec.step = step;
                   rec.label_loss = label_loss(p, validation.X, validation.y);
                   rec.confounder_losses = confounder_losses(p, validation.X,
                                                             validation.confounders);
                   rec.selection_metric = rec.label_loss;
                   for (size_t i = 0; i < weights.size(); ++i)
                       rec.selection_metric -= weights[i] * rec.confounder_losses[i];
                   fit.history.push_back(rec);
                   // smaller is better: low label loss, high confounder loss
                   if (rec.selection_metric < best_metric) {
                       best_metric = rec.selection_metric;
                       best = p;
                   }
               });
    fit.final_params = fit.params;
    fit.params = std::move(best);
    return fit;
}

namespace {

// Regularized incomplete beta via Lentz continued fraction.
double betacf(double a, double b, double x) {
    constexpr int kMaxIter = 300;
    constexpr double kFpMin = 1e-300;
    constexpr double kEpsCf = 3e-16;
    const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0, d = 1.0 - qab * x / qap;
    if (std::abs(d) < kFpMin) d = kFpMin;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= kMaxIter; ++m) {
        const int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kFpMin) d = kFpMin;
        c = 1.0 + aa / c;
        if (std::abs(c) < kFpMin) c = kFpMin;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kFpMin) d = kFpMin;
        c = 1.0 + aa / c;
        if (std::abs(c) < kFpMin) c = kFpMin;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < kEpsCf) break;
    }
    return h;
}

double reg_inc_beta(double a, double b, double x) {
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    const double ln = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) +
                      b * std::log1p(-x);
    const double front = std::exp(ln);
    if (x < (a + 1.0) / (a + b + 2.0)) return front * betacf(a, b, x) / a;
    return 1.0 - front * betacf(b, a, 1.0 - x) / b;
}

}  // namespace

double student_t_two_sided_p(double t, double df) {
    if (!std::isfinite(t)) return 0.0;
    return reg_inc_beta(0.5 * df, 0.5, df / (df + t * t));
}

std::vector<Index> ancova_filter(const Eigen::Ref<const Matrix>& X,
                                 const Eigen::Ref<const Vector>& y,
                                 const std::vector<Vector>& confounders, double alpha_level) {
    const Index n = X.rows();
    const Index q = static_cast<Index>(confounders.size());
    if (n <= q + 2) throw TooFewSamples("ancova_filter requires n > confounders + 2");
    check_binary_label(y);

    Matrix design(n, q + 1);
    design.col(0).setOnes();
    for (Index j = 0; j < q; ++j) {
        if (confounders[static_cast<size_t>(j)].size() != n)
            throw DimensionMismatch("confounder length != n");
        design.col(j + 1) = confounders[static_cast<size_t>(j)];
    }
    Eigen::ColPivHouseholderQR<Matrix> qr(design);
    if (qr.rank() < q + 1) throw DegenerateDesign("confounder design matrix is rank-deficient");

    Index n1 = 0;
    for (Index i = 0; i < n; ++i) n1 += y[i] > 0.5 ? 1 : 0;
    const Index n0 = n - n1;
    if (n0 == 0 || n1 == 0) throw SingleClass("ancova_filter: labels are all equal");
    const double df = static_cast<double>(n - 2 - q);

    std::vector<Index> kept;
    for (Index j = 0; j < X.cols(); ++j) {
        const Vector beta = qr.solve(X.col(j));
        const Vector e = X.col(j) - design * beta;

        double m0 = 0, m1 = 0;
        for (Index i = 0; i < n; ++i) (y[i] > 0.5 ? m1 : m0) += e[i];
        m0 /= static_cast<double>(n0);
        m1 /= static_cast<double>(n1);
        double ss0 = 0, ss1 = 0;
        for (Index i = 0; i < n; ++i) {
            const double d = e[i] - (y[i] > 0.5 ? m1 : m0);
            (y[i] > 0.5 ? ss1 : ss0) += d * d;
        }
        const double pooled = (ss0 + ss1) / static_cast<double>(n0 + n1 - 2);

        // residual variation at roundoff scale means the confounders explain
        // the feature entirely; treat as no residual association
        const double feat_var = (X.col(j).array() - X.col(j).mean()).square().sum();
        const double resid_var = e.squaredNorm();
        double p;
        if (resid_var <= 1e-12 * feat_var) {
            p = 1.0;
        } else if (pooled <= 0.0) {
            p = (m1 == m0) ? 1.0 : 0.0;
        } else {
            const double se = std::sqrt(pooled * (1.0 / n0 + 1.0 / n1));
            p = student_t_two_sided_p((m1 - m0) / se, df);
        }
        if (p < alpha_level) kept.push_back(j);
    }
    return kept;
}

Holdout stratified_holdout(const Eigen::Ref<const Vector>& y, double fraction,
                           std::uint64_t seed) {
    if (fraction <= 0.0 || fraction >= 1.0) throw ConfigError("holdout fraction must be in (0,1)");
    check_binary_label(y);
    std::vector<Index> cls[2];
    for (Index i = 0; i < y.size(); ++i) cls[y[i] > 0.5 ? 1 : 0].push_back(i);

    Rng rng(seed);
    Holdout ho;
    for (auto& idx : cls) {
        if (idx.empty()) continue;
        std::shuffle(idx.begin(), idx.end(), rng.engine());
        auto n_val = static_cast<size_t>(std::lround(fraction * static_cast<double>(idx.size())));
        if (idx.size() >= 2) n_val = std::clamp<size_t>(n_val, 1, idx.size() - 1);
        else n_val = 0;
        for (size_t i = 0; i < idx.size(); ++i)
            (i < n_val ? ho.val : ho.train).push_back(idx[i]);
    }
    std::sort(ho.train.begin(), ho.train.end());
    std::sort(ho.val.begin(), ho.val.end());
    if (ho.train.empty()) throw TooFewSamples("holdout left no training samples");
    return ho;
}

}  // namespace onion
