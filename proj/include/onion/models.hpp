#pragma once

#include "onion/rng.hpp"
#include "onion/types.hpp"

namespace onion {

struct TrainConfig {
    double learning_rate = 0.005;
    int batch_size = 64;
    int iterations = 6000;
    int hidden_units = 20;  // 5 for the simulation experiments
    int adversary_steps_per_label_step = 3;
    std::vector<double> adversary_loss_weights;  // selection-metric weights; default 1.0 each
    double l2 = 0.0;
    int checkpoint_every = 100;
    double validation_fraction = 0.2;
    std::uint64_t seed = 0;
};

struct Layer {
    Matrix W;  // out x in
    Vector b;  // out
};

enum class ModelKind { logreg, mlp, dann };

// Shared feature extractor plus label head; DANN adds one head per
// confounder, each reading the extractor's hidden layer.
struct NetworkParams {
    ModelKind kind = ModelKind::logreg;
    std::vector<Layer> extractor;   // ReLU after every layer
    std::vector<Layer> label_head;  // ReLU between layers; final output is a logit
    std::vector<std::vector<Layer>> confounder_heads;
    std::vector<CovariateType> confounder_types;
};

Vector predict_logits(const NetworkParams& params, const Eigen::Ref<const Matrix>& X);
// Sigmoid of the logits, clamped into the open interval (0, 1).
Vector predict_proba(const NetworkParams& params, const Eigen::Ref<const Matrix>& X);

double label_loss(const NetworkParams& params, const Eigen::Ref<const Matrix>& X,
                  const Eigen::Ref<const Vector>& y, double l2 = 0.0);
// Cross entropy for binary confounders, mean squared error for continuous.
std::vector<double> confounder_losses(const NetworkParams& params,
                                      const Eigen::Ref<const Matrix>& X,
                                      const std::vector<Vector>& confounders);

struct LabelGrads {
    double loss = 0.0;
    std::vector<Layer> extractor;
    std::vector<Layer> label_head;
};

struct AdversaryGrads {
    std::vector<double> losses;     // per confounder
    std::vector<Layer> extractor;   // gradient of the summed confounder loss
    std::vector<std::vector<Layer>> heads;
};

// Analytic gradients of the label loss L_k w.r.t. extractor and label head.
LabelGrads label_gradients(const NetworkParams& params, const Eigen::Ref<const Matrix>& X,
                           const Eigen::Ref<const Vector>& y, double l2 = 0.0);

// Analytic gradients of each confounder loss L_i w.r.t. its head, and of
// sum_i L_i w.r.t. the extractor. The adversarial trainer ascends the
// extractor along this gradient (gradient reversal) while the heads descend.
AdversaryGrads adversary_gradients(const NetworkParams& params, const Eigen::Ref<const Matrix>& X,
                                   const std::vector<Vector>& confounders);

struct TrainPoint {
    int step = 0;
    double train_loss = 0.0;
};

struct MlpCheckpoint {
    int step = 0;
    double train_loss = 0.0;
    double val_accuracy = 0.0;
};

struct LossRecord {
    int step = 0;
    double label_loss = 0.0;
    std::vector<double> confounder_losses;
    double selection_metric = 0.0;  // label_loss - sum_i alpha_i * confounder_losses[i]
};

struct LogregFit {
    NetworkParams params;
    std::vector<TrainPoint> history;  // full-training-set loss every checkpoint_every steps
};

struct MlpFit {
    NetworkParams params;        // checkpoint with the best validation accuracy
    NetworkParams final_params;  // parameters after the last iteration
    std::vector<MlpCheckpoint> history;
};

struct ValidationSet {
    Matrix X;
    Vector y;
    std::vector<Vector> confounders;
};

struct DannFit {
    NetworkParams params;        // checkpoint with the smallest selection metric
    NetworkParams final_params;  // parameters after the last iteration
    std::vector<LossRecord> history;
};

LogregFit logreg_fit(const Eigen::Ref<const Matrix>& X, const Eigen::Ref<const Vector>& y,
                     const TrainConfig& config);

// Holds out a stratified validation split internally (validation_fraction of
// the rows, seeded) and keeps the checkpoint with the best accuracy on it.
MlpFit mlp_fit(const Eigen::Ref<const Matrix>& X, const Eigen::Ref<const Vector>& y,
               const TrainConfig& config);

// Alternating updates: one label step (extractor + label head descend L_k),
// then adversary_steps_per_label_step confounder steps (heads descend L_i,
// extractor ascends sum_i L_i). With zero confounders this reduces to the
// mlp_fit parameter trajectory exactly.
DannFit dann_fit(const Eigen::Ref<const Matrix>& X, const Eigen::Ref<const Vector>& y,
                 const std::vector<Covariate>& confounders, const TrainConfig& config,
                 const ValidationSet& validation);

// Per feature: residualize on the confounders, then pooled two-sample t-test
// of the residuals grouped by the label. Keeps features with p < alpha_level.
std::vector<Index> ancova_filter(const Eigen::Ref<const Matrix>& X,
                                 const Eigen::Ref<const Vector>& y,
                                 const std::vector<Vector>& confounders,
                                 double alpha_level = 0.05);

double student_t_two_sided_p(double t, double df);

struct Holdout {
    std::vector<Index> train;
    std::vector<Index> val;
};

// Stratified by label; both sides keep at least one member of every class.
Holdout stratified_holdout(const Eigen::Ref<const Vector>& y, double fraction,
                           std::uint64_t seed);

// The exact split mlp_fit carves out internally for checkpoint selection;
// callers preparing a DANN validation set use this so both models train on
// the same rows.
Holdout training_holdout(const Eigen::Ref<const Vector>& y, const TrainConfig& config);

}  // namespace onion
