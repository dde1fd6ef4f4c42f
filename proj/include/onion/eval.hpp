#pragma once

#include "onion/confound.hpp"
#include "onion/models.hpp"
#include "onion/simulate.hpp"
#include "onion/types.hpp"

#include <array>
#include <limits>
#include <map>
#include <optional>

namespace onion {

// Rank-based Mann-Whitney AUC with half credit for ties.
double auc(const Eigen::Ref<const Vector>& scores, const Eigen::Ref<const Vector>& labels);

struct FoldPlan {
    int fold_count = 5;
    std::vector<int> assignments;  // per-sample fold index
};

// Stratified by label; fold sizes differ by at most one.
FoldPlan make_folds(const Eigen::Ref<const Vector>& labels, int fold_count, std::uint64_t seed);

// Largest test subset whose (group x label) joint cell proportions match the
// given training proportions, via m = min over cells of floor(count/prop) and
// largest-remainder apportionment. Cells are indexed group*2 + label.
std::vector<Index> confounded_test_subset(const std::vector<int>& test_groups,
                                          const Eigen::Ref<const Vector>& test_labels,
                                          const std::array<double, 4>& train_proportions,
                                          std::uint64_t seed);

std::array<double, 4> cell_proportions(const std::vector<int>& groups,
                                       const Eigen::Ref<const Vector>& labels);

struct MethodSpec {
    std::string name;  // logreg | logreg_onion | logreg_ancova | mlp | dann
    TrainConfig train;
    int pca_components = 0;      // 0 = no reduction
    double ancova_alpha = 0.05;  // logreg_ancova only
};

enum class DataSource { simulate, cohort, files };

struct ExperimentConfig {
    DataSource source = DataSource::simulate;

    SimConfig sim;
    Index sim_train_size = 1000;  // post-filter training quota
    Index sim_test_size = 1000;
    double sim_test_fraction = 0.5;
    bool sim_strict_balance = false;

    CohortConfig cohort;

    std::string matrix_file;  // files source; loaded by the caller
    std::string covariates_file;

    // training-fold confounding for cohort/files sources
    std::optional<BiasSubsampleRule> confounding;
    // grouping threshold for the confounded-subset cells; NaN resolves to
    // 0.5 for binary confounders and 0.0 for continuous ones
    double confounder_threshold = std::numeric_limits<double>::quiet_NaN();
    std::string confounder_name;  // default: first confounder

    int fold_count = 5;  // forced to 1 for the simulate source
    int trials = 1;
    std::uint64_t seed = 0;
    std::vector<MethodSpec> methods;

    bool depth_normalize = false;
    double depth_constant = 1e6;
    bool standardize = true;
    int workers = 0;  // 0 = hardware concurrency
};

struct CellResult {
    std::string method;
    int trial = 0;
    int fold = 0;
    double auc_entire = 0.0;
    double auc_confounded = 0.0;
    std::string error;  // empty on success
    std::uint64_t train_hash = 0;  // hash of the train/test index sets fed to
    std::uint64_t test_hash = 0;   // the method, identical across methods
};

struct Aggregate {
    double mean = 0.0;
    double sd = 0.0;
    double stderr_mean = 0.0;
    int cells = 0;
};

struct ExperimentReport {
    std::vector<CellResult> cells;  // ordered by (method, trial, fold)
    std::map<std::string, std::array<Aggregate, 2>> aggregates;  // [entire, confounded]
};

// Per trial x fold: build train/test data, preprocess fitted on train only,
// fit every method on identical train data, and score the entire test set
// plus its confounded subset. Failures are recorded per cell.
ExperimentReport run_experiment(const ExperimentConfig& config,
                                const Dataset* ingested = nullptr);

void recompute_aggregates(ExperimentReport& report);

}  // namespace onion
