#pragma once

#include "onion/basis.hpp"
#include "onion/confound.hpp"
#include "onion/eval.hpp"
#include "onion/models.hpp"
#include "onion/preprocess.hpp"
#include "onion/types.hpp"

#include <json.hpp>

#include <optional>
#include <string>

namespace onion::io {

using json = nlohmann::ordered_json;

// 17 significant digits so serialized values round-trip bit-exactly.
std::string format_double(double v);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& content);
std::uint64_t file_fnv64(const std::string& path);

// Headerless CSV of reals, one row per sample.
Matrix read_matrix_csv(const std::string& path);
void write_matrix_csv(const std::string& path, const Eigen::Ref<const Matrix>& X);

struct MatrixSidecar {
    Index n = 0;
    Index p = 0;
    std::vector<std::string> feature_names;  // optional
};

MatrixSidecar read_matrix_sidecar(const std::string& path);
void write_matrix_sidecar(const std::string& path, Index n, Index p,
                          const std::vector<std::string>& feature_names = {});

// Covariate CSV: headerless, one column per covariate (label included); the
// sidecar declares column names, types, and which column is the label.
CovariateSet read_covariates(const std::string& csv_path, const std::string& sidecar_path);
void write_covariates(const std::string& csv_path, const std::string& sidecar_path,
                      const CovariateSet& cov);

void write_basis_json(const std::string& path, const OrthonormalBasis& basis,
                      const OnionFitReport& report);
OnionFit read_basis_json(const std::string& path);

// A trained model plus everything needed to apply it to raw unseen data.
struct ModelBundle {
    NetworkParams params;
    std::optional<PreprocessorState> preprocess;
    std::optional<OrthonormalBasis> basis;
    bool depth_normalize = false;
    json config_echo;
};

void write_model_json(const std::string& path, const ModelBundle& bundle);
ModelBundle read_model_json(const std::string& path);

// CSV with header gc,expected_fraction,observed_fraction covering 0..100.
GcProfile read_gc_profile_csv(const std::string& path);
void write_gc_profile_csv(const std::string& path, const GcProfile& profile);

BiasSubsampleRule rule_from_json(const json& j, const std::string& path = "$");
json rule_to_json(const BiasSubsampleRule& rule);

ExperimentConfig experiment_config_from_json(const json& j);
json experiment_config_to_json(const ExperimentConfig& config);

json report_to_json(const ExperimentReport& report);
// Flat CSV with columns method,trial,fold,test_set_kind,auc.
std::string report_csv(const ExperimentReport& report);
// Mean AUC (SD) per method on the entire and confounded test sets.
std::string summary_table(const ExperimentReport& report,
                          const std::vector<MethodSpec>& methods);

std::string loss_history_csv(const std::vector<TrainPoint>& history);
std::string loss_history_csv(const std::vector<MlpCheckpoint>& history);
std::string loss_history_csv(const std::vector<LossRecord>& history,
                             const std::vector<std::string>& confounder_names);

}  // namespace onion::io
