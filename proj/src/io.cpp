#include "onion/io.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace onion::io {

namespace {

[[noreturn]] void cfg_fail(const std::string& path, const std::string& msg) {
    throw ConfigError("at " + path + ": " + msg);
}

const json& member(const json& j, const std::string& path, const char* key) {
    if (!j.is_object()) cfg_fail(path, "expected an object");
    auto it = j.find(key);
    if (it == j.end()) cfg_fail(path + "." + key, "missing required field");
    return *it;
}

double get_number(const json& j, const std::string& path) {
    if (!j.is_number()) cfg_fail(path, "expected a number");
    return j.get<double>();
}

long get_integer(const json& j, const std::string& path) {
    if (!j.is_number_integer()) cfg_fail(path, "expected an integer");
    return j.get<long>();
}

bool get_bool(const json& j, const std::string& path) {
    if (!j.is_boolean()) cfg_fail(path, "expected a boolean");
    return j.get<bool>();
}

std::string get_string(const json& j, const std::string& path) {
    if (!j.is_string()) cfg_fail(path, "expected a string");
    return j.get<std::string>();
}

std::vector<double> get_number_list(const json& j, const std::string& path) {
    if (!j.is_array()) cfg_fail(path, "expected an array of numbers");
    std::vector<double> out;
    for (size_t i = 0; i < j.size(); ++i)
        out.push_back(get_number(j[i], path + "[" + std::to_string(i) + "]"));
    return out;
}

std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> fields;
    size_t start = 0;
    for (;;) {
        const size_t comma = line.find(',', start);
        if (comma == std::string::npos) {
            fields.push_back(line.substr(start));
            return fields;
        }
        fields.push_back(line.substr(start, comma - start));
        start = comma + 1;
    }
}

double parse_double(const std::string& s, const std::string& where) {
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end == s.c_str() || *end != '\0') throw Error(where + ": cannot parse '" + s + "'");
    return v;
}

json json_parse(const std::string& text, const std::string& path) {
    json j = json::parse(text, nullptr, false);
    if (j.is_discarded()) throw ConfigError(path + ": invalid JSON");
    return j;
}

}  // namespace

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write file: " + path);
    out << content;
    if (!out) throw Error("write failed: " + path);
}

std::uint64_t file_fnv64(const std::string& path) {
    const std::string data = read_file(path);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

Matrix read_matrix_csv(const std::string& path) {
    const std::string text = read_file(path);
    std::vector<std::vector<double>> rows;
    std::istringstream in(text);
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto fields = split_line(line);
        std::vector<double> row;
        row.reserve(fields.size());
        for (const auto& f : fields)
            row.push_back(parse_double(f, path + ":" + std::to_string(lineno)));
        if (!rows.empty() && rows.front().size() != row.size())
            throw Error(path + ":" + std::to_string(lineno) + ": inconsistent column count");
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw Error(path + ": empty matrix");
    Matrix X(static_cast<Index>(rows.size()), static_cast<Index>(rows.front().size()));
    for (Index i = 0; i < X.rows(); ++i)
        for (Index j = 0; j < X.cols(); ++j)
            X(i, j) = rows[static_cast<size_t>(i)][static_cast<size_t>(j)];
    return X;
}

void write_matrix_csv(const std::string& path, const Eigen::Ref<const Matrix>& X) {
    std::string out;
    out.reserve(static_cast<size_t>(X.size()) * 12);
    for (Index i = 0; i < X.rows(); ++i) {
        for (Index j = 0; j < X.cols(); ++j) {
            if (j) out += ',';
            out += format_double(X(i, j));
        }
        out += '\n';
    }
    write_file(path, out);
}

MatrixSidecar read_matrix_sidecar(const std::string& path) {
    const json j = json_parse(read_file(path), path);
    MatrixSidecar sc;
    sc.n = get_integer(member(j, "$", "n"), "$.n");
    sc.p = get_integer(member(j, "$", "p"), "$.p");
    if (j.contains("feature_names"))
        for (const auto& name : j["feature_names"]) sc.feature_names.push_back(name);
    return sc;
}

void write_matrix_sidecar(const std::string& path, Index n, Index p,
                          const std::vector<std::string>& feature_names) {
    json j;
    j["n"] = n;
    j["p"] = p;
    if (!feature_names.empty()) j["feature_names"] = feature_names;
    write_file(path, j.dump(2) + "\n");
}

CovariateSet read_covariates(const std::string& csv_path, const std::string& sidecar_path) {
    const Matrix table = read_matrix_csv(csv_path);
    const json j = json_parse(read_file(sidecar_path), sidecar_path);
    const json& cols = member(j, "$", "columns");
    if (!cols.is_array()) cfg_fail("$.columns", "expected an array");
    if (static_cast<Index>(cols.size()) != table.cols())
        throw DimensionMismatch(csv_path + ": sidecar declares " + std::to_string(cols.size()) +
                                " columns, CSV has " + std::to_string(table.cols()));
    const std::string label_name = get_string(member(j, "$", "label"), "$.label");

    CovariateSet cov;
    bool found_label = false;
    for (size_t c = 0; c < cols.size(); ++c) {
        const std::string cpath = "$.columns[" + std::to_string(c) + "]";
        const std::string name = get_string(member(cols[c], cpath, "name"), cpath + ".name");
        const std::string type = get_string(member(cols[c], cpath, "type"), cpath + ".type");
        if (type != "continuous" && type != "binary")
            cfg_fail(cpath + ".type", "expected 'continuous' or 'binary'");
        if (name == label_name) {
            cov.label = table.col(static_cast<Index>(c));
            check_binary_label(cov.label);
            found_label = true;
        } else {
            cov.confounders.push_back(
                {name, type == "binary" ? CovariateType::binary : CovariateType::continuous,
                 table.col(static_cast<Index>(c))});
        }
    }
    if (!found_label) cfg_fail("$.label", "label column '" + label_name + "' not declared");
    return cov;
}

void write_covariates(const std::string& csv_path, const std::string& sidecar_path,
                      const CovariateSet& cov) {
    const Index n = cov.label.size();
    Matrix table(n, static_cast<Index>(cov.confounders.size()) + 1);
    json cols = json::array();
    Index c = 0;
    for (const auto& conf : cov.confounders) {
        table.col(c++) = conf.values;
        cols.push_back({{"name", conf.name},
                        {"type", conf.type == CovariateType::binary ? "binary" : "continuous"}});
    }
    table.col(c) = cov.label;
    cols.push_back({{"name", "label"}, {"type", "binary"}});
    write_matrix_csv(csv_path, table);
    json j;
    j["columns"] = cols;
    j["label"] = "label";
    write_file(sidecar_path, j.dump(2) + "\n");
}

void write_basis_json(const std::string& path, const OrthonormalBasis& basis,
                      const OnionFitReport& report) {
    json j;
    j["p"] = basis.p();
    j["m"] = basis.m();
    json columns = json::array();
    for (Index c = 0; c < basis.m(); ++c) {
        json col = json::array();
        for (Index r = 0; r < basis.p(); ++r) col.push_back(basis.W(r, c));
        columns.push_back(std::move(col));
    }
    j["columns"] = std::move(columns);
    j["sign_convention"] = "YtXw_nonneg";
    j["fit_report"] = {{"iterations", report.iterations},
                       {"converged", report.converged},
                       {"degenerate", report.degenerate},
                       {"captured_covariance", report.captured_covariance},
                       {"column_index", report.column_index}};
    write_file(path, j.dump(2) + "\n");
}

OnionFit read_basis_json(const std::string& path) {
    const json j = json_parse(read_file(path), path);
    OnionFit fit;
    const Index p = get_integer(member(j, "$", "p"), "$.p");
    const Index m = get_integer(member(j, "$", "m"), "$.m");
    const json& columns = member(j, "$", "columns");
    if (!columns.is_array() || static_cast<Index>(columns.size()) != m)
        cfg_fail("$.columns", "expected " + std::to_string(m) + " columns");
    fit.basis.W.resize(p, m);
    for (Index c = 0; c < m; ++c) {
        const auto& col = columns[static_cast<size_t>(c)];
        if (!col.is_array() || static_cast<Index>(col.size()) != p)
            cfg_fail("$.columns[" + std::to_string(c) + "]", "expected length " + std::to_string(p));
        for (Index r = 0; r < p; ++r) fit.basis.W(r, c) = col[static_cast<size_t>(r)].get<double>();
    }
    if (j.contains("fit_report")) {
        const json& fr = j["fit_report"];
        auto ints = [&](const char* key) {
            std::vector<int> v;
            if (fr.contains(key)) for (const auto& x : fr[key]) v.push_back(x.get<int>());
            return v;
        };
        auto bools = [&](const char* key) {
            std::vector<bool> v;
            if (fr.contains(key)) for (const auto& x : fr[key]) v.push_back(x.get<bool>());
            return v;
        };
        fit.report.iterations = ints("iterations");
        fit.report.converged = bools("converged");
        fit.report.degenerate = bools("degenerate");
        if (fr.contains("captured_covariance"))
            for (const auto& x : fr["captured_covariance"])
                fit.report.captured_covariance.push_back(x.get<double>());
        fit.report.column_index = ints("column_index");
    }
    return fit;
}

namespace {

json layer_to_json(const Layer& layer) {
    json j;
    j["rows"] = layer.W.rows();
    j["cols"] = layer.W.cols();
    json w = json::array();
    for (Index r = 0; r < layer.W.rows(); ++r)
        for (Index c = 0; c < layer.W.cols(); ++c) w.push_back(layer.W(r, c));
    j["weights"] = std::move(w);
    json b = json::array();
    for (Index r = 0; r < layer.b.size(); ++r) b.push_back(layer.b[r]);
    j["bias"] = std::move(b);
    return j;
}

Layer layer_from_json(const json& j, const std::string& path) {
    Layer layer;
    const Index rows = get_integer(member(j, path, "rows"), path + ".rows");
    const Index cols = get_integer(member(j, path, "cols"), path + ".cols");
    const json& w = member(j, path, "weights");
    if (!w.is_array() || static_cast<Index>(w.size()) != rows * cols)
        cfg_fail(path + ".weights", "expected " + std::to_string(rows * cols) + " entries");
    layer.W.resize(rows, cols);
    size_t at = 0;
    for (Index r = 0; r < rows; ++r)
        for (Index c = 0; c < cols; ++c) layer.W(r, c) = w[at++].get<double>();
    const json& b = member(j, path, "bias");
    if (!b.is_array() || static_cast<Index>(b.size()) != rows)
        cfg_fail(path + ".bias", "expected " + std::to_string(rows) + " entries");
    layer.b.resize(rows);
    for (Index r = 0; r < rows; ++r) layer.b[r] = b[static_cast<size_t>(r)].get<double>();
    return layer;
}

json stack_to_json(const std::vector<Layer>& layers) {
    json j = json::array();
    for (const auto& l : layers) j.push_back(layer_to_json(l));
    return j;
}

std::vector<Layer> stack_from_json(const json& j, const std::string& path) {
    if (!j.is_array()) cfg_fail(path, "expected an array of layers");
    std::vector<Layer> layers;
    for (size_t i = 0; i < j.size(); ++i)
        layers.push_back(layer_from_json(j[i], path + "[" + std::to_string(i) + "]"));
    return layers;
}

json vector_to_json(const Eigen::Ref<const Vector>& v) {
    json j = json::array();
    for (Index i = 0; i < v.size(); ++i) j.push_back(v[i]);
    return j;
}

json rowvector_to_json(const RowVector& v) {
    json j = json::array();
    for (Index i = 0; i < v.size(); ++i) j.push_back(v[i]);
    return j;
}

RowVector rowvector_from_json(const json& j, const std::string& path) {
    if (!j.is_array()) cfg_fail(path, "expected an array of numbers");
    RowVector v(static_cast<Index>(j.size()));
    for (Index i = 0; i < v.size(); ++i) v[i] = j[static_cast<size_t>(i)].get<double>();
    return v;
}

}  // namespace

void write_model_json(const std::string& path, const ModelBundle& bundle) {
    json j;
    switch (bundle.params.kind) {
        case ModelKind::logreg: j["kind"] = "logreg"; break;
        case ModelKind::mlp: j["kind"] = "mlp"; break;
        case ModelKind::dann: j["kind"] = "dann"; break;
    }
    j["extractor"] = stack_to_json(bundle.params.extractor);
    j["label_head"] = stack_to_json(bundle.params.label_head);
    json heads = json::array();
    for (const auto& h : bundle.params.confounder_heads) heads.push_back(stack_to_json(h));
    j["confounder_heads"] = std::move(heads);
    json types = json::array();
    for (auto t : bundle.params.confounder_types)
        types.push_back(t == CovariateType::binary ? "binary" : "continuous");
    j["confounder_types"] = std::move(types);
    j["depth_normalize"] = bundle.depth_normalize;
    if (bundle.preprocess) {
        const auto& st = *bundle.preprocess;
        std::vector<int> zv(st.zero_variance.begin(), st.zero_variance.end());
        j["preprocess"] = {{"mean", rowvector_to_json(st.mean)},
                           {"stddev", rowvector_to_json(st.stddev)},
                           {"clip_threshold", rowvector_to_json(st.clip_threshold)},
                           {"zero_variance", zv},
                           {"depth_constant", st.depth_constant}};
    } else {
        j["preprocess"] = nullptr;
    }
    if (bundle.basis) {
        json columns = json::array();
        for (Index c = 0; c < bundle.basis->m(); ++c)
            columns.push_back(vector_to_json(bundle.basis->W.col(c)));
        j["basis"] = {{"p", bundle.basis->p()}, {"m", bundle.basis->m()},
                      {"columns", std::move(columns)}, {"sign_convention", "YtXw_nonneg"}};
    } else {
        j["basis"] = nullptr;
    }
    j["config"] = bundle.config_echo;
    write_file(path, j.dump(2) + "\n");
}

ModelBundle read_model_json(const std::string& path) {
    const json j = json_parse(read_file(path), path);
    ModelBundle bundle;
    const std::string kind = get_string(member(j, "$", "kind"), "$.kind");
    if (kind == "logreg") bundle.params.kind = ModelKind::logreg;
    else if (kind == "mlp") bundle.params.kind = ModelKind::mlp;
    else if (kind == "dann") bundle.params.kind = ModelKind::dann;
    else cfg_fail("$.kind", "unknown model kind '" + kind + "'");
    bundle.params.extractor = stack_from_json(member(j, "$", "extractor"), "$.extractor");
    bundle.params.label_head = stack_from_json(member(j, "$", "label_head"), "$.label_head");
    if (j.contains("confounder_heads"))
        for (size_t i = 0; i < j["confounder_heads"].size(); ++i)
            bundle.params.confounder_heads.push_back(stack_from_json(
                j["confounder_heads"][i], "$.confounder_heads[" + std::to_string(i) + "]"));
    if (j.contains("confounder_types"))
        for (const auto& t : j["confounder_types"])
            bundle.params.confounder_types.push_back(
                t.get<std::string>() == "binary" ? CovariateType::binary
                                                 : CovariateType::continuous);
    if (j.contains("depth_normalize") && j["depth_normalize"].is_boolean())
        bundle.depth_normalize = j["depth_normalize"].get<bool>();
    if (j.contains("preprocess") && !j["preprocess"].is_null()) {
        const json& pp = j["preprocess"];
        PreprocessorState st;
        st.mean = rowvector_from_json(member(pp, "$.preprocess", "mean"), "$.preprocess.mean");
        st.stddev =
            rowvector_from_json(member(pp, "$.preprocess", "stddev"), "$.preprocess.stddev");
        st.clip_threshold = rowvector_from_json(member(pp, "$.preprocess", "clip_threshold"),
                                                "$.preprocess.clip_threshold");
        for (const auto& z : member(pp, "$.preprocess", "zero_variance"))
            st.zero_variance.push_back(z.get<int>() != 0);
        st.depth_constant =
            get_number(member(pp, "$.preprocess", "depth_constant"), "$.preprocess.depth_constant");
        bundle.preprocess = std::move(st);
    }
    if (j.contains("basis") && !j["basis"].is_null()) {
        const json& bj = j["basis"];
        OrthonormalBasis basis;
        const Index p = get_integer(member(bj, "$.basis", "p"), "$.basis.p");
        const Index m = get_integer(member(bj, "$.basis", "m"), "$.basis.m");
        basis.W.resize(p, m);
        const json& columns = member(bj, "$.basis", "columns");
        for (Index c = 0; c < m; ++c)
            for (Index r = 0; r < p; ++r)
                basis.W(r, c) = columns[static_cast<size_t>(c)][static_cast<size_t>(r)].get<double>();
        bundle.basis = std::move(basis);
    }
    if (j.contains("config")) bundle.config_echo = j["config"];
    return bundle;
}

GcProfile read_gc_profile_csv(const std::string& path) {
    const std::string text = read_file(path);
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw Error(path + ": empty GC profile");
    GcProfile profile;
    profile.expected_fraction = Vector::Zero(101);
    profile.observed_fraction = Vector::Zero(101);
    std::vector<bool> seen(101, false);
    size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto fields = split_line(line);
        const std::string where = path + ":" + std::to_string(lineno);
        if (fields.size() != 3) throw Error(where + ": expected 3 columns");
        const auto gc = static_cast<long>(parse_double(fields[0], where));
        if (gc < 0 || gc > 100) throw Error(where + ": gc out of range 0..100");
        profile.expected_fraction[gc] = parse_double(fields[1], where);
        profile.observed_fraction[gc] = parse_double(fields[2], where);
        seen[static_cast<size_t>(gc)] = true;
    }
    for (size_t gc = 0; gc < seen.size(); ++gc)
        if (!seen[gc]) throw Error(path + ": missing gc row " + std::to_string(gc));
    validate(profile);
    return profile;
}

void write_gc_profile_csv(const std::string& path, const GcProfile& profile) {
    std::string out = "gc,expected_fraction,observed_fraction\n";
    for (Index gc = 0; gc <= 100; ++gc) {
        out += std::to_string(gc);
        out += ',';
        out += format_double(profile.expected_fraction[gc]);
        out += ',';
        out += format_double(profile.observed_fraction[gc]);
        out += '\n';
    }
    write_file(path, out);
}

BiasSubsampleRule rule_from_json(const json& j, const std::string& path) {
    BiasSubsampleRule rule;
    rule.group_covariate = get_string(member(j, path, "group_covariate"),
                                      path + ".group_covariate");
    rule.threshold = get_number(member(j, path, "threshold"), path + ".threshold");
    rule.drop_probability = get_number(member(j, path, "drop_probability"),
                                       path + ".drop_probability");
    if (rule.drop_probability < 0.0 || rule.drop_probability > 1.0)
        cfg_fail(path + ".drop_probability", "must be in [0,1]");
    const json& cells = member(j, path, "drop_cells");
    if (!cells.is_array()) cfg_fail(path + ".drop_cells", "expected an array of [group,label]");
    for (size_t i = 0; i < cells.size(); ++i) {
        const std::string cpath = path + ".drop_cells[" + std::to_string(i) + "]";
        if (!cells[i].is_array() || cells[i].size() != 2) cfg_fail(cpath, "expected [group,label]");
        const int g = static_cast<int>(get_integer(cells[i][0], cpath + "[0]"));
        const int l = static_cast<int>(get_integer(cells[i][1], cpath + "[1]"));
        if ((g != 0 && g != 1) || (l != 0 && l != 1)) cfg_fail(cpath, "entries must be 0 or 1");
        rule.drop_cells.emplace_back(g, l);
    }
    return rule;
}

json rule_to_json(const BiasSubsampleRule& rule) {
    json cells = json::array();
    for (const auto& [g, l] : rule.drop_cells) cells.push_back({g, l});
    return {{"group_covariate", rule.group_covariate},
            {"threshold", rule.threshold},
            {"drop_probability", rule.drop_probability},
            {"drop_cells", std::move(cells)}};
}

namespace {

TrainConfig train_config_from_json(const json& j, const std::string& path) {
    TrainConfig cfg;
    if (j.contains("learning_rate")) cfg.learning_rate = get_number(j["learning_rate"], path + ".learning_rate");
    if (j.contains("batch_size")) cfg.batch_size = static_cast<int>(get_integer(j["batch_size"], path + ".batch_size"));
    if (j.contains("iterations")) cfg.iterations = static_cast<int>(get_integer(j["iterations"], path + ".iterations"));
    if (j.contains("hidden_units")) cfg.hidden_units = static_cast<int>(get_integer(j["hidden_units"], path + ".hidden_units"));
    if (j.contains("adversary_steps_per_label_step"))
        cfg.adversary_steps_per_label_step = static_cast<int>(
            get_integer(j["adversary_steps_per_label_step"], path + ".adversary_steps_per_label_step"));
    if (j.contains("adversary_loss_weights"))
        cfg.adversary_loss_weights = get_number_list(j["adversary_loss_weights"], path + ".adversary_loss_weights");
    if (j.contains("l2")) cfg.l2 = get_number(j["l2"], path + ".l2");
    if (j.contains("checkpoint_every")) cfg.checkpoint_every = static_cast<int>(get_integer(j["checkpoint_every"], path + ".checkpoint_every"));
    if (j.contains("validation_fraction")) cfg.validation_fraction = get_number(j["validation_fraction"], path + ".validation_fraction");
    if (cfg.learning_rate <= 0) cfg_fail(path + ".learning_rate", "must be positive");
    if (cfg.batch_size < 1 || cfg.iterations < 1 || cfg.hidden_units < 1 ||
        cfg.adversary_steps_per_label_step < 1 || cfg.checkpoint_every < 1)
        cfg_fail(path, "integer fields must be positive");
    return cfg;
}

json train_config_to_json(const TrainConfig& cfg) {
    json j;
    j["learning_rate"] = cfg.learning_rate;
    j["batch_size"] = cfg.batch_size;
    j["iterations"] = cfg.iterations;
    j["hidden_units"] = cfg.hidden_units;
    j["adversary_steps_per_label_step"] = cfg.adversary_steps_per_label_step;
    j["adversary_loss_weights"] = cfg.adversary_loss_weights;
    j["l2"] = cfg.l2;
    j["checkpoint_every"] = cfg.checkpoint_every;
    j["validation_fraction"] = cfg.validation_fraction;
    return j;
}

SimConfig sim_config_from_json(const json& j, const std::string& path) {
    SimConfig cfg;
    if (j.contains("d")) cfg.d = static_cast<int>(get_integer(j["d"], path + ".d"));
    if (j.contains("p")) cfg.p = static_cast<int>(get_integer(j["p"], path + ".p"));
    if (j.contains("sigma")) cfg.sigma = get_number(j["sigma"], path + ".sigma");
    if (j.contains("k")) cfg.k = static_cast<int>(get_integer(j["k"], path + ".k"));
    if (j.contains("concentration"))
        cfg.concentration = get_number_list(j["concentration"], path + ".concentration");
    return cfg;
}

}  // namespace

ExperimentConfig experiment_config_from_json(const json& j) {
    ExperimentConfig cfg;
    if (!j.is_object()) cfg_fail("$", "expected a config object");
    cfg.seed = static_cast<std::uint64_t>(get_integer(member(j, "$", "seed"), "$.seed"));
    if (j.contains("trials")) cfg.trials = static_cast<int>(get_integer(j["trials"], "$.trials"));
    if (j.contains("fold_count"))
        cfg.fold_count = static_cast<int>(get_integer(j["fold_count"], "$.fold_count"));
    if (j.contains("workers")) cfg.workers = static_cast<int>(get_integer(j["workers"], "$.workers"));

    const json& data = member(j, "$", "data");
    const std::string source = get_string(member(data, "$.data", "source"), "$.data.source");
    if (source == "simulate") {
        cfg.source = DataSource::simulate;
        if (data.contains("sim")) cfg.sim = sim_config_from_json(data["sim"], "$.data.sim");
        cfg.sim_train_size = get_integer(member(data, "$.data", "train_size"), "$.data.train_size");
        cfg.sim_test_size = get_integer(member(data, "$.data", "test_size"), "$.data.test_size");
        if (cfg.sim_train_size < 1) cfg_fail("$.data.train_size", "must be positive");
        if (cfg.sim_test_size < 1) cfg_fail("$.data.test_size", "must be positive");
        if (data.contains("test_fraction"))
            cfg.sim_test_fraction = get_number(data["test_fraction"], "$.data.test_fraction");
        if (data.contains("strict_balance"))
            cfg.sim_strict_balance = get_bool(data["strict_balance"], "$.data.strict_balance");
        cfg.sim.n = cfg.sim_train_size;
    } else if (source == "cohort") {
        cfg.source = DataSource::cohort;
        if (data.contains("cohort")) {
            const json& c = data["cohort"];
            const std::string cp = "$.data.cohort";
            if (c.contains("n")) cfg.cohort.n = get_integer(c["n"], cp + ".n");
            if (c.contains("proxy_features"))
                cfg.cohort.proxy_features = static_cast<int>(get_integer(c["proxy_features"], cp + ".proxy_features"));
            if (c.contains("label_features"))
                cfg.cohort.label_features = static_cast<int>(get_integer(c["label_features"], cp + ".label_features"));
            if (c.contains("noise_features"))
                cfg.cohort.noise_features = static_cast<int>(get_integer(c["noise_features"], cp + ".noise_features"));
            if (c.contains("proxy_noise")) cfg.cohort.proxy_noise = get_number(c["proxy_noise"], cp + ".proxy_noise");
            if (c.contains("label_signal")) cfg.cohort.label_signal = get_number(c["label_signal"], cp + ".label_signal");
        }
    } else if (source == "files") {
        cfg.source = DataSource::files;
        cfg.matrix_file = get_string(member(data, "$.data", "matrix"), "$.data.matrix");
        cfg.covariates_file = get_string(member(data, "$.data", "covariates"), "$.data.covariates");
    } else {
        cfg_fail("$.data.source", "expected 'simulate', 'cohort', or 'files'");
    }

    if (j.contains("confounding") && !j["confounding"].is_null())
        cfg.confounding = rule_from_json(j["confounding"], "$.confounding");
    if (j.contains("confounder") && !j["confounder"].is_null()) {
        const json& c = j["confounder"];
        if (c.contains("name")) cfg.confounder_name = get_string(c["name"], "$.confounder.name");
        if (c.contains("threshold"))
            cfg.confounder_threshold = get_number(c["threshold"], "$.confounder.threshold");
    }
    if (j.contains("preprocess") && !j["preprocess"].is_null()) {
        const json& pp = j["preprocess"];
        if (pp.contains("depth_normalize"))
            cfg.depth_normalize = get_bool(pp["depth_normalize"], "$.preprocess.depth_normalize");
        if (pp.contains("depth_constant"))
            cfg.depth_constant = get_number(pp["depth_constant"], "$.preprocess.depth_constant");
        if (pp.contains("standardize"))
            cfg.standardize = get_bool(pp["standardize"], "$.preprocess.standardize");
    }

    const json& methods = member(j, "$", "methods");
    if (!methods.is_array() || methods.empty()) cfg_fail("$.methods", "expected a non-empty array");
    for (size_t i = 0; i < methods.size(); ++i) {
        const std::string mpath = "$.methods[" + std::to_string(i) + "]";
        MethodSpec spec;
        spec.name = get_string(member(methods[i], mpath, "name"), mpath + ".name");
        if (spec.name != "logreg" && spec.name != "logreg_onion" && spec.name != "logreg_ancova" &&
            spec.name != "mlp" && spec.name != "dann")
            cfg_fail(mpath + ".name", "unknown method '" + spec.name + "'");
        if (methods[i].contains("train"))
            spec.train = train_config_from_json(methods[i]["train"], mpath + ".train");
        if (methods[i].contains("pca_components"))
            spec.pca_components = static_cast<int>(
                get_integer(methods[i]["pca_components"], mpath + ".pca_components"));
        if (methods[i].contains("ancova_alpha"))
            spec.ancova_alpha = get_number(methods[i]["ancova_alpha"], mpath + ".ancova_alpha");
        cfg.methods.push_back(std::move(spec));
    }

    if (cfg.trials < 1) cfg_fail("$.trials", "must be >= 1");
    if (cfg.source != DataSource::simulate && cfg.fold_count < 2)
        cfg_fail("$.fold_count", "must be >= 2 for cohort/files sources");
    return cfg;
}

json experiment_config_to_json(const ExperimentConfig& cfg) {
    json j;
    j["seed"] = cfg.seed;
    j["trials"] = cfg.trials;
    j["fold_count"] = cfg.fold_count;
    j["workers"] = cfg.workers;
    json data;
    if (cfg.source == DataSource::simulate) {
        data["source"] = "simulate";
        data["sim"] = {{"d", cfg.sim.d},
                       {"p", cfg.sim.p},
                       {"sigma", cfg.sim.sigma},
                       {"k", cfg.sim.k},
                       {"concentration", cfg.sim.concentration}};
        data["train_size"] = cfg.sim_train_size;
        data["test_size"] = cfg.sim_test_size;
        data["test_fraction"] = cfg.sim_test_fraction;
        data["strict_balance"] = cfg.sim_strict_balance;
    } else if (cfg.source == DataSource::cohort) {
        data["source"] = "cohort";
        data["cohort"] = {{"n", cfg.cohort.n},
                          {"proxy_features", cfg.cohort.proxy_features},
                          {"label_features", cfg.cohort.label_features},
                          {"noise_features", cfg.cohort.noise_features},
                          {"proxy_noise", cfg.cohort.proxy_noise},
                          {"label_signal", cfg.cohort.label_signal}};
    } else {
        data["source"] = "files";
        data["matrix"] = cfg.matrix_file;
        data["covariates"] = cfg.covariates_file;
    }
    j["data"] = std::move(data);
    j["confounding"] = cfg.confounding ? rule_to_json(*cfg.confounding) : json(nullptr);
    json conf;
    if (!cfg.confounder_name.empty()) conf["name"] = cfg.confounder_name;
    if (!std::isnan(cfg.confounder_threshold)) conf["threshold"] = cfg.confounder_threshold;
    j["confounder"] = conf.empty() ? json(nullptr) : conf;
    j["preprocess"] = {{"depth_normalize", cfg.depth_normalize},
                       {"depth_constant", cfg.depth_constant},
                       {"standardize", cfg.standardize}};
    json methods = json::array();
    for (const auto& m : cfg.methods) {
        json mj;
        mj["name"] = m.name;
        mj["train"] = train_config_to_json(m.train);
        mj["pca_components"] = m.pca_components;
        if (m.name == "logreg_ancova") mj["ancova_alpha"] = m.ancova_alpha;
        methods.push_back(std::move(mj));
    }
    j["methods"] = std::move(methods);
    return j;
}

json report_to_json(const ExperimentReport& report) {
    json cells = json::array();
    for (const auto& c : report.cells) {
        json cj;
        cj["method"] = c.method;
        cj["trial"] = c.trial;
        cj["fold"] = c.fold;
        if (c.error.empty()) {
            cj["auc_entire"] = c.auc_entire;
            cj["auc_confounded"] = c.auc_confounded;
        } else {
            cj["error"] = c.error;
        }
        cj["train_hash"] = c.train_hash;
        cj["test_hash"] = c.test_hash;
        cells.push_back(std::move(cj));
    }
    json aggregates;
    for (const auto& [method, agg] : report.aggregates) {
        auto one = [](const Aggregate& a) {
            return json{{"mean", a.mean},
                        {"sd", a.sd},
                        {"stderr", a.stderr_mean},
                        {"cells", a.cells}};
        };
        aggregates[method] = {{"entire", one(agg[0])}, {"confounded", one(agg[1])}};
    }
    return {{"cells", std::move(cells)}, {"aggregates", std::move(aggregates)}};
}

std::string report_csv(const ExperimentReport& report) {
    std::string out = "method,trial,fold,test_set_kind,auc\n";
    for (const auto& c : report.cells) {
        if (!c.error.empty()) continue;
        for (int kind = 0; kind < 2; ++kind) {
            out += c.method;
            out += ',' + std::to_string(c.trial) + ',' + std::to_string(c.fold) + ',';
            out += kind == 0 ? "entire" : "confounded";
            out += ',';
            out += format_double(kind == 0 ? c.auc_entire : c.auc_confounded);
            out += '\n';
        }
    }
    return out;
}

std::string summary_table(const ExperimentReport& report,
                          const std::vector<MethodSpec>& methods) {
    char buf[160];
    std::string out;
    std::snprintf(buf, sizeof buf, "%-16s %-22s %-22s\n", "method", "entire test set",
                  "confounded test set");
    out += buf;
    for (const auto& m : methods) {
        const auto it = report.aggregates.find(m.name);
        if (it == report.aggregates.end() || it->second[0].cells == 0) {
            std::snprintf(buf, sizeof buf, "%-16s %-22s %-22s\n", m.name.c_str(), "-", "-");
            out += buf;
            continue;
        }
        char entire[32], confounded[32];
        std::snprintf(entire, sizeof entire, "%.2f (%.2f)", it->second[0].mean,
                      it->second[0].sd);
        std::snprintf(confounded, sizeof confounded, "%.2f (%.2f)", it->second[1].mean,
                      it->second[1].sd);
        std::snprintf(buf, sizeof buf, "%-16s %-22s %-22s\n", m.name.c_str(), entire, confounded);
        out += buf;
    }
    return out;
}

std::string loss_history_csv(const std::vector<TrainPoint>& history) {
    std::string out = "step,train_loss\n";
    for (const auto& h : history)
        out += std::to_string(h.step) + ',' + format_double(h.train_loss) + '\n';
    return out;
}

std::string loss_history_csv(const std::vector<MlpCheckpoint>& history) {
    std::string out = "step,train_loss,val_accuracy\n";
    for (const auto& h : history)
        out += std::to_string(h.step) + ',' + format_double(h.train_loss) + ',' +
               format_double(h.val_accuracy) + '\n';
    return out;
}

std::string loss_history_csv(const std::vector<LossRecord>& history,
                             const std::vector<std::string>& confounder_names) {
    std::string out = "step,label_loss";
    for (const auto& name : confounder_names) out += ",loss_" + name;
    out += ",selection_metric\n";
    for (const auto& h : history) {
        out += std::to_string(h.step) + ',' + format_double(h.label_loss);
        for (double v : h.confounder_losses) out += ',' + format_double(v);
        out += ',' + format_double(h.selection_metric) + '\n';
    }
    return out;
}

}  // namespace onion::io
