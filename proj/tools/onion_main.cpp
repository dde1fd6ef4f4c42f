#include "onion/basis.hpp"
#include "onion/eval.hpp"
#include "onion/io.hpp"
#include "onion/models.hpp"
#include "onion/preprocess.hpp"
#include "onion/simulate.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>

namespace fs = std::filesystem;
using onion::io::json;

namespace {

std::string default_out_dir() {
    const char* env = std::getenv("ONION_OUT_DIR");
    return env ? env : ".";
}

fs::path ensure_out_dir(const std::string& dir) {
    fs::path p(dir);
    fs::create_directories(p);
    return p;
}

std::string hex64(std::uint64_t v) {
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

void write_manifest(const fs::path& out_dir, const std::string& subcommand, json config,
                    const std::vector<std::string>& input_paths,
                    const std::vector<std::string>& outputs) {
    json inputs;
    for (const auto& path : input_paths) inputs[path] = hex64(onion::io::file_fnv64(path));
    json m;
    m["subcommand"] = subcommand;
    m["config"] = std::move(config);
    m["inputs"] = std::move(inputs);
    m["outputs"] = outputs;
    onion::io::write_file((out_dir / "manifest.json").string(), m.dump(2) + "\n");
}

std::string sidecar_path(const std::string& csv_path) {
    fs::path p(csv_path);
    p.replace_extension(".json");
    return p.string();
}

struct LoadedData {
    onion::Dataset ds;
    std::vector<std::string> inputs;
};

LoadedData load_dataset(const std::string& matrix, const std::string& covariates,
                        std::string cov_sidecar) {
    if (cov_sidecar.empty()) cov_sidecar = sidecar_path(covariates);
    LoadedData out;
    out.ds.X = onion::io::read_matrix_csv(matrix);
    out.ds.cov = onion::io::read_covariates(covariates, cov_sidecar);
    onion::check_dataset(out.ds);
    out.inputs = {matrix, covariates, cov_sidecar};
    return out;
}

void write_dataset(const fs::path& dir, const std::string& stem, const onion::Dataset& ds,
                   std::vector<std::string>& outputs) {
    const std::string matrix = (dir / (stem + ".csv")).string();
    const std::string matrix_sc = (dir / (stem + ".json")).string();
    const std::string cov = (dir / (stem + "_cov.csv")).string();
    const std::string cov_sc = (dir / (stem + "_cov.json")).string();
    onion::io::write_matrix_csv(matrix, ds.X);
    onion::io::write_matrix_sidecar(matrix_sc, ds.n(), ds.p());
    onion::io::write_covariates(cov, cov_sc, ds.cov);
    for (const auto& name :
         {stem + ".csv", stem + ".json", stem + "_cov.csv", stem + "_cov.json"})
        outputs.push_back(name);
}

// ---- simulate ----------------------------------------------------------

struct SimulateArgs {
    onion::SimConfig sim;
    long train_size = 1000;
    long test_size = 1000;
    double test_fraction = 0.5;
    bool strict_balance = false;
    bool no_filter = false;
    std::string out_dir = default_out_dir();
};

void run_simulate(const SimulateArgs& args) {
    onion::SimConfig sim = args.sim;
    sim.n = args.train_size;
    onion::validate(sim);
    const fs::path dir = ensure_out_dir(args.out_dir);
    const onion::SimWorld world = onion::sim_world(sim);
    onion::Rng draw_rng(onion::sub_seed(sim.seed, 0xD7A3));

    onion::TrainTestSplit split;
    if (args.no_filter) {
        onion::Dataset all =
            onion::sim_draw(world, sim, args.train_size + args.test_size, draw_rng);
        std::vector<onion::Index> train_idx, test_idx;
        for (onion::Index i = 0; i < all.n(); ++i)
            (i < args.train_size ? train_idx : test_idx).push_back(i);
        split.train = onion::take_samples(all, train_idx);
        split.test = onion::take_samples(all, test_idx);
    } else {
        if (sim.k != 2)
            throw onion::ConfigError("confounded simulation requires k = 2 (use --no-filter)");
        split = onion::sim_confounded_dataset(world, sim, args.train_size, args.test_size,
                                              args.test_fraction, draw_rng,
                                              args.strict_balance);
    }

    std::vector<std::string> outputs;
    write_dataset(dir, "train", split.train, outputs);
    write_dataset(dir, "test", split.test, outputs);

    json config;
    config["sim"] = {{"d", sim.d},         {"p", sim.p},
                     {"sigma", sim.sigma}, {"k", sim.k},
                     {"concentration", sim.concentration}, {"seed", sim.seed}};
    config["train_size"] = args.train_size;
    config["test_size"] = args.test_size;
    config["test_fraction"] = args.test_fraction;
    config["strict_balance"] = args.strict_balance;
    config["no_filter"] = args.no_filter;
    json alpha = json::array();
    for (onion::Index i = 0; i < world.alpha.size(); ++i) alpha.push_back(world.alpha[i]);
    config["realized_alpha"] = std::move(alpha);
    outputs.push_back("manifest.json");
    write_manifest(dir, "simulate", std::move(config), {}, outputs);
    std::cout << "simulate: wrote train (" << split.train.n() << " samples) and test ("
              << split.test.n() << " samples) to " << dir.string() << "\n";
}

// ---- onion-fit / onion-transform ---------------------------------------

struct OnionFitArgs {
    std::string matrix;
    std::string covariates;
    std::string cov_sidecar;
    double tol = 1e-10;
    int max_iter = 1000;
    std::uint64_t seed = 0;
    std::string out_dir = default_out_dir();
};

void run_onion_fit(const OnionFitArgs& args) {
    LoadedData data = load_dataset(args.matrix, args.covariates, args.cov_sidecar);
    if (data.ds.cov.confounders.empty())
        throw onion::ConfigError("onion-fit needs at least one confounder covariate");
    const fs::path dir = ensure_out_dir(args.out_dir);

    const onion::Centered centered = onion::center_columns(data.ds.X);
    std::vector<onion::Vector> confounders;
    for (const auto& c : data.ds.cov.confounders) confounders.push_back(c.values);
    const onion::OnionFit fit =
        onion::onion_fit(centered.values, confounders, args.tol, args.max_iter, args.seed);

    onion::io::write_basis_json((dir / "basis.json").string(), fit.basis, fit.report);
    json config{{"matrix", args.matrix},   {"covariates", args.covariates},
                {"tol", args.tol},         {"max_iter", args.max_iter},
                {"seed", args.seed}};
    write_manifest(dir, "onion-fit", std::move(config), data.inputs,
                   {"basis.json", "manifest.json"});
    std::cout << "onion-fit: extracted " << fit.basis.m() << " basis vector(s)";
    for (size_t i = 0; i < fit.report.captured_covariance.size(); ++i) {
        std::cout << (i == 0 ? "; captured covariance: " : ", ")
                  << onion::io::format_double(fit.report.captured_covariance[i]);
        if (fit.report.degenerate[i]) std::cout << " (degenerate, skipped)";
    }
    std::cout << "\n";
}

struct OnionTransformArgs {
    std::string matrix;
    std::string basis;
    bool verify = false;
    std::string out_dir = default_out_dir();
};

void run_onion_transform(const OnionTransformArgs& args) {
    const onion::Matrix X = onion::io::read_matrix_csv(args.matrix);
    const onion::OnionFit fit = onion::io::read_basis_json(args.basis);
    if (X.cols() != fit.basis.p())
        throw onion::ConfigError("matrix has " + std::to_string(X.cols()) +
                                 " columns but basis expects " + std::to_string(fit.basis.p()));
    const fs::path dir = ensure_out_dir(args.out_dir);
    const onion::Matrix X_n = onion::onion_transform(X, fit.basis);
    if (args.verify && fit.basis.m() > 0) {
        const double residual = (X_n * fit.basis.W).cwiseAbs().maxCoeff();
        const double limit = 1e-8 * X.cwiseAbs().maxCoeff();
        if (residual > limit)
            throw onion::Error("verification failed: |X_n W| = " +
                               onion::io::format_double(residual) + " exceeds " +
                               onion::io::format_double(limit));
        std::cout << "verify: |X_n W| max = " << onion::io::format_double(residual) << "\n";
    }
    onion::io::write_matrix_csv((dir / "transformed.csv").string(), X_n);
    onion::io::write_matrix_sidecar((dir / "transformed.json").string(), X_n.rows(), X_n.cols());
    json config{{"matrix", args.matrix}, {"basis", args.basis}, {"verify", args.verify}};
    write_manifest(dir, "onion-transform", std::move(config), {args.matrix, args.basis},
                   {"transformed.csv", "transformed.json", "manifest.json"});
}

// ---- train / evaluate ---------------------------------------------------

struct TrainArgs {
    std::string matrix;
    std::string covariates;
    std::string cov_sidecar;
    std::string method = "logreg";
    bool with_onion = false;
    bool standardize = true;
    bool depth_normalize = false;
    double depth_constant = 1e6;
    onion::TrainConfig train;
    std::string out_dir = default_out_dir();
};

void run_train(const TrainArgs& args) {
    LoadedData data = load_dataset(args.matrix, args.covariates, args.cov_sidecar);
    const fs::path dir = ensure_out_dir(args.out_dir);
    onion::Matrix X = data.ds.X;
    if (args.depth_normalize) X = onion::depth_normalize(X, args.depth_constant);

    onion::io::ModelBundle bundle;
    bundle.depth_normalize = args.depth_normalize;
    if (args.standardize) {
        onion::PreprocessorState st = onion::fit_preprocessor(X);
        st.depth_constant = args.depth_constant;
        X = onion::apply_preprocessor(st, X);
        bundle.preprocess = std::move(st);
    } else {
        X = onion::center_columns(X).values;
    }

    if (args.with_onion) {
        if (data.ds.cov.confounders.empty())
            throw onion::ConfigError("--onion needs at least one confounder covariate");
        std::vector<onion::Vector> confounders;
        for (const auto& c : data.ds.cov.confounders) confounders.push_back(c.values);
        const onion::OnionFit fit = onion::onion_fit(X, confounders, 1e-10, 1000,
                                                     onion::sub_seed(args.train.seed, 0x0B));
        X = onion::onion_transform(X, fit.basis);
        bundle.basis = fit.basis;
    }

    const onion::Vector& y = data.ds.cov.label;
    std::string history_csv;
    if (args.method == "logreg") {
        onion::LogregFit fit = onion::logreg_fit(X, y, args.train);
        bundle.params = std::move(fit.params);
        history_csv = onion::io::loss_history_csv(fit.history);
    } else if (args.method == "mlp") {
        onion::MlpFit fit = onion::mlp_fit(X, y, args.train);
        bundle.params = std::move(fit.params);
        history_csv = onion::io::loss_history_csv(fit.history);
    } else if (args.method == "dann") {
        if (data.ds.cov.confounders.empty())
            throw onion::ConfigError("dann needs at least one confounder covariate");
        const onion::Holdout ho = onion::training_holdout(y, args.train);
        onion::ValidationSet val;
        val.X = onion::take_rows(X, ho.val);
        val.y = onion::take(y, ho.val);
        std::vector<onion::Covariate> confs;
        std::vector<std::string> names;
        for (const auto& c : data.ds.cov.confounders) {
            confs.push_back({c.name, c.type, onion::take(c.values, ho.train)});
            val.confounders.push_back(onion::take(c.values, ho.val));
            names.push_back(c.name);
        }
        onion::DannFit fit = onion::dann_fit(onion::take_rows(X, ho.train),
                                             onion::take(y, ho.train), confs, args.train, val);
        bundle.params = std::move(fit.params);
        history_csv = onion::io::loss_history_csv(fit.history, names);
    } else {
        throw onion::ConfigError("unknown method '" + args.method + "'");
    }

    json config{{"matrix", args.matrix},
                {"covariates", args.covariates},
                {"method", args.method},
                {"onion", args.with_onion},
                {"standardize", args.standardize},
                {"depth_normalize", args.depth_normalize},
                {"depth_constant", args.depth_constant},
                {"seed", args.train.seed},
                {"learning_rate", args.train.learning_rate},
                {"batch_size", args.train.batch_size},
                {"iterations", args.train.iterations},
                {"hidden_units", args.train.hidden_units},
                {"adversary_steps_per_label_step", args.train.adversary_steps_per_label_step},
                {"adversary_loss_weights", args.train.adversary_loss_weights},
                {"l2", args.train.l2},
                {"checkpoint_every", args.train.checkpoint_every},
                {"validation_fraction", args.train.validation_fraction}};
    bundle.config_echo = config;
    onion::io::write_model_json((dir / "model.json").string(), bundle);
    onion::io::write_file((dir / "loss_history.csv").string(), history_csv);
    write_manifest(dir, "train", std::move(config), data.inputs,
                   {"model.json", "loss_history.csv", "manifest.json"});

    const onion::Vector train_scores = onion::predict_logits(bundle.params, X);
    std::cout << "train: " << args.method << (args.with_onion ? "+onion" : "")
              << " fitted; training AUC = "
              << onion::io::format_double(onion::auc(train_scores, y)) << "\n";
}

struct EvaluateArgs {
    std::string model;
    std::string matrix;
    std::string covariates;
    std::string cov_sidecar;
    std::string out_dir = default_out_dir();
};

void run_evaluate(const EvaluateArgs& args) {
    const onion::io::ModelBundle bundle = onion::io::read_model_json(args.model);
    onion::Matrix X = onion::io::read_matrix_csv(args.matrix);
    std::vector<std::string> inputs{args.model, args.matrix};

    if (bundle.depth_normalize)
        X = onion::depth_normalize(X, bundle.preprocess ? bundle.preprocess->depth_constant
                                                        : 1e6);
    if (bundle.preprocess) X = onion::apply_preprocessor(*bundle.preprocess, X);
    if (bundle.basis) X = onion::onion_transform(X, *bundle.basis);

    const onion::Vector logits = onion::predict_logits(bundle.params, X);
    const onion::Vector proba = onion::predict_proba(bundle.params, X);
    const fs::path dir = ensure_out_dir(args.out_dir);
    std::string scores = "logit,probability\n";
    for (onion::Index i = 0; i < logits.size(); ++i)
        scores += onion::io::format_double(logits[i]) + "," +
                  onion::io::format_double(proba[i]) + "\n";
    onion::io::write_file((dir / "scores.csv").string(), scores);

    json metrics{{"n", X.rows()}};
    if (!args.covariates.empty()) {
        std::string sc = args.cov_sidecar.empty() ? sidecar_path(args.covariates)
                                                  : args.cov_sidecar;
        const onion::CovariateSet cov = onion::io::read_covariates(args.covariates, sc);
        if (cov.label.size() != X.rows())
            throw onion::DimensionMismatch("label length != scored sample count");
        const double a = onion::auc(logits, cov.label);
        metrics["auc"] = a;
        std::cout << "evaluate: AUC = " << onion::io::format_double(a) << " on " << X.rows()
                  << " samples\n";
        inputs.push_back(args.covariates);
        inputs.push_back(sc);
    } else {
        std::cout << "evaluate: scored " << X.rows() << " samples (no labels provided)\n";
    }
    onion::io::write_file((dir / "metrics.json").string(), metrics.dump(2) + "\n");
    json config{{"model", args.model}, {"matrix", args.matrix},
                {"covariates", args.covariates}};
    write_manifest(dir, "evaluate", std::move(config), inputs,
                   {"scores.csv", "metrics.json", "manifest.json"});
}

// ---- experiment ---------------------------------------------------------

struct ExperimentArgs {
    std::string config_path;
    int workers = -1;  // -1: take from config
    std::string out_dir = default_out_dir();
};

int run_experiment_cmd(const ExperimentArgs& args) {
    const json raw = [&] {
        json j = json::parse(onion::io::read_file(args.config_path), nullptr, false);
        if (j.is_discarded())
            throw onion::ConfigError(args.config_path + ": invalid JSON");
        return j;
    }();
    onion::ExperimentConfig config = onion::io::experiment_config_from_json(raw);
    if (args.workers >= 0) config.workers = args.workers;

    onion::Dataset ingested;
    const onion::Dataset* ingested_ptr = nullptr;
    std::vector<std::string> inputs{args.config_path};
    if (config.source == onion::DataSource::files) {
        const fs::path base = fs::path(args.config_path).parent_path();
        const auto resolve = [&](const std::string& p) {
            return fs::path(p).is_absolute() ? p : (base / p).string();
        };
        const std::string matrix = resolve(config.matrix_file);
        const std::string covariates = resolve(config.covariates_file);
        LoadedData data = load_dataset(matrix, covariates, "");
        ingested = std::move(data.ds);
        ingested_ptr = &ingested;
        for (const auto& path : data.inputs) inputs.push_back(path);
    }

    const fs::path dir = ensure_out_dir(args.out_dir);
    const onion::ExperimentReport report = onion::run_experiment(config, ingested_ptr);

    onion::io::write_file((dir / "report.csv").string(), onion::io::report_csv(report));
    json report_json = onion::io::report_to_json(report);
    report_json["config"] = onion::io::experiment_config_to_json(config);
    onion::io::write_file((dir / "report.json").string(), report_json.dump(2) + "\n");
    write_manifest(dir, "experiment", onion::io::experiment_config_to_json(config), inputs,
                   {"report.csv", "report.json", "manifest.json"});

    std::cout << onion::io::summary_table(report, config.methods);
    int failed = 0;
    for (const auto& cell : report.cells)
        if (!cell.error.empty()) ++failed;
    if (failed > 0) {
        std::cerr << "experiment: " << failed << " cell(s) failed; see report.json\n";
        return 1;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Confounder-robust learning toolkit: orthonormal-basis confounder removal, "
                 "adversarial training, confounded-data simulation, and evaluation"};
    app.require_subcommand(1);

    SimulateArgs sim_args;
    auto* sim = app.add_subcommand("simulate", "Generate a confounded synthetic dataset");
    sim->add_option("--n", sim_args.train_size, "Post-filter training sample count")
        ->check(CLI::PositiveNumber);
    sim->add_option("--test-size", sim_args.test_size, "Test sample count")
        ->check(CLI::PositiveNumber);
    sim->add_option("--test-fraction", sim_args.test_fraction,
                    "Probability a drawn sample becomes a test candidate");
    sim->add_option("--d", sim_args.sim.d, "Latent dimension")->check(CLI::PositiveNumber);
    sim->add_option("--p", sim_args.sim.p, "Feature count")->check(CLI::PositiveNumber);
    sim->add_option("--sigma", sim_args.sim.sigma, "Noise level");
    sim->add_option("--k", sim_args.sim.k, "Factor count")->check(CLI::PositiveNumber);
    sim->add_option("--concentration", sim_args.sim.concentration,
                    "Dirichlet concentration parameters");
    sim->add_option("--seed", sim_args.sim.seed, "Random seed");
    sim->add_flag("--strict-balance", sim_args.strict_balance,
                  "Subsample the test set to equalize confounder/label quadrants");
    sim->add_flag("--no-filter", sim_args.no_filter,
                  "Skip the confounding filter; emit raw draws");
    sim->add_option("--out-dir", sim_args.out_dir, "Output directory");
    sim->callback([&] { run_simulate(sim_args); });

    OnionFitArgs fit_args;
    auto* ofit = app.add_subcommand("onion-fit", "Fit an orthonormal confounder basis");
    ofit->add_option("--matrix", fit_args.matrix, "Data matrix CSV")->required();
    ofit->add_option("--covariates", fit_args.covariates, "Covariates CSV")->required();
    ofit->add_option("--covariates-sidecar", fit_args.cov_sidecar,
                     "Covariate sidecar JSON (default: covariates path with .json)");
    ofit->add_option("--tol", fit_args.tol, "Power-iteration stopping tolerance");
    ofit->add_option("--max-iter", fit_args.max_iter, "Power-iteration cap")
        ->check(CLI::PositiveNumber);
    ofit->add_option("--seed", fit_args.seed, "Random seed");
    ofit->add_option("--out-dir", fit_args.out_dir, "Output directory");
    ofit->callback([&] { run_onion_fit(fit_args); });

    OnionTransformArgs tr_args;
    auto* otr = app.add_subcommand("onion-transform",
                                   "Project data onto the non-confounded complement");
    otr->add_option("--matrix", tr_args.matrix, "Data matrix CSV")->required();
    otr->add_option("--basis", tr_args.basis, "Basis JSON from onion-fit")->required();
    otr->add_flag("--verify", tr_args.verify, "Check X_n W = 0 within 1e-8 of the data scale");
    otr->add_option("--out-dir", tr_args.out_dir, "Output directory");
    otr->callback([&] { run_onion_transform(tr_args); });

    TrainArgs train_args;
    auto* tr = app.add_subcommand("train", "Fit a predictor");
    tr->add_option("--matrix", train_args.matrix, "Training matrix CSV")->required();
    tr->add_option("--covariates", train_args.covariates, "Covariates CSV")->required();
    tr->add_option("--covariates-sidecar", train_args.cov_sidecar, "Covariate sidecar JSON");
    tr->add_option("--method", train_args.method, "logreg | mlp | dann");
    tr->add_flag("--onion", train_args.with_onion, "Remove confounder directions before fitting");
    tr->add_flag("!--no-standardize", train_args.standardize,
                 "Skip the clip/standardize preprocessor (center only)");
    tr->add_flag("--depth-normalize", train_args.depth_normalize,
                 "Scale each row to a constant sum first");
    tr->add_option("--depth-constant", train_args.depth_constant, "Row-sum constant");
    tr->add_option("--learning-rate", train_args.train.learning_rate, "Adam learning rate");
    tr->add_option("--batch-size", train_args.train.batch_size, "Mini-batch size")
        ->check(CLI::PositiveNumber);
    tr->add_option("--iterations", train_args.train.iterations, "Training iterations")
        ->check(CLI::PositiveNumber);
    tr->add_option("--hidden-units", train_args.train.hidden_units, "Hidden layer width")
        ->check(CLI::PositiveNumber);
    tr->add_option("--adversary-steps", train_args.train.adversary_steps_per_label_step,
                   "Confounder updates per label update")
        ->check(CLI::PositiveNumber);
    tr->add_option("--adversary-weights", train_args.train.adversary_loss_weights,
                   "Selection-metric weights, one per confounder");
    tr->add_option("--l2", train_args.train.l2, "L2 penalty on weights");
    tr->add_option("--checkpoint-every", train_args.train.checkpoint_every,
                   "Checkpoint cadence in iterations")
        ->check(CLI::PositiveNumber);
    tr->add_option("--validation-fraction", train_args.train.validation_fraction,
                   "Held-out fraction for checkpoint selection");
    tr->add_option("--seed", train_args.train.seed, "Random seed");
    tr->add_option("--out-dir", train_args.out_dir, "Output directory");
    tr->callback([&] { run_train(train_args); });

    EvaluateArgs eval_args;
    auto* ev = app.add_subcommand("evaluate", "Score a saved model on a dataset");
    ev->add_option("--model", eval_args.model, "Model JSON from train")->required();
    ev->add_option("--matrix", eval_args.matrix, "Matrix CSV to score")->required();
    ev->add_option("--covariates", eval_args.covariates,
                   "Covariates CSV (optional; enables AUC)");
    ev->add_option("--covariates-sidecar", eval_args.cov_sidecar, "Covariate sidecar JSON");
    ev->add_option("--out-dir", eval_args.out_dir, "Output directory");
    ev->callback([&] { run_evaluate(eval_args); });

    ExperimentArgs exp_args;
    int exp_exit = 0;
    auto* ex = app.add_subcommand("experiment", "Run a full multi-method experiment");
    ex->add_option("--config", exp_args.config_path, "Experiment config JSON")->required();
    ex->add_option("--workers", exp_args.workers, "Parallel cell workers (default: cores)");
    ex->add_option("--out-dir", exp_args.out_dir, "Output directory");
    ex->callback([&] { exp_exit = run_experiment_cmd(exp_args); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const onion::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const onion::DimensionMismatch& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return exp_exit;
}
