// Acceptance suite: runs every gate criterion at its stated tolerance and
// prints one pass/fail line per criterion. Exits nonzero if any fail.

#include "onion/basis.hpp"
#include "onion/confound.hpp"
#include "onion/eval.hpp"
#include "onion/io.hpp"
#include "onion/models.hpp"
#include "onion/preprocess.hpp"
#include "onion/simulate.hpp"

#include "../oracles.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <sstream>

using namespace onion;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

void report(int number, bool ok, const std::string& name, const std::string& detail) {
    std::printf("[%2d] %s  %s%s%s\n", number, ok ? "PASS" : "FAIL", name.c_str(),
                detail.empty() ? "" : " — ", detail.c_str());
    std::fflush(stdout);
    if (!ok) ++g_failures;
}

int run_cli(const std::string& args, const std::string& log_file) {
    const std::string cmd =
        std::string(ONION_CLI_PATH) + " " + args + " > " + log_file + " 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string cfg(const std::string& name) {
    return std::string(ONION_CONFIG_DIR) + "/" + name;
}

// mean AUC per (method, test_set_kind) out of a report.csv
std::map<std::string, double> mean_aucs(const std::string& csv_path) {
    std::istringstream in(io::read_file(csv_path));
    std::string line;
    std::getline(in, line);  // header
    std::map<std::string, std::pair<double, int>> acc;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::string fields[5];
        size_t start = 0;
        for (int f = 0; f < 5; ++f) {
            const size_t comma = line.find(',', start);
            fields[f] = line.substr(start, comma == std::string::npos ? comma : comma - start);
            start = comma + 1;
        }
        auto& slot = acc[fields[0] + "/" + fields[3]];
        slot.first += std::strtod(fields[4].c_str(), nullptr);
        slot.second += 1;
    }
    std::map<std::string, double> means;
    for (const auto& [key, slot] : acc) means[key] = slot.first / slot.second;
    return means;
}

double median_abs(std::vector<double> values) {
    for (auto& v : values) v = std::abs(v);
    std::sort(values.begin(), values.end());
    const size_t n = values.size();
    return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3f", v);
    return buf;
}

// ---- criteria 1, 2, 9: the figure-style simulation experiment ------------

struct ExperimentRuns {
    bool ok6000 = false;
    bool ok500 = false;
    bool okRerun = false;
    std::map<std::string, double> means6000;
    std::map<std::string, double> means500;
};

ExperimentRuns run_figure_experiments(const fs::path& out) {
    ExperimentRuns runs;
    const auto t0 = std::chrono::steady_clock::now();
    std::cerr << "acceptance: running figure1 experiment (n=6000, 50 trials)..." << std::endl;
    runs.ok6000 = run_cli("experiment --config " + cfg("figure1.json") + " --out-dir " +
                              (out / "figure1_a").string(),
                          (out / "figure1_a.log").string()) == 0;
    std::cerr << "acceptance: running figure1_n500 experiment..." << std::endl;
    runs.ok500 = run_cli("experiment --config " + cfg("figure1_n500.json") + " --out-dir " +
                             (out / "figure1_n500").string(),
                         (out / "figure1_n500.log").string()) == 0;
    std::cerr << "acceptance: re-running figure1 for the determinism check..." << std::endl;
    runs.okRerun = run_cli("experiment --config " + cfg("figure1.json") + " --out-dir " +
                               (out / "figure1_b").string(),
                           (out / "figure1_b.log").string()) == 0;
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(
                          std::chrono::steady_clock::now() - t0)
                          .count();
    std::cerr << "acceptance: experiment runs took " << secs << "s" << std::endl;
    if (runs.ok6000) runs.means6000 = mean_aucs((out / "figure1_a/report.csv").string());
    if (runs.ok500) runs.means500 = mean_aucs((out / "figure1_n500/report.csv").string());
    return runs;
}

void criterion_1(const ExperimentRuns& runs) {
    if (!runs.ok6000 || !runs.ok500) {
        report(1, false, "simulated generalization gap", "experiment run failed");
        return;
    }
    const auto& m6 = runs.means6000;
    const auto& m5 = runs.means500;
    const double onion_gap_6000 = m6.at("logreg_onion/entire") - m6.at("logreg/entire");
    const double dann_gap_6000 = m6.at("dann/entire") - m6.at("mlp/entire");
    const double onion_gap_500 = m5.at("logreg_onion/entire") - m5.at("logreg/entire");
    const bool ok = onion_gap_6000 >= 0.03 && dann_gap_6000 >= 0.03 &&
                    onion_gap_6000 > onion_gap_500;
    report(1, ok, "simulated generalization gap",
           "onion gap n6000=" + fmt(onion_gap_6000) + " (floor 0.03), dann gap n6000=" +
               fmt(dann_gap_6000) + " (floor 0.03), onion gap n500=" + fmt(onion_gap_500));
}

void criterion_2(const ExperimentRuns& runs) {
    if (!runs.ok6000) {
        report(2, false, "confounded-metric inflation", "experiment run failed");
        return;
    }
    const auto& m = runs.means6000;
    const double logreg_lift = m.at("logreg/confounded") - m.at("logreg/entire");
    const double mlp_lift = m.at("mlp/confounded") - m.at("mlp/entire");
    report(2, logreg_lift > 0 && mlp_lift > 0, "confounded-metric inflation",
           "logreg lift=" + fmt(logreg_lift) + ", mlp lift=" + fmt(mlp_lift));
}

void criterion_9(const ExperimentRuns& runs, const fs::path& out) {
    if (!runs.ok6000 || !runs.okRerun) {
        report(9, false, "end-to-end determinism", "experiment run failed");
        return;
    }
    const std::string a = io::read_file((out / "figure1_a/report.csv").string());
    const std::string b = io::read_file((out / "figure1_b/report.csv").string());
    report(9, !a.empty() && a == b, "end-to-end determinism",
           a == b ? "report CSVs byte-identical" : "report CSVs differ");
}

// ---- criterion 3: basis construction against the closed-form oracle ------

void criterion_3() {
    Rng meta(301);
    int bad = 0;
    std::string first_fail;
    for (int inst = 0; inst < 50; ++inst) {
        const Index n = 20 + static_cast<Index>(meta.below(81));   // <= 100
        const Index p = 5 + static_cast<Index>(meta.below(26));    // <= 30
        const int k1 = 1 + static_cast<int>(meta.below(3));        // <= 3
        Rng rng(1000 + static_cast<std::uint64_t>(inst));
        const Matrix X = center_columns(oracles::random_matrix(n, p, rng)).values;
        std::vector<Vector> ys;
        for (int i = 0; i < k1; ++i) ys.push_back(oracles::random_vector(n, rng));

        const OnionFit fit = onion_fit(X, ys, 1e-12, 1000, static_cast<std::uint64_t>(inst));
        const Matrix W_oracle = oracles::onion_closed_form(X, ys);
        bool ok = fit.basis.m() == W_oracle.cols();
        if (ok) {
            for (Index c = 0; c < W_oracle.cols(); ++c) {
                const double dist = std::min((fit.basis.W.col(c) - W_oracle.col(c)).norm(),
                                             (fit.basis.W.col(c) + W_oracle.col(c)).norm());
                if (dist > 1e-6) ok = false;
            }
            const Matrix gram = fit.basis.W.transpose() * fit.basis.W;
            if ((gram - Matrix::Identity(fit.basis.m(), fit.basis.m())).cwiseAbs().maxCoeff() >
                1e-8)
                ok = false;
            const Matrix Xn = onion_transform(X, fit.basis);
            if ((Xn * fit.basis.W).cwiseAbs().maxCoeff() > 1e-8) ok = false;
        }
        if (!ok) {
            ++bad;
            if (first_fail.empty())
                first_fail = "instance " + std::to_string(inst) + " (n=" + std::to_string(n) +
                             ", p=" + std::to_string(p) + ", k-1=" + std::to_string(k1) + ")";
        }
    }
    report(3, bad == 0, "basis oracle equivalence",
           bad == 0 ? "50/50 instances within 1e-6" : std::to_string(bad) + " failures, first: " +
                                                          first_fail);
}

// ---- criterion 4: analytic gradients vs finite differences ---------------

NetworkParams random_logreg(Index p, Rng& rng) {
    NetworkParams params;
    params.kind = ModelKind::logreg;
    params.label_head.push_back(
        {oracles::random_matrix(1, p, rng) * 0.7, oracles::random_vector(1, rng) * 0.3});
    return params;
}

struct DannState {
    NetworkParams params;
    Matrix X;
    Vector y;
    std::vector<Vector> confounders;
};

DannState random_state(Rng& rng, bool with_heads) {
    const Index batch = 10, p = 5, h = 4;
    for (;;) {
        DannState st;
        st.params.kind = with_heads ? ModelKind::dann : ModelKind::mlp;
        auto layer = [&](Index out, Index in) {
            return Layer{oracles::random_matrix(out, in, rng) * 0.7,
                         oracles::random_vector(out, rng) * 0.3};
        };
        st.params.extractor.push_back(layer(h, p));
        st.params.label_head.push_back(layer(1, h));
        if (with_heads) {
            st.params.confounder_heads.push_back({layer(h, h), layer(1, h)});
            st.params.confounder_heads.push_back({layer(h, h), layer(1, h)});
            st.params.confounder_types = {CovariateType::binary, CovariateType::continuous};
        }
        st.X = oracles::random_matrix(batch, p, rng);
        st.y = oracles::random_binary(batch, rng);
        if (with_heads)
            st.confounders = {oracles::random_binary(batch, rng),
                              oracles::random_vector(batch, rng)};

        double kink = std::numeric_limits<double>::infinity();
        const Matrix pre1 = (st.X * st.params.extractor[0].W.transpose()).rowwise() +
                            st.params.extractor[0].b.transpose();
        kink = std::min(kink, pre1.cwiseAbs().minCoeff());
        const Matrix hidden = pre1.cwiseMax(0.0);
        for (const auto& head : st.params.confounder_heads) {
            const Matrix pre = (hidden * head[0].W.transpose()).rowwise() + head[0].b.transpose();
            kink = std::min(kink, pre.cwiseAbs().minCoeff());
        }
        if (kink > 1e-3) return st;
    }
}

void criterion_4() {
    Rng rng(401);
    double worst = 0.0;
    for (int point = 0; point < 10; ++point) {
        // logreg
        {
            NetworkParams params = random_logreg(6, rng);
            const Matrix X = oracles::random_matrix(12, 6, rng);
            const Vector y = oracles::random_binary(12, rng);
            const LabelGrads g = label_gradients(params, X, y);
            auto entries = oracles::grad_entries_label(g, params);
            worst = std::max(worst, oracles::fd_max_rel_err(
                                        params, entries,
                                        [&] { return label_loss(params, X, y); }));
        }
        // mlp label path
        {
            DannState st = random_state(rng, false);
            const LabelGrads g = label_gradients(st.params, st.X, st.y);
            auto entries = oracles::grad_entries_label(g, st.params);
            worst = std::max(worst, oracles::fd_max_rel_err(
                                        st.params, entries,
                                        [&] { return label_loss(st.params, st.X, st.y); }));
        }
        // dann: label rule and adversary rule through the shared extractor
        {
            DannState st = random_state(rng, true);
            const LabelGrads lg = label_gradients(st.params, st.X, st.y);
            auto label_entries = oracles::grad_entries_label(lg, st.params);
            worst = std::max(worst,
                             oracles::fd_max_rel_err(st.params, label_entries, [&] {
                                 return label_loss(st.params, st.X, st.y);
                             }));
            const AdversaryGrads ag = adversary_gradients(st.params, st.X, st.confounders);
            auto adv_entries = oracles::grad_entries_adversary(ag, st.params);
            worst = std::max(worst, oracles::fd_max_rel_err(st.params, adv_entries, [&] {
                const auto losses = confounder_losses(st.params, st.X, st.confounders);
                double total = 0;
                for (double v : losses) total += v;
                return total;
            }));
        }
    }
    report(4, worst < 1e-4, "gradient correctness",
           "max relative error " + fmt(worst * 1e4) + "e-4 (limit 1e-4)");
}

// ---- criterion 5: update-rule signs --------------------------------------

void criterion_5() {
    Rng rng(501);
    const double alpha = 1e-5;
    bool ok = true;
    for (int point = 0; point < 10 && ok; ++point) {
        DannState st = random_state(rng, true);
        const auto base_conf = confounder_losses(st.params, st.X, st.confounders);
        const double base_label = label_loss(st.params, st.X, st.y);

        NetworkParams ascended = st.params;
        const AdversaryGrads ag = adversary_gradients(ascended, st.X, st.confounders);
        oracles::axpy(ascended.extractor, ag.extractor, +alpha);
        const auto lifted = confounder_losses(ascended, st.X, st.confounders);
        for (size_t i = 0; i < lifted.size(); ++i)
            if (lifted[i] <= base_conf[i]) ok = false;

        NetworkParams descended = st.params;
        const LabelGrads lg = label_gradients(descended, st.X, st.y);
        oracles::axpy(descended.extractor, lg.extractor, -alpha);
        oracles::axpy(descended.label_head, lg.label_head, -alpha);
        if (label_loss(descended, st.X, st.y) >= base_label) ok = false;
    }
    report(5, ok, "update-rule signs",
           "rule 2 raises each confounder loss, rule 1 lowers the label loss (step 1e-5)");
}

// ---- criterion 6: AUC oracle ---------------------------------------------

void criterion_6() {
    Rng rng(601);
    double worst = 0.0;
    for (int inst = 0; inst < 100; ++inst) {
        const Index n = 10 + static_cast<Index>(rng.below(191));
        Vector s(n), y(n);
        for (Index i = 0; i < n; ++i) {
            s[i] = rng.bernoulli(0.5) ? static_cast<double>(rng.below(8))  // heavy ties
                                      : rng.normal();
            y[i] = rng.bernoulli(0.5) ? 1.0 : 0.0;
        }
        if (y.sum() == 0 || y.sum() == n) y[0] = 1.0 - y[0];
        worst = std::max(worst, std::abs(auc(s, y) - oracles::auc_bruteforce(s, y)));
    }
    report(6, worst <= 1e-12, "auc oracle",
           "max |rank-based - pair-count| = " + io::format_double(worst));
}

// ---- criterion 7: AT dropout examples ------------------------------------

void criterion_7() {
    GcProfile equal;
    equal.expected_fraction = Vector::Constant(101, 0.004);
    equal.observed_fraction = Vector::Constant(101, 0.004);
    const bool zero_case = at_dropout(equal) == 0.0;

    GcProfile nothing = equal;
    nothing.observed_fraction.setZero();
    const bool total_case = at_dropout(nothing) == 51 * 0.004;

    GcProfile skew;
    skew.expected_fraction = Vector::Constant(101, 0.02);
    skew.observed_fraction.resize(101);
    for (Index gc = 0; gc <= 100; ++gc) skew.observed_fraction[gc] = gc <= 50 ? 0.01 : 0.03;
    const bool mixed_case = std::abs(at_dropout(skew) - 0.51) < 1e-15;

    report(7, zero_case && total_case && mixed_case, "at dropout examples",
           std::string("zero=") + (zero_case ? "ok" : "BAD") + ", total-mass=" +
               (total_case ? "ok" : "BAD") + ", 0.51-case=" + (mixed_case ? "ok" : "BAD"));
}

// ---- criterion 8: confounded subset construction --------------------------

void criterion_8() {
    Rng rng(801);
    bool ok = true;
    std::string detail;
    for (int trial = 0; trial < 20 && ok; ++trial) {
        const Index n = 150 + static_cast<Index>(rng.below(250));
        std::vector<int> groups;
        Vector labels(n);
        for (Index i = 0; i < n; ++i) {
            groups.push_back(rng.bernoulli(0.5) ? 1 : 0);
            labels[i] = rng.bernoulli(0.5) ? 1.0 : 0.0;
        }
        std::array<double, 4> props{};
        double remaining = 1.0;
        for (size_t c = 0; c < 3; ++c) {
            props[c] = remaining * (0.15 + 0.5 * rng.uniform());
            remaining -= props[c];
        }
        props[3] = remaining;

        const auto subset = confounded_test_subset(groups, labels, props, trial);
        if (subset.empty()) {
            ok = false;
            detail = "empty subset";
            break;
        }
        std::array<double, 4> counts{0, 0, 0, 0}, got{0, 0, 0, 0};
        for (Index i = 0; i < n; ++i)
            counts[static_cast<size_t>(groups[static_cast<size_t>(i)] * 2 +
                                       (labels[i] > 0.5 ? 1 : 0))] += 1.0;
        for (Index i : subset)
            got[static_cast<size_t>(groups[static_cast<size_t>(i)] * 2 +
                                    (labels[i] > 0.5 ? 1 : 0))] += 1.0;
        const double total = static_cast<double>(subset.size());
        for (size_t c = 0; c < 4; ++c)
            if (std::abs(got[c] / total - props[c]) > 1.0 / total + 1e-12) {
                ok = false;
                detail = "proportion mismatch in trial " + std::to_string(trial);
            }

        // maximality: the realized m is feasible, m+1 is not
        double m = std::numeric_limits<double>::infinity();
        for (size_t c = 0; c < 4; ++c)
            if (props[c] > 0) m = std::min(m, std::floor(counts[c] / props[c] + 1e-9));
        bool next_feasible = true;
        for (size_t c = 0; c < 4; ++c)
            if ((m + 1) * props[c] > counts[c] + 1e-9) next_feasible = false;
        if (next_feasible) {
            ok = false;
            detail = "m+1 unexpectedly feasible in trial " + std::to_string(trial);
        }
        if (static_cast<double>(subset.size()) != m) {
            ok = false;
            detail = "subset size " + std::to_string(subset.size()) + " != m in trial " +
                     std::to_string(trial);
        }
    }
    report(8, ok, "confounded subset construction",
           ok ? "20/20 random configurations proportional and maximal" : detail);
}

// ---- criterion 10: proxy-weight sanity through the full pipeline ----------

void criterion_10() {
    CohortConfig cc;
    cc.n = 1200;
    cc.seed = 1001;
    const Dataset cohort = synth_cohort(cc);
    BiasSubsampleRule rule;
    rule.group_covariate = "group";
    rule.threshold = 0.5;
    rule.drop_probability = 0.9;
    rule.drop_cells = {{1, 0}, {0, 1}};
    const Dataset confounded = biased_subsample(cohort, rule, 55);

    const PreprocessorState st = fit_preprocessor(confounded.X);
    const Matrix X = apply_preprocessor(st, confounded.X);
    const Vector& y = confounded.cov.label;
    TrainConfig train;
    train.iterations = 3000;
    train.seed = 10;

    const LogregFit plain = logreg_fit(X, y, train);
    const Vector w_plain = plain.params.label_head[0].W.row(0);
    std::vector<double> all_weights(w_plain.data(), w_plain.data() + w_plain.size());
    const double feature_median = median_abs(all_weights);
    const bool plain_ok = w_plain[0] * w_plain[1] < 0.0 &&
                          std::abs(w_plain[0]) > feature_median &&
                          std::abs(w_plain[1]) > feature_median;

    const OnionFit basis = onion_fit(X, {confounded.cov.confounders[0].values}, 1e-10, 1000, 3);
    const Matrix Xn = onion_transform(X, basis.basis);
    const LogregFit corrected = logreg_fit(Xn, y, train);
    const Vector w_onion = corrected.params.label_head[0].W.row(0);
    std::vector<double> label_weights;
    for (int j = 2; j < 2 + cc.label_features; ++j) label_weights.push_back(w_onion[j]);
    const double label_median = median_abs(label_weights);
    const bool onion_ok = std::abs(w_onion[0]) < 0.1 * label_median &&
                          std::abs(w_onion[1]) < 0.1 * label_median;

    report(10, plain_ok && onion_ok, "proxy weight suppression",
           "plain proxies " + fmt(w_plain[0]) + "/" + fmt(w_plain[1]) + " (median " +
               fmt(feature_median) + "); corrected proxies " + fmt(std::abs(w_onion[0])) + "/" +
               fmt(std::abs(w_onion[1])) + " vs 10% of label median " +
               fmt(0.1 * label_median));
}

}  // namespace

int main() {
    const fs::path out = "acceptance_out";
    fs::create_directories(out);

    const ExperimentRuns runs = run_figure_experiments(out);
    criterion_1(runs);
    criterion_2(runs);
    criterion_3();
    criterion_4();
    criterion_5();
    criterion_6();
    criterion_7();
    criterion_8();
    criterion_9(runs, out);
    criterion_10();

    if (g_failures == 0) std::printf("acceptance: all criteria passed\n");
    else std::printf("acceptance: %d criterion(s) failed\n", g_failures);
    return g_failures == 0 ? 0 : 1;
}
