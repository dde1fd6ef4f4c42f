#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "onion/eval.hpp"

#include "oracles.hpp"

#include <set>

using namespace onion;

TEST_CASE("auc on canonical orderings") {
    Vector s(4), y(4);
    s << 0.1, 0.4, 0.35, 0.8;
    y << 0, 0, 1, 1;
    CHECK(auc(s, y) == doctest::Approx(0.75));

    s << 1, 2, 3, 4;
    y << 0, 0, 1, 1;
    CHECK(auc(s, y) == 1.0);
    y << 1, 1, 0, 0;
    CHECK(auc(s, y) == 0.0);

    y << 0, 1, 0, 1;
    CHECK(auc(s, y) == doctest::Approx(0.75));  // wins 3 of 4 pairs
}

TEST_CASE("auc equals brute-force pair counting, ties included") {
    Rng rng(1);
    for (int inst = 0; inst < 100; ++inst) {
        const Index n = 5 + static_cast<Index>(rng.below(60));
        Vector s(n), y(n);
        for (Index i = 0; i < n; ++i) {
            // coarse grid scores force plenty of ties
            s[i] = static_cast<double>(rng.below(6));
            y[i] = rng.bernoulli(0.5) ? 1.0 : 0.0;
        }
        if (y.sum() == 0 || y.sum() == n) {
            y[0] = 1.0 - y[0];
        }
        CHECK(std::abs(auc(s, y) - oracles::auc_bruteforce(s, y)) <= 1e-12);
    }
}

TEST_CASE("auc symmetry and monotone invariance") {
    Rng rng(2);
    const Index n = 50;
    Vector s(n), y(n);
    std::set<double> used;
    for (Index i = 0; i < n; ++i) {
        double v;
        do { v = rng.normal(); } while (used.count(v));
        used.insert(v);
        s[i] = v;
        y[i] = rng.bernoulli(0.5) ? 1.0 : 0.0;
    }
    y[0] = 1.0;
    y[1] = 0.0;
    CHECK(auc(s, y) + auc(-s, y) == doctest::Approx(1.0).epsilon(1e-12));

    Vector transformed(n);
    for (Index i = 0; i < n; ++i) transformed[i] = std::exp(2.0 * s[i] + 3.0);
    CHECK(auc(transformed, y) == auc(s, y));
}

TEST_CASE("auc requires both classes") {
    Vector s(3), y(3);
    s << 1, 2, 3;
    y << 1, 1, 1;
    CHECK_THROWS_AS(auc(s, y), SingleClass);
}

TEST_CASE("make_folds partitions evenly and stratifies") {
    Rng rng(3);
    Vector y(10);
    y << 0, 0, 0, 0, 0, 1, 1, 1, 1, 1;
    const FoldPlan plan = make_folds(y, 5, 7);
    int sizes[5] = {0, 0, 0, 0, 0};
    int pos[5] = {0, 0, 0, 0, 0};
    for (Index i = 0; i < 10; ++i) {
        ++sizes[plan.assignments[static_cast<size_t>(i)]];
        if (y[i] > 0.5) ++pos[plan.assignments[static_cast<size_t>(i)]];
    }
    for (int f = 0; f < 5; ++f) {
        CHECK(sizes[f] == 2);
        CHECK(pos[f] == 1);
    }
}

TEST_CASE("make_folds on uneven classes keeps sizes within one") {
    Rng rng(4);
    const Index n = 103;
    Vector y(n);
    for (Index i = 0; i < n; ++i) y[i] = i < 37 ? 1.0 : 0.0;
    const FoldPlan plan = make_folds(y, 5, 11);
    std::vector<int> sizes(5, 0);
    std::vector<int> pos(5, 0);
    for (Index i = 0; i < n; ++i) {
        const int f = plan.assignments[static_cast<size_t>(i)];
        CHECK(f >= 0);
        CHECK(f < 5);
        ++sizes[static_cast<size_t>(f)];
        if (y[i] > 0.5) ++pos[static_cast<size_t>(f)];
    }
    const auto [lo, hi] = std::minmax_element(sizes.begin(), sizes.end());
    CHECK(*hi - *lo <= 1);
    const auto [plo, phi] = std::minmax_element(pos.begin(), pos.end());
    CHECK(*phi - *plo <= 1);

    // a fold plan is a partition: every sample appears exactly once
    CHECK(std::count(plan.assignments.begin(), plan.assignments.end(), -1) == 0);
    // deterministic
    CHECK(make_folds(y, 5, 11).assignments == plan.assignments);
}

TEST_CASE("make_folds validates class sizes") {
    Vector y(6);
    y << 0, 0, 0, 0, 0, 1;
    CHECK_THROWS_AS(make_folds(y, 5, 1), TooFewSamples);
}

TEST_CASE("confounded_test_subset reproduces hand-checked apportionment") {
    // train cells (.45, .45, .05, .05); 50 test samples in each cell
    std::vector<int> groups;
    Vector labels(200);
    for (int c = 0; c < 4; ++c)
        for (int i = 0; i < 50; ++i) {
            groups.push_back(c / 2);
            labels[c * 50 + i] = c % 2;
        }
    const std::array<double, 4> props{0.45, 0.05, 0.45, 0.05};  // cell = group*2+label
    const auto subset = confounded_test_subset(groups, labels, props, 5);

    // oracle: m = min floor(count/prop) = floor(50/0.45) = 111; largest
    // remainder splits 111 as 50+5(+1), 50, 5; bump goes to the first tied
    // 0.55 remainder in index order
    std::array<int, 4> got{0, 0, 0, 0};
    for (Index i : subset) ++got[static_cast<size_t>(groups[static_cast<size_t>(i)] * 2 +
                                                     (labels[i] > 0.5 ? 1 : 0))];
    CHECK(subset.size() == 111);
    CHECK(got[0] == 50);
    CHECK(got[1] == 6);
    CHECK(got[2] == 50);
    CHECK(got[3] == 5);

    // m+1 = 112 is infeasible: 112 * 0.45 = 50.4 > 50 available
    CHECK(112.0 * 0.45 > 50.0);
}

TEST_CASE("confounded_test_subset takes everything when proportions already match") {
    Rng rng(5);
    std::vector<int> groups;
    Vector labels(120);
    for (Index i = 0; i < 120; ++i) {
        groups.push_back(static_cast<int>(i % 2));
        labels[i] = (i / 2) % 2;
    }
    const auto props = cell_proportions(groups, labels);
    const auto subset = confounded_test_subset(groups, labels, props, 9);
    CHECK(static_cast<Index>(subset.size()) >= 120 - 3);
}

TEST_CASE("confounded_test_subset with single-cell training mass") {
    std::vector<int> groups;
    Vector labels(40);
    for (Index i = 0; i < 40; ++i) {
        groups.push_back(i < 25 ? 0 : 1);
        labels[i] = i % 2;
    }
    const std::array<double, 4> props{0.0, 1.0, 0.0, 0.0};  // all mass in (group0, label1)
    const auto subset = confounded_test_subset(groups, labels, props, 1);
    for (Index i : subset) {
        CHECK(groups[static_cast<size_t>(i)] == 0);
        CHECK(labels[i] == 1.0);
    }
    // the whole cell is used
    int cell_count = 0;
    for (Index i = 0; i < 40; ++i)
        if (groups[static_cast<size_t>(i)] == 0 && labels[i] == 1.0) ++cell_count;
    CHECK(static_cast<int>(subset.size()) == cell_count);
}

TEST_CASE("confounded_test_subset proportions match within one part per subset") {
    Rng rng(6);
    for (int trial = 0; trial < 20; ++trial) {
        const Index n = 200 + static_cast<Index>(rng.below(200));
        std::vector<int> groups;
        Vector labels(n);
        for (Index i = 0; i < n; ++i) {
            groups.push_back(rng.bernoulli(0.5) ? 1 : 0);
            labels[i] = rng.bernoulli(0.5) ? 1.0 : 0.0;
        }
        std::array<double, 4> props{0.3 + 0.4 * rng.uniform(), 0.0, 0.0, 0.0};
        props[1] = (1.0 - props[0]) * rng.uniform();
        props[2] = (1.0 - props[0] - props[1]) * rng.uniform();
        props[3] = 1.0 - props[0] - props[1] - props[2];

        const auto subset = confounded_test_subset(groups, labels, props, trial);
        REQUIRE(!subset.empty());
        std::array<double, 4> got{0, 0, 0, 0};
        for (Index i : subset)
            got[static_cast<size_t>(groups[static_cast<size_t>(i)] * 2 +
                                    (labels[i] > 0.5 ? 1 : 0))] += 1.0;
        const double total = static_cast<double>(subset.size());
        for (size_t c = 0; c < 4; ++c)
            CHECK(std::abs(got[c] / total - props[c]) <= 1.0 / total + 1e-12);
    }
}

TEST_CASE("confounded_test_subset raises when a required cell is missing") {
    std::vector<int> groups{0, 0, 0, 0};
    Vector labels(4);
    labels << 0, 0, 1, 1;
    const std::array<double, 4> props{0.25, 0.25, 0.5, 0.0};  // needs group 1, label 0
    CHECK_THROWS_AS(confounded_test_subset(groups, labels, props, 3), EmptyCellRequired);
}

namespace {

ExperimentConfig tiny_sim_experiment() {
    ExperimentConfig cfg;
    cfg.source = DataSource::simulate;
    cfg.sim.d = 4;
    cfg.sim.p = 12;
    cfg.sim.sigma = 2.0;
    cfg.sim.k = 2;
    cfg.sim.concentration = {40.0, 50.0};
    cfg.sim_train_size = 240;
    cfg.sim_test_size = 240;
    cfg.trials = 2;
    cfg.seed = 77;
    MethodSpec logreg;
    logreg.name = "logreg";
    logreg.train.iterations = 250;
    MethodSpec onion;
    onion.name = "logreg_onion";
    onion.train.iterations = 250;
    cfg.methods = {logreg, onion};
    return cfg;
}

}  // namespace

TEST_CASE("run_experiment fills every cell and is deterministic") {
    const ExperimentConfig cfg = tiny_sim_experiment();
    const ExperimentReport a = run_experiment(cfg);
    REQUIRE(a.cells.size() == 4);  // 2 methods x 2 trials x 1 fold
    for (const auto& cell : a.cells) {
        CHECK(cell.error.empty());
        CHECK(cell.auc_entire >= 0.0);
        CHECK(cell.auc_entire <= 1.0);
        CHECK(cell.auc_confounded >= 0.0);
        CHECK(cell.auc_confounded <= 1.0);
    }

    // methods inside one cell consume identical train/test data
    for (int trial = 0; trial < 2; ++trial) {
        const CellResult* first = nullptr;
        for (const auto& cell : a.cells)
            if (cell.trial == trial) {
                if (!first) first = &cell;
                else {
                    CHECK(cell.train_hash == first->train_hash);
                    CHECK(cell.test_hash == first->test_hash);
                }
            }
    }

    const ExperimentReport b = run_experiment(cfg);
    REQUIRE(b.cells.size() == a.cells.size());
    for (size_t i = 0; i < a.cells.size(); ++i) {
        CHECK(a.cells[i].method == b.cells[i].method);
        CHECK(a.cells[i].auc_entire == b.cells[i].auc_entire);
        CHECK(a.cells[i].auc_confounded == b.cells[i].auc_confounded);
    }

    // worker count is a throughput knob, not a result knob
    ExperimentConfig serial = cfg;
    serial.workers = 1;
    const ExperimentReport c = run_experiment(serial);
    for (size_t i = 0; i < a.cells.size(); ++i)
        CHECK(a.cells[i].auc_entire == c.cells[i].auc_entire);
}

TEST_CASE("run_experiment aggregates are recomputable") {
    const ExperimentConfig cfg = tiny_sim_experiment();
    ExperimentReport report = run_experiment(cfg);
    const auto saved = report.aggregates;
    recompute_aggregates(report);
    for (const auto& [method, agg] : saved) {
        CHECK(report.aggregates.at(method)[0].mean == doctest::Approx(agg[0].mean).epsilon(1e-12));
        CHECK(report.aggregates.at(method)[1].sd == doctest::Approx(agg[1].sd).epsilon(1e-12));
    }
}

TEST_CASE("shuffled labels land at chance level") {
    // a cohort with no label signal at all: AUC concentrates at one half
    ExperimentConfig cfg;
    cfg.source = DataSource::cohort;
    cfg.cohort.n = 300;
    cfg.cohort.proxy_features = 2;
    cfg.cohort.label_features = 8;
    cfg.cohort.noise_features = 10;
    cfg.cohort.label_signal = 0.0;
    cfg.fold_count = 3;
    cfg.trials = 7;
    cfg.seed = 13;
    MethodSpec logreg;
    logreg.name = "logreg";
    logreg.train.iterations = 300;
    cfg.methods = {logreg};
    const ExperimentReport report = run_experiment(cfg);
    const auto& agg = report.aggregates.at("logreg")[0];
    CHECK(agg.cells == 21);
    CHECK(agg.mean == doctest::Approx(0.5).epsilon(0.1));
}

TEST_CASE("run_experiment records per-cell failures without aborting") {
    ExperimentConfig cfg = tiny_sim_experiment();
    MethodSpec bad;
    bad.name = "mlp";
    bad.train.iterations = 50;
    bad.train.learning_rate = 1e200;  // overflows within two steps
    cfg.methods.push_back(bad);
    const ExperimentReport report = run_experiment(cfg);
    int failures = 0, successes = 0;
    for (const auto& cell : report.cells) {
        if (cell.error.empty()) ++successes;
        else ++failures;
    }
    CHECK(failures == 2);  // the bad method in both trials
    CHECK(successes == 4);
}
