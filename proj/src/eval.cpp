#include "onion/eval.hpp"

#include "onion/basis.hpp"
#include "onion/preprocess.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <thread>

namespace onion {

double auc(const Eigen::Ref<const Vector>& scores, const Eigen::Ref<const Vector>& labels) {
    const Index n = scores.size();
    if (labels.size() != n) throw DimensionMismatch("auc: scores/labels length mismatch");
    check_binary_label(labels);
    Index n1 = 0;
    for (Index i = 0; i < n; ++i) n1 += labels[i] > 0.5 ? 1 : 0;
    const Index n0 = n - n1;
    if (n0 == 0 || n1 == 0) throw SingleClass("auc requires both classes");

    std::vector<Index> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), Index{0});
    std::sort(order.begin(), order.end(),
              [&](Index a, Index b) { return scores[a] < scores[b]; });

    // average ranks over tie groups give ties half credit
    double positive_rank_sum = 0.0;
    size_t i = 0;
    while (i < order.size()) {
        size_t j = i;
        while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double avg_rank = 0.5 * static_cast<double>(i + 1 + j + 1);
        for (size_t t = i; t <= j; ++t)
            if (labels[order[t]] > 0.5) positive_rank_sum += avg_rank;
        i = j + 1;
    }
    const double u = positive_rank_sum -
                     0.5 * static_cast<double>(n1) * static_cast<double>(n1 + 1);
    return u / (static_cast<double>(n1) * static_cast<double>(n0));
}

FoldPlan make_folds(const Eigen::Ref<const Vector>& labels, int fold_count, std::uint64_t seed) {
    const Index n = labels.size();
    if (fold_count < 2) throw ConfigError("fold_count must be >= 2");
    if (n < fold_count) throw TooFewSamples("fewer samples than folds");
    check_binary_label(labels);
    std::vector<Index> cls[2];
    for (Index i = 0; i < n; ++i) cls[labels[i] > 0.5 ? 1 : 0].push_back(i);
    for (const auto& c : cls)
        if (static_cast<int>(c.size()) < fold_count)
            throw TooFewSamples("each class needs at least fold_count members");

    FoldPlan plan;
    plan.fold_count = fold_count;
    plan.assignments.assign(static_cast<size_t>(n), -1);
    std::vector<int> load(static_cast<size_t>(fold_count), 0);
    Rng rng(seed);
    for (auto& idx : cls) {
        std::shuffle(idx.begin(), idx.end(), rng.engine());
        const int base = static_cast<int>(idx.size()) / fold_count;
        const int extra = static_cast<int>(idx.size()) % fold_count;
        // extras go to the currently least-loaded folds, keeping overall
        // fold sizes within one of each other
        std::vector<int> fold_order(static_cast<size_t>(fold_count));
        std::iota(fold_order.begin(), fold_order.end(), 0);
        std::stable_sort(fold_order.begin(), fold_order.end(),
                         [&](int a, int b) { return load[a] < load[b]; });
        size_t at = 0;
        for (int rank = 0; rank < fold_count; ++rank) {
            const int f = fold_order[static_cast<size_t>(rank)];
            const int take_n = base + (rank < extra ? 1 : 0);
            for (int t = 0; t < take_n; ++t)
                plan.assignments[static_cast<size_t>(idx[at++])] = f;
            load[static_cast<size_t>(f)] += take_n;
        }
    }
    return plan;
}

std::array<double, 4> cell_proportions(const std::vector<int>& groups,
                                       const Eigen::Ref<const Vector>& labels) {
    if (static_cast<Index>(groups.size()) != labels.size())
        throw DimensionMismatch("cell_proportions: length mismatch");
    std::array<double, 4> counts{0, 0, 0, 0};
    for (size_t i = 0; i < groups.size(); ++i)
        counts[static_cast<size_t>(groups[i] * 2 + (labels[static_cast<Index>(i)] > 0.5 ? 1 : 0))] += 1.0;
    const double total = counts[0] + counts[1] + counts[2] + counts[3];
    if (total == 0) throw Error("cell_proportions: no samples");
    for (auto& c : counts) c /= total;
    return counts;
}

std::vector<Index> confounded_test_subset(const std::vector<int>& test_groups,
                                          const Eigen::Ref<const Vector>& test_labels,
                                          const std::array<double, 4>& train_proportions,
                                          std::uint64_t seed) {
    if (static_cast<Index>(test_groups.size()) != test_labels.size())
        throw DimensionMismatch("confounded_test_subset: length mismatch");
    std::array<std::vector<Index>, 4> members;
    for (size_t i = 0; i < test_groups.size(); ++i) {
        const auto cell = static_cast<size_t>(
            test_groups[i] * 2 + (test_labels[static_cast<Index>(i)] > 0.5 ? 1 : 0));
        members[cell].push_back(static_cast<Index>(i));
    }

    double m = std::numeric_limits<double>::infinity();
    for (size_t c = 0; c < 4; ++c) {
        if (train_proportions[c] <= 0.0) continue;
        if (members[c].empty())
            throw EmptyCellRequired("training has mass in cell " + std::to_string(c) +
                                    " but the test set has none");
        m = std::min(m, std::floor(static_cast<double>(members[c].size()) /
                                       train_proportions[c] +
                                   1e-9));
    }
    if (!std::isfinite(m)) throw Error("confounded_test_subset: all-zero proportions");

    // largest-remainder apportionment of m across the cells
    std::array<long, 4> target{0, 0, 0, 0};
    std::array<double, 4> remainder{0, 0, 0, 0};
    long assigned = 0;
    for (size_t c = 0; c < 4; ++c) {
        const double exact = m * train_proportions[c];
        target[c] = static_cast<long>(std::floor(exact + 1e-9));
        remainder[c] = exact - static_cast<double>(target[c]);
        assigned += target[c];
    }
    std::array<size_t, 4> by_remainder{0, 1, 2, 3};
    std::stable_sort(by_remainder.begin(), by_remainder.end(),
                     [&](size_t a, size_t b) { return remainder[a] > remainder[b]; });
    for (size_t r = 0; assigned < static_cast<long>(m) && r < 4; ++r) {
        target[by_remainder[r]] += 1;
        ++assigned;
    }

    Rng rng(seed);
    std::vector<Index> subset;
    for (size_t c = 0; c < 4; ++c) {
        auto take_n = static_cast<size_t>(
            std::min<long>(target[c], static_cast<long>(members[c].size())));
        std::shuffle(members[c].begin(), members[c].end(), rng.engine());
        subset.insert(subset.end(), members[c].begin(),
                      members[c].begin() + static_cast<long>(take_n));
    }
    std::sort(subset.begin(), subset.end());
    return subset;
}

namespace {

std::uint64_t fnv64(const void* data, size_t bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
    const auto* b = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < bytes; ++i) {
        h ^= b[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t hash_dataset(const Dataset& ds) {
    std::uint64_t h = fnv64(ds.cov.label.data(), sizeof(double) * ds.cov.label.size());
    for (const auto& c : ds.cov.confounders)
        h = fnv64(c.values.data(), sizeof(double) * c.values.size(), h);
    h = fnv64(ds.X.data(), sizeof(double) * std::min<Index>(ds.X.size(), 4096), h);
    return h;
}

std::vector<int> binarize_groups(const Vector& values, double threshold) {
    std::vector<int> g(static_cast<size_t>(values.size()));
    for (Index i = 0; i < values.size(); ++i) g[static_cast<size_t>(i)] = values[i] < threshold ? 0 : 1;
    return g;
}

const Covariate& grouping_confounder(const Dataset& ds, const ExperimentConfig& cfg) {
    if (ds.cov.confounders.empty()) throw ConfigError("experiment data has no confounders");
    if (cfg.confounder_name.empty()) return ds.cov.confounders.front();
    for (const auto& c : ds.cov.confounders)
        if (c.name == cfg.confounder_name) return c;
    throw ConfigError("confounder '" + cfg.confounder_name + "' not found");
}

double resolve_threshold(const ExperimentConfig& cfg, const Covariate& c) {
    if (!std::isnan(cfg.confounder_threshold)) return cfg.confounder_threshold;
    return c.type == CovariateType::binary ? 0.5 : 0.0;
}

std::vector<Vector> confounder_vectors(const Dataset& ds) {
    std::vector<Vector> out;
    out.reserve(ds.cov.confounders.size());
    for (const auto& c : ds.cov.confounders) out.push_back(c.values);
    return out;
}

struct CellData {
    Dataset train;
    Dataset test;
    std::vector<Index> subset;  // confounded test subset, into test rows
    std::uint64_t train_hash = 0;
    std::uint64_t test_hash = 0;
};

CellData build_cell_data(const ExperimentConfig& cfg, const Dataset* ingested, int trial,
                         int fold) {
    CellData cell;
    const std::uint64_t trial_seed = sub_seed(cfg.seed, 1000 + static_cast<std::uint64_t>(trial));
    const std::uint64_t cell_seed =
        sub_seed(cfg.seed, 7919 * static_cast<std::uint64_t>(trial + 1) +
                               static_cast<std::uint64_t>(fold));

    if (cfg.source == DataSource::simulate) {
        SimConfig sim = cfg.sim;
        sim.seed = trial_seed;
        const SimWorld world = sim_world(sim);
        Rng draw_rng(sub_seed(sim.seed, 0xD7A3));
        TrainTestSplit split =
            sim_confounded_dataset(world, sim, cfg.sim_train_size, cfg.sim_test_size,
                                   cfg.sim_test_fraction, draw_rng, cfg.sim_strict_balance);
        cell.train = std::move(split.train);
        cell.test = std::move(split.test);
    } else {
        Dataset full;
        const Dataset* base = nullptr;
        if (cfg.source == DataSource::cohort) {
            CohortConfig cc = cfg.cohort;
            cc.seed = trial_seed;
            full = synth_cohort(cc);
            base = &full;
        } else {
            if (!ingested) throw ConfigError("files source requires a loaded dataset");
            base = ingested;
        }
        const FoldPlan plan = make_folds(base->cov.label, cfg.fold_count,
                                         sub_seed(cfg.seed, 3000 + static_cast<std::uint64_t>(trial)));
        std::vector<Index> train_idx, test_idx;
        for (Index i = 0; i < base->n(); ++i) {
            if (plan.assignments[static_cast<size_t>(i)] == fold) test_idx.push_back(i);
            else train_idx.push_back(i);
        }
        cell.train = take_samples(*base, train_idx);
        cell.test = take_samples(*base, test_idx);
        if (cfg.confounding)
            cell.train = biased_subsample(cell.train, *cfg.confounding,
                                          sub_seed(cell_seed, 0xB1A5));
    }

    const Covariate& train_conf = grouping_confounder(cell.train, cfg);
    const Covariate& test_conf = grouping_confounder(cell.test, cfg);
    const double thr = resolve_threshold(cfg, train_conf);
    const auto train_groups = binarize_groups(train_conf.values, thr);
    const auto test_groups = binarize_groups(test_conf.values, thr);
    cell.subset = confounded_test_subset(test_groups, cell.test.cov.label,
                                         cell_proportions(train_groups, cell.train.cov.label),
                                         sub_seed(cell_seed, 0x5E7));
    cell.train_hash = hash_dataset(cell.train);
    cell.test_hash = hash_dataset(cell.test);
    return cell;
}

struct PreparedCell {
    Matrix Xtr;
    Matrix Xte;
};

PreparedCell preprocess_cell(const ExperimentConfig& cfg, const CellData& cell) {
    PreparedCell prep;
    Matrix tr = cell.train.X;
    Matrix te = cell.test.X;
    if (cfg.depth_normalize) {
        tr = depth_normalize(tr, cfg.depth_constant);
        te = depth_normalize(te, cfg.depth_constant);
    }
    if (cfg.standardize) {
        const PreprocessorState st = fit_preprocessor(tr);
        prep.Xtr = apply_preprocessor(st, tr);
        prep.Xte = apply_preprocessor(st, te);
    } else {
        const Centered c = center_columns(tr);
        prep.Xtr = c.values;
        prep.Xte = te.rowwise() - c.mean;
    }
    return prep;
}

Vector fit_and_score(const MethodSpec& spec, const Matrix& Xtr_in, const Matrix& Xte_in,
                     const CellData& cell, std::uint64_t method_seed) {
    TrainConfig train = spec.train;
    train.seed = method_seed;
    const Vector& ytr = cell.train.cov.label;

    Matrix Xtr = Xtr_in;
    Matrix Xte = Xte_in;
    if (spec.pca_components > 0) {
        PcaResult pca = pca_reduce(Xtr, Xte, spec.pca_components);
        Xtr = std::move(pca.train_scores);
        Xte = std::move(pca.test_scores);
    }

    if (spec.name == "logreg") {
        return predict_logits(logreg_fit(Xtr, ytr, train).params, Xte);
    }
    if (spec.name == "logreg_onion") {
        const OnionFit fit = onion_fit(Xtr, confounder_vectors(cell.train), 1e-10, 1000,
                                       sub_seed(method_seed, 0x0B));
        const Matrix tr_n = onion_transform(Xtr, fit.basis);
        const Matrix te_n = onion_transform(Xte, fit.basis);
        return predict_logits(logreg_fit(tr_n, ytr, train).params, te_n);
    }
    if (spec.name == "logreg_ancova") {
        const auto kept = ancova_filter(Xtr, ytr, confounder_vectors(cell.train),
                                        spec.ancova_alpha);
        Matrix tr_f(Xtr.rows(), static_cast<Index>(kept.size()));
        Matrix te_f(Xte.rows(), static_cast<Index>(kept.size()));
        for (size_t j = 0; j < kept.size(); ++j) {
            tr_f.col(static_cast<Index>(j)) = Xtr.col(kept[j]);
            te_f.col(static_cast<Index>(j)) = Xte.col(kept[j]);
        }
        return predict_logits(logreg_fit(tr_f, ytr, train).params, te_f);
    }
    if (spec.name == "mlp") {
        return predict_logits(mlp_fit(Xtr, ytr, train).params, Xte);
    }
    if (spec.name == "dann") {
        const Holdout ho = training_holdout(ytr, train);
        ValidationSet val;
        val.X = take_rows(Xtr, ho.val);
        val.y = take(ytr, ho.val);
        std::vector<Covariate> confs;
        for (const auto& c : cell.train.cov.confounders) {
            confs.push_back({c.name, c.type, take(c.values, ho.train)});
            val.confounders.push_back(take(c.values, ho.val));
        }
        const DannFit fit = dann_fit(take_rows(Xtr, ho.train), take(ytr, ho.train), confs,
                                     train, val);
        return predict_logits(fit.params, Xte);
    }
    throw ConfigError("unknown method '" + spec.name + "'");
}

}  // namespace

void recompute_aggregates(ExperimentReport& report) {
    report.aggregates.clear();
    std::map<std::string, std::array<std::vector<double>, 2>> values;
    for (const auto& cell : report.cells) {
        if (!cell.error.empty()) continue;
        values[cell.method][0].push_back(cell.auc_entire);
        values[cell.method][1].push_back(cell.auc_confounded);
    }
    for (auto& [method, kinds] : values) {
        std::array<Aggregate, 2> agg;
        for (size_t k = 0; k < 2; ++k) {
            const auto& v = kinds[k];
            Aggregate a;
            a.cells = static_cast<int>(v.size());
            if (!v.empty()) {
                a.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
                double ss = 0.0;
                for (double x : v) ss += (x - a.mean) * (x - a.mean);
                a.sd = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
                a.stderr_mean = a.sd / std::sqrt(static_cast<double>(v.size()));
            }
            agg[k] = a;
        }
        report.aggregates[method] = agg;
    }
}

ExperimentReport run_experiment(const ExperimentConfig& config, const Dataset* ingested) {
    if (config.trials < 1) throw ConfigError("trials must be >= 1");
    if (config.methods.empty()) throw ConfigError("no methods configured");
    const int folds = config.source == DataSource::simulate ? 1 : config.fold_count;

    struct Task {
        int trial, fold;
    };
    std::vector<Task> tasks;
    for (int t = 0; t < config.trials; ++t)
        for (int f = 0; f < folds; ++f) tasks.push_back({t, f});

    std::vector<std::vector<CellResult>> slots(tasks.size());
    std::atomic<size_t> next{0};
    auto worker = [&]() {
        for (;;) {
            const size_t ti = next.fetch_add(1);
            if (ti >= tasks.size()) return;
            const Task task = tasks[ti];
            auto& out = slots[ti];
            out.resize(config.methods.size());
            for (size_t mi = 0; mi < config.methods.size(); ++mi) {
                out[mi].method = config.methods[mi].name;
                out[mi].trial = task.trial;
                out[mi].fold = task.fold;
            }
            try {
                const CellData cell = build_cell_data(config, ingested, task.trial, task.fold);
                const PreparedCell prep = preprocess_cell(config, cell);
                const std::uint64_t cell_seed =
                    sub_seed(config.seed, 7919 * static_cast<std::uint64_t>(task.trial + 1) +
                                              static_cast<std::uint64_t>(task.fold));
                const Vector& yte = cell.test.cov.label;
                const Vector yte_sub = take(yte, cell.subset);
                for (size_t mi = 0; mi < config.methods.size(); ++mi) {
                    auto& res = out[mi];
                    res.train_hash = cell.train_hash;
                    res.test_hash = cell.test_hash;
                    try {
                        const Vector scores =
                            fit_and_score(config.methods[mi], prep.Xtr, prep.Xte, cell,
                                          sub_seed(cell_seed, 100 + mi));
                        res.auc_entire = auc(scores, yte);
                        res.auc_confounded = auc(take(scores, cell.subset), yte_sub);
                    } catch (const std::exception& e) {
                        res.error = e.what();
                    }
                }
            } catch (const std::exception& e) {
                for (auto& res : out)
                    if (res.error.empty()) res.error = e.what();
            }
        }
    };

    int workers = config.workers > 0 ? config.workers
                                     : static_cast<int>(std::thread::hardware_concurrency());
    workers = std::max(1, std::min<int>(workers, static_cast<int>(tasks.size())));
    std::vector<std::thread> pool;
    for (int w = 1; w < workers; ++w) pool.emplace_back(worker);
    worker();
    for (auto& th : pool) th.join();

    // tasks are already (trial, fold)-ordered, so this flattening yields
    // cells ordered by (configured method order, trial, fold)
    ExperimentReport report;
    for (size_t mi = 0; mi < config.methods.size(); ++mi)
        for (size_t ti = 0; ti < tasks.size(); ++ti)
            report.cells.push_back(std::move(slots[ti][mi]));
    recompute_aggregates(report);
    return report;
}

}  // namespace onion
