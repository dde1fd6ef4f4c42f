#include "onion/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace onion {

namespace {

constexpr std::uint64_t kWorldStream = 0x51;
constexpr std::uint64_t kDrawStream = 0x52;
constexpr Index kDrawChunk = 1024;

Vector dirichlet(const std::vector<double>& concentration, Rng& rng) {
    Vector a(static_cast<Index>(concentration.size()));
    double total = 0.0;
    for (Index i = 0; i < a.size(); ++i) {
        a[i] = rng.gamma(concentration[static_cast<size_t>(i)]);
        total += a[i];
    }
    return a / total;
}

}  // namespace

void validate(const SimConfig& config) {
    if (config.d < 1 || config.p < 1 || config.k < 1 || config.n < 1)
        throw ConfigError("sim config: d, p, k, n must be >= 1");
    if (config.sigma <= 0) throw ConfigError("sim config: sigma must be positive");
    if (static_cast<int>(config.concentration.size()) != config.k)
        throw ConfigError("sim config: concentration length must equal k");
    for (double s : config.concentration)
        if (s <= 0) throw ConfigError("sim config: concentration entries must be positive");
}

SimWorld sim_world(const SimConfig& config) {
    validate(config);
    Rng rng(sub_seed(config.seed, kWorldStream));
    SimWorld world;
    world.W_x.reserve(static_cast<size_t>(config.k));
    world.W_y.reserve(static_cast<size_t>(config.k));
    for (int i = 0; i < config.k; ++i) {
        Matrix w(config.d, config.p);
        for (Index r = 0; r < w.rows(); ++r)
            for (Index c = 0; c < w.cols(); ++c) w(r, c) = rng.normal();
        world.W_x.push_back(std::move(w));
        Vector v(config.d);
        for (Index r = 0; r < v.size(); ++r) v[r] = rng.normal();
        world.W_y.push_back(std::move(v));
    }
    world.alpha = dirichlet(config.concentration, rng);
    return world;
}

Dataset sim_draw(const SimWorld& world, const SimConfig& config, Index n, Rng& rng) {
    if (n < 1) throw ConfigError("sim_draw: n must be >= 1");
    const int k = config.k;
    const Index d = config.d, p = config.p;

    Dataset out;
    out.X.resize(n, p);
    out.cov.label.resize(n);
    for (int i = 0; i + 1 < k; ++i)
        out.cov.confounders.push_back(
            {"y" + std::to_string(i + 1), CovariateType::continuous, Vector(n)});

    std::vector<Matrix> z(static_cast<size_t>(k));
    Matrix noise;
    for (Index start = 0; start < n; start += kDrawChunk) {
        const Index rows = std::min(kDrawChunk, n - start);
        for (auto& zi : z) zi.resize(rows, d);
        noise.resize(rows, p);
        Matrix eps_y(rows, k);
        // fixed per-sample draw order keeps results independent of chunking
        for (Index r = 0; r < rows; ++r) {
            for (int i = 0; i < k; ++i)
                for (Index c = 0; c < d; ++c) z[static_cast<size_t>(i)](r, c) = rng.normal();
            for (Index c = 0; c < p; ++c) noise(r, c) = rng.normal();
            for (int i = 0; i < k; ++i) eps_y(r, i) = rng.normal();
        }

        Matrix xblock = config.sigma * noise;
        for (int i = 0; i < k; ++i) xblock.noalias() += z[static_cast<size_t>(i)] * world.W_x[static_cast<size_t>(i)];
        out.X.middleRows(start, rows) = xblock;

        Vector arg = config.sigma * eps_y.col(k - 1) +
                     world.alpha[k - 1] * (z[static_cast<size_t>(k - 1)] * world.W_y[static_cast<size_t>(k - 1)]);
        for (int i = 0; i + 1 < k; ++i) {
            Vector yi = z[static_cast<size_t>(i)] * world.W_y[static_cast<size_t>(i)] +
                        config.sigma * eps_y.col(i);
            out.cov.confounders[static_cast<size_t>(i)].values.segment(start, rows) = yi;
            arg += world.alpha[i] * yi;
        }
        for (Index r = 0; r < rows; ++r) out.cov.label[start + r] = arg[r] > 0.0 ? 1.0 : 0.0;
    }
    return out;
}

namespace {

bool train_filter(double y1, double label) {
    return (y1 < 0.0 && label == 1.0) || (y1 >= 0.0 && label == 0.0);
}

}  // namespace

TrainTestSplit confound_split(const Dataset& data, double test_fraction, std::uint64_t seed) {
    if (data.cov.confounders.size() != 1)
        throw ConfigError("confound_split requires exactly one confounder");
    if (test_fraction <= 0.0 || test_fraction >= 1.0)
        throw ConfigError("test_fraction must be in (0,1)");
    const Index n = data.n();
    std::vector<Index> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), Index{0});
    Rng rng(seed);
    std::shuffle(order.begin(), order.end(), rng.engine());

    const auto n_test = static_cast<size_t>(std::lround(test_fraction * static_cast<double>(n)));
    std::vector<Index> test_idx(order.begin(), order.begin() + static_cast<long>(n_test));
    std::vector<Index> train_idx;
    const Vector& y1 = data.cov.confounders[0].values;
    for (size_t i = n_test; i < order.size(); ++i) {
        const Index s = order[i];
        if (train_filter(y1[s], data.cov.label[s])) train_idx.push_back(s);
    }
    if (train_idx.empty()) throw EmptyTrainingSet("confounding filter removed every sample");
    if (test_idx.empty()) throw EmptyTrainingSet("test fraction left no test samples");
    std::sort(train_idx.begin(), train_idx.end());
    std::sort(test_idx.begin(), test_idx.end());
    return {take_samples(data, train_idx), take_samples(data, test_idx)};
}

Dataset balance_quadrants(const Dataset& data, std::uint64_t seed) {
    if (data.cov.confounders.size() != 1)
        throw ConfigError("balance_quadrants requires exactly one confounder");
    const Vector& y1 = data.cov.confounders[0].values;
    std::vector<Index> cells[4];
    for (Index i = 0; i < data.n(); ++i) {
        const int cell = (y1[i] >= 0.0 ? 2 : 0) + (data.cov.label[i] > 0.5 ? 1 : 0);
        cells[cell].push_back(i);
    }
    size_t quota = cells[0].size();
    for (const auto& c : cells) quota = std::min(quota, c.size());
    if (quota == 0) throw EmptyClass("a quadrant is empty; cannot balance");

    Rng rng(seed);
    std::vector<Index> keep;
    for (auto& c : cells) {
        std::shuffle(c.begin(), c.end(), rng.engine());
        keep.insert(keep.end(), c.begin(), c.begin() + static_cast<long>(quota));
    }
    std::sort(keep.begin(), keep.end());
    return take_samples(data, keep);
}

TrainTestSplit sim_confounded_dataset(const SimWorld& world, const SimConfig& config,
                                      Index train_quota, Index test_quota, double test_fraction,
                                      Rng& rng, bool strict_balance) {
    if (config.k != 2) throw ConfigError("confounded simulation requires k = 2");
    if (train_quota < 1 || test_quota < 1) throw ConfigError("quotas must be >= 1");
    if (test_fraction <= 0.0 || test_fraction >= 1.0)
        throw ConfigError("test_fraction must be in (0,1)");

    std::vector<Index> train_rows, test_rows;
    std::vector<Dataset> chunks;
    const Index max_draws = (train_quota + test_quota) * 200 + 100000;
    Index drawn = 0;
    while ((Index)train_rows.size() < train_quota || (Index)test_rows.size() < test_quota) {
        if (drawn > max_draws)
            throw EmptyTrainingSet("confounding filter acceptance too low to meet quota");
        Dataset chunk = sim_draw(world, config, kDrawChunk, rng);
        const Index base = drawn;
        const Vector& y1 = chunk.cov.confounders[0].values;
        for (Index r = 0; r < chunk.n(); ++r) {
            const bool to_test = rng.bernoulli(test_fraction);
            if (to_test) {
                if ((Index)test_rows.size() < test_quota) test_rows.push_back(base + r);
            } else if ((Index)train_rows.size() < train_quota &&
                       train_filter(y1[r], chunk.cov.label[r])) {
                train_rows.push_back(base + r);
            }
        }
        chunks.push_back(std::move(chunk));
        drawn += kDrawChunk;
    }

    // stitch the accepted rows out of the drawn chunks
    Dataset pool;
    pool.X.resize(drawn, config.p);
    pool.cov.label.resize(drawn);
    pool.cov.confounders.push_back({"y1", CovariateType::continuous, Vector(drawn)});
    Index at = 0;
    for (const auto& chunk : chunks) {
        pool.X.middleRows(at, chunk.n()) = chunk.X;
        pool.cov.label.segment(at, chunk.n()) = chunk.cov.label;
        pool.cov.confounders[0].values.segment(at, chunk.n()) = chunk.cov.confounders[0].values;
        at += chunk.n();
    }

    TrainTestSplit split{take_samples(pool, train_rows), take_samples(pool, test_rows)};
    if (strict_balance)
        split.test = balance_quadrants(split.test, sub_seed(config.seed, kDrawStream + 1));
    return split;
}

Dataset synth_cohort(const CohortConfig& config) {
    if (config.n < 4) throw ConfigError("cohort size too small");
    if (config.proxy_features < 0 || config.label_features < 1 || config.noise_features < 0)
        throw ConfigError("bad cohort feature counts");
    const Index p = config.proxy_features + config.label_features + config.noise_features;

    Rng rng(config.seed);
    Dataset out;
    out.X.resize(config.n, p);
    out.cov.label.resize(config.n);
    Vector group(config.n);
    for (Index r = 0; r < config.n; ++r) {
        const double c = rng.bernoulli(0.5) ? 1.0 : 0.0;
        const double y = rng.bernoulli(0.5) ? 1.0 : 0.0;
        group[r] = c;
        out.cov.label[r] = y;
        Index j = 0;
        for (int f = 0; f < config.proxy_features; ++f, ++j) {
            const double sign = (f % 2 == 0) ? 1.0 : -1.0;
            out.X(r, j) = sign * (2.0 * c - 1.0) + config.proxy_noise * rng.normal();
        }
        for (int f = 0; f < config.label_features; ++f, ++j)
            out.X(r, j) = config.label_signal * (2.0 * y - 1.0) + rng.normal();
        for (int f = 0; f < config.noise_features; ++f, ++j) out.X(r, j) = rng.normal();
    }
    out.cov.confounders.push_back({"group", CovariateType::binary, std::move(group)});
    return out;
}

}  // namespace onion
