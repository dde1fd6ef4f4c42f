#include "onion/confound.hpp"

#include "onion/rng.hpp"

#include <algorithm>

namespace onion {

void validate(const GcProfile& profile) {
    if (profile.expected_fraction.size() != 101 || profile.observed_fraction.size() != 101)
        throw DimensionMismatch("GC profile must cover percent GC 0..100");
    for (Index i = 0; i < 101; ++i) {
        if (profile.expected_fraction[i] < 0 || profile.observed_fraction[i] < 0)
            throw Error("GC profile fractions must be non-negative");
    }
}

double at_dropout(const GcProfile& profile) {
    validate(profile);
    double total = 0.0;
    for (Index gc = 0; gc <= 50; ++gc)
        total += std::max(profile.expected_fraction[gc] - profile.observed_fraction[gc], 0.0);
    return total;
}

int group_of(const BiasSubsampleRule& rule, double covariate_value) {
    return covariate_value < rule.threshold ? 0 : 1;
}

std::vector<Index> biased_subsample_indices(const Dataset& data, const BiasSubsampleRule& rule,
                                            std::uint64_t seed) {
    if (rule.drop_probability < 0.0 || rule.drop_probability > 1.0)
        throw ConfigError("drop_probability must be in [0,1]");
    const Covariate* cov = nullptr;
    for (const auto& c : data.cov.confounders)
        if (c.name == rule.group_covariate) cov = &c;
    if (!cov) throw ConfigError("group covariate '" + rule.group_covariate + "' not found");

    Rng rng(seed);
    std::vector<Index> keep;
    keep.reserve(static_cast<size_t>(data.n()));
    for (Index i = 0; i < data.n(); ++i) {
        const int group = group_of(rule, cov->values[i]);
        const int label = data.cov.label[i] > 0.5 ? 1 : 0;
        const bool in_drop_cell =
            std::find(rule.drop_cells.begin(), rule.drop_cells.end(),
                      std::make_pair(group, label)) != rule.drop_cells.end();
        // the rng is consulted for every drop-cell member so retention is
        // independent per sample
        if (in_drop_cell && rng.bernoulli(rule.drop_probability)) continue;
        keep.push_back(i);
    }

    bool has[2] = {false, false};
    for (Index i : keep) has[data.cov.label[i] > 0.5 ? 1 : 0] = true;
    if (!has[0] || !has[1]) throw EmptyClass("biased subsampling emptied a label class");
    return keep;
}

Dataset biased_subsample(const Dataset& data, const BiasSubsampleRule& rule, std::uint64_t seed) {
    return take_samples(data, biased_subsample_indices(data, rule, seed));
}

BiasSubsampleRule gc_confound_rule(double threshold, double drop_probability,
                                   std::string covariate) {
    BiasSubsampleRule rule;
    rule.group_covariate = std::move(covariate);
    rule.threshold = threshold;
    rule.drop_probability = drop_probability;
    rule.drop_cells = {{0, 0}, {1, 1}};  // (low dropout, healthy), (high dropout, cancer)
    return rule;
}

}  // namespace onion
