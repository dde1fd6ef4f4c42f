#pragma once

#include "onion/types.hpp"

#include <utility>

namespace onion {

// Expected and observed read fractions indexed by integer percent GC, 0..100.
struct GcProfile {
    Vector expected_fraction;
    Vector observed_fraction;
};

void validate(const GcProfile& profile);

// Total shortfall of observed versus expected coverage over gc in [0, 50]:
// sum of max(E_gc - O_gc, 0).
double at_dropout(const GcProfile& profile);

// Thins the listed (group, label) cells with the given probability. Group is
// derived from a covariate: value < threshold -> group 0, else group 1.
struct BiasSubsampleRule {
    std::string group_covariate;
    double threshold = 0.5;
    double drop_probability = 0.9;
    std::vector<std::pair<int, int>> drop_cells;  // (group, label)
};

int group_of(const BiasSubsampleRule& rule, double covariate_value);

// Retained sample indices; samples outside drop cells are never touched.
std::vector<Index> biased_subsample_indices(const Dataset& data, const BiasSubsampleRule& rule,
                                            std::uint64_t seed);

Dataset biased_subsample(const Dataset& data, const BiasSubsampleRule& rule, std::uint64_t seed);

// Drop cells {(below-threshold, healthy), (above-threshold, cancer)} on an
// AT-dropout covariate: healthy samples with low dropout and cancer samples
// with high dropout are thinned, tying the label to GC bias in training.
BiasSubsampleRule gc_confound_rule(double threshold = 3.5, double drop_probability = 0.9,
                                   std::string covariate = "at_dropout");

}  // namespace onion
