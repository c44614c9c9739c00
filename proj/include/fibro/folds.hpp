#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

namespace fibro {

/// Patient-level assignment to k folds. Fold f's test set is the patients
/// mapped to f; its training set is everyone else.
struct FoldPlan {
    std::size_t k = 5;
    std::uint64_t seed = 0;
    std::map<std::string, std::size_t> assignments;

    std::vector<std::string> test_ids(std::size_t fold) const;
    std::vector<std::string> train_ids(std::size_t fold) const;
    /// Throws ValidationError unless every id of `patient_ids` is assigned to
    /// exactly one fold in [0, k), no foreign ids are present, and fold sizes
    /// differ by at most one.
    void validate(const std::vector<std::string>& patient_ids) const;
};

/// Fisher-Yates shuffle of the ids (mt19937_64 seeded with `seed`), then
/// round-robin assignment. The input order does not matter: ids are sorted
/// before shuffling.
FoldPlan make_folds(std::vector<std::string> patient_ids, std::size_t k, std::uint64_t seed);

void to_json(nlohmann::json& j, const FoldPlan& plan);
void from_json(const nlohmann::json& j, FoldPlan& plan);

} // namespace fibro
