#include "fibro/folds.hpp"

#include <algorithm>
#include <random>
#include <set>

#include "fibro/error.hpp"
#include "fibro/json_util.hpp"

namespace fibro {

std::vector<std::string> FoldPlan::test_ids(std::size_t fold) const {
    std::vector<std::string> out;
    for (const auto& [id, f] : assignments)
        if (f == fold) out.push_back(id);
    return out;
}

std::vector<std::string> FoldPlan::train_ids(std::size_t fold) const {
    std::vector<std::string> out;
    for (const auto& [id, f] : assignments)
        if (f != fold) out.push_back(id);
    return out;
}

void FoldPlan::validate(const std::vector<std::string>& patient_ids) const {
    if (k < 2) throw ValidationError("fold plan: k must be >= 2");
    const std::set<std::string> ids(patient_ids.begin(), patient_ids.end());
    if (ids.size() != patient_ids.size()) throw ValidationError("fold plan: duplicate patient ids");
    std::vector<std::size_t> sizes(k, 0);
    for (const auto& [id, f] : assignments) {
        if (!ids.count(id)) throw ValidationError("fold plan: unknown patient '" + id + "'");
        if (f >= k) throw ValidationError("fold plan: fold index out of range for '" + id + "'");
        ++sizes[f];
    }
    for (const std::string& id : patient_ids) {
        if (!assignments.count(id)) throw ValidationError("fold plan: patient '" + id + "' unassigned");
    }
    const auto [lo, hi] = std::minmax_element(sizes.begin(), sizes.end());
    if (*hi - *lo > 1) throw ValidationError("fold plan: fold sizes differ by more than one");
}

FoldPlan make_folds(std::vector<std::string> patient_ids, std::size_t k, std::uint64_t seed) {
    if (k < 2) throw ValidationError("make_folds: k must be >= 2");
    if (k > patient_ids.size()) {
        throw ValidationError("make_folds: k=" + std::to_string(k) + " exceeds patient count " +
                              std::to_string(patient_ids.size()));
    }
    std::sort(patient_ids.begin(), patient_ids.end());
    if (std::adjacent_find(patient_ids.begin(), patient_ids.end()) != patient_ids.end()) {
        throw ValidationError("make_folds: duplicate patient ids");
    }
    std::mt19937_64 rng(seed);
    for (std::size_t i = patient_ids.size(); i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng() % i);
        std::swap(patient_ids[i - 1], patient_ids[j]);
    }
    FoldPlan plan;
    plan.k = k;
    plan.seed = seed;
    for (std::size_t i = 0; i < patient_ids.size(); ++i) plan.assignments[patient_ids[i]] = i % k;
    return plan;
}

void to_json(nlohmann::json& j, const FoldPlan& plan) {
    j = nlohmann::json{{"k", plan.k}, {"seed", plan.seed}, {"assignments", plan.assignments}};
}

void from_json(const nlohmann::json& j, FoldPlan& plan) {
    try {
        plan.k = json_unsigned<std::size_t>(j.at("k"), "fold plan: k");
        plan.seed = json_unsigned(j, "seed", std::uint64_t{0}, "fold plan");
        plan.assignments.clear();
        for (const auto& [id, fold] : j.at("assignments").items())
            plan.assignments[id] = json_unsigned<std::size_t>(fold, "fold plan: fold of " + id);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("fold plan: ") + e.what());
    }
}

} // namespace fibro
