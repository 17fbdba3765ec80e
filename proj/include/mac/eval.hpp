#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "mac/common.hpp"
#include "mac/geo.hpp"
#include "mac/recommender.hpp"

namespace mac {

inline double hr_at_k(std::optional<std::size_t> rank, std::size_t k) {
    if (k < 1) throw ConfigError("k must be >= 1");
    return rank && *rank <= k ? 1.0 : 0.0;
}

inline double ndcg_at_k(std::optional<std::size_t> rank, std::size_t k) {
    if (k < 1) throw ConfigError("k must be >= 1");
    if (!rank || *rank > k) return 0.0;
    return 1.0 / std::log2(static_cast<double>(*rank) + 1.0);
}

/// 1-based rank of `target` with ties resolved against it: every other
/// entry scoring at least as high is ranked above.
template <class T>
std::size_t pessimistic_rank(std::span<const T> scores, std::size_t target) {
    std::size_t rank = 1;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (i != target && scores[i] >= scores[target]) ++rank;
    }
    return rank;
}

struct EvalResult {
    std::optional<std::size_t> rank;
    double hr5 = 0.0;
    double hr10 = 0.0;
    double ndcg5 = 0.0;
    double ndcg10 = 0.0;
};

inline EvalResult metrics_for_rank(std::optional<std::size_t> rank) {
    return EvalResult{rank, hr_at_k(rank, 5), hr_at_k(rank, 10), ndcg_at_k(rank, 5), ndcg_at_k(rank, 10)};
}

/// Scores every candidate given `prefix` (eval mode) and ranks `target`.
template <std::floating_point T>
EvalResult evaluate_device(const DeviceModel<T>& model, std::span<const PoiId> prefix, PoiId target,
                           std::span<const PoiId> candidates) {
    auto it = std::find(candidates.begin(), candidates.end(), target);
    if (it == candidates.end()) throw EvaluationError("target POI " + std::to_string(index(target)) + " is not a candidate");
    std::vector<std::size_t> slots;
    slots.reserve(candidates.size());
    for (auto p : candidates) slots.push_back(model.require_slot(p));
    auto tr = trace_poi(model, prefix, std::move(slots), Dropout::off());
    const auto t = static_cast<std::size_t>(it - candidates.begin());
    return metrics_for_rank(pessimistic_rank<T>(tr.scores, t));
}

/// Ranks `target` among its candidate set built from the user's history;
/// the anchor is the last POI of `prefix`.
template <std::floating_point T>
EvalResult evaluate_target(const DeviceModel<T>& model, std::span<const PoiId> prefix, PoiId target,
                           const RegionMap& regions, std::span<const Poi> pois, std::size_t num_candidates) {
    std::vector<PoiId> visited(prefix.begin(), prefix.end());
    std::sort(visited.begin(), visited.end());
    visited.erase(std::unique(visited.begin(), visited.end()), visited.end());
    auto candidates =
        candidate_set(target, visited, pois[index(prefix.back())].coord, regions, pois, num_candidates);
    return evaluate_device(model, prefix, target, candidates);
}

}  // namespace mac
