#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <span>
#include <vector>

#include "mac/common.hpp"
#include "mac/core_data.hpp"
#include "mac/geo.hpp"

namespace mac {

inline constexpr double kCategorySmoothing = 1e-6;

/// What a device uploads to the server: visited regions (current first)
/// and its category preference distribution.
struct UserSummary {
    UserId user{};
    std::vector<RegionId> visited_regions;
    std::vector<double> category_distribution;

    RegionId current_region() const { return visited_regions.front(); }
    bool visited(RegionId r) const {
        return std::find(visited_regions.begin(), visited_regions.end(), r) != visited_regions.end();
    }
};

struct NeighborState {
    std::vector<UserId> geo_full;  // ascending
    std::vector<UserId> sem_full;  // ascending
    std::vector<UserId> geo_active;
    std::vector<UserId> sem_active;
};

/// Empirical category frequencies with additive smoothing so every entry is
/// strictly positive.
inline std::vector<double> category_distribution(std::span<const CategoryId> categories, std::size_t num_categories,
                                                 double epsilon = kCategorySmoothing) {
    if (categories.empty()) throw DataError("category distribution of an empty sequence");
    std::vector<double> dist(num_categories, epsilon);
    for (auto c : categories) dist.at(index(c)) += 1.0;
    const double total = static_cast<double>(categories.size()) + epsilon * static_cast<double>(num_categories);
    for (auto& x : dist) x /= total;
    return dist;
}

/// KL(p || q) in nats; terms with p_i == 0 contribute nothing.
inline double kl_divergence(std::span<const double> p, std::span<const double> q) {
    if (p.size() != q.size()) throw DataError("KL divergence of vectors with different lengths");
    double kl = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] > 0.0) kl += p[i] * std::log(p[i] / q[i]);
    }
    return kl;
}

/// Summary of a training sequence: regions in order current, then the rest
/// by first visit.
inline UserSummary summarize_user(const CheckinSequence& train, const RegionMap& regions, std::size_t num_categories) {
    if (train.empty()) throw DataError("cannot summarize an empty sequence");
    UserSummary s;
    s.user = train.user;
    s.visited_regions.push_back(regions.region_of(train.pois.back()));
    for (auto p : train.pois) {
        const auto r = regions.region_of(p);
        if (!s.visited(r)) s.visited_regions.push_back(r);
    }
    s.category_distribution = category_distribution(train.categories, num_categories);
    return s;
}

/// u_j is a geographic neighbor of u_i iff u_j visited u_i's current region.
/// Keys of the result follow the order of `summaries`.
inline std::vector<std::vector<UserId>> identify_geo_neighbors(std::span<const UserSummary> summaries) {
    std::vector<std::vector<UserId>> out(summaries.size());
    for (std::size_t i = 0; i < summaries.size(); ++i) {
        const auto current = summaries[i].current_region();
        for (std::size_t j = 0; j < summaries.size(); ++j) {
            if (i != j && summaries[j].visited(current)) out[i].push_back(summaries[j].user);
        }
        std::sort(out[i].begin(), out[i].end());
    }
    return out;
}

/// The h users with the smallest KL(CP_i || CP_j) (ties by user id) plus
/// every friend of u_i among the summarized users.
inline std::vector<std::vector<UserId>> identify_sem_neighbors(std::span<const UserSummary> summaries, std::size_t h,
                                                               const SocialGraph& graph) {
    if (h < 1) throw ConfigError("h must be >= 1");
    std::vector<std::vector<UserId>> out(summaries.size());
    std::vector<UserId> known;
    for (const auto& s : summaries) known.push_back(s.user);
    std::sort(known.begin(), known.end());
    for (std::size_t i = 0; i < summaries.size(); ++i) {
        std::vector<std::pair<double, UserId>> ranked;
        for (std::size_t j = 0; j < summaries.size(); ++j) {
            if (i == j) continue;
            ranked.emplace_back(
                kl_divergence(summaries[i].category_distribution, summaries[j].category_distribution),
                summaries[j].user);
        }
        std::sort(ranked.begin(), ranked.end());
        auto& set = out[i];
        for (std::size_t k = 0; k < std::min(h, ranked.size()); ++k) set.push_back(ranked[k].second);
        for (auto f : graph.friends(summaries[i].user)) {
            if (f != summaries[i].user && std::binary_search(known.begin(), known.end(), f)) set.push_back(f);
        }
        std::sort(set.begin(), set.end());
        set.erase(std::unique(set.begin(), set.end()), set.end());
    }
    return out;
}

/// Uniform sample of min(k, |pool|) distinct users, returned ascending.
inline std::vector<UserId> sample_without_replacement(std::span<const UserId> pool, std::size_t k, Rng& rng) {
    std::vector<UserId> v(pool.begin(), pool.end());
    if (k < v.size()) {
        for (std::size_t i = 0; i < k; ++i) {
            std::uniform_int_distribution<std::size_t> pick(i, v.size() - 1);
            std::swap(v[i], v[pick(rng)]);
        }
        v.resize(k);
    }
    std::sort(v.begin(), v.end());
    return v;
}

/// Relative change of the local loss in percent. A zero previous loss
/// counts as no change.
inline double loss_change_percent(double previous, double current) {
    if (previous == 0.0) return 0.0;
    return std::abs(current - previous) / previous * 100.0;
}

inline bool should_resample(double previous, double current, double tau_percent) {
    return loss_change_percent(previous, current) < tau_percent;
}

inline void draw_actives(NeighborState& state, std::size_t sample_size, Rng& rng) {
    state.geo_active = sample_without_replacement(state.geo_full, sample_size, rng);
    state.sem_active = sample_without_replacement(state.sem_full, sample_size, rng);
}

struct SamplingOutcome {
    NeighborState state;
    bool resampled = false;
};

/// Redraws both active sets when the relative loss change falls below tau.
inline SamplingOutcome perf_triggered_resample(NeighborState state, double previous_loss, double current_loss,
                                               double tau_percent, std::size_t alpha, Rng& rng) {
    SamplingOutcome out{std::move(state), false};
    if (should_resample(previous_loss, current_loss, tau_percent)) {
        draw_actives(out.state, alpha, rng);
        out.resampled = true;
    }
    return out;
}

/// Sum over aligned reference sequences of KL(own || other).
inline double soft_distance(std::span<const std::vector<double>> own, std::span<const std::vector<double>> other) {
    if (own.size() != other.size()) throw DataError("soft decisions cover different reference sets");
    double d = 0.0;
    for (std::size_t i = 0; i < own.size(); ++i) d += kl_divergence(own[i], other[i]);
    return d;
}

/// The `beta` candidates with the smallest distance (ties by user id).
/// Candidates without a known distance are skipped with a warning.
inline std::vector<UserId> select_most_similar(std::span<const UserId> candidates,
                                               const std::map<UserId, double>& distance, std::size_t beta) {
    std::vector<std::pair<double, UserId>> ranked;
    for (auto u : candidates) {
        auto it = distance.find(u);
        if (it == distance.end()) {
            warn("no soft decisions from user " + std::to_string(index(u)) + "; skipped");
            continue;
        }
        ranked.emplace_back(it->second, u);
    }
    std::sort(ranked.begin(), ranked.end());
    if (ranked.size() > beta) ranked.resize(beta);
    std::vector<UserId> out;
    for (const auto& [d, u] : ranked) out.push_back(u);
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace mac
