#pragma once

#include <cmath>
#include <numbers>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "mac/common.hpp"
#include "mac/core_data.hpp"

namespace mac {

/// Synthetic city generator. Each region is a set of POI groups; a group is
/// a tight spatial cluster whose POIs share one category, and group g has
/// the same category in every region. Regular users live in one region and
/// mostly move inside their current group, switching to the next group of a
/// region-wide cycle now and then. Noise users pick uniformly random POIs of
/// their region at every step.
struct SyntheticParams {
    std::size_t users = 100;
    std::size_t regions = 2;
    std::size_t groups = 12;
    std::size_t pois_per_group = 10;
    std::size_t min_length = 25;
    std::size_t max_length = 40;
    double stay_in_group = 0.8;     // otherwise move to the next group
    double random_jump = 0.05;      // any POI of the region
    double noise_fraction = 0.0;
    double friend_probability = 0.08;  // per same-region pair
    double region_gap_km = 20.0;
    double region_radius_km = 3.0;
    double group_radius_km = 0.3;
    GeoPoint origin{-73.98, 40.75};
    std::uint64_t seed = 0;
};

struct SyntheticData {
    CheckinTable table;
    std::vector<std::pair<UserId, UserId>> friendships;
    std::vector<bool> noise_user;
    std::vector<std::size_t> home_region;
};

namespace detail {

inline GeoPoint offset_km(const GeoPoint& p, double east_km, double north_km) {
    constexpr double km_per_deg = 111.32;
    const double lat = p.lat + north_km / km_per_deg;
    const double lon = p.lon + east_km / (km_per_deg * std::cos(p.lat * std::numbers::pi / 180.0));
    return GeoPoint{lon, lat};
}

}  // namespace detail

inline SyntheticData generate_synthetic(const SyntheticParams& params) {
    if (params.users == 0 || params.regions == 0 || params.groups == 0 || params.pois_per_group == 0) {
        throw ConfigError("synthetic generator needs users, regions, groups and POIs");
    }
    if (params.min_length < 3 || params.max_length < params.min_length) throw ConfigError("bad sequence lengths");
    Rng rng(derive_seed(params.seed, stream::synthetic));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    SyntheticData out;
    auto& t = out.table;
    for (std::size_t g = 0; g < params.groups; ++g) t.categories.push_back("cat_" + std::to_string(g));

    // pois[r][g] lists the POIs of group g in region r
    std::vector<std::vector<std::vector<PoiId>>> layout(params.regions,
                                                        std::vector<std::vector<PoiId>>(params.groups));
    for (std::size_t r = 0; r < params.regions; ++r) {
        const auto center = detail::offset_km(params.origin, params.region_gap_km * static_cast<double>(r), 0.0);
        for (std::size_t g = 0; g < params.groups; ++g) {
            const double angle = 2.0 * std::numbers::pi * unit(rng);
            const double dist = params.region_radius_km * std::sqrt(unit(rng));
            const auto gc = detail::offset_km(center, dist * std::cos(angle), dist * std::sin(angle));
            for (std::size_t i = 0; i < params.pois_per_group; ++i) {
                const double a = 2.0 * std::numbers::pi * unit(rng);
                const double d = params.group_radius_km * std::sqrt(unit(rng));
                Poi p;
                p.name = "r" + std::to_string(r) + "_g" + std::to_string(g) + "_" + std::to_string(i);
                p.category = make_id<CategoryId>(g);
                p.coord = detail::offset_km(gc, d * std::cos(a), d * std::sin(a));
                p.city = "synth";
                layout[r][g].push_back(make_id<PoiId>(t.pois.size()));
                t.pois.push_back(std::move(p));
            }
        }
    }

    // Region-wide group cycle: the group that follows g.
    std::vector<std::vector<std::size_t>> next_group(params.regions);
    for (auto& cycle : next_group) {
        std::vector<std::size_t> order(params.groups);
        for (std::size_t g = 0; g < params.groups; ++g) order[g] = g;
        std::shuffle(order.begin(), order.end(), rng);
        cycle.resize(params.groups);
        for (std::size_t i = 0; i < params.groups; ++i) cycle[order[i]] = order[(i + 1) % params.groups];
    }

    const auto noise_count = static_cast<std::size_t>(std::round(params.noise_fraction * params.users));
    std::vector<bool> noise(params.users, false);
    {
        std::vector<std::size_t> ids(params.users);
        for (std::size_t u = 0; u < params.users; ++u) ids[u] = u;
        std::shuffle(ids.begin(), ids.end(), rng);
        for (std::size_t i = 0; i < noise_count; ++i) noise[ids[i]] = true;
    }

    std::int64_t clock = 1'600'000'000;
    for (std::size_t u = 0; u < params.users; ++u) {
        const auto user = make_id<UserId>(u);
        t.users.push_back("u" + std::to_string(u));
        const std::size_t r = u % params.regions;
        out.home_region.push_back(r);
        out.noise_user.push_back(noise[u]);
        const auto len = std::uniform_int_distribution<std::size_t>(params.min_length, params.max_length)(rng);
        const auto& groups = layout[r];
        auto any_poi = [&] {
            const auto g = std::uniform_int_distribution<std::size_t>(0, params.groups - 1)(rng);
            return std::make_pair(g, groups[g][std::uniform_int_distribution<std::size_t>(0, groups[g].size() - 1)(rng)]);
        };
        auto [g, p] = any_poi();
        for (std::size_t step = 0; step < len; ++step) {
            t.rows.push_back(Checkin{user, p, clock});
            clock += 3600;
            if (noise[u] || unit(rng) < params.random_jump) {
                std::tie(g, p) = any_poi();
                continue;
            }
            if (unit(rng) >= params.stay_in_group) g = next_group[r][g];
            const auto& members = groups[g];
            p = members[std::uniform_int_distribution<std::size_t>(0, members.size() - 1)(rng)];
        }
    }

    for (std::size_t a = 0; a < params.users; ++a) {
        for (std::size_t b = a + 1; b < params.users; ++b) {
            if (out.home_region[a] == out.home_region[b] && unit(rng) < params.friend_probability) {
                out.friendships.emplace_back(make_id<UserId>(a), make_id<UserId>(b));
            }
        }
    }
    return out;
}

inline SocialGraph graph_of(const SyntheticData& data) {
    SocialGraph g(data.table.num_users());
    for (const auto& [a, b] : data.friendships) g.add_edge(a, b);
    return g;
}

/// Writes the table in the default check-in CSV schema.
inline void write_checkins_csv(std::ostream& out, const CheckinTable& t) {
    out << "user_id,poi_id,category,lat,lon,timestamp,city\n";
    out.precision(9);
    for (const auto& row : t.rows) {
        const auto& p = t.pois[index(row.poi)];
        out << t.users[index(row.user)] << ',' << p.name << ',' << t.categories[index(p.category)] << ','
            << p.coord.lat << ',' << p.coord.lon << ',' << row.timestamp << ',' << p.city << '\n';
    }
}

inline void write_friends_csv(std::ostream& out, const SyntheticData& data) {
    out << "user_a,user_b\n";
    for (const auto& [a, b] : data.friendships) {
        out << data.table.users[index(a)] << ',' << data.table.users[index(b)] << '\n';
    }
}

}  // namespace mac
