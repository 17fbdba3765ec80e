#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "mac/common.hpp"
#include "mac/core_data.hpp"

namespace mac {

inline constexpr double kEarthRadiusKm = 6371.0;

inline double haversine_km(const GeoPoint& a, const GeoPoint& b) {
    constexpr double rad = std::numbers::pi / 180.0;
    const double dlat = (b.lat - a.lat) * rad;
    const double dlon = (b.lon - a.lon) * rad;
    const double s = std::sin(dlat / 2) * std::sin(dlat / 2) +
                     std::cos(a.lat * rad) * std::cos(b.lat * rad) * std::sin(dlon / 2) * std::sin(dlon / 2);
    return 2.0 * kEarthRadiusKm * std::asin(std::min(1.0, std::sqrt(s)));
}

struct Region {
    RegionId id{};
    GeoPoint centroid;
    std::vector<PoiId> pois;  // ascending
    std::string city;
};

/// Partition of the POI set into regions.
class RegionMap {
public:
    RegionMap() = default;

    /// `assignment[p]` is the region index of POI p; regions are numbered
    /// 0..num_regions-1 and each must be non-empty.
    RegionMap(std::span<const std::size_t> assignment, std::span<const GeoPoint> coords,
              std::size_t num_regions, std::vector<std::string> cities = {}) {
        regions_.resize(num_regions);
        poi_to_region_.resize(assignment.size());
        std::vector<double> sum_lon(num_regions, 0.0), sum_lat(num_regions, 0.0);
        for (std::size_t p = 0; p < assignment.size(); ++p) {
            const auto r = assignment[p];
            if (r >= num_regions) throw DataError("region assignment out of range");
            regions_[r].pois.push_back(make_id<PoiId>(p));
            sum_lon[r] += coords[p].lon;
            sum_lat[r] += coords[p].lat;
            poi_to_region_[p] = make_id<RegionId>(r);
        }
        for (std::size_t r = 0; r < num_regions; ++r) {
            auto& reg = regions_[r];
            if (reg.pois.empty()) throw DataError("region " + std::to_string(r) + " is empty");
            reg.id = make_id<RegionId>(r);
            const auto n = static_cast<double>(reg.pois.size());
            reg.centroid = GeoPoint{sum_lon[r] / n, sum_lat[r] / n};
            if (r < cities.size()) reg.city = cities[r];
        }
    }

    std::size_t size() const { return regions_.size(); }
    std::size_t num_pois() const { return poi_to_region_.size(); }
    const std::vector<Region>& regions() const { return regions_; }
    const Region& region(RegionId r) const { return regions_.at(index(r)); }
    RegionId region_of(PoiId p) const { return poi_to_region_.at(index(p)); }

private:
    std::vector<Region> regions_;
    std::vector<RegionId> poi_to_region_;
};

struct KMeansResult {
    std::vector<std::size_t> assignment;
    std::vector<GeoPoint> centroids;
    std::vector<double> objective_trace;  // within-cluster SS after each update
    std::size_t iterations = 0;
};

namespace detail {

inline double sq_dist(const GeoPoint& a, const GeoPoint& b) {
    const double dx = a.lon - b.lon, dy = a.lat - b.lat;
    return dx * dx + dy * dy;
}

inline std::size_t nearest_centroid(const GeoPoint& p, std::span<const GeoPoint> centroids) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < centroids.size(); ++c) {
        const double d = sq_dist(p, centroids[c]);
        if (d < best_d) {
            best_d = d;
            best = c;
        }
    }
    return best;
}

inline double wcss(std::span<const GeoPoint> points, std::span<const std::size_t> assignment,
                   std::span<const GeoPoint> centroids) {
    double total = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i) total += sq_dist(points[i], centroids[assignment[i]]);
    return total;
}

}  // namespace detail

/// Lloyd's algorithm on raw (lon, lat) degrees with k-means++ seeding.
/// Stops when no assignment changes or after `max_iterations` updates.
/// An emptied cluster is re-seeded at the point farthest from its centroid.
inline KMeansResult kmeans(std::span<const GeoPoint> points, std::size_t k, Rng& rng,
                           std::size_t max_iterations = 100) {
    if (k < 1) throw ConfigError("k must be >= 1");
    if (points.size() < k) throw DataError("fewer points than clusters");
    const std::size_t n = points.size();

    KMeansResult res;
    std::vector<bool> chosen(n, false);
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    std::size_t first = pick(rng);
    chosen[first] = true;
    res.centroids.push_back(points[first]);
    std::vector<double> d2(n);
    while (res.centroids.size() < k) {
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            d2[i] = chosen[i] ? 0.0 : detail::sq_dist(points[i], res.centroids[detail::nearest_centroid(points[i], res.centroids)]);
            total += d2[i];
        }
        std::size_t next = 0;
        if (total > 0.0) {
            std::uniform_real_distribution<double> u(0.0, total);
            double target = u(rng);
            next = n;
            for (std::size_t i = 0; i < n; ++i) {
                if (d2[i] <= 0.0) continue;
                if (target < d2[i]) {
                    next = i;
                    break;
                }
                target -= d2[i];
            }
            if (next == n) {  // rounding at the tail
                for (std::size_t i = n; i-- > 0;) {
                    if (d2[i] > 0.0) {
                        next = i;
                        break;
                    }
                }
            }
        } else {
            std::vector<std::size_t> free;
            for (std::size_t i = 0; i < n; ++i) {
                if (!chosen[i]) free.push_back(i);
            }
            next = free[std::uniform_int_distribution<std::size_t>(0, free.size() - 1)(rng)];
        }
        chosen[next] = true;
        res.centroids.push_back(points[next]);
    }

    auto assign = [&] {
        std::vector<std::size_t> a(n);
        for (std::size_t i = 0; i < n; ++i) a[i] = detail::nearest_centroid(points[i], res.centroids);
        return a;
    };
    auto update = [&] {
        std::vector<GeoPoint> sums(k);
        std::vector<std::size_t> counts(k, 0);
        for (std::size_t i = 0; i < n; ++i) {
            sums[res.assignment[i]].lon += points[i].lon;
            sums[res.assignment[i]].lat += points[i].lat;
            ++counts[res.assignment[i]];
        }
        for (std::size_t c = 0; c < k; ++c) {
            if (counts[c] > 0) {
                res.centroids[c] = GeoPoint{sums[c].lon / counts[c], sums[c].lat / counts[c]};
            }
        }
        for (std::size_t c = 0; c < k; ++c) {
            if (counts[c] > 0) continue;
            std::size_t far = 0;
            double far_d = -1.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double d = detail::sq_dist(points[i], res.centroids[res.assignment[i]]);
                if (d > far_d) {
                    far_d = d;
                    far = i;
                }
            }
            res.centroids[c] = points[far];
        }
    };

    res.assignment = assign();
    for (std::size_t it = 0; it < max_iterations; ++it) {
        update();
        ++res.iterations;
        res.objective_trace.push_back(detail::wcss(points, res.assignment, res.centroids));
        auto next = assign();
        if (next == res.assignment) break;
        res.assignment = std::move(next);
    }
    // Report centroids as exact member means of the final assignment.
    std::vector<GeoPoint> sums(k);
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
        sums[res.assignment[i]].lon += points[i].lon;
        sums[res.assignment[i]].lat += points[i].lat;
        ++counts[res.assignment[i]];
    }
    for (std::size_t c = 0; c < k; ++c) {
        if (counts[c] > 0) res.centroids[c] = GeoPoint{sums[c].lon / counts[c], sums[c].lat / counts[c]};
    }
    return res;
}

/// k-means regions over a plain coordinate list (global clustering).
inline RegionMap cluster_regions(std::span<const GeoPoint> coords, std::size_t k, std::uint64_t seed) {
    Rng rng(derive_seed(seed, stream::kmeans));
    auto res = kmeans(coords, k, rng);
    // Clusters left empty by duplicate coordinates are dropped and renumbered.
    std::vector<std::size_t> counts(k, 0);
    for (auto a : res.assignment) ++counts[a];
    std::vector<std::size_t> renumber(k);
    std::size_t live = 0;
    for (std::size_t c = 0; c < k; ++c) renumber[c] = counts[c] > 0 ? live++ : 0;
    if (live < k) warn("k-means produced " + std::to_string(k - live) + " empty region(s)");
    for (auto& a : res.assignment) a = renumber[a];
    return RegionMap(res.assignment, coords, live);
}

/// Clusters each city separately into `k` regions (fewer if the city has
/// fewer POIs). Without a city column the whole table is one city. Region
/// ids run city by city in order of first appearance.
inline RegionMap build_region_map(const CheckinTable& table, std::size_t k, std::uint64_t seed) {
    std::vector<std::string> cities;
    std::map<std::string, std::vector<std::size_t>> members;
    for (std::size_t p = 0; p < table.pois.size(); ++p) {
        const auto& city = table.pois[p].city;
        if (!members.count(city)) cities.push_back(city);
        members[city].push_back(p);
    }
    std::vector<GeoPoint> coords;
    coords.reserve(table.pois.size());
    for (const auto& p : table.pois) coords.push_back(p.coord);

    std::vector<std::size_t> assignment(table.pois.size(), 0);
    std::vector<std::string> region_city;
    std::size_t offset = 0;
    for (std::size_t ci = 0; ci < cities.size(); ++ci) {
        const auto& idx = members[cities[ci]];
        std::vector<GeoPoint> pts;
        for (auto p : idx) pts.push_back(coords[p]);
        const std::size_t kc = std::min(k, pts.size());
        auto local = cluster_regions(pts, kc, derive_seed(seed, ci));
        for (std::size_t i = 0; i < idx.size(); ++i) assignment[idx[i]] = offset + index(local.region_of(make_id<PoiId>(i)));
        for (std::size_t r = 0; r < local.size(); ++r) region_city.push_back(cities[ci]);
        offset += local.size();
    }
    return RegionMap(assignment, coords, offset, region_city);
}

/// The target plus up to `n` POIs of the target's region that the user has
/// not visited, nearest to `anchor`, ordered by distance (ties by POI id).
/// `visited` must be sorted ascending.
inline std::vector<PoiId> candidate_set(PoiId target, std::span<const PoiId> visited, const GeoPoint& anchor,
                                        const RegionMap& regions, std::span<const Poi> pois, std::size_t n) {
    if (n < 1) throw ConfigError("candidate count must be >= 1");
    const auto& region = regions.region(regions.region_of(target));
    std::vector<std::pair<double, PoiId>> ranked;
    for (auto p : region.pois) {
        if (p == target || std::binary_search(visited.begin(), visited.end(), p)) continue;
        ranked.emplace_back(haversine_km(anchor, pois[index(p)].coord), p);
    }
    std::sort(ranked.begin(), ranked.end());
    if (ranked.size() > n) ranked.resize(n);
    ranked.emplace_back(haversine_km(anchor, pois[index(target)].coord), target);
    std::sort(ranked.begin(), ranked.end());
    std::vector<PoiId> out;
    out.reserve(ranked.size());
    for (const auto& [d, p] : ranked) out.push_back(p);
    return out;
}

}  // namespace mac
