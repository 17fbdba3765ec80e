#include <gtest/gtest.h>

#include <random>
#include <set>

#include "oracles.hpp"

using namespace mac;

namespace {

std::vector<Poi> pois_at(const std::vector<GeoPoint>& coords) {
    std::vector<Poi> out;
    for (std::size_t i = 0; i < coords.size(); ++i) out.push_back(Poi{"p" + std::to_string(i), CategoryId{}, coords[i], ""});
    return out;
}

double partition_wcss(const std::vector<GeoPoint>& pts, unsigned mask) {
    double total = 0;
    for (int side = 0; side < 2; ++side) {
        double sx = 0, sy = 0;
        int n = 0;
        for (std::size_t i = 0; i < pts.size(); ++i) {
            if (((mask >> i) & 1u) == static_cast<unsigned>(side)) {
                sx += pts[i].lon;
                sy += pts[i].lat;
                ++n;
            }
        }
        if (n == 0) return std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < pts.size(); ++i) {
            if (((mask >> i) & 1u) == static_cast<unsigned>(side)) {
                total += std::pow(pts[i].lon - sx / n, 2) + std::pow(pts[i].lat - sy / n, 2);
            }
        }
    }
    return total;
}

}  // namespace

TEST(Haversine, Identity) {
    GeoPoint a{-73.98, 40.75};
    EXPECT_EQ(haversine_km(a, a), 0.0);
}

TEST(Haversine, OneDegreeAlongEquator) {
    const double d = haversine_km({0, 0}, {1, 0});
    EXPECT_NEAR(d, 111.19, 0.01);
    EXPECT_NEAR(d, oracle::haversine(0, 0, 1, 0), 1e-9);
}

TEST(Haversine, SymmetricAndMatchesOracle) {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> lon(-180, 180), lat(-90, 90);
    for (int i = 0; i < 500; ++i) {
        GeoPoint a{lon(rng), lat(rng)}, b{lon(rng), lat(rng)};
        EXPECT_EQ(haversine_km(a, b), haversine_km(b, a));
        EXPECT_NEAR(haversine_km(a, b), oracle::haversine(a.lon, a.lat, b.lon, b.lat), 1e-6);
    }
}

TEST(ClusterRegions, SingleRegionCentroidIsMean) {
    std::vector<GeoPoint> pts{{1, 2}, {3, 4}, {5, 9}};
    auto m = cluster_regions(pts, 1, 0);
    ASSERT_EQ(m.size(), 1u);
    EXPECT_NEAR(m.regions()[0].centroid.lon, 3.0, 1e-12);
    EXPECT_NEAR(m.regions()[0].centroid.lat, 5.0, 1e-12);
    EXPECT_EQ(m.regions()[0].pois.size(), 3u);
}

TEST(ClusterRegions, TwoBlobsMatchBruteForcePartition) {
    std::mt19937_64 rng(17);
    std::normal_distribution<double> jitter(0.0, 0.01);
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<GeoPoint> pts;
        for (int i = 0; i < 5; ++i) pts.push_back({-74.0 + jitter(rng), 40.7 + jitter(rng)});
        for (int i = 0; i < 5; ++i) pts.push_back({-73.5 + jitter(rng), 40.9 + jitter(rng)});
        unsigned best = 0;
        double best_cost = std::numeric_limits<double>::infinity();
        for (unsigned mask = 0; mask < (1u << pts.size()); ++mask) {
            const double c = partition_wcss(pts, mask);
            if (c < best_cost) {
                best_cost = c;
                best = mask;
            }
        }
        auto m = cluster_regions(pts, 2, trial);
        for (std::size_t i = 0; i < pts.size(); ++i) {
            for (std::size_t j = 0; j < pts.size(); ++j) {
                const bool same_opt = ((best >> i) & 1u) == ((best >> j) & 1u);
                EXPECT_EQ(m.region_of(make_id<PoiId>(i)) == m.region_of(make_id<PoiId>(j)), same_opt);
            }
        }
    }
}

TEST(ClusterRegions, EveryPointItsOwnRegion) {
    std::vector<GeoPoint> pts{{0, 0}, {1, 0}, {0, 1}, {5, 5}, {-3, 2}};
    auto m = cluster_regions(pts, pts.size(), 2);
    ASSERT_EQ(m.size(), pts.size());
    for (const auto& r : m.regions()) EXPECT_EQ(r.pois.size(), 1u);
}

TEST(ClusterRegions, Errors) {
    std::vector<GeoPoint> pts{{0, 0}};
    EXPECT_THROW(cluster_regions(pts, 0, 0), ConfigError);
    EXPECT_THROW(cluster_regions(pts, 2, 0), DataError);
}

TEST(ClusterRegions, PartitionAndMonotoneObjective) {
    std::mt19937_64 rng(23);
    std::uniform_real_distribution<double> u(0, 1);
    for (int trial = 0; trial < 30; ++trial) {
        std::vector<GeoPoint> pts(20 + rng() % 60);
        for (auto& p : pts) p = {-74 + u(rng), 40 + u(rng)};
        const std::size_t k = 1 + rng() % 8;
        Rng krng(trial);
        auto res = kmeans(pts, k, krng);
        for (std::size_t i = 1; i < res.objective_trace.size(); ++i) {
            EXPECT_LE(res.objective_trace[i], res.objective_trace[i - 1] + 1e-12);
        }
        EXPECT_LE(res.iterations, 100u);

        auto m = cluster_regions(pts, k, trial);
        std::set<PoiId> seen;
        std::size_t total = 0;
        for (const auto& r : m.regions()) {
            total += r.pois.size();
            double sx = 0, sy = 0;
            for (auto p : r.pois) {
                EXPECT_TRUE(seen.insert(p).second);
                EXPECT_EQ(m.region_of(p), r.id);
                sx += pts[index(p)].lon;
                sy += pts[index(p)].lat;
            }
            EXPECT_NEAR(r.centroid.lon, sx / r.pois.size(), 1e-9);
            EXPECT_NEAR(r.centroid.lat, sy / r.pois.size(), 1e-9);
        }
        EXPECT_EQ(total, pts.size());
    }
}

TEST(ClusterRegions, DeterministicUnderSeed) {
    std::vector<GeoPoint> pts;
    for (int i = 0; i < 40; ++i) pts.push_back({std::sin(i * 1.7), std::cos(i * 0.3)});
    auto a = cluster_regions(pts, 4, 9), b = cluster_regions(pts, 4, 9);
    for (std::size_t i = 0; i < pts.size(); ++i) EXPECT_EQ(a.region_of(make_id<PoiId>(i)), b.region_of(make_id<PoiId>(i)));
}

TEST(BuildRegionMap, ClustersEachCity) {
    std::vector<oracle::Row> rows;
    for (int i = 0; i < 6; ++i) rows.push_back({"u", "a" + std::to_string(i), "c", 40 + 0.01 * i, -74, i, "A"});
    for (int i = 0; i < 6; ++i) rows.push_back({"u", "b" + std::to_string(i), "c", 51 + 0.01 * i, 0, i, "B"});
    auto t = oracle::table_of(rows);
    auto m = build_region_map(t, 2, 1);
    ASSERT_EQ(m.size(), 4u);
    for (const auto& r : m.regions()) {
        for (auto p : r.pois) EXPECT_EQ(t.pois[index(p)].city, r.city);
    }
}

TEST(CandidateSet, ExhaustsSmallRegion) {
    std::vector<GeoPoint> c{{0, 0}, {0.01, 0}, {0.02, 0}};
    auto pois = pois_at(c);
    std::vector<std::size_t> assign{0, 0, 0};
    RegionMap m(assign, c, 1);
    auto cand = candidate_set(oracle::poi(1), {}, c[0], m, pois, 200);
    EXPECT_EQ(cand.size(), 3u);
}

TEST(CandidateSet, AllVisitedButTarget) {
    std::vector<GeoPoint> c{{0, 0}, {0.01, 0}, {0.02, 0}};
    auto pois = pois_at(c);
    std::vector<std::size_t> assign{0, 0, 0};
    RegionMap m(assign, c, 1);
    auto visited = oracle::pois({0, 1, 2});
    auto cand = candidate_set(oracle::poi(2), visited, c[0], m, pois, 200);
    EXPECT_EQ(cand, oracle::pois({2}));
}

TEST(CandidateSet, TwoNearestByDistance) {
    // anchor at the origin, POIs 1..5 km east; target is the farthest
    std::vector<GeoPoint> c{{0, 0}};
    for (int km = 5; km >= 1; --km) c.push_back({km / 111.19492664455873, 0});
    auto pois = pois_at(c);
    std::vector<std::size_t> assign(c.size(), 0);
    RegionMap m(assign, c, 1);
    auto visited = oracle::pois({0});
    auto cand = candidate_set(oracle::poi(1), visited, c[0], m, pois, 2);
    // POI 5 is 1 km away, POI 4 is 2 km; the target (5 km) comes last
    EXPECT_EQ(cand, oracle::pois({5, 4, 1}));
}

TEST(CandidateSet, RandomizedAgainstBruteForce) {
    std::mt19937_64 rng(41);
    std::uniform_real_distribution<double> u(0, 0.1);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n_pois = 5 + rng() % 40;
        std::vector<GeoPoint> c(n_pois);
        std::vector<std::size_t> assign(n_pois);
        for (std::size_t i = 0; i < n_pois; ++i) {
            c[i] = {-74 + u(rng), 40 + u(rng)};
            assign[i] = i < 3 ? i : rng() % 3;
        }
        auto pois = pois_at(c);
        RegionMap m(assign, c, 3);
        std::vector<PoiId> visited;
        for (std::size_t i = 0; i < n_pois; ++i) {
            if (rng() % 3 == 0) visited.push_back(make_id<PoiId>(i));
        }
        const auto target = make_id<PoiId>(rng() % n_pois);
        const GeoPoint anchor{-74 + u(rng), 40 + u(rng)};
        const std::size_t n = 1 + rng() % 10;
        auto cand = candidate_set(target, visited, anchor, m, pois, n);

        std::vector<std::pair<double, std::size_t>> eligible;
        for (std::size_t i = 0; i < n_pois; ++i) {
            const auto p = make_id<PoiId>(i);
            if (p == target || assign[i] != assign[index(target)]) continue;
            if (std::find(visited.begin(), visited.end(), p) != visited.end()) continue;
            eligible.emplace_back(oracle::haversine(anchor.lon, anchor.lat, c[i].lon, c[i].lat), i);
        }
        std::sort(eligible.begin(), eligible.end());
        if (eligible.size() > n) eligible.resize(n);
        std::set<PoiId> expected{target};
        for (auto [d, i] : eligible) expected.insert(make_id<PoiId>(i));

        EXPECT_EQ(std::set<PoiId>(cand.begin(), cand.end()), expected);
        EXPECT_EQ(std::count(cand.begin(), cand.end(), target), 1);
        for (std::size_t i = 1; i < cand.size(); ++i) {
            EXPECT_LE(haversine_km(anchor, c[index(cand[i - 1])]), haversine_km(anchor, c[index(cand[i])]));
        }
    }
}
