#pragma once

// Independent reference implementations and fixture builders shared by the
// unit tests and the acceptance binary. Nothing here calls into the library
// routine it is meant to check.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "mac/mac.hpp"

namespace oracle {

struct Row {
    std::string user, poi, category;
    double lat = 40.0, lon = -74.0;
    long long ts = 0;
    std::string city = "";
};

inline std::string to_csv(const std::vector<Row>& rows) {
    std::ostringstream out;
    out.precision(12);
    out << "user_id,poi_id,category,lat,lon,timestamp,city\n";
    for (const auto& r : rows) {
        out << r.user << ',' << r.poi << ',' << r.category << ',' << r.lat << ',' << r.lon << ',' << r.ts << ','
            << r.city << '\n';
    }
    return out.str();
}

inline mac::CheckinTable table_of(const std::vector<Row>& rows) {
    std::istringstream in(to_csv(rows));
    return mac::parse_checkins(in);
}

// Haversine written out from the spherical law with degrees -> radians.
inline double haversine(double lon1, double lat1, double lon2, double lat2) {
    const double k = std::numbers::pi / 180.0;
    const double s1 = std::sin((lat2 - lat1) * k / 2), s2 = std::sin((lon2 - lon1) * k / 2);
    const double h = s1 * s1 + std::cos(lat1 * k) * std::cos(lat2 * k) * s2 * s2;
    return 2 * 6371.0 * std::asin(std::sqrt(h));
}

// KL(p || q) summing only over p_i > 0, terms in long double.
inline double kl(const std::vector<double>& p, const std::vector<double>& q) {
    long double total = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] > 0) total += static_cast<long double>(p[i]) * std::log(static_cast<long double>(p[i]) / q[i]);
    }
    return static_cast<double>(total);
}

// Rank by sorting: position of the target when ties are placed before it.
template <class T>
std::size_t rank_by_sort(const std::vector<T>& scores, std::size_t target) {
    std::vector<std::size_t> order(scores.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        if (a == target) return false;
        if (b == target) return true;
        return a < b;
    });
    return static_cast<std::size_t>(std::find(order.begin(), order.end(), target) - order.begin()) + 1;
}

inline double hr(std::optional<std::size_t> rank, std::size_t k) { return rank && *rank <= k ? 1.0 : 0.0; }

// DCG of a single relevant item divided by the ideal DCG (which is 1).
inline double ndcg(std::optional<std::size_t> rank, std::size_t k) {
    if (!rank || *rank > k) return 0.0;
    double dcg = 0;
    for (std::size_t i = 1; i <= k; ++i) {
        if (i == *rank) dcg += 1.0 / (std::log(static_cast<double>(i) + 1.0) / std::log(2.0));
    }
    return dcg;
}

inline std::vector<mac::PoiId> pois(std::initializer_list<unsigned> ids) {
    std::vector<mac::PoiId> out;
    for (auto i : ids) out.push_back(mac::make_id<mac::PoiId>(i));
    return out;
}

inline std::vector<mac::CategoryId> cats(std::initializer_list<unsigned> ids) {
    std::vector<mac::CategoryId> out;
    for (auto i : ids) out.push_back(mac::make_id<mac::CategoryId>(i));
    return out;
}

inline mac::UserId user(unsigned i) { return mac::make_id<mac::UserId>(i); }
inline mac::PoiId poi(unsigned i) { return mac::make_id<mac::PoiId>(i); }
inline mac::CategoryId cat(unsigned i) { return mac::make_id<mac::CategoryId>(i); }
inline mac::RegionId region(unsigned i) { return mac::make_id<mac::RegionId>(i); }

// Six users over three regions and three categories, h = 2, one friendship
// (u0, u3). Expected neighbor sets derived by hand:
//   u1 has visited r0 (u0's current region) but u0 never visited r1, so
//   u1 is in G(u0) and u0 is not in G(u1). u1 also has r0 in its history,
//   which must not make r0 visitors its neighbors.
//   KL(u3||u1) == KL(u3||u5) exactly (same terms), the tie goes to u1.
//   u3 is u0's least similar user yet joins S(u0) as a friend.
struct NeighborFixture {
    std::vector<mac::UserSummary> summaries;
    mac::SocialGraph graph{6};
    std::size_t h = 2;
    std::vector<std::vector<unsigned>> geo{{1, 2}, {4, 5}, {0, 1}, {2, 5}, {1, 5}, {2, 3}};
    std::vector<std::vector<unsigned>> sem{{1, 3, 4}, {0, 4}, {4, 5}, {0, 1, 4}, {0, 1}, {2, 4}};
};

inline NeighborFixture neighbor_fixture() {
    NeighborFixture f;
    const std::vector<std::vector<unsigned>> visits{{0}, {1, 0}, {0, 2}, {2}, {1}, {2, 1}};
    const std::vector<std::vector<double>> dist{{.8, .1, .1}, {.7, .2, .1}, {.1, .8, .1},
                                                {.1, .1, .8}, {.6, .3, .1}, {.2, .7, .1}};
    for (unsigned u = 0; u < 6; ++u) {
        mac::UserSummary s;
        s.user = user(u);
        for (auto r : visits[u]) s.visited_regions.push_back(region(r));
        s.category_distribution = dist[u];
        f.summaries.push_back(s);
    }
    f.graph.add_edge(user(0), user(3));
    return f;
}

inline std::vector<mac::UserId> users(const std::vector<unsigned>& ids) {
    std::vector<mac::UserId> out;
    for (auto i : ids) out.push_back(user(i));
    return out;
}

// A small world: POIs laid out on a grid, regions by id modulo `regions`,
// categories by id modulo `categories`.
struct World {
    std::vector<mac::Poi> pois;
    mac::RegionMap regions;
    std::size_t num_categories = 0;

    std::vector<mac::RegionId> all_regions() const {
        std::vector<mac::RegionId> out;
        for (std::size_t r = 0; r < regions.size(); ++r) out.push_back(mac::make_id<mac::RegionId>(r));
        return out;
    }
};

inline World grid_world(std::size_t n_pois, std::size_t n_regions, std::size_t n_categories) {
    World w;
    std::vector<mac::GeoPoint> coords;
    std::vector<std::size_t> assign;
    for (std::size_t i = 0; i < n_pois; ++i) {
        const std::size_t r = i % n_regions;
        mac::GeoPoint g{-74.0 + 0.3 * static_cast<double>(r) + 0.001 * static_cast<double>(i / n_regions),
                        40.7 + 0.002 * static_cast<double>(i % 7)};
        coords.push_back(g);
        assign.push_back(r);
        w.pois.push_back(mac::Poi{"p" + std::to_string(i), mac::make_id<mac::CategoryId>(i % n_categories), g, ""});
    }
    w.regions = mac::RegionMap(assign, coords, n_regions);
    w.num_categories = n_categories;
    return w;
}

// The encoder written out directly over plain row vectors.
inline std::vector<double> forward(const std::vector<std::vector<double>>& rows, const std::vector<std::size_t>& prefix,
                                   const std::vector<std::size_t>& support) {
    const std::size_t d = rows[0].size();
    const auto& q = rows[prefix.back()];
    auto softmax = [](std::vector<double> v) {
        const double m = *std::max_element(v.begin(), v.end());
        double z = 0;
        for (auto& x : v) z += (x = std::exp(x - m));
        for (auto& x : v) x /= z;
        return v;
    };
    std::vector<double> logits;
    for (auto t : prefix) {
        double dot = 0;
        for (std::size_t j = 0; j < d; ++j) dot += q[j] * rows[t][j];
        logits.push_back(dot / std::sqrt(static_cast<double>(d)));
    }
    auto a = softmax(logits);
    std::vector<double> s(d, 0.0);
    for (std::size_t i = 0; i < prefix.size(); ++i) {
        for (std::size_t j = 0; j < d; ++j) s[j] += a[i] * rows[prefix[i]][j];
    }
    for (std::size_t j = 0; j < d; ++j) s[j] = (s[j] + q[j]) / 2;
    std::vector<double> scores;
    for (auto k : support) {
        double dot = 0;
        for (std::size_t j = 0; j < d; ++j) dot += s[j] * rows[k][j];
        scores.push_back(dot);
    }
    return softmax(scores);
}

template <class T>
std::vector<std::vector<double>> rows_of(std::span<const T> block, std::size_t dim) {
    std::vector<std::vector<double>> out(block.size() / dim);
    for (std::size_t i = 0; i < out.size(); ++i) out[i].assign(block.begin() + i * dim, block.begin() + (i + 1) * dim);
    return out;
}

struct GradCheck {
    double max_rel = 0.0;       // worst single entry
    double max_rel_norm = 0.0;  // worst tensor, ||a - n|| / max(||a||, ||n||)
    std::string worst;
    std::size_t checked = 0;
};

// Central differences on every trainable entry. Relative error is
// |a - n| / max(|a|, |n|, floor); the floor keeps entries that are zero on
// both sides from dividing by nothing.
template <class Loss>
GradCheck finite_difference_check(mac::DeviceModel<double>& model, const mac::Gradients<double>& g, Loss&& loss,
                                  double eps = 1e-4, double floor = 1e-6) {
    GradCheck out;
    auto scan = [&](std::span<double> params, const std::vector<double>& analytic, const char* name) {
        double diff2 = 0, a2 = 0, n2 = 0;
        for (std::size_t i = 0; i < params.size(); ++i) {
            const double keep = params[i];
            params[i] = keep + eps;
            const double up = loss(model);
            params[i] = keep - eps;
            const double down = loss(model);
            params[i] = keep;
            const double numeric = (up - down) / (2 * eps);
            diff2 += (analytic[i] - numeric) * (analytic[i] - numeric);
            a2 += analytic[i] * analytic[i];
            n2 += numeric * numeric;
            const double rel =
                std::abs(analytic[i] - numeric) / std::max({std::abs(analytic[i]), std::abs(numeric), floor});
            ++out.checked;
            if (rel > out.max_rel) {
                out.max_rel = rel;
                out.worst = std::string(name) + "[" + std::to_string(i) + "] analytic " + std::to_string(analytic[i]) +
                            " numeric " + std::to_string(numeric);
            }
        }
        out.max_rel_norm = std::max(out.max_rel_norm, std::sqrt(diff2) / std::max({std::sqrt(a2), std::sqrt(n2), floor}));
    };
    scan(model.poi_block(), g.poi, "poi");
    scan(model.cat_block(), g.cat, "cat");
    scan(model.mi_block(), g.mi, "mi");
    return out;
}

// Deterministic dropout for repeated evaluations: every call redraws the
// same mask from a fresh generator.
struct FixedDropout {
    std::uint64_t seed;
    double rate;
    mutable mac::Rng rng{0};
    mac::Dropout get() const {
        rng.seed(seed);
        return mac::Dropout{rate, &rng};
    }
};

// Audits reference sets against the generation contract and returns every
// violation found: region purity, V_r / Z sizes, category coverage of D^s,
// hop distance (when `max_hop_km` > 0) and equality with raw pool sequences.
inline std::vector<std::string> audit_reference_sets(const mac::ReferenceSets& refs, const mac::RegionMap& regions,
                                                     const mac::CheckinTable& table,
                                                     std::span<const mac::CheckinSequence> pool,
                                                     const mac::RefgenParams& params, double max_hop_km,
                                                     bool anonymity) {
    std::vector<std::string> bad;
    if (refs.geo.size() != regions.size()) bad.push_back("geo set count differs from region count");
    for (std::size_t r = 0; r < refs.geo.size(); ++r) {
        const auto& g = refs.geo[r];
        const std::string where = "region " + std::to_string(r);
        if (mac::index(g.region) != r) bad.push_back(where + ": wrong id");
        if (g.sequences.size() != params.per_region) bad.push_back(where + ": size " + std::to_string(g.sequences.size()));
        for (const auto& seq : g.sequences) {
            if (seq.pois.size() != seq.categories.size()) bad.push_back(where + ": ragged sequence");
            for (std::size_t i = 0; i < seq.pois.size(); ++i) {
                if (mac::index(regions.region_of(seq.pois[i])) != r) bad.push_back(where + ": foreign POI");
                if (seq.categories[i] != table.category_of(seq.pois[i])) bad.push_back(where + ": wrong category");
                if (max_hop_km > 0 && i > 0) {
                    const auto& a = table.coord_of(seq.pois[i - 1]);
                    const auto& b = table.coord_of(seq.pois[i]);
                    if (!(haversine(a.lon, a.lat, b.lon, b.lat) < max_hop_km)) bad.push_back(where + ": long hop");
                }
            }
            if (anonymity) {
                for (const auto& raw : pool) {
                    if (raw.pois == seq.pois) bad.push_back(where + ": copies a pool sequence");
                }
            }
        }
    }
    if (refs.sem.sequences.size() != params.semantic) bad.push_back("semantic set size");
    std::vector<bool> seen(table.num_categories(), false);
    for (const auto& seq : refs.sem.sequences) {
        for (auto c : seq) seen.at(mac::index(c)) = true;
        if (anonymity) {
            for (const auto& raw : pool) {
                if (raw.categories == seq) bad.push_back("semantic set copies a pool sequence");
            }
        }
    }
    for (std::size_t c = 0; c < seen.size(); ++c) {
        if (!seen[c]) bad.push_back("category " + std::to_string(c) + " missing from the semantic set");
    }
    return bad;
}

inline bool row_stochastic(const mac::TransitionMatrix& t, double tol = 1e-9) {
    for (std::size_t n = 0; n < t.size(); ++n) {
        double sum = 0;
        for (auto x : t.row(mac::make_id<mac::CategoryId>(n))) {
            if (x < 0) return false;
            sum += x;
        }
        if (std::abs(sum - 1.0) > tol) return false;
    }
    return true;
}

// Synthetic data pushed through ingestion and region clustering.
struct City {
    mac::SyntheticData synth;
    mac::PreparedData data;
};

inline City synthetic_city(const mac::SyntheticParams& sp, const mac::ExperimentConfig& c) {
    City city;
    city.synth = mac::generate_synthetic(sp);
    std::stringstream friends;
    mac::write_friends_csv(friends, city.synth);
    city.data = mac::prepare_data(city.synth.table, &friends, c);
    return city;
}

// Collects warnings for the lifetime of the object.
struct WarningCapture {
    std::vector<std::string> messages;
    mac::ScopedWarningSink sink{[this](std::string_view m) { messages.emplace_back(m); }};
};

// Message bus double that forwards to the in-memory bus and records every
// publish and fetch, flagging any traffic outside the round contract.
class AuditNetwork : public mac::Network {
public:
    struct Fetch {
        mac::UserId requester;
        mac::BundleKey key;
        std::size_t bytes;
    };

    AuditNetwork(const mac::RegionMap& regions, std::size_t num_categories) : inner_(regions, num_categories) {}

    void begin_round(std::uint32_t round) override {
        round_ = round;
        fetching_ = false;
        inner_.begin_round(round);
    }
    void publish(const mac::SoftDecisionBundle& b) override {
        if (fetching_) violations.push_back("publish after a fetch in round " + std::to_string(round_));
        if (b.round != round_) violations.push_back("stale bundle published");
        published.push_back(mac::key_of(b));
        inner_.publish(b);
    }
    std::optional<mac::SoftDecisionBundle> fetch(mac::UserId requester, const mac::BundleKey& key) override {
        fetching_ = true;
        if (requester == key.owner) violations.push_back("device fetched its own bundle");
        auto b = inner_.fetch(requester, key);
        if (b) {
            if (b->round != round_) violations.push_back("bundle from another round");
            fetches.push_back({requester, key, mac::encode_bundle(*b).size()});
        }
        return b;
    }
    std::size_t bytes_fetched(mac::UserId requester) const override { return inner_.bytes_fetched(requester); }
    std::size_t round_bytes() const override { return inner_.round_bytes(); }

    std::vector<std::string> violations;
    std::vector<mac::BundleKey> published;
    std::vector<Fetch> fetches;

private:
    mac::InMemoryNetwork inner_;
    std::uint32_t round_ = 0;
    bool fetching_ = false;
};

}  // namespace oracle
