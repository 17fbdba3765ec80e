#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mac/common.hpp"
#include "mac/core_data.hpp"
#include "mac/geo.hpp"

namespace mac {

struct RefSequence {
    std::vector<PoiId> pois;
    std::vector<CategoryId> categories;

    friend bool operator==(const RefSequence&, const RefSequence&) = default;
};

struct GeoReferenceSet {
    RegionId region{};
    std::vector<RefSequence> sequences;

    friend bool operator==(const GeoReferenceSet&, const GeoReferenceSet&) = default;
};

struct SemReferenceSet {
    std::vector<std::vector<CategoryId>> sequences;

    friend bool operator==(const SemReferenceSet&, const SemReferenceSet&) = default;
};

/// Row-stochastic |C| x |C| matrix; row n is the distribution of the
/// category that follows n.
class TransitionMatrix {
public:
    TransitionMatrix() = default;
    explicit TransitionMatrix(std::size_t n) : n_(n), p_(n * n, 0.0) {}

    std::size_t size() const { return n_; }
    double at(CategoryId from, CategoryId to) const { return p_[index(from) * n_ + index(to)]; }
    double& at(CategoryId from, CategoryId to) { return p_[index(from) * n_ + index(to)]; }
    std::span<const double> row(CategoryId from) const {
        return std::span<const double>(p_).subspan(index(from) * n_, n_);
    }
    std::span<double> row(CategoryId from) { return std::span<double>(p_).subspan(index(from) * n_, n_); }

    /// Same chain with transitions into categories outside `allowed`
    /// removed; rows left empty become uniform over `allowed`.
    TransitionMatrix restricted_to(const std::vector<bool>& allowed) const {
        TransitionMatrix out(n_);
        std::size_t n_allowed = static_cast<std::size_t>(std::count(allowed.begin(), allowed.end(), true));
        for (std::size_t i = 0; i < n_; ++i) {
            double sum = 0.0;
            for (std::size_t j = 0; j < n_; ++j) {
                if (allowed[j]) sum += p_[i * n_ + j];
            }
            for (std::size_t j = 0; j < n_; ++j) {
                if (!allowed[j]) continue;
                out.p_[i * n_ + j] = sum > 0.0 ? p_[i * n_ + j] / sum : 1.0 / static_cast<double>(n_allowed);
            }
        }
        return out;
    }

private:
    std::size_t n_ = 0;
    std::vector<double> p_;
};

enum class RefgenMode { original, transformative, probabilistic };

inline RefgenMode parse_refgen_mode(std::string_view s) {
    if (s == "original") return RefgenMode::original;
    if (s == "transformative") return RefgenMode::transformative;
    if (s == "probabilistic") return RefgenMode::probabilistic;
    throw ConfigError("unknown reference generation mode '" + std::string(s) + "'");
}

inline const char* to_string(RefgenMode m) {
    switch (m) {
        case RefgenMode::original: return "original";
        case RefgenMode::transformative: return "transformative";
        case RefgenMode::probabilistic: return "probabilistic";
    }
    return "?";
}

/// Decompose-recompose at a shared item. A common item is drawn uniformly;
/// each sequence is cut at its first occurrence and the halves are swapped,
/// keeping one copy of the shared item. Returns nullopt when the sequences
/// share nothing.
template <class Item>
std::optional<std::pair<std::vector<Item>, std::vector<Item>>> transformative_pair(std::span<const Item> a,
                                                                                   std::span<const Item> b, Rng& rng) {
    std::vector<Item> sa(a.begin(), a.end()), sb(b.begin(), b.end());
    std::sort(sa.begin(), sa.end());
    sa.erase(std::unique(sa.begin(), sa.end()), sa.end());
    std::sort(sb.begin(), sb.end());
    sb.erase(std::unique(sb.begin(), sb.end()), sb.end());
    std::vector<Item> common;
    std::set_intersection(sa.begin(), sa.end(), sb.begin(), sb.end(), std::back_inserter(common));
    if (common.empty()) return std::nullopt;
    const Item pivot = common[std::uniform_int_distribution<std::size_t>(0, common.size() - 1)(rng)];
    const auto ia = static_cast<std::size_t>(std::find(a.begin(), a.end(), pivot) - a.begin());
    const auto ib = static_cast<std::size_t>(std::find(b.begin(), b.end(), pivot) - b.begin());

    std::vector<Item> first(a.begin(), a.begin() + ia + 1);
    first.insert(first.end(), b.begin() + ib + 1, b.end());
    std::vector<Item> second(b.begin(), b.begin() + ib + 1);
    second.insert(second.end(), a.begin() + ia + 1, a.end());
    return std::make_pair(std::move(first), std::move(second));
}

struct RegionRestriction {
    RegionId region{};
    std::vector<PoiId> pois;
    std::optional<std::string> rejected;

    bool ok() const { return !rejected.has_value(); }
};

/// Keeps only POIs of the sequence's most visited region (ties: smaller id).
inline RegionRestriction region_restrict(std::span<const PoiId> seq, const RegionMap& regions) {
    if (seq.empty()) throw DataError("region_restrict on an empty sequence");
    std::map<RegionId, std::size_t> counts;
    for (auto p : seq) ++counts[regions.region_of(p)];
    RegionRestriction out;
    std::size_t best = 0;
    for (const auto& [r, c] : counts) {
        if (c > best) {
            best = c;
            out.region = r;
        }
    }
    for (auto p : seq) {
        if (regions.region_of(p) == out.region) out.pois.push_back(p);
    }
    if (out.pois.size() < 2) out.rejected = "fewer than 2 POIs remain in region " + std::to_string(index(out.region));
    return out;
}

/// Counts of "m immediately after n", row-normalized. Rows with no
/// observed successor are uniform.
inline TransitionMatrix transition_matrix(std::span<const std::vector<CategoryId>> sequences,
                                          std::size_t num_categories) {
    TransitionMatrix t(num_categories);
    for (const auto& s : sequences) {
        for (std::size_t i = 0; i + 1 < s.size(); ++i) t.at(s[i], s[i + 1]) += 1.0;
    }
    for (std::size_t n = 0; n < num_categories; ++n) {
        auto row = t.row(make_id<CategoryId>(n));
        double sum = 0.0;
        for (auto x : row) sum += x;
        for (auto& x : row) x = sum > 0.0 ? x / sum : 1.0 / static_cast<double>(num_categories);
    }
    return t;
}

namespace detail {

inline CategoryId sample_row(std::span<const double> row, Rng& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double x = u(rng);
    std::size_t last_positive = 0;
    for (std::size_t j = 0; j < row.size(); ++j) {
        if (row[j] <= 0.0) continue;
        last_positive = j;
        if (x < row[j]) return make_id<CategoryId>(j);
        x -= row[j];
    }
    return make_id<CategoryId>(last_positive);
}

}  // namespace detail

/// Markov chain over categories starting from a uniformly drawn element of
/// `starts` (all categories when empty).
inline std::vector<CategoryId> probabilistic_cat_seq(const TransitionMatrix& t, std::size_t length, Rng& rng,
                                                     std::span<const CategoryId> starts = {}) {
    if (length < 2) throw ConfigError("generated sequences need length >= 2");
    std::vector<CategoryId> seq;
    seq.reserve(length);
    if (starts.empty()) {
        seq.push_back(make_id<CategoryId>(std::uniform_int_distribution<std::size_t>(0, t.size() - 1)(rng)));
    } else {
        seq.push_back(starts[std::uniform_int_distribution<std::size_t>(0, starts.size() - 1)(rng)]);
    }
    while (seq.size() < length) seq.push_back(detail::sample_row(t.row(seq.back()), rng));
    return seq;
}

/// Materializes a category chain inside one region: each position draws a
/// POI of the required category uniformly among those within `max_hop_km`
/// of the previous pick. Dead ends backtrack one position, at most
/// `max_backtracks` times per position. Returns nullopt when unsatisfiable.
inline std::optional<std::vector<PoiId>> probabilistic_poi_seq(std::span<const CategoryId> categories,
                                                               const Region& region, std::span<const Poi> pois,
                                                               double max_hop_km, Rng& rng,
                                                               std::size_t max_backtracks = 20) {
    if (region.pois.empty()) throw DataError("probabilistic generation in an empty region");
    std::map<CategoryId, std::vector<PoiId>> by_cat;
    for (auto p : region.pois) by_cat[pois[index(p)].category].push_back(p);

    std::vector<PoiId> chosen;
    std::vector<std::size_t> backtracks(categories.size(), 0);
    while (chosen.size() < categories.size()) {
        const std::size_t pos = chosen.size();
        std::vector<PoiId> options;
        if (auto it = by_cat.find(categories[pos]); it != by_cat.end()) {
            for (auto p : it->second) {
                if (pos == 0 || haversine_km(pois[index(chosen.back())].coord, pois[index(p)].coord) < max_hop_km) {
                    options.push_back(p);
                }
            }
        }
        if (options.empty()) {
            if (pos == 0) return std::nullopt;
            if (++backtracks[pos - 1] > max_backtracks) return std::nullopt;
            chosen.pop_back();
            continue;
        }
        chosen.push_back(options[std::uniform_int_distribution<std::size_t>(0, options.size() - 1)(rng)]);
    }
    return chosen;
}

struct RefgenParams {
    std::size_t per_region = 20;  // V_r
    std::size_t semantic = 50;    // Z
    std::size_t length = 20;      // generated length; longer sequences keep their tail
    double max_hop_km = 5.0;
    std::size_t max_backtracks = 20;
    std::size_t attempts_per_sequence = 50;
    bool probabilistic_fallback = true;
};

struct ReferenceSets {
    std::vector<GeoReferenceSet> geo;  // indexed by region id
    SemReferenceSet sem;
    std::vector<std::size_t> topped_up;  // per region, sequences added by probabilistic fallback
    std::size_t sem_topped_up = 0;

    const GeoReferenceSet& geo_for(RegionId r) const { return geo.at(index(r)); }

    friend bool operator==(const ReferenceSets& a, const ReferenceSets& b) {
        return a.geo == b.geo && a.sem == b.sem;
    }
};

namespace detail {

template <class Item>
std::vector<Item> keep_tail(std::vector<Item> v, std::size_t length) {
    if (v.size() > length) v.erase(v.begin(), v.end() - static_cast<std::ptrdiff_t>(length));
    return v;
}

class RefBuilder {
public:
    RefBuilder(std::span<const CheckinSequence> pool, const RegionMap& regions, const CheckinTable& table,
               const RefgenParams& params, Rng& rng)
        : pool_(pool), regions_(regions), table_(table), params_(params), rng_(rng) {
        out_.geo.resize(regions.size());
        out_.topped_up.assign(regions.size(), 0);
        for (std::size_t r = 0; r < regions.size(); ++r) out_.geo[r].region = make_id<RegionId>(r);
        std::vector<std::vector<CategoryId>> cat_seqs;
        for (const auto& s : pool) {
            raw_pois_.insert(s.pois);
            raw_cats_.insert(s.categories);
            cat_seqs.push_back(s.categories);
        }
        chain_ = transition_matrix(cat_seqs, table.num_categories());
    }

    bool geo_full(RegionId r) const { return out_.geo[index(r)].sequences.size() >= params_.per_region; }
    bool all_geo_full() const {
        for (std::size_t r = 0; r < out_.geo.size(); ++r) {
            if (!geo_full(make_id<RegionId>(r))) return false;
        }
        return true;
    }
    bool sem_full() const { return out_.sem.sequences.size() >= params_.semantic; }

    /// Region-restricts, truncates and audits a POI sequence; true if kept.
    bool offer_geo(std::span<const PoiId> seq, bool audit) {
        auto rr = region_restrict(seq, regions_);
        if (!rr.ok() || geo_full(rr.region)) return false;
        auto pois = keep_tail(std::move(rr.pois), params_.length);
        if (pois.size() < 2 || (audit && raw_pois_.count(pois))) return false;
        RefSequence ref;
        for (auto p : pois) ref.categories.push_back(table_.category_of(p));
        ref.pois = std::move(pois);
        out_.geo[index(rr.region)].sequences.push_back(std::move(ref));
        return true;
    }

    bool offer_sem(std::vector<CategoryId> seq, bool audit) {
        if (sem_full()) return false;
        seq = keep_tail(std::move(seq), params_.length);
        if (seq.size() < 2 || (audit && raw_cats_.count(seq))) return false;
        out_.sem.sequences.push_back(std::move(seq));
        return true;
    }

    void transformative_fill_with(std::vector<std::pair<std::size_t, std::size_t>>& pairs) {
        if (pairs.empty()) return;
        const std::size_t budget =
            params_.attempts_per_sequence * (params_.per_region * out_.geo.size() + params_.semantic);
        std::uniform_int_distribution<std::size_t> pick(0, pairs.size() - 1);
        for (std::size_t attempt = 0; attempt < budget && !(all_geo_full() && sem_full()); ++attempt) {
            const auto [i, j] = pairs[pick(rng_)];
            const auto& a = pool_[i];
            const auto& b = pool_[j];
            if (!all_geo_full()) {
                if (auto mixed = transformative_pair<PoiId>(a.pois, b.pois, rng_)) {
                    offer_geo(mixed->first, true);
                    offer_geo(mixed->second, true);
                }
            }
            if (!sem_full()) {
                if (auto mixed = transformative_pair<CategoryId>(a.categories, b.categories, rng_)) {
                    offer_sem(std::move(mixed->first), true);
                    offer_sem(std::move(mixed->second), true);
                }
            }
        }
    }

    void original_fill() {
        for (const auto& s : pool_) {
            offer_geo(s.pois, false);
            offer_sem(s.categories, false);
        }
    }

    void probabilistic_fill(bool counts_as_top_up) {
        for (std::size_t r = 0; r < out_.geo.size(); ++r) {
            const auto rid = make_id<RegionId>(r);
            if (geo_full(rid)) continue;
            const auto& region = regions_.region(rid);
            std::vector<bool> allowed(table_.num_categories(), false);
            std::vector<CategoryId> starts;
            for (auto p : region.pois) allowed[index(table_.category_of(p))] = true;
            for (std::size_t c = 0; c < allowed.size(); ++c) {
                if (allowed[c]) starts.push_back(make_id<CategoryId>(c));
            }
            const auto local = chain_.restricted_to(allowed);
            const std::size_t budget = params_.attempts_per_sequence * params_.per_region;
            for (std::size_t attempt = 0; attempt < budget && !geo_full(rid); ++attempt) {
                auto cats = probabilistic_cat_seq(local, params_.length, rng_, starts);
                auto pois = probabilistic_poi_seq(cats, region, table_.pois, params_.max_hop_km, rng_,
                                                  params_.max_backtracks);
                if (pois && !raw_pois_.count(*pois) && offer_geo(*pois, true) && counts_as_top_up) {
                    ++out_.topped_up[r];
                }
            }
        }
        const std::size_t budget = params_.attempts_per_sequence * params_.semantic;
        for (std::size_t attempt = 0; attempt < budget && !sem_full(); ++attempt) {
            if (offer_sem(probabilistic_cat_seq(chain_, params_.length, rng_), true) && counts_as_top_up) {
                ++out_.sem_topped_up;
            }
        }
    }

    /// Replaces redundant sequences until every category occurs in D^s.
    void ensure_category_coverage() {
        const std::size_t n = table_.num_categories();
        auto& seqs = out_.sem.sequences;
        for (std::size_t round = 0; round <= n; ++round) {
            std::vector<std::size_t> counts(n, 0);
            for (const auto& s : seqs) {
                for (auto c : s) ++counts[index(c)];
            }
            auto missing = std::find(counts.begin(), counts.end(), 0);
            if (missing == counts.end()) return;
            const auto c = make_id<CategoryId>(static_cast<std::size_t>(missing - counts.begin()));
            std::vector<CategoryId> fresh;
            for (int tries = 0; tries < 100; ++tries) {
                const CategoryId start[] = {c};
                fresh = probabilistic_cat_seq(chain_, params_.length, rng_, start);
                if (!raw_cats_.count(fresh)) break;
            }
            if (seqs.size() < params_.semantic) {
                seqs.push_back(std::move(fresh));
                continue;
            }
            bool replaced = false;
            for (std::size_t k = seqs.size(); k-- > 0 && !replaced;) {
                std::map<CategoryId, std::size_t> own;
                for (auto x : seqs[k]) ++own[x];
                bool redundant = true;
                for (const auto& [x, m] : own) redundant = redundant && counts[index(x)] > m;
                if (redundant) {
                    seqs[k] = std::move(fresh);
                    replaced = true;
                }
            }
            if (!replaced) throw GenerationError("cannot cover all categories with Z sequences; increase Z");
        }
    }

    void require_full() const {
        std::string under;
        for (std::size_t r = 0; r < out_.geo.size(); ++r) {
            if (!geo_full(make_id<RegionId>(r))) under += (under.empty() ? "" : ", ") + std::to_string(r);
        }
        if (!under.empty()) throw GenerationError("under-filled geographic reference sets for regions " + under);
        if (!sem_full()) throw GenerationError("under-filled semantic reference set");
    }

    ReferenceSets take() { return std::move(out_); }

private:
    std::span<const CheckinSequence> pool_;
    const RegionMap& regions_;
    const CheckinTable& table_;
    RefgenParams params_;
    Rng& rng_;
    TransitionMatrix chain_;
    std::set<std::vector<PoiId>> raw_pois_;
    std::set<std::vector<CategoryId>> raw_cats_;
    ReferenceSets out_;
};

}  // namespace detail

/// Friend pairs in the pool that share at least one POI.
inline std::vector<std::pair<std::size_t, std::size_t>> eligible_pairs(std::span<const CheckinSequence> pool,
                                                                       const SocialGraph& graph) {
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (std::size_t i = 0; i < pool.size(); ++i) {
        std::vector<PoiId> a(pool[i].pois);
        std::sort(a.begin(), a.end());
        for (std::size_t j = i + 1; j < pool.size(); ++j) {
            if (!graph.are_friends(pool[i].user, pool[j].user)) continue;
            const bool shares = std::any_of(pool[j].pois.begin(), pool[j].pois.end(),
                                            [&](PoiId p) { return std::binary_search(a.begin(), a.end(), p); });
            if (shares) pairs.emplace_back(i, j);
        }
    }
    return pairs;
}

/// Builds D^g(r) for every region and D^s from the reference pool.
/// Regions that the chosen mode cannot fill are topped up by probabilistic
/// generation unless the fallback is disabled.
inline ReferenceSets build_reference_sets(RefgenMode mode, std::span<const CheckinSequence> pool,
                                          const SocialGraph& graph, const RegionMap& regions,
                                          const CheckinTable& table, const RefgenParams& params, std::uint64_t seed) {
    if (pool.empty()) throw GenerationError("reference pool is empty");
    Rng rng(derive_seed(seed, stream::refgen));
    detail::RefBuilder builder(pool, regions, table, params, rng);
    switch (mode) {
        case RefgenMode::original: builder.original_fill(); break;
        case RefgenMode::transformative: {
            auto pairs = eligible_pairs(pool, graph);
            if (pairs.empty()) warn("no friend pairs with a common POI in the reference pool");
            builder.transformative_fill_with(pairs);
            break;
        }
        case RefgenMode::probabilistic: builder.probabilistic_fill(false); break;
    }
    if (mode != RefgenMode::probabilistic) {
        if (!params.probabilistic_fallback) builder.require_full();
        builder.probabilistic_fill(true);
    }
    builder.ensure_category_coverage();
    builder.require_full();
    return builder.take();
}

}  // namespace mac
