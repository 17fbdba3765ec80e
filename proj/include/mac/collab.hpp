#pragma once

#include <bit>
#include <cmath>
#include <map>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mac/common.hpp"
#include "mac/geo.hpp"
#include "mac/neighbors.hpp"
#include "mac/recommender.hpp"
#include "mac/refdata.hpp"

namespace mac {

enum class RefKind : std::int32_t { geo = 0, semantic = 1 };

/// Soft decisions of one device on one reference set, one per sequence.
struct SoftDecisionBundle {
    UserId owner{};
    RefKind kind = RefKind::semantic;
    RegionId region{};  // meaningful for geo bundles only
    std::uint32_t round = 0;
    std::vector<SoftDecision> per_sequence;

    std::size_t support_size() const { return per_sequence.empty() ? 0 : per_sequence.front().probs.size(); }
};

// Wire layout, little-endian:
//   u32 owner, u32 round, i32 kind (region id for geo, -1 for semantic),
//   u32 sequence count, then f32 probabilities sequence by sequence.
// Supports are canonical on both ends and are not transmitted.
inline constexpr std::size_t kBundleHeaderBytes = 16;

inline std::size_t wire_size(const SoftDecisionBundle& b) {
    std::size_t n = 0;
    for (const auto& d : b.per_sequence) n += d.probs.size();
    return kBundleHeaderBytes + 4 * n;
}

inline std::vector<std::uint8_t> encode_bundle(const SoftDecisionBundle& b) {
    std::vector<std::uint8_t> out;
    out.reserve(wire_size(b));
    auto put = [&](std::uint32_t v) {
        for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    };
    put(static_cast<std::uint32_t>(index(b.owner)));
    put(b.round);
    put(b.kind == RefKind::geo ? static_cast<std::uint32_t>(index(b.region)) : 0xFFFFFFFFu);
    put(static_cast<std::uint32_t>(b.per_sequence.size()));
    for (const auto& d : b.per_sequence) {
        for (auto p : d.probs) put(std::bit_cast<std::uint32_t>(static_cast<float>(p)));
    }
    return out;
}

/// Inverse of encode_bundle given the canonical support of the reference set.
inline SoftDecisionBundle decode_bundle(std::span<const std::uint8_t> bytes, std::span<const std::uint32_t> support) {
    std::size_t pos = 0;
    auto get = [&]() {
        if (pos + 4 > bytes.size()) throw DataError("truncated bundle");
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[pos + i]) << (8 * i);
        pos += 4;
        return v;
    };
    SoftDecisionBundle b;
    b.owner = make_id<UserId>(get());
    b.round = get();
    const auto kind = get();
    if (kind == 0xFFFFFFFFu) {
        b.kind = RefKind::semantic;
    } else {
        b.kind = RefKind::geo;
        b.region = make_id<RegionId>(kind);
    }
    const std::size_t count = get();
    for (std::size_t s = 0; s < count; ++s) {
        SoftDecision d;
        d.support.assign(support.begin(), support.end());
        for (std::size_t k = 0; k < support.size(); ++k) d.probs.push_back(std::bit_cast<float>(get()));
        b.per_sequence.push_back(std::move(d));
    }
    if (pos != bytes.size()) throw DataError("trailing bytes after bundle");
    return b;
}

inline std::vector<std::uint32_t> canonical_support(const Region& region) {
    std::vector<std::uint32_t> s;
    for (auto p : region.pois) s.push_back(static_cast<std::uint32_t>(index(p)));
    return s;
}

inline std::vector<std::uint32_t> canonical_support(std::size_t num_categories) {
    std::vector<std::uint32_t> s(num_categories);
    for (std::size_t c = 0; c < num_categories; ++c) s[c] = static_cast<std::uint32_t>(c);
    return s;
}

/// Next-step predictions after each full reference sequence, over every POI
/// of the region, eval mode.
template <std::floating_point T>
SoftDecisionBundle compute_bundle(const DeviceModel<T>& model, const GeoReferenceSet& refs, const RegionMap& regions,
                                  std::uint32_t round) {
    if (!model.stores_region(refs.region)) {
        throw ModelError("device " + std::to_string(index(model.owner())) + " lacks embeddings for region " +
                         std::to_string(index(refs.region)));
    }
    const auto& region = regions.region(refs.region);
    SoftDecisionBundle b{model.owner(), RefKind::geo, refs.region, round, {}};
    b.per_sequence.reserve(refs.sequences.size());
    for (const auto& seq : refs.sequences) b.per_sequence.push_back(forward_poi(model, seq.pois, region.pois));
    return b;
}

template <std::floating_point T>
SoftDecisionBundle compute_bundle(const DeviceModel<T>& model, const SemReferenceSet& refs, std::uint32_t round) {
    SoftDecisionBundle b{model.owner(), RefKind::semantic, RegionId{}, round, {}};
    b.per_sequence.reserve(refs.sequences.size());
    for (const auto& seq : refs.sequences) {
        auto tr = trace_cat(model, seq, Dropout::off());
        SoftDecision d{canonical_support(model.num_categories()), std::vector<double>(tr.probs.begin(), tr.probs.end())};
        b.per_sequence.push_back(std::move(d));
    }
    return b;
}

namespace detail {

inline void require_aligned(const SoftDecisionBundle& own, const SoftDecisionBundle& other) {
    if (own.kind != other.kind || (own.kind == RefKind::geo && own.region != other.region) ||
        own.per_sequence.size() != other.per_sequence.size()) {
        throw DataError("bundle from user " + std::to_string(index(other.owner)) + " covers a different reference set");
    }
    for (std::size_t s = 0; s < own.per_sequence.size(); ++s) {
        if (own.per_sequence[s].support != other.per_sequence[s].support) {
            throw DataError("bundle from user " + std::to_string(index(other.owner)) + " has a non-canonical support");
        }
    }
}

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return s;
}

}  // namespace detail

/// Mean over neighbors of the summed squared distance between soft decisions.
/// Serves both the geographic and the category distillation loss.
inline double distillation_loss(const SoftDecisionBundle& own, std::span<const SoftDecisionBundle> neighbors) {
    if (neighbors.empty()) {
        warn("no active neighbors for user " + std::to_string(index(own.owner)) + "; distillation loss is 0");
        return 0.0;
    }
    double total = 0.0;
    for (const auto& nb : neighbors) {
        detail::require_aligned(own, nb);
        for (std::size_t s = 0; s < own.per_sequence.size(); ++s) {
            total += detail::squared_distance(own.per_sequence[s].probs, nb.per_sequence[s].probs);
        }
    }
    return total / static_cast<double>(neighbors.size());
}

inline double loss_geo(const SoftDecisionBundle& own, std::span<const SoftDecisionBundle> neighbors) {
    if (own.kind != RefKind::geo) throw DataError("loss_geo needs geo bundles");
    return distillation_loss(own, neighbors);
}

inline double loss_cat(const SoftDecisionBundle& own, std::span<const SoftDecisionBundle> neighbors) {
    if (own.kind != RefKind::semantic) throw DataError("loss_cat needs semantic bundles");
    return distillation_loss(own, neighbors);
}

namespace detail {

/// Records d(weight * mean_j sum ||p - q_j||^2)/d(scores) for one own
/// prediction against the neighbors' constant vectors at sequence s.
template <class T>
double distill_one(PredictionTrace<T> tr, std::span<const SoftDecisionBundle> neighbors, std::size_t s, T weight,
                   LossTerms<T>* terms) {
    const std::size_t n = tr.probs.size();
    const double inv = 1.0 / static_cast<double>(neighbors.size());
    double value = 0.0;
    std::vector<double> dp(n, 0.0);
    for (const auto& nb : neighbors) {
        const auto& q = nb.per_sequence[s].probs;
        if (q.size() != n) throw DataError("neighbor soft decision has the wrong support size");
        for (std::size_t k = 0; k < n; ++k) {
            const double diff = static_cast<double>(tr.probs[k]) - q[k];
            value += diff * diff * inv;
            dp[k] += 2.0 * diff * inv;
        }
    }
    if (terms) {
        double inner = 0.0;
        for (std::size_t k = 0; k < n; ++k) inner += static_cast<double>(tr.probs[k]) * dp[k];
        std::vector<T> ds(n);
        for (std::size_t k = 0; k < n; ++k) {
            ds[k] = static_cast<T>(static_cast<double>(weight) * static_cast<double>(tr.probs[k]) * (dp[k] - inner));
        }
        terms->add_prediction(std::move(tr), std::move(ds));
    }
    return value;
}

}  // namespace detail

/// Differentiable geographic distillation loss on the current parameters;
/// neighbor bundles are constants. Returns the unweighted value.
template <std::floating_point T>
double loss_geo_terms(const DeviceModel<T>& model, const GeoReferenceSet& refs,
                      std::span<const SoftDecisionBundle> neighbors, T weight, LossTerms<T>* terms) {
    if (neighbors.empty()) return 0.0;
    auto support = model.region_slots(refs.region);
    for (const auto& nb : neighbors) {
        if (nb.kind != RefKind::geo || nb.region != refs.region || nb.per_sequence.size() != refs.sequences.size()) {
            throw DataError("bundle from user " + std::to_string(index(nb.owner)) + " covers a different reference set");
        }
    }
    double total = 0.0;
    for (std::size_t s = 0; s < refs.sequences.size(); ++s) {
        auto tr = trace_poi(model, refs.sequences[s].pois, std::vector<std::size_t>(support.begin(), support.end()),
                            Dropout::off());
        total += detail::distill_one<T>(std::move(tr), neighbors, s, weight, terms);
    }
    return total;
}

template <std::floating_point T>
double loss_cat_terms(const DeviceModel<T>& model, const SemReferenceSet& refs,
                      std::span<const SoftDecisionBundle> neighbors, T weight, LossTerms<T>* terms) {
    if (neighbors.empty()) return 0.0;
    for (const auto& nb : neighbors) {
        if (nb.kind != RefKind::semantic || nb.per_sequence.size() != refs.sequences.size()) {
            throw DataError("bundle from user " + std::to_string(index(nb.owner)) + " covers a different reference set");
        }
    }
    double total = 0.0;
    for (std::size_t s = 0; s < refs.sequences.size(); ++s) {
        auto tr = trace_cat(model, refs.sequences[s], Dropout::off());
        total += detail::distill_one<T>(std::move(tr), neighbors, s, weight, terms);
    }
    return total;
}

/// Bilinear POI/category contrast. For each POI p with category c_p,
/// f(p,c) = sigmoid(e_p W e_c) and the loss is
/// -f(p,c_p) + log sum_{c != c_p} exp f(p,c), summed over the batch.
template <std::floating_point T>
double loss_mi_terms(const DeviceModel<T>& model, std::span<const PoiId> pois, std::span<const CategoryId> categories,
                     T weight, LossTerms<T>* terms) {
    const std::size_t nc = model.num_categories();
    if (nc < 2) throw ModelError("the POI/category contrast needs at least 2 categories");
    if (pois.size() != categories.size()) throw ModelError("POI batch and category list differ in length");
    const std::size_t d = model.dim();
    const auto W = model.mi_block();
    std::vector<double> v(d), f(nc);
    double total = 0.0;
    for (std::size_t b = 0; b < pois.size(); ++b) {
        const std::size_t slot = model.require_slot(pois[b]);
        const std::size_t pos = index(categories[b]);
        if (pos >= nc) throw ModelError("unknown category " + std::to_string(pos));
        const auto e_p = model.poi_row(slot);
        std::fill(v.begin(), v.end(), 0.0);
        for (std::size_t i = 0; i < d; ++i) {
            for (std::size_t j = 0; j < d; ++j) v[j] += static_cast<double>(e_p[i]) * static_cast<double>(W[i * d + j]);
        }
        for (std::size_t c = 0; c < nc; ++c) {
            const auto e_c = model.cat_row(make_id<CategoryId>(c));
            double u = 0.0;
            for (std::size_t j = 0; j < d; ++j) u += v[j] * static_cast<double>(e_c[j]);
            f[c] = 1.0 / (1.0 + std::exp(-u));
        }
        double mx = -1.0;
        for (std::size_t c = 0; c < nc; ++c) {
            if (c != pos) mx = std::max(mx, f[c]);
        }
        double z = 0.0;
        for (std::size_t c = 0; c < nc; ++c) {
            if (c != pos) z += std::exp(f[c] - mx);
        }
        total += -f[pos] + mx + std::log(z);
        if (terms) {
            BilinearTerm<T> term;
            term.poi_slot = slot;
            term.dlogits.resize(nc);
            for (std::size_t c = 0; c < nc; ++c) {
                const double df = c == pos ? -1.0 : std::exp(f[c] - mx) / z;
                term.dlogits[c] = static_cast<T>(static_cast<double>(weight) * df * f[c] * (1.0 - f[c]));
            }
            terms->bilinear.push_back(std::move(term));
        }
    }
    return total;
}

template <std::floating_point T>
double loss_mi(const DeviceModel<T>& model, std::span<const PoiId> pois, std::span<const CategoryId> categories) {
    return loss_mi_terms<T>(model, pois, categories, T(1), nullptr);
}

struct LossBreakdown {
    double l_loc = 0.0;
    double l_geo = 0.0;
    double l_cat = 0.0;
    double l_mi = 0.0;
    double l_sem = 0.0;
    double combined = 0.0;
};

inline LossBreakdown assemble_loss(double l_loc, double l_geo, double l_cat, double l_mi, double gamma, double mu) {
    LossBreakdown b{l_loc, l_geo, l_cat, l_mi, l_cat + l_mi, 0.0};
    b.combined = l_loc + gamma * (mu * l_geo + (1.0 - mu) * b.l_sem);
    return b;
}

/// Everything besides the model that one training step needs.
struct CollabInputs {
    const GeoReferenceSet* geo_refs = nullptr;  // D^g of the current region
    const SemReferenceSet* sem_refs = nullptr;
    std::span<const SoftDecisionBundle> geo_neighbors;
    std::span<const SoftDecisionBundle> sem_neighbors;
    std::span<const PoiId> mi_pois;
    std::span<const CategoryId> mi_categories;
};

/// L_loc + gamma (mu L_geo + (1 - mu)(L_cat + L_MI)) on the given target
/// positions. With gamma == 0 the collaboration terms are not evaluated and
/// reported as 0. Gradient contributions are appended to `terms` if given.
template <std::floating_point T>
LossBreakdown combined_loss(const DeviceModel<T>& model, std::span<const PoiId> seq,
                            std::span<const std::size_t> positions, const Dropout& dropout, const CollabInputs& in,
                            double gamma, double mu, LossTerms<T>* terms) {
    if (!(gamma >= 0.0)) throw ConfigError("gamma must be >= 0");
    if (!(mu >= 0.0 && mu <= 1.0)) throw ConfigError("mu must be within [0, 1]");
    const double l_loc = static_cast<double>(local_loss_terms<T>(model, seq, positions, dropout, T(1), terms));
    if (gamma == 0.0) return assemble_loss(l_loc, 0.0, 0.0, 0.0, gamma, mu);
    double l_geo = 0.0, l_cat = 0.0;
    if (in.geo_refs && !in.geo_neighbors.empty()) {
        l_geo = loss_geo_terms<T>(model, *in.geo_refs, in.geo_neighbors, static_cast<T>(gamma * mu), terms);
    }
    if (in.sem_refs && !in.sem_neighbors.empty()) {
        l_cat = loss_cat_terms<T>(model, *in.sem_refs, in.sem_neighbors, static_cast<T>(gamma * (1.0 - mu)), terms);
    }
    const double l_mi = in.mi_pois.empty()
                            ? 0.0
                            : loss_mi_terms<T>(model, in.mi_pois, in.mi_categories,
                                               static_cast<T>(gamma * (1.0 - mu)), terms);
    return assemble_loss(l_loc, l_geo, l_cat, l_mi, gamma, mu);
}

/// Summed KL(own || other) over aligned soft decisions of two bundles.
inline double bundle_soft_distance(const SoftDecisionBundle& own, const SoftDecisionBundle& other) {
    detail::require_aligned(own, other);
    double d = 0.0;
    for (std::size_t s = 0; s < own.per_sequence.size(); ++s) {
        d += kl_divergence(own.per_sequence[s].probs, other.per_sequence[s].probs);
    }
    return d;
}

/// Keeps the beta geographic and beta semantic candidates whose bundles are
/// closest to the device's own. Candidates without a bundle are skipped.
inline NeighborState similarity_sample(NeighborState state, const SoftDecisionBundle& own_geo,
                                       const SoftDecisionBundle& own_sem,
                                       const std::map<UserId, SoftDecisionBundle>& geo_bundles,
                                       const std::map<UserId, SoftDecisionBundle>& sem_bundles, std::size_t beta) {
    auto distances = [](const SoftDecisionBundle& own, const std::map<UserId, SoftDecisionBundle>& bundles) {
        std::map<UserId, double> d;
        for (const auto& [u, b] : bundles) d[u] = bundle_soft_distance(own, b);
        return d;
    };
    state.geo_active = select_most_similar(state.geo_full, distances(own_geo, geo_bundles), beta);
    state.sem_active = select_most_similar(state.sem_full, distances(own_sem, sem_bundles), beta);
    return state;
}

}  // namespace mac
