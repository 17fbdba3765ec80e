#pragma once

#include <algorithm>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "mac/collab.hpp"
#include "mac/common.hpp"
#include "mac/core_data.hpp"
#include "mac/eval.hpp"
#include "mac/geo.hpp"
#include "mac/neighbors.hpp"
#include "mac/recommender.hpp"
#include "mac/refdata.hpp"

namespace mac {

enum class SamplingMode { performance, similarity, none };

inline SamplingMode parse_sampling_mode(std::string_view s) {
    if (s == "performance") return SamplingMode::performance;
    if (s == "similarity") return SamplingMode::similarity;
    if (s == "none") return SamplingMode::none;
    throw ConfigError("unknown sampling mode '" + std::string(s) + "'");
}

inline const char* to_string(SamplingMode m) {
    switch (m) {
        case SamplingMode::performance: return "performance";
        case SamplingMode::similarity: return "similarity";
        case SamplingMode::none: return "none";
    }
    return "?";
}

// ---------------------------------------------------------------------------
// Server

struct ServerParams {
    std::size_t h = 50;
    RefgenMode refgen = RefgenMode::transformative;
    RefgenParams refgen_params;
    std::uint64_t seed = 0;
};

/// What a device receives from the server: its neighbor sets and the
/// reference data of every region it has visited plus D^s.
struct ServerPackage {
    UserId user{};
    RegionId current_region{};
    NeighborState neighbors;  // actives left empty; devices draw their own
    std::vector<GeoReferenceSet> geo_refs;
    SemReferenceSet sem_refs;

    const GeoReferenceSet& geo_for(RegionId r) const {
        for (const auto& g : geo_refs) {
            if (g.region == r) return g;
        }
        throw DataError("package of user " + std::to_string(index(user)) + " has no reference set for region " +
                        std::to_string(index(r)));
    }
};

struct ServerState {
    std::vector<UserSummary> summaries;
    std::vector<NeighborState> neighbor_map;  // aligned with summaries
    ReferenceSets refs;
};

/// The one-off coordinator. It only ever sees device summaries, the public
/// POI table and the reference pool. Any call after the server phase throws.
class Server {
public:
    explicit Server(ServerParams params) : params_(std::move(params)) {}

    std::vector<ServerPackage> server_phase(std::vector<UserSummary> summaries,
                                            std::span<const CheckinSequence> reference_pool, const SocialGraph& graph,
                                            const RegionMap& regions, const CheckinTable& poi_table) {
        touch();
        state_.summaries = std::move(summaries);
        auto geo = identify_geo_neighbors(state_.summaries);
        auto sem = identify_sem_neighbors(state_.summaries, params_.h, graph);
        state_.neighbor_map.clear();
        for (std::size_t i = 0; i < state_.summaries.size(); ++i) {
            state_.neighbor_map.push_back(NeighborState{std::move(geo[i]), std::move(sem[i]), {}, {}});
        }
        state_.refs = build_reference_sets(params_.refgen, reference_pool, graph, regions, poi_table,
                                           params_.refgen_params, params_.seed);
        std::vector<ServerPackage> out;
        for (std::size_t i = 0; i < state_.summaries.size(); ++i) {
            const auto& s = state_.summaries[i];
            ServerPackage pkg{s.user, s.current_region(), state_.neighbor_map[i], {}, state_.refs.sem};
            for (auto r : s.visited_regions) pkg.geo_refs.push_back(state_.refs.geo_for(r));
            out.push_back(std::move(pkg));
        }
        disengaged_ = true;
        return out;
    }

    const ServerState& state() const { return state_; }
    std::size_t calls() const { return calls_; }
    bool disengaged() const { return disengaged_; }

private:
    void touch() {
        if (disengaged_) throw Error("server contacted after the server phase");
        ++calls_;
    }

    ServerParams params_;
    ServerState state_;
    std::size_t calls_ = 0;
    bool disengaged_ = false;
};

// ---------------------------------------------------------------------------
// Message bus

struct BundleKey {
    UserId owner{};
    RefKind kind = RefKind::semantic;
    RegionId region{};

    friend auto operator<=>(const BundleKey&, const BundleKey&) = default;
};

inline BundleKey key_of(const SoftDecisionBundle& b) {
    return BundleKey{b.owner, b.kind, b.kind == RefKind::geo ? b.region : RegionId{}};
}

/// The only channel between devices. Devices publish bundles and fetch
/// other devices' bundles; nothing else crosses device boundaries.
class Network {
public:
    virtual ~Network() = default;
    virtual void begin_round(std::uint32_t round) = 0;
    virtual void publish(const SoftDecisionBundle& bundle) = 0;
    virtual std::optional<SoftDecisionBundle> fetch(UserId requester, const BundleKey& key) = 0;
    virtual std::size_t bytes_fetched(UserId requester) const = 0;
    virtual std::size_t round_bytes() const = 0;
};

/// Stores the encoded wire form of each bundle for the current round and
/// decodes on fetch, so receivers see float32-rounded probabilities.
class InMemoryNetwork : public Network {
public:
    InMemoryNetwork(const RegionMap& regions, std::size_t num_categories)
        : regions_(regions), num_categories_(num_categories) {}

    void begin_round(std::uint32_t round) override {
        round_ = round;
        store_.clear();
        per_user_.clear();
        round_bytes_ = 0;
    }

    void publish(const SoftDecisionBundle& bundle) override {
        if (bundle.round != round_) throw Error("bundle published for a different round");
        store_[key_of(bundle)] = encode_bundle(bundle);
    }

    std::optional<SoftDecisionBundle> fetch(UserId requester, const BundleKey& key) override {
        auto it = store_.find(key);
        if (it == store_.end()) return std::nullopt;
        per_user_[requester] += it->second.size();
        round_bytes_ += it->second.size();
        const auto support = key.kind == RefKind::geo ? canonical_support(regions_.region(key.region))
                                                      : canonical_support(num_categories_);
        return decode_bundle(it->second, support);
    }

    std::size_t bytes_fetched(UserId requester) const override {
        auto it = per_user_.find(requester);
        return it == per_user_.end() ? 0 : it->second;
    }
    std::size_t round_bytes() const override { return round_bytes_; }

private:
    const RegionMap& regions_;
    std::size_t num_categories_;
    std::uint32_t round_ = 0;
    std::map<BundleKey, std::vector<std::uint8_t>> store_;
    std::map<UserId, std::size_t> per_user_;
    std::size_t round_bytes_ = 0;
};

// ---------------------------------------------------------------------------
// Devices

struct TrainingParams {
    double gamma = 0.5;
    double mu = 0.7;
    double tau = 1.0;  // percent
    std::size_t alpha = 5;
    std::size_t beta = 10;
    double lr = 0.002;
    double dropout = 0.2;
    std::size_t batch_size = 16;
    std::size_t patience = 5;
    SamplingMode sampling = SamplingMode::performance;
    std::size_t similarity_probe = 5;
    std::size_t candidates = 200;
};

struct RoundRecord {
    std::uint32_t round = 0;
    UserId user{};
    LossBreakdown loss;
    std::size_t bytes_in = 0;
    bool resampled = false;
};

struct RoundLog {
    std::uint32_t round = 0;
    std::vector<RoundRecord> records;
    std::size_t bytes_total = 0;
    std::size_t active_devices = 0;
};

/// Public per-POI information every device may hold.
struct PoiDirectory {
    const RegionMap* regions = nullptr;
    std::span<const Poi> pois;
    std::size_t num_categories = 0;
};

/// One user's device: its private data and model, the server package and
/// the sampling state.
template <std::floating_point T>
class Device {
public:
    struct Seeds {
        std::uint64_t model;
        std::uint64_t training;
        std::uint64_t sampling;
    };

    Device(EvalUser data, ServerPackage package, std::size_t dim, PoiDirectory dir, TrainingParams params,
           Seeds seeds)
        : data_(std::move(data)),
          package_(std::move(package)),
          dir_(dir),
          params_(params),
          model_(data_.user, dim, *dir.regions, stored_regions_for(data_, *dir.regions), dir.num_categories,
                 seeds.model),
          train_rng_(seeds.training),
          sampling_rng_(seeds.sampling),
          neighbors_(package_.neighbors) {
        if (data_.user != package_.user) throw Error("package routed to the wrong device");
        if (data_.train.size() < 2) throw DataError("device training sequence is too short");
        std::set<PoiId> seen;
        for (std::size_t i = 0; i < data_.train.pois.size(); ++i) {
            if (seen.insert(data_.train.pois[i]).second) {
                mi_pois_.push_back(data_.train.pois[i]);
                mi_cats_.push_back(data_.train.categories[i]);
            }
        }
        switch (params_.sampling) {
            case SamplingMode::performance: draw_actives(neighbors_, params_.alpha, sampling_rng_); break;
            case SamplingMode::similarity: draw_actives(neighbors_, params_.beta, sampling_rng_); break;
            case SamplingMode::none:
                neighbors_.geo_active = neighbors_.geo_full;
                neighbors_.sem_active = neighbors_.sem_full;
                break;
        }
    }

    /// Every region the user's sequence touches, so that all of its
    /// predictions, including held-out targets, have embeddings.
    static std::vector<RegionId> stored_regions_for(const EvalUser& u, const RegionMap& regions) {
        std::vector<RegionId> r;
        for (auto p : u.train.pois) r.push_back(regions.region_of(p));
        r.push_back(regions.region_of(u.valid_target));
        r.push_back(regions.region_of(u.test_target));
        return r;
    }

    UserId user() const { return data_.user; }
    std::size_t dim() const { return model_.dim(); }
    bool frozen() const { return frozen_; }
    std::optional<std::size_t> epochs_to_convergence() const { return converged_at_; }
    const NeighborState& neighbors() const { return neighbors_; }
    const std::vector<double>& loss_history() const { return loss_history_; }
    const DeviceModel<T>& model() const { return model_; }
    const ServerPackage& package() const { return package_; }

    /// Phase 1: soft decisions on every reference set the device holds.
    void publish(Network& net, std::uint32_t round) {
        own_geo_.reset();
        for (const auto& refs : package_.geo_refs) {
            auto b = compute_bundle(model_, refs, *dir_.regions, round);
            if (refs.region == package_.current_region) own_geo_ = b;
            net.publish(b);
        }
        own_sem_ = compute_bundle(model_, package_.sem_refs, round);
        net.publish(*own_sem_);
    }

    /// Phases 2 and 3: one epoch on the combined objective, then the
    /// neighbor update and the validation check. Frozen devices skip.
    std::optional<RoundRecord> train_round(Network& net, std::uint32_t round) {
        if (frozen_) return std::nullopt;
        RoundRecord rec;
        rec.round = round;
        rec.user = data_.user;
        fetched_geo_.clear();
        fetched_sem_.clear();
        const bool collaborate = params_.gamma > 0.0;

        std::vector<SoftDecisionBundle> geo_nb, sem_nb;
        if (collaborate) {
            for (auto u : neighbors_.geo_active) {
                if (auto* b = fetch(net, u, RefKind::geo)) geo_nb.push_back(*b);
            }
            for (auto u : neighbors_.sem_active) {
                if (auto* b = fetch(net, u, RefKind::semantic)) sem_nb.push_back(*b);
            }
        }

        const auto& seq = data_.train.pois;
        std::vector<std::size_t> positions(seq.size() - 1);
        for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = i + 1;
        std::shuffle(positions.begin(), positions.end(), train_rng_);

        CollabInputs in;
        if (collaborate) {
            in.geo_refs = &package_.geo_for(package_.current_region);
            in.sem_refs = &package_.sem_refs;
            in.geo_neighbors = geo_nb;
            in.sem_neighbors = sem_nb;
            in.mi_pois = mi_pois_;
            in.mi_categories = mi_cats_;
        }
        const Dropout dropout{params_.dropout, &train_rng_};
        double sums[4] = {0, 0, 0, 0};
        std::size_t batches = 0;
        for (std::size_t start = 0; start < positions.size(); start += params_.batch_size) {
            const auto len = std::min(params_.batch_size, positions.size() - start);
            std::span<const std::size_t> batch(positions.data() + start, len);
            LossTerms<T> terms;
            const auto b = combined_loss<T>(model_, seq, batch, dropout, in, params_.gamma, params_.mu, &terms);
            try {
                sgd_step(model_, backprop(model_, terms), static_cast<T>(params_.lr));
            } catch (const NumericalError& e) {
                throw NumericalError(e.component(), "device " + std::to_string(index(data_.user)) + ": " + e.what());
            }
            sums[0] += b.l_loc;
            sums[1] += b.l_geo;
            sums[2] += b.l_cat;
            sums[3] += b.l_mi;
            ++batches;
        }
        const double nb = static_cast<double>(batches);
        rec.loss = assemble_loss(sums[0] / nb, sums[1] / nb, sums[2] / nb, sums[3] / nb, params_.gamma, params_.mu);
        loss_history_.push_back(rec.loss.l_loc);

        rec.resampled = update_neighbors(net);
        rec.bytes_in = bytes_in_;
        bytes_in_ = 0;
        validate(round);
        return rec;
    }

    /// Loads the best validation snapshot, if any.
    void finalize() {
        if (best_) model_ = *best_;
    }

    EvalResult evaluate_test() const {
        std::vector<PoiId> prefix = data_.train.pois;
        prefix.push_back(data_.valid_target);
        return evaluate_target(model_, prefix, data_.test_target, *dir_.regions, dir_.pois, params_.candidates);
    }

    EvalResult evaluate_valid() const {
        return evaluate_target(model_, data_.train.pois, data_.valid_target, *dir_.regions, dir_.pois,
                               params_.candidates);
    }

private:
    const SoftDecisionBundle* fetch(Network& net, UserId owner, RefKind kind) {
        auto& cache = kind == RefKind::geo ? fetched_geo_ : fetched_sem_;
        if (auto it = cache.find(owner); it != cache.end()) return &it->second;
        const BundleKey key{owner, kind, kind == RefKind::geo ? package_.current_region : RegionId{}};
        auto b = net.fetch(data_.user, key);
        if (!b) {
            warn("user " + std::to_string(index(data_.user)) + " received no bundle from user " +
                 std::to_string(index(owner)));
            return nullptr;
        }
        bytes_in_ += wire_size(*b);
        return &cache.emplace(owner, std::move(*b)).first->second;
    }

    bool update_neighbors(Network& net) {
        switch (params_.sampling) {
            case SamplingMode::none: return false;
            case SamplingMode::performance: {
                if (loss_history_.size() < 2) {
                    draw_actives(neighbors_, params_.alpha, sampling_rng_);
                    return true;
                }
                const auto n = loss_history_.size();
                auto out = perf_triggered_resample(std::move(neighbors_), loss_history_[n - 2], loss_history_[n - 1],
                                                   params_.tau, params_.alpha, sampling_rng_);
                neighbors_ = std::move(out.state);
                return out.resampled;
            }
            case SamplingMode::similarity: return similarity_update(net);
        }
        return false;
    }

    /// Refreshes the distance cache with this round's bundles (actives plus
    /// a rotating probe of other candidates; everyone in the first round)
    /// and keeps the beta closest.
    bool similarity_update(Network& net) {
        if (params_.gamma == 0.0 || !own_geo_ || !own_sem_) return false;
        auto probe = [&](const std::vector<UserId>& full, const std::vector<UserId>& active, std::size_t& cursor,
                         RefKind kind) {
            std::vector<UserId> others;
            for (auto u : full) {
                if (!std::binary_search(active.begin(), active.end(), u)) others.push_back(u);
            }
            const std::size_t n = first_similarity_round_ ? others.size() : std::min(params_.similarity_probe, others.size());
            for (std::size_t i = 0; i < n; ++i) fetch(net, others[(cursor + i) % others.size()], kind);
            if (!others.empty()) cursor = (cursor + n) % others.size();
        };
        probe(neighbors_.geo_full, neighbors_.geo_active, geo_cursor_, RefKind::geo);
        probe(neighbors_.sem_full, neighbors_.sem_active, sem_cursor_, RefKind::semantic);
        first_similarity_round_ = false;
        for (const auto& [u, b] : fetched_geo_) geo_distance_[u] = bundle_soft_distance(*own_geo_, b);
        for (const auto& [u, b] : fetched_sem_) sem_distance_[u] = bundle_soft_distance(*own_sem_, b);
        auto before = std::make_pair(neighbors_.geo_active, neighbors_.sem_active);
        neighbors_.geo_active = select_most_similar(neighbors_.geo_full, geo_distance_, params_.beta);
        neighbors_.sem_active = select_most_similar(neighbors_.sem_full, sem_distance_, params_.beta);
        return before != std::make_pair(neighbors_.geo_active, neighbors_.sem_active);
    }

    void validate(std::uint32_t round) {
        const auto r = evaluate_valid();
        const std::size_t rank = r.rank.value_or(std::numeric_limits<std::size_t>::max());
        if (rank < best_rank_) {
            best_rank_ = rank;
            best_ = model_;
            stale_ = 0;
        } else if (++stale_ >= params_.patience) {
            finalize();
            frozen_ = true;
            converged_at_ = round + 1;
        }
    }

    EvalUser data_;
    ServerPackage package_;
    PoiDirectory dir_;
    TrainingParams params_;
    DeviceModel<T> model_;
    Rng train_rng_;
    Rng sampling_rng_;
    NeighborState neighbors_;
    std::vector<PoiId> mi_pois_;
    std::vector<CategoryId> mi_cats_;
    std::vector<double> loss_history_;
    std::optional<SoftDecisionBundle> own_geo_, own_sem_;
    std::map<UserId, SoftDecisionBundle> fetched_geo_, fetched_sem_;
    std::map<UserId, double> geo_distance_, sem_distance_;
    std::size_t geo_cursor_ = 0, sem_cursor_ = 0;
    bool first_similarity_round_ = true;
    std::size_t bytes_in_ = 0;
    std::optional<DeviceModel<T>> best_;
    std::size_t best_rank_ = std::numeric_limits<std::size_t>::max();
    std::size_t stale_ = 0;
    bool frozen_ = false;
    std::optional<std::size_t> converged_at_;
};

/// One synchronous round: all devices publish, then every unfrozen device
/// trains one epoch against the round's bundles and updates its actives.
template <std::floating_point T>
RoundLog run_round(std::vector<Device<T>>& devices, Network& net, std::uint32_t round, bool collaborate = true) {
    net.begin_round(round);
    if (collaborate) {
        for (auto& d : devices) d.publish(net, round);
    }
    RoundLog log;
    log.round = round;
    for (auto& d : devices) {
        if (auto rec = d.train_round(net, round)) {
            ++log.active_devices;
            log.records.push_back(*rec);
        }
    }
    log.bytes_total = net.round_bytes();
    return log;
}

/// Rounds until every device froze on validation or `max_epochs` passed.
/// Devices end on their best validation snapshot.
template <std::floating_point T>
std::vector<RoundLog> run_until_converged(std::vector<Device<T>>& devices, Network& net, std::size_t max_epochs,
                                          bool collaborate = true) {
    std::vector<RoundLog> logs;
    for (std::size_t r = 0; r < max_epochs; ++r) {
        const bool all_frozen = std::all_of(devices.begin(), devices.end(), [](const auto& d) { return d.frozen(); });
        if (all_frozen) break;
        logs.push_back(run_round(devices, net, static_cast<std::uint32_t>(r), collaborate));
    }
    for (auto& d : devices) d.finalize();
    return logs;
}

}  // namespace mac
