#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <concepts>
#include <cstring>
#include <istream>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "mac/common.hpp"
#include "mac/geo.hpp"

namespace mac {

enum class Mode { eval, train };

/// Per-device recommender: region-restricted POI embeddings, category
/// embeddings and the bilinear POI/category matrix. The same parameter-free
/// attention encoder serves both the POI predictor and the category
/// predictor.
template <std::floating_point T>
class DeviceModel {
public:
    using value_type = T;

    DeviceModel(UserId owner, std::size_t dim, const RegionMap& regions, std::vector<RegionId> stored_regions,
                std::size_t num_categories, std::uint64_t seed)
        : owner_(owner), dim_(dim), num_categories_(num_categories), rng_(seed) {
        if (dim == 0) throw ConfigError("model dimension must be positive");
        std::sort(stored_regions.begin(), stored_regions.end());
        stored_regions.erase(std::unique(stored_regions.begin(), stored_regions.end()), stored_regions.end());
        stored_regions_ = std::move(stored_regions);
        region_slots_.resize(regions.size());
        for (auto r : stored_regions_) {
            for (auto p : regions.region(r).pois) poi_ids_.push_back(p);
        }
        std::sort(poi_ids_.begin(), poi_ids_.end());
        slot_region_.resize(poi_ids_.size());
        for (std::size_t s = 0; s < poi_ids_.size(); ++s) {
            const auto r = regions.region_of(poi_ids_[s]);
            slot_region_[s] = r;
            region_slots_[index(r)].push_back(s);
        }

        const T bound = T(1) / std::sqrt(static_cast<T>(dim));
        std::uniform_real_distribution<T> init(-bound, bound);
        poi_.resize(poi_ids_.size() * dim);
        cat_.resize(num_categories * dim);
        mi_.resize(dim * dim);
        for (auto& v : poi_) v = init(rng_);
        for (auto& v : cat_) v = init(rng_);
        for (auto& v : mi_) v = init(rng_);
    }

    UserId owner() const { return owner_; }
    std::size_t dim() const { return dim_; }
    std::size_t num_pois() const { return poi_ids_.size(); }
    std::size_t num_categories() const { return num_categories_; }

    std::span<const RegionId> stored_regions() const { return stored_regions_; }
    bool stores_region(RegionId r) const {
        return std::binary_search(stored_regions_.begin(), stored_regions_.end(), r);
    }

    std::span<const PoiId> poi_ids() const { return poi_ids_; }

    std::optional<std::size_t> slot_of(PoiId p) const {
        auto it = std::lower_bound(poi_ids_.begin(), poi_ids_.end(), p);
        if (it == poi_ids_.end() || *it != p) return std::nullopt;
        return static_cast<std::size_t>(it - poi_ids_.begin());
    }

    std::size_t require_slot(PoiId p) const {
        auto s = slot_of(p);
        if (!s) {
            throw ModelError("device " + std::to_string(index(owner_)) + " has no embedding for POI " +
                             std::to_string(index(p)));
        }
        return *s;
    }

    RegionId region_of_slot(std::size_t slot) const { return slot_region_.at(slot); }

    /// Slots of every stored POI in region r, ascending by POI id.
    std::span<const std::size_t> region_slots(RegionId r) const {
        if (!stores_region(r)) {
            throw ModelError("device " + std::to_string(index(owner_)) + " does not store region " +
                             std::to_string(index(r)));
        }
        return region_slots_[index(r)];
    }

    std::span<T> poi_block() { return poi_; }
    std::span<const T> poi_block() const { return poi_; }
    std::span<T> cat_block() { return cat_; }
    std::span<const T> cat_block() const { return cat_; }
    std::span<T> mi_block() { return mi_; }
    std::span<const T> mi_block() const { return mi_; }

    std::span<T> poi_row(std::size_t slot) { return std::span<T>(poi_).subspan(slot * dim_, dim_); }
    std::span<const T> poi_row(std::size_t slot) const {
        return std::span<const T>(poi_).subspan(slot * dim_, dim_);
    }
    std::span<T> cat_row(CategoryId c) { return std::span<T>(cat_).subspan(index(c) * dim_, dim_); }
    std::span<const T> cat_row(CategoryId c) const {
        return std::span<const T>(cat_).subspan(index(c) * dim_, dim_);
    }

    Rng& rng() { return rng_; }

    friend bool operator==(const DeviceModel& a, const DeviceModel& b) {
        return a.owner_ == b.owner_ && a.dim_ == b.dim_ && a.poi_ids_ == b.poi_ids_ && a.poi_ == b.poi_ &&
               a.cat_ == b.cat_ && a.mi_ == b.mi_;
    }

private:
    UserId owner_;
    std::size_t dim_;
    std::size_t num_categories_;
    std::vector<RegionId> stored_regions_;
    std::vector<PoiId> poi_ids_;
    std::vector<RegionId> slot_region_;
    std::vector<std::vector<std::size_t>> region_slots_;
    std::vector<T> poi_;
    std::vector<T> cat_;
    std::vector<T> mi_;  // dim x dim, row-major
    Rng rng_;
};

/// A probability distribution over an ordered support of POI or category ids.
struct SoftDecision {
    std::vector<std::uint32_t> support;
    std::vector<double> probs;
};

/// Sparse-over-POIs gradient with the model's layout.
template <std::floating_point T>
struct Gradients {
    explicit Gradients(const DeviceModel<T>& model)
        : dim(model.dim()),
          poi(model.poi_block().size(), T(0)),
          touched(model.num_pois(), false),
          cat(model.cat_block().size(), T(0)),
          mi(model.mi_block().size(), T(0)) {}

    std::size_t dim;
    std::vector<T> poi;
    std::vector<bool> touched;
    std::vector<T> cat;
    std::vector<T> mi;

    std::span<T> poi_row(std::size_t slot) {
        touched[slot] = true;
        return std::span<T>(poi).subspan(slot * dim, dim);
    }
    std::span<T> cat_row(std::size_t c) { return std::span<T>(cat).subspan(c * dim, dim); }

    std::size_t touched_count() const { return static_cast<std::size_t>(std::count(touched.begin(), touched.end(), true)); }
};

enum class Table { poi, category };

/// Everything the backward pass needs from one forward prediction.
template <std::floating_point T>
struct PredictionTrace {
    Table table = Table::poi;
    std::vector<std::size_t> prefix;   // rows of the embedding table
    std::vector<std::size_t> support;  // rows of the embedding table
    std::vector<T> attn;
    std::vector<T> state;         // (context + query) / 2, before dropout
    std::vector<T> keep;          // inverted-dropout multipliers; empty in eval mode
    std::vector<T> scaled_state;  // state after dropout
    std::vector<T> scores;
    std::vector<T> probs;
    T log_normalizer = T(0);  // log-sum-exp of scores
};

struct Dropout {
    double rate = 0.0;
    Rng* rng = nullptr;  // null means eval mode

    static Dropout off() { return {}; }
};

namespace detail {

template <class T>
T dot(const T* a, const T* b, std::size_t n) {
    T s = T(0);
    for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

template <class T>
T softmax_inplace(std::span<T> v) {
    const T mx = *std::max_element(v.begin(), v.end());
    T sum = T(0);
    for (auto& x : v) {
        x = std::exp(x - mx);
        sum += x;
    }
    for (auto& x : v) x /= sum;
    return mx + std::log(sum);
}

/// Attention encoder followed by dot-product scoring:
///   q = x_T, a = softmax(q.x_t / sqrt(d)), h = sum a_t x_t,
///   s = (h + q) / 2, score_k = dropout(s) . e_k, p = softmax(score).
template <class T>
PredictionTrace<T> predict(std::span<const T> table, std::size_t dim, Table kind, std::vector<std::size_t> prefix,
                           std::vector<std::size_t> support, const Dropout& dropout) {
    if (prefix.empty()) throw ModelError("prediction needs a nonempty prefix");
    if (support.empty()) throw ModelError("prediction needs a nonempty support");
    PredictionTrace<T> tr;
    tr.table = kind;
    tr.prefix = std::move(prefix);
    tr.support = std::move(support);
    const T* base = table.data();
    const T* q = base + tr.prefix.back() * dim;
    const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(dim));

    tr.attn.resize(tr.prefix.size());
    for (std::size_t t = 0; t < tr.prefix.size(); ++t) tr.attn[t] = dot(q, base + tr.prefix[t] * dim, dim) * inv_sqrt;
    softmax_inplace<T>(tr.attn);

    tr.state.assign(dim, T(0));
    for (std::size_t t = 0; t < tr.prefix.size(); ++t) {
        const T* x = base + tr.prefix[t] * dim;
        const T a = tr.attn[t];
        for (std::size_t j = 0; j < dim; ++j) tr.state[j] += a * x[j];
    }
    for (std::size_t j = 0; j < dim; ++j) tr.state[j] = (tr.state[j] + q[j]) / T(2);

    tr.scaled_state = tr.state;
    if (dropout.rng != nullptr && dropout.rate > 0.0) {
        std::bernoulli_distribution keep(1.0 - dropout.rate);
        const T scale = T(1) / static_cast<T>(1.0 - dropout.rate);
        tr.keep.resize(dim);
        for (std::size_t j = 0; j < dim; ++j) {
            tr.keep[j] = keep(*dropout.rng) ? scale : T(0);
            tr.scaled_state[j] *= tr.keep[j];
        }
    }

    tr.scores.resize(tr.support.size());
    for (std::size_t k = 0; k < tr.support.size(); ++k) {
        tr.scores[k] = dot(tr.scaled_state.data(), base + tr.support[k] * dim, dim);
    }
    tr.probs = tr.scores;
    tr.log_normalizer = softmax_inplace<T>(tr.probs);
    return tr;
}

/// Accumulates d(loss)/d(table) given d(loss)/d(scores).
template <class T>
void predict_backward(const PredictionTrace<T>& tr, std::span<const T> dscores, std::span<const T> table,
                      std::size_t dim, std::span<T> grad, std::vector<bool>* touched) {
    const T* base = table.data();
    T* g = grad.data();
    auto mark = [&](std::size_t row) {
        if (touched) (*touched)[row] = true;
    };

    std::vector<T> d_state(dim, T(0));
    for (std::size_t k = 0; k < tr.support.size(); ++k) {
        const T ds = dscores[k];
        if (ds == T(0)) continue;
        const std::size_t row = tr.support[k];
        const T* e = base + row * dim;
        T* ge = g + row * dim;
        for (std::size_t j = 0; j < dim; ++j) {
            d_state[j] += ds * e[j];
            ge[j] += ds * tr.scaled_state[j];
        }
        mark(row);
    }
    if (!tr.keep.empty()) {
        for (std::size_t j = 0; j < dim; ++j) d_state[j] *= tr.keep[j];
    }

    // s = (h + q) / 2
    std::vector<T> d_query(dim), d_context(dim);
    for (std::size_t j = 0; j < dim; ++j) d_query[j] = d_context[j] = d_state[j] / T(2);

    const std::size_t len = tr.prefix.size();
    const T* q = base + tr.prefix.back() * dim;
    std::vector<T> d_attn(len);
    T weighted = T(0);
    for (std::size_t t = 0; t < len; ++t) {
        const std::size_t row = tr.prefix[t];
        const T* x = base + row * dim;
        T* gx = g + row * dim;
        d_attn[t] = dot(d_context.data(), x, dim);
        for (std::size_t j = 0; j < dim; ++j) gx[j] += tr.attn[t] * d_context[j];
        weighted += tr.attn[t] * d_attn[t];
        mark(row);
    }
    const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(dim));
    for (std::size_t t = 0; t < len; ++t) {
        const T dz = tr.attn[t] * (d_attn[t] - weighted) * inv_sqrt;
        if (dz == T(0)) continue;
        const std::size_t row = tr.prefix[t];
        const T* x = base + row * dim;
        T* gx = g + row * dim;
        for (std::size_t j = 0; j < dim; ++j) {
            d_query[j] += dz * x[j];
            gx[j] += dz * q[j];
        }
    }
    T* gq = g + tr.prefix.back() * dim;
    for (std::size_t j = 0; j < dim; ++j) gq[j] += d_query[j];
}

}  // namespace detail

/// Rows-level entry points, used by the loss builders.
template <std::floating_point T>
PredictionTrace<T> trace_poi(const DeviceModel<T>& model, std::span<const PoiId> prefix,
                             std::vector<std::size_t> support_slots, const Dropout& dropout) {
    std::vector<std::size_t> rows;
    rows.reserve(prefix.size());
    for (auto p : prefix) rows.push_back(model.require_slot(p));
    return detail::predict<T>(model.poi_block(), model.dim(), Table::poi, std::move(rows), std::move(support_slots),
                              dropout);
}

template <std::floating_point T>
PredictionTrace<T> trace_cat(const DeviceModel<T>& model, std::span<const CategoryId> prefix, const Dropout& dropout) {
    std::vector<std::size_t> rows, support(model.num_categories());
    rows.reserve(prefix.size());
    for (auto c : prefix) {
        if (index(c) >= model.num_categories()) throw ModelError("unknown category " + std::to_string(index(c)));
        rows.push_back(index(c));
    }
    for (std::size_t c = 0; c < support.size(); ++c) support[c] = c;
    return detail::predict<T>(model.cat_block(), model.dim(), Table::category, std::move(rows), std::move(support),
                              dropout);
}

/// Next-POI distribution over `support` given `prefix`. Train mode applies
/// inverted dropout to the encoder state using the model's generator.
template <std::floating_point T>
SoftDecision forward_poi(DeviceModel<T>& model, std::span<const PoiId> prefix, std::span<const PoiId> support,
                         Mode mode, double dropout_rate = 0.2) {
    std::vector<std::size_t> slots;
    slots.reserve(support.size());
    for (auto p : support) slots.push_back(model.require_slot(p));
    Dropout dropout;
    if (mode == Mode::train) dropout = Dropout{dropout_rate, &model.rng()};
    auto tr = trace_poi(std::as_const(model), prefix, std::move(slots), dropout);
    SoftDecision out;
    out.support.reserve(support.size());
    for (auto p : support) out.support.push_back(static_cast<std::uint32_t>(index(p)));
    out.probs.assign(tr.probs.begin(), tr.probs.end());
    return out;
}

template <std::floating_point T>
SoftDecision forward_poi(const DeviceModel<T>& model, std::span<const PoiId> prefix, std::span<const PoiId> support) {
    std::vector<std::size_t> slots;
    for (auto p : support) slots.push_back(model.require_slot(p));
    auto tr = trace_poi(model, prefix, std::move(slots), Dropout::off());
    SoftDecision out;
    for (auto p : support) out.support.push_back(static_cast<std::uint32_t>(index(p)));
    out.probs.assign(tr.probs.begin(), tr.probs.end());
    return out;
}

/// Category distribution over all categories given a category prefix.
template <std::floating_point T>
SoftDecision forward_cat(DeviceModel<T>& model, std::span<const CategoryId> prefix, Mode mode,
                         double dropout_rate = 0.2) {
    Dropout dropout;
    if (mode == Mode::train) dropout = Dropout{dropout_rate, &model.rng()};
    auto tr = trace_cat(std::as_const(model), prefix, dropout);
    SoftDecision out;
    for (std::size_t c = 0; c < model.num_categories(); ++c) out.support.push_back(static_cast<std::uint32_t>(c));
    out.probs.assign(tr.probs.begin(), tr.probs.end());
    return out;
}

/// A bilinear POI/category term: per category c, d(loss)/d(e_p^T W e_c).
template <std::floating_point T>
struct BilinearTerm {
    std::size_t poi_slot = 0;
    std::vector<T> dlogits;
};

/// The differentiable pieces of a scalar loss, recorded during the forward
/// pass. Upstream weights are already folded into the stored derivatives.
template <std::floating_point T>
struct LossTerms {
    std::vector<std::pair<PredictionTrace<T>, std::vector<T>>> predictions;
    std::vector<BilinearTerm<T>> bilinear;

    void add_prediction(PredictionTrace<T> trace, std::vector<T> dscores) {
        predictions.emplace_back(std::move(trace), std::move(dscores));
    }
    bool empty() const { return predictions.empty() && bilinear.empty(); }
};

namespace detail {

template <class T>
void check_finite(std::span<const T> v, const char* component) {
    for (auto x : v) {
        if (!std::isfinite(x)) throw NumericalError(component, "non-finite gradient");
    }
}

}  // namespace detail

/// Exact gradients of the recorded loss w.r.t. every trainable tensor.
template <std::floating_point T>
Gradients<T> backprop(const DeviceModel<T>& model, const LossTerms<T>& terms) {
    Gradients<T> g(model);
    const std::size_t d = model.dim();
    for (const auto& [tr, dscores] : terms.predictions) {
        if (tr.table == Table::poi) {
            detail::predict_backward<T>(tr, dscores, model.poi_block(), d, g.poi, &g.touched);
        } else {
            detail::predict_backward<T>(tr, dscores, model.cat_block(), d, g.cat, nullptr);
        }
    }
    const auto W = model.mi_block();
    std::vector<T> v(d), dv(d);
    for (const auto& term : terms.bilinear) {
        const auto e_p = model.poi_row(term.poi_slot);
        // v = W^T e_p, so e_p^T W e_c = v . e_c
        std::fill(v.begin(), v.end(), T(0));
        for (std::size_t i = 0; i < d; ++i) {
            for (std::size_t j = 0; j < d; ++j) v[j] += e_p[i] * W[i * d + j];
        }
        std::fill(dv.begin(), dv.end(), T(0));
        for (std::size_t c = 0; c < term.dlogits.size(); ++c) {
            const T du = term.dlogits[c];
            auto e_c = model.cat_row(make_id<CategoryId>(c));
            auto ge_c = g.cat_row(c);
            for (std::size_t j = 0; j < d; ++j) {
                ge_c[j] += du * v[j];
                dv[j] += du * e_c[j];
            }
        }
        auto ge_p = g.poi_row(term.poi_slot);
        for (std::size_t i = 0; i < d; ++i) {
            T acc = T(0);
            for (std::size_t j = 0; j < d; ++j) {
                acc += W[i * d + j] * dv[j];
                g.mi[i * d + j] += e_p[i] * dv[j];
            }
            ge_p[i] += acc;
        }
    }
    detail::check_finite<T>(g.poi, "poi_embeddings");
    detail::check_finite<T>(g.cat, "cat_embeddings");
    detail::check_finite<T>(g.mi, "mi_matrix");
    return g;
}

/// Plain SGD: params <- params - lr * grads. Untouched POI rows are skipped.
template <std::floating_point T>
void sgd_step(DeviceModel<T>& model, const Gradients<T>& g, T lr) {
    const std::size_t d = model.dim();
    auto poi = model.poi_block();
    for (std::size_t s = 0; s < g.touched.size(); ++s) {
        if (!g.touched[s]) continue;
        for (std::size_t j = 0; j < d; ++j) poi[s * d + j] -= lr * g.poi[s * d + j];
    }
    auto cat = model.cat_block();
    for (std::size_t i = 0; i < cat.size(); ++i) cat[i] -= lr * g.cat[i];
    auto mi = model.mi_block();
    for (std::size_t i = 0; i < mi.size(); ++i) mi[i] -= lr * g.mi[i];
}

/// Mean next-POI cross-entropy over the given target positions of `seq`
/// (position t predicts seq[t] from seq[0..t)). Each step's support is
/// every stored POI in the target's region. When `terms` is given, the
/// gradient contributions scaled by `weight` are recorded.
template <std::floating_point T>
T local_loss_terms(const DeviceModel<T>& model, std::span<const PoiId> seq, std::span<const std::size_t> positions,
                   const Dropout& dropout, T weight, LossTerms<T>* terms) {
    if (positions.empty()) return T(0);
    T total = T(0);
    const T scale = weight / static_cast<T>(positions.size());
    for (auto t : positions) {
        if (t == 0 || t >= seq.size()) throw ModelError("target position out of range");
        const std::size_t target = model.require_slot(seq[t]);
        auto support = model.region_slots(model.region_of_slot(target));
        auto it = std::lower_bound(support.begin(), support.end(), target);
        if (it == support.end() || *it != target) throw ModelError("target POI missing from its region support");
        const std::size_t k = static_cast<std::size_t>(it - support.begin());
        auto tr = trace_poi(model, seq.first(t), std::vector<std::size_t>(support.begin(), support.end()), dropout);
        total += tr.log_normalizer - tr.scores[k];
        if (terms) {
            std::vector<T> ds(tr.probs.size());
            for (std::size_t i = 0; i < ds.size(); ++i) ds[i] = scale * tr.probs[i];
            ds[k] -= scale;
            terms->add_prediction(std::move(tr), std::move(ds));
        }
    }
    return total / static_cast<T>(positions.size());
}

/// Mean cross-entropy over every position of a training sequence, eval mode.
template <std::floating_point T>
T local_loss(const DeviceModel<T>& model, std::span<const PoiId> seq) {
    if (seq.size() < 2) throw ModelError("local loss needs a sequence of length >= 2");
    std::vector<std::size_t> positions(seq.size() - 1);
    for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = i + 1;
    return local_loss_terms<T>(model, seq, positions, Dropout::off(), T(1), nullptr);
}

/// 4 bytes per float: stored POI embeddings, category embeddings, W.
template <std::floating_point T>
std::size_t model_size_bytes(const DeviceModel<T>& model) {
    const std::size_t d = model.dim();
    return 4 * (model.num_pois() * d + model.num_categories() * d + d * d);
}

// ---------------------------------------------------------------------------
// Checkpoint layout, all integers and floats little-endian:
//   bytes 0..7    magic "MACCKPT\0"
//   u32           format version (1)
//   u32           owner user id
//   u32           dim
//   u32           number of stored POIs (n)
//   u32           number of categories (c)
//   u32 x n       stored POI ids, ascending
//   f32 x n*dim   POI embeddings, one row per stored POI
//   f32 x c*dim   category embeddings
//   f32 x dim*dim bilinear matrix, row-major
// File size is therefore 28 + 4n + model_size_bytes(model).
// ---------------------------------------------------------------------------

inline constexpr char kCheckpointMagic[8] = {'M', 'A', 'C', 'C', 'K', 'P', 'T', '\0'};
inline constexpr std::size_t kCheckpointHeaderBytes = 28;

struct Checkpoint {
    UserId owner{};
    std::size_t dim = 0;
    std::vector<PoiId> poi_ids;
    std::size_t num_categories = 0;
    std::vector<float> poi;
    std::vector<float> cat;
    std::vector<float> mi;
};

namespace detail {

inline void put_u32(std::ostream& out, std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32(std::istream& in) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) throw DataError("truncated checkpoint");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

template <class T>
void put_f32s(std::ostream& out, std::span<const T> v) {
    for (auto x : v) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(x)));
}

inline std::vector<float> get_f32s(std::istream& in, std::size_t n) {
    std::vector<float> v(n);
    for (auto& x : v) x = std::bit_cast<float>(get_u32(in));
    return v;
}

}  // namespace detail

template <std::floating_point T>
void write_checkpoint(std::ostream& out, const DeviceModel<T>& model) {
    out.write(kCheckpointMagic, sizeof kCheckpointMagic);
    detail::put_u32(out, 1);
    detail::put_u32(out, static_cast<std::uint32_t>(index(model.owner())));
    detail::put_u32(out, static_cast<std::uint32_t>(model.dim()));
    detail::put_u32(out, static_cast<std::uint32_t>(model.num_pois()));
    detail::put_u32(out, static_cast<std::uint32_t>(model.num_categories()));
    for (auto p : model.poi_ids()) detail::put_u32(out, static_cast<std::uint32_t>(index(p)));
    detail::put_f32s(out, model.poi_block());
    detail::put_f32s(out, model.cat_block());
    detail::put_f32s(out, model.mi_block());
}

inline Checkpoint read_checkpoint(std::istream& in) {
    char magic[8];
    if (!in.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0) throw DataError("not a checkpoint file");
    if (detail::get_u32(in) != 1) throw DataError("unsupported checkpoint version");
    Checkpoint ck;
    ck.owner = make_id<UserId>(detail::get_u32(in));
    ck.dim = detail::get_u32(in);
    const std::size_t n = detail::get_u32(in);
    ck.num_categories = detail::get_u32(in);
    for (std::size_t i = 0; i < n; ++i) ck.poi_ids.push_back(make_id<PoiId>(detail::get_u32(in)));
    ck.poi = detail::get_f32s(in, n * ck.dim);
    ck.cat = detail::get_f32s(in, ck.num_categories * ck.dim);
    ck.mi = detail::get_f32s(in, ck.dim * ck.dim);
    return ck;
}

/// Loads checkpoint tensors into a model of identical shape.
template <std::floating_point T>
void restore(DeviceModel<T>& model, const Checkpoint& ck) {
    if (ck.dim != model.dim() || ck.num_categories != model.num_categories() ||
        !std::equal(ck.poi_ids.begin(), ck.poi_ids.end(), model.poi_ids().begin(), model.poi_ids().end())) {
        throw DataError("checkpoint shape does not match model");
    }
    std::copy(ck.poi.begin(), ck.poi.end(), model.poi_block().begin());
    std::copy(ck.cat.begin(), ck.cat.end(), model.cat_block().begin());
    std::copy(ck.mi.begin(), ck.mi.end(), model.mi_block().begin());
}

}  // namespace mac
