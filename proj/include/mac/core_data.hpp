#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "mac/common.hpp"

namespace mac {

struct Poi {
    std::string name;
    CategoryId category{};
    GeoPoint coord;
    std::string city;

    friend bool operator==(const Poi&, const Poi&) = default;
};

struct Checkin {
    UserId user{};
    PoiId poi{};
    std::int64_t timestamp = 0;

    friend bool operator==(const Checkin&, const Checkin&) = default;
};

/// Materialized check-ins plus the user, POI and category vocabularies.
/// Indices are dense and follow first appearance in the source file.
struct CheckinTable {
    std::vector<std::string> users;
    std::vector<std::string> categories;
    std::vector<Poi> pois;
    std::vector<Checkin> rows;

    std::size_t num_users() const { return users.size(); }
    std::size_t num_pois() const { return pois.size(); }
    std::size_t num_categories() const { return categories.size(); }

    CategoryId category_of(PoiId p) const { return pois.at(index(p)).category; }
    const GeoPoint& coord_of(PoiId p) const { return pois.at(index(p)).coord; }

    std::optional<UserId> find_user(std::string_view name) const {
        for (std::size_t i = 0; i < users.size(); ++i) {
            if (users[i] == name) return make_id<UserId>(i);
        }
        return std::nullopt;
    }

    friend bool operator==(const CheckinTable&, const CheckinTable&) = default;
};

/// Column names of a check-in CSV. `city` is optional; every other column
/// must be present in the header.
struct CheckinSchema {
    std::string user = "user_id";
    std::string poi = "poi_id";
    std::string category = "category";
    std::string lat = "lat";
    std::string lon = "lon";
    std::string timestamp = "timestamp";
    std::string city = "city";

    static CheckinSchema named(std::string_view name) {
        if (name == "default" || name == "mac") return CheckinSchema{};
        throw ConfigError("unknown check-in schema '" + std::string(name) + "'");
    }
};

struct CheckinSequence {
    UserId user{};
    std::vector<PoiId> pois;
    std::vector<CategoryId> categories;
    std::vector<std::int64_t> timestamps;

    std::size_t size() const { return pois.size(); }
    bool empty() const { return pois.empty(); }

    friend bool operator==(const CheckinSequence&, const CheckinSequence&) = default;
};

/// One evaluation user under leave-one-out: the training prefix plus the
/// second-to-last (validation) and last (test) check-ins.
struct EvalUser {
    UserId user{};
    CheckinSequence train;
    PoiId valid_target{};
    PoiId test_target{};
    std::int64_t valid_time = 0;
    std::int64_t test_time = 0;

    std::size_t original_length() const { return train.size() + 2; }

    friend bool operator==(const EvalUser&, const EvalUser&) = default;
};

struct SplitDataset {
    std::vector<EvalUser> users;
    std::vector<CheckinSequence> reference_pool;
    std::vector<UserId> excluded;

    friend bool operator==(const SplitDataset&, const SplitDataset&) = default;
};

/// Undirected friendship graph over ingested users.
class SocialGraph {
public:
    SocialGraph() = default;
    explicit SocialGraph(std::size_t num_users) : adjacency_(num_users) {}

    std::size_t num_users() const { return adjacency_.size(); }

    /// Returns false for self-loops and duplicates.
    bool add_edge(UserId a, UserId b) {
        if (a == b) return false;
        auto [lo, hi] = std::minmax(a, b);
        if (!edges_.insert({lo, hi}).second) return false;
        insert_sorted(adjacency_.at(index(a)), b);
        insert_sorted(adjacency_.at(index(b)), a);
        return true;
    }

    bool are_friends(UserId a, UserId b) const {
        auto [lo, hi] = std::minmax(a, b);
        return edges_.count({lo, hi}) > 0;
    }

    std::span<const UserId> friends(UserId u) const {
        if (index(u) >= adjacency_.size()) return {};
        return adjacency_[index(u)];
    }

    const std::set<std::pair<UserId, UserId>>& edges() const { return edges_; }
    std::size_t num_edges() const { return edges_.size(); }

private:
    static void insert_sorted(std::vector<UserId>& v, UserId u) {
        v.insert(std::lower_bound(v.begin(), v.end(), u), u);
    }

    std::vector<std::vector<UserId>> adjacency_;
    std::set<std::pair<UserId, UserId>> edges_;
};

namespace detail {

inline std::vector<std::string> split_csv_line(std::string_view line) {
    std::vector<std::string> fields;
    std::string field;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        char ch = line[i];
        if (quoted) {
            if (ch == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    field.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                field.push_back(ch);
            }
        } else if (ch == '"') {
            quoted = true;
        } else if (ch == ',') {
            fields.push_back(std::move(field));
            field.clear();
        } else {
            field.push_back(ch);
        }
    }
    fields.push_back(std::move(field));
    return fields;
}

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

inline double parse_double(std::string_view text, std::size_t line, std::string_view column) {
    text = trim(text);
    // std::from_chars for double is unavailable on some toolchains we build with.
    std::string buf(text);
    char* end = nullptr;
    double value = std::strtod(buf.c_str(), &end);
    if (buf.empty() || end != buf.c_str() + buf.size() || !std::isfinite(value)) {
        throw ParseError(line, "column '" + std::string(column) + "' is not a number: '" + buf + "'");
    }
    return value;
}

inline std::int64_t parse_int(std::string_view text, std::size_t line, std::string_view column) {
    text = trim(text);
    std::int64_t value = 0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (text.empty() || ec != std::errc{} || ptr != text.data() + text.size()) {
        throw ParseError(line, "column '" + std::string(column) + "' is not an integer: '" +
                                   std::string(text) + "'");
    }
    return value;
}

template <class Id>
Id intern(std::unordered_map<std::string, Id>& lookup, std::vector<std::string>& names,
          const std::string& name) {
    auto [it, inserted] = lookup.try_emplace(name, make_id<Id>(names.size()));
    if (inserted) names.push_back(name);
    return it->second;
}

}  // namespace detail

/// Parses a headered check-in CSV. POIs, users and categories get dense ids
/// in order of first appearance. A POI's category and coordinates come from
/// its first row.
inline CheckinTable parse_checkins(std::istream& in, const CheckinSchema& schema = {}) {
    std::string line;
    if (!std::getline(in, line)) throw ConfigError("check-in file is empty");
    auto header = detail::split_csv_line(line);
    auto column = [&](const std::string& name, bool required) -> std::optional<std::size_t> {
        for (std::size_t i = 0; i < header.size(); ++i) {
            if (detail::trim(header[i]) == name) return i;
        }
        if (required) throw ConfigError("check-in header lacks column '" + name + "'");
        return std::nullopt;
    };
    const std::size_t c_user = *column(schema.user, true);
    const std::size_t c_poi = *column(schema.poi, true);
    const std::size_t c_cat = *column(schema.category, true);
    const std::size_t c_lat = *column(schema.lat, true);
    const std::size_t c_lon = *column(schema.lon, true);
    const std::size_t c_ts = *column(schema.timestamp, true);
    const auto c_city = column(schema.city, false);

    CheckinTable table;
    std::unordered_map<std::string, UserId> user_ids;
    std::unordered_map<std::string, PoiId> poi_ids;
    std::unordered_map<std::string, CategoryId> cat_ids;
    std::vector<std::string> poi_names;

    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (detail::trim(line).empty()) continue;
        auto fields = detail::split_csv_line(line);
        if (fields.size() != header.size()) {
            throw ParseError(line_no, "expected " + std::to_string(header.size()) + " fields, got " +
                                          std::to_string(fields.size()));
        }
        const std::string user(detail::trim(fields[c_user]));
        const std::string poi(detail::trim(fields[c_poi]));
        const std::string cat(detail::trim(fields[c_cat]));
        if (user.empty() || poi.empty() || cat.empty()) throw ParseError(line_no, "empty identifier");
        const double lat = detail::parse_double(fields[c_lat], line_no, schema.lat);
        const double lon = detail::parse_double(fields[c_lon], line_no, schema.lon);
        if (lat < -90.0 || lat > 90.0) throw ParseError(line_no, "latitude out of range");
        if (lon < -180.0 || lon > 180.0) throw ParseError(line_no, "longitude out of range");
        const std::int64_t ts = detail::parse_int(fields[c_ts], line_no, schema.timestamp);

        const UserId u = detail::intern(user_ids, table.users, user);
        const CategoryId c = detail::intern(cat_ids, table.categories, cat);
        const PoiId p = detail::intern(poi_ids, poi_names, poi);
        if (index(p) == table.pois.size()) {
            table.pois.push_back(Poi{poi, c, GeoPoint{lon, lat},
                                     c_city ? std::string(detail::trim(fields[*c_city])) : std::string{}});
        }
        table.rows.push_back(Checkin{u, p, ts});
    }
    return table;
}

inline CheckinTable parse_checkins(const std::string& path, const CheckinSchema& schema = {}) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open check-in file '" + path + "'");
    return parse_checkins(in, schema);
}

/// Iteratively drops users and POIs with fewer than `min_count` check-ins
/// until every survivor meets the threshold. The fixed point is the unique
/// maximal sub-table, so removal order does not matter. Survivors are
/// re-indexed densely, keeping their relative order.
inline CheckinTable filter_min_interactions(const CheckinTable& table, std::size_t min_count) {
    if (min_count < 1) throw ConfigError("min_count must be >= 1");
    std::vector<bool> alive(table.rows.size(), true);
    bool changed = true;
    while (changed) {
        changed = false;
        std::vector<std::size_t> per_user(table.num_users(), 0), per_poi(table.num_pois(), 0);
        for (std::size_t i = 0; i < table.rows.size(); ++i) {
            if (!alive[i]) continue;
            ++per_user[index(table.rows[i].user)];
            ++per_poi[index(table.rows[i].poi)];
        }
        for (std::size_t i = 0; i < table.rows.size(); ++i) {
            if (!alive[i]) continue;
            const auto& r = table.rows[i];
            if (per_user[index(r.user)] < min_count || per_poi[index(r.poi)] < min_count) {
                alive[i] = false;
                changed = true;
            }
        }
    }

    std::vector<bool> keep_user(table.num_users(), false), keep_poi(table.num_pois(), false),
        keep_cat(table.num_categories(), false);
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
        if (!alive[i]) continue;
        keep_user[index(table.rows[i].user)] = true;
        keep_poi[index(table.rows[i].poi)] = true;
        keep_cat[index(table.category_of(table.rows[i].poi))] = true;
    }

    auto remap = [](const std::vector<bool>& keep) {
        std::vector<std::uint32_t> to(keep.size(), UINT32_MAX);
        std::uint32_t next = 0;
        for (std::size_t i = 0; i < keep.size(); ++i) {
            if (keep[i]) to[i] = next++;
        }
        return to;
    };
    const auto user_to = remap(keep_user), poi_to = remap(keep_poi), cat_to = remap(keep_cat);

    CheckinTable out;
    for (std::size_t i = 0; i < keep_user.size(); ++i) {
        if (keep_user[i]) out.users.push_back(table.users[i]);
    }
    for (std::size_t i = 0; i < keep_cat.size(); ++i) {
        if (keep_cat[i]) out.categories.push_back(table.categories[i]);
    }
    for (std::size_t i = 0; i < keep_poi.size(); ++i) {
        if (!keep_poi[i]) continue;
        Poi p = table.pois[i];
        p.category = make_id<CategoryId>(cat_to[index(p.category)]);
        out.pois.push_back(std::move(p));
    }
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
        if (!alive[i]) continue;
        const auto& r = table.rows[i];
        out.rows.push_back(Checkin{make_id<UserId>(user_to[index(r.user)]),
                                   make_id<PoiId>(poi_to[index(r.poi)]), r.timestamp});
    }
    if (out.rows.empty()) throw DataError("no check-ins survive filtering at min_count " + std::to_string(min_count));
    return out;
}

/// One chronological sequence per user, indexed by UserId. Equal timestamps
/// keep file order. Sequences longer than `max_seq_len` keep their most
/// recent check-ins.
inline std::vector<CheckinSequence> build_sequences(const CheckinTable& table, std::size_t max_seq_len) {
    if (max_seq_len < 1) throw ConfigError("max_seq_len must be >= 1");
    std::vector<std::vector<Checkin>> per_user(table.num_users());
    for (const auto& r : table.rows) per_user[index(r.user)].push_back(r);

    std::vector<CheckinSequence> out(table.num_users());
    for (std::size_t u = 0; u < per_user.size(); ++u) {
        auto& rows = per_user[u];
        std::stable_sort(rows.begin(), rows.end(),
                         [](const Checkin& a, const Checkin& b) { return a.timestamp < b.timestamp; });
        const std::size_t skip = rows.size() > max_seq_len ? rows.size() - max_seq_len : 0;
        auto& seq = out[u];
        seq.user = make_id<UserId>(u);
        for (std::size_t i = skip; i < rows.size(); ++i) {
            seq.pois.push_back(rows[i].poi);
            seq.categories.push_back(table.category_of(rows[i].poi));
            seq.timestamps.push_back(rows[i].timestamp);
        }
    }
    return out;
}

/// Withholds a seeded random `reference_fraction` of whole sequences as the
/// reference pool, then repairs POI coverage: any POI that appears neither in
/// the pool nor in some remaining user's training prefix pulls the
/// lowest-id sequence containing it into the pool. Remaining users are split
/// leave-one-out (last = test, second-to-last = validation).
inline SplitDataset leave_one_out_split(const std::vector<CheckinSequence>& sequences,
                                        double reference_fraction, std::uint64_t seed) {
    if (!(reference_fraction > 0.0 && reference_fraction < 1.0)) {
        throw ConfigError("reference_fraction must lie in (0, 1)");
    }
    SplitDataset split;
    std::vector<std::size_t> eligible;
    for (std::size_t i = 0; i < sequences.size(); ++i) {
        if (sequences[i].size() >= 3) {
            eligible.push_back(i);
        } else {
            split.excluded.push_back(sequences[i].user);
            warn("user " + std::to_string(index(sequences[i].user)) + " has fewer than 3 check-ins; excluded");
        }
    }
    if (eligible.empty()) throw DataError("no sequence has at least 3 check-ins");

    Rng rng(derive_seed(seed, stream::split));
    std::vector<std::size_t> order = eligible;
    std::shuffle(order.begin(), order.end(), rng);
    const auto pool_size = std::min(
        order.size(),
        static_cast<std::size_t>(std::ceil(reference_fraction * static_cast<double>(order.size()) - 1e-9)));
    std::vector<bool> in_pool(sequences.size(), false);
    for (std::size_t i = 0; i < pool_size; ++i) in_pool[order[i]] = true;

    std::size_t max_poi = 0;
    for (auto i : eligible) {
        for (auto p : sequences[i].pois) max_poi = std::max(max_poi, index(p) + 1);
    }
    auto coverage = [&] {
        std::vector<bool> covered(max_poi, false);
        for (auto i : eligible) {
            const auto& s = sequences[i];
            const std::size_t n = in_pool[i] ? s.size() : s.size() - 2;
            for (std::size_t t = 0; t < n; ++t) covered[index(s.pois[t])] = true;
        }
        return covered;
    };
    auto covered = coverage();
    for (std::size_t p = 0; p < max_poi; ++p) {
        if (covered[p]) continue;
        for (auto i : eligible) {
            if (in_pool[i]) continue;
            const auto& pois = sequences[i].pois;
            if (std::find(pois.begin(), pois.end(), make_id<PoiId>(p)) != pois.end()) {
                in_pool[i] = true;
                for (auto q : pois) covered[index(q)] = true;
                break;
            }
        }
    }

    for (auto i : eligible) {
        const auto& s = sequences[i];
        if (in_pool[i]) {
            split.reference_pool.push_back(s);
            continue;
        }
        EvalUser eu;
        eu.user = s.user;
        const std::size_t n = s.size() - 2;
        eu.train.user = s.user;
        eu.train.pois.assign(s.pois.begin(), s.pois.begin() + n);
        eu.train.categories.assign(s.categories.begin(), s.categories.begin() + n);
        eu.train.timestamps.assign(s.timestamps.begin(), s.timestamps.begin() + n);
        eu.valid_target = s.pois[n];
        eu.test_target = s.pois[n + 1];
        eu.valid_time = s.timestamps[n];
        eu.test_time = s.timestamps[n + 1];
        split.users.push_back(std::move(eu));
    }
    return split;
}

/// Reads a `user_a,user_b` edge list. Unknown users are dropped, self loops
/// skipped with a warning, duplicates collapse.
inline SocialGraph parse_friendships(std::istream& in, const CheckinTable& table) {
    std::unordered_map<std::string, UserId> lookup;
    for (std::size_t i = 0; i < table.users.size(); ++i) lookup.emplace(table.users[i], make_id<UserId>(i));
    SocialGraph graph(table.num_users());
    std::string line;
    std::size_t line_no = 0;
    std::size_t dropped = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (detail::trim(line).empty()) continue;
        auto fields = detail::split_csv_line(line);
        if (fields.size() != 2) throw ParseError(line_no, "friendship rows need exactly two fields");
        const std::string a(detail::trim(fields[0])), b(detail::trim(fields[1]));
        if (line_no == 1 && a == "user_a" && b == "user_b") continue;
        if (a == b) {
            warn("friendship line " + std::to_string(line_no) + " is a self loop; skipped");
            continue;
        }
        auto ia = lookup.find(a), ib = lookup.find(b);
        if (ia == lookup.end() || ib == lookup.end()) {
            ++dropped;
            continue;
        }
        graph.add_edge(ia->second, ib->second);
    }
    if (dropped > 0) warn(std::to_string(dropped) + " friendship rows reference unknown users; dropped");
    return graph;
}

inline SocialGraph parse_friendships(const std::string& path, const CheckinTable& table) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open friendship file '" + path + "'");
    return parse_friendships(in, table);
}

// ---------------------------------------------------------------------------
// Ingestion output: newline-delimited JSON, one record per line.
//
//   {"format":"mac-split","version":1,"users":U,"pois":P,"categories":C,"eval":E,"pool":K,"edges":F}
//   {"type":"category","id":i,"name":s}                       C lines
//   {"type":"poi","id":i,"name":s,"category":c,"lon":x,"lat":y,"city":s}   P lines
//   {"type":"user","id":i,"name":s}                           U lines
//   {"type":"eval","user":u,"pois":[..],"timestamps":[..],"valid":p,"valid_time":t,"test":p,"test_time":t}
//   {"type":"pool","user":u,"pois":[..],"timestamps":[..]}
//   {"type":"excluded","user":u}
//   {"type":"friend","a":u,"b":u}
//
// Records appear in exactly this order; ids are the dense indices above.
// Raw check-in rows are not stored; reading yields a table without rows.
// ---------------------------------------------------------------------------

inline constexpr int kSplitFormatVersion = 1;

struct IngestedData {
    CheckinTable table;
    SplitDataset split;
    SocialGraph graph;
};

inline void write_ingested(std::ostream& out, const IngestedData& data) {
    using nlohmann::json;
    const auto& t = data.table;
    auto ids = [](const auto& v) {
        json a = json::array();
        for (auto x : v) a.push_back(index(x));
        return a;
    };
    out << json{{"format", "mac-split"},
                {"version", kSplitFormatVersion},
                {"users", t.num_users()},
                {"pois", t.num_pois()},
                {"categories", t.num_categories()},
                {"eval", data.split.users.size()},
                {"pool", data.split.reference_pool.size()},
                {"edges", data.graph.num_edges()}}
               .dump()
        << '\n';
    for (std::size_t i = 0; i < t.categories.size(); ++i) {
        out << json{{"type", "category"}, {"id", i}, {"name", t.categories[i]}}.dump() << '\n';
    }
    for (std::size_t i = 0; i < t.pois.size(); ++i) {
        const auto& p = t.pois[i];
        out << json{{"type", "poi"}, {"id", i}, {"name", p.name}, {"category", index(p.category)},
                    {"lon", p.coord.lon}, {"lat", p.coord.lat}, {"city", p.city}}
                   .dump()
            << '\n';
    }
    for (std::size_t i = 0; i < t.users.size(); ++i) {
        out << json{{"type", "user"}, {"id", i}, {"name", t.users[i]}}.dump() << '\n';
    }
    for (const auto& u : data.split.users) {
        out << json{{"type", "eval"},
                    {"user", index(u.user)},
                    {"pois", ids(u.train.pois)},
                    {"timestamps", u.train.timestamps},
                    {"valid", index(u.valid_target)},
                    {"valid_time", u.valid_time},
                    {"test", index(u.test_target)},
                    {"test_time", u.test_time}}
                   .dump()
            << '\n';
    }
    for (const auto& s : data.split.reference_pool) {
        out << json{{"type", "pool"}, {"user", index(s.user)}, {"pois", ids(s.pois)}, {"timestamps", s.timestamps}}
                   .dump()
            << '\n';
    }
    for (auto u : data.split.excluded) out << json{{"type", "excluded"}, {"user", index(u)}}.dump() << '\n';
    for (const auto& [a, b] : data.graph.edges()) {
        out << json{{"type", "friend"}, {"a", index(a)}, {"b", index(b)}}.dump() << '\n';
    }
}

inline IngestedData read_ingested(std::istream& in) {
    using nlohmann::json;
    std::string line;
    std::size_t line_no = 1;
    if (!std::getline(in, line)) throw ConfigError("ingestion file is empty");
    json head;
    try {
        head = json::parse(line);
    } catch (const json::exception& e) {
        throw ParseError(line_no, e.what());
    }
    if (head.value("format", "") != "mac-split" || head.value("version", 0) != kSplitFormatVersion) {
        throw ConfigError("not a mac-split v1 file");
    }
    IngestedData data;
    auto& t = data.table;
    t.categories.resize(head.at("categories").get<std::size_t>());
    t.pois.resize(head.at("pois").get<std::size_t>());
    t.users.resize(head.at("users").get<std::size_t>());
    data.graph = SocialGraph(t.users.size());

    auto to_seq = [&](UserId user, const json& rec) {
        CheckinSequence s;
        s.user = user;
        for (auto p : rec.at("pois")) {
            s.pois.push_back(make_id<PoiId>(p.get<std::size_t>()));
            s.categories.push_back(t.category_of(s.pois.back()));
        }
        s.timestamps = rec.at("timestamps").get<std::vector<std::int64_t>>();
        return s;
    };
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            const json rec = json::parse(line);
            const std::string type = rec.at("type");
            if (type == "category") {
                t.categories.at(rec.at("id").get<std::size_t>()) = rec.at("name");
            } else if (type == "poi") {
                auto& p = t.pois.at(rec.at("id").get<std::size_t>());
                p.name = rec.at("name");
                p.category = make_id<CategoryId>(rec.at("category").get<std::size_t>());
                p.coord = GeoPoint{rec.at("lon").get<double>(), rec.at("lat").get<double>()};
                p.city = rec.at("city");
            } else if (type == "user") {
                t.users.at(rec.at("id").get<std::size_t>()) = rec.at("name");
            } else if (type == "eval") {
                EvalUser eu;
                eu.user = make_id<UserId>(rec.at("user").get<std::size_t>());
                eu.train = to_seq(eu.user, rec);
                eu.valid_target = make_id<PoiId>(rec.at("valid").get<std::size_t>());
                eu.test_target = make_id<PoiId>(rec.at("test").get<std::size_t>());
                eu.valid_time = rec.at("valid_time");
                eu.test_time = rec.at("test_time");
                data.split.users.push_back(std::move(eu));
            } else if (type == "pool") {
                data.split.reference_pool.push_back(to_seq(make_id<UserId>(rec.at("user").get<std::size_t>()), rec));
            } else if (type == "excluded") {
                data.split.excluded.push_back(make_id<UserId>(rec.at("user").get<std::size_t>()));
            } else if (type == "friend") {
                data.graph.add_edge(make_id<UserId>(rec.at("a").get<std::size_t>()),
                                    make_id<UserId>(rec.at("b").get<std::size_t>()));
            } else {
                throw ParseError(line_no, "unknown record type '" + type + "'");
            }
        } catch (const json::exception& e) {
            throw ParseError(line_no, e.what());
        } catch (const std::out_of_range& e) {
            throw ParseError(line_no, std::string("id out of range: ") + e.what());
        }
    }
    return data;
}

}  // namespace mac
