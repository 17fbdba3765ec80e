#pragma once

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mac/collab.hpp"
#include "mac/common.hpp"
#include "mac/core_data.hpp"
#include "mac/eval.hpp"
#include "mac/geo.hpp"
#include "mac/neighbors.hpp"
#include "mac/refdata.hpp"
#include "mac/simulator.hpp"

namespace mac {

struct DimBucket {
    std::size_t dim = 0;
    double fraction = 0.0;

    friend bool operator==(const DimBucket&, const DimBucket&) = default;
};

struct ExperimentConfig {
    std::uint64_t seed = 42;
    std::vector<DimBucket> dims = {{8, 0.2}, {16, 0.2}, {32, 0.2}, {64, 0.2}, {128, 0.2}};
    std::size_t alpha = 5;
    std::size_t beta = 10;
    double gamma = 0.5;
    double mu = 0.7;
    double tau = 1.0;  // percent
    std::size_t h = 50;
    double lr = 0.002;
    double dropout = 0.2;
    std::size_t batch_size = 16;
    std::size_t max_epochs = 50;
    std::size_t patience = 5;
    std::size_t k_regions = 5;
    std::size_t v_r = 20;
    std::size_t z = 50;
    std::size_t ref_len = 20;
    double max_hop_km = 5.0;
    RefgenMode refgen = RefgenMode::transformative;
    SamplingMode sampling = SamplingMode::performance;
    std::size_t similarity_probe = 5;
    std::size_t min_interactions = 10;
    std::size_t max_seq_len = 200;
    double reference_fraction = 0.1;
    std::size_t candidates = 200;
    std::string checkins;
    std::string friends;

    void validate() const {
        double total = 0.0;
        for (const auto& b : dims) {
            if (b.dim == 0 || !(b.fraction > 0.0)) throw ConfigError("dimension buckets need d > 0 and a positive share");
            total += b.fraction;
        }
        if (dims.empty() || std::abs(total - 1.0) > 1e-6) throw ConfigError("dimension fractions must sum to 1");
        if (alpha < 1 || beta < 1 || h < 1) throw ConfigError("alpha, beta and h must be >= 1");
        if (!(gamma >= 0.0)) throw ConfigError("gamma must be >= 0");
        if (!(mu >= 0.0 && mu <= 1.0)) throw ConfigError("mu must be within [0, 1]");
        if (!(tau >= 0.0)) throw ConfigError("tau must be >= 0");
        if (!(lr > 0.0)) throw ConfigError("lr must be > 0");
        if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must be within [0, 1)");
        if (batch_size < 1 || max_epochs < 1 || patience < 1) throw ConfigError("batch_size, max_epochs, patience >= 1");
        if (k_regions < 1 || v_r < 1 || z < 1 || ref_len < 2) throw ConfigError("k_regions, v_r, z >= 1 and ref_len >= 2");
        if (!(max_hop_km > 0.0)) throw ConfigError("max_hop_km must be > 0");
        if (min_interactions < 1 || max_seq_len < 3) throw ConfigError("min_interactions >= 1 and max_seq_len >= 3");
        if (!(reference_fraction > 0.0 && reference_fraction < 1.0)) throw ConfigError("reference_fraction in (0, 1)");
        if (candidates < 1) throw ConfigError("candidates must be >= 1");
    }
};

inline std::vector<DimBucket> parse_dims(std::string_view text) {
    std::vector<DimBucket> out;
    std::string s(text);
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto t = detail::trim(item);
        if (t.empty()) continue;
        const auto colon = t.find(':');
        if (colon == std::string_view::npos) throw ConfigError("dims entry '" + std::string(t) + "' is not d:fraction");
        try {
            const auto d = detail::parse_int(detail::trim(t.substr(0, colon)), 0, "dims");
            const auto f = detail::parse_double(detail::trim(t.substr(colon + 1)), 0, "dims");
            if (d <= 0) throw ConfigError("dimension must be positive");
            out.push_back({static_cast<std::size_t>(d), f});
        } catch (const ParseError&) {
            throw ConfigError("dims entry '" + std::string(t) + "' is not d:fraction");
        }
    }
    return out;
}

inline std::string format_dims(const std::vector<DimBucket>& dims) {
    std::ostringstream out;
    for (std::size_t i = 0; i < dims.size(); ++i) out << (i ? "," : "") << dims[i].dim << ':' << dims[i].fraction;
    return out.str();
}

/// Applies one `key = value` setting. Unknown keys are errors.
inline void apply_setting(ExperimentConfig& c, std::string_view key, std::string_view value) {
    auto as_size = [&] {
        try {
            const auto v = detail::parse_int(value, 0, key);
            if (v < 0) throw ConfigError(std::string(key) + " must be >= 0");
            return static_cast<std::size_t>(v);
        } catch (const ParseError&) {
            throw ConfigError(std::string(key) + ": '" + std::string(value) + "' is not an integer");
        }
    };
    auto as_real = [&] {
        try {
            return detail::parse_double(value, 0, key);
        } catch (const ParseError&) {
            throw ConfigError(std::string(key) + ": '" + std::string(value) + "' is not a number");
        }
    };
    if (key == "seed") c.seed = as_size();
    else if (key == "dims") c.dims = parse_dims(value);
    else if (key == "alpha") c.alpha = as_size();
    else if (key == "beta") c.beta = as_size();
    else if (key == "gamma") c.gamma = as_real();
    else if (key == "mu") c.mu = as_real();
    else if (key == "tau") c.tau = as_real();
    else if (key == "h") c.h = as_size();
    else if (key == "lr") c.lr = as_real();
    else if (key == "dropout") c.dropout = as_real();
    else if (key == "batch_size") c.batch_size = as_size();
    else if (key == "max_epochs") c.max_epochs = as_size();
    else if (key == "patience") c.patience = as_size();
    else if (key == "k_regions") c.k_regions = as_size();
    else if (key == "v_r") c.v_r = as_size();
    else if (key == "z") c.z = as_size();
    else if (key == "ref_len") c.ref_len = as_size();
    else if (key == "max_hop_km") c.max_hop_km = as_real();
    else if (key == "refgen") c.refgen = parse_refgen_mode(value);
    else if (key == "sampling") c.sampling = parse_sampling_mode(value);
    else if (key == "similarity_probe") c.similarity_probe = as_size();
    else if (key == "min_interactions") c.min_interactions = as_size();
    else if (key == "max_seq_len") c.max_seq_len = as_size();
    else if (key == "reference_fraction") c.reference_fraction = as_real();
    else if (key == "candidates") c.candidates = as_size();
    else if (key == "checkins") c.checkins = std::string(value);
    else if (key == "friends") c.friends = std::string(value);
    else throw ConfigError("unknown config key '" + std::string(key) + "'");
}

/// Flat `key = value` lines; `#` starts a comment. Relative dataset paths
/// are resolved against `base_dir` when given.
inline ExperimentConfig parse_config(std::istream& in, const std::filesystem::path& base_dir = {}) {
    ExperimentConfig c;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        const auto t = detail::trim(line);
        if (t.empty()) continue;
        const auto eq = t.find('=');
        if (eq == std::string_view::npos) {
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
        }
        apply_setting(c, detail::trim(t.substr(0, eq)), detail::trim(t.substr(eq + 1)));
    }
    if (!base_dir.empty()) {
        for (auto* p : {&c.checkins, &c.friends}) {
            if (!p->empty() && std::filesystem::path(*p).is_relative()) *p = (base_dir / *p).string();
        }
    }
    c.validate();
    return c;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    return parse_config(in, std::filesystem::path(path).parent_path());
}

/// Per-user dimensions: largest-remainder counts per bucket, then a seeded
/// shuffle of the resulting list.
inline std::vector<std::size_t> assign_dimensions(std::size_t users, const std::vector<DimBucket>& dims,
                                                  std::uint64_t seed) {
    std::vector<std::size_t> counts(dims.size());
    std::vector<std::pair<double, std::size_t>> remainders;
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < dims.size(); ++i) {
        const double exact = dims[i].fraction * static_cast<double>(users);
        counts[i] = static_cast<std::size_t>(std::floor(exact));
        assigned += counts[i];
        remainders.emplace_back(-(exact - std::floor(exact)), i);
    }
    std::sort(remainders.begin(), remainders.end());
    for (std::size_t k = 0; assigned < users; ++k, ++assigned) ++counts[remainders[k % remainders.size()].second];
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < dims.size(); ++i) out.insert(out.end(), counts[i], dims[i].dim);
    Rng rng(derive_seed(seed, stream::dims));
    std::shuffle(out.begin(), out.end(), rng);
    return out;
}

class StageError : public Error {
public:
    StageError(std::string stage, const std::string& what) : Error(stage + ": " + what), stage_(std::move(stage)) {}
    const std::string& stage() const noexcept { return stage_; }

private:
    std::string stage_;
};

template <class F>
auto run_stage(const std::string& stage, F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (const StageError&) {
        throw;
    } catch (const std::exception& e) {
        throw StageError(stage, e.what());
    }
}

struct PreparedData {
    CheckinTable table;
    SplitDataset split;
    SocialGraph graph;
    RegionMap regions;
};

/// Filtering, sequencing, leave-one-out split, friendships and regions.
/// `friends` may be null when there is no social graph.
inline PreparedData prepare_data(const CheckinTable& raw, std::istream* friends, const ExperimentConfig& c) {
    PreparedData d;
    run_stage("ingest", [&] {
        d.table = filter_min_interactions(raw, c.min_interactions);
        d.split = leave_one_out_split(build_sequences(d.table, c.max_seq_len), c.reference_fraction, c.seed);
        d.graph = friends ? parse_friendships(*friends, d.table) : SocialGraph(d.table.num_users());
        return 0;
    });
    run_stage("regions", [&] {
        d.regions = build_region_map(d.table, c.k_regions, c.seed);
        return 0;
    });
    return d;
}

struct BucketReport {
    std::size_t dim = 0;
    std::size_t users = 0;
    double hr5 = 0.0, hr10 = 0.0, ndcg5 = 0.0, ndcg10 = 0.0;
    double mean_model_size_bytes = 0.0;
};

struct UserReport {
    UserId user{};
    std::size_t dim = 0;
    EvalResult result;
    std::size_t model_size_bytes = 0;
    std::optional<std::size_t> converged_at;
};

struct MetricsReport {
    double hr5 = 0.0, hr10 = 0.0, ndcg5 = 0.0, ndcg10 = 0.0;
    std::vector<BucketReport> buckets;
    std::vector<UserReport> users;
    double mean_model_size_bytes = 0.0;
    std::size_t total_bytes_exchanged = 0;
    std::size_t rounds = 0;
    std::size_t converged_devices = 0;
    double mean_epochs_to_convergence = 0.0;  // non-converged devices count as `rounds`
};

struct ExperimentResult {
    MetricsReport report;
    std::vector<RoundLog> logs;
    std::vector<ServerPackage> packages;
    ReferenceSets refs;
    std::size_t server_calls = 0;
};

inline MetricsReport aggregate(std::vector<UserReport> users, const std::vector<RoundLog>& logs) {
    MetricsReport r;
    r.users = std::move(users);
    r.rounds = logs.size();
    for (const auto& l : logs) r.total_bytes_exchanged += l.bytes_total;
    std::map<std::size_t, BucketReport> buckets;
    double epochs = 0.0;
    for (const auto& u : r.users) {
        r.hr5 += u.result.hr5;
        r.hr10 += u.result.hr10;
        r.ndcg5 += u.result.ndcg5;
        r.ndcg10 += u.result.ndcg10;
        r.mean_model_size_bytes += static_cast<double>(u.model_size_bytes);
        auto& b = buckets[u.dim];
        b.dim = u.dim;
        ++b.users;
        b.hr5 += u.result.hr5;
        b.hr10 += u.result.hr10;
        b.ndcg5 += u.result.ndcg5;
        b.ndcg10 += u.result.ndcg10;
        b.mean_model_size_bytes += static_cast<double>(u.model_size_bytes);
        if (u.converged_at) ++r.converged_devices;
        epochs += static_cast<double>(u.converged_at.value_or(r.rounds));
    }
    const double n = static_cast<double>(std::max<std::size_t>(1, r.users.size()));
    r.hr5 /= n;
    r.hr10 /= n;
    r.ndcg5 /= n;
    r.ndcg10 /= n;
    r.mean_model_size_bytes /= n;
    r.mean_epochs_to_convergence = epochs / n;
    for (auto& [d, b] : buckets) {
        const double m = static_cast<double>(b.users);
        b.hr5 /= m;
        b.hr10 /= m;
        b.ndcg5 /= m;
        b.ndcg10 /= m;
        b.mean_model_size_bytes /= m;
        r.buckets.push_back(b);
    }
    return r;
}

inline TrainingParams training_params(const ExperimentConfig& c) {
    TrainingParams p;
    p.gamma = c.gamma;
    p.mu = c.mu;
    p.tau = c.tau;
    p.alpha = c.alpha;
    p.beta = c.beta;
    p.lr = c.lr;
    p.dropout = c.dropout;
    p.batch_size = c.batch_size;
    p.patience = c.patience;
    p.sampling = c.sampling;
    p.similarity_probe = c.similarity_probe;
    p.candidates = c.candidates;
    return p;
}

inline ServerParams server_params(const ExperimentConfig& c) {
    ServerParams p;
    p.h = c.h;
    p.refgen = c.refgen;
    p.refgen_params.per_region = c.v_r;
    p.refgen_params.semantic = c.z;
    p.refgen_params.length = c.ref_len;
    p.refgen_params.max_hop_km = c.max_hop_km;
    p.seed = c.seed;
    return p;
}

/// Server phase, rounds and evaluation over prepared data. Devices talk over
/// `network` when given, otherwise over a fresh in-memory bus.
inline ExperimentResult run_pipeline(const PreparedData& data, const ExperimentConfig& c,
                                     Network* network = nullptr) {
    c.validate();
    ExperimentResult res;
    const auto& users = data.split.users;
    if (users.empty()) throw StageError("server", "no evaluation users");

    Server server(server_params(c));
    res.packages = run_stage("server", [&] {
        // Devices upload only their summaries.
        std::vector<UserSummary> summaries;
        for (const auto& u : users) summaries.push_back(summarize_user(u.train, data.regions, data.table.num_categories()));
        return server.server_phase(std::move(summaries), data.split.reference_pool, data.graph, data.regions,
                                   data.table);
    });
    res.refs = server.state().refs;

    const auto dims = assign_dimensions(users.size(), c.dims, c.seed);
    const PoiDirectory dir{&data.regions, data.table.pois, data.table.num_categories()};
    std::vector<Device<float>> devices;
    devices.reserve(users.size());
    run_stage("rounds", [&] {
        for (std::size_t i = 0; i < users.size(); ++i) {
            const auto u = index(users[i].user);
            devices.emplace_back(users[i], res.packages[i], dims[i], dir, training_params(c),
                                 Device<float>::Seeds{derive_seed(c.seed, stream::model_init, u),
                                                      derive_seed(c.seed, stream::training, u),
                                                      derive_seed(c.seed, stream::sampling, u)});
        }
        InMemoryNetwork own(data.regions, data.table.num_categories());
        Network& net = network ? *network : own;
        res.logs = run_until_converged(devices, net, c.max_epochs, c.gamma > 0.0);
        return 0;
    });
    res.server_calls = server.calls();

    std::vector<UserReport> reports;
    run_stage("evaluation", [&] {
        for (std::size_t i = 0; i < devices.size(); ++i) {
            const auto& d = devices[i];
            reports.push_back(UserReport{d.user(), d.dim(), d.evaluate_test(), model_size_bytes(d.model()),
                                         d.epochs_to_convergence()});
        }
        return 0;
    });
    res.report = aggregate(std::move(reports), res.logs);
    return res;
}

struct ExperimentRun {
    PreparedData data;
    ExperimentResult result;
};

/// The whole pipeline from the configured files.
inline ExperimentRun run_experiment(const ExperimentConfig& c) {
    if (c.checkins.empty()) throw StageError("ingest", "no check-in file configured");
    auto raw = run_stage("ingest", [&] { return parse_checkins(c.checkins); });
    std::ifstream friends;
    if (!c.friends.empty()) {
        friends.open(c.friends);
        if (!friends) throw StageError("ingest", "cannot open friendship file " + c.friends);
    }
    ExperimentRun run;
    run.data = prepare_data(raw, c.friends.empty() ? nullptr : &friends, c);
    run.result = run_pipeline(run.data, c);
    return run;
}

// ---------------------------------------------------------------------------
// Output files

inline nlohmann::ordered_json config_json(const ExperimentConfig& c) {
    return {{"seed", c.seed},
            {"dims", format_dims(c.dims)},
            {"alpha", c.alpha},
            {"beta", c.beta},
            {"gamma", c.gamma},
            {"mu", c.mu},
            {"tau", c.tau},
            {"h", c.h},
            {"lr", c.lr},
            {"dropout", c.dropout},
            {"batch_size", c.batch_size},
            {"max_epochs", c.max_epochs},
            {"patience", c.patience},
            {"k_regions", c.k_regions},
            {"v_r", c.v_r},
            {"z", c.z},
            {"ref_len", c.ref_len},
            {"max_hop_km", c.max_hop_km},
            {"refgen", to_string(c.refgen)},
            {"sampling", to_string(c.sampling)},
            {"similarity_probe", c.similarity_probe},
            {"min_interactions", c.min_interactions},
            {"max_seq_len", c.max_seq_len},
            {"reference_fraction", c.reference_fraction},
            {"candidates", c.candidates}};
}

inline nlohmann::ordered_json report_json(const ExperimentConfig& c, const MetricsReport& r,
                                          const CheckinTable& table) {
    nlohmann::ordered_json j;
    j["config"] = config_json(c);
    j["metrics"] = {{"hr@5", r.hr5}, {"hr@10", r.hr10}, {"ndcg@5", r.ndcg5}, {"ndcg@10", r.ndcg10}};
    auto buckets = nlohmann::ordered_json::array();
    for (const auto& b : r.buckets) {
        buckets.push_back({{"dim", b.dim},
                           {"users", b.users},
                           {"hr@5", b.hr5},
                           {"hr@10", b.hr10},
                           {"ndcg@5", b.ndcg5},
                           {"ndcg@10", b.ndcg10},
                           {"mean_model_size_bytes", b.mean_model_size_bytes}});
    }
    j["buckets"] = buckets;
    j["mean_model_size_bytes"] = r.mean_model_size_bytes;
    j["total_bytes_exchanged"] = r.total_bytes_exchanged;
    j["rounds"] = r.rounds;
    j["converged_devices"] = r.converged_devices;
    j["mean_epochs_to_convergence"] = r.mean_epochs_to_convergence;
    auto users = nlohmann::ordered_json::array();
    for (const auto& u : r.users) {
        nlohmann::ordered_json ju{{"user", table.users[index(u.user)]}, {"dim", u.dim}};
        ju["rank"] = u.result.rank ? nlohmann::ordered_json(*u.result.rank) : nlohmann::ordered_json(nullptr);
        ju["hr@10"] = u.result.hr10;
        ju["ndcg@10"] = u.result.ndcg10;
        ju["epochs"] = u.converged_at ? nlohmann::ordered_json(*u.converged_at) : nlohmann::ordered_json(nullptr);
        users.push_back(std::move(ju));
    }
    j["users"] = users;
    return j;
}

inline void write_rounds(std::ostream& out, const std::vector<RoundLog>& logs, const CheckinTable& table) {
    for (const auto& log : logs) {
        for (const auto& r : log.records) {
            nlohmann::ordered_json j{{"round", r.round},      {"user", table.users[index(r.user)]},
                                     {"l_loc", r.loss.l_loc}, {"l_geo", r.loss.l_geo},
                                     {"l_cat", r.loss.l_cat}, {"l_mi", r.loss.l_mi},
                                     {"combined", r.loss.combined}, {"bytes_in", r.bytes_in},
                                     {"resampled", r.resampled}};
            out << j.dump() << '\n';
        }
    }
}

inline nlohmann::ordered_json neighbors_json(const std::vector<ServerPackage>& packages, const CheckinTable& table) {
    auto names = [&](const std::vector<UserId>& v) {
        auto a = nlohmann::ordered_json::array();
        for (auto u : v) a.push_back(table.users[index(u)]);
        return a;
    };
    auto arr = nlohmann::ordered_json::array();
    for (const auto& p : packages) {
        arr.push_back({{"user", table.users[index(p.user)]},
                       {"current_region", index(p.current_region)},
                       {"geo", names(p.neighbors.geo_full)},
                       {"sem", names(p.neighbors.sem_full)}});
    }
    return arr;
}

inline std::string format_table(const MetricsReport& r) {
    std::ostringstream out;
    out << std::fixed << std::setprecision(4);
    out << "bucket     users    HR@5    HR@10   NDCG@5  NDCG@10  model bytes\n";
    auto row = [&](const std::string& name, std::size_t users, double a, double b, double c, double d, double bytes) {
        out << std::left << std::setw(10) << name << std::right << std::setw(6) << users << std::setw(8) << a
            << std::setw(9) << b << std::setw(9) << c << std::setw(9) << d << std::setw(13) << std::setprecision(0)
            << bytes << std::setprecision(4) << '\n';
    };
    for (const auto& b : r.buckets) {
        row("d=" + std::to_string(b.dim), b.users, b.hr5, b.hr10, b.ndcg5, b.ndcg10, b.mean_model_size_bytes);
    }
    row("all", r.users.size(), r.hr5, r.hr10, r.ndcg5, r.ndcg10, r.mean_model_size_bytes);
    out << "rounds " << r.rounds << ", converged devices " << r.converged_devices << ", bytes exchanged "
        << r.total_bytes_exchanged << '\n';
    return out.str();
}

inline void write_outputs(const std::filesystem::path& dir, const ExperimentConfig& c, const ExperimentResult& res,
                          const CheckinTable& table) {
    run_stage("report", [&] {
        std::filesystem::create_directories(dir);
        {
            std::ofstream out(dir / "report.json");
            out << report_json(c, res.report, table).dump(2) << '\n';
        }
        {
            std::ofstream out(dir / "rounds.ndjson");
            write_rounds(out, res.logs, table);
        }
        {
            std::ofstream out(dir / "neighbors.json");
            out << neighbors_json(res.packages, table).dump(2) << '\n';
        }
        {
            std::ofstream out(dir / "report.txt");
            out << format_table(res.report);
        }
        return 0;
    });
}

}  // namespace mac
