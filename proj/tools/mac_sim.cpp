#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "mac/mac.hpp"

namespace fs = std::filesystem;

namespace {

struct IngestArgs {
    std::string checkins, friends, out, schema = "default";
    std::size_t min_interactions = 10, max_seq_len = 200, regions = 0;
    double reference_fraction = 0.1;
    std::uint64_t seed = 42;
};

struct RunArgs {
    std::string config, out, refgen, sampling;
    std::optional<double> gamma;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> max_epochs;
};

struct SynthArgs {
    mac::SyntheticParams params;
    std::string out;
};

void ingest(const IngestArgs& a) {
    mac::IngestedData data;
    mac::run_stage("ingest", [&] {
        auto raw = mac::parse_checkins(a.checkins, mac::CheckinSchema::named(a.schema));
        data.table = mac::filter_min_interactions(raw, a.min_interactions);
        data.split = mac::leave_one_out_split(mac::build_sequences(data.table, a.max_seq_len), a.reference_fraction,
                                              a.seed);
        data.graph = a.friends.empty() ? mac::SocialGraph(data.table.num_users())
                                       : mac::parse_friendships(a.friends, data.table);
        return 0;
    });
    mac::run_stage("report", [&] {
        fs::create_directories(a.out);
        std::ofstream out(fs::path(a.out) / "dataset.ndjson");
        mac::write_ingested(out, data);
        return 0;
    });
    std::cout << "users " << data.table.num_users() << ", pois " << data.table.num_pois() << ", categories "
              << data.table.num_categories() << ", evaluation users " << data.split.users.size() << ", pool "
              << data.split.reference_pool.size() << ", excluded " << data.split.excluded.size() << '\n';
    if (a.regions == 0) return;
    auto regions = mac::run_stage("regions", [&] { return mac::build_region_map(data.table, a.regions, a.seed); });
    mac::run_stage("report", [&] {
        std::ofstream out(fs::path(a.out) / "regions.ndjson");
        for (const auto& r : regions.regions()) {
            nlohmann::json pois = nlohmann::json::array();
            for (auto p : r.pois) pois.push_back(mac::index(p));
            out << nlohmann::json{{"id", mac::index(r.id)},
                                  {"city", r.city},
                                  {"lon", r.centroid.lon},
                                  {"lat", r.centroid.lat},
                                  {"pois", pois}}
                       .dump()
                << '\n';
        }
        return 0;
    });
    std::cout << "regions " << regions.size() << '\n';
}

void run(const RunArgs& a) {
    auto config = mac::run_stage("config", [&] {
        auto c = mac::load_config(a.config);
        if (!a.refgen.empty()) c.refgen = mac::parse_refgen_mode(a.refgen);
        if (!a.sampling.empty()) c.sampling = mac::parse_sampling_mode(a.sampling);
        if (a.gamma) c.gamma = *a.gamma;
        if (a.seed) c.seed = *a.seed;
        if (a.max_epochs) c.max_epochs = *a.max_epochs;
        c.validate();
        return c;
    });
    auto run = mac::run_experiment(config);
    mac::write_outputs(a.out, config, run.result, run.data.table);
    std::cout << mac::format_table(run.result.report);
}

void synth(const SynthArgs& a) {
    auto data = mac::run_stage("synth", [&] { return mac::generate_synthetic(a.params); });
    mac::run_stage("report", [&] {
        fs::create_directories(a.out);
        std::ofstream c(fs::path(a.out) / "checkins.csv");
        mac::write_checkins_csv(c, data.table);
        std::ofstream f(fs::path(a.out) / "friends.csv");
        mac::write_friends_csv(f, data);
        return 0;
    });
    std::cout << "wrote " << data.table.rows.size() << " check-ins and " << data.friendships.size()
              << " friendships to " << a.out << '\n';
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Decentralized collaborative next-POI recommendation simulator"};
    app.require_subcommand(1);

    IngestArgs ia;
    auto* ingest_cmd = app.add_subcommand("ingest", "Parse, filter and split a check-in dataset");
    ingest_cmd->add_option("--checkins", ia.checkins, "Check-in CSV")->required()->check(CLI::ExistingFile);
    ingest_cmd->add_option("--friends", ia.friends, "Friendship CSV")->check(CLI::ExistingFile);
    ingest_cmd->add_option("--schema", ia.schema, "Column naming scheme");
    ingest_cmd->add_option("--min-interactions", ia.min_interactions, "Minimum check-ins per user and POI");
    ingest_cmd->add_option("--max-seq-len", ia.max_seq_len, "Keep each user's most recent check-ins");
    ingest_cmd->add_option("--reference-fraction", ia.reference_fraction, "Share of users in the reference pool");
    ingest_cmd->add_option("--seed", ia.seed, "Random seed");
    ingest_cmd->add_option("--regions", ia.regions, "Also cluster POIs into this many regions per city");
    ingest_cmd->add_option("--out", ia.out, "Output directory")->required();

    RunArgs ra;
    auto* run_cmd = app.add_subcommand("run", "Run an experiment from a config file");
    run_cmd->add_option("--config", ra.config, "Config file")->required()->check(CLI::ExistingFile);
    run_cmd->add_option("--out", ra.out, "Output directory")->required();
    run_cmd->add_option("--refgen", ra.refgen, "original | transformative | probabilistic");
    run_cmd->add_option("--sampling", ra.sampling, "performance | similarity | none");
    run_cmd->add_option("--gamma", ra.gamma, "Collaboration weight");
    run_cmd->add_option("--seed", ra.seed, "Override the config seed");
    run_cmd->add_option("--max-epochs", ra.max_epochs, "Override the epoch limit");

    SynthArgs sa;
    auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic check-in dataset");
    synth_cmd->add_option("--users", sa.params.users, "Number of users");
    synth_cmd->add_option("--regions", sa.params.regions, "Number of regions");
    synth_cmd->add_option("--groups", sa.params.groups, "POI groups (categories) per region");
    synth_cmd->add_option("--pois-per-group", sa.params.pois_per_group, "POIs per group");
    synth_cmd->add_option("--noise", sa.params.noise_fraction, "Share of random-walk users");
    synth_cmd->add_option("--seed", sa.params.seed, "Random seed");
    synth_cmd->add_option("--out", sa.out, "Output directory")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*ingest_cmd) ingest(ia);
        if (*run_cmd) run(ra);
        if (*synth_cmd) synth(sa);
    } catch (const mac::StageError& e) {
        std::cerr << "mac-sim: stage " << e.stage() << " failed: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "mac-sim: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
