// hybsim command-line front end. Talks to the simulator only through the C API.

#include <chrono>
#include <cstdio>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "hybsim/hybsim.h"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;

struct ScenarioHandle {
    hybsim_scenario* p = nullptr;
    ~ScenarioHandle() { hybsim_scenario_free(p); }
};

struct ResultsHandle {
    hybsim_results* p = nullptr;
    ~ResultsHandle() { hybsim_results_free(p); }
};

int report(hybsim_status st) {
    std::fprintf(stderr, "hybsim: %s\n", hybsim_last_error());
    return st == HYBSIM_ERR_CONFIG || st == HYBSIM_ERR_ARGUMENT ? kExitConfig : kExitRuntime;
}

// Loads the file and applies --mode / --set overrides in order.
int load(const std::string& file, const std::string& mode, const std::vector<std::string>& sets,
         ScenarioHandle& out) {
    if (hybsim_status st = hybsim_scenario_load(file.c_str(), &out.p); st != HYBSIM_OK) {
        std::fprintf(stderr, "%s\n", hybsim_last_error());
        return kExitConfig;
    }
    std::vector<std::pair<std::string, std::string>> overrides;
    if (!mode.empty()) overrides.emplace_back("mode", mode);
    for (const auto& kv : sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) {
            std::fprintf(stderr, "hybsim: --set expects key=value, got '%s'\n", kv.c_str());
            return kExitConfig;
        }
        overrides.emplace_back(kv.substr(0, eq), kv.substr(eq + 1));
    }
    for (const auto& [k, v] : overrides) {
        if (hybsim_scenario_set(out.p, k.c_str(), v.c_str()) != HYBSIM_OK) {
            std::fprintf(stderr, "hybsim: --set %s: %s\n", k.c_str(), hybsim_last_error());
            return kExitConfig;
        }
    }
    return kExitOk;
}

std::string format_value(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

std::string series_file(const std::string& out, const std::string& series, double value) {
    const auto slash = out.find_last_of('/');
    const auto dot = out.find_last_of('.');
    const bool has_ext = dot != std::string::npos && (slash == std::string::npos || dot > slash);
    const std::string stem = has_ext ? out.substr(0, dot) : out;
    const std::string ext = has_ext ? out.substr(dot) : "";
    return stem + "-" + series + "-" + format_value(value) + ext;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Hybrid Access Network simulator"};
    app.require_subcommand(1);
    app.set_version_flag("--version", hybsim_version());

    std::string file;
    std::string mode;
    std::vector<std::string> sets;

    auto* run = app.add_subcommand("run", "Run a scenario and emit CSV metrics");
    std::uint64_t seed = 0;
    std::string out, trace, conn_log;
    unsigned parallel = 1;
    run->add_option("scenario", file, "Scenario file")->required();
    auto* seed_opt = run->add_option("--seed", seed, "Base seed (overrides [sweep] seed)");
    run->add_option("--out", out, "CSV output path (stdout if omitted)");
    run->add_option("--trace", trace, "Write the packet trace to this file");
    run->add_option("--conn-log", conn_log, "Write connection events to this file");
    run->add_option("--mode", mode, "Override the access mode")
        ->check(CLI::IsMember({"implicit", "explicit", "gre", "single_path", "round_robin_naive"}));
    run->add_option("--parallel", parallel, "Runs executed concurrently")->check(CLI::Range(1u, 1024u));
    run->add_option("--set", sets, "Override a parameter, key=value (repeatable)");

    auto* validate = app.add_subcommand("validate", "Check a scenario file");
    validate->add_option("scenario", file, "Scenario file")->required();
    validate->add_option("--set", sets, "Override a parameter, key=value (repeatable)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitConfig;
    }

    ScenarioHandle scenario;
    if (int rc = load(file, mode, sets, scenario); rc != kExitOk) return rc;

    if (validate->parsed()) {
        std::printf("%s: ok\n", file.c_str());
        return kExitOk;
    }

    hybsim_run_options opts;
    hybsim_run_options_init(&opts);
    opts.has_seed = seed_opt->count() > 0;
    opts.seed = seed;
    opts.parallel = parallel;
    opts.trace = !trace.empty();
    opts.conn_log = !conn_log.empty();

    const auto t0 = std::chrono::steady_clock::now();
    ResultsHandle results;
    if (hybsim_status st = hybsim_run(scenario.p, &opts, &results.p); st != HYBSIM_OK) return report(st);
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    std::size_t rows = 0;
    const std::size_t tables = hybsim_results_table_count(results.p);
    for (std::size_t t = 0; t < tables; ++t) {
        rows += hybsim_results_row_count(results.p, t);
        double value = 0;
        const char* series = hybsim_results_series(results.p, t, &value);
        if (out.empty()) {
            const char* text = nullptr;
            if (hybsim_status st = hybsim_results_csv(results.p, t, &text); st != HYBSIM_OK) return report(st);
            if (series) std::printf("# %s = %s\n", series, format_value(value).c_str());
            std::fputs(text, stdout);
            continue;
        }
        const std::string path = series ? series_file(out, series, value) : out;
        if (hybsim_status st = hybsim_results_write_csv(results.p, t, path.c_str()); st != HYBSIM_OK) {
            return report(st == HYBSIM_ERR_ARGUMENT ? HYBSIM_ERR_RUNTIME : st);
        }
        if (series) std::printf("# %s = %s -> %s\n", series, format_value(value).c_str(), path.c_str());
    }
    if (!trace.empty()) {
        if (hybsim_status st = hybsim_results_write_trace(results.p, trace.c_str(), 0); st != HYBSIM_OK) {
            return report(st);
        }
    }
    if (!conn_log.empty()) {
        if (hybsim_status st = hybsim_results_write_trace(results.p, conn_log.c_str(), 1); st != HYBSIM_OK) {
            return report(st);
        }
    }
    std::fprintf(stderr, "hybsim: %zu runs in %.1f s\n", rows, wall);
    return kExitOk;
}
