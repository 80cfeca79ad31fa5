#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "harness/scenario.hpp"
#include "harness/world.hpp"

namespace hybsim::harness {

struct RunnerOptions {
    std::optional<std::uint64_t> seed; // overrides the scenario's base seed
    std::optional<proxy::Mode> mode;   // overrides [mode] mode
    unsigned parallel = 1;
    RunOptions run;
};

// One CSV worth of rows. A scenario with a series axis yields one table per
// series value; otherwise there is a single table with no series.
struct MetricsTable {
    std::string series;
    std::optional<double> series_value;
    std::vector<RunResult> rows; // sorted by sweep value, then repetition
};

// Seed of repetition `rep` (0-based) under `base`.
std::uint64_t repetition_seed(std::uint64_t base, std::uint32_t rep);

// Applies a value to every swept parameter. Throws Error(Config) on failure.
void apply_sweep_value(Scenario& s, const std::vector<std::string>& parameters, double value);

std::vector<MetricsTable> run_scenario(const Scenario& s, const RunnerOptions& opts = {});

inline constexpr const char* kCsvHeader =
    "sweep_value,seed,dsl_mbps,lte_mbps,aggregate_mbps,lte_share,retx,reorder_releases,completion_s";

std::string format_csv(const std::vector<RunResult>& rows);
// Throws Error(InvalidArgument) for an empty table, Error(Io) if the file
// cannot be written. No file is created on error.
void emit_csv(const std::vector<RunResult>& rows, const std::string& path);

// Per-run packet traces (or connection logs) joined with "# run" headers and
// a "# summary" line per run holding the windowed and full-duration means.
std::string format_trace(const std::vector<MetricsTable>& tables, bool conn_log = false);

} // namespace hybsim::harness
