#include "harness/runner.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <thread>

#include "simcore/error.hpp"
#include "simcore/rng.hpp"

namespace hybsim::harness {

namespace {

struct Job {
    std::size_t table = 0;
    double sweep_value = 0;
    std::uint32_t rep = 0;
    Scenario scenario;
    std::uint64_t seed = 0;
};

std::string fixed(double v, int digits) {
    if (!std::isfinite(v)) return "nan";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    // "-0.000" is a formatting artefact, not a measurement.
    if (std::string_view(buf).find_first_not_of("-0.") == std::string_view::npos) {
        std::snprintf(buf, sizeof buf, "%.*f", digits, 0.0);
    }
    return buf;
}

std::string point_label(const Job& j, const std::string& series, std::optional<double> series_value) {
    std::string label = "sweep value " + format_number(j.sweep_value) + ", repetition " + std::to_string(j.rep + 1);
    if (series_value) label += ", " + series + " = " + format_number(*series_value);
    return label;
}

} // namespace

std::uint64_t repetition_seed(std::uint64_t base, std::uint32_t rep) {
    return sim::derive_seed(base, static_cast<std::uint64_t>(rep) + 1);
}

void apply_sweep_value(Scenario& s, const std::vector<std::string>& parameters, double value) {
    for (const auto& p : parameters) {
        if (auto err = set_parameter(s, p, format_number(value))) {
            throw Error(ErrorCode::Config, err->format());
        }
    }
}

std::vector<MetricsTable> run_scenario(const Scenario& base, const RunnerOptions& opts) {
    Scenario s = base;
    if (opts.mode) s.mode.mode = *opts.mode;
    const std::uint64_t seed = opts.seed.value_or(s.sweep.seed);

    std::vector<MetricsTable> tables;
    if (s.sweep.series.empty()) {
        tables.emplace_back();
    } else {
        for (double v : s.sweep.series_values) tables.push_back({s.sweep.series, v, {}});
    }

    std::vector<double> values = s.sweep.values;
    if (s.sweep.parameters.empty()) values = {0};
    std::stable_sort(values.begin(), values.end());

    std::vector<Job> jobs;
    for (std::size_t t = 0; t < tables.size(); ++t) {
        Scenario ts = s;
        if (tables[t].series_value) apply_sweep_value(ts, {tables[t].series}, *tables[t].series_value);
        for (double v : values) {
            Scenario ps = ts;
            if (!s.sweep.parameters.empty()) apply_sweep_value(ps, s.sweep.parameters, v);
            if (auto errs = validate(ps); !errs.empty()) throw Error(ErrorCode::Config, errs.front().format());
            for (std::uint32_t rep = 0; rep < s.sweep.repetitions; ++rep) {
                jobs.push_back({t, v, rep, ps, repetition_seed(seed, rep)});
            }
        }
    }

    std::vector<RunResult> results(jobs.size());
    std::vector<std::exception_ptr> failures(jobs.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < jobs.size(); i = next++) {
            try {
                results[i] = run_once(jobs[i].scenario, jobs[i].seed, opts.run);
                results[i].sweep_value = jobs[i].sweep_value;
                results[i].seed = jobs[i].seed;
            } catch (...) {
                failures[i] = std::current_exception();
            }
        }
    };
    const unsigned threads =
        std::max(1u, std::min<unsigned>(opts.parallel, static_cast<unsigned>(std::max<std::size_t>(jobs.size(), 1))));
    if (threads == 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (unsigned k = 0; k < threads; ++k) pool.emplace_back(worker);
    }

    for (std::size_t i = 0; i < jobs.size(); ++i) {
        if (!failures[i]) continue;
        const MetricsTable& t = tables[jobs[i].table];
        const std::string where = point_label(jobs[i], t.series, t.series_value);
        try {
            std::rethrow_exception(failures[i]);
        } catch (const Error& e) {
            throw Error(e.code(), where + ": " + e.what());
        } catch (const std::exception& e) {
            throw Error(ErrorCode::Runtime, where + ": " + e.what());
        }
    }
    for (std::size_t i = 0; i < jobs.size(); ++i) tables[jobs[i].table].rows.push_back(std::move(results[i]));
    return tables;
}

std::string format_csv(const std::vector<RunResult>& rows) {
    std::string out = kCsvHeader;
    out += '\n';
    for (const auto& r : rows) {
        out += format_number(r.sweep_value);
        out += ',' + std::to_string(r.seed);
        out += ',' + fixed(r.dsl_mbps, 3);
        out += ',' + fixed(r.lte_mbps, 3);
        out += ',' + fixed(r.aggregate_mbps, 3);
        out += ',' + fixed(r.lte_share, 4);
        out += ',' + std::to_string(r.retx);
        out += ',' + std::to_string(r.reorder_releases);
        out += ',' + (r.completion_s ? fixed(*r.completion_s, 3) : std::string("nan"));
        out += '\n';
    }
    return out;
}

void emit_csv(const std::vector<RunResult>& rows, const std::string& path) {
    if (rows.empty()) throw Error(ErrorCode::InvalidArgument, "empty metrics table; nothing written to " + path);
    const std::string text = format_csv(rows);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw Error(ErrorCode::Io, "cannot open " + path + " for writing");
    f.write(text.data(), static_cast<std::streamsize>(text.size()));
    f.close();
    if (!f) {
        std::error_code ec;
        std::filesystem::remove(path, ec);
        throw Error(ErrorCode::Io, "failed writing " + path);
    }
}

std::string format_trace(const std::vector<MetricsTable>& tables, bool conn_log) {
    std::string out;
    for (const auto& t : tables) {
        for (const auto& r : t.rows) {
            out += "# run sweep_value=" + format_number(r.sweep_value) + " seed=" + std::to_string(r.seed);
            if (t.series_value) out += " " + t.series + "=" + format_number(*t.series_value);
            out += '\n';
            out += conn_log ? r.conn_log : r.trace;
            out += "# summary window dsl_mbps=" + fixed(r.dsl_mbps, 3) + " lte_mbps=" + fixed(r.lte_mbps, 3) +
                   " aggregate_mbps=" + fixed(r.aggregate_mbps, 3) + " full dsl_mbps=" + fixed(r.dsl_mbps_full, 3) +
                   " lte_mbps=" + fixed(r.lte_mbps_full, 3) + " aggregate_mbps=" + fixed(r.aggregate_mbps_full, 3) +
                   " filter_drops=" + std::to_string(r.filter_drops) + "\n";
        }
    }
    return out;
}

} // namespace hybsim::harness
