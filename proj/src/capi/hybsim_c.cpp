#include "hybsim/hybsim.h"

#include <fstream>
#include <limits>
#include <new>
#include <sstream>
#include <string>

#include "harness/runner.hpp"
#include "harness/scenario.hpp"
#include "simcore/error.hpp"

using namespace hybsim;

struct hybsim_scenario {
    harness::Scenario s;
};

struct hybsim_results {
    std::vector<harness::MetricsTable> tables;
    std::vector<std::string> csv;
};

namespace {

thread_local std::string last_error;

hybsim_status fail(hybsim_status st, std::string msg) {
    last_error = std::move(msg);
    return st;
}

hybsim_status status_of(ErrorCode c) {
    switch (c) {
    case ErrorCode::Config: return HYBSIM_ERR_CONFIG;
    case ErrorCode::Io: return HYBSIM_ERR_IO;
    case ErrorCode::InvalidArgument: return HYBSIM_ERR_ARGUMENT;
    default: return HYBSIM_ERR_RUNTIME;
    }
}

template <class F>
hybsim_status guarded(F&& f) {
    try {
        last_error.clear();
        return f();
    } catch (const Error& e) {
        return fail(status_of(e.code()), e.what());
    } catch (const std::bad_alloc&) {
        return fail(HYBSIM_ERR_RUNTIME, "out of memory");
    } catch (const std::exception& e) {
        return fail(HYBSIM_ERR_RUNTIME, e.what());
    }
}

hybsim_status parse(std::string_view text, std::string_view source, hybsim_scenario** out) {
    harness::ParseResult pr = harness::parse_scenario(text);
    if (!pr.ok()) {
        std::string msg;
        for (const auto& e : pr.errors) {
            if (!msg.empty()) msg += '\n';
            msg += e.format(source);
        }
        return fail(HYBSIM_ERR_CONFIG, msg);
    }
    *out = new hybsim_scenario{std::move(*pr.scenario)};
    return HYBSIM_OK;
}

} // namespace

extern "C" {

const char* hybsim_version(void) { return "0.1.0"; }

const char* hybsim_last_error(void) { return last_error.c_str(); }

void hybsim_run_options_init(hybsim_run_options* opts) {
    if (opts) *opts = hybsim_run_options{0, 0, 1, 0, 0};
}

hybsim_status hybsim_scenario_parse(const char* text, size_t len, const char* source, hybsim_scenario** out) {
    if (!text || !out) return fail(HYBSIM_ERR_ARGUMENT, "null argument");
    return guarded([&] { return parse({text, len}, source ? source : "", out); });
}

hybsim_status hybsim_scenario_load(const char* path, hybsim_scenario** out) {
    if (!path || !out) return fail(HYBSIM_ERR_ARGUMENT, "null argument");
    return guarded([&] {
        std::ifstream f(path, std::ios::binary);
        if (!f) return fail(HYBSIM_ERR_IO, std::string("cannot read ") + path);
        std::ostringstream ss;
        ss << f.rdbuf();
        return parse(ss.str(), path, out);
    });
}

hybsim_status hybsim_scenario_set(hybsim_scenario* s, const char* key, const char* value) {
    if (!s || !key || !value) return fail(HYBSIM_ERR_ARGUMENT, "null argument");
    return guarded([&] {
        harness::Scenario copy = s->s;
        if (auto e = harness::set_parameter(copy, key, value)) return fail(HYBSIM_ERR_CONFIG, e->format());
        if (auto errs = harness::validate(copy); !errs.empty()) {
            return fail(HYBSIM_ERR_CONFIG, errs.front().format());
        }
        s->s = std::move(copy);
        return HYBSIM_OK;
    });
}

void hybsim_scenario_free(hybsim_scenario* s) { delete s; }

hybsim_status hybsim_run(const hybsim_scenario* s, const hybsim_run_options* opts, hybsim_results** out) {
    if (!s || !out) return fail(HYBSIM_ERR_ARGUMENT, "null argument");
    return guarded([&] {
        harness::RunnerOptions ro;
        if (opts) {
            if (opts->has_seed) ro.seed = opts->seed;
            ro.parallel = opts->parallel == 0 ? 1 : opts->parallel;
            ro.run.trace = opts->trace != 0;
            ro.run.conn_log = opts->conn_log != 0;
        }
        auto* res = new hybsim_results{harness::run_scenario(s->s, ro), {}};
        for (const auto& t : res->tables) res->csv.push_back(harness::format_csv(t.rows));
        *out = res;
        return HYBSIM_OK;
    });
}

size_t hybsim_results_table_count(const hybsim_results* r) { return r ? r->tables.size() : 0; }

const char* hybsim_results_series(const hybsim_results* r, size_t table, double* value) {
    if (!r || table >= r->tables.size() || !r->tables[table].series_value) return nullptr;
    if (value) *value = *r->tables[table].series_value;
    return r->tables[table].series.c_str();
}

size_t hybsim_results_row_count(const hybsim_results* r, size_t table) {
    if (!r || table >= r->tables.size()) return 0;
    return r->tables[table].rows.size();
}

hybsim_status hybsim_results_row(const hybsim_results* r, size_t table, size_t row, hybsim_row* out) {
    if (!r || !out) return fail(HYBSIM_ERR_ARGUMENT, "null argument");
    if (table >= r->tables.size() || row >= r->tables[table].rows.size()) {
        return fail(HYBSIM_ERR_ARGUMENT, "row index out of range");
    }
    const harness::RunResult& x = r->tables[table].rows[row];
    *out = hybsim_row{x.sweep_value,
                      x.seed,
                      x.dsl_mbps,
                      x.lte_mbps,
                      x.aggregate_mbps,
                      x.lte_share,
                      x.retx,
                      x.reorder_releases,
                      x.completion_s.value_or(std::numeric_limits<double>::quiet_NaN()),
                      x.dsl_mbps_full,
                      x.lte_mbps_full,
                      x.aggregate_mbps_full,
                      x.lte_bytes,
                      x.filter_drops,
                      x.corrupt ? 1 : 0};
    return HYBSIM_OK;
}

hybsim_status hybsim_results_csv(const hybsim_results* r, size_t table, const char** text) {
    if (!r || !text) return fail(HYBSIM_ERR_ARGUMENT, "null argument");
    if (table >= r->tables.size()) return fail(HYBSIM_ERR_ARGUMENT, "table index out of range");
    if (r->tables[table].rows.empty()) return fail(HYBSIM_ERR_ARGUMENT, "empty metrics table");
    *text = r->csv[table].c_str();
    return HYBSIM_OK;
}

hybsim_status hybsim_results_write_csv(const hybsim_results* r, size_t table, const char* path) {
    if (!r || !path) return fail(HYBSIM_ERR_ARGUMENT, "null argument");
    if (table >= r->tables.size()) return fail(HYBSIM_ERR_ARGUMENT, "table index out of range");
    return guarded([&] {
        harness::emit_csv(r->tables[table].rows, path);
        return HYBSIM_OK;
    });
}

hybsim_status hybsim_results_write_trace(const hybsim_results* r, const char* path, int conn_log) {
    if (!r || !path) return fail(HYBSIM_ERR_ARGUMENT, "null argument");
    return guarded([&] {
        const std::string text = harness::format_trace(r->tables, conn_log != 0);
        std::ofstream f(path, std::ios::binary | std::ios::trunc);
        if (!f) return fail(HYBSIM_ERR_IO, std::string("cannot open ") + path + " for writing");
        f.write(text.data(), static_cast<std::streamsize>(text.size()));
        if (!f) return fail(HYBSIM_ERR_IO, std::string("failed writing ") + path);
        return HYBSIM_OK;
    });
}

void hybsim_results_free(hybsim_results* r) { delete r; }

} // extern "C"
