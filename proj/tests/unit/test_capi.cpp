#include <cmath>
#include <cstring>
#include <filesystem>
#include <string>

#include "doctest.h"
#include "hybsim/hybsim.h"

namespace {

const char* kTiny =
    "[topology]\n"
    "dsl.bandwidth = 5\n"
    "dsl.delay = 5\n"
    "[mode]\n"
    "mode = single_path\n"
    "[traffic]\n"
    "duration = 1\n"
    "bytes = 50000\n"
    "[policy]\n"
    "overflow = off\n"
    "[sweep]\n"
    "parameter = dsl.bandwidth\n"
    "values = 2, 4\n"
    "repetitions = 2\n";

hybsim_scenario* parse(const char* text) {
    hybsim_scenario* s = nullptr;
    REQUIRE(hybsim_scenario_parse(text, std::strlen(text), "tiny.cfg", &s) == HYBSIM_OK);
    return s;
}

} // namespace

TEST_CASE("c api: parse errors carry source and line") {
    const char* bad = "[topology]\ndsl.bandwidth = -3\n";
    hybsim_scenario* s = nullptr;
    CHECK(hybsim_scenario_parse(bad, std::strlen(bad), "bad.cfg", &s) == HYBSIM_ERR_CONFIG);
    CHECK(s == nullptr);
    CHECK(std::string(hybsim_last_error()).rfind("bad.cfg:2: RangeError", 0) == 0);
}

TEST_CASE("c api: missing file is an io error") {
    hybsim_scenario* s = nullptr;
    CHECK(hybsim_scenario_load("/nonexistent/x.cfg", &s) == HYBSIM_ERR_IO);
}

TEST_CASE("c api: null arguments") {
    CHECK(hybsim_scenario_parse(nullptr, 0, nullptr, nullptr) == HYBSIM_ERR_ARGUMENT);
    CHECK(hybsim_run(nullptr, nullptr, nullptr) == HYBSIM_ERR_ARGUMENT);
    CHECK(hybsim_results_table_count(nullptr) == 0);
    hybsim_scenario_free(nullptr);
    hybsim_results_free(nullptr);
}

TEST_CASE("c api: overrides are validated") {
    hybsim_scenario* s = parse(kTiny);
    CHECK(hybsim_scenario_set(s, "mode", "gre") == HYBSIM_OK);
    CHECK(hybsim_scenario_set(s, "mode", "warp") == HYBSIM_ERR_CONFIG);
    CHECK(hybsim_scenario_set(s, "nope", "1") == HYBSIM_ERR_CONFIG);
    CHECK(hybsim_scenario_set(s, "hysteresis", "0.9") == HYBSIM_ERR_CONFIG);
    hybsim_scenario_free(s);
}

TEST_CASE("c api: run, read rows and write csv") {
    hybsim_scenario* s = parse(kTiny);
    hybsim_run_options o;
    hybsim_run_options_init(&o);
    hybsim_results* r = nullptr;
    REQUIRE(hybsim_run(s, &o, &r) == HYBSIM_OK);
    REQUIRE(hybsim_results_table_count(r) == 1);
    CHECK(hybsim_results_series(r, 0, nullptr) == nullptr);
    REQUIRE(hybsim_results_row_count(r, 0) == 4);

    hybsim_row row;
    REQUIRE(hybsim_results_row(r, 0, 3, &row) == HYBSIM_OK);
    CHECK(row.sweep_value == 4);
    CHECK(row.dsl_mbps_full > 0);
    CHECK_FALSE(std::isnan(row.completion_s));
    CHECK(hybsim_results_row(r, 0, 4, &row) == HYBSIM_ERR_ARGUMENT);

    const char* text = nullptr;
    REQUIRE(hybsim_results_csv(r, 0, &text) == HYBSIM_OK);
    CHECK(std::string(text).rfind("sweep_value,seed,dsl_mbps,", 0) == 0);

    const auto path = std::filesystem::temp_directory_path() / "hybsim_capi.csv";
    REQUIRE(hybsim_results_write_csv(r, 0, path.c_str()) == HYBSIM_OK);
    CHECK(std::filesystem::file_size(path) == std::strlen(text));
    std::filesystem::remove(path);
    CHECK(hybsim_results_write_csv(r, 0, "/nonexistent/dir/x.csv") == HYBSIM_ERR_IO);

    hybsim_results_free(r);
    hybsim_scenario_free(s);
}
