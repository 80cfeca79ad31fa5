#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "doctest.h"
#include "harness/runner.hpp"
#include "harness/scenario.hpp"
#include "harness/traffic.hpp"
#include "simcore/error.hpp"

using namespace hybsim;
using namespace hybsim::harness;

namespace {

std::string read_file(const std::filesystem::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

std::filesystem::path scenario_dir() { return HYBSIM_SCENARIO_DIR; }

ParseResult parse(const std::string& text) { return parse_scenario(text); }

ConfigError only_error(const std::string& text) {
    const auto r = parse(text);
    REQUIRE_FALSE(r.ok());
    REQUIRE(r.errors.size() == 1);
    return r.errors.front();
}

// A short, cheap scenario for runner tests.
Scenario tiny() {
    Scenario s;
    s.mode.mode = proxy::Mode::SinglePath;
    s.topology.dsl = {5, 5, 50, 0};
    s.traffic.duration_s = 1;
    s.traffic.bytes = 100'000;
    s.traffic.drain_s = 5;
    s.policy.overflow = false;
    return s;
}

} // namespace

TEST_CASE("empty file gives the documented defaults") {
    const auto r = parse("");
    REQUIRE(r.ok());
    const Scenario& s = *r.scenario;
    CHECK(s.mode.mode == proxy::Mode::MptcpImplicit);
    CHECK(s.policy.threshold == 0.80);
    CHECK(s.policy.hysteresis == 0.10);
    CHECK(s.policy.ewma_gain == 0.3);
    CHECK(s.policy.hold_down_s == 3);
    CHECK(s.mode.splice_buffer_kb == 256);
    CHECK(s.traffic.connections == 1);
    CHECK_FALSE(s.traffic.rate_mbps.has_value());
    CHECK(s.sweep.repetitions == 1);
    CHECK(s.topology.ingress_filter);
}

TEST_CASE("comments, blank lines and whitespace are ignored") {
    const auto r = parse("# header\n\n  [topology]  \n  dsl.bandwidth =  12.5   # trailing\n");
    REQUIRE(r.ok());
    CHECK(r.scenario->topology.dsl.bandwidth_mbps == 12.5);
}

TEST_CASE("negative bandwidth is a RangeError at its line") {
    const auto e = only_error("[topology]\n\ndsl.bandwidth = -3\n");
    CHECK(e.kind == ConfigErrorKind::RangeError);
    CHECK(e.line == 3);
    CHECK(e.format("x.cfg").rfind("x.cfg:3: RangeError: ", 0) == 0);
}

TEST_CASE("unknown keys and sections are reported with their lines") {
    auto e = only_error("[topology]\ndsl.bandwith = 3\n");
    CHECK(e.kind == ConfigErrorKind::UnknownKey);
    CHECK(e.line == 2);

    e = only_error("[topolgy]\n");
    CHECK(e.kind == ConfigErrorKind::UnknownKey);
    CHECK(e.line == 1);

    e = only_error("[traffic]\nthreshold = 0.5\n");
    CHECK(e.kind == ConfigErrorKind::UnknownKey);
}

TEST_CASE("syntax errors") {
    CHECK(only_error("dsl.bandwidth = 3\n").kind == ConfigErrorKind::SyntaxError);
    CHECK(only_error("[topology]\ndsl.bandwidth\n").kind == ConfigErrorKind::SyntaxError);
    CHECK(only_error("[topology]\ndsl.bandwidth = \n").kind == ConfigErrorKind::SyntaxError);
    CHECK(only_error("[topology]\ndsl.bandwidth = fast\n").kind == ConfigErrorKind::SyntaxError);
    CHECK(only_error("[topology\n").kind == ConfigErrorKind::SyntaxError);
}

TEST_CASE("range checks") {
    CHECK(only_error("[traffic]\nduration = 0\n").kind == ConfigErrorKind::RangeError);
    CHECK(only_error("[traffic]\nconnections = 0\n").kind == ConfigErrorKind::RangeError);
    CHECK(only_error("[traffic]\nrate = 0\n").kind == ConfigErrorKind::RangeError);
    CHECK(only_error("[topology]\nlte.loss = 1.5\n").kind == ConfigErrorKind::RangeError);
    CHECK(only_error("[policy]\nthreshold = 1.2\n").kind == ConfigErrorKind::RangeError);
    CHECK(only_error("[policy]\nthreshold = 0.3\nhysteresis = 0.4\n").kind == ConfigErrorKind::RangeError);
}

TEST_CASE("several errors are all reported") {
    const auto r = parse("[topology]\ndsl.bandwidth = -1\nfoo = 2\n[mode]\nmode = warp\n");
    REQUIRE(r.errors.size() == 3);
    CHECK(r.errors[0].line == 2);
    CHECK(r.errors[1].line == 3);
    CHECK(r.errors[2].line == 5);
}

TEST_CASE("sweep axis must name an existing numeric parameter") {
    CHECK(only_error("[sweep]\nparameter = dsl.bandwidht\nvalues = 1\n").kind == ConfigErrorKind::UnknownKey);
    CHECK(only_error("[sweep]\nparameter = mode\nvalues = 1\n").kind == ConfigErrorKind::UnknownKey);
    CHECK(only_error("[sweep]\nparameter = dsl.bandwidth\n").kind == ConfigErrorKind::SyntaxError);
    CHECK(only_error("[sweep]\nparameter = dsl.bandwidth\nvalues = 5, -5\n").kind == ConfigErrorKind::RangeError);
}

TEST_CASE("shipped fig5 scenario parses to the overflow sweep") {
    const auto r = parse(read_file(scenario_dir() / "fig5.cfg"));
    REQUIRE(r.ok());
    const Scenario& s = *r.scenario;
    CHECK(s.mode.mode == proxy::Mode::MptcpImplicit);
    CHECK(s.traffic.direction == Direction::Downlink);
    CHECK(s.traffic.connections == 1);
    REQUIRE(s.traffic.rate_mbps.has_value());
    CHECK(*s.traffic.rate_mbps == 30);
    CHECK(s.traffic.duration_s == 15);
    CHECK(s.topology.lte.bandwidth_mbps == 100);
    CHECK(s.policy.overflow);
    CHECK(s.policy.threshold == 0.80);
    CHECK(s.sweep.parameters == std::vector<std::string>{"dsl.bandwidth"});
    CHECK(s.sweep.values == std::vector<double>{5, 10, 15, 20, 25, 30});
    CHECK(s.sweep.series.empty());
}

TEST_CASE("shipped fig4 and naive-collapse scenarios parse") {
    auto r = parse(read_file(scenario_dir() / "fig4.cfg"));
    REQUIRE(r.ok());
    CHECK(r.scenario->sweep.parameters == std::vector<std::string>{"dsl.bandwidth", "lte.bandwidth"});
    CHECK(r.scenario->sweep.values == std::vector<double>{0.9, 1.8, 3.6, 7.2, 14.4, 28.8});
    CHECK(r.scenario->sweep.series == "lte.delay");
    CHECK(r.scenario->sweep.series_values == std::vector<double>{20, 40, 60, 80});
    CHECK(r.scenario->traffic.connections == 10);
    CHECK(r.scenario->mode.scheduler == transport::SchedulerPolicy::LowestRtt);

    r = parse(read_file(scenario_dir() / "naive-collapse.cfg"));
    REQUIRE(r.ok());
    CHECK(r.scenario->mode.mode == proxy::Mode::RoundRobinNaive);
    CHECK(r.scenario->topology.lte.delay_ms == 80);
}

TEST_CASE("set_parameter applies overrides") {
    Scenario s;
    CHECK_FALSE(set_parameter(s, "lte.delay", "55").has_value());
    CHECK(s.topology.lte.delay_ms == 55);
    CHECK_FALSE(set_parameter(s, "mode", "gre").has_value());
    CHECK(s.mode.mode == proxy::Mode::GreBond);
    CHECK(set_parameter(s, "nope", "1")->kind == ConfigErrorKind::UnknownKey);
}

TEST_CASE("token bucket releases at the configured rate") {
    TokenBucket b(1'000'000, 10'000); // 1 MB/s, 10 kB depth
    b.refill(sim::SimTime{});
    CHECK(b.available() == 10'000);
    b.consume(10'000);
    b.refill(sim::SimTime::from_ms(3));
    CHECK(b.available() == 3'000);
    b.refill(sim::SimTime::from_s(1));
    CHECK(b.available() == 10'000);
}

TEST_CASE("csv header and number formatting") {
    RunResult r;
    r.sweep_value = 2.5;
    r.seed = 42;
    r.dsl_mbps = 1.23456;
    r.lte_mbps = -0.0001;
    r.aggregate_mbps = 10;
    r.lte_share = 0.5;
    r.retx = 3;
    r.reorder_releases = 4;
    const std::string a = format_csv({r});
    CHECK(a == std::string(kCsvHeader) + "\n2.5,42,1.235,0.000,10.000,0.5000,3,4,nan\n");
    r.completion_s = 12.3456;
    CHECK(format_csv({r}).ends_with(",12.346\n"));
}

TEST_CASE("emit_csv: empty table is an error and creates no file") {
    const auto path = std::filesystem::temp_directory_path() / "hybsim_empty_table.csv";
    std::filesystem::remove(path);
    CHECK_THROWS_AS(emit_csv({}, path.string()), Error);
    CHECK_FALSE(std::filesystem::exists(path));
}

TEST_CASE("emit_csv: 30-row table gives a 31-line file") {
    std::vector<RunResult> rows(30);
    const auto path = std::filesystem::temp_directory_path() / "hybsim_rows.csv";
    emit_csv(rows, path.string());
    const std::string text = read_file(path);
    CHECK(std::count(text.begin(), text.end(), '\n') == 31);
    CHECK(text.find('\r') == std::string::npos);
    std::filesystem::remove(path);
}

TEST_CASE("runner: one row per sweep value and repetition, sorted, distinct seeds") {
    Scenario s = tiny();
    s.sweep.parameters = {"dsl.bandwidth"};
    s.sweep.values = {8, 2, 4};
    s.sweep.repetitions = 3;
    const auto tables = run_scenario(s);
    REQUIRE(tables.size() == 1);
    const auto& rows = tables.front().rows;
    REQUIRE(rows.size() == 9);
    std::set<std::uint64_t> seeds;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        CHECK(rows[i].sweep_value == std::vector<double>{2, 4, 8}[i / 3]);
        CHECK(rows[i].seed == repetition_seed(s.sweep.seed, static_cast<std::uint32_t>(i % 3)));
        seeds.insert(rows[i].seed);
        CHECK(rows[i].transfers_complete == 1);
    }
    CHECK(seeds.size() == 3);
    CHECK(*rows[0].completion_s > *rows[8].completion_s);
}

TEST_CASE("runner: same base seed gives identical CSV, serial or parallel") {
    Scenario s = tiny();
    s.topology.dsl.loss = 0.01;
    s.sweep.parameters = {"dsl.delay"};
    s.sweep.values = {5, 15};
    s.sweep.repetitions = 2;
    const auto a = format_csv(run_scenario(s).front().rows);
    RunnerOptions par;
    par.parallel = 3;
    const auto b = format_csv(run_scenario(s, par).front().rows);
    CHECK(a == b);
    RunnerOptions other;
    other.seed = 99;
    CHECK(format_csv(run_scenario(s, other).front().rows) != a);
}

TEST_CASE("runner: a series axis gives one table per value") {
    Scenario s = tiny();
    s.sweep.parameters = {"dsl.bandwidth"};
    s.sweep.values = {2, 4};
    s.sweep.series = "dsl.delay";
    s.sweep.series_values = {5, 25};
    const auto tables = run_scenario(s);
    REQUIRE(tables.size() == 2);
    CHECK(tables[0].series == "dsl.delay");
    CHECK(*tables[0].series_value == 5);
    CHECK(*tables[1].series_value == 25);
    CHECK(tables[0].rows.size() == 2);
    CHECK(tables[1].rows.front().completion_s.value() > tables[0].rows.front().completion_s.value());
}

TEST_CASE("runner: no sweep gives sweep_value 0 and the mode override applies") {
    Scenario s = tiny();
    RunnerOptions o;
    o.mode = proxy::Mode::MptcpImplicit;
    const auto tables = run_scenario(s, o);
    REQUIRE(tables.front().rows.size() == 1);
    CHECK(tables.front().rows.front().sweep_value == 0);
    CHECK(tables.front().rows.front().transfers_complete == 1);
}

TEST_CASE("trace log: run headers, summaries and packet lines") {
    Scenario s = tiny();
    s.traffic.bytes = 20'000;
    RunnerOptions o;
    o.run.trace = true;
    const auto tables = run_scenario(s, o);
    const std::string t = format_trace(tables);
    CHECK(t.rfind("# run sweep_value=0 seed=", 0) == 0);
    CHECK(t.find("\n# summary window dsl_mbps=") != std::string::npos);
    CHECK(t.find(" full dsl_mbps=") != std::string::npos);
    // Second line is a packet event: time_us kind link pkt_id src dst size verdict
    const auto l1 = t.find('\n') + 1;
    std::istringstream line(t.substr(l1, t.find('\n', l1) - l1));
    std::vector<std::string> fields;
    for (std::string f; line >> f;) fields.push_back(f);
    CHECK(fields.size() == 8);
}
