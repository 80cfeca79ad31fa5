#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "proxy/mode.hpp"
#include "simcore/address.hpp"
#include "transport/scheduler.hpp"

namespace hybsim::harness {

struct LinkParams {
    double bandwidth_mbps = 10;
    double delay_ms = 10;
    std::uint32_t queue = 100;
    double loss = 0;
};

enum class Direction { Downlink, Uplink };

struct Scenario {
    struct Topology {
        LinkParams dsl{20, 20, 100, 0};
        LinkParams lte{20, 40, 100, 0};
        LinkParams internet{1000, 1, 1000, 0};
        LinkParams lan{10000, 0, 10000, 0};
        bool ingress_filter = true;
        std::uint32_t mtu = 1500;
    } topology;

    struct ModeSettings {
        proxy::Mode mode = proxy::Mode::MptcpImplicit;
        std::optional<transport::SchedulerPolicy> scheduler;
        double gap_timeout_ms = 20;
        std::uint32_t reorder_capacity = 1024;
        bool gre_adaptive = true;
        std::uint32_t mss = 1400;
        std::uint32_t receive_buffer_kb = 2048;
        std::uint32_t splice_buffer_kb = 256;
    } mode;

    struct Traffic {
        Direction direction = Direction::Downlink;
        std::uint32_t connections = 1;
        std::optional<double> rate_mbps; // shared by all connections of a run
        double start_s = 0;
        double duration_s = 15;
        std::uint64_t bytes = 0; // per connection; 0 sends for the whole duration
        std::uint16_t port = 5001;
        double drain_s = 10; // extra time allowed for transfers to finish
    } traffic;

    struct Policy {
        bool overflow = true;
        double threshold = 0.80;
        double hysteresis = 0.10;
        double hold_down_s = 3;
        double ewma_gain = 0.3;
        double monitor_period_ms = 100;
        std::vector<std::uint16_t> pin_ports;
        std::vector<sim::Prefix> pin_prefixes;
        std::vector<std::uint16_t> bypass_ports;
        std::vector<sim::Prefix> bypass_prefixes;
        std::vector<sim::Prefix> deny_prefixes;
    } policy;

    struct Sweep {
        std::vector<std::string> parameters; // all set to the same value
        std::vector<double> values;
        std::string series; // optional second axis; one table per value
        std::vector<double> series_values;
        std::uint32_t repetitions = 1;
        std::uint64_t seed = 1;
    } sweep;
};

enum class ConfigErrorKind { SyntaxError, UnknownKey, RangeError };

std::string_view to_string(ConfigErrorKind k);

struct ConfigError {
    ConfigErrorKind kind = ConfigErrorKind::SyntaxError;
    int line = 0; // 0: not from the file (command-line override)
    std::string message;

    std::string format(std::string_view source = {}) const;
};

struct ParseResult {
    std::optional<Scenario> scenario;
    std::vector<ConfigError> errors;

    bool ok() const { return scenario.has_value(); }
};

ParseResult parse_scenario(std::string_view text);

// Sets one parameter by its key name (for example "dsl.bandwidth").
std::optional<ConfigError> set_parameter(Scenario& s, std::string_view key, std::string_view value, int line = 0);
bool is_numeric_parameter(std::string_view key);
std::vector<std::string> parameter_names();

// Cross-field checks that do not belong to a single key.
std::vector<ConfigError> validate(const Scenario& s);

std::string format_number(double v);

} // namespace hybsim::harness
