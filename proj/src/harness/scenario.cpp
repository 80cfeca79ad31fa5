#include "harness/scenario.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <map>

namespace hybsim::harness {

std::string_view to_string(ConfigErrorKind k) {
    switch (k) {
    case ConfigErrorKind::SyntaxError: return "SyntaxError";
    case ConfigErrorKind::UnknownKey: return "UnknownKey";
    case ConfigErrorKind::RangeError: return "RangeError";
    }
    return "?";
}

std::string ConfigError::format(std::string_view source) const {
    std::string out;
    if (!source.empty()) {
        out += source;
        out += ':';
    }
    if (line > 0) {
        out += std::to_string(line);
        out += ": ";
    } else if (!source.empty()) {
        out += ' ';
    }
    out += to_string(kind);
    out += ": ";
    out += message;
    return out;
}

std::string format_number(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

namespace {

std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string_view> split_list(std::string_view v) {
    std::vector<std::string_view> out;
    while (!v.empty()) {
        const auto comma = v.find(',');
        const auto item = trim(v.substr(0, comma));
        if (!item.empty()) out.push_back(item);
        if (comma == std::string_view::npos) break;
        v.remove_prefix(comma + 1);
    }
    return out;
}

ConfigError err(ConfigErrorKind k, int line, std::string msg) { return ConfigError{k, line, std::move(msg)}; }

std::optional<double> to_double(std::string_view v) {
    double out = 0;
    const auto* end = v.data() + v.size();
    auto [p, ec] = std::from_chars(v.data(), end, out);
    if (ec != std::errc{} || p != end || !std::isfinite(out)) return std::nullopt;
    return out;
}

struct Range {
    double lo;
    double hi;
    bool lo_open = false;
    bool integer = false;
};

std::optional<ConfigError> number(std::string_view key, std::string_view v, int line, Range r, double& out) {
    const auto d = to_double(v);
    if (!d) return err(ConfigErrorKind::SyntaxError, line, std::string(key) + ": '" + std::string(v) + "' is not a number");
    const bool below = r.lo_open ? *d <= r.lo : *d < r.lo;
    if (below || *d > r.hi || (r.integer && std::floor(*d) != *d)) {
        std::string bounds = std::string(r.lo_open ? "(" : "[") + format_number(r.lo) + ", " + format_number(r.hi) + "]";
        return err(ConfigErrorKind::RangeError, line,
                   std::string(key) + " = " + std::string(v) + " is outside " + bounds +
                       (r.integer ? " or not an integer" : ""));
    }
    out = *d;
    return std::nullopt;
}

template <class T>
std::optional<ConfigError> integer(std::string_view key, std::string_view v, int line, Range r, T& out) {
    r.integer = true;
    double d = 0;
    if (auto e = number(key, v, line, r, d)) return e;
    out = static_cast<T>(d);
    return std::nullopt;
}

std::optional<ConfigError> boolean(std::string_view key, std::string_view v, int line, bool& out) {
    if (v == "on" || v == "true" || v == "yes" || v == "1") {
        out = true;
    } else if (v == "off" || v == "false" || v == "no" || v == "0") {
        out = false;
    } else {
        return err(ConfigErrorKind::SyntaxError, line, std::string(key) + ": expected on/off, got '" + std::string(v) + "'");
    }
    return std::nullopt;
}

std::optional<ConfigError> ports(std::string_view key, std::string_view v, int line, std::vector<std::uint16_t>& out) {
    out.clear();
    for (auto item : split_list(v)) {
        std::uint16_t p = 0;
        if (auto e = integer(key, item, line, {1, 65535}, p)) return e;
        out.push_back(p);
    }
    return std::nullopt;
}

std::optional<ConfigError> prefixes(std::string_view key, std::string_view v, int line, std::vector<sim::Prefix>& out) {
    out.clear();
    for (auto item : split_list(v)) {
        auto p = sim::parse_prefix(item);
        if (!p) return err(ConfigErrorKind::SyntaxError, line, std::string(key) + ": '" + std::string(item) + "' is not a prefix");
        out.push_back(*p);
    }
    return std::nullopt;
}

using Setter = std::optional<ConfigError> (*)(Scenario&, std::string_view key, std::string_view value, int line);

struct KeyDef {
    std::string_view section;
    std::string_view name;
    bool numeric;
    Setter set;
};

template <LinkParams Scenario::Topology::*Link>
constexpr KeyDef link_key_bandwidth(std::string_view name) {
    return {"topology", name, true, [](Scenario& s, std::string_view k, std::string_view v, int l) {
                return number(k, v, l, {0, 1e6, true}, (s.topology.*Link).bandwidth_mbps);
            }};
}
template <LinkParams Scenario::Topology::*Link>
constexpr KeyDef link_key_delay(std::string_view name) {
    return {"topology", name, true, [](Scenario& s, std::string_view k, std::string_view v, int l) {
                return number(k, v, l, {0, 10000}, (s.topology.*Link).delay_ms);
            }};
}
template <LinkParams Scenario::Topology::*Link>
constexpr KeyDef link_key_queue(std::string_view name) {
    return {"topology", name, true, [](Scenario& s, std::string_view k, std::string_view v, int l) {
                return integer(k, v, l, {1, 1e6}, (s.topology.*Link).queue);
            }};
}
template <LinkParams Scenario::Topology::*Link>
constexpr KeyDef link_key_loss(std::string_view name) {
    return {"topology", name, true, [](Scenario& s, std::string_view k, std::string_view v, int l) {
                return number(k, v, l, {0, 1}, (s.topology.*Link).loss);
            }};
}

using T = Scenario::Topology;

const std::vector<KeyDef>& keys() {
    static const std::vector<KeyDef> table = {
        link_key_bandwidth<&T::dsl>("dsl.bandwidth"),
        link_key_delay<&T::dsl>("dsl.delay"),
        link_key_queue<&T::dsl>("dsl.queue"),
        link_key_loss<&T::dsl>("dsl.loss"),
        link_key_bandwidth<&T::lte>("lte.bandwidth"),
        link_key_delay<&T::lte>("lte.delay"),
        link_key_queue<&T::lte>("lte.queue"),
        link_key_loss<&T::lte>("lte.loss"),
        link_key_bandwidth<&T::internet>("internet.bandwidth"),
        link_key_delay<&T::internet>("internet.delay"),
        link_key_queue<&T::internet>("internet.queue"),
        link_key_loss<&T::internet>("internet.loss"),
        link_key_bandwidth<&T::lan>("lan.bandwidth"),
        link_key_delay<&T::lan>("lan.delay"),
        link_key_queue<&T::lan>("lan.queue"),
        {"topology", "ingress_filter", false,
         [](Scenario& s, std::string_view k, std::string_view v, int l) { return boolean(k, v, l, s.topology.ingress_filter); }},
        {"topology", "mtu", true,
         [](Scenario& s, std::string_view k, std::string_view v, int l) { return integer(k, v, l, {576, 9000}, s.topology.mtu); }},

        {"mode", "mode", false,
         [](Scenario& s, std::string_view k, std::string_view v, int l) -> std::optional<ConfigError> {
             auto m = proxy::parse_mode(v);
             if (!m) {
                 return err(ConfigErrorKind::RangeError, l,
                            std::string(k) + ": '" + std::string(v) +
                                "' is not one of implicit, explicit, gre, single_path, round_robin_naive");
             }
             s.mode.mode = *m;
             return std::nullopt;
         }},
        {"mode", "scheduler", false,
         [](Scenario& s, std::string_view k, std::string_view v, int l) -> std::optional<ConfigError> {
             if (v == "auto") {
                 s.mode.scheduler.reset();
                 return std::nullopt;
             }
             auto p = transport::parse_scheduler(v);
             if (!p) {
                 return err(ConfigErrorKind::RangeError, l,
                            std::string(k) + ": '" + std::string(v) +
                                "' is not one of auto, lowest_rtt, dsl_priority, round_robin");
             }
             s.mode.scheduler = *p;
             return std::nullopt;
         }},
        {"mode", "gre.gap_timeout", true,
         [](Scenario& s, std::string_view k, std::string_view v, int l) { return number(k, v, l, {0, 10000, true}, s.mode.gap_timeout_ms); }},
        {"mode", "gre.reorder_capacity", true,
         [](Scenario& s, std::string_view k, std::string_view v, int l) { return integer(k, v, l, {1, 1e6}, s.mode.reorder_capacity); }},
        {"mode", "gre.adaptive", false,
         [](Scenario& s, std::string_view k, std::string_view v, int l) { return boolean(k, v, l, s.mode.gre_adaptive); }},
        {"mode", "mss", true,
         [](Scenario& s, std::string_view k, std::string_view v, int l) { return integer(k, v, l, {500, 8960}, s.mode.mss); }},
        {"mode", "receive_buffer", true,
         [](Scenario& s, std::string_view k, std::string_view v, int l) { return integer(k, v, l, {16, 1 << 20}, s.mode.receive_buffer_kb); }},
        {"mode", "splice_buffer", true,
         [](Scenario& s, std::string_view k, std::string_view v, int l) { return integer(k, v, l, {16, 1 << 20}, s.mode.splice_buffer_kb); }},

        {"traffic", "direction", false,
         [](Scenario& s, std::string_view k, std::string_view v, int l) -> std::optional<ConfigError> {
             if (v == "downlink") {
                 s.traffic.direction = Direction::Downlink;
             } else if (v == "uplink") {
                 s.traffic.direction = Direction::Uplink;
             } else {
                 return err(ConfigErrorKind::RangeError, l, std::string(k) + ": expected downlink or uplink");
             }
             return std::nullopt;
         }},
        {"traffic", "connections", true,
         [](Scenario& s, std::string_view k, std::string_view v, int l) { return integer(k, v, l, {1, 10000}, s.traffic.connections); }},
        {"traffic", "rate", true,
         [](Scenario& s, std::string_view k, std::string_view v, int l) -> std::optional<ConfigError> {
             if (v == "none") {
                 s.traffic.rate_mbps.reset();
                 return std::nullopt;
             }
             double r = 0;
             if (auto e = number(k, v, l, {0, 1e6, true}, r)) return e;
             s.traffic.rate_mbps = r;
             return std::nullopt;
         }},
        {"traffic", "start", true,
         [](Scenario& s, std::string_view k, std::string_view v, int l) { return number(k, v, l, {0, 1e5}, s.traffic.start_s); }},
        {"traffic", "duration", true,
         [](Scenario& s, std::string_view k, std::string_view v, int l) { return number(k, v, l, {0, 1e5, true}, s.traffic.duration_s); }},
        {"traffic", "bytes", true,
         [](Scenario& s, std::string_view k, std::string_view v, int l) { return integer(k, v, l, {0, 1e13}, s.traffic.bytes); }},
        {"traffic", "port", true,
         [](Scenario& s, std::string_view k, std::string_view v, int l) { return integer(k, v, l, {1, 65535}, s.traffic.port); }},
        {"traffic", "drain", true,
         [](Scenario& s, std::string_view k, std::string_view v, int l) { return number(k, v, l, {0, 1e5}, s.traffic.drain_s); }},

        {"policy", "overflow", false,
         [](Scenario& s, std::string_view k, std::string_view v, int l) { return boolean(k, v, l, s.policy.overflow); }},
        {"policy", "threshold", true,
         [](Scenario& s, std::string_view k, std::string_view v, int l) { return number(k, v, l, {0, 1, true}, s.policy.threshold); }},
        {"policy", "hysteresis", true,
         [](Scenario& s, std::string_view k, std::string_view v, int l) { return number(k, v, l, {0, 1}, s.policy.hysteresis); }},
        {"policy", "hold_down", true,
         [](Scenario& s, std::string_view k, std::string_view v, int l) { return number(k, v, l, {0, 1e4}, s.policy.hold_down_s); }},
        {"policy", "ewma_gain", true,
         [](Scenario& s, std::string_view k, std::string_view v, int l) { return number(k, v, l, {0, 1, true}, s.policy.ewma_gain); }},
        {"policy", "monitor_period", true,
         [](Scenario& s, std::string_view k, std::string_view v, int l) { return number(k, v, l, {1, 1e5}, s.policy.monitor_period_ms); }},
        {"policy", "pin_ports", false,
         [](Scenario& s, std::string_view k, std::string_view v, int l) { return ports(k, v, l, s.policy.pin_ports); }},
        {"policy", "pin_prefixes", false,
         [](Scenario& s, std::string_view k, std::string_view v, int l) { return prefixes(k, v, l, s.policy.pin_prefixes); }},
        {"policy", "bypass_ports", false,
         [](Scenario& s, std::string_view k, std::string_view v, int l) { return ports(k, v, l, s.policy.bypass_ports); }},
        {"policy", "bypass_prefixes", false,
         [](Scenario& s, std::string_view k, std::string_view v, int l) { return prefixes(k, v, l, s.policy.bypass_prefixes); }},
        {"policy", "deny_prefixes", false,
         [](Scenario& s, std::string_view k, std::string_view v, int l) { return prefixes(k, v, l, s.policy.deny_prefixes); }},

        {"sweep", "parameter", false,
         [](Scenario& s, std::string_view, std::string_view v, int) -> std::optional<ConfigError> {
             s.sweep.parameters.clear();
             for (auto item : split_list(v)) s.sweep.parameters.emplace_back(item);
             return std::nullopt;
         }},
        {"sweep", "values", false,
         [](Scenario& s, std::string_view k, std::string_view v, int l) -> std::optional<ConfigError> {
             s.sweep.values.clear();
             for (auto item : split_list(v)) {
                 auto d = to_double(item);
                 if (!d) return err(ConfigErrorKind::SyntaxError, l, std::string(k) + ": '" + std::string(item) + "' is not a number");
                 s.sweep.values.push_back(*d);
             }
             return std::nullopt;
         }},
        {"sweep", "series", false,
         [](Scenario& s, std::string_view, std::string_view v, int) -> std::optional<ConfigError> {
             s.sweep.series = std::string(v);
             return std::nullopt;
         }},
        {"sweep", "series_values", false,
         [](Scenario& s, std::string_view k, std::string_view v, int l) -> std::optional<ConfigError> {
             s.sweep.series_values.clear();
             for (auto item : split_list(v)) {
                 auto d = to_double(item);
                 if (!d) return err(ConfigErrorKind::SyntaxError, l, std::string(k) + ": '" + std::string(item) + "' is not a number");
                 s.sweep.series_values.push_back(*d);
             }
             return std::nullopt;
         }},
        {"sweep", "repetitions", true,
         [](Scenario& s, std::string_view k, std::string_view v, int l) { return integer(k, v, l, {1, 100000}, s.sweep.repetitions); }},
        {"sweep", "seed", true,
         [](Scenario& s, std::string_view k, std::string_view v, int l) { return integer(k, v, l, {0, 9007199254740991.0}, s.sweep.seed); }},
    };
    return table;
}

const KeyDef* find_key(std::string_view name) {
    for (const auto& k : keys()) {
        if (k.name == name) return &k;
    }
    return nullptr;
}

bool known_section(std::string_view s) {
    return s == "topology" || s == "mode" || s == "traffic" || s == "policy" || s == "sweep";
}

} // namespace

std::optional<ConfigError> set_parameter(Scenario& s, std::string_view key, std::string_view value, int line) {
    const KeyDef* k = find_key(key);
    if (!k) return err(ConfigErrorKind::UnknownKey, line, "unknown key '" + std::string(key) + "'");
    return k->set(s, key, trim(value), line);
}

bool is_numeric_parameter(std::string_view key) {
    const KeyDef* k = find_key(key);
    return k && k->numeric;
}

std::vector<std::string> parameter_names() {
    std::vector<std::string> out;
    for (const auto& k : keys()) out.emplace_back(k.name);
    return out;
}

std::vector<ConfigError> validate(const Scenario& s) {
    std::vector<ConfigError> out;
    const auto& p = s.policy;
    if (p.hysteresis >= p.threshold) {
        out.push_back(err(ConfigErrorKind::RangeError, 0, "hysteresis must be smaller than threshold"));
    }
    return out;
}

ParseResult parse_scenario(std::string_view text) {
    ParseResult result;
    Scenario s;
    std::string section;
    std::map<std::string, int, std::less<>> seen_at;
    int line_no = 0;
    while (!text.empty()) {
        ++line_no;
        const auto nl = text.find('\n');
        std::string_view line = text.substr(0, nl);
        text.remove_prefix(nl == std::string_view::npos ? text.size() : nl + 1);
        if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') {
                result.errors.push_back(err(ConfigErrorKind::SyntaxError, line_no, "unterminated section header"));
                continue;
            }
            section = std::string(trim(line.substr(1, line.size() - 2)));
            if (!known_section(section)) {
                result.errors.push_back(err(ConfigErrorKind::UnknownKey, line_no, "unknown section [" + section + "]"));
            }
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) {
            result.errors.push_back(err(ConfigErrorKind::SyntaxError, line_no, "expected 'key = value'"));
            continue;
        }
        const auto key = trim(line.substr(0, eq));
        const auto value = trim(line.substr(eq + 1));
        if (key.empty()) {
            result.errors.push_back(err(ConfigErrorKind::SyntaxError, line_no, "missing key before '='"));
            continue;
        }
        if (section.empty()) {
            result.errors.push_back(err(ConfigErrorKind::SyntaxError, line_no, "key outside of any section"));
            continue;
        }
        if (!known_section(section)) continue;
        const KeyDef* def = find_key(key);
        if (!def || def->section != section) {
            result.errors.push_back(
                err(ConfigErrorKind::UnknownKey, line_no, "unknown key '" + std::string(key) + "' in [" + section + "]"));
            continue;
        }
        if (value.empty()) {
            result.errors.push_back(err(ConfigErrorKind::SyntaxError, line_no, "missing value for '" + std::string(key) + "'"));
            continue;
        }
        if (auto e = def->set(s, key, value, line_no)) {
            result.errors.push_back(*e);
            continue;
        }
        seen_at[std::string(key)] = line_no;
    }

    auto line_of = [&](std::string_view key) {
        auto it = seen_at.find(key);
        return it == seen_at.end() ? 0 : it->second;
    };
    const auto& sw = s.sweep;
    for (const auto& name : sw.parameters) {
        if (!is_numeric_parameter(name)) {
            result.errors.push_back(err(ConfigErrorKind::UnknownKey, line_of("parameter"),
                                        "sweep parameter '" + name + "' is not a numeric scenario key"));
        }
    }
    if (!sw.parameters.empty() && sw.values.empty()) {
        result.errors.push_back(err(ConfigErrorKind::SyntaxError, line_of("parameter"), "sweep parameter without values"));
    }
    if (sw.parameters.empty() && !sw.values.empty()) {
        result.errors.push_back(err(ConfigErrorKind::SyntaxError, line_of("values"), "sweep values without a parameter"));
    }
    if (!sw.series.empty() && !is_numeric_parameter(sw.series)) {
        result.errors.push_back(err(ConfigErrorKind::UnknownKey, line_of("series"),
                                    "sweep series '" + sw.series + "' is not a numeric scenario key"));
    }
    if (sw.series.empty() != sw.series_values.empty()) {
        result.errors.push_back(err(ConfigErrorKind::SyntaxError, line_of(sw.series.empty() ? "series_values" : "series"),
                                    "series and series_values go together"));
    }
    // Every swept value must itself be acceptable.
    if (result.errors.empty()) {
        for (const auto& name : sw.parameters) {
            for (double v : sw.values) {
                Scenario probe = s;
                if (auto e = set_parameter(probe, name, format_number(v), line_of("values"))) result.errors.push_back(*e);
            }
        }
        for (double v : sw.series_values) {
            Scenario probe = s;
            if (auto e = set_parameter(probe, sw.series, format_number(v), line_of("series_values"))) {
                result.errors.push_back(*e);
            }
        }
        for (auto e : validate(s)) {
            e.line = line_of("hysteresis") ? line_of("hysteresis") : line_of("threshold");
            result.errors.push_back(e);
        }
    }
    if (result.errors.empty()) result.scenario = std::move(s);
    return result;
}

} // namespace hybsim::harness
