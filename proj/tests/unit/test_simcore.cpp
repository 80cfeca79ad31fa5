#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "simcore/error.hpp"
#include "simcore/simulator.hpp"

using namespace hybsim;
using namespace hybsim::sim;

namespace {

Packet raw_packet(Simulator& sim, Address src, Address dst, std::uint32_t size) {
    Packet p;
    p.id = sim.next_packet_id();
    p.src = src;
    p.dst = dst;
    p.size = size;
    return p;
}

const Address kA1{make_ip(10, 1, 0, 1), Network::Dsl};
const Address kA2{make_ip(10, 2, 0, 1), Network::Lte};
const Address kS{make_ip(192, 0, 2, 10), Network::Internet};

} // namespace

TEST_CASE("timer fires exactly at its deadline") {
    Simulator sim;
    SimTime fired = SimTime::max();
    sim.schedule(SimTime::from_us(1000), [&] { fired = sim.now(); });
    sim.run_until(SimTime::from_s(1));
    CHECK(fired == SimTime::from_us(1000));
}

TEST_CASE("equal timestamps fire in insertion order") {
    Simulator sim;
    std::string order;
    for (char c : std::string("abcde")) sim.schedule(SimTime::from_ms(5), [&order, c] { order += c; });
    sim.run_until(SimTime::from_ms(5));
    CHECK(order == "abcde");
}

TEST_CASE("cancelled event never runs") {
    Simulator sim;
    bool ran = false;
    const EventId id = sim.schedule(SimTime::from_ms(1), [&] { ran = true; });
    CHECK(sim.cancel(id));
    CHECK_FALSE(sim.cancel(id));
    CHECK(sim.run_until(SimTime::from_ms(2)) == 0);
    CHECK_FALSE(ran);
}

TEST_CASE("scheduling in the past is rejected") {
    Simulator sim;
    sim.run_until(SimTime::from_ms(10));
    try {
        sim.schedule(SimTime::from_ms(9), [] {});
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::SchedulingInPast);
    }
}

TEST_CASE("run_until on an empty queue advances the clock") {
    Simulator sim;
    CHECK(sim.run_until(SimTime::from_s(5)) == 0);
    CHECK(sim.now() == SimTime::from_s(5));
}

TEST_CASE("run_until counts events up to and including t") {
    Simulator sim;
    for (int i = 1; i <= 7; ++i) sim.schedule(SimTime::from_ms(i), [] {});
    sim.schedule(SimTime::from_ms(20), [] {});
    CHECK(sim.run_until(SimTime::from_ms(7)) == 7);
    CHECK(sim.pending() == 1);
}

TEST_CASE("timer re-arm and cancel") {
    Simulator sim;
    int fires = 0;
    SimTime at;
    Timer t(sim, [&] {
        ++fires;
        at = sim.now();
    });
    t.arm(SimTime::from_ms(10));
    t.arm(SimTime::from_ms(30)); // pushed later without touching the queue
    sim.run_until(SimTime::from_ms(25));
    CHECK(fires == 0);
    sim.run_until(SimTime::from_ms(40));
    CHECK(fires == 1);
    CHECK(at == SimTime::from_ms(30));
    t.arm(SimTime::from_ms(50));
    t.arm(SimTime::from_ms(45)); // pulled earlier
    sim.run_until(SimTime::from_ms(46));
    CHECK(fires == 2);
    CHECK(at == SimTime::from_ms(45));
    t.arm(SimTime::from_ms(60));
    t.cancel();
    sim.run_until(SimTime::from_ms(100));
    CHECK(fires == 2);
}

TEST_CASE("timer destroyed with a queued event is harmless") {
    Simulator sim;
    int fires = 0;
    {
        Timer t(sim, [&] { ++fires; });
        t.arm(SimTime::from_ms(10));
    }
    sim.run_until(SimTime::from_ms(20));
    CHECK(fires == 0);
}

TEST_CASE("lone packet: serialization plus propagation") {
    Simulator sim;
    const LinkId l = sim.add_link({"dsl_up", 12'000'000, SimTime::from_ms(10)});
    SimTime arrival;
    sim.set_receiver(l, [&](Packet&&) { arrival = sim.now(); });
    CHECK(sim.transmit(l, raw_packet(sim, kA1, kS, 1500)) == TransmitResult::Accepted);
    sim.run_until(SimTime::from_s(1));
    CHECK(arrival == SimTime::from_ms(11));
}

TEST_CASE("ingress filter drops foreign sources") {
    Simulator sim;
    LinkConfig cfg{"dsl_up", 10'000'000, SimTime::from_ms(10)};
    cfg.ingress_filter = Prefix{make_ip(10, 1, 0, 0), 16};
    const LinkId l = sim.add_link(cfg);
    int delivered = 0;
    sim.set_receiver(l, [&](Packet&&) { ++delivered; });
    CHECK(sim.transmit(l, raw_packet(sim, kA2, kS, 100)) == TransmitResult::DroppedFiltered);
    CHECK(sim.transmit(l, raw_packet(sim, kA1, kS, 100)) == TransmitResult::Accepted);
    sim.run_until(SimTime::from_s(1));
    CHECK(delivered == 1);
    CHECK(sim.link(l).stats().dropped_filtered == 1);
}

TEST_CASE("queue capacity 1: hand-traced three packet schedule") {
    // t=0: P1 starts serializing (1 ms). P2 waits (queue 1/1). P3 finds the
    // queue full. P2 starts at 1 ms and arrives at 2 ms + delay.
    Simulator sim;
    LinkConfig cfg{"q1", 12'000'000, SimTime::from_ms(5)};
    cfg.queue_packets = 1;
    const LinkId l = sim.add_link(cfg);
    std::vector<std::pair<std::uint64_t, SimTime>> got;
    sim.set_receiver(l, [&](Packet&& p) { got.emplace_back(p.id, sim.now()); });
    const Packet p1 = raw_packet(sim, kA1, kS, 1500);
    const Packet p2 = raw_packet(sim, kA1, kS, 1500);
    const Packet p3 = raw_packet(sim, kA1, kS, 1500);
    CHECK(sim.transmit(l, p1) == TransmitResult::Accepted);
    CHECK(sim.transmit(l, p2) == TransmitResult::Accepted);
    CHECK(sim.transmit(l, p3) == TransmitResult::DroppedQueueFull);
    // Once P2 is in serialization the waiting room is free again.
    sim.run_until(SimTime::from_us(1000));
    const Packet p4 = raw_packet(sim, kA1, kS, 1500);
    CHECK(sim.transmit(l, p4) == TransmitResult::Accepted);
    sim.run_until(SimTime::from_s(1));
    REQUIRE(got.size() == 3);
    CHECK(got[0] == std::make_pair(p1.id, SimTime::from_ms(6)));
    CHECK(got[1] == std::make_pair(p2.id, SimTime::from_ms(7)));
    CHECK(got[2] == std::make_pair(p4.id, SimTime::from_ms(8)));
}

TEST_CASE("per-link FIFO and conservation without loss") {
    Simulator sim(42);
    LinkConfig cfg{"l", 5'000'000, SimTime::from_ms(3)};
    cfg.queue_packets = 1000;
    const LinkId l = sim.add_link(cfg);
    std::vector<std::uint64_t> order;
    sim.set_receiver(l, [&](Packet&& p) { order.push_back(p.id); });
    std::vector<std::uint64_t> sent;
    Rng rng(7);
    for (int i = 0; i < 200; ++i) {
        Packet p = raw_packet(sim, kA1, kS, 40 + static_cast<std::uint32_t>(rng.next() % 1400));
        sent.push_back(p.id);
        sim.schedule(SimTime::from_us(rng.next() % 50'000), [&sim, l, p] { sim.transmit(l, p); });
    }
    sim.run_until(SimTime::from_ms(25));
    const auto& st = sim.link(l).stats();
    CHECK(st.accepted >= st.delivered);
    sim.run_until(SimTime::from_s(10));
    CHECK(st.accepted == 200);
    CHECK(st.delivered == 200);
    CHECK(order.size() == 200);
}

TEST_CASE("utilization: idle, saturated, half load") {
    Simulator sim;
    LinkConfig cfg{"l", 30'000'000, SimTime::from_ms(1)};
    cfg.queue_packets = 100000;
    const LinkId idle = sim.add_link(cfg);
    const LinkId busy = sim.add_link(cfg);
    const LinkId half = sim.add_link(cfg);
    // Saturate `busy` for 3 s; offer 15 Mbps to `half` (1250 B every 666.67 us).
    for (int i = 0; i < 9000; ++i) sim.transmit(busy, raw_packet(sim, kA1, kS, 1250));
    const SimTime gap = SimTime::from_us(667);
    for (int i = 0; i < 4500; ++i) {
        sim.schedule(gap * static_cast<std::uint64_t>(i), [&sim, half] { sim.transmit(half, raw_packet(sim, kA1, kS, 1250)); });
    }
    sim.run_until(SimTime::from_s(2));
    CHECK(sim.utilization(idle, SimTime::from_s(1)) == 0.0);
    CHECK(sim.utilization(busy, SimTime::from_s(1)) == doctest::Approx(1.0).epsilon(0.001));
    // Test-side count of serialized bits in the last second.
    const double bits = 1'000'000.0 / 667.0 * 1250 * 8;
    CHECK(sim.utilization(half, SimTime::from_s(1)) == doctest::Approx(bits / 30e6).epsilon(0.01));
    CHECK(sim.utilization(half, SimTime::from_s(1)) == doctest::Approx(0.5).epsilon(0.05));
}

TEST_CASE("link cut drops in-flight packets") {
    Simulator sim;
    const LinkId l = sim.add_link({"l", 10'000'000, SimTime::from_ms(20)});
    int delivered = 0;
    sim.set_receiver(l, [&](Packet&&) { ++delivered; });
    for (int i = 0; i < 5; ++i) sim.transmit(l, raw_packet(sim, kA1, kS, 1000));
    sim.run_until(SimTime::from_ms(5));
    sim.set_link_up(l, false);
    CHECK(sim.transmit(l, raw_packet(sim, kA1, kS, 1000)) == TransmitResult::DroppedDown);
    sim.set_link_up(l, true);
    sim.run_until(SimTime::from_s(1));
    CHECK(delivered == 0);
    CHECK(sim.link(l).stats().dropped_down == 6);
}

TEST_CASE("unknown link and invalid arguments") {
    Simulator sim;
    CHECK_THROWS_AS(sim.transmit(3, raw_packet(sim, kA1, kS, 10)), Error);
    CHECK_THROWS_AS(sim.add_link({"zero", 0, SimTime{}}), Error);
    const LinkId l = sim.add_link({"l", 1000, SimTime{}});
    CHECK_THROWS_AS(sim.utilization(l, SimTime{}), Error);
}

TEST_CASE("identical seeds give identical event logs") {
    auto run = [](std::uint64_t seed) {
        Simulator sim(seed);
        std::vector<std::string> log;
        std::ostringstream trace;
        sim.set_event_log(&log);
        sim.set_trace(&trace);
        LinkConfig cfg{"lossy", 8'000'000, SimTime::from_ms(7)};
        cfg.loss = 0.2;
        const LinkId l = sim.add_link(cfg);
        sim.set_receiver(l, [&sim, l](Packet&& p) {
            if (p.size > 100) {
                p.size -= 100;
                sim.transmit(l, std::move(p));
            }
        });
        for (int i = 0; i < 50; ++i) {
            sim.schedule(SimTime::from_ms(i), [&sim, l] { sim.transmit(l, raw_packet(sim, kA1, kS, 1400)); });
        }
        sim.run_until(SimTime::from_s(5));
        return std::make_pair(log, trace.str());
    };
    const auto a = run(9);
    const auto b = run(9);
    const auto c = run(10);
    CHECK(a.first == b.first);
    CHECK(a.second == b.second);
    CHECK(a.second != c.second);
}

TEST_CASE("address helpers") {
    CHECK(format_ip(make_ip(10, 1, 0, 1)) == "10.1.0.1");
    CHECK(parse_ip("192.0.2.10") == make_ip(192, 0, 2, 10));
    CHECK_FALSE(parse_ip("300.0.0.1"));
    const auto p = parse_prefix("10.1.0.0/16");
    REQUIRE(p);
    CHECK(p->contains(make_ip(10, 1, 1, 2)));
    CHECK_FALSE(p->contains(make_ip(10, 2, 0, 1)));
}
