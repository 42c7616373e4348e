// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "splitfit/simulate.hpp"

using namespace splitfit;

namespace {

ChannelModel fixed(double rate, double rtt = 0) {
  ChannelModel ch;
  ch.kind = ChannelModel::Kind::fixed_rate;
  ch.rate_bps = rate;
  ch.rtt_s = rtt;
  return ch;
}

ChannelModel trace(std::vector<std::pair<double, double>> t, double rtt = 0) {
  ChannelModel ch;
  ch.kind = ChannelModel::Kind::trace;
  ch.trace = std::move(t);
  ch.rtt_s = rtt;
  return ch;
}

}  // namespace

TEST_CASE("network_delay: fixed-rate oracle values") {
  REQUIRE(network_delay(0, fixed(1e6, 0.02)) == 0.01);  // rtt/2 only
  REQUIRE(network_delay(0, fixed(37500)) == 0.0);

  // low-power long-range link at its top nominal rate
  double lora = network_delay(10096, fixed(37500));
  REQUIRE(lora == 8.0 * 10096 / 37500.0);
  REQUIRE(std::abs(lora - 2.1538) < 1e-4);

  REQUIRE(network_delay(1000, fixed(1e6, 0.03)) ==
          Catch::Approx(0.008 + 0.015).epsilon(1e-12));
}

TEST_CASE("network_delay: trace integration") {
  auto ch = trace({{0.0, 1e6}, {0.04, 1e7}});
  // 0.04 s drains 5000 B at 1 Mbps; remaining 5000 B take 0.004 s at 10 Mbps
  REQUIRE(network_delay(10000, ch, 0.0) == Catch::Approx(0.044).margin(1e-12));

  // starting inside the second segment uses only the faster rate
  REQUIRE(network_delay(10000, ch, 0.04) == Catch::Approx(0.008).margin(1e-12));

  // the final segment extends indefinitely
  REQUIRE(network_delay(10'000'000, ch, 0.04) == Catch::Approx(8.0).margin(1e-9));

  REQUIRE_THROWS_AS(network_delay(10, ch, 0.05), TraceExhausted);
  REQUIRE_THROWS_AS(network_delay(10, ch, -0.01), TraceExhausted);

  // rtt applies on top
  auto ch2 = trace({{0.0, 1e6}, {0.04, 1e7}}, 0.010);
  REQUIRE(network_delay(10000, ch2, 0.0) == Catch::Approx(0.049).margin(1e-12));
}

TEST_CASE("network_delay: a constant trace equals the fixed-rate model") {
  Rng rng(21);
  for (int trial = 0; trial < 100; ++trial) {
    double rate = std::pow(10.0, rng.uniform(3, 8));
    int64_t size = static_cast<int64_t>(rng.uniform(0, 1e6));
    auto tr = trace({{0.0, rate}, {1.0, rate}, {2.0, rate}});
    REQUIRE(std::abs(network_delay(size, tr, 0.0) - network_delay(size, fixed(rate))) < 1e-12);
  }
}

TEST_CASE("network_delay: monotone in rate") {
  Rng rng(22);
  for (int trial = 0; trial < 100; ++trial) {
    int64_t size = static_cast<int64_t>(rng.uniform(1, 1e6));
    double r1 = std::pow(10.0, rng.uniform(3, 8));
    double r2 = r1 * rng.uniform(1.01, 10.0);
    REQUIRE(network_delay(size, fixed(r2)) < network_delay(size, fixed(r1)));
  }
  REQUIRE(network_delay(0, fixed(1e3)) == network_delay(0, fixed(1e9)));
}

TEST_CASE("channel validation and trace csv loading") {
  REQUIRE_THROWS_AS(network_delay(10, fixed(0)), Error);
  REQUIRE_THROWS_AS(network_delay(10, trace({{0.0, 1e6}, {0.0, 2e6}})), Error);
  REQUIRE_THROWS_AS(network_delay(10, trace({{0.0, -5.0}})), Error);

  namespace fs = std::filesystem;
  auto dir = fs::temp_directory_path() / "splitfit_sim_test";
  fs::create_directories(dir);
  {
    std::ofstream f(dir / "good.csv");
    f << "t_s,rate_bps\n0.0,1000000\n0.04,10000000\n";
  }
  auto ch = load_trace_csv((dir / "good.csv").string());
  REQUIRE(ch.trace.size() == 2);
  REQUIRE(network_delay(10000, ch, 0.0) == Catch::Approx(0.044).margin(1e-12));

  {
    std::ofstream f(dir / "bad_header.csv");
    f << "time,rate\n0,1\n";
  }
  REQUIRE_THROWS_AS(load_trace_csv((dir / "bad_header.csv").string()), IoError);
  {
    std::ofstream f(dir / "bad_row.csv");
    f << "t_s,rate_bps\n0.0;zzz\n";
  }
  REQUIRE_THROWS_AS(load_trace_csv((dir / "bad_row.csv").string()), IoError);
  {
    std::ofstream f(dir / "bad_order.csv");
    f << "t_s,rate_bps\n1.0,100\n0.5,100\n";
  }
  REQUIRE_THROWS_AS(load_trace_csv((dir / "bad_order.csv").string()), IoError);
  fs::remove_all(dir);
}

TEST_CASE("end_to_end: strategies and the worked total") {
  ExecutionProfile p;
  p.d_head_s = 0.05;
  p.d_tail_s = 0.02;

  // infinitely fast channel degenerates to pure compute
  auto d = end_to_end(p, fixed(1e18), 10096, 26, Strategy::split);
  REQUIRE(d.total_s == Catch::Approx(0.07).margin(1e-9));

  // slow long-range link dominates
  d = end_to_end(p, fixed(37500), 10096, 0, Strategy::split);
  REQUIRE(d.d_head_s == 0.05);
  REQUIRE(d.d_tail_s == 0.02);
  REQUIRE(d.d_net_up_s == Catch::Approx(8.0 * 10096 / 37500.0).epsilon(1e-12));
  REQUIRE(d.total_s == Catch::Approx(0.05 + 8.0 * 10096 / 37500.0 + 0.02).epsilon(1e-12));
  REQUIRE(std::abs(d.total_s - 2.2238) < 1e-4);
  REQUIRE(d.total_s == d.d_head_s + d.d_net_up_s + d.d_tail_s + d.d_net_down_s);

  // local: all compute in d_head, no network terms
  ExecutionProfile local;
  local.d_head_s = 0.27;
  d = end_to_end(local, fixed(37500), 0, 0, Strategy::local);
  REQUIRE(d.total_s == 0.27);
  REQUIRE(d.d_net_up_s == 0);
  REQUIRE(d.d_tail_s == 0);

  // edge: no head compute
  ExecutionProfile edge;
  edge.d_tail_s = 0.08;
  d = end_to_end(edge, fixed(1e6), 602112, 26, Strategy::edge);
  REQUIRE(d.d_head_s == 0);
  REQUIRE(d.d_tail_s == 0.08);

  // with a trace, the downlink sees the rate at its actual start time
  auto ch = trace({{0.0, 8000.0}, {1.0, 80000.0}});
  ExecutionProfile zero;
  d = end_to_end(zero, ch, 1000, 1000, Strategy::split, 0.0);
  REQUIRE(d.d_net_up_s == Catch::Approx(1.0).margin(1e-12));
  REQUIRE(d.d_net_down_s == Catch::Approx(0.1).margin(1e-12));
}

TEST_CASE("device_energy: worked values and linearity") {
  ExecutionProfile p;
  REQUIRE(device_energy(p, DelayBreakdown{}) == 0.0);

  p.p_head_w = 4.3;
  auto d = DelayBreakdown::of(0.27, 0, 0, 0);
  REQUIRE(device_energy(p, d) == Catch::Approx(1.161).epsilon(1e-12));

  Rng rng(23);
  for (int trial = 0; trial < 50; ++trial) {
    ExecutionProfile q;
    q.p_head_w = rng.uniform(0, 5);
    q.p_net_w = rng.uniform(0, 5);
    q.p_idle_w = rng.uniform(0, 5);
    auto b = DelayBreakdown::of(rng.uniform(0, 1), rng.uniform(0, 1), rng.uniform(0, 1),
                                rng.uniform(0, 1));
    double e = device_energy(q, b);
    ExecutionProfile q2 = q;
    q2.p_head_w *= 2;
    q2.p_net_w *= 2;
    q2.p_idle_w *= 2;
    REQUIRE(device_energy(q2, b) == Catch::Approx(2 * e).epsilon(1e-12));
    // linear separately in each power term
    ExecutionProfile q3 = q;
    q3.p_net_w += 1.0;
    REQUIRE(device_energy(q3, b) ==
            Catch::Approx(e + (b.d_net_up_s + b.d_net_down_s)).epsilon(1e-9));
  }
}

TEST_CASE("choose_strategy: ties break by energy then strategy order") {
  SweepRow a;
  a.strategy = Strategy::split;
  a.d_e2e_s = 1.0;
  a.energy_j = 5.0;
  REQUIRE(choose_strategy({a}) == Strategy::split);

  SweepRow b = a;
  b.strategy = Strategy::edge;
  b.d_e2e_s = 1.0;
  b.energy_j = 4.0;
  REQUIRE(choose_strategy({a, b}) == Strategy::edge);

  SweepRow c = a;
  c.strategy = Strategy::local;
  c.energy_j = 5.0;
  REQUIRE(choose_strategy({a, c}) == Strategy::local);  // full tie: enum order

  // argmin is invariant under uniform positive scaling of delays
  SweepRow d1 = a, d2 = b, d3 = c;
  d1.d_e2e_s = 3.0;
  d2.d_e2e_s = 2.0;
  d3.d_e2e_s = 2.5;
  REQUIRE(choose_strategy({d1, d2, d3}) == Strategy::edge);
  for (auto* r : {&d1, &d2, &d3}) r->d_e2e_s *= 17.5;
  REQUIRE(choose_strategy({d1, d2, d3}) == Strategy::edge);

  REQUIRE_THROWS_AS(choose_strategy({}), Error);
}

TEST_CASE("sweep: row structure, monotonicity, and the offload crossover") {
  SweepModel m;
  m.name = "resnet_sp1_b3";
  m.top1 = 0.81;
  m.teacher_top1 = 0.85;
  m.input_shape = {3, 32, 32};
  m.bottleneck_shape = {3, 8, 8};
  m.channels = 3;
  m.codec = PayloadFormat::bq8;

  ProfileMap profiles;
  ExecutionProfile split_p;
  split_p.d_head_s = 0.05;
  split_p.d_tail_s = 0.04;
  split_p.p_head_w = 4.3;
  split_p.p_net_w = 1.6;
  ExecutionProfile edge_p;
  edge_p.d_tail_s = 0.06;
  edge_p.p_net_w = 1.6;
  ExecutionProfile local_p;
  local_p.d_head_s = 0.27;
  local_p.p_head_w = 4.3;
  profiles["resnet_sp1_b3/split"] = split_p;
  profiles["resnet_sp1_b3/edge"] = edge_p;
  profiles["resnet_sp1_b3/local"] = local_p;

  // single model, single channel, local only: one row, no network delay
  auto rows = sweep({m}, {{"wifi", fixed(1e6)}}, profiles, {Strategy::local}, 26);
  REQUIRE(rows.size() == 1);
  REQUIRE(rows[0].payload_bytes == 0);
  REQUIRE(rows[0].d_e2e_s == 0.27);
  REQUIRE(rows[0].strategy == Strategy::local);

  // missing profile is a configuration error
  REQUIRE_THROWS_AS(sweep({m}, {{"wifi", fixed(1e6)}}, {}, {Strategy::local}, 26), MissingConfig);

  // split delay is non-increasing in channel rate
  std::vector<NamedChannel> channels;
  for (double r : {1e4, 1e5, 1e6, 1e7, 1e8}) channels.push_back({std::to_string(r), fixed(r)});
  rows = sweep({m}, channels, profiles, {Strategy::split}, 26);
  for (size_t i = 1; i < rows.size(); ++i) REQUIRE(rows[i].d_e2e_s <= rows[i - 1].d_e2e_s);

  // crossover: solving the delay model for equal split/edge totals predicts
  // the rate below which split wins; the sweep must agree on both sides
  const double input_bytes = 4.0 * 3 * 32 * 32;
  const double payload = 3 * 8 * 8 + 4;
  const double r_star = 8.0 * (input_bytes - payload) /
                        (split_p.d_head_s + split_p.d_tail_s - edge_p.d_tail_s);
  auto below = sweep({m}, {{"slow", fixed(r_star * 0.9)}}, profiles,
                     {Strategy::edge, Strategy::split}, 26);
  auto above = sweep({m}, {{"fast", fixed(r_star * 1.1)}}, profiles,
                     {Strategy::edge, Strategy::split}, 26);
  REQUIRE(below[1].d_e2e_s < below[0].d_e2e_s);  // split beats edge on slow links
  REQUIRE(above[0].d_e2e_s < above[1].d_e2e_s);  // edge wins once the link is fast
  REQUIRE(choose_strategy(below) == Strategy::split);
  REQUIRE(choose_strategy(above) == Strategy::edge);
}
