// SPDX-License-Identifier: Apache-2.0
//
// Delay/energy model walkthrough: sweep one bottlenecked model over a few
// channel qualities and print which offload strategy wins where.

#include <cstdio>

#include "splitfit/simulate.hpp"
#include "splitfit/wire.hpp"

using namespace splitfit;

int main() {
  SweepModel m;
  m.name = "small_resnet_sp1_b3";
  m.top1 = 0.80;
  m.teacher_top1 = 0.86;
  m.input_shape = {3, 32, 32};
  m.bottleneck_shape = {3, 8, 8};
  m.channels = 3;

  ProfileMap profiles;
  profiles[m.name + "/split"] = {0.05, 0.04, 4.3, 1.6, 0.0, "configured"};
  profiles[m.name + "/local"] = {0.27, 0.0, 4.3, 0.0, 0.0, "configured"};
  profiles[m.name + "/edge"] = {0.0, 0.06, 0.0, 1.6, 0.0, "configured"};

  std::vector<NamedChannel> channels;
  for (auto [name, rate] : std::initializer_list<std::pair<const char*, double>>{
           {"lora_37.5k", 37500.0}, {"wifi_1.5M", 1.5e6}, {"wifi_8M", 8e6}, {"wifi_40M", 4e7}}) {
    ChannelModel ch;
    ch.kind = ChannelModel::Kind::fixed_rate;
    ch.rate_bps = rate;
    channels.push_back({name, ch});
  }

  auto rows = sweep({m}, channels, profiles, {Strategy::local, Strategy::edge, Strategy::split},
                    kInferResponseFrameBytes);
  std::printf("%-12s %-7s %10s %12s %10s\n", "channel", "mode", "payload[B]", "delay[s]",
              "energy[J]");
  for (const auto& r : rows)
    std::printf("%-12s %-7s %10lld %12.4f %10.4f\n", r.channel_name.c_str(),
                strategy_name(r.strategy), static_cast<long long>(r.payload_bytes), r.d_e2e_s,
                r.energy_j);
  for (const auto& ch : channels) {
    std::vector<SweepRow> group;
    for (const auto& r : rows)
      if (r.channel_name == ch.name) group.push_back(r);
    std::printf("best on %-12s -> %s\n", ch.name.c_str(), strategy_name(choose_strategy(group)));
  }
  return 0;
}
