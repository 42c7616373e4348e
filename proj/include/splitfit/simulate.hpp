// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "splitfit/codec.hpp"

namespace splitfit {

enum class Strategy : uint8_t { local = 0, edge = 1, split = 2 };

inline const char* strategy_name(Strategy s) {
  switch (s) {
    case Strategy::local: return "local";
    case Strategy::edge: return "edge";
    case Strategy::split: return "split";
  }
  return "?";
}

inline Strategy strategy_from_name(const std::string& s) {
  if (s == "local") return Strategy::local;
  if (s == "edge") return Strategy::edge;
  if (s == "split") return Strategy::split;
  throw MissingConfig("unknown strategy '" + s + "'");
}

// Mean device-side execution times and power draws for one (model, strategy)
// pairing. For `local`, d_head_s holds the full on-device execution time; for
// `edge`, d_tail_s holds the server-side execution time.
struct ExecutionProfile {
  double d_head_s = 0;
  double d_tail_s = 0;
  double p_head_w = 0;  // device power while computing
  double p_net_w = 0;   // device power while transmitting/receiving
  double p_idle_w = 0;  // device power while waiting on the server
  std::string source = "configured";  // "configured" or "measured"
};

// Either a constant rate or a piecewise-constant rate trace (t_s, rate_bps).
// The final trace segment extends indefinitely; transfers may start anywhere
// inside [first_t, last_t].
struct ChannelModel {
  enum class Kind : uint8_t { fixed_rate, trace };
  Kind kind = Kind::fixed_rate;
  double rate_bps = 0;
  std::vector<std::pair<double, double>> trace;  // (t_s, rate_bps), strictly increasing t_s
  double rtt_s = 0;

  void check() const {
    if (rtt_s < 0) throw Error("channel rtt must be >= 0");
    if (kind == Kind::fixed_rate) {
      if (!(rate_bps > 0)) throw Error("channel rate must be positive");
    } else {
      if (trace.empty()) throw Error("trace channel has no samples");
      for (size_t i = 0; i < trace.size(); ++i) {
        if (!(trace[i].second > 0)) throw Error("trace rates must be positive");
        if (i && !(trace[i].first > trace[i - 1].first))
          throw Error("trace timestamps must be strictly increasing");
      }
    }
  }
};

// t_s,rate_bps CSV with a header row.
inline ChannelModel load_trace_csv(const std::string& path, double rtt_s = 0) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read trace " + path);
  ChannelModel ch;
  ch.kind = ChannelModel::Kind::trace;
  ch.rtt_s = rtt_s;
  std::string line;
  if (!std::getline(f, line) || line.rfind("t_s,rate_bps", 0) != 0)
    throw IoError(path + ": expected 't_s,rate_bps' header");
  int lineno = 1;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream is(line);
    double t, r;
    char comma;
    if (!(is >> t >> comma >> r) || comma != ',')
      throw IoError(path + ":" + std::to_string(lineno) + ": malformed row '" + line + "'");
    ch.trace.emplace_back(t, r);
  }
  try {
    ch.check();
  } catch (const Error& e) {
    throw IoError(path + ": " + e.what());
  }
  return ch;
}

// One-way transfer time for `size_bytes` starting at absolute time t0, plus
// half the round-trip allowance. Fixed rate: 8*size/rate + rtt/2. Trace:
// integrate across the piecewise-constant segments from t0.
inline double network_delay(int64_t size_bytes, const ChannelModel& ch, double t0 = 0) {
  if (size_bytes < 0) throw Error("negative payload");
  ch.check();
  if (ch.kind == ChannelModel::Kind::fixed_rate)
    return 8.0 * static_cast<double>(size_bytes) / ch.rate_bps + ch.rtt_s / 2;

  if (t0 < ch.trace.front().first || t0 > ch.trace.back().first)
    throw TraceExhausted("transfer start " + std::to_string(t0) + " outside trace span [" +
                         std::to_string(ch.trace.front().first) + "," +
                         std::to_string(ch.trace.back().first) + "]");
  double bits = 8.0 * static_cast<double>(size_bytes);
  double t = t0;
  size_t seg = 0;
  while (seg + 1 < ch.trace.size() && ch.trace[seg + 1].first <= t0) ++seg;
  while (bits > 0) {
    const double rate = ch.trace[seg].second;
    if (seg + 1 == ch.trace.size()) {  // open-ended final segment
      t += bits / rate;
      bits = 0;
      break;
    }
    const double seg_end = ch.trace[seg + 1].first;
    const double capacity = rate * (seg_end - t);
    if (capacity >= bits) {
      t += bits / rate;
      bits = 0;
    } else {
      bits -= capacity;
      t = seg_end;
      ++seg;
    }
  }
  return (t - t0) + ch.rtt_s / 2;
}

// End-to-end delay decomposition: head compute, uplink, tail compute,
// downlink. total_s is always the exact component sum.
struct DelayBreakdown {
  double d_head_s = 0;
  double d_net_up_s = 0;
  double d_tail_s = 0;
  double d_net_down_s = 0;
  double total_s = 0;

  static DelayBreakdown of(double head, double up, double tail, double down) {
    return {head, up, tail, down, head + up + tail + down};
  }
};

// Fill the decomposition for one inference under the given offload strategy.
//   local: everything on the device, all compute in d_head, no network terms
//   edge:  no head compute; payload_bytes must carry the model-input size
//   split: head + compressed payload + tail + label downlink
// Time advances through the breakdown, so trace channels see the uplink and
// downlink at the correct offsets from t0.
inline DelayBreakdown end_to_end(const ExecutionProfile& p, const ChannelModel& ch,
                                 int64_t payload_bytes, int64_t response_bytes,
                                 Strategy strategy = Strategy::split, double t0 = 0) {
  if (strategy == Strategy::local) return DelayBreakdown::of(p.d_head_s, 0, 0, 0);
  double t = t0;
  const double head = (strategy == Strategy::edge) ? 0 : p.d_head_s;
  t += head;
  const double up = network_delay(payload_bytes, ch, t);
  t += up;
  const double tail = p.d_tail_s;
  t += tail;
  const double down = network_delay(response_bytes, ch, t);
  return DelayBreakdown::of(head, up, tail, down);
}

// Device-side energy: head compute at p_head, the two transfers at p_net,
// the server wait at p_idle.
inline double device_energy(const ExecutionProfile& p, const DelayBreakdown& d) {
  return p.p_head_w * d.d_head_s + p.p_net_w * (d.d_net_up_s + d.d_net_down_s) +
         p.p_idle_w * d.d_tail_s;
}

// --- sweeps ------------------------------------------------------------------

struct SweepModel {
  std::string name;
  double top1 = 0;           // accuracy of the bottleneck-injected model
  double teacher_top1 = 0;   // accuracy of the unmodified model (local/edge rows)
  Shape input_shape;
  Shape bottleneck_shape;
  std::string split_point = "SP1";
  int channels = 0;  // bottleneck width
  PayloadFormat codec = PayloadFormat::bq8;
  std::optional<int64_t> jpeg_bytes;  // configured average input size for edge rows
};

struct NamedChannel {
  std::string name;
  ChannelModel model;
};

struct SweepRow {
  std::string model_name;
  std::string channel_name;
  double channel_rate_bps = 0;  // 0 for traces
  std::string split_point;
  int channels = 0;
  std::string codec;
  int64_t payload_bytes = 0;
  double top1 = 0;
  double d_e2e_s = 0;
  double energy_j = 0;
  Strategy strategy = Strategy::split;
};

// Profiles are keyed "<model>/<strategy>"; absent keys raise MissingConfig.
using ProfileMap = std::map<std::string, ExecutionProfile>;

inline const ExecutionProfile& profile_for(const ProfileMap& profiles, const std::string& model,
                                           Strategy s) {
  auto it = profiles.find(model + "/" + strategy_name(s));
  if (it == profiles.end())
    throw MissingConfig("no execution profile for " + model + "/" + strategy_name(s));
  return it->second;
}

// One row per (model x channel x strategy).
inline std::vector<SweepRow> sweep(const std::vector<SweepModel>& models,
                                   const std::vector<NamedChannel>& channels,
                                   const ProfileMap& profiles,
                                   const std::vector<Strategy>& strategies,
                                   int64_t response_bytes) {
  std::vector<SweepRow> rows;
  for (const auto& m : models) {
    for (const auto& ch : channels) {
      for (Strategy s : strategies) {
        const ExecutionProfile& p = profile_for(profiles, m.name, s);
        SweepRow row;
        row.model_name = m.name;
        row.channel_name = ch.name;
        row.channel_rate_bps =
            ch.model.kind == ChannelModel::Kind::fixed_rate ? ch.model.rate_bps : 0;
        row.split_point = m.split_point;
        row.channels = m.channels;
        row.strategy = s;
        switch (s) {
          case Strategy::local:
            row.payload_bytes = 0;
            row.codec = "none";
            row.top1 = m.teacher_top1;
            break;
          case Strategy::edge:
            row.payload_bytes = m.jpeg_bytes
                                    ? payload_size(m.input_shape, PayloadFormat::configured_jpeg,
                                                   m.jpeg_bytes)
                                    : payload_size(m.input_shape, PayloadFormat::float32);
            row.codec = m.jpeg_bytes ? "configured_jpeg" : "float32";
            row.top1 = m.teacher_top1;
            break;
          case Strategy::split:
            row.payload_bytes = payload_size(m.bottleneck_shape, m.codec);
            row.codec = payload_format_name(m.codec);
            row.top1 = m.top1;
            break;
        }
        double t0 = ch.model.kind == ChannelModel::Kind::trace ? ch.model.trace.front().first : 0;
        auto d = end_to_end(p, ch.model, row.payload_bytes, response_bytes, s, t0);
        row.d_e2e_s = d.total_s;
        row.energy_j = device_energy(p, d);
        rows.push_back(std::move(row));
      }
    }
  }
  return rows;
}

// argmin over total delay; ties break toward lower energy, then toward the
// strategy order local < edge < split.
inline Strategy choose_strategy(const std::vector<SweepRow>& rows) {
  if (rows.empty()) throw Error("choose_strategy needs at least one candidate row");
  const SweepRow* best = &rows[0];
  for (const auto& r : rows) {
    if (r.d_e2e_s < best->d_e2e_s ||
        (r.d_e2e_s == best->d_e2e_s &&
         (r.energy_j < best->energy_j ||
          (r.energy_j == best->energy_j &&
           static_cast<int>(r.strategy) < static_cast<int>(best->strategy)))))
      best = &r;
  }
  return best->strategy;
}

inline void write_sweep_csv(const std::string& path, const std::vector<SweepRow>& rows) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path);
  f << "model,channel,rate_bps,split_point,channels,codec,payload_bytes,top1,d_e2e_s,energy_j,"
       "strategy\n";
  char buf[320];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%s,%s,%.10g,%s,%d,%s,%lld,%.6g,%.10g,%.10g,%s\n",
                  r.model_name.c_str(), r.channel_name.c_str(), r.channel_rate_bps,
                  r.split_point.c_str(), r.channels, r.codec.c_str(),
                  static_cast<long long>(r.payload_bytes), r.top1, r.d_e2e_s, r.energy_j,
                  strategy_name(r.strategy));
    f << buf;
  }
}

}  // namespace splitfit
