// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "splitfit/checkpoint.hpp"
#include "splitfit/recipes.hpp"
#include "splitfit/simulate.hpp"
#include "splitfit/wire.hpp"

namespace splitfit {

// Experiment configuration: one JSON file drives inject/train/eval runs.
// Command-line flags override config keys (--seed, --out).
//
// {
//   "seed": 1,
//   "out": "runs/exp1",
//   "teacher": {"arch": "small_resnet", "input_shape": [3,32,32],
//               "num_classes": 10, "checkpoint": "runs/teacher/checkpoint"},
//   "dataset": {"kind": "synthetic", "train": 800, "val": 500, "seed": 7,
//               "image_size": 32}   // or {"kind": "folder", "train_dir": ..,
//                                    //     "val_dir": ..}
//   "target": "student",            // or "teacher" (pretraining run)
//   "recipe": "bottlefit_ft_fe",
//   "split": {"split_point": "SP1", "bottleneck_channels": 3,
//             "spatial_factor": 4, "use_pool": false},
//   "codec": "bq8",
//   "train": {"stage_epochs": 10, "baseline_epochs": 20, "batch_size": 64,
//             "lr": 0.001, "teacher_epochs": 20}
// }

struct DatasetConfig {
  std::string kind = "synthetic";  // synthetic | folder
  int train_count = 800;
  int val_count = 500;
  uint64_t seed = 7;
  int image_size = 32;
  std::string train_dir, val_dir;
};

struct TeacherConfig {
  std::string arch = "small_resnet";
  Shape input_shape = {3, 32, 32};
  int num_classes = 10;
  std::string checkpoint;  // where a pretrained teacher lives / is written
};

struct ExperimentConfig {
  uint64_t seed = 0;
  std::string out_dir;
  TeacherConfig teacher;
  DatasetConfig dataset;
  std::string target = "student";  // teacher | student
  std::string recipe = "bottlefit_ft_fe";
  SplitConfig split;
  PayloadFormat codec = PayloadFormat::bq8;
  RecipeOptions train;
  int teacher_epochs = 20;
};

namespace detail {

inline Json load_json_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw MissingConfig("config file not found: " + path);
  Json j;
  try {
    f >> j;
  } catch (const std::exception& e) {
    throw MissingConfig(path + ": " + e.what());
  }
  return j;
}

}  // namespace detail

inline ExperimentConfig load_experiment_config(const std::string& path) {
  Json j = detail::load_json_file(path);
  ExperimentConfig c;
  c.seed = j.value("seed", 0);
  c.out_dir = j.value("out", "");
  if (j.contains("teacher")) {
    const Json& t = j.at("teacher");
    c.teacher.arch = t.value("arch", c.teacher.arch);
    if (t.contains("input_shape")) c.teacher.input_shape = t.at("input_shape").get<Shape>();
    c.teacher.num_classes = t.value("num_classes", c.teacher.num_classes);
    c.teacher.checkpoint = t.value("checkpoint", "");
  }
  if (j.contains("dataset")) {
    const Json& d = j.at("dataset");
    c.dataset.kind = d.value("kind", "synthetic");
    c.dataset.train_count = d.value("train", c.dataset.train_count);
    c.dataset.val_count = d.value("val", c.dataset.val_count);
    c.dataset.seed = d.value("seed", c.dataset.seed);
    c.dataset.image_size = d.value("image_size", 32);
    c.dataset.train_dir = d.value("train_dir", "");
    c.dataset.val_dir = d.value("val_dir", "");
    if (c.dataset.kind != "synthetic" && c.dataset.kind != "folder")
      throw MissingConfig("dataset.kind must be 'synthetic' or 'folder'");
  }
  c.target = j.value("target", "student");
  if (c.target != "student" && c.target != "teacher")
    throw MissingConfig("target must be 'student' or 'teacher'");
  c.recipe = j.value("recipe", c.recipe);
  if (j.contains("split")) c.split = detail::split_config_from_json(j.at("split"));
  if (j.contains("codec")) c.codec = payload_format_from_name(j.at("codec").get<std::string>());
  if (j.contains("train")) {
    const Json& t = j.at("train");
    c.train.stage_epochs = t.value("stage_epochs", c.train.stage_epochs);
    c.train.baseline_epochs = t.value("baseline_epochs", c.train.baseline_epochs);
    c.train.batch_size = t.value("batch_size", c.train.batch_size);
    c.train.lr = t.value("lr", c.train.lr);
    c.teacher_epochs = t.value("teacher_epochs", c.teacher_epochs);
  }
  return c;
}

inline Dataset<float> load_dataset_split(const DatasetConfig& d, bool validation) {
  if (d.kind == "folder") {
    const std::string& dir = validation ? d.val_dir : d.train_dir;
    if (dir.empty()) throw MissingConfig("dataset.kind=folder needs train_dir and val_dir");
    return load_dataset_folder<float>(dir);
  }
  const int count = validation ? d.val_count : d.train_count;
  // disjoint streams for the two splits
  const uint64_t seed = validation ? d.seed * 2 + 0x5a11 : d.seed;
  return make_synthetic_dataset<float>(count, seed, d.image_size);
}

// Channel file: {"kind": "fixed_rate", "rate_bps": 37500, "rtt_s": 0}
//            or {"kind": "trace", "trace_csv": "path.csv", "rtt_s": 0}
inline ChannelModel load_channel_json(const std::string& path) {
  Json j = detail::load_json_file(path);
  ChannelModel ch;
  const std::string kind = j.value("kind", "fixed_rate");
  ch.rtt_s = j.value("rtt_s", 0.0);
  if (kind == "fixed_rate") {
    ch.kind = ChannelModel::Kind::fixed_rate;
    if (!j.contains("rate_bps")) throw MissingConfig(path + ": fixed_rate needs rate_bps");
    ch.rate_bps = j.at("rate_bps").get<double>();
  } else if (kind == "trace") {
    std::string csv = j.value("trace_csv", "");
    if (csv.empty()) throw MissingConfig(path + ": trace channel needs trace_csv");
    if (!std::filesystem::path(csv).is_absolute())
      csv = (std::filesystem::path(path).parent_path() / csv).string();
    ch = load_trace_csv(csv, ch.rtt_s);
  } else {
    throw MissingConfig(path + ": unknown channel kind '" + kind + "'");
  }
  ch.check();
  return ch;
}

inline ExecutionProfile profile_from_json(const Json& j) {
  ExecutionProfile p;
  p.d_head_s = j.value("d_head_s", 0.0);
  p.d_tail_s = j.value("d_tail_s", 0.0);
  p.p_head_w = j.value("p_head_w", 0.0);
  p.p_net_w = j.value("p_net_w", 0.0);
  p.p_idle_w = j.value("p_idle_w", 0.0);
  p.source = j.value("source", "configured");
  if (p.d_head_s < 0 || p.d_tail_s < 0 || p.p_head_w < 0 || p.p_net_w < 0 || p.p_idle_w < 0)
    throw MissingConfig("execution profile values must be >= 0");
  return p;
}

// Profile file: {"<model>": {"split": {...}, "local": {...}, "edge": {...}}}
inline ProfileMap load_profiles_json(const std::string& path) {
  Json j = detail::load_json_file(path);
  ProfileMap map;
  for (auto& [model, strategies] : j.items())
    for (auto& [strategy, profile] : strategies.items()) {
      strategy_from_name(strategy);  // validates the key
      map[model + "/" + strategy] = profile_from_json(profile);
    }
  return map;
}

// Simulation sweep configuration:
// {
//   "models": [{"name": .., "top1": .., "teacher_top1": .., "input_shape": [..],
//               "bottleneck_shape": [..], "split_point": "SP1", "channels": 3,
//               "codec": "bq8", "jpeg_bytes": 23500,   // optional
//               "eval_json": "runs/eval/eval.json"}],  // optional top1 source
//   "channels": [{"name": "lora", "file": "config/channels/lora_sf6.json"},
//                {"name": "wifi", "kind": "fixed_rate", "rate_bps": 2e7}],
//   "profiles": "config/profiles/desk.json",           // or inline object
//   "strategies": ["local", "edge", "split"],
//   "response_bytes": 26
// }
struct SimConfig {
  std::vector<SweepModel> models;
  std::vector<NamedChannel> channels;
  ProfileMap profiles;
  std::vector<Strategy> strategies;
  int64_t response_bytes = kInferResponseFrameBytes;
};

inline SimConfig load_sim_config(const std::string& path) {
  namespace fs = std::filesystem;
  Json j = detail::load_json_file(path);
  const fs::path base = fs::path(path).parent_path();
  auto resolve = [&](const std::string& p) {
    return fs::path(p).is_absolute() ? p : (base / p).string();
  };
  SimConfig c;
  if (!j.contains("models") || j.at("models").empty())
    throw MissingConfig(path + ": no models to sweep");
  for (const auto& m : j.at("models")) {
    SweepModel sm;
    sm.name = m.at("name").get<std::string>();
    if (m.contains("eval_json")) {
      Json e = detail::load_json_file(resolve(m.at("eval_json").get<std::string>()));
      sm.top1 = e.at("top1").get<double>();
      sm.teacher_top1 = e.value("teacher_top1", sm.top1);
      if (e.contains("bottleneck_shape")) sm.bottleneck_shape = e.at("bottleneck_shape").get<Shape>();
      if (e.contains("input_shape")) sm.input_shape = e.at("input_shape").get<Shape>();
    }
    sm.top1 = m.value("top1", sm.top1);
    sm.teacher_top1 = m.value("teacher_top1", sm.teacher_top1 ? sm.teacher_top1 : sm.top1);
    if (m.contains("input_shape")) sm.input_shape = m.at("input_shape").get<Shape>();
    if (m.contains("bottleneck_shape")) sm.bottleneck_shape = m.at("bottleneck_shape").get<Shape>();
    if (sm.input_shape.empty() || sm.bottleneck_shape.empty())
      throw MissingConfig(path + ": model '" + sm.name + "' needs input and bottleneck shapes");
    sm.split_point = m.value("split_point", "SP1");
    sm.channels = m.value("channels", sm.bottleneck_shape[0]);
    if (m.contains("codec")) sm.codec = payload_format_from_name(m.at("codec").get<std::string>());
    if (m.contains("jpeg_bytes")) sm.jpeg_bytes = m.at("jpeg_bytes").get<int64_t>();
    c.models.push_back(std::move(sm));
  }
  if (!j.contains("channels") || j.at("channels").empty())
    throw MissingConfig(path + ": no channels configured");
  for (const auto& ch : j.at("channels")) {
    NamedChannel nc;
    nc.name = ch.at("name").get<std::string>();
    if (ch.contains("file")) {
      nc.model = load_channel_json(resolve(ch.at("file").get<std::string>()));
    } else {
      const std::string kind = ch.value("kind", "fixed_rate");
      nc.model.rtt_s = ch.value("rtt_s", 0.0);
      if (kind == "fixed_rate") {
        nc.model.kind = ChannelModel::Kind::fixed_rate;
        nc.model.rate_bps = ch.at("rate_bps").get<double>();
      } else if (kind == "trace") {
        nc.model = load_trace_csv(resolve(ch.at("trace_csv").get<std::string>()), nc.model.rtt_s);
      } else {
        throw MissingConfig(path + ": unknown channel kind '" + kind + "'");
      }
    }
    nc.model.check();
    c.channels.push_back(std::move(nc));
  }
  if (j.contains("profiles")) {
    if (j.at("profiles").is_string()) {
      c.profiles = load_profiles_json(resolve(j.at("profiles").get<std::string>()));
    } else {
      for (auto& [model, strategies] : j.at("profiles").items())
        for (auto& [strategy, profile] : strategies.items())
          c.profiles[model + "/" + strategy] = profile_from_json(profile);
    }
  } else {
    throw MissingConfig(path + ": no execution profiles configured");
  }
  if (j.contains("strategies")) {
    for (const auto& s : j.at("strategies"))
      c.strategies.push_back(strategy_from_name(s.get<std::string>()));
  } else {
    c.strategies = {Strategy::local, Strategy::edge, Strategy::split};
  }
  c.response_bytes = j.value("response_bytes", kInferResponseFrameBytes);
  return c;
}

}  // namespace splitfit
