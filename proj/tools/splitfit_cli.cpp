// SPDX-License-Identifier: Apache-2.0
//
// splitfit command line: inject -> train -> eval -> serve/client ->
// simulate -> report. Every command is deterministic for a fixed seed and
// inputs (client timing columns are measurements and the one exception).
//
// Exit codes: 0 success, 2 usage/configuration error, 3 missing run
// artifacts, 1 internal error.

#include <CLI11.hpp>

#include <csignal>
#include <filesystem>
#include <iostream>

#include "splitfit/config.hpp"
#include "splitfit/eval.hpp"
#include "splitfit/recipes.hpp"
#include "splitfit/report.hpp"

namespace fs = std::filesystem;
using namespace splitfit;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInternal = 1;
constexpr int kExitConfig = 2;
constexpr int kExitMissingArtifact = 3;

struct CommonFlags {
  std::string config_path;
  std::string out_dir;
  int64_t seed = -1;  // -1: take the config's seed
};

ExperimentConfig load_config(const CommonFlags& flags) {
  if (flags.config_path.empty()) throw MissingConfig("--config is required");
  ExperimentConfig cfg = load_experiment_config(flags.config_path);
  if (flags.seed >= 0) cfg.seed = static_cast<uint64_t>(flags.seed);
  if (!flags.out_dir.empty()) cfg.out_dir = flags.out_dir;
  if (cfg.out_dir.empty()) throw MissingConfig("no output directory (config 'out' or --out)");
  return cfg;
}

ModelGraph<float> load_teacher_checkpoint(const ExperimentConfig& cfg) {
  if (cfg.teacher.checkpoint.empty())
    throw MissingConfig("config has no teacher.checkpoint path");
  try {
    return load_model(cfg.teacher.checkpoint);
  } catch (const IoError& e) {
    throw MissingConfig("teacher weights unavailable at '" + cfg.teacher.checkpoint +
                        "': " + e.what());
  }
}

void write_json(const fs::path& path, const Json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path.string());
  f << j.dump(2) << "\n";
}

int cmd_inject(const CommonFlags& flags) {
  ExperimentConfig cfg = load_config(flags);
  ModelGraph<float> teacher = load_teacher_checkpoint(cfg);
  auto bm = inject(teacher, cfg.split, cfg.seed);
  fs::path out(cfg.out_dir);
  save_split_model((out / "checkpoint").string(), bm);
  Json j;
  j["teacher_ref"] = bm.teacher_ref;
  j["split"] = detail::split_config_json(bm.config);
  j["input_shape"] = teacher.input_shape;
  j["bottleneck_shape"] = bm.bottleneck_shape;
  j["decoder_output_shape"] = bm.decoder_output_shape;
  j["payload_bytes"]["bq8"] = payload_size(bm.bottleneck_shape, PayloadFormat::bq8);
  j["payload_bytes"]["float32"] = payload_size(bm.bottleneck_shape, PayloadFormat::float32);
  j["teacher_prefix_params"] = bm.teacher_prefix_params;
  j["encdec_params"] = bm.encdec_params;
  j["element_reduction"] = element_reduction(teacher.input_shape, bm.bottleneck_shape);
  write_json(out / "inject.json", j);
  std::cout << "injected " << split_point_name(bm.config.split_point) << " bottleneck "
            << shape_str(bm.bottleneck_shape) << " into " << teacher.name << " -> "
            << (out / "checkpoint").string() << "\n";
  return kExitOk;
}

int cmd_train(const CommonFlags& flags) {
  ExperimentConfig cfg = load_config(flags);
  if (cfg.target == "student") expand_recipe(cfg.recipe, cfg.train);  // fail fast on typos
  fs::path out(cfg.out_dir);
  Dataset<float> train = load_dataset_split(cfg.dataset, false);
  Dataset<float> val = load_dataset_split(cfg.dataset, true);

  if (cfg.target == "teacher") {
    auto teacher = build_teacher<float>(cfg.teacher.arch, cfg.teacher.input_shape,
                                        cfg.teacher.num_classes, cfg.seed);
    auto log = train_classifier(teacher, train, val, cfg.teacher_epochs, cfg.seed, cfg.train.lr,
                                cfg.train.batch_size);
    const std::string ckpt =
        cfg.teacher.checkpoint.empty() ? (out / "checkpoint").string() : cfg.teacher.checkpoint;
    save_model(ckpt, teacher);
    write_epoch_log_csv((out / "train_log.csv").string(), log);
    Json j;
    j["role"] = "teacher";
    j["name"] = teacher.name;
    j["model"] = teacher.name;
    j["checkpoint"] = ckpt;
    j["seed"] = cfg.seed;
    j["top1"] = log.empty() ? -1.0 : log.back().val_top1;
    j["epochs"] = cfg.teacher_epochs;
    write_json(out / "train.json", j);
    std::cout << "teacher " << teacher.name << " top1 "
              << (log.empty() ? -1.0 : log.back().val_top1) << " -> " << ckpt << "\n";
    return kExitOk;
  }

  ModelGraph<float> teacher = load_teacher_checkpoint(cfg);
  auto outcome = train_with_recipe(cfg.recipe, teacher, cfg.split, train, val, cfg.seed, cfg.train);
  save_split_model((out / "checkpoint").string(), outcome.model);
  write_epoch_log_csv((out / "train_log.csv").string(), outcome.log);
  Json j;
  j["role"] = "student";
  j["name"] = cfg.recipe;
  j["model"] = teacher.name;
  j["recipe"] = cfg.recipe;
  j["seed"] = cfg.seed;
  j["top1"] = outcome.final_val_top1;
  j["teacher_top1"] = val.size() ? evaluate_accuracy(teacher, val) : -1.0;
  j["bottleneck_shape"] = outcome.model.bottleneck_shape;
  j["input_shape"] = teacher.input_shape;
  j["payload_bytes"]["bq8"] = payload_size(outcome.model.bottleneck_shape, PayloadFormat::bq8);
  write_json(out / "train.json", j);
  std::cout << "recipe " << cfg.recipe << " top1 " << outcome.final_val_top1 << " -> "
            << (out / "checkpoint").string() << "\n";
  return kExitOk;
}

int cmd_eval(const CommonFlags& flags, const std::string& checkpoint, const std::string& codec) {
  ExperimentConfig cfg = load_config(flags);
  Dataset<float> val = load_dataset_split(cfg.dataset, true);
  fs::path out(cfg.out_dir);
  Json j;
  if (is_split_checkpoint(checkpoint)) {
    auto bm = load_split_model(checkpoint);
    auto pair = split(bm);
    j["role"] = "eval";
    j["name"] = bm.teacher_ref + "_" + split_point_name(bm.config.split_point) + "_b" +
                std::to_string(bm.config.bottleneck_channels);
    j["model"] = bm.teacher_ref;
    j["input_shape"] = pair.head.input_shape;
    j["bottleneck_shape"] = bm.bottleneck_shape;
    j["payload_bytes"]["bq8"] = payload_size(bm.bottleneck_shape, PayloadFormat::bq8);
    j["payload_bytes"]["float32"] = payload_size(bm.bottleneck_shape, PayloadFormat::float32);
    j["element_reduction"] = element_reduction(pair.head.input_shape, bm.bottleneck_shape);
    if (codec == "float32" || codec == "both")
      j["top1"] = split_path_accuracy(pair.head, pair.tail, val, PayloadFormat::float32);
    if (codec == "bq8" || codec == "both") {
      j["top1_bq8"] = split_path_accuracy(pair.head, pair.tail, val, PayloadFormat::bq8);
      if (codec == "bq8" && !j.contains("top1")) j["top1"] = j["top1_bq8"];
    }
    if (codec == "both") j["agreement_bq8"] = codec_agreement(pair.head, pair.tail, val);
  } else {
    auto model = load_model(checkpoint);
    j["role"] = "eval";
    j["name"] = model.name;
    j["model"] = model.name;
    j["input_shape"] = model.input_shape;
    j["top1"] = evaluate_accuracy(model, val);
  }
  write_json(out / "eval.json", j);
  std::cout << j.dump(2) << "\n";
  return kExitOk;
}

std::atomic<bool> g_interrupted{false};

int cmd_serve(const std::string& checkpoint, int port, const std::string& codec,
              const std::string& bind, int64_t max_requests) {
  auto bm = load_split_model(checkpoint);
  auto pair = split(bm);
  auto server =
      serve(pair.tail, static_cast<uint16_t>(port), payload_format_from_name(codec), bind);
  std::cout << "serving tail of " << bm.teacher_ref << " on " << bind << ":" << server->port()
            << " (codec " << codec << ")" << std::endl;
  std::signal(SIGINT, [](int) { g_interrupted.store(true); });
  std::signal(SIGTERM, [](int) { g_interrupted.store(true); });
  while (!g_interrupted.load()) {
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
    if (max_requests > 0 &&
        server->requests_served() + server->errors_sent() >= static_cast<uint64_t>(max_requests))
      break;
  }
  server->stop();
  std::cout << "served " << server->requests_served() << " requests, " << server->errors_sent()
            << " errors\n";
  return kExitOk;
}

Dataset<float> load_images_spec(const std::string& spec) {
  if (spec.rfind("synthetic:", 0) == 0) {  // synthetic:<count>:<seed>
    auto rest = spec.substr(10);
    auto colon = rest.find(':');
    if (colon == std::string::npos)
      throw MissingConfig("--images synthetic spec is synthetic:<count>:<seed>");
    return make_synthetic_dataset<float>(std::stoi(rest.substr(0, colon)),
                                         std::stoull(rest.substr(colon + 1)));
  }
  if (fs::is_directory(spec)) {
    // either a labeled folder (class_* subdirs) or a flat directory of .bft
    for (const auto& e : fs::directory_iterator(spec))
      if (e.is_directory() && e.path().filename().string().rfind("class_", 0) == 0)
        return load_dataset_folder<float>(spec);
    Dataset<float> ds;
    std::vector<std::string> files;
    for (const auto& e : fs::directory_iterator(spec))
      if (e.path().extension() == ".bft") files.push_back(e.path().string());
    if (files.empty()) throw EmptyDataset("no .bft images under " + spec);
    std::sort(files.begin(), files.end());
    auto first = read_bft<float>(files[0]);
    Shape s = first.shape;
    s.insert(s.begin(), static_cast<int>(files.size()));
    ds.images = Tensor<float>(s);
    ds.labels.assign(files.size(), -1);
    const int64_t stride = first.size();
    for (size_t i = 0; i < files.size(); ++i) {
      auto img = i == 0 ? first : read_bft<float>(files[i]);
      if (img.shape != first.shape) throw ShapeError("inconsistent image shapes in " + spec);
      std::copy_n(img.data.data(), stride,
                  ds.images.data.data() + static_cast<int64_t>(i) * stride);
    }
    return ds;
  }
  throw MissingConfig("--images expects a directory or synthetic:<count>:<seed>, got " + spec);
}

int cmd_client(const std::string& checkpoint, const std::string& endpoint,
               const std::string& images, const std::string& codec_name,
               const std::string& report_path, int timeout_ms) {
  auto bm = load_split_model(checkpoint);
  auto pair = split(bm);
  auto colon = endpoint.rfind(':');
  if (colon == std::string::npos) throw MissingConfig("--endpoint must be host:port");
  const std::string host = endpoint.substr(0, colon);
  const int port = std::stoi(endpoint.substr(colon + 1));
  const PayloadFormat codec = payload_format_from_name(codec_name);
  Dataset<float> ds = load_images_spec(images);

  Connection conn(host, static_cast<uint16_t>(port), timeout_ms);
  std::ofstream report;
  if (!report_path.empty()) {
    fs::path p(report_path);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    report.open(report_path);
    if (!report) throw IoError("cannot write " + report_path);
    report << "index,label,payload_bytes,d_head_s,d_net_up_s,d_tail_s,d_net_down_s,total_s\n";
  }
  int agree = 0;
  for (int i = 0; i < ds.size(); ++i) {
    auto img = ds.image(i);
    auto r = infer_remote(pair.head, img, conn, codec, static_cast<uint32_t>(i + 1));
    auto local = infer_local_split(pair.head, pair.tail, img, codec);
    if (r.label == local.label) ++agree;
    if (report.is_open()) {
      char buf[256];
      std::snprintf(buf, sizeof(buf), "%d,%d,%zu,%.9f,%.9f,%.9f,%.9f,%.9f\n", i, r.label,
                    r.payload_bytes.size(), r.breakdown.d_head_s, r.breakdown.d_net_up_s,
                    r.breakdown.d_tail_s, r.breakdown.d_net_down_s, r.breakdown.total_s);
      report << buf;
    }
  }
  std::cout << ds.size() << " images, " << agree << " labels match the local split oracle\n";
  return agree == ds.size() ? kExitOk : kExitInternal;
}

int cmd_simulate(const std::string& config_path, const std::string& out_dir) {
  SimConfig cfg = load_sim_config(config_path);
  auto rows = sweep(cfg.models, cfg.channels, cfg.profiles, cfg.strategies, cfg.response_bytes);
  fs::path out(out_dir);
  fs::create_directories(out / "plots");
  write_sweep_csv((out / "sweep.csv").string(), rows);

  Json summary;
  for (const auto& m : cfg.models) {
    for (const auto& ch : cfg.channels) {
      std::vector<SweepRow> group;
      for (const auto& r : rows)
        if (r.model_name == m.name && r.channel_name == ch.name) group.push_back(r);
      if (group.empty()) continue;
      Json g;
      g["best_strategy"] = strategy_name(choose_strategy(group));
      for (const auto& r : group) {
        Json e;
        e["d_e2e_s"] = r.d_e2e_s;
        e["energy_j"] = r.energy_j;
        e["payload_bytes"] = r.payload_bytes;
        e["top1"] = r.top1;
        g["strategies"][strategy_name(r.strategy)] = e;
      }
      summary[m.name][ch.name] = g;
    }
  }
  write_json(out / "summary.json", summary);

  auto acc = payload_vs_accuracy_series(rows);
  if (!acc.empty())
    write_svg_chart((out / "plots" / "payload_vs_accuracy.svg").string(),
                    "Transferred data size vs. accuracy", "payload [bytes]", "top-1 [%]", acc,
                    true);
  auto delays = delay_vs_rate_series(rows);
  if (!delays.empty())
    write_svg_chart((out / "plots" / "delay_vs_rate.svg").string(), "End-to-end delay vs. rate",
                    "rate [bit/s]", "delay [s]", delays, true);
  std::cout << rows.size() << " sweep rows -> " << (out / "sweep.csv").string() << "\n";
  return kExitOk;
}

int cmd_report(const std::vector<std::string>& runs, const std::string& out_dir) {
  if (runs.empty()) {
    std::cerr << "report: no run directories given\n";
    return kExitMissingArtifact;
  }
  std::vector<AccuracyEntry> entries;
  std::vector<SweepRow> all_rows;
  std::vector<std::string> missing;
  for (const auto& run : runs) {
    fs::path dir(run);
    bool found = false;
    for (const char* name : {"train.json", "eval.json"}) {
      fs::path p = dir / name;
      if (!fs::exists(p)) continue;
      found = true;
      Json j = detail::load_json_file(p.string());
      AccuracyEntry e;
      e.name = j.value("name", dir.filename().string());
      e.model = j.value("model", "");
      e.top1 = j.value("top1", -1.0);
      e.is_reference = j.value("role", "") == "teacher";
      entries.push_back(std::move(e));
    }
    fs::path sweep_csv = dir / "sweep.csv";
    if (fs::exists(sweep_csv)) {
      found = true;
      std::ifstream f(sweep_csv);
      std::string line;
      std::getline(f, line);  // header
      while (std::getline(f, line)) {
        std::istringstream is(line);
        std::string field;
        std::vector<std::string> fields;
        while (std::getline(is, field, ',')) fields.push_back(field);
        if (fields.size() != 11) continue;
        SweepRow r;
        r.model_name = fields[0];
        r.channel_name = fields[1];
        r.channel_rate_bps = std::stod(fields[2]);
        r.split_point = fields[3];
        r.channels = std::stoi(fields[4]);
        r.codec = fields[5];
        r.payload_bytes = std::stoll(fields[6]);
        r.top1 = std::stod(fields[7]);
        r.d_e2e_s = std::stod(fields[8]);
        r.energy_j = std::stod(fields[9]);
        r.strategy = strategy_from_name(fields[10]);
        all_rows.push_back(std::move(r));
      }
    }
    if (!found) missing.push_back(run + " (no train.json/eval.json/sweep.csv)");
  }
  if (!missing.empty()) {
    std::cerr << "report: incomplete runs:\n";
    for (const auto& m : missing) std::cerr << "  " << m << "\n";
    return kExitMissingArtifact;
  }

  fs::path out(out_dir.empty() ? "report" : out_dir);
  fs::create_directories(out);
  if (!entries.empty()) {
    std::string table = render_accuracy_table(entries);
    std::ofstream f(out / "accuracy_table.txt");
    f << table;
    std::cout << table;
    std::ofstream csv(out / "accuracy_table.csv");
    csv << "name,model,top1,reference\n";
    for (const auto& e : entries)
      csv << e.name << "," << e.model << "," << e.top1 << "," << (e.is_reference ? 1 : 0) << "\n";
  }
  if (!all_rows.empty()) {
    fs::create_directories(out / "plots");
    auto acc = payload_vs_accuracy_series(all_rows);
    if (!acc.empty())
      write_svg_chart((out / "plots" / "payload_vs_accuracy.svg").string(),
                      "Transferred data size vs. accuracy", "payload [bytes]", "top-1 [%]", acc,
                      true);
    auto delays = delay_vs_rate_series(all_rows);
    if (!delays.empty())
      write_svg_chart((out / "plots" / "delay_vs_rate.svg").string(),
                      "End-to-end delay vs. rate", "rate [bit/s]", "delay [s]", delays, true);
  }
  std::cout << "report written to " << out.string() << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"split-computing experiment toolkit"};
  app.require_subcommand(1);

  CommonFlags flags;
  std::string checkpoint, codec = "both", endpoint, images, report_csv, bind = "0.0.0.0";
  std::string sim_config, report_out = "report";
  std::vector<std::string> runs;
  int port = 0, timeout_ms = 5000;
  int64_t max_requests = 0;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", flags.config_path, "experiment config JSON");
    cmd->add_option("--seed", flags.seed, "override the config seed");
    cmd->add_option("--out", flags.out_dir, "override the output directory");
  };

  auto* inject_cmd = app.add_subcommand("inject", "replace a teacher prefix with a bottleneck");
  add_common(inject_cmd);
  auto* train_cmd = app.add_subcommand("train", "train a teacher or run a student recipe");
  add_common(train_cmd);
  auto* eval_cmd = app.add_subcommand("eval", "measure accuracy (and codec agreement)");
  add_common(eval_cmd);
  eval_cmd->add_option("--checkpoint", checkpoint, "checkpoint directory")->required();
  eval_cmd->add_option("--codec", codec, "bq8 | float32 | both");

  auto* serve_cmd = app.add_subcommand("serve", "run the tail-model inference server");
  serve_cmd->add_option("--checkpoint", checkpoint, "split checkpoint directory")->required();
  serve_cmd->add_option("--port", port, "TCP port (0 = ephemeral)")->required();
  serve_cmd->add_option("--codec", codec, "advertised codec: bq8 | float32");
  serve_cmd->add_option("--bind", bind, "bind address");
  serve_cmd->add_option("--max-requests", max_requests, "stop after N requests (0 = run forever)");

  auto* client_cmd = app.add_subcommand("client", "stream images through a remote tail");
  client_cmd->add_option("--checkpoint", checkpoint, "split checkpoint directory")->required();
  client_cmd->add_option("--endpoint", endpoint, "host:port")->required();
  client_cmd->add_option("--images", images, "image folder or synthetic:<count>:<seed>")
      ->required();
  client_cmd->add_option("--codec", codec, "bq8 | float32");
  client_cmd->add_option("--report", report_csv, "per-image delay CSV");
  client_cmd->add_option("--timeout-ms", timeout_ms, "response deadline");

  auto* sim_cmd = app.add_subcommand("simulate", "latency/energy sweep over channel models");
  sim_cmd->add_option("--config", sim_config, "simulation config JSON")->required();
  sim_cmd->add_option("--out", report_out, "output directory")->required();

  auto* report_cmd = app.add_subcommand("report", "accuracy tables and sweep plots");
  report_cmd->add_option("--runs", runs, "run directories")->expected(-1);
  report_cmd->add_option("--out", report_out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (inject_cmd->parsed()) return cmd_inject(flags);
    if (train_cmd->parsed()) return cmd_train(flags);
    if (eval_cmd->parsed()) {
      if (codec != "bq8" && codec != "float32" && codec != "both")
        throw MissingConfig("--codec must be bq8, float32 or both");
      return cmd_eval(flags, checkpoint, codec);
    }
    if (serve_cmd->parsed()) {
      if (codec == "both") codec = "bq8";
      return cmd_serve(checkpoint, port, codec, bind, max_requests);
    }
    if (client_cmd->parsed()) {
      if (codec == "both") codec = "bq8";
      return cmd_client(checkpoint, endpoint, images, codec, report_csv, timeout_ms);
    }
    if (sim_cmd->parsed()) return cmd_simulate(sim_config, report_out);
    if (report_cmd->parsed()) return cmd_report(runs, report_out);
    return kExitConfig;
  } catch (const MissingConfig& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const UnknownRecipe& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const UnknownArchitecture& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const InvalidSplitConfig& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const IoError& e) {
    std::cerr << "missing artifact: " << e.what() << "\n";
    return kExitMissingArtifact;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInternal;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInternal;
  }
}
