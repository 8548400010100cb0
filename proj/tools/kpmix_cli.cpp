#include <cstdint>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "kpmix/config.hpp"
#include "kpmix/grouping.hpp"
#include "kpmix/synth.hpp"
#include "kpmix/train.hpp"

namespace fs = std::filesystem;
using namespace kpmix;

namespace {

int cmd_generate_data(const std::string& config_path, const std::string& out_path) {
  const FlatConfig cfg = read_flat_config(config_path);
  const GenConfig gen = genconfig_from_flat(cfg);
  const int scenes = cfg_int_or(cfg, "scenes", 100);
  const uint64_t base_seed = cfg_uint64_or(cfg, "base_seed", 1);

  std::vector<Scene> out;
  out.reserve(static_cast<size_t>(scenes));
  for (int i = 0; i < scenes; ++i) {
    uint64_t s = base_seed + static_cast<uint64_t>(i);
    out.push_back(sample_scene(gen, splitmix64(s)));
  }
  write_dataset(out_path, out);
  auto sidecar = genconfig_to_flat(gen);
  sidecar.emplace_back("scenes", std::to_string(scenes));
  sidecar.emplace_back("base_seed", std::to_string(base_seed));
  write_flat_config(out_path + ".config", sidecar);
  std::cout << "wrote " << scenes << " scenes to " << out_path << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& out_dir) {
  const TrainConfig cfg = TrainConfig::from_file(config_path);
  const TrainResult res = train(cfg, out_dir);
  if (res.aborted) {
    std::cerr << "train: non-finite loss at iteration " << res.abort_iteration
              << " (grouping_mode " << to_string(cfg.grouping_mode) << "); aborted\n";
    return 2;
  }
  std::cout << "trained " << cfg.iterations << " iterations, final loss " << res.final_loss
            << ", checkpoint " << res.checkpoint_path << "\n";
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& data_path,
             const std::string& out_csv, double score_thresh, double nms_iou) {
  std::map<std::string, std::string> meta;
  const KeypointModel model = KeypointModel::load_checkpoint(checkpoint, &meta);
  const LoadedDataset data = load_dataset(data_path);
  EvalOptions opts;
  opts.score_thresh = score_thresh;
  opts.nms_iou = nms_iou;
  const SceneEval ev = evaluate_model(model, data, opts);
  write_eval_csv(out_csv, ev.result);
  const std::string pr_path = out_csv + ".pr.csv";
  write_pr_csv(pr_path, ev.result);
  std::cout << "ap " << ev.result.ap << " ap50 " << ev.result.ap50 << " ap75 " << ev.result.ap75
            << "\nwrote " << out_csv << " and " << pr_path << "\n";
  return 0;
}

int cmd_sweep_kg(const std::string& config_path, const std::vector<int>& kgs,
                 const std::string& out_dir) {
  const TrainConfig base = TrainConfig::from_file(config_path);
  fs::create_directories(out_dir);
  const auto rows = sweep_kg(base, kgs, out_dir);
  const std::string csv = out_dir + "/sweep_kg.csv";
  write_sweep_csv(csv, rows);
  std::cout << "wrote " << csv << "\n";
  return 0;
}

int cmd_diagnose(const std::string& checkpoint, const std::string& data_path,
                 const std::vector<int>& kgs, const std::string& precision,
                 const std::string& out_csv) {
  std::map<std::string, std::string> meta;
  const KeypointModel model = KeypointModel::load_checkpoint(checkpoint, &meta);
  const LoadedDataset data = load_dataset(data_path);
  const ComponentKind kind =
      parse_component_kind(meta.count("kind") ? meta["kind"] : "laplace");
  const auto rows = diagnose_underflow(model, data, kgs, kind, parse_precision(precision));
  write_underflow_csv(out_csv, rows);
  std::cout << "wrote " << out_csv << "\n";
  return 0;
}

int cmd_gradcheck(int probes, uint64_t seed, const std::string& out_csv) {
  const auto rows = run_gradcheck_suite(probes, seed);
  if (!out_csv.empty()) write_gradcheck_csv(out_csv, rows);
  std::cout << "op,probes,max_rel_err\n";
  double worst = 0.0;
  for (const auto& r : rows) {
    std::cout << r.op << "," << r.probes << "," << r.max_rel_err << "\n";
    worst = std::max(worst, r.max_rel_err);
  }
  return worst < 1e-4 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mixture-density multi-person keypoint estimation toolkit"};
  app.require_subcommand(1);

  std::string config_path, out_path, checkpoint, data_path, precision = "single";
  std::string kg_list = "1,2,3,6";
  double score_thresh = 1e-4, nms_iou = 0.7;
  int probes = 64;
  uint64_t gc_seed = 7;

  auto* gen = app.add_subcommand("generate-data", "write a seeded JSON-lines scene dataset");
  gen->add_option("--config", config_path, "generator config file")->required();
  gen->add_option("--out", out_path, "output JSONL path")->required();

  auto* tr = app.add_subcommand("train", "run one SGD training loop");
  tr->add_option("--config", config_path, "train config file")->required();
  tr->add_option("--out", out_path, "output directory")->required();

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint with OKS-AP");
  ev->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  ev->add_option("--data", data_path, "JSONL dataset")->required();
  ev->add_option("--out", out_path, "output CSV (metric,value)")->required();
  ev->add_option("--score-thresh", score_thresh, "decode confidence threshold");
  ev->add_option("--nms-iou", nms_iou, "NMS IoU threshold");

  auto* sw = app.add_subcommand("sweep-kg", "train once per group size and tabulate");
  sw->add_option("--config", config_path, "base train config file")->required();
  sw->add_option("--kg", kg_list, "comma-separated group sizes");
  sw->add_option("--out", out_path, "output directory")->required();

  auto* di = app.add_subcommand("diagnose-underflow", "underflow ratios per group size");
  di->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  di->add_option("--data", data_path, "JSONL dataset")->required();
  di->add_option("--kg", kg_list, "comma-separated group sizes");
  di->add_option("--precision", precision, "single|double");
  di->add_option("--out", out_path, "output CSV")->required();

  auto* gc = app.add_subcommand("gradcheck", "finite-difference checks for every primitive");
  gc->add_option("--probes", probes, "probes per operation");
  gc->add_option("--seed", gc_seed, "rng seed");
  gc->add_option("--out", out_path, "optional output CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  auto parse_kgs = [&]() {
    std::vector<int> kgs;
    std::stringstream ss(kg_list);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      if (!tok.empty()) kgs.push_back(std::stoi(tok));
    }
    return kgs;
  };

  try {
    if (gen->parsed()) return cmd_generate_data(config_path, out_path);
    if (tr->parsed()) return cmd_train(config_path, out_path);
    if (ev->parsed()) return cmd_eval(checkpoint, data_path, out_path, score_thresh, nms_iou);
    if (sw->parsed()) return cmd_sweep_kg(config_path, parse_kgs(), out_path);
    if (di->parsed()) return cmd_diagnose(checkpoint, data_path, parse_kgs(), precision, out_path);
    if (gc->parsed()) return cmd_gradcheck(probes, gc_seed, out_path);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
