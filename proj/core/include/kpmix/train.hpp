#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kpmix/config.hpp"
#include "kpmix/decode.hpp"
#include "kpmix/density.hpp"
#include "kpmix/eval.hpp"
#include "kpmix/gradcheck.hpp"
#include "kpmix/model.hpp"
#include "kpmix/synth.hpp"

namespace kpmix {

enum class GroupingMode { random, heuristic, none };

std::string to_string(GroupingMode m);
GroupingMode parse_grouping_mode(const std::string& name);

struct TrainConfig {
  int iterations = 5000;
  int batch_size = 8;
  double learning_rate = 0.01;
  std::vector<int> lr_decay_steps;  // empty: 2/3 and 8/9 of the schedule
  double lr_decay_factor = 0.1;
  double weight_decay = 5e-5;
  double gradient_clip_norm = 7.0;
  int k_g = 3;
  GroupingMode grouping_mode = GroupingMode::random;
  ComponentKind component_kind = ComponentKind::laplace;
  uint64_t seed = 1;
  std::string dataset_path;
  int eval_interval = 0;           // 0 disables in-training eval
  std::string eval_dataset_path;

  // model
  int channels = 32;
  int conv_layers = 8;
  std::vector<int> levels = {3, 4};
  int backbone_width = 32;
  double init_last_scale = 1.0;

  static TrainConfig from_file(const std::string& path);
  static TrainConfig from_flat(const FlatConfig& cfg);
  std::vector<std::pair<std::string, std::string>> to_flat() const;
  std::vector<int> effective_decay_steps() const;
};

double lr_at(const TrainConfig& cfg, int iteration);

struct TrainLogRow {
  int iter = 0;
  double loss = 0.0;
  double underflow = 0.0;
  uint64_t partition_hash = 0;
};

// GenConfig round-trip through the flat sidecar format.
GenConfig genconfig_from_flat(const FlatConfig& cfg);
std::vector<std::pair<std::string, std::string>> genconfig_to_flat(const GenConfig& gen);

// A dataset with images re-rendered from seeds. Loading verifies that the
// regenerated annotations match the stored ones exactly.
struct LoadedDataset {
  GenConfig gen;
  SkeletonSpec skeleton;
  std::vector<SceneRecord> records;
  std::vector<std::vector<double>> images;
  std::vector<std::vector<KeypointSet>> train_gts;  // auxiliary center appended
  std::vector<std::vector<PersonAnnotation>> persons;
};

LoadedDataset load_dataset(const std::string& jsonl_path);

struct TrainResult {
  bool aborted = false;
  int abort_iteration = -1;
  double final_loss = 0.0;
  std::string checkpoint_path;
  std::vector<TrainLogRow> log;
  KeypointModel model;
};

// One SGD training run; writes checkpoint.bin and train_log.csv under
// out_dir. Deterministic given the config (single-threaded).
TrainResult train(const TrainConfig& cfg, const std::string& out_dir);

// SGD step: weight decay folds into the gradient, then one global L2 clip,
// then the update. Returns the pre-clip gradient norm.
double sgd_apply(std::vector<NamedParam>& params, double lr, double weight_decay,
                 double clip_norm);

struct EvalOptions {
  double score_thresh = 1e-4;
  double nms_iou = 0.7;
};

struct SceneEval {
  EvalResult result;
  double duplicate_rate = 0.0;
};

SceneEval evaluate_model(const KeypointModel& model, const LoadedDataset& data,
                         const EvalOptions& opts = {});

void write_train_log_csv(const std::string& path, const std::vector<TrainLogRow>& rows);
void write_eval_csv(const std::string& path, const EvalResult& result);
void write_pr_csv(const std::string& path, const EvalResult& result);

struct SweepRow {
  int k_g = 0;
  double ap = 0.0;  // NaN for an aborted run
  double mean_underflow = 0.0;
  bool aborted = false;
};

std::vector<SweepRow> sweep_kg(const TrainConfig& base, const std::vector<int>& kgs,
                               const std::string& out_dir);
void write_sweep_csv(const std::string& path, const std::vector<SweepRow>& rows);

struct UnderflowRow {
  int k_g = 0;
  ComponentKind kind = ComponentKind::laplace;
  Precision precision = Precision::single_prec;
  double ratio = 0.0;
};

// Mean underflow ratio over the dataset per group size, no training.
std::vector<UnderflowRow> diagnose_underflow(const KeypointModel& model,
                                             const LoadedDataset& data,
                                             const std::vector<int>& kgs, ComponentKind kind,
                                             Precision precision);
void write_underflow_csv(const std::string& path, const std::vector<UnderflowRow>& rows);

struct GradCheckRow {
  std::string op;
  int probes = 0;
  double max_rel_err = 0.0;
};

// Finite-difference checks for every primitive plus the fused loss and the
// end-to-end image -> head -> transforms -> group NLL composite.
std::vector<GradCheckRow> run_gradcheck_suite(int probes, uint64_t seed);
void write_gradcheck_csv(const std::string& path, const std::vector<GradCheckRow>& rows);

}  // namespace kpmix
