#include "kpmix/train.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "kpmix/grouping.hpp"
#include "kpmix/loss_node.hpp"

namespace kpmix {

namespace fs = std::filesystem;

std::string to_string(GroupingMode m) {
  switch (m) {
    case GroupingMode::random: return "random";
    case GroupingMode::heuristic: return "heuristic";
    case GroupingMode::none: return "none";
  }
  return "?";
}

GroupingMode parse_grouping_mode(const std::string& name) {
  if (name == "random") return GroupingMode::random;
  if (name == "heuristic") return GroupingMode::heuristic;
  if (name == "none") return GroupingMode::none;
  throw std::invalid_argument("unknown grouping mode: " + name);
}

namespace {

const std::vector<std::string> kTrainKeys = {
    "iterations",     "batch_size",        "learning_rate",     "lr_decay_steps",
    "lr_decay_factor", "weight_decay",     "gradient_clip_norm", "k_g",
    "grouping_mode",  "component_kind",    "seed",              "dataset_path",
    "eval_interval",  "eval_dataset_path", "channels",          "conv_layers",
    "levels",         "backbone_width",    "init_last_scale"};

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

std::string join_ints(const std::vector<int>& v) {
  std::string s;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(v[i]);
  }
  return s;
}

}  // namespace

TrainConfig TrainConfig::from_file(const std::string& path) {
  return from_flat(read_flat_config(path));
}

TrainConfig TrainConfig::from_flat(const FlatConfig& cfg) {
  cfg_require_known(cfg, kTrainKeys, "train config");
  TrainConfig c;
  c.iterations = cfg_int_or(cfg, "iterations", c.iterations);
  c.batch_size = cfg_int_or(cfg, "batch_size", c.batch_size);
  c.learning_rate = cfg_double_or(cfg, "learning_rate", c.learning_rate);
  c.lr_decay_steps = cfg_ints_or(cfg, "lr_decay_steps", c.lr_decay_steps);
  c.lr_decay_factor = cfg_double_or(cfg, "lr_decay_factor", c.lr_decay_factor);
  c.weight_decay = cfg_double_or(cfg, "weight_decay", c.weight_decay);
  c.gradient_clip_norm = cfg_double_or(cfg, "gradient_clip_norm", c.gradient_clip_norm);
  c.k_g = cfg_int_or(cfg, "k_g", c.k_g);
  c.grouping_mode = parse_grouping_mode(cfg_get_or(cfg, "grouping_mode", "random"));
  c.component_kind = parse_component_kind(cfg_get_or(cfg, "component_kind", "laplace"));
  c.seed = cfg_uint64_or(cfg, "seed", c.seed);
  c.dataset_path = cfg_get_or(cfg, "dataset_path", "");
  c.eval_interval = cfg_int_or(cfg, "eval_interval", c.eval_interval);
  c.eval_dataset_path = cfg_get_or(cfg, "eval_dataset_path", "");
  c.channels = cfg_int_or(cfg, "channels", c.channels);
  c.conv_layers = cfg_int_or(cfg, "conv_layers", c.conv_layers);
  c.levels = cfg_ints_or(cfg, "levels", c.levels);
  c.backbone_width = cfg_int_or(cfg, "backbone_width", c.backbone_width);
  c.init_last_scale = cfg_double_or(cfg, "init_last_scale", c.init_last_scale);
  if (c.iterations < 1 || c.batch_size < 1) {
    throw std::invalid_argument("train config: iterations and batch_size must be positive");
  }
  if (!(c.learning_rate > 0.0)) throw std::invalid_argument("train config: learning_rate must be > 0");
  if (!(c.gradient_clip_norm > 0.0)) {
    throw std::invalid_argument("train config: gradient_clip_norm must be > 0");
  }
  return c;
}

std::vector<std::pair<std::string, std::string>> TrainConfig::to_flat() const {
  return {
      {"iterations", std::to_string(iterations)},
      {"batch_size", std::to_string(batch_size)},
      {"learning_rate", fmt(learning_rate)},
      {"lr_decay_steps", join_ints(effective_decay_steps())},
      {"lr_decay_factor", fmt(lr_decay_factor)},
      {"weight_decay", fmt(weight_decay)},
      {"gradient_clip_norm", fmt(gradient_clip_norm)},
      {"k_g", std::to_string(k_g)},
      {"grouping_mode", to_string(grouping_mode)},
      {"component_kind", to_string(component_kind)},
      {"seed", std::to_string(seed)},
      {"dataset_path", dataset_path},
      {"eval_interval", std::to_string(eval_interval)},
      {"eval_dataset_path", eval_dataset_path},
      {"channels", std::to_string(channels)},
      {"conv_layers", std::to_string(conv_layers)},
      {"levels", join_ints(levels)},
      {"backbone_width", std::to_string(backbone_width)},
      {"init_last_scale", fmt(init_last_scale)},
  };
}

std::vector<int> TrainConfig::effective_decay_steps() const {
  if (!lr_decay_steps.empty()) return lr_decay_steps;
  return {iterations * 2 / 3, iterations * 8 / 9};
}

double lr_at(const TrainConfig& cfg, int iteration) {
  double lr = cfg.learning_rate;
  for (int step : cfg.effective_decay_steps()) {
    if (iteration >= step) lr *= cfg.lr_decay_factor;
  }
  return lr;
}

// ------------------------------------------------------------------ datasets

namespace {

const std::vector<std::string> kGenKeys = {
    "image_side",  "min_persons", "max_persons", "scale_min",  "scale_max",
    "max_iou_min", "max_iou_max", "pose_jitter", "line_width", "noise_level",
    "skeleton",    "scenes",      "base_seed"};

}  // namespace

GenConfig genconfig_from_flat(const FlatConfig& cfg) {
  cfg_require_known(cfg, kGenKeys, "generator config");
  GenConfig g;
  g.image_side = cfg_int_or(cfg, "image_side", g.image_side);
  g.min_persons = cfg_int_or(cfg, "min_persons", g.min_persons);
  g.max_persons = cfg_int_or(cfg, "max_persons", g.max_persons);
  g.scale_min = cfg_double_or(cfg, "scale_min", g.scale_min);
  g.scale_max = cfg_double_or(cfg, "scale_max", g.scale_max);
  g.max_iou_min = cfg_double_or(cfg, "max_iou_min", g.max_iou_min);
  g.max_iou_max = cfg_double_or(cfg, "max_iou_max", g.max_iou_max);
  g.pose_jitter = cfg_double_or(cfg, "pose_jitter", g.pose_jitter);
  g.line_width = cfg_double_or(cfg, "line_width", g.line_width);
  g.noise_level = cfg_double_or(cfg, "noise_level", g.noise_level);
  g.skeleton_name = cfg_get_or(cfg, "skeleton", g.skeleton_name);
  g.validate();
  return g;
}

std::vector<std::pair<std::string, std::string>> genconfig_to_flat(const GenConfig& g) {
  return {
      {"image_side", std::to_string(g.image_side)},
      {"min_persons", std::to_string(g.min_persons)},
      {"max_persons", std::to_string(g.max_persons)},
      {"scale_min", fmt(g.scale_min)},
      {"scale_max", fmt(g.scale_max)},
      {"max_iou_min", fmt(g.max_iou_min)},
      {"max_iou_max", fmt(g.max_iou_max)},
      {"pose_jitter", fmt(g.pose_jitter)},
      {"line_width", fmt(g.line_width)},
      {"noise_level", fmt(g.noise_level)},
      {"skeleton", g.skeleton_name},
  };
}

LoadedDataset load_dataset(const std::string& jsonl_path) {
  LoadedDataset data;
  data.gen = genconfig_from_flat(read_flat_config(jsonl_path + ".config"));
  data.skeleton = data.gen.skeleton();
  data.records = read_dataset(jsonl_path);
  if (data.records.empty()) throw std::runtime_error("load_dataset: empty dataset " + jsonl_path);
  data.images.reserve(data.records.size());
  data.train_gts.reserve(data.records.size());
  data.persons.reserve(data.records.size());
  for (const auto& rec : data.records) {
    Scene scene = sample_scene(data.gen, rec.seed);
    if (scene.persons.size() != rec.persons.size()) {
      throw std::runtime_error("load_dataset: scene does not match its seed (person count)");
    }
    for (size_t i = 0; i < rec.persons.size(); ++i) {
      if (scene.persons[i].keypoints.coords != rec.persons[i].keypoints.coords) {
        throw std::runtime_error("load_dataset: scene does not match its seed (keypoints)");
      }
    }
    std::vector<KeypointSet> gts;
    for (const auto& ann : rec.persons) gts.push_back(append_auxiliary_center(ann));
    data.images.push_back(std::move(scene.image));
    data.train_gts.push_back(std::move(gts));
    data.persons.push_back(rec.persons);
  }
  return data;
}

// ----------------------------------------------------------------- optimizer

double sgd_apply(std::vector<NamedParam>& params, double lr, double weight_decay,
                 double clip_norm) {
  double norm_sq = 0.0;
  for (const auto& p : params) {
    for (size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i] + weight_decay * p.value[i];
      norm_sq += g * g;
    }
  }
  const double norm = std::sqrt(norm_sq);
  const double scale = (clip_norm > 0.0 && norm > clip_norm) ? clip_norm / norm : 1.0;
  for (auto& p : params) {
    for (size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i] + weight_decay * p.value[i];
      p.value[i] -= lr * scale * g;
    }
  }
  return norm;
}

// ------------------------------------------------------------------ training

TrainResult train(const TrainConfig& cfg, const std::string& out_dir) {
  fs::create_directories(out_dir);
  LoadedDataset data = load_dataset(cfg.dataset_path);
  const int side = data.gen.image_side;
  const int k_total = data.skeleton.num_keypoints + 1;

  GroupPartition fixed_partition;
  if (cfg.grouping_mode == GroupingMode::random) {
    if (k_total % cfg.k_g != 0) {
      throw std::invalid_argument("train: k_g must divide K_total=" + std::to_string(k_total));
    }
  } else if (cfg.grouping_mode == GroupingMode::heuristic) {
    fixed_partition = heuristic_partition(data.skeleton);
    for (const auto& g : fixed_partition.groups) {
      if (static_cast<int>(g.size()) != cfg.k_g) {
        throw std::invalid_argument("train: heuristic preset uses groups of size " +
                                    std::to_string(g.size()) + "; set k_g accordingly");
      }
    }
  } else {
    fixed_partition = single_group_partition(k_total);
  }

  HeadConfig hc;
  hc.conv_layers = cfg.conv_layers;
  hc.channels = cfg.channels;
  hc.k_total = k_total;
  hc.levels = cfg.levels;
  hc.init_last_scale = cfg.init_last_scale;
  BackboneConfig bc;
  bc.width = cfg.backbone_width;
  KeypointModel model(hc, bc, side);

  Rng init_rng = derived_rng(cfg.seed, 1);
  Rng partition_rng = derived_rng(cfg.seed, 2);
  Rng batch_rng = derived_rng(cfg.seed, 3);
  model.init_parameters(init_rng);

  const bool do_eval = cfg.eval_interval > 0 && !cfg.eval_dataset_path.empty();
  LoadedDataset eval_data;
  if (do_eval) eval_data = load_dataset(cfg.eval_dataset_path);
  std::ofstream eval_log;
  if (do_eval) {
    eval_log.open(out_dir + "/eval_log.csv");
    eval_log << "iter,ap,ap50,ap75\n";
  }

  TrainResult result;
  const int n_scenes = static_cast<int>(data.records.size());
  const size_t pixels = static_cast<size_t>(side) * side;

  for (int iter = 0; iter < cfg.iterations; ++iter) {
    std::vector<int> batch(static_cast<size_t>(cfg.batch_size));
    for (auto& b : batch) b = batch_rng.uniform_int(n_scenes);

    GroupPartition partition = cfg.grouping_mode == GroupingMode::random
                                   ? sample_partition(k_total, cfg.k_g, partition_rng)
                                   : fixed_partition;

    ad::Tape tape;
    std::vector<ad::Tensor> bound = model.bind(tape);
    std::vector<double> pix(static_cast<size_t>(cfg.batch_size) * pixels);
    for (int b = 0; b < cfg.batch_size; ++b) {
      const auto& img = data.images[static_cast<size_t>(batch[static_cast<size_t>(b)])];
      std::copy(img.begin(), img.end(), pix.begin() + static_cast<long>(b) * pixels);
    }
    ad::Tensor images =
        tape.constant(ad::Shape::nchw(cfg.batch_size, 1, side, side), std::move(pix));
    const KeypointModel::RawMaps raw = model.forward(tape, images, bound);

    ad::Tensor batch_loss;
    double underflow_sum = 0.0;
    for (int b = 0; b < cfg.batch_size; ++b) {
      const TapeField field = model.transform_parameters(tape, raw, b);
      const auto& gts = data.train_gts[static_cast<size_t>(batch[static_cast<size_t>(b)])];
      TapeLossResult r = cfg.grouping_mode == GroupingMode::none
                             ? full_nll_linear_single_node(tape, field, gts, cfg.component_kind)
                             : group_nll_node(tape, field, gts, partition, cfg.component_kind);
      underflow_sum += r.report.underflow;
      batch_loss = batch_loss.defined() ? tape.add(batch_loss, r.loss) : r.loss;
    }
    ad::Tensor loss = tape.scalar_mul(batch_loss, 1.0 / cfg.batch_size);
    const double loss_value = loss.scalar();

    result.log.push_back(
        {iter, loss_value, underflow_sum / cfg.batch_size, partition.hash()});

    if (!std::isfinite(loss_value)) {
      result.aborted = true;
      result.abort_iteration = iter;
      result.final_loss = loss_value;
      break;
    }

    model.zero_param_grads();
    tape.backward(loss);
    model.accumulate_grads(bound);
    sgd_apply(model.params(), lr_at(cfg, iter), cfg.weight_decay, cfg.gradient_clip_norm);
    result.final_loss = loss_value;

    if (do_eval && ((iter + 1) % cfg.eval_interval == 0 || iter + 1 == cfg.iterations)) {
      const SceneEval ev = evaluate_model(model, eval_data);
      eval_log << (iter + 1) << "," << ev.result.ap << "," << ev.result.ap50 << ","
               << ev.result.ap75 << "\n";
      eval_log.flush();
    }
  }

  result.checkpoint_path = out_dir + "/checkpoint.bin";
  model.save_checkpoint(result.checkpoint_path,
                        {{"kind", to_string(cfg.component_kind)},
                         {"skeleton", data.gen.skeleton_name},
                         {"grouping_mode", to_string(cfg.grouping_mode)},
                         {"k_g", std::to_string(cfg.k_g)},
                         {"seed", std::to_string(cfg.seed)},
                         {"iterations_run", std::to_string(result.aborted
                                                               ? result.abort_iteration
                                                               : cfg.iterations)}});
  write_train_log_csv(out_dir + "/train_log.csv", result.log);
  if (result.aborted) {
    std::ofstream marker(out_dir + "/aborted.txt");
    marker << "non-finite loss at iteration " << result.abort_iteration << "\n"
           << "grouping_mode " << to_string(cfg.grouping_mode) << "\n"
           << "partition_hash " << result.log.back().partition_hash << "\n";
  }
  result.model = std::move(model);
  return result;
}

// ---------------------------------------------------------------- evaluation

SceneEval evaluate_model(const KeypointModel& model, const LoadedDataset& data,
                         const EvalOptions& opts) {
  const int k_out = data.skeleton.num_keypoints;
  std::vector<std::vector<PosePrediction>> prenms, kept;
  prenms.reserve(data.records.size());
  kept.reserve(data.records.size());
  for (const auto& img : data.images) {
    const MixtureField field = model.infer(img);
    std::vector<PosePrediction> cands = decode(field, opts.score_thresh, k_out);
    kept.push_back(nms(cands, opts.nms_iou));
    prenms.push_back(std::move(cands));
  }
  SceneEval out;
  out.result = average_precision(kept, data.persons, data.skeleton);
  out.duplicate_rate = duplicate_assignment_rate(prenms, data.persons, data.skeleton);
  return out;
}

// ------------------------------------------------------------------- writers

void write_train_log_csv(const std::string& path, const std::vector<TrainLogRow>& rows) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << "iter,loss,underflow_ratio,partition_hash\n";
  os.precision(17);
  for (const auto& r : rows) {
    os << r.iter << "," << r.loss << "," << r.underflow << "," << r.partition_hash << "\n";
  }
}

void write_eval_csv(const std::string& path, const EvalResult& result) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os.precision(17);
  os << "metric,value\n";
  os << "ap," << result.ap << "\n";
  os << "ap50," << result.ap50 << "\n";
  os << "ap75," << result.ap75 << "\n";
}

void write_pr_csv(const std::string& path, const EvalResult& result) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os.precision(17);
  os << "threshold,recall,precision\n";
  for (const auto& c : result.curves) {
    for (size_t i = 0; i < c.recall.size(); ++i) {
      os << c.threshold << "," << c.recall[i] << "," << c.precision[i] << "\n";
    }
  }
}

// -------------------------------------------------------------------- sweeps

std::vector<SweepRow> sweep_kg(const TrainConfig& base, const std::vector<int>& kgs,
                               const std::string& out_dir) {
  if (base.eval_dataset_path.empty()) {
    throw std::invalid_argument("sweep_kg: eval_dataset_path must be set");
  }
  LoadedDataset eval_data = load_dataset(base.eval_dataset_path);
  std::vector<SweepRow> rows;
  for (int kg : kgs) {
    TrainConfig cfg = base;
    cfg.k_g = kg;
    const std::string run_dir = out_dir + "/kg" + std::to_string(kg);
    const TrainResult res = train(cfg, run_dir);
    SweepRow row;
    row.k_g = kg;
    row.aborted = res.aborted;
    double mean_under = 0.0;
    for (const auto& r : res.log) mean_under += r.underflow;
    row.mean_underflow = res.log.empty() ? 0.0 : mean_under / static_cast<double>(res.log.size());
    row.ap = res.aborted ? std::numeric_limits<double>::quiet_NaN()
                         : evaluate_model(res.model, eval_data).result.ap;
    rows.push_back(row);
  }
  return rows;
}

void write_sweep_csv(const std::string& path, const std::vector<SweepRow>& rows) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os.precision(17);
  os << "k_g,ap,mean_underflow_ratio\n";
  for (const auto& r : rows) {
    os << r.k_g << ",";
    if (r.aborted) {
      os << "NaN";
    } else {
      os << r.ap;
    }
    os << "," << r.mean_underflow << "\n";
  }
}

std::vector<UnderflowRow> diagnose_underflow(const KeypointModel& model,
                                             const LoadedDataset& data,
                                             const std::vector<int>& kgs, ComponentKind kind,
                                             Precision precision) {
  const int k_total = data.skeleton.num_keypoints + 1;
  std::vector<UnderflowRow> rows;
  for (int kg : kgs) {
    if (k_total % kg != 0) {
      throw std::invalid_argument("diagnose_underflow: k_g=" + std::to_string(kg) +
                                  " does not divide K_total=" + std::to_string(k_total));
    }
    const GroupPartition partition = consecutive_partition(k_total, kg);
    double sum = 0.0;
    for (size_t s = 0; s < data.records.size(); ++s) {
      const MixtureField field = model.infer(data.images[s]);
      sum += underflow_ratio_partition(field, data.train_gts[s], partition, kind, precision);
    }
    rows.push_back({kg, kind, precision, sum / static_cast<double>(data.records.size())});
  }
  return rows;
}

void write_underflow_csv(const std::string& path, const std::vector<UnderflowRow>& rows) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os.precision(17);
  os << "K_g,kind,precision,ratio\n";
  for (const auto& r : rows) {
    os << r.k_g << "," << to_string(r.kind) << "," << to_string(r.precision) << "," << r.ratio
       << "\n";
  }
}

void write_gradcheck_csv(const std::string& path, const std::vector<GradCheckRow>& rows) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os.precision(17);
  os << "op,probes,max_rel_err\n";
  for (const auto& r : rows) os << r.op << "," << r.probes << "," << r.max_rel_err << "\n";
}

}  // namespace kpmix
