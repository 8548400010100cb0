#include "kpmix/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace kpmix {

double softplus_inverse(double y) {
  if (!(y > 0.0)) throw std::invalid_argument("softplus_inverse: y must be positive");
  if (y > 30.0) return y;  // softplus(y) == y to double precision here
  return std::log(std::expm1(y));
}

int BackboneConfig::stage_channels(int stage) const {
  int ch = 8;
  for (int i = 1; i < stage; ++i) ch = std::min(width, ch * 2);
  return std::min(width, ch);
}

KeypointModel::KeypointModel(HeadConfig head, BackboneConfig backbone, int image_side)
    : head_(std::move(head)), backbone_(backbone), image_side_(image_side) {
  if (head_.conv_layers < 1) throw std::invalid_argument("HeadConfig: conv_layers must be >= 1");
  if (head_.k_total < 1) throw std::invalid_argument("HeadConfig: k_total must be >= 1");
  pyramid_ = PyramidSpec::for_side(image_side_, head_.levels);
  anchors_ = GridAnchors::make(pyramid_);
  const int feat_ch = backbone_.stage_channels(head_.levels.front());
  for (int l : head_.levels) {
    if (backbone_.stage_channels(l) != feat_ch) {
      throw std::invalid_argument("KeypointModel: backbone channels differ across used levels");
    }
  }
  build_params();
}

void KeypointModel::build_params() {
  params_.clear();
  const int max_level = head_.levels.back();
  int in_ch = 1;
  for (int stage = 1; stage <= max_level; ++stage) {
    const int out_ch = backbone_.stage_channels(stage);
    params_.push_back({"backbone.stage" + std::to_string(stage) + ".weight",
                       ad::Shape::nchw(out_ch, in_ch, 3, 3), {}, {}});
    params_.push_back({"backbone.stage" + std::to_string(stage) + ".bias",
                       ad::Shape::vec(out_ch), {}, {}});
    in_ch = out_ch;
  }
  head_first_param_ = static_cast<int>(params_.size());
  for (int layer = 0; layer < head_.conv_layers; ++layer) {
    const bool last = layer == head_.conv_layers - 1;
    const int out_ch = last ? head_.out_channels() : head_.channels;
    params_.push_back({"head.conv" + std::to_string(layer) + ".weight",
                       ad::Shape::nchw(out_ch, in_ch, 3, 3), {}, {}});
    params_.push_back({"head.conv" + std::to_string(layer) + ".bias",
                       ad::Shape::vec(out_ch), {}, {}});
    in_ch = out_ch;
  }
  for (auto& p : params_) {
    p.value.assign(static_cast<size_t>(p.shape.numel()), 0.0);
    p.grad.assign(p.value.size(), 0.0);
  }
}

size_t KeypointModel::num_scalar_params() const {
  size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

void KeypointModel::zero_param_grads() {
  for (auto& p : params_) std::fill(p.grad.begin(), p.grad.end(), 0.0);
}

void KeypointModel::init_parameters(Rng& rng) {
  const int k2 = 2 * head_.k_total;
  for (auto& p : params_) {
    const bool is_weight = p.name.ends_with(".weight");
    const bool is_last = p.name.starts_with("head.conv" + std::to_string(head_.conv_layers - 1));
    if (is_weight) {
      const int fan_in = p.shape.d[1] * 3 * 3;
      double limit = std::sqrt(3.0 / fan_in);
      if (is_last) limit *= head_.init_last_scale;
      for (auto& v : p.value) v = rng.uniform(-limit, limit);
    } else {
      std::fill(p.value.begin(), p.value.end(), 0.0);
      if (is_last) {
        const double gamma_bias =
            softplus_inverse(head_.init_gamma_frac * image_side_ - head_.gamma_floor);
        const double o_bias = std::log(head_.init_o / (1.0 - head_.init_o));
        for (int c = 0; c < static_cast<int>(p.value.size()); ++c) {
          if (c >= k2 && c < 2 * k2) p.value[static_cast<size_t>(c)] = gamma_bias;
          if (c == 2 * k2) p.value[static_cast<size_t>(c)] = o_bias;
        }
      }
    }
  }
}

std::vector<ad::Tensor> KeypointModel::bind(ad::Tape& tape, bool requires_grad) const {
  std::vector<ad::Tensor> bound;
  bound.reserve(params_.size());
  for (const auto& p : params_) {
    bound.push_back(tape.variable(p.shape, p.value, requires_grad));
  }
  return bound;
}

void KeypointModel::accumulate_grads(const std::vector<ad::Tensor>& bound) {
  if (bound.size() != params_.size()) {
    throw std::invalid_argument("accumulate_grads: bound tensor count mismatch");
  }
  for (size_t i = 0; i < params_.size(); ++i) {
    const auto& g = bound[i].grad();
    auto& dst = params_[i].grad;
    for (size_t j = 0; j < dst.size(); ++j) dst[j] += g[j];
  }
}

KeypointModel::RawMaps KeypointModel::forward(ad::Tape& tape, const ad::Tensor& image,
                                              const std::vector<ad::Tensor>& bound) const {
  if (image.shape().nd != 4 || image.shape().d[1] != 1 ||
      image.shape().d[2] != image_side_ || image.shape().d[3] != image_side_) {
    throw std::invalid_argument("forward: expected (N,1," + std::to_string(image_side_) + "," +
                                std::to_string(image_side_) + "), got " + image.shape().str());
  }
  const int max_level = head_.levels.back();
  RawMaps raw;
  ad::Tensor x = image;
  std::vector<ad::Tensor> feats;
  for (int stage = 1; stage <= max_level; ++stage) {
    const size_t wi = static_cast<size_t>((stage - 1) * 2);
    x = tape.swish(tape.conv2d_3x3(x, bound[wi], bound[wi + 1], /*stride=*/2));
    if (std::find(head_.levels.begin(), head_.levels.end(), stage) != head_.levels.end()) {
      feats.push_back(x);
    }
  }
  for (const auto& feat : feats) {
    ad::Tensor h = feat;
    for (int layer = 0; layer < head_.conv_layers; ++layer) {
      const size_t wi = static_cast<size_t>(head_first_param_ + layer * 2);
      h = tape.conv2d_3x3(h, bound[wi], bound[wi + 1], /*stride=*/1);
      if (layer + 1 < head_.conv_layers) h = tape.swish(h);
    }
    raw.levels.push_back(h);
  }
  return raw;
}

TapeField KeypointModel::transform_parameters(ad::Tape& tape, const RawMaps& raw,
                                              int batch_index) const {
  if (raw.levels.size() != pyramid_.levels.size()) {
    throw std::invalid_argument("transform_parameters: level count mismatch");
  }
  const int k2 = 2 * head_.k_total;
  std::vector<ad::Tensor> mu_parts, gamma_parts, o_parts;
  int anchor_off = 0;
  for (size_t li = 0; li < raw.levels.size(); ++li) {
    const auto& lv = pyramid_.levels[li];
    const int cells = lv.grid_h * lv.grid_w;
    const double s = PyramidSpec::level_scale(lv.level);

    ad::Tensor r = tape.slice_batch(raw.levels[li], batch_index);
    ad::Tensor mu_rows = tape.rows_from_chw(tape.channel_slice(r, 0, k2));
    ad::Tensor gm_rows = tape.rows_from_chw(tape.channel_slice(r, k2, 2 * k2));
    ad::Tensor o_rows = tape.rows_from_chw(tape.channel_slice(r, 2 * k2, 2 * k2 + 1));

    std::vector<double> anchor(static_cast<size_t>(cells) * k2);
    for (int c = 0; c < cells; ++c) {
      const double ax = anchors_.x(anchor_off + c);
      const double ay = anchors_.y(anchor_off + c);
      for (int j = 0; j < head_.k_total; ++j) {
        anchor[static_cast<size_t>(c) * k2 + 2 * j] = ax;
        anchor[static_cast<size_t>(c) * k2 + 2 * j + 1] = ay;
      }
    }
    ad::Tensor anchor_t = tape.constant(ad::Shape::mat(cells, k2), std::move(anchor));

    mu_parts.push_back(tape.add(tape.scalar_mul(mu_rows, s), anchor_t));
    gamma_parts.push_back(tape.add_scalar(tape.softplus(gm_rows), head_.gamma_floor));
    o_parts.push_back(tape.sigmoid(tape.reshape(o_rows, ad::Shape::vec(cells))));
    anchor_off += cells;
  }
  TapeField f;
  f.mu = tape.concat_rows(mu_parts);
  f.gamma = tape.concat_rows(gamma_parts);
  f.o = tape.concat_rows(o_parts);
  return f;
}

MixtureField KeypointModel::field_values(const TapeField& f) const {
  return MixtureField::from_o(head_.k_total, f.mu.val(), f.gamma.val(), f.o.val());
}

MixtureField KeypointModel::infer(const std::vector<double>& image) const {
  ad::Tape tape;
  ad::Tensor img = tape.constant(ad::Shape::nchw(1, 1, image_side_, image_side_), image);
  const auto bound = bind(tape, /*requires_grad=*/false);
  const RawMaps raw = forward(tape, img, bound);
  return field_values(transform_parameters(tape, raw, 0));
}

// ------------------------------------------------------------- checkpointing

namespace {

void write_le_doubles(std::ostream& os, const std::vector<double>& v) {
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(v.data()),
             static_cast<std::streamsize>(v.size() * sizeof(double)));
  } else {
    for (double d : v) {
      uint64_t u;
      std::memcpy(&u, &d, 8);
      char b[8];
      for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((u >> (8 * i)) & 0xff);
      os.write(b, 8);
    }
  }
}

void read_le_doubles(std::istream& is, std::vector<double>& v) {
  if constexpr (std::endian::native == std::endian::little) {
    is.read(reinterpret_cast<char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
  } else {
    for (double& d : v) {
      char b[8];
      is.read(b, 8);
      uint64_t u = 0;
      for (int i = 0; i < 8; ++i) u |= static_cast<uint64_t>(static_cast<uint8_t>(b[i])) << (8 * i);
      std::memcpy(&d, &u, 8);
    }
  }
  if (!is) throw std::runtime_error("checkpoint: truncated tensor data");
}

std::string fmt_double(double v) {
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

std::vector<int> split_ints(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(std::stoi(tok));
  return out;
}

}  // namespace

void KeypointModel::save_checkpoint(
    const std::string& path,
    const std::vector<std::pair<std::string, std::string>>& extra_meta) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("save_checkpoint: cannot open " + path);
  os << "kpmix-checkpoint-v1\n";
  os << "meta image_side " << image_side_ << "\n";
  os << "meta levels " << join_ints(head_.levels) << "\n";
  os << "meta conv_layers " << head_.conv_layers << "\n";
  os << "meta channels " << head_.channels << "\n";
  os << "meta k_total " << head_.k_total << "\n";
  os << "meta backbone_width " << backbone_.width << "\n";
  os << "meta gamma_floor " << fmt_double(head_.gamma_floor) << "\n";
  os << "meta init_gamma_frac " << fmt_double(head_.init_gamma_frac) << "\n";
  os << "meta init_o " << fmt_double(head_.init_o) << "\n";
  os << "meta init_last_scale " << fmt_double(head_.init_last_scale) << "\n";
  for (const auto& [k, v] : extra_meta) os << "meta " << k << " " << v << "\n";
  for (const auto& p : params_) {
    os << "tensor " << p.name;
    for (int i = 0; i < p.shape.nd; ++i) os << " " << p.shape.d[static_cast<size_t>(i)];
    os << "\n";
  }
  os << "end\n";
  for (const auto& p : params_) write_le_doubles(os, p.value);
  if (!os) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

KeypointModel KeypointModel::load_checkpoint(const std::string& path,
                                             std::map<std::string, std::string>* extra_meta) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("load_checkpoint: cannot open " + path);
  std::string line;
  if (!std::getline(is, line) || line != "kpmix-checkpoint-v1") {
    throw std::runtime_error("load_checkpoint: bad magic in " + path);
  }
  std::map<std::string, std::string> meta;
  std::vector<std::pair<std::string, ad::Shape>> tensors;
  while (std::getline(is, line)) {
    if (line == "end") break;
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "meta") {
      std::string key;
      ls >> key;
      std::string value;
      std::getline(ls, value);
      if (!value.empty() && value.front() == ' ') value.erase(0, 1);
      meta[key] = value;
    } else if (tag == "tensor") {
      std::string name;
      ls >> name;
      ad::Shape s;
      s.nd = 0;
      int d;
      while (ls >> d) s.d[static_cast<size_t>(s.nd++)] = d;
      if (s.nd == 0) throw std::runtime_error("load_checkpoint: tensor without shape");
      tensors.emplace_back(name, s);
    } else {
      throw std::runtime_error("load_checkpoint: unexpected header line: " + line);
    }
  }

  HeadConfig hc;
  BackboneConfig bc;
  hc.levels = split_ints(meta.at("levels"));
  hc.conv_layers = std::stoi(meta.at("conv_layers"));
  hc.channels = std::stoi(meta.at("channels"));
  hc.k_total = std::stoi(meta.at("k_total"));
  hc.gamma_floor = std::stod(meta.at("gamma_floor"));
  hc.init_gamma_frac = std::stod(meta.at("init_gamma_frac"));
  hc.init_o = std::stod(meta.at("init_o"));
  if (meta.count("init_last_scale")) hc.init_last_scale = std::stod(meta.at("init_last_scale"));
  bc.width = std::stoi(meta.at("backbone_width"));
  const int side = std::stoi(meta.at("image_side"));

  KeypointModel model(hc, bc, side);
  if (tensors.size() != model.params_.size()) {
    throw std::runtime_error("load_checkpoint: tensor count mismatch");
  }
  for (size_t i = 0; i < tensors.size(); ++i) {
    if (tensors[i].first != model.params_[i].name ||
        !(tensors[i].second == model.params_[i].shape)) {
      throw std::runtime_error("load_checkpoint: tensor " + tensors[i].first +
                               " does not match the model layout");
    }
  }
  for (auto& p : model.params_) read_le_doubles(is, p.value);
  if (extra_meta) *extra_meta = std::move(meta);
  return model;
}

}  // namespace kpmix
