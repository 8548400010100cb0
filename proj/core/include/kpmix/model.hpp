#pragma once

#include <map>
#include <string>
#include <vector>

#include "kpmix/rng.hpp"
#include "kpmix/tensor.hpp"
#include "kpmix/types.hpp"

namespace kpmix {

struct HeadConfig {
  int conv_layers = 8;           // 3x3 convs, Swish after all but the last
  int channels = 32;
  int k_total = 6;               // keypoints incl. the auxiliary center
  std::vector<int> levels = {3, 4};
  double gamma_floor = 1e-3;     // px, added after softplus
  double init_gamma_frac = 0.25; // initial gamma ~ frac * image_side
  double init_o = 0.01;
  double init_last_scale = 1.0;  // last-layer weight init relative to fan-in scale

  int out_channels() const { return 4 * k_total + 1; }  // mu', gamma', o'
};

// Strided conv encoder standing in for the full backbone: stage i halves the
// resolution and has min(width, 8 * 2^(i-1)) channels.
struct BackboneConfig {
  int width = 32;

  int stage_channels(int stage) const;
};

struct NamedParam {
  std::string name;
  ad::Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
};

// The mixture field of one image on the tape, differentiable end to end.
struct TapeField {
  ad::Tensor mu;     // (M, 2K) pixels
  ad::Tensor gamma;  // (M, 2K) positive
  ad::Tensor o;      // (M) in (0,1)
};

class KeypointModel {
public:
  KeypointModel() = default;
  KeypointModel(HeadConfig head, BackboneConfig backbone, int image_side);

  void init_parameters(Rng& rng);

  std::vector<NamedParam>& params() { return params_; }
  const std::vector<NamedParam>& params() const { return params_; }
  size_t num_scalar_params() const;
  void zero_param_grads();

  // Copies parameter values onto the tape; order matches params().
  std::vector<ad::Tensor> bind(ad::Tape& tape, bool requires_grad = true) const;
  // Adds the bound tensors' gradients into params()[i].grad.
  void accumulate_grads(const std::vector<ad::Tensor>& bound);

  struct RawMaps {
    std::vector<ad::Tensor> levels;  // (N, 4K+1, Hl, Wl), pyramid order
  };
  RawMaps forward(ad::Tape& tape, const ad::Tensor& image,
                  const std::vector<ad::Tensor>& bound) const;

  // mu = anchor + s * mu', gamma = softplus(gamma') + floor, o = sigmoid(o').
  TapeField transform_parameters(ad::Tape& tape, const RawMaps& raw, int batch_index) const;

  // Detached field with pi normalized over all levels.
  MixtureField field_values(const TapeField& f) const;

  // Forward-only convenience for one image.
  MixtureField infer(const std::vector<double>& image) const;

  const HeadConfig& head() const { return head_; }
  const BackboneConfig& backbone() const { return backbone_; }
  int image_side() const { return image_side_; }
  const PyramidSpec& pyramid() const { return pyramid_; }
  const GridAnchors& anchors() const { return anchors_; }

  void save_checkpoint(const std::string& path,
                       const std::vector<std::pair<std::string, std::string>>& extra_meta = {}) const;
  static KeypointModel load_checkpoint(const std::string& path,
                                       std::map<std::string, std::string>* extra_meta = nullptr);

private:
  HeadConfig head_;
  BackboneConfig backbone_;
  int image_side_ = 0;
  PyramidSpec pyramid_;
  GridAnchors anchors_;
  std::vector<NamedParam> params_;
  int head_first_param_ = 0;  // index of head.conv0.weight in params_

  void build_params();
};

// Numerically inverts softplus; y must be positive.
double softplus_inverse(double y);

}  // namespace kpmix
