#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace kpmix::ad {

// Up to 4 dims, (batch, channel, height, width) for feature maps.
struct Shape {
  std::array<int, 4> d{1, 1, 1, 1};
  int nd = 1;

  static Shape scalar() { return Shape{{1, 1, 1, 1}, 1}; }
  static Shape vec(int n) { return Shape{{n, 1, 1, 1}, 1}; }
  static Shape mat(int r, int c) { return Shape{{r, c, 1, 1}, 2}; }
  static Shape nchw(int n, int c, int h, int w) { return Shape{{n, c, h, w}, 4}; }

  int numel() const {
    int n = 1;
    for (int i = 0; i < nd; ++i) n *= d[static_cast<size_t>(i)];
    return n;
  }
  bool operator==(const Shape& o) const {
    if (nd != o.nd) return false;
    for (int i = 0; i < nd; ++i) {
      if (d[static_cast<size_t>(i)] != o.d[static_cast<size_t>(i)]) return false;
    }
    return true;
  }
  std::string str() const;
};

struct TensorData {
  Shape shape;
  std::vector<double> val;
  std::vector<double> grad;  // sized with val when requires_grad
  bool requires_grad = false;
};

// Value-semantic handle onto tape-owned storage.
class Tensor {
public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorData> p) : p_(std::move(p)) {}

  bool defined() const { return p_ != nullptr; }
  const Shape& shape() const { return p_->shape; }
  std::vector<double>& val() { return p_->val; }
  const std::vector<double>& val() const { return p_->val; }
  std::vector<double>& grad() { return p_->grad; }
  const std::vector<double>& grad() const { return p_->grad; }
  bool requires_grad() const { return p_->requires_grad; }
  double scalar() const;

  std::shared_ptr<TensorData> ptr() const { return p_; }

private:
  std::shared_ptr<TensorData> p_;
};

// Reverse-mode tape. Single recorder per tape; independent tapes are
// independent threads' business. Replay order is the recording order,
// reversed, so gradients are bitwise reproducible run to run.
class Tape {
public:
  Tensor variable(const Shape& s, std::vector<double> v, bool requires_grad = true);
  Tensor constant(const Shape& s, std::vector<double> v);
  Tensor zeros(const Shape& s, bool requires_grad = false);

  // -- feature-map primitives --
  Tensor conv2d_3x3(const Tensor& x, const Tensor& w, const Tensor& b, int stride = 1,
                    int pad = 1);
  Tensor swish(const Tensor& x);
  Tensor softplus(const Tensor& x);
  Tensor sigmoid(const Tensor& x);

  // -- elementwise --
  Tensor exp(const Tensor& x);
  Tensor log(const Tensor& x);
  Tensor abs(const Tensor& x);
  Tensor square(const Tensor& x);
  Tensor neg(const Tensor& x);
  Tensor add(const Tensor& a, const Tensor& b);
  Tensor sub(const Tensor& a, const Tensor& b);
  Tensor mul(const Tensor& a, const Tensor& b);
  Tensor div(const Tensor& a, const Tensor& b);
  Tensor scalar_mul(const Tensor& x, double c);
  Tensor add_scalar(const Tensor& x, double c);

  // -- reductions & indexing --
  Tensor sum(const Tensor& x);                       // all elements -> scalar
  Tensor sum_over(const Tensor& x, int dim);         // drops dim
  Tensor logsumexp_over(const Tensor& x, int dim);   // stable, drops dim
  Tensor gather(const Tensor& x, const Shape& out_shape, std::vector<int> flat_idx);

  // -- layout --
  Tensor slice_batch(const Tensor& x, int n);             // NCHW -> 1CHW
  Tensor channel_slice(const Tensor& x, int c0, int c1);  // NCHW -> N(c1-c0)HW
  Tensor rows_from_chw(const Tensor& x);                  // 1CHW -> (H*W, C)
  Tensor concat_rows(const std::vector<Tensor>& parts);   // stack along dim 0
  Tensor reshape(const Tensor& x, const Shape& s);        // same element order

  // Records a caller-implemented node. The closure must add into the input
  // tensors' grads, reading the gradients of outputs the caller created on
  // this tape beforehand.
  void record_custom(std::function<void()> back) { record(std::move(back)); }

  // Reverse accumulation from a scalar loss. Gradients add into .grad;
  // call zero_grad() before re-running for bitwise-identical results.
  void backward(const Tensor& loss);
  void zero_grad();

  size_t num_nodes() const { return nodes_.size(); }

private:
  struct Node {
    std::function<void()> back;
  };
  Tensor make(const Shape& s, bool requires_grad);
  void record(std::function<void()> back) { nodes_.push_back({std::move(back)}); }

  std::vector<Node> nodes_;
  std::vector<std::shared_ptr<TensorData>> tensors_;
};

}  // namespace kpmix::ad
