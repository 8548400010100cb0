#include "kpmix/tensor.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace kpmix::ad {

std::string Shape::str() const {
  std::string s = "(";
  for (int i = 0; i < nd; ++i) {
    if (i) s += ",";
    s += std::to_string(d[static_cast<size_t>(i)]);
  }
  return s + ")";
}

double Tensor::scalar() const {
  if (p_->shape.numel() != 1) {
    throw std::invalid_argument("Tensor::scalar: shape " + p_->shape.str() + " is not scalar");
  }
  return p_->val[0];
}

Tensor Tape::make(const Shape& s, bool requires_grad) {
  auto d = std::make_shared<TensorData>();
  d->shape = s;
  d->val.assign(static_cast<size_t>(s.numel()), 0.0);
  d->requires_grad = requires_grad;
  if (requires_grad) d->grad.assign(d->val.size(), 0.0);
  tensors_.push_back(d);
  return Tensor(d);
}

Tensor Tape::variable(const Shape& s, std::vector<double> v, bool requires_grad) {
  if (static_cast<int>(v.size()) != s.numel()) {
    throw std::invalid_argument("variable: value count does not match shape " + s.str());
  }
  Tensor t = make(s, requires_grad);
  t.val() = std::move(v);
  return t;
}

Tensor Tape::constant(const Shape& s, std::vector<double> v) {
  return variable(s, std::move(v), false);
}

Tensor Tape::zeros(const Shape& s, bool requires_grad) { return make(s, requires_grad); }

namespace {

inline void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (!(a.shape() == b.shape())) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.shape().str() +
                                " vs " + b.shape().str());
  }
}

}  // namespace

// ---------------------------------------------------------------- unary ops

Tensor Tape::swish(const Tensor& x) {
  Tensor y = make(x.shape(), x.requires_grad());
  const auto& xv = x.val();
  auto& yv = y.val();
  for (size_t i = 0; i < xv.size(); ++i) {
    const double s = xv[i] >= 0.0 ? 1.0 / (1.0 + std::exp(-xv[i]))
                                  : std::exp(xv[i]) / (1.0 + std::exp(xv[i]));
    yv[i] = xv[i] * s;
  }
  if (y.requires_grad()) {
    auto xd = x.ptr();
    auto yd = y.ptr();
    record([xd, yd]() {
      for (size_t i = 0; i < xd->val.size(); ++i) {
        const double v = xd->val[i];
        const double s = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
        xd->grad[i] += yd->grad[i] * s * (1.0 + v * (1.0 - s));
      }
    });
  }
  return y;
}

Tensor Tape::softplus(const Tensor& x) {
  Tensor y = make(x.shape(), x.requires_grad());
  const auto& xv = x.val();
  auto& yv = y.val();
  for (size_t i = 0; i < xv.size(); ++i) {
    yv[i] = std::max(xv[i], 0.0) + std::log1p(std::exp(-std::abs(xv[i])));
  }
  if (y.requires_grad()) {
    auto xd = x.ptr();
    auto yd = y.ptr();
    record([xd, yd]() {
      for (size_t i = 0; i < xd->val.size(); ++i) {
        const double v = xd->val[i];
        const double s = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
        xd->grad[i] += yd->grad[i] * s;
      }
    });
  }
  return y;
}

Tensor Tape::sigmoid(const Tensor& x) {
  Tensor y = make(x.shape(), x.requires_grad());
  const auto& xv = x.val();
  auto& yv = y.val();
  for (size_t i = 0; i < xv.size(); ++i) {
    yv[i] = xv[i] >= 0.0 ? 1.0 / (1.0 + std::exp(-xv[i]))
                         : std::exp(xv[i]) / (1.0 + std::exp(xv[i]));
  }
  if (y.requires_grad()) {
    auto xd = x.ptr();
    auto yd = y.ptr();
    record([xd, yd]() {
      for (size_t i = 0; i < yd->val.size(); ++i) {
        const double s = yd->val[i];
        xd->grad[i] += yd->grad[i] * s * (1.0 - s);
      }
    });
  }
  return y;
}

Tensor Tape::exp(const Tensor& x) {
  Tensor y = make(x.shape(), x.requires_grad());
  for (size_t i = 0; i < x.val().size(); ++i) y.val()[i] = std::exp(x.val()[i]);
  if (y.requires_grad()) {
    auto xd = x.ptr();
    auto yd = y.ptr();
    record([xd, yd]() {
      for (size_t i = 0; i < yd->val.size(); ++i) xd->grad[i] += yd->grad[i] * yd->val[i];
    });
  }
  return y;
}

Tensor Tape::log(const Tensor& x) {
  Tensor y = make(x.shape(), x.requires_grad());
  for (size_t i = 0; i < x.val().size(); ++i) y.val()[i] = std::log(x.val()[i]);
  if (y.requires_grad()) {
    auto xd = x.ptr();
    auto yd = y.ptr();
    record([xd, yd]() {
      for (size_t i = 0; i < xd->val.size(); ++i) xd->grad[i] += yd->grad[i] / xd->val[i];
    });
  }
  return y;
}

Tensor Tape::abs(const Tensor& x) {
  Tensor y = make(x.shape(), x.requires_grad());
  for (size_t i = 0; i < x.val().size(); ++i) y.val()[i] = std::abs(x.val()[i]);
  if (y.requires_grad()) {
    auto xd = x.ptr();
    auto yd = y.ptr();
    // subgradient 0 at exactly 0
    record([xd, yd]() {
      for (size_t i = 0; i < xd->val.size(); ++i) {
        const double v = xd->val[i];
        const double s = v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0);
        xd->grad[i] += yd->grad[i] * s;
      }
    });
  }
  return y;
}

Tensor Tape::square(const Tensor& x) {
  Tensor y = make(x.shape(), x.requires_grad());
  for (size_t i = 0; i < x.val().size(); ++i) y.val()[i] = x.val()[i] * x.val()[i];
  if (y.requires_grad()) {
    auto xd = x.ptr();
    auto yd = y.ptr();
    record([xd, yd]() {
      for (size_t i = 0; i < xd->val.size(); ++i) {
        xd->grad[i] += yd->grad[i] * 2.0 * xd->val[i];
      }
    });
  }
  return y;
}

Tensor Tape::neg(const Tensor& x) { return scalar_mul(x, -1.0); }

// --------------------------------------------------------------- binary ops

Tensor Tape::add(const Tensor& a, const Tensor& b) {
  check_same_shape("add", a, b);
  Tensor y = make(a.shape(), a.requires_grad() || b.requires_grad());
  for (size_t i = 0; i < y.val().size(); ++i) y.val()[i] = a.val()[i] + b.val()[i];
  if (y.requires_grad()) {
    auto ad = a.ptr();
    auto bd = b.ptr();
    auto yd = y.ptr();
    record([ad, bd, yd]() {
      if (ad->requires_grad) {
        for (size_t i = 0; i < yd->val.size(); ++i) ad->grad[i] += yd->grad[i];
      }
      if (bd->requires_grad) {
        for (size_t i = 0; i < yd->val.size(); ++i) bd->grad[i] += yd->grad[i];
      }
    });
  }
  return y;
}

Tensor Tape::sub(const Tensor& a, const Tensor& b) {
  check_same_shape("sub", a, b);
  Tensor y = make(a.shape(), a.requires_grad() || b.requires_grad());
  for (size_t i = 0; i < y.val().size(); ++i) y.val()[i] = a.val()[i] - b.val()[i];
  if (y.requires_grad()) {
    auto ad = a.ptr();
    auto bd = b.ptr();
    auto yd = y.ptr();
    record([ad, bd, yd]() {
      if (ad->requires_grad) {
        for (size_t i = 0; i < yd->val.size(); ++i) ad->grad[i] += yd->grad[i];
      }
      if (bd->requires_grad) {
        for (size_t i = 0; i < yd->val.size(); ++i) bd->grad[i] -= yd->grad[i];
      }
    });
  }
  return y;
}

Tensor Tape::mul(const Tensor& a, const Tensor& b) {
  check_same_shape("mul", a, b);
  Tensor y = make(a.shape(), a.requires_grad() || b.requires_grad());
  for (size_t i = 0; i < y.val().size(); ++i) y.val()[i] = a.val()[i] * b.val()[i];
  if (y.requires_grad()) {
    auto ad = a.ptr();
    auto bd = b.ptr();
    auto yd = y.ptr();
    record([ad, bd, yd]() {
      if (ad->requires_grad) {
        for (size_t i = 0; i < yd->val.size(); ++i) ad->grad[i] += yd->grad[i] * bd->val[i];
      }
      if (bd->requires_grad) {
        for (size_t i = 0; i < yd->val.size(); ++i) bd->grad[i] += yd->grad[i] * ad->val[i];
      }
    });
  }
  return y;
}

Tensor Tape::div(const Tensor& a, const Tensor& b) {
  check_same_shape("div", a, b);
  Tensor y = make(a.shape(), a.requires_grad() || b.requires_grad());
  for (size_t i = 0; i < y.val().size(); ++i) y.val()[i] = a.val()[i] / b.val()[i];
  if (y.requires_grad()) {
    auto ad = a.ptr();
    auto bd = b.ptr();
    auto yd = y.ptr();
    record([ad, bd, yd]() {
      if (ad->requires_grad) {
        for (size_t i = 0; i < yd->val.size(); ++i) ad->grad[i] += yd->grad[i] / bd->val[i];
      }
      if (bd->requires_grad) {
        for (size_t i = 0; i < yd->val.size(); ++i) {
          bd->grad[i] -= yd->grad[i] * yd->val[i] / bd->val[i];
        }
      }
    });
  }
  return y;
}

Tensor Tape::scalar_mul(const Tensor& x, double c) {
  Tensor y = make(x.shape(), x.requires_grad());
  for (size_t i = 0; i < x.val().size(); ++i) y.val()[i] = c * x.val()[i];
  if (y.requires_grad()) {
    auto xd = x.ptr();
    auto yd = y.ptr();
    record([xd, yd, c]() {
      for (size_t i = 0; i < yd->val.size(); ++i) xd->grad[i] += c * yd->grad[i];
    });
  }
  return y;
}

Tensor Tape::add_scalar(const Tensor& x, double c) {
  Tensor y = make(x.shape(), x.requires_grad());
  for (size_t i = 0; i < x.val().size(); ++i) y.val()[i] = x.val()[i] + c;
  if (y.requires_grad()) {
    auto xd = x.ptr();
    auto yd = y.ptr();
    record([xd, yd]() {
      for (size_t i = 0; i < yd->val.size(); ++i) xd->grad[i] += yd->grad[i];
    });
  }
  return y;
}

// --------------------------------------------------------------- reductions

Tensor Tape::sum(const Tensor& x) {
  Tensor y = make(Shape::scalar(), x.requires_grad());
  double s = 0.0;
  for (double v : x.val()) s += v;
  y.val()[0] = s;
  if (y.requires_grad()) {
    auto xd = x.ptr();
    auto yd = y.ptr();
    record([xd, yd]() {
      const double g = yd->grad[0];
      for (size_t i = 0; i < xd->val.size(); ++i) xd->grad[i] += g;
    });
  }
  return y;
}

namespace {

struct DimSplit {
  size_t outer, mid, inner;
};

DimSplit split_at(const Shape& s, int dim) {
  if (dim < 0 || dim >= s.nd) {
    throw std::invalid_argument("reduction: dim out of range for shape " + s.str());
  }
  DimSplit r{1, static_cast<size_t>(s.d[static_cast<size_t>(dim)]), 1};
  for (int i = 0; i < dim; ++i) r.outer *= static_cast<size_t>(s.d[static_cast<size_t>(i)]);
  for (int i = dim + 1; i < s.nd; ++i) r.inner *= static_cast<size_t>(s.d[static_cast<size_t>(i)]);
  return r;
}

Shape drop_dim(const Shape& s, int dim) {
  Shape o;
  o.nd = 0;
  for (int i = 0; i < s.nd; ++i) {
    if (i == dim) continue;
    o.d[static_cast<size_t>(o.nd++)] = s.d[static_cast<size_t>(i)];
  }
  if (o.nd == 0) o = Shape::scalar();
  return o;
}

}  // namespace

Tensor Tape::sum_over(const Tensor& x, int dim) {
  const DimSplit sp = split_at(x.shape(), dim);
  Tensor y = make(drop_dim(x.shape(), dim), x.requires_grad());
  const auto& xv = x.val();
  auto& yv = y.val();
  for (size_t o = 0; o < sp.outer; ++o) {
    for (size_t m = 0; m < sp.mid; ++m) {
      const size_t base = (o * sp.mid + m) * sp.inner;
      for (size_t i = 0; i < sp.inner; ++i) yv[o * sp.inner + i] += xv[base + i];
    }
  }
  if (y.requires_grad()) {
    auto xd = x.ptr();
    auto yd = y.ptr();
    record([xd, yd, sp]() {
      for (size_t o = 0; o < sp.outer; ++o) {
        for (size_t m = 0; m < sp.mid; ++m) {
          const size_t base = (o * sp.mid + m) * sp.inner;
          for (size_t i = 0; i < sp.inner; ++i) xd->grad[base + i] += yd->grad[o * sp.inner + i];
        }
      }
    });
  }
  return y;
}

Tensor Tape::logsumexp_over(const Tensor& x, int dim) {
  const DimSplit sp = split_at(x.shape(), dim);
  Tensor y = make(drop_dim(x.shape(), dim), x.requires_grad());
  const auto& xv = x.val();
  auto& yv = y.val();
  const double neg_inf = -std::numeric_limits<double>::infinity();
  for (size_t o = 0; o < sp.outer; ++o) {
    for (size_t i = 0; i < sp.inner; ++i) {
      double mx = neg_inf;
      for (size_t m = 0; m < sp.mid; ++m) {
        mx = std::max(mx, xv[(o * sp.mid + m) * sp.inner + i]);
      }
      if (!std::isfinite(mx)) {
        yv[o * sp.inner + i] = mx;
        continue;
      }
      double s = 0.0;
      for (size_t m = 0; m < sp.mid; ++m) {
        s += std::exp(xv[(o * sp.mid + m) * sp.inner + i] - mx);
      }
      yv[o * sp.inner + i] = mx + std::log(s);
    }
  }
  if (y.requires_grad()) {
    auto xd = x.ptr();
    auto yd = y.ptr();
    record([xd, yd, sp]() {
      for (size_t o = 0; o < sp.outer; ++o) {
        for (size_t i = 0; i < sp.inner; ++i) {
          const size_t yi = o * sp.inner + i;
          if (!std::isfinite(yd->val[yi])) continue;
          const double g = yd->grad[yi];
          for (size_t m = 0; m < sp.mid; ++m) {
            const size_t xi = (o * sp.mid + m) * sp.inner + i;
            xd->grad[xi] += g * std::exp(xd->val[xi] - yd->val[yi]);
          }
        }
      }
    });
  }
  return y;
}

Tensor Tape::gather(const Tensor& x, const Shape& out_shape, std::vector<int> flat_idx) {
  if (static_cast<int>(flat_idx.size()) != out_shape.numel()) {
    throw std::invalid_argument("gather: index count does not match shape " + out_shape.str());
  }
  const int n = static_cast<int>(x.val().size());
  for (int idx : flat_idx) {
    if (idx < 0 || idx >= n) throw std::invalid_argument("gather: index out of range");
  }
  Tensor y = make(out_shape, x.requires_grad());
  for (size_t i = 0; i < flat_idx.size(); ++i) {
    y.val()[i] = x.val()[static_cast<size_t>(flat_idx[i])];
  }
  if (y.requires_grad()) {
    auto xd = x.ptr();
    auto yd = y.ptr();
    auto idx = std::make_shared<std::vector<int>>(std::move(flat_idx));
    record([xd, yd, idx]() {
      for (size_t i = 0; i < idx->size(); ++i) {
        xd->grad[static_cast<size_t>((*idx)[i])] += yd->grad[i];
      }
    });
  }
  return y;
}

// ------------------------------------------------------------------- layout

Tensor Tape::slice_batch(const Tensor& x, int n) {
  const Shape& s = x.shape();
  if (s.nd != 4 || n < 0 || n >= s.d[0]) {
    throw std::invalid_argument("slice_batch: bad batch index for shape " + s.str());
  }
  const size_t chw = static_cast<size_t>(s.d[1]) * s.d[2] * s.d[3];
  Tensor y = make(Shape::nchw(1, s.d[1], s.d[2], s.d[3]), x.requires_grad());
  const size_t off = static_cast<size_t>(n) * chw;
  for (size_t i = 0; i < chw; ++i) y.val()[i] = x.val()[off + i];
  if (y.requires_grad()) {
    auto xd = x.ptr();
    auto yd = y.ptr();
    record([xd, yd, off, chw]() {
      for (size_t i = 0; i < chw; ++i) xd->grad[off + i] += yd->grad[i];
    });
  }
  return y;
}

Tensor Tape::channel_slice(const Tensor& x, int c0, int c1) {
  const Shape& s = x.shape();
  if (s.nd != 4 || c0 < 0 || c1 > s.d[1] || c0 >= c1) {
    throw std::invalid_argument("channel_slice: bad channel range for shape " + s.str());
  }
  const size_t hw = static_cast<size_t>(s.d[2]) * s.d[3];
  const int nc = c1 - c0;
  Tensor y = make(Shape::nchw(s.d[0], nc, s.d[2], s.d[3]), x.requires_grad());
  for (int n = 0; n < s.d[0]; ++n) {
    for (int c = 0; c < nc; ++c) {
      const size_t src = (static_cast<size_t>(n) * s.d[1] + (c0 + c)) * hw;
      const size_t dst = (static_cast<size_t>(n) * nc + c) * hw;
      for (size_t i = 0; i < hw; ++i) y.val()[dst + i] = x.val()[src + i];
    }
  }
  if (y.requires_grad()) {
    auto xd = x.ptr();
    auto yd = y.ptr();
    const int nb = s.d[0], tc = s.d[1];
    record([xd, yd, nb, tc, nc, c0, hw]() {
      for (int n = 0; n < nb; ++n) {
        for (int c = 0; c < nc; ++c) {
          const size_t src = (static_cast<size_t>(n) * tc + (c0 + c)) * hw;
          const size_t dst = (static_cast<size_t>(n) * nc + c) * hw;
          for (size_t i = 0; i < hw; ++i) xd->grad[src + i] += yd->grad[dst + i];
        }
      }
    });
  }
  return y;
}

Tensor Tape::rows_from_chw(const Tensor& x) {
  const Shape& s = x.shape();
  if (s.nd != 4 || s.d[0] != 1) {
    throw std::invalid_argument("rows_from_chw: expected (1,C,H,W), got " + s.str());
  }
  const int c = s.d[1];
  const size_t hw = static_cast<size_t>(s.d[2]) * s.d[3];
  Tensor y = make(Shape::mat(static_cast<int>(hw), c), x.requires_grad());
  for (size_t p = 0; p < hw; ++p) {
    for (int ch = 0; ch < c; ++ch) {
      y.val()[p * static_cast<size_t>(c) + ch] = x.val()[static_cast<size_t>(ch) * hw + p];
    }
  }
  if (y.requires_grad()) {
    auto xd = x.ptr();
    auto yd = y.ptr();
    record([xd, yd, c, hw]() {
      for (size_t p = 0; p < hw; ++p) {
        for (int ch = 0; ch < c; ++ch) {
          xd->grad[static_cast<size_t>(ch) * hw + p] += yd->grad[p * static_cast<size_t>(c) + ch];
        }
      }
    });
  }
  return y;
}

Tensor Tape::concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
  Shape s0 = parts[0].shape();
  int rows = 0;
  bool rg = false;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.nd != s0.nd) throw std::invalid_argument("concat_rows: rank mismatch");
    for (int i = 1; i < s.nd; ++i) {
      if (s.d[static_cast<size_t>(i)] != s0.d[static_cast<size_t>(i)]) {
        throw std::invalid_argument("concat_rows: trailing dim mismatch " + s.str() + " vs " +
                                    s0.str());
      }
    }
    rows += s.d[0];
    rg = rg || p.requires_grad();
  }
  Shape os = s0;
  os.d[0] = rows;
  Tensor y = make(os, rg);
  size_t off = 0;
  for (const auto& p : parts) {
    for (size_t i = 0; i < p.val().size(); ++i) y.val()[off + i] = p.val()[i];
    off += p.val().size();
  }
  if (rg) {
    auto yd = y.ptr();
    std::vector<std::shared_ptr<TensorData>> srcs;
    for (const auto& p : parts) srcs.push_back(p.ptr());
    record([yd, srcs]() {
      size_t off = 0;
      for (const auto& sd : srcs) {
        if (sd->requires_grad) {
          for (size_t i = 0; i < sd->val.size(); ++i) sd->grad[i] += yd->grad[off + i];
        }
        off += sd->val.size();
      }
    });
  }
  return y;
}

Tensor Tape::reshape(const Tensor& x, const Shape& s) {
  if (s.numel() != x.shape().numel()) {
    throw std::invalid_argument("reshape: element count mismatch " + x.shape().str() + " vs " +
                                s.str());
  }
  Tensor y = make(s, x.requires_grad());
  y.val() = x.val();
  if (y.requires_grad()) {
    auto xd = x.ptr();
    auto yd = y.ptr();
    record([xd, yd]() {
      for (size_t i = 0; i < xd->val.size(); ++i) xd->grad[i] += yd->grad[i];
    });
  }
  return y;
}

// --------------------------------------------------------------------- conv

Tensor Tape::conv2d_3x3(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (xs.nd != 4 || ws.nd != 4 || ws.d[2] != 3 || ws.d[3] != 3) {
    throw std::invalid_argument("conv2d_3x3: expected x NCHW and w (Co,Ci,3,3), got x=" +
                                xs.str() + " w=" + ws.str());
  }
  if (xs.d[1] != ws.d[1]) {
    throw std::invalid_argument("conv2d_3x3: channel mismatch x=" + xs.str() + " w=" + ws.str());
  }
  if (b.shape().numel() != ws.d[0]) {
    throw std::invalid_argument("conv2d_3x3: bias shape " + b.shape().str() + " vs w " + ws.str());
  }
  if (stride < 1 || pad < 0) throw std::invalid_argument("conv2d_3x3: bad stride/pad");

  const int n_b = xs.d[0], ci_n = xs.d[1], h = xs.d[2], wd = xs.d[3];
  const int co_n = ws.d[0];
  const int ho = (h + 2 * pad - 3) / stride + 1;
  const int wo = (wd + 2 * pad - 3) / stride + 1;
  Tensor y = make(Shape::nchw(n_b, co_n, ho, wo),
                  x.requires_grad() || w.requires_grad() || b.requires_grad());

  const double* xp = x.val().data();
  const double* wp = w.val().data();
  const double* bp = b.val().data();
  double* yp = y.val().data();

  const size_t x_chw = static_cast<size_t>(ci_n) * h * wd;
  const size_t y_chw = static_cast<size_t>(co_n) * ho * wo;

  // Valid output column range for a kernel column kw: 0 <= wo*s + kw - pad < W.
  auto col_range = [&](int kw, int& lo, int& hi) {
    lo = 0;
    while (lo * stride + kw - pad < 0) ++lo;
    hi = wo;
    while (hi > lo && (hi - 1) * stride + kw - pad >= wd) --hi;
  };

  for (int n = 0; n < n_b; ++n) {
    for (int co = 0; co < co_n; ++co) {
      double* ybase = yp + n * y_chw + static_cast<size_t>(co) * ho * wo;
      for (int i = 0; i < ho * wo; ++i) ybase[i] = bp[co];
      for (int ci = 0; ci < ci_n; ++ci) {
        const double* xbase = xp + n * x_chw + static_cast<size_t>(ci) * h * wd;
        for (int kh = 0; kh < 3; ++kh) {
          for (int kw = 0; kw < 3; ++kw) {
            const double wv = wp[((static_cast<size_t>(co) * ci_n + ci) * 3 + kh) * 3 + kw];
            int wlo, whi;
            col_range(kw, wlo, whi);
            for (int r = 0; r < ho; ++r) {
              const int hi = r * stride + kh - pad;
              if (hi < 0 || hi >= h) continue;
              const double* xrow = xbase + static_cast<size_t>(hi) * wd + (kw - pad);
              double* yrow = ybase + static_cast<size_t>(r) * wo;
              if (stride == 1) {
                for (int c = wlo; c < whi; ++c) yrow[c] += wv * xrow[c];
              } else {
                for (int c = wlo; c < whi; ++c) yrow[c] += wv * xrow[c * stride];
              }
            }
          }
        }
      }
    }
  }

  if (y.requires_grad()) {
    auto xd = x.ptr();
    auto wd_p = w.ptr();
    auto bd = b.ptr();
    auto yd = y.ptr();
    record([xd, wd_p, bd, yd, n_b, ci_n, co_n, h, wd, ho, wo, stride, pad, x_chw, y_chw]() {
      const double* gp = yd->grad.data();
      const double* xp = xd->val.data();
      const double* wp = wd_p->val.data();

      if (bd->requires_grad) {
        for (int n = 0; n < n_b; ++n) {
          for (int co = 0; co < co_n; ++co) {
            const double* grow = gp + n * y_chw + static_cast<size_t>(co) * ho * wo;
            double s = 0.0;
            for (int i = 0; i < ho * wo; ++i) s += grow[i];
            bd->grad[static_cast<size_t>(co)] += s;
          }
        }
      }

      auto col_range = [&](int kw, int& lo, int& hi) {
        lo = 0;
        while (lo * stride + kw - pad < 0) ++lo;
        hi = wo;
        while (hi > lo && (hi - 1) * stride + kw - pad >= wd) --hi;
      };

      if (wd_p->requires_grad) {
        for (int n = 0; n < n_b; ++n) {
          for (int co = 0; co < co_n; ++co) {
            const double* gbase = gp + n * y_chw + static_cast<size_t>(co) * ho * wo;
            for (int ci = 0; ci < ci_n; ++ci) {
              const double* xbase = xp + n * x_chw + static_cast<size_t>(ci) * h * wd;
              for (int kh = 0; kh < 3; ++kh) {
                for (int kw = 0; kw < 3; ++kw) {
                  int wlo, whi;
                  col_range(kw, wlo, whi);
                  double acc = 0.0;
                  for (int r = 0; r < ho; ++r) {
                    const int hi = r * stride + kh - pad;
                    if (hi < 0 || hi >= h) continue;
                    const double* xrow = xbase + static_cast<size_t>(hi) * wd + (kw - pad);
                    const double* grow = gbase + static_cast<size_t>(r) * wo;
                    if (stride == 1) {
                      for (int c = wlo; c < whi; ++c) acc += grow[c] * xrow[c];
                    } else {
                      for (int c = wlo; c < whi; ++c) acc += grow[c] * xrow[c * stride];
                    }
                  }
                  wd_p->grad[((static_cast<size_t>(co) * ci_n + ci) * 3 + kh) * 3 + kw] += acc;
                }
              }
            }
          }
        }
      }

      if (xd->requires_grad) {
        for (int n = 0; n < n_b; ++n) {
          for (int co = 0; co < co_n; ++co) {
            const double* gbase = gp + n * y_chw + static_cast<size_t>(co) * ho * wo;
            for (int ci = 0; ci < ci_n; ++ci) {
              double* dxbase = xd->grad.data() + n * x_chw + static_cast<size_t>(ci) * h * wd;
              for (int kh = 0; kh < 3; ++kh) {
                for (int kw = 0; kw < 3; ++kw) {
                  const double wv = wp[((static_cast<size_t>(co) * ci_n + ci) * 3 + kh) * 3 + kw];
                  int wlo, whi;
                  col_range(kw, wlo, whi);
                  for (int r = 0; r < ho; ++r) {
                    const int hi = r * stride + kh - pad;
                    if (hi < 0 || hi >= h) continue;
                    double* dxrow = dxbase + static_cast<size_t>(hi) * wd + (kw - pad);
                    const double* grow = gbase + static_cast<size_t>(r) * wo;
                    if (stride == 1) {
                      for (int c = wlo; c < whi; ++c) dxrow[c] += wv * grow[c];
                    } else {
                      for (int c = wlo; c < whi; ++c) dxrow[c * stride] += wv * grow[c];
                    }
                  }
                }
              }
            }
          }
        }
      }
    });
  }
  return y;
}

// ----------------------------------------------------------------- backward

void Tape::backward(const Tensor& loss) {
  if (loss.shape().numel() != 1) {
    throw std::invalid_argument("backward: loss must be scalar, got " + loss.shape().str());
  }
  if (!loss.requires_grad()) {
    throw std::invalid_argument("backward: loss does not require grad");
  }
  loss.ptr()->grad[0] += 1.0;
  for (size_t i = nodes_.size(); i-- > 0;) nodes_[i].back();
}

void Tape::zero_grad() {
  for (auto& t : tensors_) {
    if (t->requires_grad) std::fill(t->grad.begin(), t->grad.end(), 0.0);
  }
}

}  // namespace kpmix::ad
