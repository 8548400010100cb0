#include <cmath>
#include <functional>
#include <span>
#include <utility>

#include "kpmix/grouping.hpp"
#include "kpmix/loss_node.hpp"
#include "kpmix/train.hpp"

namespace kpmix {

namespace {

using BuildFn = std::function<std::pair<std::vector<ad::Tensor>, ad::Tensor>(
    ad::Tape&, std::span<const double>, bool)>;

// Runs grad_check for an objective rebuilt from a flat parameter vector.
GradCheckRow run_case(const std::string& name, std::vector<double> params, const BuildFn& build,
                      const std::function<std::vector<int8_t>(std::span<const double>)>& kinks,
                      double eps, int probes, Rng& rng) {
  auto value_fn = [&](std::span<const double> p) {
    ad::Tape tape;
    auto [inputs, obj] = build(tape, p, false);
    ProbeValue v;
    v.value = obj.scalar();
    if (kinks) v.kink_signs = kinks(p);
    return v;
  };
  auto grad_fn = [&](std::span<const double> p, std::span<double> out) {
    ad::Tape tape;
    auto [inputs, obj] = build(tape, p, true);
    tape.backward(obj);
    size_t off = 0;
    for (const auto& t : inputs) {
      for (double g : t.grad()) out[off++] = g;
    }
  };
  const GradCheckResult res = grad_check(value_fn, grad_fn, params, eps, probes, rng);
  return {name, res.probes_used, res.max_rel_err};
}

std::vector<double> random_vec(Rng& rng, int n, double lo, double hi) {
  std::vector<double> v(static_cast<size_t>(n));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

}  // namespace

namespace {
constexpr int kVecLen = 16;
}  // namespace

std::vector<GradCheckRow> run_gradcheck_suite(int probes, uint64_t seed) {
  std::vector<GradCheckRow> rows;
  Rng rng(seed);

  auto unary = [&](const std::string& name, auto opfn, double lo, double hi) {
    const std::vector<double> w = random_vec(rng, kVecLen, 0.5, 1.5);
    BuildFn build = [opfn, w](ad::Tape& tape, std::span<const double> p, bool rq) {
      ad::Tensor x = tape.variable(ad::Shape::vec(kVecLen), {p.begin(), p.end()}, rq);
      ad::Tensor obj = tape.sum(tape.mul(opfn(tape, x), tape.constant(ad::Shape::vec(kVecLen), w)));
      return std::pair{std::vector<ad::Tensor>{x}, obj};
    };
    rows.push_back(run_case(name, random_vec(rng, kVecLen, lo, hi), build, nullptr, 1e-5, probes, rng));
  };

  unary("swish", [](ad::Tape& t, const ad::Tensor& x) { return t.swish(x); }, -2.0, 2.0);
  unary("softplus", [](ad::Tape& t, const ad::Tensor& x) { return t.softplus(x); }, -3.0, 3.0);
  unary("sigmoid", [](ad::Tape& t, const ad::Tensor& x) { return t.sigmoid(x); }, -3.0, 3.0);
  unary("exp", [](ad::Tape& t, const ad::Tensor& x) { return t.exp(x); }, -2.0, 2.0);
  unary("log", [](ad::Tape& t, const ad::Tensor& x) { return t.log(x); }, 0.5, 3.0);
  unary("abs", [](ad::Tape& t, const ad::Tensor& x) { return t.abs(x); }, 0.5, 2.0);
  unary("square", [](ad::Tape& t, const ad::Tensor& x) { return t.square(x); }, -2.0, 2.0);
  unary("scalar_mul", [](ad::Tape& t, const ad::Tensor& x) { return t.scalar_mul(x, 1.7); },
        -2.0, 2.0);

  auto binary = [&](const std::string& name, auto opfn, double lo, double hi) {
    const std::vector<double> w = random_vec(rng, kVecLen, 0.5, 1.5);
    BuildFn build = [opfn, w](ad::Tape& tape, std::span<const double> p, bool rq) {
      ad::Tensor a = tape.variable(ad::Shape::vec(kVecLen), {p.begin(), p.begin() + kVecLen}, rq);
      ad::Tensor b = tape.variable(ad::Shape::vec(kVecLen), {p.begin() + kVecLen, p.end()}, rq);
      ad::Tensor obj = tape.sum(tape.mul(opfn(tape, a, b), tape.constant(ad::Shape::vec(kVecLen), w)));
      return std::pair{std::vector<ad::Tensor>{a, b}, obj};
    };
    rows.push_back(
        run_case(name, random_vec(rng, 2 * kVecLen, lo, hi), build, nullptr, 1e-5, probes, rng));
  };

  binary("add", [](ad::Tape& t, const ad::Tensor& a, const ad::Tensor& b) { return t.add(a, b); },
         -2.0, 2.0);
  binary("sub", [](ad::Tape& t, const ad::Tensor& a, const ad::Tensor& b) { return t.sub(a, b); },
         -2.0, 2.0);
  binary("mul", [](ad::Tape& t, const ad::Tensor& a, const ad::Tensor& b) { return t.mul(a, b); },
         -2.0, 2.0);
  binary("div", [](ad::Tape& t, const ad::Tensor& a, const ad::Tensor& b) { return t.div(a, b); },
         0.5, 2.0);

  // reductions on a 4x5 matrix
  for (int dim = 0; dim < 2; ++dim) {
    for (const bool lse : {false, true}) {
      const int rows_n = 4, cols_n = 5;
      const int out_n = dim == 0 ? cols_n : rows_n;
      const std::vector<double> w = random_vec(rng, out_n, 0.5, 1.5);
      BuildFn build = [dim, lse, w, out_n](ad::Tape& tape, std::span<const double> p, bool rq) {
        ad::Tensor x = tape.variable(ad::Shape::mat(4, 5), {p.begin(), p.end()}, rq);
        ad::Tensor red = lse ? tape.logsumexp_over(x, dim) : tape.sum_over(x, dim);
        ad::Tensor obj = tape.sum(tape.mul(red, tape.constant(ad::Shape::vec(out_n), w)));
        return std::pair{std::vector<ad::Tensor>{x}, obj};
      };
      rows.push_back(run_case(std::string(lse ? "logsumexp_over" : "sum_over") + "_dim" +
                                  std::to_string(dim),
                              random_vec(rng, 20, -2.0, 2.0), build, nullptr, 1e-5, probes, rng));
    }
  }

  {  // gather
    std::vector<int> idx;
    for (int i = 0; i < 6; ++i) idx.push_back(rng.uniform_int(12));
    const std::vector<double> w = random_vec(rng, 6, 0.5, 1.5);
    BuildFn build = [idx, w](ad::Tape& tape, std::span<const double> p, bool rq) {
      ad::Tensor x = tape.variable(ad::Shape::vec(12), {p.begin(), p.end()}, rq);
      ad::Tensor g = tape.gather(x, ad::Shape::vec(6), idx);
      ad::Tensor obj = tape.sum(tape.mul(g, tape.constant(ad::Shape::vec(6), w)));
      return std::pair{std::vector<ad::Tensor>{x}, obj};
    };
    rows.push_back(
        run_case("gather", random_vec(rng, 12, -2.0, 2.0), build, nullptr, 1e-5, probes, rng));
  }

  for (const int stride : {1, 2}) {  // conv over input, weights and bias jointly
    const int ci = 2, co = 3, hw = 6;
    const int ho = (hw + 2 - 3) / stride + 1;
    const int xn = ci * hw * hw, wn = co * ci * 9, bn = co;
    const std::vector<double> ow = random_vec(rng, co * ho * ho, 0.5, 1.5);
    BuildFn build = [=](ad::Tape& tape, std::span<const double> p, bool rq) {
      ad::Tensor x = tape.variable(ad::Shape::nchw(1, ci, hw, hw), {p.begin(), p.begin() + xn}, rq);
      ad::Tensor w =
          tape.variable(ad::Shape::nchw(co, ci, 3, 3), {p.begin() + xn, p.begin() + xn + wn}, rq);
      ad::Tensor b = tape.variable(ad::Shape::vec(co), {p.begin() + xn + wn, p.end()}, rq);
      ad::Tensor y = tape.conv2d_3x3(x, w, b, stride);
      ad::Tensor obj =
          tape.sum(tape.mul(y, tape.constant(ad::Shape::nchw(1, co, ho, ho), ow)));
      return std::pair{std::vector<ad::Tensor>{x, w, b}, obj};
    };
    rows.push_back(run_case("conv2d_3x3_s" + std::to_string(stride),
                            random_vec(rng, xn + wn + bn, -1.0, 1.0), build, nullptr, 1e-5,
                            probes, rng));
  }

  // fused group-NLL node against finite differences, per component kind
  for (const ComponentKind kind :
       {ComponentKind::laplace, ComponentKind::gaussian, ComponentKind::cauchy}) {
    const int m_n = 4, k_total = 4, k2 = 2 * k_total;
    GroupPartition part;
    part.groups = {{0, 2}, {1, 3}};
    std::vector<KeypointSet> gts;
    for (int i = 0; i < 2; ++i) {
      gts.push_back(KeypointSet::all_visible(random_vec(rng, k2, -2.0, 2.0)));
    }
    const int mu_n = m_n * k2;
    std::vector<double> params = random_vec(rng, mu_n, -2.0, 2.0);            // mu
    {
      auto gm = random_vec(rng, mu_n, 0.6, 2.0);                              // gamma
      params.insert(params.end(), gm.begin(), gm.end());
      auto ov = random_vec(rng, m_n, 0.1, 0.9);                               // o
      params.insert(params.end(), ov.begin(), ov.end());
    }
    BuildFn build = [=](ad::Tape& tape, std::span<const double> p, bool rq) {
      TapeField f;
      f.mu = tape.variable(ad::Shape::mat(m_n, k2), {p.begin(), p.begin() + mu_n}, rq);
      f.gamma =
          tape.variable(ad::Shape::mat(m_n, k2), {p.begin() + mu_n, p.begin() + 2 * mu_n}, rq);
      f.o = tape.variable(ad::Shape::vec(m_n), {p.begin() + 2 * mu_n, p.end()}, rq);
      TapeLossResult r = group_nll_node(tape, f, gts, part, kind);
      return std::pair{std::vector<ad::Tensor>{f.mu, f.gamma, f.o}, r.loss};
    };
    std::function<std::vector<int8_t>(std::span<const double>)> kinks;
    if (kind == ComponentKind::laplace) {
      kinks = [=](std::span<const double> p) {
        std::vector<int8_t> signs;
        for (const auto& gt : gts) {
          for (int m = 0; m < m_n; ++m) {
            for (int d = 0; d < k2; ++d) {
              const double r = gt.coords[static_cast<size_t>(d)] -
                               p[static_cast<size_t>(m * k2 + d)];
              signs.push_back(r > 0.0 ? 1 : (r < 0.0 ? -1 : 0));
            }
          }
        }
        return signs;
      };
    }
    rows.push_back(run_case("group_nll_" + to_string(kind), std::move(params), build, kinks,
                            1e-5, probes, rng));
  }

  {  // image -> backbone -> head -> transforms -> group NLL, probing weights
    HeadConfig hc;
    hc.conv_layers = 3;
    hc.channels = 8;
    hc.k_total = 3;
    hc.levels = {3, 4};
    BackboneConfig bc;
    bc.width = 8;
    const int side = 32;
    KeypointModel model(hc, bc, side);
    Rng init_rng = derived_rng(seed, 77);
    model.init_parameters(init_rng);
    // probe at a generic parameter point: the production init deliberately
    // zeroes the last layer, which leaves most coordinates with sub-noise
    // gradients and nothing for a difference quotient to see
    for (auto& p : model.params()) {
      if (p.name == "head.conv" + std::to_string(hc.conv_layers - 1) + ".weight") {
        const double limit = std::sqrt(3.0 / (p.shape.d[1] * 9));
        for (auto& v : p.value) v = init_rng.uniform(-limit, limit);
      }
      if (p.name == "head.conv" + std::to_string(hc.conv_layers - 1) + ".bias") {
        for (int ch = 2 * hc.k_total; ch < 4 * hc.k_total; ++ch) {
          p.value[static_cast<size_t>(ch)] = softplus_inverse(4.0);
        }
      }
    }
    const std::vector<double> image = random_vec(rng, side * side, 0.0, 1.0);
    std::vector<KeypointSet> gts;
    gts.push_back(KeypointSet::all_visible(
        {8.0, 9.0, 12.0, 20.0, 20.0, 18.0}));
    GroupPartition part;
    part.groups = {{0, 2}, {1}};

    std::vector<double> params;
    for (const auto& p : model.params()) {
      params.insert(params.end(), p.value.begin(), p.value.end());
    }
    auto load_params = [](KeypointModel& mdl, std::span<const double> p) {
      size_t off = 0;
      for (auto& np : mdl.params()) {
        std::copy(p.begin() + static_cast<long>(off),
                  p.begin() + static_cast<long>(off + np.value.size()), np.value.begin());
        off += np.value.size();
      }
    };
    auto forward_loss = [&](KeypointModel& mdl, bool rq, ad::Tape& tape,
                            std::vector<ad::Tensor>& bound) {
      bound = mdl.bind(tape, rq);
      ad::Tensor img = tape.constant(ad::Shape::nchw(1, 1, side, side), image);
      const auto raw = mdl.forward(tape, img, bound);
      const TapeField f = mdl.transform_parameters(tape, raw, 0);
      return group_nll_node(tape, f, gts, part, ComponentKind::laplace);
    };

    // residual signs over every (person, component, dim) guard the kinks
    auto probe_fn = [&](std::span<const double> p) {
      KeypointModel mdl = model;
      load_params(mdl, p);
      ad::Tape tape;
      std::vector<ad::Tensor> bound = mdl.bind(tape, false);
      ad::Tensor img = tape.constant(ad::Shape::nchw(1, 1, side, side), image);
      const auto raw = mdl.forward(tape, img, bound);
      const TapeField f = mdl.transform_parameters(tape, raw, 0);
      TapeLossResult r = group_nll_node(tape, f, gts, part, ComponentKind::laplace);
      ProbeValue v;
      v.value = r.loss.scalar();
      const auto& mu = f.mu.val();
      const int k2 = 2 * hc.k_total;
      for (const auto& gt : gts) {
        for (size_t m = 0; m < f.o.val().size(); ++m) {
          for (int d = 0; d < k2; ++d) {
            const double resid = gt.coords[static_cast<size_t>(d)] - mu[m * k2 + d];
            v.kink_signs.push_back(resid > 0.0 ? 1 : (resid < 0.0 ? -1 : 0));
          }
        }
      }
      return v;
    };
    auto grad_fn = [&](std::span<const double> p, std::span<double> out) {
      KeypointModel mdl = model;
      load_params(mdl, p);
      mdl.zero_param_grads();
      ad::Tape tape;
      std::vector<ad::Tensor> bound;
      TapeLossResult r = forward_loss(mdl, true, tape, bound);
      tape.backward(r.loss);
      mdl.accumulate_grads(bound);
      size_t off = 0;
      for (const auto& np : mdl.params()) {
        for (double g : np.grad) out[off++] = g;
      }
    };
    const GradCheckResult res =
        grad_check(probe_fn, grad_fn, params, 1e-4, 5 * probes, rng, /*noise_floor=*/1e-5);
    rows.push_back({"head_end_to_end", res.probes_used, res.max_rel_err});
  }

  return rows;
}

}  // namespace kpmix
