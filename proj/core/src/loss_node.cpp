#include "kpmix/loss_node.hpp"

#include "kpmix/grouping.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace kpmix {

namespace {

// d(-log pdf)/dmu and d(-log pdf)/dgamma for one scalar dimension, written in
// terms of e = (k - mu) / gamma.
inline void neg_log_pdf_grads(ComponentKind kind, double e, double gamma, double& dmu,
                              double& dgamma) {
  switch (kind) {
    case ComponentKind::laplace: {
      const double s = e > 0.0 ? 1.0 : (e < 0.0 ? -1.0 : 0.0);
      dmu = -s / gamma;  // sign(mu - k) / gamma, subgradient 0 at the kink
      dgamma = (1.0 - std::abs(e)) / gamma;
      return;
    }
    case ComponentKind::gaussian:
      dmu = -e / gamma;
      dgamma = (1.0 - e * e) / gamma;
      return;
    case ComponentKind::cauchy: {
      const double w = 1.0 + e * e;
      dmu = -2.0 * e / (gamma * w);
      dgamma = (1.0 - 2.0 * e * e / w) / gamma;
      return;
    }
  }
}

// One (group, person) likelihood term kept for the backward pass.
struct NllTerm {
  std::vector<int> sel;            // visible keypoint indices
  std::vector<double> sel_coords;  // 2 per selected keypoint
  std::vector<double> resp;        // responsibilities, M entries
};

}  // namespace

TapeLossResult group_nll_node(ad::Tape& tape, const TapeField& field,
                              const std::vector<KeypointSet>& gts,
                              const GroupPartition& partition, ComponentKind kind) {
  if (gts.empty()) throw std::invalid_argument("group_nll_node: no ground truths");
  const int m_n = field.o.shape().numel();
  const int k2 = field.mu.shape().d[1];
  const int k_total = k2 / 2;
  const int n_g = partition.num_groups();
  partition.validate(k_total);

  MixtureField plain = MixtureField::from_o(k_total, field.mu.val(), field.gamma.val(),
                                            field.o.val());
  double o_sum = 0.0;
  for (double v : plain.o) o_sum += v;

  TapeLossResult out;
  out.report.partition = partition;
  out.report.per_group.assign(static_cast<size_t>(n_g), 0.0);

  auto terms = std::make_shared<std::vector<NllTerm>>();
  const double floor_ln = ln_denorm_min(Precision::single_prec);
  size_t under = 0, triples = 0;

  for (int g = 0; g < n_g; ++g) {
    for (const auto& gt : gts) {
      NllTerm term;
      term.sel = visible_selection(gt, partition.groups[static_cast<size_t>(g)]);
      if (term.sel.empty()) continue;
      for (int j : term.sel) {
        term.sel_coords.push_back(gt.x(j));
        term.sel_coords.push_back(gt.y(j));
      }
      out.report.per_group[static_cast<size_t>(g)] -=
          mixture_log_likelihood(plain, gt, term.sel, kind);
      term.resp = responsibilities(plain, gt, term.sel, kind);
      for (int m = 0; m < m_n; ++m) {
        const double lp =
            joint_log_pdf(kind, gt.coords, plain.mu_row(m), plain.gamma_row(m), term.sel);
        if (lp < floor_ln) ++under;
        ++triples;
      }
      terms->push_back(std::move(term));
    }
  }

  double total = 0.0;
  for (double v : out.report.per_group) total += v;
  out.report.loss = total / static_cast<double>(n_g);
  out.report.underflow =
      triples == 0 ? 0.0 : static_cast<double>(under) / static_cast<double>(triples);

  const bool rg =
      field.mu.requires_grad() || field.gamma.requires_grad() || field.o.requires_grad();
  out.loss = tape.variable(ad::Shape::scalar(), {out.report.loss}, rg);

  if (rg) {
    auto mu_d = field.mu.ptr();
    auto gm_d = field.gamma.ptr();
    auto o_d = field.o.ptr();
    auto loss_d = out.loss.ptr();
    auto pi = std::make_shared<std::vector<double>>(plain.pi);
    tape.record_custom([mu_d, gm_d, o_d, loss_d, pi, terms, kind, n_g, k2, m_n, o_sum]() {
      const double scale = loss_d->grad[0] / static_cast<double>(n_g);
      std::vector<double> c(static_cast<size_t>(m_n), 0.0);  // dL/dln(pi_m)
      for (const auto& term : *terms) {
        for (int m = 0; m < m_n; ++m) {
          const double w = scale * term.resp[static_cast<size_t>(m)];
          c[static_cast<size_t>(m)] -= w;
          if (mu_d->requires_grad || gm_d->requires_grad) {
            for (size_t t = 0; t < term.sel.size(); ++t) {
              const int j = term.sel[t];
              for (int d = 0; d < 2; ++d) {
                const size_t idx =
                    static_cast<size_t>(m) * k2 + 2 * static_cast<size_t>(j) + d;
                const double gamma = gm_d->val[idx];
                const double e = (term.sel_coords[2 * t + d] - mu_d->val[idx]) / gamma;
                double dmu, dgamma;
                neg_log_pdf_grads(kind, e, gamma, dmu, dgamma);
                if (mu_d->requires_grad) mu_d->grad[idx] += w * dmu;
                if (gm_d->requires_grad) gm_d->grad[idx] += w * dgamma;
              }
            }
          }
        }
      }
      if (o_d->requires_grad) {
        double c_sum = 0.0;
        for (double v : c) c_sum += v;
        for (int m = 0; m < m_n; ++m) {
          o_d->grad[static_cast<size_t>(m)] +=
              c[static_cast<size_t>(m)] / o_d->val[static_cast<size_t>(m)] - c_sum / o_sum;
        }
      }
    });
  }
  return out;
}

ad::Tensor group_nll_composed(ad::Tape& tape, const TapeField& field,
                              const std::vector<KeypointSet>& gts,
                              const GroupPartition& partition, ComponentKind kind) {
  if (gts.empty()) throw std::invalid_argument("group_nll_composed: no ground truths");
  const int m_n = field.o.shape().numel();
  const int k2 = field.mu.shape().d[1];
  const int n_g = partition.num_groups();

  // ln pi = log o - log sum o, broadcast via gather
  ad::Tensor log_o = tape.log(field.o);
  ad::Tensor log_sum_o = tape.log(tape.sum(field.o));
  ad::Tensor lse_bcast =
      tape.gather(log_sum_o, ad::Shape::vec(m_n), std::vector<int>(static_cast<size_t>(m_n), 0));
  ad::Tensor ln_pi = tape.sub(log_o, lse_bcast);

  ad::Tensor total;
  for (const auto& group : partition.groups) {
    for (const auto& gt : gts) {
      const DimSelection sel = visible_selection(gt, group);
      if (sel.empty()) continue;
      const int d_n = static_cast<int>(sel.size()) * 2;

      std::vector<int> idx;
      std::vector<double> kvals;
      idx.reserve(static_cast<size_t>(m_n) * d_n);
      kvals.reserve(static_cast<size_t>(m_n) * d_n);
      for (int m = 0; m < m_n; ++m) {
        for (int j : sel) {
          idx.push_back(m * k2 + 2 * j);
          idx.push_back(m * k2 + 2 * j + 1);
          kvals.push_back(gt.x(j));
          kvals.push_back(gt.y(j));
        }
      }
      const ad::Shape ms = ad::Shape::mat(m_n, d_n);
      ad::Tensor mu_s = tape.gather(field.mu, ms, idx);
      ad::Tensor gm_s = tape.gather(field.gamma, ms, std::move(idx));
      ad::Tensor k_c = tape.constant(ms, std::move(kvals));
      ad::Tensor resid = tape.sub(k_c, mu_s);

      ad::Tensor ll;  // per-dimension log pdf, (M, D)
      switch (kind) {
        case ComponentKind::laplace:
          ll = tape.neg(tape.add(tape.log(tape.scalar_mul(gm_s, 2.0)),
                                 tape.div(tape.abs(resid), gm_s)));
          break;
        case ComponentKind::gaussian:
          ll = tape.neg(
              tape.add(tape.scalar_mul(tape.log(tape.scalar_mul(tape.square(gm_s), 2.0 * M_PI)),
                                       0.5),
                       tape.div(tape.square(resid), tape.scalar_mul(tape.square(gm_s), 2.0))));
          break;
        case ComponentKind::cauchy:
          ll = tape.neg(tape.add(tape.log(tape.scalar_mul(gm_s, M_PI)),
                                 tape.log(tape.add_scalar(tape.square(tape.div(resid, gm_s)),
                                                          1.0))));
          break;
      }
      ad::Tensor joint = tape.sum_over(ll, 1);            // (M)
      ad::Tensor a = tape.add(joint, ln_pi);              // (M)
      ad::Tensor lse = tape.logsumexp_over(a, 0);         // scalar
      total = total.defined() ? tape.add(total, lse) : lse;
    }
  }
  if (!total.defined()) {
    return tape.constant(ad::Shape::scalar(), {0.0});
  }
  return tape.scalar_mul(total, -1.0 / static_cast<double>(n_g));
}

TapeLossResult full_nll_linear_single_node(ad::Tape& tape, const TapeField& field,
                                           const std::vector<KeypointSet>& gts,
                                           ComponentKind kind) {
  if (gts.empty()) throw std::invalid_argument("full_nll_linear_single_node: no ground truths");
  const int m_n = field.o.shape().numel();
  const int k2 = field.mu.shape().d[1];
  const int k_total = k2 / 2;

  MixtureField plain = MixtureField::from_o(k_total, field.mu.val(), field.gamma.val(),
                                            field.o.val());
  double o_sum = 0.0;
  for (double v : plain.o) o_sum += v;

  TapeLossResult out;
  out.report.partition = single_group_partition(k_total);
  out.report.per_group.assign(1, 0.0);

  auto terms = std::make_shared<std::vector<NllTerm>>();
  const double floor_ln = ln_denorm_min(Precision::single_prec);
  size_t under = 0, pairs = 0;

  double loss = 0.0;
  for (const auto& gt : gts) {
    NllTerm term;
    term.sel = visible_selection(gt, out.report.partition.groups[0]);
    if (term.sel.empty()) continue;
    for (int j : term.sel) {
      term.sel_coords.push_back(gt.x(j));
      term.sel_coords.push_back(gt.y(j));
    }
    // Mixture sum accumulated in float, in component order.
    float p = 0.0f;
    std::vector<float> contrib(static_cast<size_t>(m_n), 0.0f);
    for (int m = 0; m < m_n; ++m) {
      const double lp =
          joint_log_pdf(kind, gt.coords, plain.mu_row(m), plain.gamma_row(m), term.sel);
      if (lp < floor_ln) ++under;
      ++pairs;
      const float f = std::exp(static_cast<float>(lp));
      const float w = static_cast<float>(plain.pi[static_cast<size_t>(m)]) * f;
      contrib[static_cast<size_t>(m)] = w;
      p += w;
    }
    if (p > 0.0f) {
      loss -= std::log(static_cast<double>(p));
      term.resp.resize(static_cast<size_t>(m_n));
      for (int m = 0; m < m_n; ++m) {
        term.resp[static_cast<size_t>(m)] =
            static_cast<double>(contrib[static_cast<size_t>(m)] / p);
      }
      terms->push_back(std::move(term));
    } else {
      loss = std::numeric_limits<double>::infinity();
    }
  }

  out.report.per_group[0] = loss;
  out.report.loss = loss;
  out.report.underflow = pairs == 0 ? 0.0 : static_cast<double>(under) / static_cast<double>(pairs);

  const bool rg =
      field.mu.requires_grad() || field.gamma.requires_grad() || field.o.requires_grad();
  out.loss = tape.variable(ad::Shape::scalar(), {loss}, rg);

  if (rg) {
    auto mu_d = field.mu.ptr();
    auto gm_d = field.gamma.ptr();
    auto o_d = field.o.ptr();
    auto loss_d = out.loss.ptr();
    tape.record_custom([mu_d, gm_d, o_d, loss_d, terms, kind, k2, m_n, o_sum]() {
      if (!std::isfinite(loss_d->val[0])) return;
      const double scale = loss_d->grad[0];
      std::vector<double> c(static_cast<size_t>(m_n), 0.0);
      for (const auto& term : *terms) {
        for (int m = 0; m < m_n; ++m) {
          const double w = scale * term.resp[static_cast<size_t>(m)];
          c[static_cast<size_t>(m)] -= w;
          for (size_t t = 0; t < term.sel.size(); ++t) {
            const int j = term.sel[t];
            for (int d = 0; d < 2; ++d) {
              const size_t idx = static_cast<size_t>(m) * k2 + 2 * static_cast<size_t>(j) + d;
              const double gamma = gm_d->val[idx];
              const double e = (term.sel_coords[2 * t + d] - mu_d->val[idx]) / gamma;
              double dmu, dgamma;
              neg_log_pdf_grads(kind, e, gamma, dmu, dgamma);
              if (mu_d->requires_grad) mu_d->grad[idx] += w * dmu;
              if (gm_d->requires_grad) gm_d->grad[idx] += w * dgamma;
            }
          }
        }
      }
      if (o_d->requires_grad) {
        double c_sum = 0.0;
        for (double v : c) c_sum += v;
        for (int m = 0; m < m_n; ++m) {
          o_d->grad[static_cast<size_t>(m)] +=
              c[static_cast<size_t>(m)] / o_d->val[static_cast<size_t>(m)] - c_sum / o_sum;
        }
      }
    });
  }
  return out;
}

}  // namespace kpmix
