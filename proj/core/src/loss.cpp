#include "kpmix/loss.hpp"

#include <stdexcept>

namespace kpmix {

DimSelection visible_selection(const KeypointSet& gt, const std::vector<int>& group) {
  DimSelection sel;
  sel.reserve(group.size());
  for (int j : group) {
    if (gt.visible(j)) sel.push_back(j);
  }
  return sel;
}

double full_nll_loss(const MixtureField& field, const std::vector<KeypointSet>& gts,
                     ComponentKind kind) {
  if (gts.empty()) throw std::invalid_argument("full_nll_loss: no ground truths");
  double loss = 0.0;
  for (const auto& gt : gts) {
    const DimSelection sel = visible_selection(gt, full_selection(gt.num_keypoints()));
    if (sel.empty()) continue;  // fully unlabeled person contributes log 1 = 0
    loss -= mixture_log_likelihood(field, gt, sel, kind);
  }
  return loss;
}

LossReport group_nll_loss(const MixtureField& field, const std::vector<KeypointSet>& gts,
                          const GroupPartition& partition, ComponentKind kind) {
  if (gts.empty()) throw std::invalid_argument("group_nll_loss: no ground truths");
  if (partition.num_groups() < 1) throw std::invalid_argument("group_nll_loss: empty partition");

  LossReport report;
  report.partition = partition;
  report.per_group.assign(partition.groups.size(), 0.0);

  const double floor_ln = ln_denorm_min(Precision::single_prec);
  size_t under = 0, triples = 0;

  for (size_t g = 0; g < partition.groups.size(); ++g) {
    for (const auto& gt : gts) {
      const DimSelection sel = visible_selection(gt, partition.groups[g]);
      if (sel.empty()) continue;
      report.per_group[g] -= mixture_log_likelihood(field, gt, sel, kind);
      for (int m = 0; m < field.num_components; ++m) {
        const double lp =
            joint_log_pdf(kind, gt.coords, field.mu_row(m), field.gamma_row(m), sel);
        if (lp < floor_ln) ++under;
        ++triples;
      }
    }
  }

  double total = 0.0;
  for (double v : report.per_group) total += v;
  report.loss = total / static_cast<double>(partition.num_groups());
  report.underflow = triples == 0 ? 0.0 : static_cast<double>(under) / static_cast<double>(triples);
  return report;
}

}  // namespace kpmix
