#include <benchmark/benchmark.h>

#include "kpmix/decode.hpp"
#include "kpmix/grouping.hpp"
#include "kpmix/loss_node.hpp"
#include "kpmix/synth.hpp"
#include "kpmix/train.hpp"

using namespace kpmix;

namespace {

MixtureField bench_field(int components, int keypoints) {
  Rng rng(7);
  const int k2 = 2 * keypoints;
  std::vector<double> mu, gm, o;
  for (int i = 0; i < components * k2; ++i) {
    mu.push_back(rng.uniform(0.0, 64.0));
    gm.push_back(rng.uniform(0.5, 16.0));
  }
  for (int i = 0; i < components; ++i) o.push_back(rng.uniform(0.01, 0.99));
  return MixtureField::from_o(keypoints, std::move(mu), std::move(gm), std::move(o));
}

std::vector<KeypointSet> bench_gts(int persons, int keypoints) {
  Rng rng(13);
  std::vector<KeypointSet> gts;
  for (int i = 0; i < persons; ++i) {
    std::vector<double> c;
    for (int j = 0; j < 2 * keypoints; ++j) c.push_back(rng.uniform(0.0, 64.0));
    gts.push_back(KeypointSet::all_visible(c));
  }
  return gts;
}

void BM_conv2d_head_layer(benchmark::State& state) {
  ad::Tape tape;
  Rng rng(3);
  std::vector<double> x(8 * 32 * 8 * 8), w(32 * 32 * 9), b(32);
  for (auto& v : x) v = rng.uniform(-1, 1);
  for (auto& v : w) v = rng.uniform(-0.2, 0.2);
  ad::Tensor xt = tape.constant(ad::Shape::nchw(8, 32, 8, 8), x);
  ad::Tensor wt = tape.constant(ad::Shape::nchw(32, 32, 3, 3), w);
  ad::Tensor bt = tape.constant(ad::Shape::vec(32), b);
  for (auto _ : state) {
    ad::Tape t;
    ad::Tensor out = t.conv2d_3x3(xt, wt, bt);
    benchmark::DoNotOptimize(out.val().data());
  }
}
BENCHMARK(BM_conv2d_head_layer);

void BM_conv2d_forward_backward(benchmark::State& state) {
  Rng rng(3);
  std::vector<double> x(8 * 32 * 8 * 8), w(32 * 32 * 9), b(32);
  for (auto& v : x) v = rng.uniform(-1, 1);
  for (auto& v : w) v = rng.uniform(-0.2, 0.2);
  for (auto _ : state) {
    ad::Tape t;
    ad::Tensor xt = t.variable(ad::Shape::nchw(8, 32, 8, 8), x);
    ad::Tensor wt = t.variable(ad::Shape::nchw(32, 32, 3, 3), w);
    ad::Tensor bt = t.variable(ad::Shape::vec(32), b);
    ad::Tensor loss = t.sum(t.conv2d_3x3(xt, wt, bt));
    t.backward(loss);
    benchmark::DoNotOptimize(wt.grad().data());
  }
}
BENCHMARK(BM_conv2d_forward_backward);

void BM_mixture_log_likelihood(benchmark::State& state) {
  const MixtureField f = bench_field(80, 6);
  const auto gts = bench_gts(2, 6);
  const DimSelection sel = full_selection(6);
  for (auto _ : state) {
    double acc = 0.0;
    for (const auto& gt : gts) acc += mixture_log_likelihood(f, gt, sel, ComponentKind::laplace);
    benchmark::DoNotOptimize(acc);
  }
}
BENCHMARK(BM_mixture_log_likelihood);

void BM_group_nll_node(benchmark::State& state) {
  const MixtureField f = bench_field(80, 6);
  const auto gts = bench_gts(2, 6);
  Rng prng(5);
  const GroupPartition part = sample_partition(6, 3, prng);
  for (auto _ : state) {
    ad::Tape tape;
    TapeField tf{tape.variable(ad::Shape::mat(80, 12), f.mu),
                 tape.variable(ad::Shape::mat(80, 12), f.gamma),
                 tape.variable(ad::Shape::vec(80), f.o)};
    TapeLossResult r = group_nll_node(tape, tf, gts, part, ComponentKind::laplace);
    tape.backward(r.loss);
    benchmark::DoNotOptimize(tf.mu.grad().data());
  }
}
BENCHMARK(BM_group_nll_node);

void BM_decode_nms(benchmark::State& state) {
  const MixtureField f = bench_field(80, 6);
  for (auto _ : state) {
    const auto kept = nms(decode(f, 1e-4, 5), 0.7);
    benchmark::DoNotOptimize(kept.size());
  }
}
BENCHMARK(BM_decode_nms);

void BM_sample_scene(benchmark::State& state) {
  GenConfig cfg;
  cfg.max_iou_min = 0.3;
  cfg.max_iou_max = 0.8;
  cfg.min_persons = 2;
  cfg.max_persons = 3;
  uint64_t seed = 0;
  for (auto _ : state) {
    const Scene s = sample_scene(cfg, seed++);
    benchmark::DoNotOptimize(s.image.data());
  }
}
BENCHMARK(BM_sample_scene);

}  // namespace

BENCHMARK_MAIN();
