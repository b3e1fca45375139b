#include <cmath>
#include <cstring>
#include <filesystem>
#include <numeric>
#include <random>

#include "doctest.h"
#include "xpl/core/error.hpp"
#include "xpl/model/policy.hpp"
#include "xpl/nn/ops.hpp"
#include "xpl/train/augment.hpp"
#include "xpl/train/loop.hpp"
#include "xpl/train/trainer.hpp"
#include "xpl/train/ttest.hpp"
#include "xpl/vrp/generate.hpp"

using namespace xpl;
using namespace xpl::train;
using model::AdapterMode;
using model::BackboneConfig;
using model::FinetuneMode;
using model::ParamGroup;
using model::Profile;
using vrp::Problem;
namespace fs = std::filesystem;

namespace {

BackboneConfig tiny(Profile p = Profile::kAm) {
  BackboneConfig c;
  c.profile = p;
  c.d_model = 8;
  c.n_heads = 2;
  c.n_encoder_layers = 1;
  c.ff_hidden = 16;
  return c;
}

TrainConfig small_run() {
  TrainConfig c;
  c.epochs = 3;
  c.batches_per_epoch = 2;
  c.batch_size = 4;
  c.val_size = 8;
  c.n_customers = 5;
  c.learning_rate = 1e-3;
  c.seed = 21;
  return c;
}

std::vector<float> bytes_of(const model::PolicyModel& m, std::optional<ParamGroup> only = {}, bool buffers = true) {
  std::vector<float> out;
  const auto& store = m.params();
  for (std::size_t i = 0; i < store.size(); ++i) {
    if (only && store.group(i) != *only) continue;
    if (!buffers && store[i].buffer) continue;
    for (double v : store[i].value.values()) out.push_back(static_cast<float>(v));
  }
  return out;
}

// Two-action bandit: action 1 costs 0, action 0 costs 1. Logits are a
// (1, 2) parameter broadcast to every row through a ones column.
nn::Var bandit_log_prob(nn::Tape& t, nn::Param& theta, std::span<const std::size_t> actions) {
  nn::Var ones = t.constant(nn::Tensor({actions.size(), 1}, 1.0));
  nn::Var logits = nn::matmul(ones, t.parameter(theta));
  return nn::log_softmax_pick(logits, nn::Mask(actions.size() * 2, 1), actions);
}

double prob_one(const nn::Param& theta) {
  return 1.0 / (1.0 + std::exp(theta.value[0] - theta.value[1]));
}

// Student-t lower tail through the regularized incomplete beta function,
// evaluated with the Lentz continued fraction.
double incomplete_beta_cf(double a, double b, double x) {
  const double tiny_v = 1e-300;
  double c = 1.0, d = 1.0 - (a + b) * x / (a + 1.0);
  if (std::abs(d) < tiny_v) d = tiny_v;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m < 10000; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((a + m2 - 1.0) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < tiny_v) d = tiny_v;
    c = 1.0 + aa / c;
    if (std::abs(c) < tiny_v) c = tiny_v;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (a + b + m) * x / ((a + m2) * (a + m2 + 1.0));
    d = 1.0 + aa * d;
    if (std::abs(d) < tiny_v) d = tiny_v;
    c = 1.0 + aa / c;
    if (std::abs(c) < tiny_v) c = tiny_v;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < 1e-16) break;
  }
  return h;
}

double reg_incomplete_beta(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double front =
      std::exp(std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x));
  if (x < (a + 1.0) / (a + b + 2.0)) return front * incomplete_beta_cf(a, b, x) / a;
  return 1.0 - front * incomplete_beta_cf(b, a, 1.0 - x) / b;
}

double student_t_lower(double t, double dof) {
  const double tail = 0.5 * reg_incomplete_beta(dof / 2.0, 0.5, dof / (dof + t * t));
  return t < 0 ? tail : 1.0 - tail;
}

}  // namespace

TEST_CASE("equal cost and baseline give zero gradient") {
  auto m = model::assemble(Problem::kOp, tiny(), AdapterMode::kNone, 3);
  auto batch = vrp::generate_instances(Problem::kOp, 5, 3, vrp::Distribution::kUniform, 2);
  m.zero_grad();
  nn::Tape tape;
  model::Forward f(m, tape, true);
  std::mt19937_64 rng(1);
  model::RolloutRequest req;
  req.mode = model::DecodeMode::kSample;
  auto res = model::rollout(f, batch, req, rng);
  std::vector<double> costs;
  for (auto& t : res.tours) costs.push_back(t.cost);
  tape.backward(reinforce_surrogate(res.log_prob, costs, costs));
  for (const auto& p : m.params().all())
    for (double g : p.grad.values()) CHECK(g == 0.0);
}

TEST_CASE("training step statistics are finite") {
  for (auto prof : {Profile::kAm, Profile::kPomo}) {
    auto m = model::assemble(Problem::kCvrp, tiny(prof), AdapterMode::kNone, 3);
    TrainState st(m, small_run());
    auto batch = vrp::generate_instances(Problem::kCvrp, 5, 4, vrp::Distribution::kUniform, 2);
    std::mt19937_64 rng(1);
    StepStats s = prof == Profile::kAm ? reinforce_step(st, batch, rng) : pomo_step(st, batch, rng);
    CHECK(std::isfinite(s.mean_cost));
    CHECK(std::isfinite(s.mean_advantage));
    CHECK(std::isfinite(s.grad_norm));
    CHECK(std::isfinite(s.loss));
    CHECK(s.grad_norm > 0.0);
  }
}

TEST_CASE("two-action bandit converges to the cheap action") {
  nn::Param theta;
  theta.name = "theta";
  theta.value = nn::Tensor({1, 2});
  theta.grad = nn::Tensor({1, 2});
  Adam adam;
  std::mt19937_64 rng(5);
  const std::size_t batch = 16;
  for (int step = 0; step < 200; ++step) {
    const double p1 = prob_one(theta);
    std::vector<std::size_t> actions(batch);
    std::vector<double> costs(batch);
    std::bernoulli_distribution coin(p1);
    for (std::size_t i = 0; i < batch; ++i) {
      actions[i] = coin(rng) ? 1 : 0;
      costs[i] = actions[i] == 1 ? 0.0 : 1.0;
    }
    const double mean = std::accumulate(costs.begin(), costs.end(), 0.0) / batch;
    std::vector<double> base(batch, mean);
    theta.zero_grad();
    nn::Tape t;
    t.backward(reinforce_surrogate(bandit_log_prob(t, theta, actions), costs, base));
    nn::Param* ps[] = {&theta};
    adam.step(ps, 0.1);
  }
  CHECK(prob_one(theta) > 0.99);
}

TEST_CASE("policy-gradient estimate is unbiased on the bandit") {
  nn::Param theta;
  theta.value = nn::Tensor({1, 2}, std::vector<double>{0.3, -0.4});
  theta.grad = nn::Tensor({1, 2});
  const double p1 = prob_one(theta), p0 = 1.0 - p1;
  const double c0 = 1.0, c1 = 0.25;
  const double expected = p0 * c0 + p1 * c1;
  // d E[c] / d theta_k = p_k (c_k - E[c]).
  const double analytic[2] = {p0 * (c0 - expected), p1 * (c1 - expected)};

  const std::size_t n = 100000;
  std::mt19937_64 rng(9);
  std::bernoulli_distribution coin(p1);
  std::vector<std::size_t> actions(n);
  std::vector<double> costs(n), zero(n, 0.0);
  double sq[2] = {0, 0}, mean[2] = {0, 0};
  for (std::size_t i = 0; i < n; ++i) {
    actions[i] = coin(rng) ? 1 : 0;
    costs[i] = actions[i] == 1 ? c1 : c0;
    for (int k = 0; k < 2; ++k) {
      const double g = costs[i] * ((actions[i] == static_cast<std::size_t>(k) ? 1.0 : 0.0) - (k == 1 ? p1 : p0));
      mean[k] += g / n;
      sq[k] += g * g / n;
    }
  }
  nn::Tape t;
  t.backward(reinforce_surrogate(bandit_log_prob(t, theta, actions), costs, zero));
  for (int k = 0; k < 2; ++k) {
    const double se = std::sqrt((sq[k] - mean[k] * mean[k]) / n);
    CHECK(std::abs(theta.grad[k] - mean[k]) < 1e-12);
    CHECK(std::abs(theta.grad[k] - analytic[k]) < 3.0 * se);
  }
}

TEST_CASE("paired t-test against a continued-fraction reference") {
  const std::vector<std::vector<double>> diffs = {
      {-0.3, -0.1, 0.05, -0.2, -0.15, 0.02, -0.08},
      {0.1, -0.05, 0.02, -0.01, 0.03},
      {-1.0, -0.9, -1.2, -0.7, -1.1, -0.95, -1.05, -0.8, -1.0, -0.99},
      {-0.02, 0.01, -0.03, 0.02, -0.01, 0.0, -0.04, 0.015},
  };
  for (const auto& d : diffs) {
    std::vector<double> base(d.size()), cand(d.size());
    for (std::size_t i = 0; i < d.size(); ++i) {
      base[i] = 5.0 + 0.1 * i;
      cand[i] = base[i] + d[i];
    }
    const PairedTTest r = paired_t_test(cand, base);
    const double n = static_cast<double>(d.size());
    const double mu = std::accumulate(d.begin(), d.end(), 0.0) / n;
    double ss = 0.0;
    for (double x : d) ss += (x - mu) * (x - mu);
    const double t = mu / std::sqrt(ss / (n - 1) / n);
    const double p = student_t_lower(t, n - 1);
    CHECK(r.t == doctest::Approx(t).epsilon(1e-9));
    CHECK(std::abs(r.p_value - p) < 1e-9);
    CHECK(significant_improvement(r, 0.05) == (mu < 0 && p < 0.05));
  }
  std::vector<double> a{1, 2, 3}, b{2, 3, 4};
  CHECK(paired_t_test(a, b).p_value == 0.0);
  CHECK(significant_improvement(paired_t_test(a, b), 0.05));
  CHECK_FALSE(significant_improvement(paired_t_test(a, a), 0.05));
}

TEST_CASE("baseline replacement decisions") {
  auto m = model::assemble(Problem::kTsp, tiny(), AdapterMode::kNone, 3);
  TrainState st(m, small_run());
  auto val = vrp::generate_instances(Problem::kTsp, 5, 10, vrp::Distribution::kUniform, 2);
  CHECK_FALSE(maybe_replace_baseline(st, val));
  CHECK_THROWS_AS(maybe_replace_baseline(st, std::span<const vrp::Instance>{}), Error);
}

TEST_CASE("multi-start surrogate") {
  // B = 2 instances, 3 starts each.
  const std::vector<double> costs{3.0, 5.0, 4.0, 1.0, 1.5, 2.0};
  const std::vector<double> logp{-0.5, -1.2, -0.7, -2.0, -0.1, -0.9};
  nn::Param lp;
  lp.value = nn::Tensor({6}, logp);
  lp.grad = nn::Tensor({6});
  nn::Tape t;
  std::vector<double> adv;
  nn::Var loss = pomo_surrogate(t.parameter(lp), costs, 3, &adv);
  const double b0 = 4.0, b1 = 1.5;
  const double hand = ((3 - b0) * -0.5 + (5 - b0) * -1.2 + (4 - b0) * -0.7 + (1 - b1) * -2.0 + (1.5 - b1) * -0.1 +
                       (2 - b1) * -0.9) / 6.0;
  CHECK(std::abs(loss.value()[0] - hand) < 1e-9);
  CHECK(std::abs(adv[0] + adv[1] + adv[2]) < 1e-12);
  CHECK(std::abs(adv[3] + adv[4] + adv[5]) < 1e-12);

  nn::Tape t2;
  const std::vector<double> flat(6, 2.5);
  lp.zero_grad();
  t2.backward(pomo_surrogate(t2.parameter(lp), flat, 3));
  for (double g : lp.grad.values()) CHECK(g == 0.0);
}

TEST_CASE("multi-start step advantages sum to zero per instance") {
  for (Problem p : {Problem::kTsp, Problem::kCvrp}) {
    auto m = model::assemble(p, tiny(Profile::kPomo), AdapterMode::kNone, 3);
    TrainState st(m, small_run());
    auto batch = vrp::generate_instances(p, 5, 3, vrp::Distribution::kUniform, 2);
    std::mt19937_64 rng(1);
    for (int k = 0; k < 3; ++k) {
      StepStats s = pomo_step(st, batch, rng);
      REQUIRE(s.advantage_sums.size() == 3);
      for (double a : s.advantage_sums) CHECK(std::abs(a) < 1e-6);
    }
    TrainConfig c = small_run();
    c.pomo_starts = 6;
    TrainState bad(m, c);
    CHECK_THROWS_AS(pomo_step(bad, batch, rng), Error);
  }
}

TEST_CASE("optimizer touches only trainable parameters") {
  for (AdapterMode a : {AdapterMode::kInside, AdapterMode::kSide, AdapterMode::kLora}) {
    auto bb = model::assemble(Problem::kTsp, tiny(), AdapterMode::kNone, 1);
    auto m = model::assemble(Problem::kOp, tiny(), a, 2, &bb);
    const auto before = bytes_of(m, ParamGroup::kBackbone);
    const auto adapters_before = bytes_of(m, ParamGroup::kAdapters);
    TrainState st(m, small_run());
    auto batch = vrp::generate_instances(Problem::kOp, 5, 4, vrp::Distribution::kUniform, 2);
    std::mt19937_64 rng(1);
    for (int k = 0; k < 3; ++k) reinforce_step(st, batch, rng);
    CHECK(bytes_of(st.model, ParamGroup::kBackbone) == before);
    CHECK(bytes_of(st.model, ParamGroup::kAdapters) != adapters_before);
  }
}

TEST_CASE("dihedral augmentation") {
  const vrp::Point p{0.23, 0.71};
  auto same = [](vrp::Point a, vrp::Point b) { return std::abs(a.x - b.x) < 1e-15 && std::abs(a.y - b.y) < 1e-15; };
  CHECK(same(transform_point(p, 0), p));
  CHECK(same(transform_point(p, 2), {0.23, 1 - 0.71}));
  for (int a = 0; a < kSymmetries; ++a) {
    int inverse = 0;
    for (int b = 0; b < kSymmetries; ++b) {
      if (same(transform_point(transform_point(p, a), b), p)) ++inverse;
      int image = 0;
      for (int c = 0; c < kSymmetries; ++c) {
        if (same(transform_point(transform_point(p, a), b), transform_point(p, c))) ++image;
      }
      CHECK(image == 1);
    }
    CHECK(inverse == 1);
  }
  for (Problem pr : {Problem::kTsp, Problem::kOp, Problem::kPctsp, Problem::kCvrp}) {
    const auto in = vrp::generate_instances(pr, 7, 1, vrp::Distribution::kUniform, 4)[0];
    std::vector<std::size_t> nodes;
    if (pr == Problem::kTsp) nodes = {0, 3, 1, 6, 2, 5, 4};
    else if (pr == Problem::kCvrp) nodes = {0, 1, 2, 0, 3, 4, 0, 5, 6, 7, 0};
    else nodes = {0, 2, 5, 0};
    const vrp::Tour ref = vrp::make_tour(in, nodes);
    for (const vrp::Instance& v : augment_instance(in)) {
      CHECK(std::abs(vrp::make_tour(v, nodes).cost - ref.cost) < 1e-9);
      CHECK(v.prizes == in.prizes);
      CHECK(v.penalties == in.penalties);
      CHECK(v.demands == in.demands);
      CHECK(v.capacity == in.capacity);
      CHECK(v.max_length == in.max_length);
      CHECK(v.min_prize == in.min_prize);
    }
  }
}

TEST_CASE("training loop history, zero learning rate and resume") {
  const fs::path dir = fs::temp_directory_path() / "xpl_resume_test";
  fs::remove_all(dir);
  TrainRequest req;
  req.problem = Problem::kTsp;
  req.backbone_config = tiny();
  req.config = small_run();

  SUBCASE("history has one record per epoch") {
    TrainResult r = xpl::train::train(req);
    CHECK(r.history.size() == 3);
    for (std::size_t i = 0; i < r.history.size(); ++i) {
      CHECK(r.history[i].epoch == static_cast<int>(i + 1));
      CHECK(parse_json_line(to_json_line(r.history[i])) == r.history[i]);
    }
  }
  SUBCASE("learning rate zero leaves parameters untouched") {
    req.config.learning_rate = 0.0;
    req.config.epochs = 1;
    auto init = model::assemble(Problem::kTsp, tiny(), AdapterMode::kNone, req.config.seed);
    TrainResult r = xpl::train::train(req);
    CHECK(bytes_of(r.model, std::nullopt, false) == bytes_of(init, std::nullopt, false));
  }
  SUBCASE("an interrupted run resumes to the same result") {
    for (auto prof : {Profile::kAm, Profile::kPomo}) {
      fs::remove_all(dir);
      req.backbone_config = tiny(prof);
      TrainResult straight = xpl::train::train(req);
      req.state_dir = dir;
      req.stop_after = 1;
      TrainResult first = xpl::train::train(req);
      CHECK(first.history.size() == 1);
      req.stop_after.reset();
      TrainResult resumed = xpl::train::train(req);
      CHECK(bytes_of(resumed.model) == bytes_of(straight.model));
      REQUIRE(resumed.history.size() == straight.history.size());
      for (std::size_t i = 0; i < straight.history.size(); ++i) {
        CHECK(resumed.history[i].val_cost == straight.history[i].val_cost);
        CHECK(resumed.history[i].train_cost == straight.history[i].train_cost);
        CHECK(resumed.history[i].baseline_replaced == straight.history[i].baseline_replaced);
      }
      req.state_dir.reset();
    }
  }
  SUBCASE("scratch and backbone starts differ only in the copied groups") {
    auto bb = model::assemble(Problem::kTsp, tiny(), AdapterMode::kNone, 77);
    auto scratch = model::assemble(Problem::kOp, tiny(), AdapterMode::kNone, 5);
    auto warm = model::assemble(Problem::kOp, tiny(), AdapterMode::kNone, 5, &bb);
    CHECK(bytes_of(warm, ParamGroup::kBackbone) == bytes_of(bb, ParamGroup::kBackbone));
    CHECK(bytes_of(warm, ParamGroup::kBackbone) != bytes_of(scratch, ParamGroup::kBackbone));
    CHECK(bytes_of(warm, ParamGroup::kHeads) == bytes_of(scratch, ParamGroup::kHeads));
    CHECK(bytes_of(warm, ParamGroup::kAdapters) == bytes_of(scratch, ParamGroup::kAdapters));
  }
  fs::remove_all(dir);
}
