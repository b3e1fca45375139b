#include "xpl/train/trainer.hpp"

#include <algorithm>
#include <numeric>

#include "xpl/core/error.hpp"
#include "xpl/model/policy.hpp"
#include "xpl/nn/ops.hpp"
#include "xpl/train/ttest.hpp"

namespace xpl::train {

using model::PolicyModel;
using vrp::Instance;

void TrainConfig::validate() const {
  require(epochs > 0 && batches_per_epoch > 0 && batch_size > 0 && val_size > 0 && n_customers > 0,
          ErrorCode::kInvalidArgument, "training sizes must be positive");
  require(learning_rate >= 0.0, ErrorCode::kInvalidArgument, "learning rate must be non-negative");
  require(alpha > 0.0 && alpha < 1.0, ErrorCode::kInvalidArgument, "alpha must lie in (0, 1)");
  require(max_grad_norm >= 0.0 && pomo_starts >= 0, ErrorCode::kInvalidArgument, "invalid training option");
  for (double s : group_lr_scale) {
    require(s >= 0.0, ErrorCode::kInvalidArgument, "learning-rate multipliers must be non-negative");
  }
}

nn::Var reinforce_surrogate(nn::Var log_prob, std::span<const double> costs, std::span<const double> baselines) {
  const std::size_t n = costs.size();
  require(n > 0 && baselines.size() == n && log_prob.value().size() == n, ErrorCode::kInvalidArgument,
          "one cost and baseline per rollout");
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) w[i] = (costs[i] - baselines[i]) / static_cast<double>(n);
  return nn::weighted_sum(log_prob, w);
}

nn::Var pomo_surrogate(nn::Var log_prob, std::span<const double> costs, std::size_t starts,
                       std::vector<double>* advantages) {
  const std::size_t n = costs.size();
  require(starts > 0 && n > 0 && n % starts == 0 && log_prob.value().size() == n, ErrorCode::kInvalidArgument,
          "rollouts must group evenly by start count");
  std::vector<double> adv(n);
  for (std::size_t j = 0; j < n / starts; ++j) {
    double mean = 0.0;
    for (std::size_t m = 0; m < starts; ++m) mean += costs[j * starts + m];
    mean /= static_cast<double>(starts);
    for (std::size_t m = 0; m < starts; ++m) adv[j * starts + m] = costs[j * starts + m] - mean;
  }
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) w[i] = adv[i] / static_cast<double>(n);
  if (advantages != nullptr) *advantages = adv;
  return nn::weighted_sum(log_prob, w);
}

TrainState::TrainState(PolicyModel m, TrainConfig c) : model(std::move(m)), config(c) {
  config.validate();
  if (model.config().profile == model::Profile::kAm) baseline = model;
}

std::vector<nn::Param*> TrainState::params() {
  std::vector<nn::Param*> out;
  for (nn::Param& p : model.params().all()) out.push_back(&p);
  return out;
}

std::vector<double> TrainState::lr_scales() const {
  std::vector<double> out;
  const model::ParamStore& store = model.params();
  for (std::size_t i = 0; i < store.size(); ++i) {
    out.push_back(config.group_lr_scale[static_cast<std::size_t>(store.group(i))]);
  }
  return out;
}

double apply_update(TrainState& state, nn::Tape& tape, nn::Var loss) {
  state.model.zero_grad();
  tape.backward(loss);
  const auto ps = state.params();
  const double norm = clip_grad_norm(ps, state.config.max_grad_norm);
  const auto scales = state.lr_scales();
  state.optimizer.step(ps, state.config.learning_rate, scales);
  return norm;
}

namespace {

std::vector<double> costs_of(const std::vector<vrp::Tour>& tours) {
  std::vector<double> c(tours.size());
  for (std::size_t i = 0; i < tours.size(); ++i) c[i] = tours[i].cost;
  return c;
}

double mean(std::span<const double> v) { return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()); }

}  // namespace

StepStats reinforce_step(TrainState& state, std::span<const Instance> batch, std::mt19937_64& rng) {
  require(state.baseline.has_value(), ErrorCode::kInvalidState, "greedy-rollout training needs a baseline model");
  const std::vector<double> base = costs_of(model::greedy_tours(*state.baseline, batch, false, batch.size()));

  nn::Tape tape;
  model::Forward fwd(state.model, tape, true);
  model::RolloutRequest req;
  req.mode = model::DecodeMode::kSample;
  model::RolloutResult res = model::rollout(fwd, batch, req, rng);
  const std::vector<double> costs = costs_of(res.tours);
  nn::Var loss = reinforce_surrogate(res.log_prob, costs, base);

  StepStats st;
  st.mean_cost = mean(costs);
  st.mean_advantage = st.mean_cost - mean(base);
  st.loss = loss.value()[0];
  st.grad_norm = apply_update(state, tape, loss);
  return st;
}

StepStats pomo_step(TrainState& state, std::span<const Instance> batch, std::mt19937_64& rng) {
  require(!batch.empty(), ErrorCode::kInvalidArgument, "empty batch");
  const vrp::Problem p = state.model.problem();
  require(p == vrp::Problem::kTsp || p == vrp::Problem::kCvrp, ErrorCode::kInvalidArgument,
          "multi-start training supports TSP and CVRP");
  const std::size_t customers = batch[0].node_count() - batch[0].first_customer();
  const std::size_t starts = state.config.pomo_starts == 0 ? customers : static_cast<std::size_t>(state.config.pomo_starts);
  require(starts <= customers, ErrorCode::kInvalidArgument, "more start nodes than customers");

  nn::Tape tape;
  model::Forward fwd(state.model, tape, true);
  model::RolloutRequest req;
  req.mode = model::DecodeMode::kSample;
  req.repeats = starts;
  for (const Instance& in : batch) {
    for (std::size_t s : model::start_nodes(in, starts)) req.first_nodes.push_back(s);
  }
  model::RolloutResult res = model::rollout(fwd, batch, req, rng);
  const std::vector<double> costs = costs_of(res.tours);
  std::vector<double> adv;
  nn::Var loss = pomo_surrogate(res.log_prob, costs, starts, &adv);

  StepStats st;
  st.mean_cost = mean(costs);
  st.mean_advantage = mean(adv);
  for (std::size_t j = 0; j < batch.size(); ++j) {
    st.advantage_sums.push_back(std::accumulate(adv.begin() + static_cast<long>(j * starts),
                                                adv.begin() + static_cast<long>((j + 1) * starts), 0.0));
  }
  st.loss = loss.value()[0];
  st.grad_norm = apply_update(state, tape, loss);
  return st;
}

bool maybe_replace_baseline(TrainState& state, std::span<const Instance> val) {
  require(!val.empty(), ErrorCode::kInvalidArgument, "validation set is empty");
  require(state.baseline.has_value(), ErrorCode::kInvalidState, "no baseline model");
  const std::vector<double> cand = costs_of(model::greedy_tours(state.model, val, false));
  const std::vector<double> base = costs_of(model::greedy_tours(*state.baseline, val, false));
  if (!significant_improvement(paired_t_test(cand, base), state.config.alpha)) return false;
  state.baseline = state.model;
  return true;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  std::uint64_t h = mix(seed);
  h = mix(h ^ a);
  h = mix(h ^ b);
  return mix(h ^ c);
}

}  // namespace xpl::train
