#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "xpl/model/model.hpp"
#include "xpl/nn/tape.hpp"
#include "xpl/train/optimizer.hpp"
#include "xpl/vrp/instance.hpp"

namespace xpl::train {

struct TrainConfig {
  int epochs = 1;
  int batches_per_epoch = 200;
  int batch_size = 64;
  double learning_rate = 1e-4;
  // Per-group multipliers: backbone, decoder, heads, adapters.
  std::array<double, model::kParamGroupCount> group_lr_scale{1.0, 1.0, 1.0, 1.0};
  double alpha = 0.05;
  int val_size = 1000;
  int n_customers = 20;
  vrp::Distribution distribution = vrp::Distribution::kUniform;
  std::uint64_t seed = 1;
  double max_grad_norm = 1.0;
  int pomo_starts = 0;  // 0: one start per customer (every node for TSP)

  void validate() const;
};

struct StepStats {
  double mean_cost = 0.0;
  double mean_advantage = 0.0;
  double loss = 0.0;
  double grad_norm = 0.0;
  std::vector<double> advantage_sums;  // per instance, multi-start only
};

// Surrogates whose gradients are the policy-gradient estimates.
// Plain: mean over rollouts of (cost - baseline) * log p.
nn::Var reinforce_surrogate(nn::Var log_prob, std::span<const double> costs, std::span<const double> baselines);
// Multi-start: rollouts are grouped per instance (`starts` consecutive
// rollouts), each group's mean cost is its baseline, and the sum is
// divided by the rollout count. Writes the advantages when asked.
nn::Var pomo_surrogate(nn::Var log_prob, std::span<const double> costs, std::size_t starts,
                       std::vector<double>* advantages = nullptr);

struct TrainState {
  TrainState(model::PolicyModel model, TrainConfig config);

  model::PolicyModel model;
  std::optional<model::PolicyModel> baseline;  // greedy-rollout baseline, AM profile
  Adam optimizer;
  TrainConfig config;
  int epoch = 0;  // completed epochs

  std::vector<nn::Param*> params();
  std::vector<double> lr_scales() const;
};

// Backpropagates `loss`, clips, and applies one optimizer step. Returns
// the gradient norm before clipping.
double apply_update(TrainState& state, nn::Tape& tape, nn::Var loss);

StepStats reinforce_step(TrainState& state, std::span<const vrp::Instance> batch, std::mt19937_64& rng);
StepStats pomo_step(TrainState& state, std::span<const vrp::Instance> batch, std::mt19937_64& rng);

// Greedy costs of the trained and the baseline model on `val`, compared by
// the one-sided paired t-test. Copies the trained model into the baseline
// on a significant improvement.
bool maybe_replace_baseline(TrainState& state, std::span<const vrp::Instance> val);

// Mixes run seed and counters into an independent stream seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0);

}  // namespace xpl::train
