#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "xpl/model/model.hpp"
#include "xpl/model/state.hpp"
#include "xpl/nn/attention.hpp"
#include "xpl/nn/tape.hpp"
#include "xpl/vrp/instance.hpp"

namespace xpl::model {

// Binds a model to a tape for one forward pass. Parameters become tape
// leaves on first use. Frozen normalization layers and every layer of an
// inference pass use running statistics; trainable batch norms in a
// training pass use batch statistics and update the running ones.
class Forward {
 public:
  // Inference pass: the model is not modified.
  Forward(const PolicyModel& model, nn::Tape& tape);
  // Training pass: gradients flow into trainable params and running
  // statistics are updated.
  Forward(PolicyModel& model, nn::Tape& tape, bool training);

  const PolicyModel& model() const { return *model_; }
  nn::Tape& tape() { return *tape_; }
  bool training() const { return training_; }

  nn::Var param(std::size_t index);
  nn::Var affine(const AffineRef& ref, nn::Var x);
  nn::Var norm(const NormRef& ref, nn::Var x);

 private:
  const PolicyModel* model_;
  PolicyModel* mutable_model_ = nullptr;
  nn::Tape* tape_;
  bool training_ = false;
  std::vector<std::optional<nn::Var>> leaves_;
};

struct Encoding {
  nn::Var nodes;    // (B, N, d)
  nn::Var graph;    // (B, d)
  std::size_t batch = 0;
  std::size_t node_count = 0;
};

// Checks that a batch is nonempty, matches the model's problem, and shares
// one node count.
void check_batch(const PolicyModel& model, std::span<const vrp::Instance> batch);

// Initial node embeddings h0 (B, N, d): coordinate projection for
// customers plus the additive attribute heads; the depot goes through its
// own head.
nn::Var initial_embeddings(Forward& fwd, std::span<const vrp::Instance> batch);

Encoding encode(Forward& fwd, std::span<const vrp::Instance> batch);

// Convenience for a single instance in inference mode: node embeddings
// (N, d) and the graph embedding (d).
std::pair<nn::Tensor, nn::Tensor> encode(const PolicyModel& model, const vrp::Instance& instance);

// Per-rollout decoder inputs derived once from an encoding.
struct DecodeContext {
  nn::Var nodes;          // (R, N, d)
  nn::Var glimpse_key;    // (R*H, N, k)
  nn::Var glimpse_value;  // (R*H, N, k)
  nn::Var logit_key;      // (R, N, d)
  std::optional<nn::Var> graph_context;  // (R, d)
  std::size_t rollouts = 0;
  std::size_t node_count = 0;
};

// Every instance of the encoding is repeated `repeats` times consecutively.
DecodeContext prepare_decoder(Forward& fwd, const Encoding& encoding, std::size_t repeats);

// Clipped compatibility logits (R, N) for the next action of every rollout.
nn::Var decode_logits(Forward& fwd, const DecodeContext& ctx, std::span<const ConstructionState> states,
                      const nn::Mask& mask);

// Next-node probabilities of a single partial solution.
std::vector<double> decode_step(const PolicyModel& model, const vrp::Instance& instance,
                                const ConstructionState& state);

enum class DecodeMode : std::uint8_t { kGreedy, kSample };

struct RolloutRequest {
  DecodeMode mode = DecodeMode::kGreedy;
  std::size_t repeats = 1;
  // One forced first node per rollout, or empty. A forced step contributes
  // nothing to the log-probability.
  std::vector<std::size_t> first_nodes;
  // Replays fixed action sequences (one per rollout) instead of decoding.
  const std::vector<std::vector<std::size_t>>* actions = nullptr;
};

struct RolloutResult {
  std::vector<vrp::Tour> tours;    // rollout r belongs to instance r / repeats
  std::vector<std::vector<std::size_t>> actions;
  nn::Var log_prob;                // (R)
  std::vector<double> log_probs;
};

RolloutResult rollout(Forward& fwd, std::span<const vrp::Instance> batch, const RolloutRequest& request,
                      std::mt19937_64& rng);

struct Construction {
  vrp::Tour tour;
  double log_prob = 0.0;
};

// One tour for one instance in inference mode.
Construction construct(const PolicyModel& model, const vrp::Instance& instance, DecodeMode mode,
                       std::mt19937_64& rng);

// First nodes for multi-start decoding: nodes 0..count-1 for TSP and
// customers 1..count otherwise, skipping nodes the first step may not take
// (reusing the admissible ones in order to keep `count` entries).
std::vector<std::size_t> start_nodes(const vrp::Instance& instance, std::size_t count);

// Greedy tours decoded in batches of equally sized instances. With
// multi_start every start node is tried and the cheapest tour kept;
// batch_size then bounds the number of rollouts per pass.
std::vector<vrp::Tour> greedy_tours(const PolicyModel& model, std::span<const vrp::Instance> instances,
                                    bool multi_start, std::size_t batch_size = 128);

}  // namespace xpl::model
