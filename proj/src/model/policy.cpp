#include "xpl/model/policy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "xpl/core/error.hpp"
#include "xpl/model/adapters.hpp"

namespace xpl::model {

using nn::Tensor;
using nn::Var;
using vrp::Instance;
using vrp::Problem;

Forward::Forward(const PolicyModel& model, nn::Tape& tape)
    : model_(&model), tape_(&tape), leaves_(model.params().size()) {}

Forward::Forward(PolicyModel& model, nn::Tape& tape, bool training)
    : model_(&model), mutable_model_(&model), tape_(&tape), training_(training), leaves_(model.params().size()) {}

Var Forward::param(std::size_t index) {
  auto& leaf = leaves_.at(index);
  if (!leaf) {
    leaf = mutable_model_ != nullptr ? tape_->parameter(mutable_model_->param(index))
                                     : tape_->parameter(model_->param(index));
  }
  return *leaf;
}

Var Forward::affine(const AffineRef& ref, Var x) {
  if (ref.bias) return nn::affine(x, param(ref.weight), param(*ref.bias));
  return nn::matmul(x, param(ref.weight));
}

Var Forward::norm(const NormRef& ref, Var x) {
  if (!ref.running_mean) return nn::instance_norm(x, param(ref.gamma), param(ref.beta));
  const bool frozen = !model_->param(ref.gamma).trainable;
  const bool batch_stats = training_ && !frozen;
  nn::RunningStats stats;
  stats.mean = &model_->param(*ref.running_mean).value;
  stats.var = &model_->param(*ref.running_var).value;
  if (batch_stats && mutable_model_ != nullptr) {
    stats.mean_out = &mutable_model_->param(*ref.running_mean).value;
    stats.var_out = &mutable_model_->param(*ref.running_var).value;
  }
  return nn::batch_norm(x, param(ref.gamma), param(ref.beta), stats, batch_stats);
}

void check_batch(const PolicyModel& model, std::span<const Instance> batch) {
  require(!batch.empty(), ErrorCode::kInvalidArgument, "empty batch");
  for (const Instance& in : batch) {
    require(in.problem == model.problem(), ErrorCode::kInvalidArgument,
            "instance problem " + std::string(vrp::to_string(in.problem)) + " does not match model problem " +
                std::string(vrp::to_string(model.problem())));
    require(in.node_count() == batch[0].node_count(), ErrorCode::kInvalidArgument,
            "instances in a batch must have the same size");
  }
}

namespace {

// (B, count, 2) coordinates of nodes [start, start + count).
Tensor coord_tensor(std::span<const Instance> batch, std::size_t start, std::size_t count) {
  Tensor t({batch.size(), count, 2});
  for (std::size_t b = 0; b < batch.size(); ++b) {
    for (std::size_t i = 0; i < count; ++i) {
      t.at(b, i, 0) = batch[b].coords[start + i].x;
      t.at(b, i, 1) = batch[b].coords[start + i].y;
    }
  }
  return t;
}

// Demands enter relative to the vehicle capacity.
Tensor attr_tensor(std::span<const Instance> batch, std::vector<double> Instance::*attr, std::size_t start,
                   std::size_t count) {
  Tensor t({batch.size(), count, 1});
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const std::vector<double>& v = batch[b].*attr;
    const double div = attr == &Instance::demands ? batch[b].capacity : 1.0;
    for (std::size_t i = 0; i < count; ++i) t.at(b, i, 0) = v[start + i] / div;
  }
  return t;
}

Var coord_embedding(Forward& fwd, Var coords) {
  const Layout& lay = fwd.model().layout();
  Var w = fwd.param(lay.coord.weight);
  if (lay.coord_lora) w = lora_weight(fwd, w, *lay.coord_lora);
  return nn::affine(coords, w, fwd.param(*lay.coord.bias));
}

Var self_attention(Forward& fwd, const AttentionRef& a, const LoraLayerRef* lora, Var x) {
  nn::AttentionWeights w{fwd.param(a.query), fwd.param(a.key), fwd.param(a.value), fwd.param(a.out),
                         std::nullopt};
  if (a.out_bias) w.out_bias = fwd.param(*a.out_bias);
  if (lora != nullptr) {
    w.query = lora_weight(fwd, w.query, lora->query);
    w.key = lora_weight(fwd, w.key, lora->key);
    w.value = lora_weight(fwd, w.value, lora->value);
    w.out = lora_weight(fwd, w.out, lora->out);
  }
  return nn::multi_head_attention(w, x, x, x, nullptr, fwd.model().heads());
}

}  // namespace

Var initial_embeddings(Forward& fwd, std::span<const Instance> batch) {
  const PolicyModel& model = fwd.model();
  check_batch(model, batch);
  nn::Tape& tape = fwd.tape();
  const std::size_t n = batch[0].node_count();
  if (!vrp::has_depot(model.problem())) return coord_embedding(fwd, tape.constant(coord_tensor(batch, 0, n)));

  const HeadsRef& heads = model.layout().heads;
  const std::size_t customers = n - 1;
  Var h = coord_embedding(fwd, tape.constant(coord_tensor(batch, 1, customers)));
  auto add_head = [&](const std::optional<AffineRef>& head, std::vector<double> Instance::*attr) {
    if (!head) return;
    h = nn::add(h, fwd.affine(*head, tape.constant(attr_tensor(batch, attr, 1, customers))));
  };
  add_head(heads.prize, &Instance::prizes);
  add_head(heads.penalty, &Instance::penalties);
  add_head(heads.demand, &Instance::demands);
  Var depot = fwd.affine(*heads.depot, tape.constant(coord_tensor(batch, 0, 1)));
  return nn::concat_nodes(depot, h);
}

Encoding encode(Forward& fwd, std::span<const Instance> batch) {
  const PolicyModel& model = fwd.model();
  const Layout& lay = model.layout();
  Var h0 = initial_embeddings(fwd, batch);
  Var h = h0;
  const bool inside = !lay.inside.empty();
  for (std::size_t l = 0; l < lay.layers.size(); ++l) {
    const EncoderLayerRef& layer = lay.layers[l];
    Var a = self_attention(fwd, layer.attention, lay.lora.empty() ? nullptr : &lay.lora[l], h);
    if (inside) a = inside_forward(fwd, lay.inside[2 * l], a);
    h = fwd.norm(layer.norm1, nn::add(h, a));
    Var f = fwd.affine(layer.ff_out, nn::relu(fwd.affine(layer.ff_in, h)));
    if (inside) f = inside_forward(fwd, lay.inside[2 * l + 1], f);
    h = fwd.norm(layer.norm2, nn::add(h, f));
  }
  if (lay.side) h = side_combine(h, side_forward(fwd, *lay.side, h0, batch.size()));
  Encoding enc;
  enc.nodes = h;
  enc.graph = nn::mean_nodes(h);
  enc.batch = batch.size();
  enc.node_count = batch[0].node_count();
  return enc;
}

std::pair<Tensor, Tensor> encode(const PolicyModel& model, const Instance& instance) {
  nn::Tape tape(false);
  Forward fwd(model, tape);
  Encoding enc = encode(fwd, std::span<const Instance>(&instance, 1));
  Tensor nodes = enc.nodes.value();
  nodes.reshape({enc.node_count, model.d_model()});
  Tensor graph = enc.graph.value();
  graph.reshape({model.d_model()});
  return {std::move(nodes), std::move(graph)};
}

DecodeContext prepare_decoder(Forward& fwd, const Encoding& enc, std::size_t repeats) {
  require(repeats >= 1, ErrorCode::kInvalidArgument, "repeats must be positive");
  const PolicyModel& model = fwd.model();
  const DecoderRef& dec = model.layout().decoder;
  const std::size_t heads = model.heads();
  auto rep = [repeats](Var v) { return repeats == 1 ? v : nn::repeat_batch(v, repeats); };
  DecodeContext ctx;
  ctx.nodes = rep(enc.nodes);
  ctx.glimpse_key = nn::split_heads(rep(nn::matmul(enc.nodes, fwd.param(dec.glimpse_key))), heads);
  ctx.glimpse_value = nn::split_heads(rep(nn::matmul(enc.nodes, fwd.param(dec.glimpse_value))), heads);
  ctx.logit_key = dec.logit_key ? rep(nn::matmul(enc.nodes, fwd.param(*dec.logit_key))) : ctx.nodes;
  if (dec.graph_context) ctx.graph_context = rep(nn::matmul(enc.graph, fwd.param(*dec.graph_context)));
  ctx.rollouts = enc.batch * repeats;
  ctx.node_count = enc.node_count;
  return ctx;
}

Var decode_logits(Forward& fwd, const DecodeContext& ctx, std::span<const ConstructionState> states,
                  const nn::Mask& mask) {
  const PolicyModel& model = fwd.model();
  const DecoderRef& dec = model.layout().decoder;
  const HeadsRef& heads = model.layout().heads;
  const std::size_t r_count = ctx.rollouts, n = ctx.node_count, d = model.d_model(), h = model.heads();
  require(states.size() == r_count && mask.size() == r_count * n, ErrorCode::kInvalidArgument,
          "decoder state count mismatch");
  nn::Tape& tape = fwd.tape();
  const bool tsp = model.problem() == Problem::kTsp;
  const bool fresh = tsp && states[0].steps() == 0;
  for (const ConstructionState& s : states) {
    require((s.steps() == 0) == fresh || !tsp, ErrorCode::kInvalidState, "rollouts out of step");
  }

  Var last, first;
  if (fresh) {
    require(dec.placeholder.has_value(), ErrorCode::kInvalidState,
            "this decoder needs a forced first node for TSP");
    Var ph = nn::reshape(fwd.param(*dec.placeholder), {1, 2, d});
    const std::size_t zero = 0, one = 1;
    first = nn::repeat_batch(nn::gather_nodes(ph, std::span<const std::size_t>(&zero, 1)), r_count);
    last = nn::repeat_batch(nn::gather_nodes(ph, std::span<const std::size_t>(&one, 1)), r_count);
  } else {
    std::vector<std::size_t> cur(r_count), fst(r_count);
    for (std::size_t r = 0; r < r_count; ++r) {
      cur[r] = states[r].current();
      fst[r] = states[r].first();
    }
    last = nn::gather_nodes(ctx.nodes, cur);
    if (tsp) first = nn::gather_nodes(ctx.nodes, fst);
  }

  Var q = nn::matmul(last, fwd.param(dec.last_context));
  if (ctx.graph_context) q = nn::add(q, *ctx.graph_context);
  if (dec.first_context) q = nn::add(q, nn::matmul(first, fwd.param(*dec.first_context)));
  if (heads.dynamic) {
    Tensor feat({r_count, 1});
    for (std::size_t r = 0; r < r_count; ++r) feat[r] = states[r].dynamic_feature();
    q = nn::add(q, fwd.affine(*heads.dynamic, tape.constant(std::move(feat))));
  }

  q = nn::split_heads(nn::reshape(q, {r_count, 1, d}), h);
  const nn::Mask head_mask = nn::repeat_mask_for_heads(mask, r_count, h);
  Var glimpse = nn::merge_heads(nn::scaled_dot_attention(q, ctx.glimpse_key, ctx.glimpse_value, &head_mask), h);
  glimpse = nn::matmul(glimpse, fwd.param(dec.out));
  if (dec.out_bias) glimpse = nn::add_bias(glimpse, fwd.param(*dec.out_bias));

  Var compat = nn::scale(nn::bmm_nt(glimpse, ctx.logit_key), 1.0 / std::sqrt(static_cast<double>(d)));
  Var logits = nn::scale(nn::tanh(compat), model.config().tanh_clip);
  return nn::reshape(logits, {r_count, n});
}

std::vector<double> decode_step(const PolicyModel& model, const Instance& instance, const ConstructionState& state) {
  nn::Tape tape(false);
  Forward fwd(model, tape);
  Encoding enc = encode(fwd, std::span<const Instance>(&instance, 1));
  DecodeContext ctx = prepare_decoder(fwd, enc, 1);
  const nn::Mask mask = state.mask();
  require(std::find(mask.begin(), mask.end(), 1) != mask.end(), ErrorCode::kInvalidState, "no admissible action");
  Var logits = decode_logits(fwd, ctx, std::span<const ConstructionState>(&state, 1), mask);
  const Tensor& p = nn::masked_softmax(logits, mask).value();
  return {p.values().begin(), p.values().end()};
}

namespace {

// Masked softmax of one row, computed the same way as the tape op.
void row_probs(const double* logits, const std::uint8_t* mask, std::size_t n, std::vector<double>& out) {
  out.assign(n, 0.0);
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < n; ++j) {
    if (mask[j]) mx = std::max(mx, logits[j]);
  }
  double total = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    if (mask[j]) {
      out[j] = std::exp(logits[j] - mx);
      total += out[j];
    }
  }
  for (double& v : out) v /= total;
}

std::size_t pick_greedy(const std::vector<double>& p, const std::uint8_t* mask) {
  std::size_t best = p.size();
  for (std::size_t j = 0; j < p.size(); ++j) {
    if (mask[j] && (best == p.size() || p[j] > p[best])) best = j;
  }
  return best;
}

std::size_t pick_sample(const std::vector<double>& p, const std::uint8_t* mask, std::mt19937_64& rng) {
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  double acc = 0.0;
  std::size_t last = p.size();
  for (std::size_t j = 0; j < p.size(); ++j) {
    if (!mask[j] || p[j] <= 0.0) continue;
    acc += p[j];
    last = j;
    if (u < acc) return j;
  }
  if (last == p.size()) return pick_greedy(p, mask);
  return last;
}

}  // namespace

RolloutResult rollout(Forward& fwd, std::span<const Instance> batch, const RolloutRequest& req, std::mt19937_64& rng) {
  const PolicyModel& model = fwd.model();
  check_batch(model, batch);
  const std::size_t repeats = req.repeats;
  const std::size_t r_count = batch.size() * repeats;
  const std::size_t n = batch[0].node_count();
  require(req.first_nodes.empty() || req.first_nodes.size() == r_count, ErrorCode::kInvalidArgument,
          "need one forced first node per rollout");
  require(req.actions == nullptr || req.actions->size() == r_count, ErrorCode::kInvalidArgument,
          "need one action sequence per rollout");

  Encoding enc = encode(fwd, batch);
  DecodeContext ctx = prepare_decoder(fwd, enc, repeats);

  std::vector<ConstructionState> states;
  states.reserve(r_count);
  for (std::size_t r = 0; r < r_count; ++r) states.emplace_back(batch[r / repeats]);

  RolloutResult res;
  res.actions.assign(r_count, {});
  std::vector<std::size_t> forced = req.first_nodes;
  if (forced.empty() && model.problem() == Problem::kTsp && !model.layout().decoder.placeholder) {
    forced.assign(r_count, 0);
  }
  for (std::size_t r = 0; r < forced.size(); ++r) {
    states[r].select(forced[r]);
    res.actions[r].push_back(forced[r]);
  }

  std::optional<Var> total;
  nn::Mask mask(r_count * n);
  std::vector<std::size_t> picks(r_count);
  std::vector<double> probs;
  auto all_done = [&] {
    return std::all_of(states.begin(), states.end(), [](const ConstructionState& s) { return s.done(); });
  };
  while (!all_done()) {
    for (std::size_t r = 0; r < r_count; ++r) states[r].mask(mask.data() + r * n);
    Var logits = decode_logits(fwd, ctx, states, mask);
    const Tensor& lv = logits.value();
    for (std::size_t r = 0; r < r_count; ++r) {
      const std::uint8_t* m = mask.data() + r * n;
      if (states[r].done()) {
        picks[r] = 0;
      } else if (req.actions != nullptr) {
        const auto& seq = (*req.actions)[r];
        const std::size_t at = states[r].steps();
        require(at < seq.size(), ErrorCode::kInvalidArgument, "replayed action sequence ends early");
        picks[r] = seq[at];
      } else {
        row_probs(lv.data() + r * n, m, n, probs);
        picks[r] = req.mode == DecodeMode::kGreedy ? pick_greedy(probs, m) : pick_sample(probs, m, rng);
      }
    }
    Var lp = nn::log_softmax_pick(logits, mask, picks);
    total = total ? nn::add(*total, lp) : lp;
    for (std::size_t r = 0; r < r_count; ++r) {
      if (!states[r].done()) res.actions[r].push_back(picks[r]);
      states[r].select(picks[r]);
    }
  }
  if (!total) total = fwd.tape().constant(Tensor({r_count}, 0.0));
  res.log_prob = *total;
  res.log_probs.assign(total->value().values().begin(), total->value().values().end());
  res.tours.reserve(r_count);
  for (std::size_t r = 0; r < r_count; ++r) res.tours.push_back(vrp::make_tour(batch[r / repeats], states[r].nodes()));
  return res;
}

Construction construct(const PolicyModel& model, const Instance& instance, DecodeMode mode, std::mt19937_64& rng) {
  nn::Tape tape(false);
  Forward fwd(model, tape);
  RolloutRequest req;
  req.mode = mode;
  RolloutResult res = rollout(fwd, std::span<const Instance>(&instance, 1), req, rng);
  return {std::move(res.tours[0]), res.log_probs[0]};
}

}  // namespace xpl::model

namespace xpl::model {

std::vector<std::size_t> start_nodes(const Instance& instance, std::size_t count) {
  const std::size_t offset = instance.first_customer();
  require(count >= 1 && count + offset <= instance.node_count(), ErrorCode::kInvalidArgument,
          "more start nodes than customers");
  // Only nodes the first step may select; OP customers beyond the length
  // budget are skipped and the remaining ones reused in order.
  const nn::Mask mask = ConstructionState(instance).mask();
  std::vector<std::size_t> admissible;
  for (std::size_t v = offset; v < instance.node_count(); ++v) {
    if (mask[v]) admissible.push_back(v);
  }
  if (admissible.empty()) admissible.push_back(0);  // nothing fits: the tour closes at once
  std::vector<std::size_t> out(count);
  for (std::size_t m = 0; m < count; ++m) out[m] = admissible[m % admissible.size()];
  return out;
}

std::vector<vrp::Tour> greedy_tours(const PolicyModel& model, std::span<const Instance> instances, bool multi_start,
                                    std::size_t batch_size) {
  require(batch_size >= 1, ErrorCode::kInvalidArgument, "batch size must be positive");
  std::vector<vrp::Tour> out;
  out.reserve(instances.size());
  std::mt19937_64 unused(0);
  std::size_t at = 0;
  while (at < instances.size()) {
    const std::size_t starts =
        multi_start ? instances[at].node_count() - instances[at].first_customer() : std::size_t{1};
    const std::size_t limit = std::max<std::size_t>(1, batch_size / starts);
    std::size_t end = at + 1;
    while (end < instances.size() && end - at < limit &&
           instances[end].node_count() == instances[at].node_count()) {
      ++end;
    }
    auto chunk = instances.subspan(at, end - at);
    nn::Tape tape(false);
    Forward fwd(model, tape);
    RolloutRequest req;
    if (multi_start) {
      req.repeats = starts;
      for (const Instance& in : chunk) {
        for (std::size_t s : start_nodes(in, starts)) req.first_nodes.push_back(s);
      }
    }
    RolloutResult res = rollout(fwd, chunk, req, unused);
    for (std::size_t b = 0; b < chunk.size(); ++b) {
      std::size_t best = b * req.repeats;
      for (std::size_t r = best + 1; r < (b + 1) * req.repeats; ++r) {
        if (res.tours[r].cost < res.tours[best].cost) best = r;
      }
      out.push_back(std::move(res.tours[best]));
    }
    at = end;
  }
  return out;
}

}  // namespace xpl::model
