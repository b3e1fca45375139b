#include "xpl/model/model.hpp"

#include <cmath>
#include <random>
#include <utility>

#include "xpl/core/error.hpp"

namespace xpl::model {

using nn::Shape;

std::size_t ParamStore::add(std::string name, Shape shape, ParamGroup group, ParamInit init, bool buffer) {
  nn::Param p;
  p.name = std::move(name);
  p.value = nn::Tensor(shape);
  p.grad = nn::Tensor(std::move(shape));
  p.buffer = buffer;
  p.trainable = !buffer;
  params_.push_back(std::move(p));
  groups_.push_back(group);
  inits_.push_back(init);
  return params_.size() - 1;
}

std::optional<std::size_t> ParamStore::find(std::string_view name) const {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].name == name) return i;
  }
  return std::nullopt;
}

namespace {

class Builder {
 public:
  Builder(ParamStore& store, std::size_t d, bool batch_norm) : store_(store), d_(d), batch_norm_(batch_norm) {}

  AffineRef affine(const std::string& name, std::size_t in, std::size_t out, ParamGroup g, bool bias = true,
                   std::optional<double> bound = std::nullopt) {
    const ParamInit init = ParamInit::uniform(bound.value_or(1.0 / std::sqrt(static_cast<double>(in))));
    AffineRef r;
    r.weight = store_.add(name + ".weight", {in, out}, g, init);
    if (bias) r.bias = store_.add(name + ".bias", {out}, g, init);
    return r;
  }

  std::size_t matrix(const std::string& name, std::size_t in, std::size_t out, ParamGroup g) {
    return store_.add(name, {in, out}, g, ParamInit::uniform(1.0 / std::sqrt(static_cast<double>(in))));
  }

  NormRef norm(const std::string& name, ParamGroup g) {
    NormRef r;
    r.gamma = store_.add(name + ".gamma", {d_}, g, ParamInit::one());
    r.beta = store_.add(name + ".beta", {d_}, g, ParamInit::zero());
    if (batch_norm_) {
      r.running_mean = store_.add(name + ".running_mean", {d_}, g, ParamInit::zero(), true);
      r.running_var = store_.add(name + ".running_var", {d_}, g, ParamInit::one(), true);
    }
    return r;
  }

  EncoderLayerRef layer(const std::string& name, std::size_t ff, ParamGroup g, bool out_bias) {
    EncoderLayerRef r;
    r.attention.query = matrix(name + ".attention.query", d_, d_, g);
    r.attention.key = matrix(name + ".attention.key", d_, d_, g);
    r.attention.value = matrix(name + ".attention.value", d_, d_, g);
    r.attention.out = matrix(name + ".attention.out", d_, d_, g);
    if (out_bias) {
      r.attention.out_bias = store_.add(name + ".attention.out_bias", {d_}, g,
                                        ParamInit::uniform(1.0 / std::sqrt(static_cast<double>(d_))));
    }
    r.norm1 = norm(name + ".norm1", g);
    r.ff_in = affine(name + ".ff_in", d_, ff, g);
    r.ff_out = affine(name + ".ff_out", ff, d_, g);
    r.norm2 = norm(name + ".norm2", g);
    return r;
  }

  LoraRef lora(const std::string& name, std::size_t blocks, std::size_t in, std::size_t out, nn::BlockLayout layout) {
    LoraRef r;
    const auto rank = static_cast<std::size_t>(kLoraRank);
    r.down = store_.add(name + ".down", {blocks, in, rank}, ParamGroup::kAdapters, ParamInit::normal());
    r.up = store_.add(name + ".up", {blocks, rank, out}, ParamGroup::kAdapters, ParamInit::zero());
    r.layout = layout;
    return r;
  }

 private:
  ParamStore& store_;
  std::size_t d_;
  bool batch_norm_;
};

}  // namespace

PolicyModel::PolicyModel(vrp::Problem problem, BackboneConfig config, AdapterMode adapter)
    : problem_(problem), config_(config), adapter_(adapter) {
  config_.validate();
  const std::size_t d = d_model();
  const std::size_t h = heads();
  const std::size_t k = d / h;
  const auto ff = static_cast<std::size_t>(config_.ff_hidden);
  const bool am = config_.profile == Profile::kAm;
  const bool tsp = problem_ == vrp::Problem::kTsp;
  const double head_bound = 1.0 / std::sqrt(static_cast<double>(d));
  Builder b(params_, d, am);

  layout_.coord = b.affine("encoder.coord", 2, d, ParamGroup::kBackbone);
  for (int l = 0; l < config_.n_encoder_layers; ++l) {
    layout_.layers.push_back(b.layer("encoder.layers." + std::to_string(l), ff, ParamGroup::kBackbone, !am));
  }

  DecoderRef& dec = layout_.decoder;
  const ParamGroup gd = ParamGroup::kDecoder;
  dec.glimpse_key = b.matrix("decoder.glimpse_key", d, d, gd);
  dec.glimpse_value = b.matrix("decoder.glimpse_value", d, d, gd);
  if (am) {
    dec.logit_key = b.matrix("decoder.logit_key", d, d, gd);
    dec.graph_context = b.matrix("decoder.graph_context", d, d, gd);
  }
  dec.last_context = b.matrix("decoder.last_context", d, d, gd);
  if (tsp) dec.first_context = b.matrix("decoder.first_context", d, d, gd);
  if (am && tsp) dec.placeholder = params_.add("decoder.placeholder", {2, d}, gd, ParamInit::uniform(head_bound));
  dec.out = b.matrix("decoder.out", d, d, gd);
  if (!am) dec.out_bias = params_.add("decoder.out_bias", {d}, gd, ParamInit::uniform(head_bound));

  HeadsRef& hd = layout_.heads;
  const ParamGroup gh = ParamGroup::kHeads;
  switch (problem_) {
    case vrp::Problem::kTsp: break;
    case vrp::Problem::kOp:
      hd.depot = b.affine("heads.depot", 2, d, gh, true, head_bound);
      hd.prize = b.affine("heads.prize", 1, d, gh, true, head_bound);
      hd.dynamic = b.affine("heads.remaining_length", 1, d, gh, true, head_bound);
      break;
    case vrp::Problem::kPctsp:
      hd.depot = b.affine("heads.depot", 2, d, gh, true, head_bound);
      hd.prize = b.affine("heads.prize", 1, d, gh, true, head_bound);
      hd.penalty = b.affine("heads.penalty", 1, d, gh, true, head_bound);
      hd.dynamic = b.affine("heads.remaining_prize", 1, d, gh, true, head_bound);
      break;
    case vrp::Problem::kCvrp:
      hd.depot = b.affine("heads.depot", 2, d, gh, true, head_bound);
      hd.demand = b.affine("heads.demand", 1, d, gh, true, head_bound);
      hd.dynamic = b.affine("heads.remaining_capacity", 1, d, gh, true, head_bound);
      break;
  }

  const ParamGroup ga = ParamGroup::kAdapters;
  switch (adapter_) {
    case AdapterMode::kNone: break;
    case AdapterMode::kInside:
      for (int l = 0; l < config_.n_encoder_layers; ++l) {
        for (const char* where : {"attention", "ff"}) {
          const std::string name = "adapters.inside." + std::to_string(l) + "." + where;
          InsideRef r;
          r.down = b.affine(name + ".down", d, d / 2, ga, true, head_bound);
          r.up = b.affine(name + ".up", d / 2, d, ga, true, head_bound);
          layout_.inside.push_back(r);
        }
      }
      break;
    case AdapterMode::kSide: {
      SideRef s;
      s.block = b.layer("adapters.side.block", ff, ga, !am);
      if (!am && vrp::has_depot(problem_)) {
        s.depot_stage0 = b.affine("adapters.side.depot_stage0", d, d, ga, true, head_bound);
        s.depot_stage1 = b.affine("adapters.side.depot_stage1", d, d, ga, true, head_bound);
      }
      s.stage0 = b.affine("adapters.side.stage0", d, d, ga, true, head_bound);
      s.norm0 = b.norm("adapters.side.norm0", ga);
      s.stage1 = b.affine("adapters.side.stage1", d, d, ga, true, head_bound);
      s.norm1 = b.norm("adapters.side.norm1", ga);
      layout_.side = s;
      break;
    }
    case AdapterMode::kLora:
      layout_.coord_lora = b.lora("adapters.lora.coord", 1, 2, d, nn::BlockLayout::kColumns);
      for (int l = 0; l < config_.n_encoder_layers; ++l) {
        const std::string name = "adapters.lora." + std::to_string(l);
        LoraLayerRef r;
        r.query = b.lora(name + ".query", h, d, k, nn::BlockLayout::kColumns);
        r.key = b.lora(name + ".key", h, d, k, nn::BlockLayout::kColumns);
        r.value = b.lora(name + ".value", h, d, k, nn::BlockLayout::kColumns);
        r.out = b.lora(name + ".out", h, k, d, nn::BlockLayout::kRows);
        layout_.lora.push_back(r);
      }
      break;
  }
}

void PolicyModel::zero_grad() {
  for (auto& p : params_.all()) p.zero_grad();
}

void round_to_float(nn::Tensor& t) {
  for (double& v : t.values()) v = to_float(v);
}

void initialize(PolicyModel& model, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  ParamStore& store = model.params();
  for (std::size_t i = 0; i < store.size(); ++i) {
    const ParamInit& init = store.init(i);
    nn::Tensor& t = store[i].value;
    switch (init.kind) {
      case ParamInit::Kind::kUniform: {
        std::uniform_real_distribution<double> u(-init.bound, init.bound);
        for (double& v : t.values()) v = u(rng);
        break;
      }
      case ParamInit::Kind::kNormal:
        for (double& v : t.values()) v = gauss(rng);
        break;
      case ParamInit::Kind::kZero: t.fill(0.0); break;
      case ParamInit::Kind::kOne: t.fill(1.0); break;
    }
    round_to_float(t);
    store[i].zero_grad();
  }
}

PolicyModel assemble(vrp::Problem problem, const BackboneConfig& config, AdapterMode adapter, std::uint64_t seed,
                     const PolicyModel* backbone) {
  PolicyModel model(problem, config, adapter);
  initialize(model, seed);
  if (backbone != nullptr) {
    require(backbone->config().compatible_with(config), ErrorCode::kCheckpointIncompatible,
            "backbone configuration does not match the requested model");
    const ParamStore& src = backbone->params();
    ParamStore& dst = model.params();
    for (std::size_t i = 0; i < dst.size(); ++i) {
      const ParamGroup g = dst.group(i);
      if (g != ParamGroup::kBackbone && g != ParamGroup::kDecoder) continue;
      const auto j = src.find(dst[i].name);
      if (!j) continue;
      require(src[*j].value.shape() == dst[i].value.shape(), ErrorCode::kCheckpointIncompatible,
              "shape mismatch for " + dst[i].name);
      dst[i].value = src[*j].value;
    }
  }
  apply_freezing(model, adapter == AdapterMode::kNone ? FinetuneMode::kFull
                        : adapter == AdapterMode::kInside ? FinetuneMode::kInside
                        : adapter == AdapterMode::kSide   ? FinetuneMode::kSide
                                                          : FinetuneMode::kLora);
  return model;
}

ParamPartition partition(const PolicyModel& model) {
  ParamPartition out;
  for (int g = 0; g < kParamGroupCount; ++g) out.groups[g].group = static_cast<ParamGroup>(g);
  const ParamStore& store = model.params();
  for (std::size_t i = 0; i < store.size(); ++i) {
    GroupSummary& gs = out.groups[static_cast<int>(store.group(i))];
    gs.members.push_back(i);
    if (store[i].buffer) continue;
    const std::size_t n = store[i].value.size();
    gs.count += n;
    out.total += n;
    if (store[i].trainable) {
      out.trainable += n;
      gs.trainable = true;
    }
  }
  return out;
}

ParamPartition apply_freezing(PolicyModel& model, FinetuneMode mode) {
  const AdapterMode needed = adapter_for(mode);
  if (needed != AdapterMode::kNone) {
    require(needed == model.adapter_mode(), ErrorCode::kInvalidArgument,
            "model was assembled with adapter mode '" + std::string(to_string(model.adapter_mode())) +
                "', cannot fine-tune in mode '" + std::string(to_string(mode)) + "'");
  }
  ParamStore& store = model.params();
  for (std::size_t i = 0; i < store.size(); ++i) {
    if (store[i].buffer) {
      store[i].trainable = false;
      continue;
    }
    store[i].trainable = needed == AdapterMode::kNone || store.group(i) != ParamGroup::kBackbone;
  }
  return partition(model);
}

}  // namespace xpl::model
