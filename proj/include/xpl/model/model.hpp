#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "xpl/model/config.hpp"
#include "xpl/nn/ops.hpp"
#include "xpl/nn/tensor.hpp"
#include "xpl/vrp/instance.hpp"

namespace xpl::model {

struct ParamInit {
  enum class Kind : std::uint8_t { kUniform, kNormal, kZero, kOne };
  Kind kind = Kind::kZero;
  double bound = 0.0;  // kUniform: +-bound

  static ParamInit uniform(double bound) { return {Kind::kUniform, bound}; }
  static ParamInit normal() { return {Kind::kNormal, 0.0}; }
  static ParamInit zero() { return {Kind::kZero, 0.0}; }
  static ParamInit one() { return {Kind::kOne, 0.0}; }
};

// Flat parameter storage. Layers refer to entries by index, so copying a
// model copies every value and keeps all references valid.
class ParamStore {
 public:
  std::size_t add(std::string name, nn::Shape shape, ParamGroup group, ParamInit init, bool buffer = false);

  std::size_t size() const { return params_.size(); }
  nn::Param& operator[](std::size_t i) { return params_[i]; }
  const nn::Param& operator[](std::size_t i) const { return params_[i]; }
  ParamGroup group(std::size_t i) const { return groups_[i]; }
  const ParamInit& init(std::size_t i) const { return inits_[i]; }
  std::optional<std::size_t> find(std::string_view name) const;

  std::vector<nn::Param>& all() { return params_; }
  const std::vector<nn::Param>& all() const { return params_; }

 private:
  std::vector<nn::Param> params_;
  std::vector<ParamGroup> groups_;
  std::vector<ParamInit> inits_;
};

struct AffineRef {
  std::size_t weight = 0;
  std::optional<std::size_t> bias;
};

struct NormRef {
  std::size_t gamma = 0;
  std::size_t beta = 0;
  std::optional<std::size_t> running_mean;  // batch norm only
  std::optional<std::size_t> running_var;
};

struct AttentionRef {
  std::size_t query = 0;
  std::size_t key = 0;
  std::size_t value = 0;
  std::size_t out = 0;
  std::optional<std::size_t> out_bias;
};

// Attention, skip + norm, feed-forward, skip + norm.
struct EncoderLayerRef {
  AttentionRef attention;
  NormRef norm1;
  AffineRef ff_in;
  AffineRef ff_out;
  NormRef norm2;
};

struct DecoderRef {
  std::size_t glimpse_key = 0;
  std::size_t glimpse_value = 0;
  std::optional<std::size_t> logit_key;      // AM
  std::optional<std::size_t> graph_context;  // AM
  std::size_t last_context = 0;
  std::optional<std::size_t> first_context;  // TSP only
  std::optional<std::size_t> placeholder;    // AM TSP: (2, d) first/last stand-ins at step 0
  std::size_t out = 0;
  std::optional<std::size_t> out_bias;       // POMO
};

struct HeadsRef {
  std::optional<AffineRef> depot;      // 2 -> d
  std::optional<AffineRef> prize;      // 1 -> d, added to customers
  std::optional<AffineRef> penalty;
  std::optional<AffineRef> demand;
  std::optional<AffineRef> dynamic;    // 1 -> d, added to the decoder query
};

struct InsideRef {
  AffineRef down;  // d -> d/2
  AffineRef up;    // d/2 -> d
};

struct SideRef {
  EncoderLayerRef block;
  AffineRef stage0;
  AffineRef stage1;
  NormRef norm0;
  NormRef norm1;
  // POMO lineage with a depot: the depot row gets its own affine maps.
  std::optional<AffineRef> depot_stage0;
  std::optional<AffineRef> depot_stage1;
};

struct LoraRef {
  std::size_t down = 0;  // (H, in_h, r), Gaussian init
  std::size_t up = 0;    // (H, r, out_h), zero init
  nn::BlockLayout layout = nn::BlockLayout::kColumns;
};

struct LoraLayerRef {
  LoraRef query;
  LoraRef key;
  LoraRef value;
  LoraRef out;
};

struct Layout {
  AffineRef coord;
  std::vector<EncoderLayerRef> layers;
  DecoderRef decoder;
  HeadsRef heads;
  std::vector<InsideRef> inside;  // 2 per layer: after attention, after feed-forward
  std::optional<SideRef> side;
  std::vector<LoraLayerRef> lora;
  std::optional<LoraRef> coord_lora;
};

class PolicyModel {
 public:
  PolicyModel(vrp::Problem problem, BackboneConfig config, AdapterMode adapter);

  vrp::Problem problem() const { return problem_; }
  const BackboneConfig& config() const { return config_; }
  AdapterMode adapter_mode() const { return adapter_; }
  const Layout& layout() const { return layout_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  nn::Param& param(std::size_t i) { return params_[i]; }
  const nn::Param& param(std::size_t i) const { return params_[i]; }

  std::size_t d_model() const { return static_cast<std::size_t>(config_.d_model); }
  std::size_t heads() const { return static_cast<std::size_t>(config_.n_heads); }

  void zero_grad();

 private:
  vrp::Problem problem_;
  BackboneConfig config_;
  AdapterMode adapter_;
  ParamStore params_;
  Layout layout_;
};

// Rounds a value to the nearest float; parameters are kept float-exact so
// checkpoints roundtrip bit for bit.
inline double to_float(double v) { return static_cast<double>(static_cast<float>(v)); }
void round_to_float(nn::Tensor& t);

// Fresh model with every parameter drawn from `seed`: backbone and decoder
// weights uniform in +-1/sqrt(fan_in), heads and adapters per their own
// rules, norms at identity.
void initialize(PolicyModel& model, std::uint64_t seed);

// Builds a model for `problem`. With a backbone, every backbone and decoder
// parameter that exists in both models is copied verbatim; the rest is
// freshly initialized from `seed`. Trainable flags follow `adapter`
// (everything trainable without adapters, backbone frozen otherwise).
PolicyModel assemble(vrp::Problem problem, const BackboneConfig& config, AdapterMode adapter, std::uint64_t seed,
                     const PolicyModel* backbone = nullptr);

struct GroupSummary {
  ParamGroup group = ParamGroup::kBackbone;
  std::vector<std::size_t> members;
  std::size_t count = 0;  // scalar parameters, buffers excluded
  bool trainable = false;
};

struct ParamPartition {
  std::array<GroupSummary, kParamGroupCount> groups;
  std::size_t total = 0;
  std::size_t trainable = 0;

  const GroupSummary& operator[](ParamGroup g) const { return groups[static_cast<int>(g)]; }
};

ParamPartition partition(const PolicyModel& model);

// Sets trainable flags for a fine-tuning mode. Adapter modes must match the
// adapters the model was assembled with.
ParamPartition apply_freezing(PolicyModel& model, FinetuneMode mode);

}  // namespace xpl::model
