#include "xpl/model/config.hpp"

#include <string>

#include "xpl/core/error.hpp"

namespace xpl::model {

void BackboneConfig::validate() const {
  require(d_model > 0 && n_heads > 0 && n_encoder_layers > 0 && ff_hidden > 0 && tanh_clip > 0.0,
          ErrorCode::kInvalidArgument, "backbone sizes must be positive");
  require(d_model % n_heads == 0, ErrorCode::kInvalidArgument, "n_heads must divide d_model");
}

bool BackboneConfig::compatible_with(const BackboneConfig& other) const { return *this == other; }

std::string_view to_string(Profile profile) { return profile == Profile::kAm ? "am" : "pomo"; }

std::string_view to_string(AdapterMode mode) {
  switch (mode) {
    case AdapterMode::kNone: return "none";
    case AdapterMode::kInside: return "inside";
    case AdapterMode::kSide: return "side";
    case AdapterMode::kLora: return "lora";
  }
  return "?";
}

std::string_view to_string(FinetuneMode mode) {
  switch (mode) {
    case FinetuneMode::kScratch: return "scratch";
    case FinetuneMode::kFull: return "full";
    case FinetuneMode::kInside: return "inside";
    case FinetuneMode::kSide: return "side";
    case FinetuneMode::kLora: return "lora";
  }
  return "?";
}

std::string_view to_string(ParamGroup group) {
  switch (group) {
    case ParamGroup::kBackbone: return "backbone";
    case ParamGroup::kDecoder: return "decoder";
    case ParamGroup::kHeads: return "heads";
    case ParamGroup::kAdapters: return "adapters";
  }
  return "?";
}

Profile parse_profile(std::string_view name) {
  if (name == "am") return Profile::kAm;
  if (name == "pomo") return Profile::kPomo;
  fail(ErrorCode::kInvalidArgument, "unknown profile '" + std::string(name) + "'");
}

AdapterMode parse_adapter_mode(std::string_view name) {
  for (AdapterMode m : {AdapterMode::kNone, AdapterMode::kInside, AdapterMode::kSide, AdapterMode::kLora}) {
    if (name == to_string(m)) return m;
  }
  fail(ErrorCode::kInvalidArgument, "unknown adapter mode '" + std::string(name) + "'");
}

FinetuneMode parse_finetune_mode(std::string_view name) {
  for (FinetuneMode m : {FinetuneMode::kScratch, FinetuneMode::kFull, FinetuneMode::kInside, FinetuneMode::kSide,
                         FinetuneMode::kLora}) {
    if (name == to_string(m)) return m;
  }
  fail(ErrorCode::kInvalidArgument, "unknown fine-tuning mode '" + std::string(name) + "'");
}

ParamGroup parse_param_group(std::string_view name) {
  for (ParamGroup g : {ParamGroup::kBackbone, ParamGroup::kDecoder, ParamGroup::kHeads, ParamGroup::kAdapters}) {
    if (name == to_string(g)) return g;
  }
  fail(ErrorCode::kInvalidArgument, "unknown parameter group '" + std::string(name) + "'");
}

AdapterMode adapter_for(FinetuneMode mode) {
  switch (mode) {
    case FinetuneMode::kInside: return AdapterMode::kInside;
    case FinetuneMode::kSide: return AdapterMode::kSide;
    case FinetuneMode::kLora: return AdapterMode::kLora;
    default: return AdapterMode::kNone;
  }
}

}  // namespace xpl::model
