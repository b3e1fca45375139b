#pragma once

#include <cstdint>
#include <string_view>

namespace xpl::model {

// Architecture lineage. AM: batch norm, graph-context decoder query.
// POMO: instance norm, multi-start decoding, decoder query from the last node.
enum class Profile : std::uint8_t { kAm, kPomo };

struct BackboneConfig {
  Profile profile = Profile::kAm;
  int d_model = 128;
  int n_heads = 8;
  int n_encoder_layers = 3;
  int ff_hidden = 512;
  double tanh_clip = 10.0;

  static BackboneConfig am() { return {}; }
  static BackboneConfig pomo() {
    BackboneConfig c;
    c.profile = Profile::kPomo;
    c.n_encoder_layers = 6;
    return c;
  }

  // Throws invalid-argument unless every size is positive and the head
  // count divides d_model.
  void validate() const;
  bool compatible_with(const BackboneConfig& other) const;

  friend bool operator==(const BackboneConfig&, const BackboneConfig&) = default;
};

enum class AdapterMode : std::uint8_t { kNone, kInside, kSide, kLora };

// How a downstream model is trained: from scratch, by full fine-tuning of a
// loaded backbone, or by one of the adapter schemes on a frozen backbone.
enum class FinetuneMode : std::uint8_t { kScratch, kFull, kInside, kSide, kLora };

enum class ParamGroup : std::uint8_t { kBackbone, kDecoder, kHeads, kAdapters };
inline constexpr int kParamGroupCount = 4;

inline constexpr int kLoraRank = 2;

std::string_view to_string(Profile profile);
std::string_view to_string(AdapterMode mode);
std::string_view to_string(FinetuneMode mode);
std::string_view to_string(ParamGroup group);
Profile parse_profile(std::string_view name);
AdapterMode parse_adapter_mode(std::string_view name);
FinetuneMode parse_finetune_mode(std::string_view name);
ParamGroup parse_param_group(std::string_view name);
AdapterMode adapter_for(FinetuneMode mode);

}  // namespace xpl::model
