#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "xpl/model/model.hpp"
#include "xpl/model/policy.hpp"
#include "xpl/vrp/instance.hpp"

namespace xpl::eval {

enum class EvalMode : std::uint8_t { kGreedy, kSample, kAugment8Greedy, kAugment8Sample };
std::string_view to_string(EvalMode mode);
EvalMode parse_eval_mode(std::string_view name);

inline constexpr int kDefaultSamples = 1280;

struct EvalOptions {
  EvalMode mode = EvalMode::kGreedy;
  int samples = kDefaultSamples;
  std::uint64_t seed = 1;
  std::size_t rollouts_per_pass = 256;
};

struct ParamCounts {
  std::size_t total = 0;
  std::size_t trainable = 0;
  std::array<std::size_t, model::kParamGroupCount> per_group{};
};
ParamCounts count_params(const model::PolicyModel& model);

struct EvalReport {
  std::string problem;
  EvalMode mode = EvalMode::kGreedy;
  int samples = 0;
  std::vector<vrp::Tour> tours;  // best tour per instance
  std::vector<double> costs;     // tour costs (OP negated prize)
  double mean_objective = 0.0;   // OP reports the collected prize
  std::vector<double> gaps;      // filled by attach_gaps
  std::optional<double> mean_gap;
  double seconds = 0.0;
  ParamCounts params;
};

// Best tour per instance under the decode mode. Sampling keeps the best of
// `samples` draws plus the greedy tour; augmentation runs the base mode on
// all 8 symmetric variants. The POMO profile decodes multi-start.
EvalReport evaluate(const model::PolicyModel& model, std::span<const vrp::Instance> instances,
                    const EvalOptions& options);

// (cost - ref) / |ref|; zero when both are zero.
double gap(double cost, double reference);
void attach_gaps(EvalReport& report, std::span<const double> references);

// Tabular record: one header row and one value row.
std::string format_report(const EvalReport& report);

// Randomized OP construction: candidates that still allow the return leg
// are scored by (prize / distance)^4; greedy takes the best, sampling draws
// proportionally.
vrp::Tour tsili_construct(const vrp::Instance& instance, model::DecodeMode mode, std::mt19937_64& rng);
// Best of `samples` draws and the greedy tour.
vrp::Tour tsili_best(const vrp::Instance& instance, int samples, std::mt19937_64& rng);

vrp::Tour nearest_neighbor_tsp(const vrp::Instance& instance, std::size_t start = 0);

enum class ReferenceSource : std::uint8_t { kOracle, kFile };
// Oracle: exact optimum per instance (small sizes only). File: one value
// per non-empty line, in instance order.
std::vector<double> reference_costs(std::span<const vrp::Instance> instances, ReferenceSource source,
                                    const std::optional<std::filesystem::path>& file = std::nullopt);

}  // namespace xpl::eval
