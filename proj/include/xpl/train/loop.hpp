#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "xpl/model/model.hpp"
#include "xpl/train/trainer.hpp"

namespace xpl::train {

struct EpochRecord {
  int epoch = 0;  // 1-based
  double train_cost = 0.0;
  double val_cost = 0.0;
  bool baseline_replaced = false;
  double grad_norm = 0.0;
  double seconds = 0.0;

  friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

// One JSON object per line.
std::string to_json_line(const EpochRecord& record);
EpochRecord parse_json_line(const std::string& line);

struct TrainRequest {
  vrp::Problem problem = vrp::Problem::kTsp;
  model::BackboneConfig backbone_config;
  model::FinetuneMode mode = model::FinetuneMode::kScratch;
  const model::PolicyModel* backbone = nullptr;  // required unless mode is scratch
  TrainConfig config;
  // Per-epoch snapshots; an existing snapshot resumes the run.
  std::optional<std::filesystem::path> state_dir;
  std::function<void(const EpochRecord&)> on_epoch;
  // Stop after this many epochs in this call (simulates an interruption).
  std::optional<int> stop_after;
};

struct TrainResult {
  model::PolicyModel model;
  std::vector<EpochRecord> history;
  double initial_val_cost = 0.0;
};

// Greedy cost averaged over a validation set; multi-start for the POMO
// profile.
double validation_cost(const model::PolicyModel& model, std::span<const vrp::Instance> val);

TrainResult train(const TrainRequest& request);

}  // namespace xpl::train
