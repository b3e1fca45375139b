#include "xpl/train/loop.hpp"

#include <chrono>
#include <fstream>

#include "json.hpp"
#include "xpl/core/error.hpp"
#include "xpl/io/checkpoint.hpp"
#include "xpl/model/policy.hpp"
#include "xpl/vrp/generate.hpp"

namespace xpl::train {

using nlohmann::json;

std::string to_json_line(const EpochRecord& r) {
  json j{{"epoch", r.epoch},       {"train_cost", r.train_cost},         {"val_cost", r.val_cost},
         {"grad_norm", r.grad_norm}, {"baseline_replaced", r.baseline_replaced}, {"seconds", r.seconds}};
  return j.dump();
}

EpochRecord parse_json_line(const std::string& line) {
  try {
    const json j = json::parse(line);
    EpochRecord r;
    r.epoch = j.at("epoch").get<int>();
    r.train_cost = j.at("train_cost").get<double>();
    r.val_cost = j.at("val_cost").get<double>();
    r.grad_norm = j.at("grad_norm").get<double>();
    r.baseline_replaced = j.at("baseline_replaced").get<bool>();
    r.seconds = j.at("seconds").get<double>();
    return r;
  } catch (const json::exception& e) {
    fail(ErrorCode::kParseError, std::string("bad history record: ") + e.what());
  }
}

double validation_cost(const model::PolicyModel& model, std::span<const vrp::Instance> val) {
  require(!val.empty(), ErrorCode::kInvalidArgument, "validation set is empty");
  const bool multi = model.config().profile == model::Profile::kPomo;
  double total = 0.0;
  for (const vrp::Tour& t : model::greedy_tours(model, val, multi, multi ? 1024 : 256)) total += t.cost;
  return total / static_cast<double>(val.size());
}

namespace {

namespace fs = std::filesystem;

const std::vector<model::ParamGroup> kAllGroups{model::ParamGroup::kBackbone, model::ParamGroup::kDecoder,
                                                model::ParamGroup::kHeads, model::ParamGroup::kAdapters};

void write_snapshot(const fs::path& dir, const TrainState& state, const std::vector<EpochRecord>& history,
                    double initial_val) {
  fs::create_directories(dir);
  io::save_checkpoint(state.model, dir / "model.ckpt", kAllGroups);
  if (state.baseline) io::save_checkpoint(*state.baseline, dir / "baseline.ckpt", kAllGroups);
  std::vector<nn::Tensor> moments = state.optimizer.first_moments();
  const auto& v = state.optimizer.second_moments();
  moments.insert(moments.end(), v.begin(), v.end());
  io::save_tensors(dir / "optimizer.bin", moments);
  std::ofstream h(dir / "history.jsonl", std::ios::trunc);
  for (const EpochRecord& r : history) h << to_json_line(r) << "\n";
  // Written last: its presence marks a complete snapshot.
  json st{{"epoch", state.epoch}, {"optimizer_steps", state.optimizer.steps()}, {"initial_val_cost", initial_val}};
  std::ofstream(dir / "state.json.tmp", std::ios::trunc) << st.dump() << "\n";
  fs::rename(dir / "state.json.tmp", dir / "state.json");
}

bool read_snapshot(const fs::path& dir, TrainState& state, std::vector<EpochRecord>& history, double& initial_val) {
  if (!fs::exists(dir / "state.json")) return false;
  json st;
  try {
    std::ifstream in(dir / "state.json");
    st = json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrorCode::kCorruptCheckpoint, std::string("bad training state: ") + e.what());
  }
  model::PolicyModel m = io::load_checkpoint(dir / "model.ckpt");
  require(m.problem() == state.model.problem() && m.config() == state.model.config() &&
              m.adapter_mode() == state.model.adapter_mode(),
          ErrorCode::kCheckpointIncompatible, "snapshot belongs to a different run");
  for (std::size_t i = 0; i < m.params().size(); ++i) state.model.params()[i].value = m.params()[i].value;
  if (state.baseline) state.baseline = io::load_checkpoint(dir / "baseline.ckpt");
  std::vector<nn::Tensor> moments = io::load_tensors(dir / "optimizer.bin");
  require(moments.size() % 2 == 0, ErrorCode::kCorruptCheckpoint, "bad optimizer state");
  const auto half = static_cast<long>(moments.size() / 2);
  state.optimizer.restore(st.at("optimizer_steps").get<std::size_t>(),
                          std::vector<nn::Tensor>(moments.begin(), moments.begin() + half),
                          std::vector<nn::Tensor>(moments.begin() + half, moments.end()));
  state.epoch = st.at("epoch").get<int>();
  initial_val = st.at("initial_val_cost").get<double>();
  history.clear();
  std::ifstream h(dir / "history.jsonl");
  for (std::string line; std::getline(h, line);) {
    if (!line.empty()) history.push_back(parse_json_line(line));
  }
  return true;
}

}  // namespace

TrainResult train(const TrainRequest& req) {
  const TrainConfig& cfg = req.config;
  cfg.validate();
  const bool scratch = req.mode == model::FinetuneMode::kScratch;
  require(scratch || req.backbone != nullptr, ErrorCode::kInvalidArgument,
          "fine-tuning from a backbone needs the backbone model");
  model::PolicyModel fresh = model::assemble(req.problem, req.backbone_config, model::adapter_for(req.mode), cfg.seed,
                                             scratch ? nullptr : req.backbone);
  model::apply_freezing(fresh, req.mode == model::FinetuneMode::kScratch ? model::FinetuneMode::kFull : req.mode);
  TrainState state(std::move(fresh), cfg);

  const std::vector<vrp::Instance> val =
      vrp::generate_instances(req.problem, cfg.n_customers, cfg.val_size, cfg.distribution, derive_seed(cfg.seed, 0));
  std::vector<EpochRecord> history;
  double initial_val = 0.0;
  if (!(req.state_dir && read_snapshot(*req.state_dir, state, history, initial_val))) {
    initial_val = validation_cost(state.model, val);
  }

  const bool pomo = state.model.config().profile == model::Profile::kPomo;
  int ran = 0;
  while (state.epoch < cfg.epochs && (!req.stop_after || ran < *req.stop_after)) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto e = static_cast<std::uint64_t>(state.epoch);
    double cost_sum = 0.0, norm_sum = 0.0;
    for (int b = 0; b < cfg.batches_per_epoch; ++b) {
      const auto bb = static_cast<std::uint64_t>(b);
      const std::vector<vrp::Instance> batch = vrp::generate_instances(
          req.problem, cfg.n_customers, cfg.batch_size, cfg.distribution, derive_seed(cfg.seed, 1, e, bb));
      std::mt19937_64 rng(derive_seed(cfg.seed, 2, e, bb));
      const StepStats st = pomo ? pomo_step(state, batch, rng) : reinforce_step(state, batch, rng);
      cost_sum += st.mean_cost;
      norm_sum += st.grad_norm;
    }
    EpochRecord rec;
    rec.epoch = state.epoch + 1;
    rec.train_cost = cost_sum / cfg.batches_per_epoch;
    rec.grad_norm = norm_sum / cfg.batches_per_epoch;
    rec.val_cost = validation_cost(state.model, val);
    rec.baseline_replaced = state.baseline ? maybe_replace_baseline(state, val) : false;
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    ++state.epoch;
    ++ran;
    history.push_back(rec);
    if (req.state_dir) write_snapshot(*req.state_dir, state, history, initial_val);
    if (req.on_epoch) req.on_epoch(rec);
  }
  return {std::move(state.model), std::move(history), initial_val};
}

}  // namespace xpl::train
