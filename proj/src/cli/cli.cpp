#include "xpl/cli/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "xpl/core/error.hpp"
#include "xpl/eval/eval.hpp"
#include "xpl/io/checkpoint.hpp"
#include "xpl/io/cvrplib.hpp"
#include "xpl/io/dataset.hpp"
#include "xpl/train/loop.hpp"
#include "xpl/vrp/generate.hpp"

namespace xpl::cli {
namespace {

namespace fs = std::filesystem;

// Failure with a fixed exit status.
struct Exit {
  int code;
  std::string message;
};

int status_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument:
    case ErrorCode::kOracleSizeExceeded:
      return kUsage;
    case ErrorCode::kCheckpointIncompatible:
    case ErrorCode::kCorruptCheckpoint:
      return kCheckpointError;
    default:
      return kDataError;
  }
}

// Any failure while reading a checkpoint is a checkpoint error.
template <class F>
auto checkpoint_stage(F&& f) {
  try {
    return f();
  } catch (const Error& e) {
    throw Exit{kCheckpointError, e.what()};
  }
}

model::PolicyModel load_model(const fs::path& path, const std::optional<fs::path>& backbone_path) {
  return checkpoint_stage([&] {
    const io::CheckpointInfo info = io::read_checkpoint_info(path);
    if (info.has_group(model::ParamGroup::kBackbone)) return io::load_checkpoint(path);
    fs::path bb;
    if (backbone_path) {
      bb = *backbone_path;
    } else if (auto it = info.meta.find("backbone_path"); it != info.meta.end()) {
      bb = it->second;
    } else {
      fail(ErrorCode::kCheckpointIncompatible, path.string() + " stores no backbone; pass --backbone");
    }
    const model::PolicyModel backbone = io::load_checkpoint(bb);
    return io::load_checkpoint(path, &backbone);
  });
}

std::vector<std::string> split_set(const std::vector<std::string>& sets, io::Config& cfg) {
  std::vector<std::string> keys;
  for (const std::string& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw Exit{kUsage, "--set expects key=value, got '" + s + "'"};
    std::string key = s.substr(0, eq), value = s.substr(eq + 1);
    cfg.set(key, value);
    keys.push_back(key);
  }
  return keys;
}

const char* const kLrKeys[model::kParamGroupCount] = {"lr_scale_backbone", "lr_scale_decoder", "lr_scale_heads",
                                                      "lr_scale_adapters"};

// Known keys; anything else in a config file is a usage error.
const std::vector<std::string>& known_keys() {
  static const std::vector<std::string> keys = {
      "profile", "d_model", "n_heads", "n_encoder_layers", "ff_hidden", "tanh_clip", "epochs", "batches_per_epoch",
      "batch_size", "learning_rate", "lr_scale_backbone", "lr_scale_decoder", "lr_scale_heads", "lr_scale_adapters",
      "alpha", "val_size", "n_customers", "distribution", "seed", "max_grad_norm", "pomo_starts"};
  return keys;
}

void check_keys(const io::Config& cfg) {
  for (const auto& [k, v] : cfg.values()) {
    if (std::find(known_keys().begin(), known_keys().end(), k) == known_keys().end()) {
      throw Exit{kUsage, "unknown config key '" + k + "'"};
    }
  }
}

train::TrainConfig train_config(const io::Config& cfg) {
  train::TrainConfig c;
  c.epochs = static_cast<int>(cfg.get_int("epochs", c.epochs));
  c.batches_per_epoch = static_cast<int>(cfg.get_int("batches_per_epoch", c.batches_per_epoch));
  c.batch_size = static_cast<int>(cfg.get_int("batch_size", c.batch_size));
  c.learning_rate = cfg.get_double("learning_rate", c.learning_rate);
  for (int g = 0; g < model::kParamGroupCount; ++g) c.group_lr_scale[g] = cfg.get_double(kLrKeys[g], 1.0);
  c.alpha = cfg.get_double("alpha", c.alpha);
  c.val_size = static_cast<int>(cfg.get_int("val_size", c.val_size));
  c.n_customers = static_cast<int>(cfg.get_int("n_customers", c.n_customers));
  c.distribution = vrp::parse_distribution(cfg.get("distribution", std::string(vrp::to_string(c.distribution))));
  c.seed = static_cast<std::uint64_t>(cfg.get_int("seed", static_cast<long long>(c.seed)));
  c.max_grad_norm = cfg.get_double("max_grad_norm", c.max_grad_norm);
  c.pomo_starts = static_cast<int>(cfg.get_int("pomo_starts", c.pomo_starts));
  return c;
}

model::BackboneConfig backbone_config(const io::Config& cfg) {
  const model::Profile profile = model::parse_profile(cfg.get("profile", "am"));
  model::BackboneConfig c = profile == model::Profile::kAm ? model::BackboneConfig::am() : model::BackboneConfig::pomo();
  c.d_model = static_cast<int>(cfg.get_int("d_model", c.d_model));
  c.n_heads = static_cast<int>(cfg.get_int("n_heads", c.n_heads));
  c.n_encoder_layers = static_cast<int>(cfg.get_int("n_encoder_layers", c.n_encoder_layers));
  c.ff_hidden = static_cast<int>(cfg.get_int("ff_hidden", c.ff_hidden));
  c.tanh_clip = cfg.get_double("tanh_clip", c.tanh_clip);
  c.validate();
  return c;
}

std::string fmt(double v) {
  std::ostringstream s;
  s << std::setprecision(17) << v;
  return s.str();
}

// Every key with its effective value, so the run can be repeated from the
// log alone.
io::Config resolved(const model::BackboneConfig& b, const train::TrainConfig& t) {
  io::Config c;
  c.set("profile", std::string(model::to_string(b.profile)));
  c.set("d_model", std::to_string(b.d_model));
  c.set("n_heads", std::to_string(b.n_heads));
  c.set("n_encoder_layers", std::to_string(b.n_encoder_layers));
  c.set("ff_hidden", std::to_string(b.ff_hidden));
  c.set("tanh_clip", fmt(b.tanh_clip));
  c.set("epochs", std::to_string(t.epochs));
  c.set("batches_per_epoch", std::to_string(t.batches_per_epoch));
  c.set("batch_size", std::to_string(t.batch_size));
  c.set("learning_rate", fmt(t.learning_rate));
  for (int g = 0; g < model::kParamGroupCount; ++g) c.set(kLrKeys[g], fmt(t.group_lr_scale[g]));
  c.set("alpha", fmt(t.alpha));
  c.set("val_size", std::to_string(t.val_size));
  c.set("n_customers", std::to_string(t.n_customers));
  c.set("distribution", std::string(vrp::to_string(t.distribution)));
  c.set("seed", std::to_string(t.seed));
  c.set("max_grad_norm", fmt(t.max_grad_norm));
  c.set("pomo_starts", std::to_string(t.pomo_starts));
  return c;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw Exit{kDataError, "cannot write " + path.string()};
  f << text;
}

void write_history(const fs::path& path, const std::vector<train::EpochRecord>& history) {
  std::string text;
  for (const auto& r : history) text += train::to_json_line(r) + "\n";
  write_text(path, text);
}

struct TrainArgs {
  std::optional<fs::path> config_file;
  std::vector<std::string> sets;
  fs::path out;
  std::optional<fs::path> state_dir;
};

io::Config gather(const TrainArgs& a) {
  io::Config cfg = a.config_file ? io::Config::load(*a.config_file) : io::Config{};
  split_set(a.sets, cfg);
  check_keys(cfg);
  return cfg;
}

void log_epoch(std::ostream& log, const train::EpochRecord& r) {
  log << "epoch " << r.epoch << " train_cost " << fmt(r.train_cost) << " val_cost " << fmt(r.val_cost)
      << (r.baseline_replaced ? " baseline-replaced" : "") << "\n";
}

int cmd_gen_data(const std::string& problem, int n, int count, const std::string& dist, std::uint64_t seed,
                 const fs::path& out, std::ostream& log) {
  io::DatasetHeader h;
  h.problem = vrp::parse_problem(problem);
  h.n_customers = n;
  h.count = count;
  h.distribution = std::string(vrp::to_string(vrp::parse_distribution(dist)));
  h.seed = seed;
  if (n <= 0 || count <= 0) throw Exit{kUsage, "--n and --count must be positive"};
  log << "problem = " << problem << "\nn = " << n << "\ncount = " << count << "\ndistribution = " << h.distribution
      << "\nseed = " << seed << "\n";
  const auto instances = vrp::generate_instances(h.problem, n, count, vrp::parse_distribution(dist), seed);
  io::save_dataset(out, h, instances);
  log << "wrote " << out.string() << "\n";
  return kOk;
}

int cmd_pretrain(const TrainArgs& a, std::ostream& out, std::ostream& log) {
  const io::Config cfg = gather(a);
  const model::BackboneConfig bc = backbone_config(cfg);
  const train::TrainConfig tc = train_config(cfg);
  tc.validate();
  const io::Config res = resolved(bc, tc);
  log << "# pretrain tsp\n" << res.dump();
  write_text(a.out.string() + ".config", res.dump());

  train::TrainRequest req;
  req.problem = vrp::Problem::kTsp;
  req.backbone_config = bc;
  req.mode = model::FinetuneMode::kScratch;
  req.config = tc;
  req.state_dir = a.state_dir;
  req.on_epoch = [&](const train::EpochRecord& r) { log_epoch(log, r); };
  train::TrainResult result = train::train(req);
  write_history(a.out.string() + ".history.jsonl", result.history);
  io::save_checkpoint(result.model, a.out, io::default_groups(result.model),
                      {{"mode", "scratch"}, {"seed", std::to_string(tc.seed)}, {"epochs", std::to_string(tc.epochs)}});
  out << "saved " << a.out.string() << " val_cost " << fmt(result.history.back().val_cost) << "\n";
  return kOk;
}

int cmd_finetune(const TrainArgs& a, const std::string& problem_name, const fs::path& backbone_path,
                 const std::string& mode_name, std::ostream& out, std::ostream& log) {
  io::Config cfg = gather(a);
  const vrp::Problem problem = vrp::parse_problem(problem_name);
  const model::FinetuneMode mode = model::parse_finetune_mode(mode_name);
  const model::PolicyModel backbone = checkpoint_stage([&] { return io::load_checkpoint(backbone_path); });
  if (cfg.has("profile") || cfg.has("d_model") || cfg.has("n_heads") || cfg.has("n_encoder_layers") ||
      cfg.has("ff_hidden") || cfg.has("tanh_clip")) {
    if (!(backbone_config(cfg) == backbone.config())) {
      throw Exit{kCheckpointError, "configured architecture differs from the backbone checkpoint"};
    }
  }
  const model::BackboneConfig bc = backbone.config();
  // epochs = 0 writes the assembled model without training.
  const bool untrained = cfg.get_int("epochs", 1) == 0;
  if (untrained) cfg.set("epochs", "1");
  train::TrainConfig tc = train_config(cfg);
  tc.validate();
  if (untrained) tc.epochs = 0;
  const io::Config res = resolved(bc, tc);
  log << "# finetune " << vrp::to_string(problem) << " mode " << model::to_string(mode) << " backbone "
      << backbone_path.string() << "\n"
      << res.dump();
  write_text(a.out.string() + ".config", res.dump());

  model::PolicyModel trained = [&] {
    if (untrained) {
      model::PolicyModel m = model::assemble(problem, bc, model::adapter_for(mode), tc.seed,
                                             mode == model::FinetuneMode::kScratch ? nullptr : &backbone);
      model::apply_freezing(m, mode);
      write_history(a.out.string() + ".history.jsonl", {});
      return m;
    }
    train::TrainRequest req;
    req.problem = problem;
    req.backbone_config = bc;
    req.mode = mode;
    req.backbone = &backbone;
    req.config = tc;
    req.state_dir = a.state_dir;
    req.on_epoch = [&](const train::EpochRecord& r) { log_epoch(log, r); };
    train::TrainResult result = train::train(req);
    write_history(a.out.string() + ".history.jsonl", result.history);
    return std::move(result.model);
  }();
  std::map<std::string, std::string> meta{{"mode", std::string(model::to_string(mode))},
                                          {"seed", std::to_string(tc.seed)},
                                          {"epochs", std::to_string(tc.epochs)}};
  if (trained.adapter_mode() != model::AdapterMode::kNone) {
    meta["backbone_path"] = fs::absolute(backbone_path).string();
  }
  io::save_checkpoint(trained, a.out, io::default_groups(trained), meta);
  const eval::ParamCounts counts = eval::count_params(trained);
  out << "saved " << a.out.string() << " trainable " << counts.trainable << " total " << counts.total << "\n";
  return kOk;
}

struct EvalArgs {
  fs::path model;
  std::optional<fs::path> backbone;
  std::optional<fs::path> data;
  std::optional<fs::path> cvrplib;
  std::string mode = "greedy";
  int samples = eval::kDefaultSamples;
  std::uint64_t seed = 1;
  std::string refs;  // "", "oracle" or a file
  int limit = 0;
};

eval::EvalOptions options(const EvalArgs& a) {
  eval::EvalOptions o;
  o.mode = eval::parse_eval_mode(a.mode);
  o.samples = a.samples;
  o.seed = a.seed;
  return o;
}

std::vector<fs::path> benchmark_files(const fs::path& dir) {
  std::vector<fs::path> files;
  if (fs::is_regular_file(dir)) return {dir};
  if (!fs::is_directory(dir)) throw Exit{kDataError, "no such benchmark directory " + dir.string()};
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().extension() == ".vrp") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw Exit{kDataError, "no .vrp files in " + dir.string()};
  return files;
}

bool rounds_edges(const io::BenchmarkInstance& b) { return b.edge_weight_type == "EUC_2D"; }

int eval_cvrplib(const model::PolicyModel& m, const EvalArgs& a, std::ostream& out) {
  if (m.problem() != vrp::Problem::kCvrp) throw Exit{kUsage, "benchmark files need a CVRP model"};
  const eval::EvalOptions o = options(a);
  out << std::left << std::setw(16) << "instance" << std::setw(8) << "n" << std::setw(14) << "cost" << std::setw(14)
      << "best_known" << std::setw(10) << "gap%" << "time_s\n";
  double gap_sum = 0.0;
  int gap_count = 0;
  for (const fs::path& file : benchmark_files(*a.cvrplib)) {
    const io::BenchmarkInstance b = io::load_cvrplib(file);
    const io::NormalizedInstance norm = io::to_instance(b);
    const eval::EvalReport r = eval::evaluate(m, std::span(&norm.instance, 1), o);
    const double cost = io::original_cost(b, norm, r.tours[0].nodes, rounds_edges(b));
    out << std::setw(16) << b.name << std::setw(8) << b.dimension - 1 << std::setw(14) << std::fixed
        << std::setprecision(2) << cost;
    if (b.best_known) {
      const double g = eval::gap(cost, *b.best_known);
      gap_sum += g;
      ++gap_count;
      out << std::setw(14) << *b.best_known << std::setw(10) << g * 100.0;
    } else {
      out << std::setw(14) << "-" << std::setw(10) << "-";
    }
    out << r.seconds << "\n";
  }
  if (gap_count > 0) out << "mean gap% " << std::fixed << std::setprecision(2) << gap_sum / gap_count * 100.0 << "\n";
  return kOk;
}

int cmd_eval(const EvalArgs& a, std::ostream& out, std::ostream& log) {
  if (static_cast<bool>(a.data) == static_cast<bool>(a.cvrplib)) throw Exit{kUsage, "pass exactly one of --data, --cvrplib"};
  const model::PolicyModel m = load_model(a.model, a.backbone);
  log << "model = " << a.model.string() << "\nmode = " << a.mode << "\nsamples = " << a.samples
      << "\nseed = " << a.seed << "\n";
  if (a.cvrplib) return eval_cvrplib(m, a, out);
  std::vector<vrp::Instance> instances = io::load_dataset(*a.data);
  if (a.limit > 0 && static_cast<std::size_t>(a.limit) < instances.size()) instances.resize(a.limit);
  eval::EvalReport r = eval::evaluate(m, instances, options(a));
  if (!a.refs.empty()) {
    const auto refs = a.refs == "oracle" ? eval::reference_costs(instances, eval::ReferenceSource::kOracle, {})
                                         : eval::reference_costs(instances, eval::ReferenceSource::kFile, a.refs);
    eval::attach_gaps(r, refs);
  }
  out << eval::format_report(r);
  return kOk;
}

int cmd_solve(const EvalArgs& a, const fs::path& instance_file, std::ostream& out) {
  const model::PolicyModel m = load_model(a.model, a.backbone);
  const eval::EvalOptions o = options(a);
  if (instance_file.extension() == ".vrp") {
    const io::BenchmarkInstance b = io::load_cvrplib(instance_file);
    const io::NormalizedInstance norm = io::to_instance(b);
    const eval::EvalReport r = eval::evaluate(m, std::span(&norm.instance, 1), o);
    out << "cost " << std::fixed << std::setprecision(4)
        << io::original_cost(b, norm, r.tours[0].nodes, rounds_edges(b)) << "\ntour";
    // Node ids as numbered in the file.
    for (std::size_t v : r.tours[0].nodes) out << " " << norm.original_index[v] + 1;
    out << "\n";
    return kOk;
  }
  const std::vector<vrp::Instance> instances = io::load_dataset(instance_file);
  const eval::EvalReport r = eval::evaluate(m, instances, o);
  for (std::size_t i = 0; i < r.tours.size(); ++i) {
    out << "instance " << i << " objective " << std::setprecision(10)
        << (m.problem() == vrp::Problem::kOp ? -r.costs[i] : r.costs[i]) << " tour";
    for (std::size_t v : r.tours[i].nodes) out << " " << v;
    out << "\n";
  }
  return kOk;
}

int cmd_params(const fs::path& path, std::ostream& out) {
  const io::CheckpointInfo info = checkpoint_stage([&] { return io::read_checkpoint_info(path); });
  const model::PolicyModel m = model::assemble(info.problem, info.config, info.adapter, 0);
  const model::ParamPartition p = model::partition(m);
  out << std::left << std::setw(12) << "group" << std::setw(12) << "params" << std::setw(11) << "trainable"
      << "stored\n";
  for (const auto& g : p.groups) {
    out << std::setw(12) << model::to_string(g.group) << std::setw(12) << g.count << std::setw(11)
        << (g.trainable ? "yes" : "no") << (info.has_group(g.group) ? "yes" : "no") << "\n";
  }
  out << std::setw(12) << "total" << p.total << "\n" << std::setw(12) << "trainable" << p.trainable << "\n";
  return kOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& log) {
  CLI::App app{"Pretrained-backbone routing policies: data, training, evaluation"};
  app.require_subcommand(1);

  std::string problem = "tsp", dist = "uniform";
  int n = 20, count = 1000;
  std::uint64_t seed = 1;
  fs::path out_path;
  auto* gen = app.add_subcommand("gen-data", "Generate a random instance dataset");
  gen->add_option("--problem", problem, "tsp|op|pctsp|cvrp")->required();
  gen->add_option("--n", n, "customers per instance")->required();
  gen->add_option("--count", count, "instances");
  gen->add_option("--distribution", dist, "uniform|gaussian");
  gen->add_option("--seed", seed);
  gen->add_option("--out", out_path)->required();

  TrainArgs ta;
  std::string profile;
  auto* pre = app.add_subcommand("pretrain", "Train a TSP backbone from scratch");
  pre->add_option("--config", ta.config_file, "key = value file")->check(CLI::ExistingFile);
  pre->add_option("--profile", profile, "am|pomo (overrides the config file)");
  pre->add_option("--set", ta.sets, "key=value override");
  pre->add_option("--out", ta.out, "checkpoint path")->required();
  pre->add_option("--state-dir", ta.state_dir, "per-epoch snapshots; resumes when present");

  fs::path backbone_path;
  std::string ft_mode = "full";
  auto* fine = app.add_subcommand("finetune", "Train a problem model from a TSP backbone");
  fine->add_option("--problem", problem)->required();
  fine->add_option("--backbone", backbone_path, "TSP checkpoint")->required();
  fine->add_option("--mode", ft_mode, "full|inside|side|lora|scratch");
  fine->add_option("--config", ta.config_file)->check(CLI::ExistingFile);
  fine->add_option("--set", ta.sets, "key=value override");
  fine->add_option("--out", ta.out)->required();
  fine->add_option("--state-dir", ta.state_dir);

  EvalArgs ea;
  auto add_model = [&](CLI::App* c) {
    c->add_option("--model", ea.model, "checkpoint")->required();
    c->add_option("--backbone", ea.backbone, "backbone checkpoint for adapter checkpoints");
    c->add_option("--decode", ea.mode, "greedy|sample|aug8-greedy|aug8-sample");
    c->add_option("--samples", ea.samples);
    c->add_option("--seed", ea.seed);
  };
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset or benchmark files");
  add_model(ev);
  ev->add_option("--data", ea.data, "dataset file");
  ev->add_option("--cvrplib", ea.cvrplib, ".vrp file or directory");
  ev->add_option("--refs", ea.refs, "'oracle' or a file with one objective per line");
  ev->add_option("--limit", ea.limit, "evaluate the first N instances");

  fs::path instance_file;
  auto* solve = app.add_subcommand("solve", "Print tours for an instance file");
  add_model(solve);
  solve->add_option("instance", instance_file, "dataset or .vrp file")->required();

  fs::path params_path;
  auto* params = app.add_subcommand("params", "Parameter counts of a checkpoint");
  params->add_option("checkpoint", params_path)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    log << e.what() << "\n";
    return kUsage;
  }

  try {
    if (!profile.empty()) ta.sets.insert(ta.sets.begin(), "profile=" + profile);
    if (*gen) return cmd_gen_data(problem, n, count, dist, seed, out_path, log);
    if (*pre) return cmd_pretrain(ta, out, log);
    if (*fine) return cmd_finetune(ta, problem, backbone_path, ft_mode, out, log);
    if (*ev) return cmd_eval(ea, out, log);
    if (*solve) return cmd_solve(ea, instance_file, out);
    if (*params) return cmd_params(params_path, out);
  } catch (const Exit& e) {
    log << "error: " << e.message << "\n";
    return e.code;
  } catch (const Error& e) {
    log << "error: " << e.what() << "\n";
    return status_for(e.code());
  } catch (const std::exception& e) {
    log << "error: " << e.what() << "\n";
    return kDataError;
  }
  return kUsage;
}

}  // namespace xpl::cli
