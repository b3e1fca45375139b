#include "xpl/eval/eval.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "xpl/core/error.hpp"
#include "xpl/train/augment.hpp"
#include "xpl/train/trainer.hpp"
#include "xpl/vrp/oracle.hpp"

namespace xpl::eval {

using vrp::Instance;
using vrp::Tour;

std::string_view to_string(EvalMode mode) {
  switch (mode) {
    case EvalMode::kGreedy: return "greedy";
    case EvalMode::kSample: return "sample";
    case EvalMode::kAugment8Greedy: return "aug8-greedy";
    case EvalMode::kAugment8Sample: return "aug8-sample";
  }
  return "?";
}

EvalMode parse_eval_mode(std::string_view name) {
  for (EvalMode m : {EvalMode::kGreedy, EvalMode::kSample, EvalMode::kAugment8Greedy, EvalMode::kAugment8Sample}) {
    if (name == to_string(m)) return m;
  }
  fail(ErrorCode::kInvalidArgument, "unknown decode mode '" + std::string(name) + "'");
}

ParamCounts count_params(const model::PolicyModel& model) {
  const model::ParamPartition p = model::partition(model);
  ParamCounts c;
  c.total = p.total;
  c.trainable = p.trainable;
  for (int g = 0; g < model::kParamGroupCount; ++g) c.per_group[g] = p.groups[g].count;
  return c;
}

namespace {

// Sampled tours for one instance in passes of at most `per_pass` rollouts.
Tour best_sample(const model::PolicyModel& model, const Instance& in, int samples, std::size_t per_pass,
                 std::mt19937_64& rng) {
  const bool multi = model.config().profile == model::Profile::kPomo;
  const std::size_t customers = in.node_count() - in.first_customer();
  const std::vector<std::size_t> starts = multi ? model::start_nodes(in, customers) : std::vector<std::size_t>{};
  Tour best;
  best.cost = std::numeric_limits<double>::infinity();
  std::size_t done = 0;
  const auto total = static_cast<std::size_t>(samples);
  while (done < total) {
    const std::size_t count = std::min(per_pass, total - done);
    nn::Tape tape(false);
    model::Forward fwd(model, tape);
    model::RolloutRequest req;
    req.mode = model::DecodeMode::kSample;
    req.repeats = count;
    if (multi) {
      for (std::size_t r = 0; r < count; ++r) req.first_nodes.push_back(starts[(done + r) % starts.size()]);
    }
    model::RolloutResult res = model::rollout(fwd, std::span<const Instance>(&in, 1), req, rng);
    for (Tour& t : res.tours) {
      if (t.cost < best.cost) best = std::move(t);
    }
    done += count;
  }
  return best;
}

}  // namespace

EvalReport evaluate(const model::PolicyModel& model, std::span<const Instance> instances, const EvalOptions& opt) {
  require(!instances.empty(), ErrorCode::kInvalidArgument, "no instances to evaluate");
  model::check_batch(model, instances.subspan(0, 1));
  for (const Instance& in : instances) {
    require(in.problem == model.problem(), ErrorCode::kInvalidArgument, "instance problem does not match the model");
  }
  const bool sample = opt.mode == EvalMode::kSample || opt.mode == EvalMode::kAugment8Sample;
  const bool aug = opt.mode == EvalMode::kAugment8Greedy || opt.mode == EvalMode::kAugment8Sample;
  require(!sample || opt.samples >= 1, ErrorCode::kInvalidArgument, "sample count must be positive");
  const bool multi = model.config().profile == model::Profile::kPomo;

  const auto t0 = std::chrono::steady_clock::now();
  const int variants = aug ? train::kSymmetries : 1;
  std::vector<Tour> best(instances.size());
  for (Tour& t : best) t.cost = std::numeric_limits<double>::infinity();
  for (int k = 0; k < variants; ++k) {
    std::vector<Instance> view;
    view.reserve(instances.size());
    for (const Instance& in : instances) {
      Instance v = in;
      for (vrp::Point& p : v.coords) p = train::transform_point(p, k);
      view.push_back(std::move(v));
    }
    // Node indices are unchanged by the symmetry, so tours are rescored on
    // the original instance.
    std::vector<Tour> greedy = model::greedy_tours(model, view, multi, opt.rollouts_per_pass);
    for (std::size_t i = 0; i < instances.size(); ++i) {
      Tour t = vrp::make_tour(instances[i], greedy[i].nodes);
      if (t.cost < best[i].cost) best[i] = std::move(t);
      if (!sample) continue;
      std::mt19937_64 rng(train::derive_seed(opt.seed, static_cast<std::uint64_t>(i), static_cast<std::uint64_t>(k)));
      Tour s = best_sample(model, view[i], opt.samples, opt.rollouts_per_pass, rng);
      s = vrp::make_tour(instances[i], s.nodes);
      if (s.cost < best[i].cost) best[i] = std::move(s);
    }
  }

  EvalReport r;
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  r.problem = std::string(vrp::to_string(model.problem()));
  r.mode = opt.mode;
  r.samples = sample ? opt.samples : 0;
  r.params = count_params(model);
  double sum = 0.0;
  for (Tour& t : best) {
    r.costs.push_back(t.cost);
    sum += t.cost;
  }
  r.tours = std::move(best);
  r.mean_objective = sum / static_cast<double>(instances.size());
  if (model.problem() == vrp::Problem::kOp) r.mean_objective = -r.mean_objective;
  return r;
}

double gap(double cost, double reference) {
  if (cost == reference) return 0.0;
  require(reference != 0.0, ErrorCode::kInvalidArgument, "gap undefined for a zero reference");
  return (cost - reference) / std::abs(reference);
}

void attach_gaps(EvalReport& report, std::span<const double> refs) {
  require(refs.size() == report.costs.size(), ErrorCode::kInvalidArgument, "one reference per instance");
  report.gaps.clear();
  double sum = 0.0;
  for (std::size_t i = 0; i < refs.size(); ++i) {
    report.gaps.push_back(gap(report.costs[i], refs[i]));
    sum += report.gaps.back();
  }
  report.mean_gap = sum / static_cast<double>(refs.size());
}

std::string format_report(const EvalReport& r) {
  std::ostringstream out;
  out << std::left << std::setw(8) << "problem" << std::setw(13) << "mode" << std::setw(9) << "samples"
      << std::setw(11) << "instances" << std::setw(14) << "objective" << std::setw(10) << "gap%" << std::setw(11)
      << "time_s" << std::setw(12) << "trainable" << "total\n";
  std::ostringstream gap_text;
  if (r.mean_gap) {
    gap_text << std::fixed << std::setprecision(2) << *r.mean_gap * 100.0;
  } else {
    gap_text << "-";
  }
  out << std::setw(8) << r.problem << std::setw(13) << to_string(r.mode) << std::setw(9) << r.samples << std::setw(11)
      << r.costs.size() << std::setw(14) << std::fixed << std::setprecision(4) << r.mean_objective << std::setw(10)
      << gap_text.str() << std::setw(11) << std::setprecision(2) << r.seconds << std::setw(12) << r.params.trainable
      << r.params.total << "\n";
  return out.str();
}

Tour tsili_construct(const Instance& in, model::DecodeMode mode, std::mt19937_64& rng) {
  require(in.problem == vrp::Problem::kOp, ErrorCode::kInvalidArgument, "Tsili construction is for OP instances");
  const std::size_t n = in.node_count();
  std::vector<bool> used(n, false);
  std::vector<std::size_t> nodes{0};
  std::size_t cur = 0;
  double length = 0.0;
  std::vector<double> score(n);
  while (true) {
    bool any = false, any_coincident = false;
    for (std::size_t j = 1; j < n; ++j) {
      score[j] = 0.0;
      if (used[j]) continue;
      const double out = vrp::distance(in.coords[cur], in.coords[j]);
      if (length + out + vrp::distance(in.coords[j], in.coords[0]) > in.max_length) continue;
      any = true;
      if (out == 0.0) {
        any_coincident = true;
        score[j] = std::numeric_limits<double>::infinity();
      } else {
        score[j] = std::pow(in.prizes[j] / out, 4.0);
      }
    }
    if (!any) break;
    std::size_t pick = 0;
    if (any_coincident || mode == model::DecodeMode::kGreedy) {
      for (std::size_t j = 1; j < n; ++j) {
        if (score[j] > 0.0 && (pick == 0 || score[j] > score[pick])) pick = j;
      }
      if (pick == 0) {  // every feasible candidate has zero prize
        for (std::size_t j = 1; j < n && pick == 0; ++j) {
          if (!used[j] && length + vrp::distance(in.coords[cur], in.coords[j]) +
                                  vrp::distance(in.coords[j], in.coords[0]) <=
                              in.max_length) {
            pick = j;
          }
        }
      }
    } else {
      double total = 0.0;
      for (std::size_t j = 1; j < n; ++j) total += score[j];
      if (total <= 0.0) break;
      const double u = std::uniform_real_distribution<double>(0.0, total)(rng);
      double acc = 0.0;
      for (std::size_t j = 1; j < n; ++j) {
        if (score[j] <= 0.0) continue;
        acc += score[j];
        pick = j;
        if (u < acc) break;
      }
    }
    if (pick == 0) break;
    length += vrp::distance(in.coords[cur], in.coords[pick]);
    used[pick] = true;
    nodes.push_back(pick);
    cur = pick;
  }
  nodes.push_back(0);
  return vrp::make_tour(in, std::move(nodes));
}

Tour tsili_best(const Instance& in, int samples, std::mt19937_64& rng) {
  Tour best = tsili_construct(in, model::DecodeMode::kGreedy, rng);
  for (int s = 0; s < samples; ++s) {
    Tour t = tsili_construct(in, model::DecodeMode::kSample, rng);
    if (t.cost < best.cost) best = std::move(t);
  }
  return best;
}

Tour nearest_neighbor_tsp(const Instance& in, std::size_t start) {
  require(in.problem == vrp::Problem::kTsp, ErrorCode::kInvalidArgument, "nearest neighbour is for TSP instances");
  const std::size_t n = in.node_count();
  require(start < n, ErrorCode::kInvalidArgument, "start node out of range");
  std::vector<bool> used(n, false);
  std::vector<std::size_t> nodes{start};
  used[start] = true;
  for (std::size_t step = 1; step < n; ++step) {
    std::size_t best = n;
    double bd = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      if (used[j]) continue;
      const double d = vrp::distance(in.coords[nodes.back()], in.coords[j]);
      if (d < bd) {
        bd = d;
        best = j;
      }
    }
    used[best] = true;
    nodes.push_back(best);
  }
  return vrp::make_tour(in, std::move(nodes));
}

std::vector<double> reference_costs(std::span<const Instance> instances, ReferenceSource source,
                                    const std::optional<std::filesystem::path>& file) {
  std::vector<double> out;
  if (source == ReferenceSource::kOracle) {
    for (const Instance& in : instances) out.push_back(vrp::brute_force_optimal(in).cost);
    return out;
  }
  require(file.has_value(), ErrorCode::kInvalidArgument, "file references need a path");
  std::ifstream f(*file);
  require(static_cast<bool>(f), ErrorCode::kIo, "cannot open " + file->string());
  std::string line;
  int number = 0;
  while (std::getline(f, line)) {
    ++number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(std::stod(line));
    } catch (const std::exception&) {
      fail(ErrorCode::kParseError, file->string() + " line " + std::to_string(number) + ": not a number");
    }
  }
  require(out.size() == instances.size(), ErrorCode::kParseError, "reference file has " + std::to_string(out.size()) +
                                                                       " values for " +
                                                                       std::to_string(instances.size()) + " instances");
  // Files hold objectives; OP objectives are prizes, stored here as costs.
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (instances[i].problem == vrp::Problem::kOp) out[i] = -out[i];
  }
  return out;
}

}  // namespace xpl::eval
