#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "xpl/core/error.hpp"
#include "xpl/eval/eval.hpp"
#include "xpl/vrp/generate.hpp"
#include "xpl/vrp/oracle.hpp"

using namespace xpl;
using namespace xpl::eval;
using model::AdapterMode;
using model::BackboneConfig;
using model::Profile;
using vrp::Problem;
namespace fs = std::filesystem;

namespace {

BackboneConfig tiny(Profile p = Profile::kAm) {
  BackboneConfig c;
  c.profile = p;
  c.d_model = 8;
  c.n_heads = 2;
  c.n_encoder_layers = 1;
  c.ff_hidden = 16;
  return c;
}

EvalReport run(const model::PolicyModel& m, const std::vector<vrp::Instance>& inst, EvalMode mode, int samples = 16) {
  EvalOptions o;
  o.mode = mode;
  o.samples = samples;
  o.seed = 5;
  o.rollouts_per_pass = 7;  // forces several sampling passes
  return evaluate(m, inst, o);
}

}  // namespace

TEST_CASE("decode modes order and stay feasible") {
  for (Profile prof : {Profile::kAm, Profile::kPomo}) {
    for (Problem p : {Problem::kTsp, Problem::kOp, Problem::kPctsp, Problem::kCvrp}) {
      CAPTURE(static_cast<int>(prof));
      CAPTURE(static_cast<int>(p));
      auto m = model::assemble(p, tiny(prof), AdapterMode::kNone, 4);
      auto inst = vrp::generate_instances(p, 7, 6, vrp::Distribution::kUniform, 3);
      const EvalReport g = run(m, inst, EvalMode::kGreedy);
      const EvalReport s = run(m, inst, EvalMode::kSample);
      const EvalReport ag = run(m, inst, EvalMode::kAugment8Greedy);
      const EvalReport as = run(m, inst, EvalMode::kAugment8Sample, 4);
      for (std::size_t i = 0; i < inst.size(); ++i) {
        CHECK(s.costs[i] <= g.costs[i]);
        CHECK(ag.costs[i] <= g.costs[i]);
        CHECK(as.costs[i] <= ag.costs[i]);
        for (const EvalReport* r : {&g, &s, &ag, &as}) {
          CHECK(vrp::check_feasible(inst[i], r->tours[i].nodes).feasible);
          CHECK(r->tours[i].cost == vrp::tour_cost(inst[i], r->tours[i].nodes));
        }
      }
      const EvalReport s2 = run(m, inst, EvalMode::kSample);
      CHECK(s2.costs == s.costs);
      for (std::size_t i = 0; i < inst.size(); ++i) CHECK(s2.tours[i].nodes == s.tours[i].nodes);
      CHECK(s.samples == 16);
      CHECK(g.samples == 0);
      double mean = 0.0;
      for (double c : g.costs) mean += c / static_cast<double>(g.costs.size());
      CHECK(std::abs(g.mean_objective - (p == Problem::kOp ? -mean : mean)) < 1e-12);
    }
  }
}

TEST_CASE("multi-start skips customers beyond the length budget") {
  vrp::Instance in = vrp::generate_instances(Problem::kOp, 6, 1, vrp::Distribution::kUniform, 2)[0];
  in.coords[0] = {0.0, 0.0};
  in.coords[3] = {1.0, 1.0};  // round trip 2.83 > budget
  in.max_length = 2.0;
  const auto starts = model::start_nodes(in, 6);
  CHECK(std::find(starts.begin(), starts.end(), 3) == starts.end());
  CHECK(starts.size() == 6);
  auto m = model::assemble(Problem::kOp, tiny(Profile::kPomo), AdapterMode::kNone, 4);
  const EvalReport r = run(m, {in}, EvalMode::kAugment8Sample, 8);
  CHECK(vrp::check_feasible(in, r.tours[0].nodes).feasible);
  in.max_length = 1e-3;
  CHECK(model::start_nodes(in, 2) == std::vector<std::size_t>{0, 0});
  CHECK(run(m, {in}, EvalMode::kSample, 4).tours[0].nodes == std::vector<std::size_t>{0, 0});
}

TEST_CASE("greedy evaluation matches single greedy constructions") {
  auto m = model::assemble(Problem::kCvrp, tiny(), AdapterMode::kNone, 6);
  auto inst = vrp::generate_instances(Problem::kCvrp, 6, 5, vrp::Distribution::kUniform, 1);
  const EvalReport g = run(m, inst, EvalMode::kGreedy);
  for (std::size_t i = 0; i < inst.size(); ++i) {
    std::mt19937_64 rng(0);
    CHECK(model::construct(m, inst[i], model::DecodeMode::kGreedy, rng).tour.nodes == g.tours[i].nodes);
  }
}

TEST_CASE("evaluation rejects bad input") {
  auto m = model::assemble(Problem::kTsp, tiny(), AdapterMode::kNone, 6);
  CHECK_THROWS_AS(evaluate(m, {}, {}), Error);
  auto op = vrp::generate_instances(Problem::kOp, 5, 2, vrp::Distribution::kUniform, 1);
  CHECK_THROWS_AS(evaluate(m, op, {}), Error);
  CHECK(parse_eval_mode("aug8-sample") == EvalMode::kAugment8Sample);
  CHECK_THROWS_AS(parse_eval_mode("beam"), Error);
}

TEST_CASE("parameter counts of the reported configurations") {
  auto close = [](std::size_t v, double target, double tol) { return std::abs(double(v) - target) / target < tol; };
  const auto am = BackboneConfig::am(), pomo = BackboneConfig::pomo();
  CHECK(close(count_params(model::assemble(Problem::kOp, am, AdapterMode::kNone, 1)).total, 694e3, 0.02));
  CHECK(close(count_params(model::assemble(Problem::kCvrp, pomo, AdapterMode::kSide, 1)).trainable, 0.331e6, 0.05));
  CHECK(close(count_params(model::assemble(Problem::kCvrp, pomo, AdapterMode::kInside, 1)).trainable, 0.256e6, 0.05));

  auto m = model::assemble(Problem::kPctsp, tiny(), AdapterMode::kLora, 2);
  const ParamCounts before = count_params(m);
  for (auto& p : m.params().all()) p.value.fill(0.5);
  const ParamCounts after = count_params(m);
  CHECK(before.total == after.total);
  CHECK(before.trainable == after.trainable);
  CHECK(before.per_group == after.per_group);
}

TEST_CASE("gap convention") {
  CHECK(gap(1.05, 1.00) == doctest::Approx(0.05).epsilon(1e-12));
  // OP values are stored negated: utility 8 against a reference of 10.
  CHECK(gap(-8.0, -10.0) == doctest::Approx(0.2).epsilon(1e-12));
  CHECK(gap(0.0, 0.0) == 0.0);

  auto inst = vrp::generate_instances(Problem::kPctsp, 6, 4, vrp::Distribution::kUniform, 2);
  const auto refs = reference_costs(inst, ReferenceSource::kOracle, {});
  EvalReport r;
  for (const auto& in : inst) r.costs.push_back(vrp::brute_force_optimal(in).cost);
  attach_gaps(r, refs);
  REQUIRE(r.mean_gap.has_value());
  CHECK(*r.mean_gap == 0.0);
  CHECK(format_report(r).find("0.00") != std::string::npos);

  auto big = vrp::generate_instances(Problem::kTsp, 20, 1, vrp::Distribution::kUniform, 2);
  try {
    reference_costs(big, ReferenceSource::kOracle, {});
    FAIL("oracle accepted 20 customers");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kOracleSizeExceeded);
  }
}

TEST_CASE("reference values from a file") {
  const fs::path path = fs::temp_directory_path() / "xpl_refs.txt";
  std::ofstream(path) << "5.5\n\n6.25\n";
  auto op = vrp::generate_instances(Problem::kOp, 5, 2, vrp::Distribution::kUniform, 1);
  CHECK(reference_costs(op, ReferenceSource::kFile, path) == std::vector<double>{-5.5, -6.25});
  auto tsp = vrp::generate_instances(Problem::kTsp, 5, 2, vrp::Distribution::kUniform, 1);
  CHECK(reference_costs(tsp, ReferenceSource::kFile, path) == std::vector<double>{5.5, 6.25});
  auto three = vrp::generate_instances(Problem::kTsp, 5, 3, vrp::Distribution::kUniform, 1);
  CHECK_THROWS_AS(reference_costs(three, ReferenceSource::kFile, path), Error);
  fs::remove(path);
}

TEST_CASE("Tsili construction") {
  vrp::Instance tight = vrp::generate_instances(Problem::kOp, 6, 1, vrp::Distribution::kUniform, 1)[0];
  tight.max_length = 1e-3;
  std::mt19937_64 rng(1);
  const vrp::Tour empty = tsili_construct(tight, model::DecodeMode::kGreedy, rng);
  CHECK(empty.nodes == std::vector<std::size_t>{0, 0});
  CHECK(empty.cost == 0.0);

  auto inst = vrp::generate_instances(Problem::kOp, 8, 100, vrp::Distribution::kUniform, 12);
  double tsili = 0.0, best = 0.0;
  int below_half = 0;
  for (const auto& in : inst) {
    const vrp::Tour g = tsili_construct(in, model::DecodeMode::kGreedy, rng);
    CHECK(g.feasible);
    const vrp::Tour s = tsili_construct(in, model::DecodeMode::kSample, rng);
    CHECK(s.feasible);
    std::mt19937_64 r2(3);
    CHECK(tsili_best(in, 32, r2).cost <= g.cost);
    const double opt = -vrp::brute_force_optimal(in).cost;
    tsili += -g.cost;
    best += opt;
    if (-g.cost < 0.5 * opt) ++below_half;
  }
  CHECK(tsili >= 0.5 * best);
  CHECK(below_half == 0);
}

TEST_CASE("nearest neighbour tour") {
  vrp::Instance in;
  in.problem = Problem::kTsp;
  in.n_customers = 4;
  in.coords = {{0.0, 0.0}, {0.9, 0.0}, {0.1, 0.0}, {0.5, 0.0}};
  const vrp::Tour t = nearest_neighbor_tsp(in, 0);
  CHECK(t.nodes == std::vector<std::size_t>{0, 2, 3, 1});
  CHECK(t.cost == doctest::Approx(1.8).epsilon(1e-12));
  CHECK_THROWS_AS(nearest_neighbor_tsp(in, 4), Error);
}
