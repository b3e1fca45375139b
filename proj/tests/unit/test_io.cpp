#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <sstream>

#include "doctest.h"
#include "xpl/core/error.hpp"
#include "xpl/io/checkpoint.hpp"
#include "xpl/io/cvrplib.hpp"
#include "xpl/io/dataset.hpp"
#include "xpl/model/policy.hpp"
#include "xpl/vrp/generate.hpp"

using namespace xpl;
using model::AdapterMode;
using model::BackboneConfig;
using model::ParamGroup;
using vrp::Problem;
namespace fs = std::filesystem;

namespace {

BackboneConfig tiny() {
  BackboneConfig c;
  c.d_model = 8;
  c.n_heads = 2;
  c.n_encoder_layers = 1;
  c.ff_hidden = 16;
  return c;
}

fs::path scratch_dir() {
  const fs::path d = fs::temp_directory_path() / "xpl_io_test";
  fs::create_directories(d);
  return d;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

std::vector<float> group_bytes(const model::PolicyModel& m, ParamGroup g) {
  std::vector<float> out;
  for (std::size_t i = 0; i < m.params().size(); ++i) {
    if (m.params().group(i) != g) continue;
    for (double v : m.params()[i].value.values()) out.push_back(static_cast<float>(v));
  }
  return out;
}

bool exact(const model::PolicyModel& a, const model::PolicyModel& b) {
  if (a.params().size() != b.params().size()) return false;
  for (std::size_t i = 0; i < a.params().size(); ++i) {
    if (!(a.params()[i].value == b.params()[i].value)) return false;
  }
  return true;
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no error raised");
  return ErrorCode::kIo;
}

// Depot listed second; line 15 holds the demand of node 3.
const char* kToy = R"(NAME : toy4
COMMENT : hand made
TYPE : CVRP
DIMENSION : 4
EDGE_WEIGHT_TYPE : EUC_2D
CAPACITY : 10
NODE_COORD_SECTION
1 30 40
2 0 0
3 60 0
4 7 7
DEMAND_SECTION
1 3
2 0
3 4
4 5
DEPOT_SECTION
2
-1
EOF
)";

}  // namespace

TEST_CASE("checkpoint roundtrip for every group combination") {
  const fs::path dir = scratch_dir();
  for (AdapterMode a : {AdapterMode::kNone, AdapterMode::kInside, AdapterMode::kSide, AdapterMode::kLora}) {
    auto bb = model::assemble(Problem::kTsp, tiny(), AdapterMode::kNone, 2);
    auto m = model::assemble(Problem::kPctsp, tiny(), a, 3, &bb);
    for (auto& p : m.params().all()) {
      for (double& v : p.value.values()) v = model::to_float(v + 0.01);
    }
    for (int mask = 1; mask < 16; ++mask) {
      CAPTURE(mask);
      std::vector<ParamGroup> groups;
      for (int g = 0; g < 4; ++g) {
        if (mask & (1 << g)) groups.push_back(static_cast<ParamGroup>(g));
      }
      const fs::path path = dir / "ckpt.bin";
      io::save_checkpoint(m, path, groups, {{"note", "x"}});
      auto into = model::assemble(Problem::kPctsp, tiny(), a, 9, &bb);
      if (!(mask & 1)) {
        for (std::size_t i = 0; i < m.params().size(); ++i) {
          if (m.params().group(i) == ParamGroup::kBackbone) into.params()[i].value = m.params()[i].value;
        }
      }
      io::load_checkpoint_into(path, into);
      for (int g = 0; g < 4; ++g) {
        const auto grp = static_cast<ParamGroup>(g);
        if ((mask & (1 << g)) || g == 0) CHECK(group_bytes(into, grp) == group_bytes(m, grp));
      }
      CHECK(io::read_checkpoint_info(path).meta.at("note") == "x");
    }
    const std::vector<ParamGroup> all{ParamGroup::kBackbone, ParamGroup::kDecoder, ParamGroup::kHeads,
                                      ParamGroup::kAdapters};
    io::save_checkpoint(m, dir / "full.bin", all);
    CHECK(exact(io::load_checkpoint(dir / "full.bin"), m));
  }
  fs::remove_all(dir);
}

TEST_CASE("a loaded checkpoint decodes the same tours") {
  const fs::path dir = scratch_dir();
  auto m = model::assemble(Problem::kCvrp, tiny(), AdapterMode::kNone, 8);
  io::save_checkpoint(m, dir / "m.bin", io::default_groups(m));
  auto back = io::load_checkpoint(dir / "m.bin");
  auto inst = vrp::generate_instances(Problem::kCvrp, 8, 100, vrp::Distribution::kUniform, 1);
  auto t1 = model::greedy_tours(m, inst, false), t2 = model::greedy_tours(back, inst, false);
  for (std::size_t i = 0; i < inst.size(); ++i) CHECK(t1[i].nodes == t2[i].nodes);
  fs::remove_all(dir);
}

TEST_CASE("adapter checkpoints pair with their backbone") {
  const fs::path dir = scratch_dir();
  auto bb = model::assemble(Problem::kTsp, tiny(), AdapterMode::kNone, 2);
  auto m = model::assemble(Problem::kOp, tiny(), AdapterMode::kInside, 3, &bb);
  io::save_checkpoint(m, dir / "a.bin", io::default_groups(m));
  const auto info = io::read_checkpoint_info(dir / "a.bin");
  CHECK_FALSE(info.has_group(ParamGroup::kBackbone));
  CHECK(info.backbone_hash == io::backbone_hash(bb));
  CHECK(exact(io::load_checkpoint(dir / "a.bin", &bb), m));
  CHECK(code_of([&] { io::load_checkpoint(dir / "a.bin"); }) == ErrorCode::kCheckpointIncompatible);
  auto other = model::assemble(Problem::kTsp, tiny(), AdapterMode::kNone, 5);
  CHECK(code_of([&] { io::load_checkpoint(dir / "a.bin", &other); }) == ErrorCode::kCheckpointIncompatible);

  auto wide_cfg = tiny();
  wide_cfg.d_model = 16;
  auto wide = model::assemble(Problem::kOp, wide_cfg, AdapterMode::kNone, 1);
  io::save_checkpoint(wide, dir / "w.bin", io::default_groups(wide));
  auto into = model::assemble(Problem::kOp, tiny(), AdapterMode::kNone, 1);
  CHECK(code_of([&] { io::load_checkpoint_into(dir / "w.bin", into); }) == ErrorCode::kCheckpointIncompatible);
  fs::remove_all(dir);
}

TEST_CASE("tampered checkpoints are rejected") {
  const fs::path dir = scratch_dir();
  auto m = model::assemble(Problem::kTsp, tiny(), AdapterMode::kNone, 2);
  io::save_checkpoint(m, dir / "t.bin", io::default_groups(m));
  const std::string bytes = slurp(dir / "t.bin");
  for (std::size_t at : {bytes.size() - 1, bytes.size() - 100, bytes.find("\nend\n") + 7}) {
    std::string bad = bytes;
    bad[at] = static_cast<char>(bad[at] ^ 0x10);
    std::ofstream(dir / "bad.bin", std::ios::binary) << bad;
    CHECK(code_of([&] { io::load_checkpoint(dir / "bad.bin"); }) == ErrorCode::kCorruptCheckpoint);
  }
  std::ofstream(dir / "short.bin", std::ios::binary) << bytes.substr(0, bytes.size() - 4);
  CHECK(code_of([&] { io::load_checkpoint(dir / "short.bin"); }) == ErrorCode::kCorruptCheckpoint);
  fs::remove_all(dir);
}

TEST_CASE("adapter checkpoint size follows the trainable share") {
  const fs::path dir = scratch_dir();
  auto bb = model::assemble(Problem::kTsp, BackboneConfig::am(), AdapterMode::kNone, 2);
  auto full = model::assemble(Problem::kOp, BackboneConfig::am(), AdapterMode::kNone, 3, &bb);
  auto ad = model::assemble(Problem::kOp, BackboneConfig::am(), AdapterMode::kInside, 3, &bb);
  io::save_checkpoint(full, dir / "full.bin", io::default_groups(full));
  io::save_checkpoint(ad, dir / "ad.bin", io::default_groups(ad));
  // Stored share: trainable adapter-model params over the full model.
  const double expected = double(model::partition(ad).trainable) / double(model::partition(full).total);
  const double ratio = double(fs::file_size(dir / "ad.bin")) / double(fs::file_size(dir / "full.bin"));
  CHECK(ratio < 0.35);
  CHECK(std::abs(ratio - expected) < 0.01);
  fs::remove_all(dir);
}

TEST_CASE("optimizer tensor files roundtrip") {
  const fs::path dir = scratch_dir();
  const std::vector<nn::Tensor> ts{nn::Tensor({2, 3}, std::vector<double>{1e-300, -2, 3.5, 0.1, 7, 8}),
                                   nn::Tensor({1}, std::vector<double>{std::numbers::pi})};
  io::save_tensors(dir / "t.bin", ts);
  CHECK(io::load_tensors(dir / "t.bin") == ts);
  fs::remove_all(dir);
}

TEST_CASE("dataset files are deterministic and exact") {
  const fs::path dir = scratch_dir();
  for (Problem p : {Problem::kTsp, Problem::kOp, Problem::kPctsp, Problem::kCvrp}) {
    auto inst = vrp::generate_instances(p, 9, 5, vrp::Distribution::kGaussian, 4);
    const io::DatasetHeader h{p, 9, 5, "gaussian", 4};
    io::save_dataset(dir / "a.ds", h, inst);
    io::save_dataset(dir / "b.ds", h, vrp::generate_instances(p, 9, 5, vrp::Distribution::kGaussian, 4));
    CHECK(slurp(dir / "a.ds") == slurp(dir / "b.ds"));
    io::DatasetHeader back;
    auto loaded = io::load_dataset(dir / "a.ds", &back);
    CHECK(back.problem == p);
    CHECK(back.seed == 4);
    REQUIRE(loaded.size() == inst.size());
    for (std::size_t i = 0; i < inst.size(); ++i) {
      REQUIRE(loaded[i].coords.size() == inst[i].coords.size());
      for (std::size_t j = 0; j < inst[i].coords.size(); ++j) {
        CHECK(loaded[i].coords[j].x == inst[i].coords[j].x);
        CHECK(loaded[i].coords[j].y == inst[i].coords[j].y);
      }
      CHECK(loaded[i].prizes == inst[i].prizes);
      CHECK(loaded[i].penalties == inst[i].penalties);
      CHECK(loaded[i].demands == inst[i].demands);
    }
  }
  std::ofstream(dir / "junk.ds") << "hello\n";
  CHECK(code_of([&] { io::load_dataset(dir / "junk.ds"); }) == ErrorCode::kParseError);
  fs::remove_all(dir);
}

TEST_CASE("key-value configuration") {
  auto c = io::Config::parse("# comment\n epochs = 3 \nlearning_rate=1e-4 # trailing\n\nname = a b\n");
  CHECK(c.get_int("epochs", 0) == 3);
  CHECK(c.get_double("learning_rate", 0) == 1e-4);
  CHECK(c.get("name", "") == "a b");
  CHECK(c.get_int("missing", 7) == 7);
  CHECK(io::Config::parse(c.dump()).values() == c.values());
  CHECK_THROWS_AS(io::Config::parse("just words\n"), Error);
  CHECK_THROWS_AS(c.get_int("name", 0), Error);
}

TEST_CASE("benchmark file costs in original units") {
  const io::BenchmarkInstance b = io::parse_cvrplib(kToy);
  CHECK(b.name == "toy4");
  CHECK(b.dimension == 4);
  CHECK(b.depot == 1);
  CHECK(b.demands[b.depot] == 0.0);
  const io::NormalizedInstance n = io::to_instance(b);
  CHECK(n.original_index[0] == 1);
  for (const auto& p : n.instance.coords) {
    CHECK(p.x >= 0.0);
    CHECK(p.x <= 1.0);
    CHECK(p.y >= 0.0);
    CHECK(p.y <= 1.0);
  }
  // Model indices: 0 depot (0,0), 1 (30,40), 2 (60,0), 3 (7,7).
  const std::vector<std::size_t> tour{0, 1, 2, 0, 3, 0};
  const double hand = 50.0 + 50.0 + 60.0 + 2.0 * std::sqrt(98.0);
  CHECK(std::abs(io::original_cost(b, n, tour, false) - hand) / hand < 1e-6);
  CHECK(io::original_cost(b, n, tour, true) == 50.0 + 50.0 + 60.0 + 2.0 * 10.0);
  CHECK(std::abs(vrp::make_tour(n.instance, tour).cost * b.scale - hand) / hand < 1e-9);
}

TEST_CASE("benchmark file errors and roundtrip") {
  const std::string toy = kToy;
  for (const std::string section : {"DIMENSION", "CAPACITY", "NODE_COORD_SECTION", "DEMAND_SECTION", "DEPOT_SECTION"}) {
    CAPTURE(section);
    // Drop the keyword line and, for sections, the numeric body under it.
    std::string text, line;
    std::istringstream in(toy);
    bool skipping = false;
    while (std::getline(in, line)) {
      if (line.rfind(section, 0) == 0) {
        skipping = section.find("SECTION") != std::string::npos;
        continue;
      }
      const bool numeric = !line.empty() && (std::isdigit(static_cast<unsigned char>(line[0])) || line[0] == '-');
      if (skipping && numeric) continue;
      skipping = false;
      text += line + "\n";
    }
    try {
      io::parse_cvrplib(text);
      FAIL("accepted a file without the section");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kParseError);
      CHECK(std::string(e.what()).find(section) != std::string::npos);
    }
  }
  std::string bad = toy;
  bad.replace(bad.find("3 4\n"), 4, "3 4.5\n");
  try {
    io::parse_cvrplib(bad);
    FAIL("accepted a fractional demand");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kParseError);
    CHECK(std::string(e.what()).find("line 15") != std::string::npos);
  }

  const io::BenchmarkInstance b = io::parse_cvrplib(toy);
  CHECK(io::parse_cvrplib(io::serialize_cvrplib(b)) == b);

  const fs::path dir = scratch_dir();
  std::ofstream(dir / "toy4.vrp") << toy;
  std::ofstream(dir / "toy4.sol") << "Route #1: 1 3\nRoute #2: 4\nCost 180\n";
  const auto loaded = io::load_cvrplib(dir / "toy4.vrp");
  REQUIRE(loaded.best_known.has_value());
  CHECK(*loaded.best_known == 180.0);
  fs::remove_all(dir);
}
