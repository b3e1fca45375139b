#include <Eigen/Dense>

#include <cmath>

#include "doctest.h"
#include "grad_check.hpp"
#include "xpl/core/error.hpp"
#include "xpl/model/adapters.hpp"
#include "xpl/nn/ops.hpp"

using namespace xpl;
using namespace xpl::model;
using vrp::Problem;

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

nn::Tensor filled(nn::Shape shape, unsigned seed, double lo = -1, double hi = 1) {
  return make_param("x", shape, seed, lo, hi).value;
}

std::size_t affine_size(const PolicyModel& m, const AffineRef& a) {
  return m.param(a.weight).value.size() + (a.bias ? m.param(*a.bias).value.size() : 0);
}

}  // namespace

TEST_CASE("inside adapter with zero parameters outputs zero") {
  auto m = assemble(Problem::kOp, tiny(), AdapterMode::kInside, 2);
  const InsideRef& ad = m.layout().inside[0];
  for (const AffineRef* a : {&ad.down, &ad.up}) {
    m.param(a->weight).value.fill(0.0);
    m.param(*a->bias).value.fill(0.0);
  }
  nn::Tape tape(false);
  Forward f(m, tape);
  nn::Tensor y = inside_forward(f, ad, tape.constant(filled({3, 8}, 1))).value();
  for (double v : y.values()) CHECK(v == 0.0);
}

TEST_CASE("inside adapter with truncation and expansion maps") {
  auto m = assemble(Problem::kOp, tiny(), AdapterMode::kInside, 2);
  const InsideRef& ad = m.layout().inside[1];
  nn::Tensor& down = m.param(ad.down.weight).value;  // (8, 4)
  nn::Tensor& up = m.param(ad.up.weight).value;      // (4, 8)
  REQUIRE(down.shape() == nn::Shape{8, 4});
  down.fill(0.0);
  up.fill(0.0);
  for (std::size_t i = 0; i < 4; ++i) down.at(i, i) = up.at(i, i) = 1.0;
  m.param(*ad.down.bias).value.fill(0.0);
  m.param(*ad.up.bias).value.fill(0.0);
  const nn::Tensor h = filled({5, 8}, 3, 0.0, 2.0);
  nn::Tape tape(false);
  Forward f(m, tape);
  nn::Tensor y = inside_forward(f, ad, tape.constant(h)).value();
  for (std::size_t r = 0; r < 5; ++r)
    for (std::size_t c = 0; c < 8; ++c) CHECK(y.at(r, c) == doctest::Approx(c < 4 ? h.at(r, c) : 0.0).epsilon(1e-12));
}

TEST_CASE("inside adapter size at the default width") {
  auto m = assemble(Problem::kOp, BackboneConfig::am(), AdapterMode::kInside, 1);
  REQUIRE(m.layout().inside.size() == 6);
  for (const InsideRef& a : m.layout().inside) CHECK(affine_size(m, a.down) + affine_size(m, a.up) == 16576);
  CHECK(partition(m)[ParamGroup::kAdapters].count == 99456);
}

TEST_CASE("side adapter combine, count and batch requirement") {
  nn::Tape tape(false);
  const nn::Tensor e = filled({2, 4, 8}, 5);
  nn::Var zero = tape.constant(nn::Tensor({2, 4, 8}));
  CHECK(side_combine(tape.constant(e), zero).value() == e);

  // Trainable total with heads, against "332K vs. 199K".
  auto op = assemble(Problem::kOp, BackboneConfig::am(), AdapterMode::kSide, 1);
  const double side = static_cast<double>(partition(op).trainable);
  CHECK(std::abs(side - 332e3) / 332e3 < 0.02);

  auto m = assemble(Problem::kOp, tiny(), AdapterMode::kSide, 2);
  nn::Tape t2;
  Forward f(m, t2, true);
  CHECK_THROWS_AS(side_forward(f, *m.layout().side, t2.constant(filled({1, 4, 8}, 1)), 1), Error);
  try {
    side_forward(f, *m.layout().side, t2.constant(filled({1, 4, 8}, 1)), 1);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kInvalidState);
  }
}

TEST_CASE("side adapter first-stage gradient") {
  for (auto prof : {Profile::kAm, Profile::kPomo}) {
    auto m = assemble(Problem::kCvrp, tiny(prof), AdapterMode::kSide, 7);
    const SideRef& sd = *m.layout().side;
    const nn::Tensor h0 = filled({2, 5, 8}, 11);
    std::vector<double> w(2 * 5 * 8);
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::sin(0.7 * i + 0.2);
    std::vector<nn::Param*> ps{&m.param(sd.stage0.weight)};
    if (sd.depot_stage0) ps.push_back(&m.param(sd.depot_stage0->weight));
    const double err = max_grad_error(ps, [&](nn::Tape& t) {
      Forward f(m, t, true);
      return nn::weighted_sum(side_forward(f, sd, t.constant(h0), 2), w);
    });
    CHECK(err < 1e-4);
  }
}

TEST_CASE("low-rank adapter is transparent at initialization") {
  auto m = assemble(Problem::kTsp, tiny(), AdapterMode::kLora, 3);
  const LoraLayerRef& lr = m.layout().lora[0];
  const EncoderLayerRef& layer = m.layout().layers[0];
  nn::Tape tape(false);
  Forward f(m, tape);
  const std::pair<std::size_t, LoraRef> pairs[] = {{layer.attention.query, lr.query},
                                                   {layer.attention.key, lr.key},
                                                   {layer.attention.value, lr.value},
                                                   {layer.attention.out, lr.out},
                                                   {m.layout().coord.weight, *m.layout().coord_lora}};
  for (const auto& [w, ad] : pairs) {
    const nn::Tensor& frozen = m.param(w).value;
    nn::Tensor eff = lora_weight(f, f.param(w), ad).value();
    double worst = 0.0;
    for (std::size_t i = 0; i < eff.size(); ++i) worst = std::max(worst, std::abs(eff[i] - frozen[i]));
    CHECK(worst == 0.0);
  }
}

TEST_CASE("plain low-rank adapter: size, initial transparency, rank") {
  const std::size_t d = 128, r = kLoraRank;
  nn::Tape tape;
  const nn::Tensor w = filled({d, d}, 1), h = filled({3, d}, 2);
  nn::Tensor down = filled({d, r}, 3), up({r, d});
  CHECK(down.size() + up.size() == 512);
  nn::Tensor y0 = lora_forward(tape.constant(w), tape.constant(down), tape.constant(up), tape.constant(h)).value();
  nn::Tensor yw = nn::matmul(tape.constant(h), tape.constant(w)).value();
  for (std::size_t i = 0; i < y0.size(); ++i) CHECK(y0[i] == yw[i]);

  // The correction applied to the identity is the update matrix itself.
  up = filled({r, d}, 4);
  nn::Tensor eye({d, d});
  for (std::size_t i = 0; i < d; ++i) eye.at(i, i) = 1.0;
  nn::Tensor delta =
      lora_forward(tape.constant(nn::Tensor({d, d})), tape.constant(down), tape.constant(up), tape.constant(eye)).value();
  Eigen::MatrixXd m(d, d);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) m(i, j) = delta.at(i, j);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
  const auto& s = svd.singularValues();
  CHECK(s(1) > 1e-6);
  CHECK(s(2) < 1e-9 * s(0));
}

TEST_CASE("plain low-rank adapter gradient") {
  auto w = make_param("w", {4, 3}, 1), a = make_param("a", {4, 2}, 2), b = make_param("b", {2, 3}, 3);
  auto h = make_param("h", {5, 4}, 4);
  const double err = max_grad_error({&a, &b, &h}, [&](nn::Tape& t) {
    return nn::weighted_sum(lora_forward(t.parameter(w), t.parameter(a), t.parameter(b), t.parameter(h)),
                            std::vector<double>{1, -2, 3, .5, .25, 1, 2, -1, .7, .1, .3, -.4, 1, 1, 2});
  });
  CHECK(err < 1e-4);
}
