#include <gtest/gtest.h>

#include <cmath>

#include "vistab/attention.hpp"
#include "vistab/memory.hpp"
#include "vistab/numerics/grad_check.hpp"

using namespace vistab;

namespace {

Tensord random(Shape s, Rng& rng, double scale = 1.0) {
  Tensord t(std::move(s));
  for (auto& v : t.data()) v = scale * rng.normal();
  return t;
}

// Independent loop oracle for the multiplicative and additive forward pass.
Tensord oracle_attend(const Tensord& x, const Tensord& h, const AttentionParams<double>& p, bool multiplicative,
                      Tensord* map_out = nullptr) {
  auto proj = [](const Tensord& a, const Tensord& w) {
    Tensord out({a.rows(), w.cols()});
    for (std::size_t i = 0; i < a.rows(); ++i)
      for (std::size_t j = 0; j < w.cols(); ++j)
        for (std::size_t k = 0; k < a.cols(); ++k) out(i, j) += a(i, k) * w(k, j);
    return out;
  };
  auto combine = [&](const Tensord& wx, const Tensord& wh) {
    auto a = proj(x, wx), b = proj(h, wh);
    for (std::size_t k = 0; k < a.size(); ++k) a[k] = multiplicative ? a[k] * b[k] : a[k] + b[k];
    return a;
  };
  auto q = combine(p.w_xq.value(), p.w_hq.value());
  auto k = combine(p.w_xk.value(), p.w_hk.value());
  auto v = combine(p.w_xv.value(), p.w_hv.value());
  const std::size_t n = 4, d = x.cols();
  Tensord a({n, n});
  for (std::size_t i = 0; i < n; ++i) {
    double denom = 0;
    std::vector<double> e(n);
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0;
      for (std::size_t c = 0; c < d; ++c) s += q(i, c) * k(j, c);
      e[j] = s;
    }
    const double hi = *std::max_element(e.begin(), e.end());
    for (auto& v : e) denom += (v = std::exp(v - hi));
    for (std::size_t j = 0; j < n; ++j) a(i, j) = e[j] / denom;
  }
  if (map_out) *map_out = a;
  Tensord z = x;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < d; ++c)
      for (std::size_t j = 0; j < n; ++j) z(i, c) += a(i, j) * v(j, c);
  return z;
}

AttentionOutput<double> run(AttentionParams<double>& p, const Tensord& x, const Tensord& h,
                            std::vector<ForceSpec> forces = {}) {
  static Tape<double>* keep = nullptr;
  delete keep;
  keep = new Tape<double>;
  return attend(*keep, p, keep->constant(x), keep->constant(h), forces);
}

void expect_row_stochastic(const Tensord& a, double tol = 1e-6) {
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double s = 0;
    for (std::size_t j = 0; j < a.cols(); ++j) {
      EXPECT_GE(a(i, j), 0.0);
      s += a(i, j);
    }
    EXPECT_NEAR(s, 1.0, tol);
  }
}

AttentionMap<double> random_map(Rng& rng) {
  Tensord a({4, 4});
  for (auto& v : a.data()) v = rng.uniform(0.01, 1.0);
  for (std::size_t i = 0; i < 4; ++i) {
    double s = 0;
    for (std::size_t j = 0; j < 4; ++j) s += a(i, j);
    for (std::size_t j = 0; j < 4; ++j) a(i, j) /= s;
  }
  return {a};
}

}  // namespace

TEST(Embed, OneHotSlices) {
  Rng rng(1);
  auto f = random(Shape{4, 128}, rng);
  auto x = embed(f, 0);
  EXPECT_EQ(x.cols(), 140u);
  EXPECT_EQ(model_width(128, 8), 140u);
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(x(i, 128 + j), i == j ? 1.0 : 0.0);
    for (std::size_t t = 0; t < 8; ++t) EXPECT_EQ(x(i, 132 + t), t == 0 ? 1.0 : 0.0);
  }
  // Patch 2 at t=0: position e2 and time e0.
  EXPECT_EQ(x(2, 130), 1.0);
  EXPECT_EQ(x(2, 132), 1.0);
  auto y = embed(f, 3);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 140; ++j)
      if (j < 132) {
        EXPECT_EQ(x(i, j), y(i, j));
      }
  EXPECT_NE(x(0, 132), y(0, 132));
  EXPECT_THROW(embed(f, 7), ConfigError);
  EXPECT_THROW(embed(random(Shape{3, 128}, rng), 0), DimensionError);
}

TEST(Attend, MatchesLoopOracle) {
  for (auto variant : {FeedbackVariant::Multiplicative, FeedbackVariant::Additive}) {
    Rng rng(3);
    AttentionParams<double> p({.variant = variant}, 10, 6, rng);
    auto x = random(Shape{4, 10}, rng), h = random(Shape{4, 6}, rng, 0.5);
    Tensord map;
    auto expect = oracle_attend(x, h, p, variant == FeedbackVariant::Multiplicative, &map);
    auto out = run(p, x, h);
    for (std::size_t k = 0; k < expect.size(); ++k) EXPECT_NEAR(out.z.value()[k], expect[k], 1e-12);
    for (std::size_t k = 0; k < 16; ++k) EXPECT_NEAR(out.map.a[k], map[k], 1e-12);
  }
}

TEST(Attend, AllOnesMemoryProjectionReducesToPlainAttention) {
  Rng rng(4);
  AttentionParams<double> p({}, 8, 4, rng);
  for (auto* w : {&p.w_hq, &p.w_hk, &p.w_hv}) w->value().fill(1.0);
  Tensord h({4, 4}, 0.25);  // each row of H W_H is all ones
  auto x = random(Shape{4, 8}, rng);
  auto with_memory = run(p, x, h).z.value();
  // Memory-free reference: additive variant with zero memory projections.
  AttentionParams<double> plain = p;
  plain.cfg.variant = FeedbackVariant::Additive;
  for (auto* w : {&plain.w_hq, &plain.w_hk, &plain.w_hv}) w->value().fill(0.0);
  auto reference = run(plain, x, h).z.value();
  for (std::size_t k = 0; k < reference.size(); ++k) EXPECT_NEAR(with_memory[k], reference[k], 1e-12);
}

TEST(Attend, ZeroMemoryGivesUniformMap) {
  Rng rng(5);
  AttentionParams<double> p({}, 8, 4, rng);
  auto out = run(p, random(Shape{4, 8}, rng), reset<double>(4).h);
  for (double v : out.map.a.data()) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(Attend, IdentityRoutingAddsOwnValue) {
  Rng rng(6);
  AttentionParams<double> p({}, 8, 4, rng);
  auto x = random(Shape{4, 8}, rng), h = random(Shape{4, 4}, rng);
  std::array<std::array<double, 4>, 4> eye{};
  for (int i = 0; i < 4; ++i) eye[i][i] = 1.0;
  auto out = run(p, x, h, {ForceSpec::explicit_map(eye)});
  auto v = matmul(x, p.w_xv.value());
  auto hv = matmul(h, p.w_hv.value());
  for (std::size_t k = 0; k < x.size(); ++k) EXPECT_NEAR(out.z.value()[k], x[k] + v[k] * hv[k], 1e-12);
}

TEST(Attend, NoOpOverrideLeavesOutputUnchanged) {
  Rng rng(7);
  AttentionParams<double> p({}, 8, 4, rng);
  auto x = random(Shape{4, 8}, rng), h = random(Shape{4, 4}, rng);
  auto natural = run(p, x, h);
  std::array<std::array<double, 4>, 4> m{};
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) m[i][j] = natural.map.a(i, j);
  auto zn = natural.z.value();
  auto forced = run(p, x, h, {ForceSpec::explicit_map(m)});
  for (std::size_t k = 0; k < zn.size(); ++k) EXPECT_NEAR(forced.z.value()[k], zn[k], 1e-12);
}

TEST(Attend, LargeLogitScaleIsWinnerTakeMost) {
  Rng rng(8);
  AttentionParams<double> p({}, 8, 4, rng);
  AttentionParams<double> sharp = p;
  sharp.cfg.logit_scale = 50.0;
  int decisive = 0;
  for (int trial = 0; trial < 50; ++trial) {
    auto x = random(Shape{4, 8}, rng), h = random(Shape{4, 4}, rng);
    auto base = run(p, x, h).map.a;
    auto out = run(sharp, x, h).map.a;
    for (std::size_t i = 0; i < 4; ++i) {
      // Logit gap between the top two entries, recovered from the unscaled map.
      std::vector<double> l;
      for (std::size_t j = 0; j < 4; ++j) l.push_back(std::log(base(i, j)));
      std::sort(l.rbegin(), l.rend());
      const double gap = l[0] - l[1];
      auto row = out.row_span(i);
      const double top = *std::max_element(row.begin(), row.end());
      EXPECT_GE(top, 1.0 / (1.0 + 3.0 * std::exp(-50.0 * gap)) - 1e-9);
      if (gap >= 0.2) {
        ++decisive;
        EXPECT_GT(top, 0.999);
      }
    }
  }
  EXPECT_GT(decisive, 50);
}

TEST(Attend, ScaledLogitsDivideBySqrtWidth) {
  Rng rng(9);
  AttentionParams<double> p({}, 9, 4, rng);
  auto x = random(Shape{4, 9}, rng), h = random(Shape{4, 4}, rng);
  auto plain = run(p, x, h).map.a;
  AttentionParams<double> scaled = p;
  scaled.cfg.logit_scale = 1.0 / 3.0;
  auto by_scale = run(scaled, x, h).map.a;
  scaled.cfg.logit_scale = 1.0;
  scaled.cfg.scaled = true;
  auto by_flag = run(scaled, x, h).map.a;
  for (std::size_t k = 0; k < 16; ++k) EXPECT_NEAR(by_flag[k], by_scale[k], 1e-14);
  EXPECT_NE(plain, by_flag);
}

TEST(Attend, TokensVariantRowsAreStochastic) {
  Rng rng(10);
  AttentionParams<double> p({.variant = FeedbackVariant::Tokens}, 8, 5, rng);
  for (int trial = 0; trial < 20; ++trial) {
    auto x = random(Shape{4, 8}, rng), h = random(Shape{4, 5}, rng);
    expect_row_stochastic(run(p, x, h).map.a);
    expect_row_stochastic(run(p, x, h, {ForceSpec::zero_column(2)}).map.a);
    auto mx = run(p, x, h, {ForceSpec::max_column(1)}).map;
    EXPECT_NEAR(mx.alpha()[1], 4.0, 1e-12);
  }
}

TEST(Attend, ShapeErrors) {
  Rng rng(11);
  AttentionParams<double> p({}, 8, 4, rng);
  EXPECT_THROW(run(p, random(Shape{4, 7}, rng), random(Shape{4, 4}, rng)), DimensionError);
  EXPECT_THROW(run(p, random(Shape{4, 8}, rng), random(Shape{4, 3}, rng)), DimensionError);
  EXPECT_THROW(run(p, random(Shape{4, 8}, rng), random(Shape{4, 4}, rng),
                   {ForceSpec::zero_column(0), ForceSpec::zero_column(1), ForceSpec::zero_column(2),
                    ForceSpec::zero_column(3)}),
               PerturbationError);
}

TEST(Attend, ZeroColumnMaskMatchesRenormalizedMap) {
  Rng rng(12);
  for (auto variant : {FeedbackVariant::Multiplicative, FeedbackVariant::Additive}) {
    AttentionParams<double> p({.variant = variant}, 8, 4, rng);
    auto x = random(Shape{4, 8}, rng), h = random(Shape{4, 4}, rng);
    auto natural = run(p, x, h).map;
    auto expected = force_attention(natural, ForceSpec::zero_column(3));
    auto masked = run(p, x, h, {ForceSpec::zero_column(3)}).map;
    for (std::size_t k = 0; k < 16; ++k) EXPECT_NEAR(masked.a[k], expected.a[k], 1e-12);
    for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(masked.a(i, 3), 0.0);
  }
}

TEST(ForceAttention, PaperExamples) {
  Rng rng(13);
  auto m = random_map(rng);
  auto u = force_attention(m, ForceSpec::uniform());
  for (double v : u.a.data()) EXPECT_EQ(v, 0.25);

  auto mx = force_attention(m, ForceSpec::max_column(0));
  EXPECT_EQ(mx.alpha()[0], 4.0);
  EXPECT_EQ(mx.share()[0], 1.0);
  for (int j = 1; j < 4; ++j) EXPECT_EQ(mx.alpha()[j], 0.0);

  auto z = force_attention(m, ForceSpec::zero_column(0));
  expect_row_stochastic(z.a, 1e-12);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(z.a(i, 0), 0.0);
}

TEST(ForceAttention, SetAlphaRedistributesProportionally) {
  Rng rng(14);
  auto m = random_map(rng);
  auto f = force_attention(m, ForceSpec::set_alpha(2, 3.0));
  EXPECT_NEAR(f.alpha()[2], 3.0, 1e-12);
  expect_row_stochastic(f.a, 1e-12);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_NEAR(f.a(i, 2), 0.75, 1e-15);
    EXPECT_NEAR(f.a(i, 0) / f.a(i, 1), m.a(i, 0) / m.a(i, 1), 1e-12);
  }
  EXPECT_THROW(force_attention(m, ForceSpec::set_alpha(2, 4.5)), PerturbationError);
  EXPECT_THROW(force_attention(m, ForceSpec::zero_column(4)), PerturbationError);
}

TEST(ForceAttention, EveryOutputIsRowStochastic) {
  Rng rng(15);
  for (int trial = 0; trial < 200; ++trial) {
    auto m = random_map(rng);
    const int j = int(rng.below(4));
    for (auto spec : {ForceSpec::uniform(), ForceSpec::zero_column(j), ForceSpec::max_column(j),
                      ForceSpec::set_alpha(j, rng.uniform(0, 4))})
      expect_row_stochastic(force_attention(m, spec).a);
  }
}

TEST(ForceAttention, AllZeroExplicitRowFails) {
  std::array<std::array<double, 4>, 4> bad{};
  bad[0] = {1, 0, 0, 0};
  AttentionMap<double> m{Tensord({4, 4}, 0.25)};
  EXPECT_THROW(force_attention(m, ForceSpec::explicit_map(bad)), PerturbationError);
}

TEST(ParseForce, Grammar) {
  auto a = parse_force("max:S1@t=5");
  EXPECT_EQ(a.spec.kind, ForceSpec::Kind::MaxColumn);
  EXPECT_EQ(a.spec.column, 0);
  EXPECT_TRUE(a.applies(5));
  EXPECT_FALSE(a.applies(4));
  auto u = parse_force("uniform@t=*");
  EXPECT_EQ(u.spec.kind, ForceSpec::Kind::Uniform);
  for (int t = 0; t < 7; ++t) EXPECT_TRUE(u.applies(t));
  auto z = parse_force("zero:S4@t>=5");
  EXPECT_EQ(z.spec.column, 3);
  EXPECT_FALSE(z.applies(4));
  EXPECT_TRUE(z.applies(6));
  auto s = parse_force("alpha:S2=3.5@t<=2");
  EXPECT_EQ(s.spec.kind, ForceSpec::Kind::SetAlpha);
  EXPECT_EQ(s.spec.value, 3.5);
  EXPECT_TRUE(s.applies(0));
  EXPECT_FALSE(s.applies(3));
  for (const char* bad : {"max@t=5", "uniform:S1@t=1", "zero:S5@t=1", "max:S1@t=9", "alpha:S1@t=*", "foo"})
    EXPECT_THROW(parse_force(bad), ConfigError) << bad;
  std::vector<ForceRule> rules{z, u};
  EXPECT_EQ(active_forces(rules, 3).size(), 1u);
  EXPECT_EQ(active_forces(rules, 5).size(), 2u);
}

TEST(Attend, GradCheckAllVariants) {
  for (auto variant : {FeedbackVariant::Multiplicative, FeedbackVariant::Additive, FeedbackVariant::Tokens}) {
    Rng rng(16);
    AttentionParams<double> p({.variant = variant}, 6, 3, rng);
    Parameter<double> x("x", random(Shape{4, 6}, rng)), h("h", random(Shape{4, 3}, rng));
    auto w = random(Shape{4, 6}, rng);
    ParamList<double> ps{&x, &h};
    p.collect(ps);
    auto block = [&](Tape<double>& tape) {
      return weighted_sum(attend(tape, p, tape.param(x), tape.param(h)).z, w);
    };
    auto r = grad_check(std::function<Var<double>(Tape<double>&)>(block), ps, 1e-6);
    EXPECT_LT(r.max_relative_error, 1e-4) << to_string(variant) << ' ' << r.worst;
    // With a zero-column mask the gradient also has to match.
    auto masked = [&](Tape<double>& tape) {
      const std::vector<ForceSpec> f{ForceSpec::zero_column(1)};
      return weighted_sum(attend(tape, p, tape.param(x), tape.param(h), f).z, w);
    };
    r = grad_check(std::function<Var<double>(Tape<double>&)>(masked), ps, 1e-6);
    EXPECT_LT(r.max_relative_error, 1e-4) << to_string(variant) << " masked " << r.worst;
  }
}
