#include <gtest/gtest.h>

#include <cmath>
#include <cstring>

#include "ctn/depatch.hpp"
#include "ctn/gradcheck.hpp"
#include "ctn/rng.hpp"

using ctn::PatchEmbedder;
using ctn::PredictorConfig;
using ctn::PredictorVariant;
using ctn::Tensor;

namespace {

Tensor<double> random_tensor(std::vector<std::size_t> shape, ctn::Rng& rng, double scale = 1.0) {
  Tensor<double> t(std::move(shape));
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = scale * rng.normal();
  return t;
}

// Independent count: patches of size P at offsets 0, S, 2S, ... that fit in
// the padded length T + S.
std::size_t count_by_enumeration(std::size_t T, std::size_t P, std::size_t S) {
  std::size_t n = 0;
  for (std::size_t start = 0; start + P <= T + S; start += S) ++n;
  return n;
}

}  // namespace

TEST(PatchGrid, CountFormulaExamples) {
  EXPECT_EQ(ctn::patch_count(96, 16, 8), 12u);
  EXPECT_EQ(ctn::patch_count(336, 16, 8), 42u);
  EXPECT_EQ(ctn::patch_count(32, 32, 32), 2u);  // T == P == S
}

TEST(PatchGrid, CountMatchesEnumerationSweep) {
  for (std::size_t T = 1; T <= 512; T += (T < 40 ? 1 : 7)) {
    for (std::size_t P = 1; P <= T; P += (P < 20 ? 1 : 5)) {
      for (std::size_t S = 1; S <= P; S += (S < 12 ? 1 : 3)) {
        ASSERT_EQ(ctn::patch_count(T, P, S), count_by_enumeration(T, P, S))
            << "T=" << T << " P=" << P << " S=" << S;
      }
    }
  }
}

TEST(PatchGrid, CentersAndBoundsStayInsidePaddedSeries) {
  auto g = ctn::uniform_grid(96, 16, 8);
  EXPECT_EQ(g.count, 12u);
  EXPECT_DOUBLE_EQ(g.centers[0], 7.5);
  EXPECT_DOUBLE_EQ(g.centers[1], 15.5);
  // last fixed patch must fit in the padded series
  EXPECT_LE((g.count - 1) * g.stride + g.patch_len, g.padded_len());
}

TEST(PatchGrid, RejectsBadGeometry) {
  EXPECT_THROW(ctn::patch_count(8, 16, 4), ctn::ShapeError);  // P > T
  EXPECT_THROW(ctn::patch_count(32, 8, 16), ctn::ShapeError); // S > P
  EXPECT_THROW(ctn::patch_count(32, 8, 0), ctn::ShapeError);
}

TEST(DeformBounds, CenterScaleArithmetic) {
  // x_c=10, P=16, dc=1.5, dp=2 -> L=1.5, R=21.5
  auto b = ctn::deform_bounds_one(10.0, 16.0, 1.5, 2.0, 64.0);
  EXPECT_DOUBLE_EQ(b.left, 1.5);
  EXPECT_DOUBLE_EQ(b.right, 21.5);
  EXPECT_FALSE(b.left_clamped);
  EXPECT_FALSE(b.right_at_floor || b.right_at_ceil);
}

TEST(DeformBounds, ZeroDeformationIsUniformPatch) {
  auto b = ctn::deform_bounds_one(23.5, 16.0, 0.0, 0.0, 104.0);
  EXPECT_DOUBLE_EQ(b.left, 23.5 - 8.0);
  EXPECT_DOUBLE_EQ(b.right, 23.5 + 8.0);
}

TEST(DeformBounds, MinimumLengthClamp) {
  // dp = -P/2 + 0.5 gives P_new = 1 and R = L + 1 exactly.
  auto b = ctn::deform_bounds_one(10.0, 16.0, 0.0, -7.5, 64.0);
  EXPECT_DOUBLE_EQ(b.right - b.left, 1.0);
  // pushing further engages the floor clamp
  auto c = ctn::deform_bounds_one(10.0, 16.0, 0.0, -8.0, 64.0);
  EXPECT_DOUBLE_EQ(c.right - c.left, 1.0);
  EXPECT_TRUE(c.right_at_floor);
}

TEST(DeformBounds, ClampsAbsorbExtremeOffsets) {
  for (double dc : {-1e6, -35.0, 0.0, 35.0, 1e6}) {
    for (double dp : {-1e6, -9.0, 0.0, 9.0, 1e6}) {
      auto b = ctn::deform_bounds_one(7.5, 16.0, dc, dp, 104.0);
      EXPECT_GE(b.left, 0.0);
      EXPECT_LE(b.right, 103.0);
      EXPECT_LE(b.left, b.right);
    }
  }
}

TEST(DeformBounds, WideningIsMonotoneUntilClamp) {
  double prev = -1;
  bool clamped = false;
  for (double dp = 0.0; dp < 60.0; dp += 1.0) {
    auto b = ctn::deform_bounds_one(51.5, 16.0, 0.25, dp, 104.0);
    const double width = b.right - b.left;
    if (b.left_clamped || b.right_at_ceil) {
      clamped = true;
      EXPECT_GE(width, prev - 1e-12);  // still never shrinks below reach
      break;
    }
    EXPECT_GT(width, prev);
    prev = width;
  }
  EXPECT_TRUE(clamped);
}

TEST(Resample, MidpointInterpolation) {
  const double row[] = {0, 10, 20, 30};
  double out = 0;
  ctn::resample_row(row, 4, 1.0, 2.0, 1, &out);  // single sample at 1.5
  EXPECT_DOUBLE_EQ(out, 15.0);
}

TEST(Resample, GridAlignedEqualsRawSlice) {
  const double row[] = {5, 1, 4, 1, 5, 9, 2, 6};
  double out[4];
  ctn::resample_row(row, 8, 2.0, 5.0, 4, out);  // integer span of exactly 4 steps
  EXPECT_DOUBLE_EQ(out[0], 4.0);
  EXPECT_DOUBLE_EQ(out[1], 1.0);
  EXPECT_DOUBLE_EQ(out[2], 5.0);
  EXPECT_DOUBLE_EQ(out[3], 9.0);
}

TEST(Resample, ConstantSeriesStaysConstant) {
  std::vector<double> row(32, 4.25);
  double out[7];
  ctn::resample_row(row.data(), 32, 3.3, 19.8, 7, out);
  for (double v : out) EXPECT_DOUBLE_EQ(v, 4.25);
}

TEST(Resample, ExactOnLinearRamp) {
  std::vector<double> row(64);
  for (std::size_t t = 0; t < 64; ++t) row[t] = 0.5 * double(t) - 3.0;
  ctn::Rng rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    const double L = rng.uniform(0.0, 40.0);
    const double R = L + rng.uniform(0.5, 22.0);
    const std::size_t P = 2 + rng.below(9);
    std::vector<double> out(P);
    ctn::resample_row(row.data(), 64, L, R, P, out.data());
    for (std::size_t j = 0; j < P; ++j) {
      const double pos = L + (R - L) * double(j) / double(P - 1);
      EXPECT_NEAR(out[j], 0.5 * pos - 3.0, 1e-12);
    }
  }
}

TEST(Predictor, FreshInitEmitsZeroOffsets) {
  for (auto variant : {PredictorVariant::Conv, PredictorVariant::ConvConv,
                       PredictorVariant::Mlp, PredictorVariant::Uniform}) {
    PredictorConfig cfg;
    cfg.variant = variant;
    PatchEmbedder<double> emb(2, 64, 16, 8, 8, cfg, 99);
    ctn::Rng rng(18);
    Tensor<double> patches = random_tensor({6, 2, 16}, rng);
    auto d = emb.predict_deform(patches);
    for (double v : d.delta_c) EXPECT_EQ(v, 0.0);
    for (double v : d.delta_p) EXPECT_EQ(v, 0.0);
  }
}

TEST(Predictor, HeadBiasPassesThrough) {
  PredictorConfig cfg;
  cfg.variant = PredictorVariant::ConvConv;
  PatchEmbedder<double> emb(1, 64, 16, 8, 8, cfg, 7);
  emb.head().b.value[0] = 0.5;
  emb.head().b.value[1] = 1.0;
  ctn::Rng rng(19);
  Tensor<double> patches = random_tensor({5, 1, 16}, rng);
  auto d = emb.predict_deform(patches);
  for (double v : d.delta_c) EXPECT_DOUBLE_EQ(v, 0.5);
  for (double v : d.delta_p) EXPECT_DOUBLE_EQ(v, 1.0);
}

TEST(Embedder, ZeroInitHeadMatchesUniformBitwise) {
  ctn::Rng rng(20);
  for (auto variant : {PredictorVariant::Conv, PredictorVariant::ConvConv,
                       PredictorVariant::Mlp}) {
    PredictorConfig learned;
    learned.variant = variant;
    PredictorConfig uniform;
    uniform.variant = PredictorVariant::Uniform;
    // Same master seed: per-component streams make the projections identical.
    PatchEmbedder<double> a(2, 96, 16, 8, 12, learned, 555);
    PatchEmbedder<double> b(2, 96, 16, 8, 12, uniform, 555);
    for (int trial = 0; trial < 10; ++trial) {
      Tensor<double> x = random_tensor({2, 2, 96}, rng);
      Tensor<double> ya = a.forward(x);
      Tensor<double> yb = b.forward(x);
      ASSERT_EQ(0, std::memcmp(ya.data(), yb.data(), sizeof(double) * ya.numel()));
    }
  }
}

TEST(Embedder, PointwiseTokenizationPicksRawPoints) {
  // P = 1, S = 1: every token is one series point; projection with identity
  // row recovers it.
  PredictorConfig cfg;
  cfg.variant = PredictorVariant::Uniform;
  PatchEmbedder<double> emb(1, 8, 1, 1, 1, cfg, 3);
  emb.projection().w.value.fill(1.0);
  emb.projection().b.value.zero();
  Tensor<double> x({1, 1, 8}, {3, 1, 4, 1, 5, 9, 2, 6});
  Tensor<double> y = emb.forward(x);
  ASSERT_EQ(y.extent(2), 9u);  // N = (8-1)/1 + 2
  // interior tokens are the raw points; the first one is edge-interpolated
  // because the clamp keeps R at least one step past L
  EXPECT_DOUBLE_EQ(y.at3(0, 0, 0), 0.5 * (x[0] + x[1]));
  for (std::size_t n = 1; n < 8; ++n) EXPECT_DOUBLE_EQ(y.at3(0, 0, n), x[n]);
  EXPECT_DOUBLE_EQ(y.at3(0, 0, 8), x[7]);  // padded tail replicates the last value
}

TEST(Embedder, ZeroProjectionGivesZeroEmbedding) {
  PredictorConfig cfg;
  PatchEmbedder<double> emb(2, 64, 16, 8, 6, cfg, 1);
  emb.projection().w.value.zero();
  emb.projection().b.value.zero();
  ctn::Rng rng(21);
  Tensor<double> y = emb.forward(random_tensor({1, 2, 64}, rng));
  for (std::size_t i = 0; i < y.numel(); ++i) EXPECT_DOUBLE_EQ(y[i], 0.0);
}

TEST(Embedder, OutputShapeContract) {
  PredictorConfig cfg;
  PatchEmbedder<double> emb(3, 128, 16, 8, 24, cfg, 5);
  ctn::Rng rng(22);
  Tensor<double> y = emb.forward(random_tensor({4, 3, 128}, rng));
  EXPECT_EQ(y.extent(0), 4u);
  EXPECT_EQ(y.extent(1), 24u);
  EXPECT_EQ(y.extent(2), 16u);  // floor(112/8)+2
  EXPECT_THROW(emb.forward(random_tensor({1, 2, 128}, rng)), ctn::ShapeError);
}

TEST(Embedder, GradCheckThroughDeformationAndInterpolation) {
  ctn::Rng rng(23);
  for (auto variant : {PredictorVariant::Conv, PredictorVariant::ConvConv,
                       PredictorVariant::Mlp}) {
    PredictorConfig cfg;
    cfg.variant = variant;
    PatchEmbedder<double> emb(2, 32, 8, 4, 6, cfg, 77);
    // nudge the head off zero so deformation gradients are live
    for (std::size_t i = 0; i < emb.head().w.value.numel(); ++i)
      emb.head().w.value[i] = 0.02 * rng.normal();
    emb.head().b.value[0] = 0.31;
    emb.head().b.value[1] = 0.17;

    Tensor<double> x = random_tensor({2, 2, 32}, rng);
    Tensor<double> co = random_tensor({2, 6, 8}, rng);
    auto loss = [&]() {
      Tensor<double> y = emb.forward(x);
      double s = 0;
      for (std::size_t i = 0; i < y.numel(); ++i) s += y[i] * co[i];
      return s;
    };
    loss();
    ctn::StateDict<double> sd;
    emb.collect_state("emb", sd);
    sd.zero_grad();
    loss();
    Tensor<double> gx = emb.backward(co);
    std::vector<ctn::GradCheckItem> items;
    for (auto& [name, p] : sd.params)
      items.push_back({name, p->value.data(), p->grad.data(), p->value.numel()});
    items.push_back({"x", x.data(), gx.data(), x.numel()});
    auto rep = ctn::grad_check(loss, items, 1e-5, 48, 0xbee5);
    EXPECT_LE(rep.max_rel_err, 1e-4) << to_string(variant);
  }
}

TEST(Embedder, PerChannelDeformationGradCheck) {
  ctn::Rng rng(24);
  PredictorConfig cfg;
  cfg.variant = PredictorVariant::Conv;
  cfg.per_channel = true;
  PatchEmbedder<double> emb(2, 32, 8, 4, 6, cfg, 78);
  for (std::size_t i = 0; i < emb.head().w.value.numel(); ++i)
    emb.head().w.value[i] = 0.03 * rng.normal();
  Tensor<double> x = random_tensor({1, 2, 32}, rng);
  Tensor<double> co = random_tensor({1, 6, 8}, rng);
  auto loss = [&]() {
    Tensor<double> y = emb.forward(x);
    double s = 0;
    for (std::size_t i = 0; i < y.numel(); ++i) s += y[i] * co[i];
    return s;
  };
  loss();
  ctn::StateDict<double> sd;
  emb.collect_state("emb", sd);
  sd.zero_grad();
  loss();
  Tensor<double> gx = emb.backward(co);
  std::vector<ctn::GradCheckItem> items;
  for (auto& [name, p] : sd.params)
    items.push_back({name, p->value.data(), p->grad.data(), p->value.numel()});
  items.push_back({"x", x.data(), gx.data(), x.numel()});
  auto rep = ctn::grad_check(loss, items, 1e-5, 48, 0xfeed);
  EXPECT_LE(rep.max_rel_err, 1e-4);
}

TEST(Embedder, PerChannelBoundsDifferAcrossChannels) {
  PredictorConfig cfg;
  cfg.variant = PredictorVariant::Conv;
  cfg.per_channel = true;
  PatchEmbedder<double> emb(2, 32, 8, 4, 6, cfg, 79);
  ctn::Rng rng(25);
  for (std::size_t i = 0; i < emb.head().w.value.numel(); ++i)
    emb.head().w.value[i] = 0.5 * rng.normal();
  Tensor<double> x = random_tensor({1, 2, 32}, rng);
  emb.forward(x);
  const auto& bounds = emb.last_bounds();
  ASSERT_EQ(bounds.size(), 2u * 8u);  // N=8 patches, 2 channels
  bool any_differ = false;
  for (std::size_t n = 0; n < 8; ++n)
    any_differ |= bounds[n * 2].left != bounds[n * 2 + 1].left;
  EXPECT_TRUE(any_differ);
}
