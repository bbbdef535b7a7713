#include <gtest/gtest.h>

#include "test_util.hpp"
#include "zestdiff/probe.hpp"

using namespace zestdiff;
using zdtest::rand_d;
using zdtest::values;

namespace {

LayerInfo layer(int index, int res, UNetPart part) {
  return {index, res, part, (part == UNetPart::encoder ? "enc" : "dec") + std::to_string(index) + "@" +
                                std::to_string(res)};
}

// Row-stochastic (res*res, N) map.
TensorD random_map(int res, int N, std::uint64_t seed) {
  return softmax(rand_d({static_cast<std::int64_t>(res) * res, N}, seed, -2.0, 2.0), 1);
}

AttentionRecord<double> record(LayerInfo info, int head, std::uint64_t seed, int N = 5) {
  return {info, head, -1, random_map(info.resolution, N, seed)};
}

SegmentSpec spec(int res, std::vector<std::vector<int>> tokens) {
  SegmentSpec s;
  s.resolution = res;
  for (size_t i = 0; i < tokens.size(); ++i) s.masks.push_back(BinaryMask::empty(res, res));
  s.token_sets = std::move(tokens);
  return s;
}

// Direct bilinear (corner aligned) sample of a res x res grid at output pixel (y, x) of side out.
double bilinear(const std::vector<double>& grid, int res, int out, int y, int x) {
  if (res == out) return grid[static_cast<size_t>(y * res + x)];
  const double sy = out > 1 ? y * (res - 1.0) / (out - 1.0) : 0.0;
  const double sx = out > 1 ? x * (res - 1.0) / (out - 1.0) : 0.0;
  const int y0 = static_cast<int>(sy), x0 = static_cast<int>(sx);
  const int y1 = std::min(y0 + 1, res - 1), x1 = std::min(x0 + 1, res - 1);
  const double fy = sy - y0, fx = sx - x0;
  auto g = [&](int a, int b) { return grid[static_cast<size_t>(a * res + b)]; };
  return (1 - fy) * ((1 - fx) * g(y0, x0) + fx * g(y0, x1)) + fy * ((1 - fx) * g(y1, x0) + fx * g(y1, x1));
}

}  // namespace

TEST(UpsampleToMax, SingleRecordAtMaxIsIdentity) {
  auto r = record(layer(0, 4, UNetPart::encoder), 0, 1, 3);
  auto out = upsample_to_max<double>({r});
  ASSERT_EQ(out.size(), 1u);
  ASSERT_EQ(out[0].shape(), (Shape{3, 4, 4}));
  const auto m = values(r.map), u = values(out[0]);
  for (int p = 0; p < 16; ++p)
    for (int n = 0; n < 3; ++n) EXPECT_EQ(u[static_cast<size_t>(n * 16 + p)], m[static_cast<size_t>(p * 3 + n)]);
}

TEST(UpsampleToMax, ConstantStaysConstant) {
  AttentionRecord<double> lo{layer(0, 2, UNetPart::encoder), 0, -1, TensorD::full({4, 4}, 0.25)};
  AttentionRecord<double> hi{layer(1, 8, UNetPart::decoder), 0, -1, TensorD::full({64, 4}, 0.25)};
  auto out = upsample_to_max<double>({lo, hi});
  ASSERT_EQ(out[0].shape(), (Shape{4, 8, 8}));
  for (double v : values(out[0])) EXPECT_NEAR(v, 0.25, 1e-12);
}

TEST(UpsampleToMax, BilinearHandExample) {
  // Token 0 holds [[0,1],[0,1]]; token 1 the complement so rows stay stochastic.
  auto map = TensorD::from_data({4, 2}, {0, 1, 1, 0, 0, 1, 1, 0});
  AttentionRecord<double> lo{layer(0, 2, UNetPart::encoder), 0, -1, map};
  AttentionRecord<double> hi{layer(1, 4, UNetPart::decoder), 0, -1, TensorD::full({16, 2}, 0.5)};
  auto out = upsample_to_max<double>({lo, hi});
  const auto u = values(out[0]);
  const double want[4] = {0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0};
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) EXPECT_NEAR(u[static_cast<size_t>(y * 4 + x)], want[x], 1e-12);
}

TEST(UpsampleToMax, EmptySelectionRejected) {
  EXPECT_THROW(upsample_to_max<double>({}), std::invalid_argument);
}

TEST(SegmentEstimates, SingleRecordSingleTokenIsThatMap) {
  auto r = record(layer(0, 4, UNetPart::encoder), 0, 3);
  auto est = segment_estimate<double>({r}, spec(4, {{2}}), LayerFilter::all);
  ASSERT_EQ(est.maps.shape(), (Shape{1, 4, 4}));
  const auto m = values(r.map), e = values(est.maps);
  for (int p = 0; p < 16; ++p) EXPECT_NEAR(e[static_cast<size_t>(p)], m[static_cast<size_t>(p * 5 + 2)], 1e-15);
}

TEST(SegmentEstimates, DuplicateRecordsMatchSingle) {
  auto r = record(layer(0, 4, UNetPart::encoder), 0, 4);
  auto s = spec(4, {{0, 1}, {3}});
  auto one = segment_estimate<double>({r}, s, LayerFilter::all);
  auto two = segment_estimate<double>({r, r}, s, LayerFilter::all);
  zdtest::expect_all_near(values(two.maps), values(one.maps), 1e-14);
}

TEST(SegmentEstimates, MatchesBruteForceTripleLoop) {
  const int N = 6;
  std::vector<AttentionRecord<double>> recs = {record(layer(0, 8, UNetPart::encoder), 0, 11, N),
                                               record(layer(1, 4, UNetPart::encoder), 1, 12, N),
                                               record(layer(2, 8, UNetPart::decoder), 0, 13, N)};
  auto s = spec(8, {{1, 4}, {0, 5}});
  auto est = segment_estimate<double>(recs, s, LayerFilter::all);
  const auto e = values(est.maps);
  for (size_t i = 0; i < 2; ++i) {
    for (int y = 0; y < 8; ++y) {
      for (int x = 0; x < 8; ++x) {
        double want = 0.0;
        for (const auto& r : recs) {
          const int res = r.layer.resolution;
          const auto m = values(r.map);
          for (int j : s.token_sets[i]) {
            std::vector<double> grid(static_cast<size_t>(res * res));
            for (int p = 0; p < res * res; ++p) grid[static_cast<size_t>(p)] = m[static_cast<size_t>(p * N + j)];
            want += bilinear(grid, res, 8, y, x);
          }
        }
        want /= static_cast<double>(recs.size());
        EXPECT_NEAR(e[i * 64 + static_cast<size_t>(y * 8 + x)], want, 1e-12);
      }
    }
  }
}

TEST(SegmentEstimates, EntriesInUnitInterval) {
  std::vector<AttentionRecord<double>> recs = {record(layer(0, 8, UNetPart::encoder), 0, 21),
                                               record(layer(1, 4, UNetPart::decoder), 1, 22)};
  auto est = segment_estimate<double>(recs, spec(8, {{0, 1, 2, 3, 4}, {1}}), LayerFilter::all);
  for (double v : values(est.maps)) {
    EXPECT_GE(v, -1e-12);
    EXPECT_LE(v, 1.0 + 1e-12);
  }
  // The full token set sums each row to one.
  for (int p = 0; p < 64; ++p) EXPECT_NEAR(values(est.maps)[static_cast<size_t>(p)], 1.0, 1e-12);
}

TEST(SegmentEstimates, GlobalIsWeightedMeanOfGroups) {
  std::vector<AttentionRecord<double>> recs = {record(layer(0, 8, UNetPart::encoder), 0, 31),
                                               record(layer(0, 8, UNetPart::encoder), 1, 32),
                                               record(layer(1, 4, UNetPart::decoder), 0, 33),
                                               record(layer(1, 4, UNetPart::decoder), 1, 34),
                                               record(layer(2, 8, UNetPart::decoder), 0, 35)};
  auto s = spec(8, {{0, 2}, {4}});
  auto global = segment_estimate<double>(recs, s, LayerFilter::all);
  for (auto avg : {Averaging::per_layer, Averaging::per_head}) {
    auto g = segment_estimates<double>(recs, s, avg, LayerFilter::all);
    ASSERT_EQ(g.groups.size(), avg == Averaging::per_head ? 5u : 3u);
    double wsum = 0.0;
    std::vector<double> mix(values(global.maps).size(), 0.0);
    for (size_t k = 0; k < g.groups.size(); ++k) {
      wsum += g.weights[k];
      const auto v = values(g.groups[k].maps);
      for (size_t i = 0; i < v.size(); ++i) mix[i] += g.weights[k] * v[i];
    }
    EXPECT_NEAR(wsum, 1.0, 1e-12);
    zdtest::expect_all_near(mix, values(global.maps), 1e-12);
  }
}

TEST(SegmentEstimates, LinearInTokenSets) {
  // The union of disjoint token sets gives the sum of their estimates.
  std::vector<AttentionRecord<double>> recs = {record(layer(0, 8, UNetPart::encoder), 0, 41),
                                               record(layer(1, 4, UNetPart::decoder), 0, 42)};
  auto est = segment_estimate<double>(recs, spec(8, {{1}, {3}, {1, 3}}), LayerFilter::all);
  const auto v = values(est.maps);
  for (size_t p = 0; p < 64; ++p) EXPECT_NEAR(v[128 + p], v[p] + v[64 + p], 1e-12);
}

TEST(SegmentEstimates, LayerFilters) {
  std::vector<AttentionRecord<double>> recs = {
      record(layer(0, 8, UNetPart::encoder), 0, 51), record(layer(1, 4, UNetPart::encoder), 0, 52),
      record(layer(2, 2, UNetPart::decoder), 0, 53), record(layer(3, 4, UNetPart::decoder), 0, 54),
      record(layer(4, 8, UNetPart::decoder), 0, 55)};
  auto count = [&](LayerFilter f) { return filter_records(recs, f).size(); };
  EXPECT_EQ(count(LayerFilter::all), 5u);
  EXPECT_EQ(count(LayerFilter::encoder_only), 2u);
  EXPECT_EQ(count(LayerFilter::decoder_only), 3u);
  EXPECT_EQ(count(LayerFilter::res_high_only), 2u);
  EXPECT_EQ(count(LayerFilter::res_low_only), 1u);
  EXPECT_EQ(count(LayerFilter::res_both), 3u);
  for (const auto& name : layer_filter_names()) EXPECT_EQ(layer_filter_name(parse_layer_filter(name)), name);
}

TEST(SegmentEstimates, EmptyFilterNamesTheFilter) {
  std::vector<AttentionRecord<double>> recs = {record(layer(0, 8, UNetPart::encoder), 0, 61)};
  try {
    segment_estimate<double>(recs, spec(8, {{0}}), LayerFilter::decoder_only);
    FAIL() << "expected rejection";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find(layer_filter_name(LayerFilter::decoder_only)), std::string::npos);
  }
}

TEST(SegmentEstimates, TokenOutOfRangeRejected) {
  std::vector<AttentionRecord<double>> recs = {record(layer(0, 4, UNetPart::encoder), 0, 71, 5)};
  EXPECT_THROW(segment_estimate<double>(recs, spec(4, {{5}}), LayerFilter::all), std::invalid_argument);
  EXPECT_THROW(segment_estimate<double>(recs, spec(4, {{-1}}), LayerFilter::all), std::invalid_argument);
}

TEST(SegmentSpec, ValidateRejectsBadInput) {
  auto s = spec(4, {{0}});
  EXPECT_NO_THROW(s.validate(3));
  EXPECT_THROW(s.validate(0), std::invalid_argument);
  auto empty_tokens = spec(4, {{}});
  EXPECT_THROW(empty_tokens.validate(3), std::invalid_argument);
  auto bad_mask = spec(4, {{0}});
  bad_mask.masks[0].data[0] = 2;
  EXPECT_THROW(bad_mask.validate(3), std::invalid_argument);
  auto wrong_size = spec(4, {{0}});
  wrong_size.masks[0] = BinaryMask::empty(8, 8);
  EXPECT_THROW(wrong_size.validate(3), std::invalid_argument);
}

TEST(SegmentSpec, ScenesProduceValidSpecs) {
  for (std::uint64_t i = 0; i < 20; ++i) {
    const Scene scene = scene_for_index(7, i);
    const auto s = segments_for_scene(scene, 16);
    ASSERT_EQ(s.size(), scene.masks.size());
    EXPECT_NO_THROW(s.validate(static_cast<int>(scene.caption_words().size())));
    for (const auto& m : s.masks) EXPECT_GT(m.area(), 0);
  }
}

TEST(PooledClasses, OneClassGivesOnes) {
  auto p = pooled_class_probabilities(rand_d({9, 4}, 1), rand_d({1, 4}, 2), 0.5);
  for (double v : values(p)) EXPECT_DOUBLE_EQ(v, 1.0);
}

TEST(PooledClasses, IdenticalKeysGiveHalf) {
  auto k = rand_d({1, 4}, 3);
  auto p = pooled_class_probabilities(rand_d({9, 4}, 4), concat(std::vector<TensorD>{k, k}, 0), 0.5);
  for (double v : values(p)) EXPECT_NEAR(v, 0.5, 1e-15);
}

TEST(PooledClasses, OrthogonalKeysFollowQuerySigns) {
  // Queries on a 2x2 grid: left column points along key 0, right along key 1.
  auto q = TensorD::from_data({4, 2}, {2, -1, -1, 2, 3, 0, 0, 3});
  auto keys = TensorD::from_data({2, 2}, {1, 0, 0, 1});
  auto p = values(pooled_class_probabilities(q, keys, 1.0));
  for (int i = 0; i < 4; ++i) {
    const int want = (i % 2 == 0) ? 0 : 1;
    EXPECT_GT(p[static_cast<size_t>(i * 2 + want)], 0.9);
    EXPECT_NEAR(p[static_cast<size_t>(i * 2)] + p[static_cast<size_t>(i * 2 + 1)], 1.0, 1e-15);
  }
  EXPECT_NEAR(p[0], 1.0 / (1.0 + std::exp(-3.0)), 1e-12);
}

TEST(PooledClasses, ShapeMismatchRejected) {
  EXPECT_THROW(pooled_class_probabilities(rand_d({4, 3}, 1), rand_d({2, 4}, 2), 1.0), std::invalid_argument);
}

TEST(PooledClasses, MapsSumToOnePerPixel) {
  auto maps_hi = softmax(rand_d({1, 2, 64, 3}, 81), 3);
  auto maps_lo = softmax(rand_d({1, 2, 16, 3}, 82), 3);
  std::vector<LayerAttention<double>> probe = {{layer(0, 8, UNetPart::encoder), maps_hi},
                                                {layer(1, 4, UNetPart::decoder), maps_lo}};
  auto m = pooled_class_maps(probe, LayerFilter::all);
  ASSERT_EQ(m.shape(), (Shape{3, 8, 8}));
  const auto v = values(m);
  for (size_t p = 0; p < 64; ++p) EXPECT_NEAR(v[p] + v[64 + p] + v[128 + p], 1.0, 1e-12);
}

TEST(AttentionTrace, SerializesEveryStep) {
  std::vector<TraceEntry> entries;
  for (int i = 0; i < 4; ++i) {
    entries.push_back({i, 1000 - 20 * i, zdtest::rand_f({2, 8, 8}, static_cast<std::uint64_t>(i), 0, 1),
                       0.1 * i, i < 2});
  }
  const NtcFile f = attention_trace(entries);
  EXPECT_EQ(f.metadata()["steps"].size(), 4u);
  EXPECT_EQ(f.metadata()["segments"], 2);
  EXPECT_TRUE(f.contains("step3/seg1"));
  EXPECT_TRUE(f.contains("step0/loss"));
}

TEST(AttentionTrace, MissingCaptureRejected) {
  std::vector<TraceEntry> entries(1);
  EXPECT_THROW(attention_trace(entries), std::invalid_argument);
}
