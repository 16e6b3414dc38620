#include "oracles.hpp"

#include <pointfix/evaluator.hpp>
#include <pointfix/plot.hpp>
#include <pointfix/report_io.hpp>

#include <gtest/gtest.h>

#include <random>

using namespace pointfix;

namespace {

using Td = Tensor<double>;

Td map2(std::size_t h, std::size_t w, std::vector<double> v) { return Td::constant({h, w}, std::move(v)); }

std::vector<Sequence<float>> sequences(int n, std::size_t length) {
  GeneratorConfig g;
  g.height = 16;
  g.width = 32;
  std::vector<Sequence<float>> out;
  for (int i = 0; i < n; ++i)
    out.push_back(make_sequence<float>(40 + i, length, DomainStyle::target(), "env" + std::to_string(i % 2), g,
                                       "s" + std::to_string(i)));
  return out;
}

AdaptConfig mode(AdaptKind k) {
  AdaptConfig c;
  c.mode.kind = k;
  c.lr = 1e-3;
  c.record_timing = false;
  return c;
}

std::string all_csv(const ProtocolReport& r) {
  std::string s;
  for (const auto& g : r.groups)
    for (const auto& q : g.sequences) s += adaptation_csv(q);
  return s;
}

}  // namespace

TEST(Epe, Examples) {
  const Td gt = map2(2, 2, {1, 2, 3, 4}), valid = Td::full({2, 2}, 1.0);
  EXPECT_EQ(epe(gt, gt, valid), 0.0);
  EXPECT_DOUBLE_EQ(epe(add_scalar(gt, 1.0), gt, valid), 1.0);
  EXPECT_THROW(epe(gt, gt, Td::zeros({2, 2})), std::invalid_argument);
  EXPECT_THROW(epe(gt, Td::zeros({2, 3}), valid), std::invalid_argument);
}

TEST(D1All, Examples) {
  const Td gt = map2(2, 2, {1, 2, 3, 4}), valid = Td::full({2, 2}, 1.0);
  EXPECT_EQ(d1_all(gt, gt, valid), 0.0);
  EXPECT_EQ(d1_all(map2(2, 2, {5, 2, 3, 4}), gt, valid), 25.0);
  // Exactly 3 px is not an outlier; invalid pixels are ignored.
  EXPECT_EQ(d1_all(map2(2, 2, {4, 2, 3, 40}), gt, map2(2, 2, {1, 1, 1, 0})), 0.0);
  EXPECT_THROW(d1_all(gt, gt, Td::zeros({2, 2})), std::invalid_argument);
}

TEST(D1All, KittiVariantNeedsRelativeError) {
  const Td gt = map2(1, 2, {100, 10}), pred = map2(1, 2, {104, 14});
  const Td valid = Td::full({1, 2}, 1.0);
  EXPECT_EQ(d1_all(pred, gt, valid), 100.0);
  EXPECT_EQ(d1_all(pred, gt, valid, true), 50.0);
}

TEST(Metrics, MatchLoopOracles) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0, 1);
  for (int n = 0; n < 100; ++n) {
    std::vector<double> p(256), g(256), v(256);
    for (std::size_t i = 0; i < 256; ++i) {
      g[i] = 20 * u(rng);
      p[i] = g[i] + 10 * (u(rng) - 0.5);
      v[i] = u(rng) < 0.7;
    }
    v[7] = 1;
    const Td P = map2(16, 16, p), G = map2(16, 16, g), V = map2(16, 16, v);
    EXPECT_EQ(d1_all(P, G, V), oracle::d1_all(p, g, v));
    EXPECT_NEAR(epe(P, G, V), oracle::epe(p, g, v), 1e-6);
    const auto r = evaluate_metrics(P, G, V);
    EXPECT_EQ(r.d1_all, d1_all(P, G, V));
  }
}

TEST(SparseGroundTruth, SubsamplingIsUnbiased) {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<double> p(64 * 64), g(64 * 64);
  for (std::size_t i = 0; i < p.size(); ++i) {
    g[i] = 20 * u(rng);
    p[i] = g[i] + 10 * (u(rng) - 0.5);
  }
  const Td P = map2(64, 64, p), G = map2(64, 64, g), V = Td::full({64, 64}, 1.0);
  const double dense = d1_all(P, G, V);
  double mean = 0;
  std::size_t dense_n = evaluate_metrics(P, G, V).n_valid;
  for (std::uint64_t s = 0; s < 50; ++s) {
    const Td sub = subsample_valid(V, 0.2, s);
    const auto r = evaluate_metrics(P, G, sub);
    EXPECT_LT(r.n_valid, dense_n);
    mean += r.d1_all / 50;
  }
  EXPECT_NEAR(mean, dense, 1.0);
  EXPECT_THROW(subsample_valid(V, 0.0, 0), std::invalid_argument);
}

TEST(Groups, Construction) {
  const std::vector<std::string> ids{"a", "b", "c"}, envs{"x", "y", "x"};
  const auto s = build_groups(ids, envs, ProtocolKind::short_term);
  ASSERT_EQ(s.size(), 3u);
  EXPECT_EQ(s[1].name, "b");
  const auto m = build_groups(ids, envs, ProtocolKind::mid_term);
  ASSERT_EQ(m.size(), 2u);
  EXPECT_EQ(m[0].members, (std::vector<std::size_t>{0, 2}));
  EXPECT_EQ(m[1].members, (std::vector<std::size_t>{1}));
  const auto l = build_groups(ids, envs, ProtocolKind::long_term);
  ASSERT_EQ(l.size(), 1u);
  EXPECT_EQ(l[0].members, (std::vector<std::size_t>{0, 1, 2}));
  EXPECT_THROW(protocol_from_name("weekly"), std::invalid_argument);
}

TEST(EvaluateProtocol, SingleSequenceNoneIsPerFrameMean) {
  StereoModelConfig cfg;
  const auto theta = init_stereo_model<float>(cfg, 1);
  const auto seqs = sequences(1, 3);
  const auto rep = evaluate_protocol(theta, seqs, ProtocolKind::short_term, cfg, mode(AdaptKind::none));
  double want = 0;
  for (const auto& f : seqs[0].frames) want += d1_all(predict(f, theta, cfg).disparity, f.gt_disparity, f.valid_mask);
  EXPECT_NEAR(rep.avg_d1_all, want / 3, 1e-12);
  EXPECT_EQ(rep.groups.at(0).frames, 3u);
}

TEST(EvaluateProtocol, LongEqualsShortWithoutReset) {
  StereoModelConfig cfg;
  const auto theta = init_stereo_model<float>(cfg, 2);
  const auto seqs = sequences(2, 3);
  EvalOptions carry;
  carry.reset_between_groups = false;
  const auto lng = evaluate_protocol(theta, seqs, ProtocolKind::long_term, cfg, mode(AdaptKind::full));
  const auto sht = evaluate_protocol(theta, seqs, ProtocolKind::short_term, cfg, mode(AdaptKind::full), carry);
  EXPECT_EQ(all_csv(lng), all_csv(sht));
  // With resets the second sequence starts from scratch and differs.
  const auto reset = evaluate_protocol(theta, seqs, ProtocolKind::short_term, cfg, mode(AdaptKind::full));
  EXPECT_NE(all_csv(lng), all_csv(reset));
}

TEST(EvaluateProtocol, MidGroupsPartitionFrames) {
  StereoModelConfig cfg;
  const auto theta = init_stereo_model<float>(cfg, 3);
  const auto seqs = sequences(3, 2);
  const auto rep = evaluate_protocol(theta, seqs, ProtocolKind::mid_term, cfg, mode(AdaptKind::none));
  ASSERT_EQ(rep.groups.size(), 2u);
  EXPECT_EQ(rep.groups[0].frames + rep.groups[1].frames, 6u);
  EXPECT_EQ(rep.groups[0].sequences.size(), 2u);
  // Unweighted average over groups.
  EXPECT_NEAR(rep.avg_d1_all, 0.5 * (rep.groups[0].d1_all + rep.groups[1].d1_all), 1e-12);
}

TEST(EvaluateProtocol, DeterministicAndRejectsEmptyInput) {
  StereoModelConfig cfg;
  const auto theta = init_stereo_model<float>(cfg, 4);
  const auto seqs = sequences(2, 2);
  const auto a = evaluate_protocol(theta, seqs, ProtocolKind::mid_term, cfg, mode(AdaptKind::mad));
  const auto b = evaluate_protocol(theta, seqs, ProtocolKind::mid_term, cfg, mode(AdaptKind::mad));
  EXPECT_EQ(protocol_table_csv({a}), protocol_table_csv({b}));
  EXPECT_EQ(all_csv(a), all_csv(b));
  EXPECT_THROW(evaluate_protocol(theta, {}, ProtocolKind::short_term, cfg, mode(AdaptKind::none)),
               std::invalid_argument);
}

TEST(ReportIo, TablesRoundTripThroughParser) {
  AdaptationReport rep;
  rep.records = {{0, 12.5, 1.25, 0.1, "all", 0}, {1, 10, 1, 0.09, "features+decoder_s4", 0}};
  const CsvTable t = parse_csv(adaptation_csv(rep));
  EXPECT_EQ(t.header, (std::vector<std::string>{"frame", "d1_all", "epe", "reproj", "modules", "ms"}));
  EXPECT_EQ(t.numbers("d1_all"), (std::vector<double>{12.5, 10}));
  EXPECT_EQ(t.rows[1][4], "features+decoder_s4");
  EXPECT_THROW(t.numbers("modules"), std::runtime_error);
  EXPECT_THROW(t.column("nope"), std::runtime_error);

  std::vector<TrainRecord> log{{0, 4.5, 2, 10, 0.5}, {1, 4.25, 1.5, 8, 0.5}};
  const CsvTable l = parse_csv(train_log_csv(log, false));
  EXPECT_EQ(l.numbers("L_k"), (std::vector<double>{4.5, 4.25}));
  EXPECT_EQ(l.numbers("seconds"), (std::vector<double>{0, 0}));
}

TEST(ReportIo, ParserRejectsRaggedRowsAndEmptyInput) {
  EXPECT_THROW(parse_csv("a,b\n1,2\n3\n"), std::runtime_error);
  EXPECT_THROW(parse_csv(""), std::runtime_error);
  EXPECT_EQ(parse_csv("a,b\r\n1,2\r\n").rows.at(0).at(1), "2");
}

TEST(ReportIo, ProtocolTableHasOneRowPerMode) {
  ProtocolReport a, b;
  a.mode = "none";
  b.mode = "full";
  a.groups = {{"env0", 3, 10, 1, {}}};
  b.groups = {{"env0", 3, 8, 0.5, {}}};
  a.avg_d1_all = 10;
  b.avg_d1_all = 8;
  const CsvTable t = parse_csv(protocol_table_csv({a, b}));
  EXPECT_EQ(t.header, (std::vector<std::string>{"mode", "env0_d1_all", "env0_epe", "avg_d1_all", "avg_epe"}));
  ASSERT_EQ(t.rows.size(), 2u);
  EXPECT_EQ(t.numbers("avg_d1_all"), (std::vector<double>{10, 8}));
  b.groups[0].name = "env1";
  EXPECT_THROW(protocol_table_csv({a, b}), std::invalid_argument);
}

TEST(Plot, RunningMedian) {
  EXPECT_EQ(running_median({1, 9, 2, 8, 3}, 3), (std::vector<double>{5, 2, 8, 3, 5.5}));
  EXPECT_EQ(running_median({4, 1}, 1), (std::vector<double>{4, 1}));
}

TEST(Plot, OnePolylinePerSeries) {
  std::vector<Series> s{{"a", {0, 1, 2}, {3, 2, 1}}, {"b<&>", {0, 1}, {1, 1}}};
  PlotOptions o;
  o.title = "t";
  const std::string svg = svg_line_plot(s, o);
  std::size_t n = 0;
  for (std::size_t p = svg.find("<polyline"); p != std::string::npos; p = svg.find("<polyline", p + 1)) ++n;
  EXPECT_EQ(n, 2u);
  EXPECT_NE(svg.find("b&lt;&amp;&gt;"), std::string::npos);
  EXPECT_THROW(svg_line_plot({}), std::invalid_argument);
  EXPECT_THROW(svg_line_plot({{"x", {0, 1}, {1}}}), std::invalid_argument);
}
