#include <pointfix/dataset.hpp>
#include <pointfix/scene.hpp>

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

using namespace pointfix;

namespace {

SceneSpec flat_scene(std::size_t h, std::size_t w, double bg) {
  SceneSpec s;
  s.height = h;
  s.width = w;
  s.d_max = 24;
  s.background_disparity = bg;
  s.background_seed = 11;
  return s;
}

SceneObject rect(double cx, double cy, double hw, double hh, double d, std::uint64_t tex) {
  SceneObject o;
  o.shape = ShapeKind::rectangle;
  o.cx = cx;
  o.cy = cy;
  o.half_w = hw;
  o.half_h = hh;
  o.disparity = d;
  o.texture_seed = tex;
  return o;
}

double px(const Tensor<double>& img, std::size_t w, std::size_t y, std::size_t x, std::size_t c) {
  return img[(y * w + x) * 3 + c];
}

}  // namespace

TEST(MakeScene, SameSeedSameScene) {
  GeneratorConfig cfg;
  const auto a = make_scene(17, cfg), b = make_scene(17, cfg), c = make_scene(18, cfg);
  ASSERT_EQ(a.objects.size(), b.objects.size());
  EXPECT_EQ(a.background_disparity, b.background_disparity);
  EXPECT_EQ(a.background_seed, b.background_seed);
  for (std::size_t i = 0; i < a.objects.size(); ++i) {
    EXPECT_EQ(a.objects[i].cx, b.objects[i].cx);
    EXPECT_EQ(a.objects[i].disparity, b.objects[i].disparity);
    EXPECT_EQ(a.objects[i].vx, b.objects[i].vx);
    EXPECT_EQ(a.objects[i].texture_seed, b.objects[i].texture_seed);
  }
  EXPECT_NE(a.background_seed, c.background_seed);
}

TEST(MakeScene, ZeroObjectsGivesBackgroundOnly) {
  GeneratorConfig cfg;
  cfg.objects_min = cfg.objects_max = 0;
  const auto s = make_scene(3, cfg);
  EXPECT_TRUE(s.objects.empty());
  const auto f = render_frame<double>(s, DomainStyle::identity(), 0);
  for (double d : f.gt_disparity.values()) EXPECT_EQ(d, s.background_disparity);
}

TEST(MakeScene, DisparitiesStayInRangeOverManySeeds) {
  for (bool slant : {false, true}) {
    GeneratorConfig cfg;
    cfg.planar_slant = slant;
    cfg.integer_disparity = !slant;
    for (std::uint64_t seed = 0; seed < 1000; ++seed) {
      const auto s = make_scene(seed, cfg);
      ASSERT_GE(s.background_disparity, 0.0);
      ASSERT_LE(s.background_disparity, cfg.d_max);
      for (const auto& o : s.objects) {
        for (double x : {o.cx - o.half_w, o.cx, o.cx + o.half_w}) {
          const double d = o.disparity_at(x, 0);
          ASSERT_GT(d, s.background_disparity) << seed;
          ASSERT_LE(d, cfg.d_max + 1e-12) << seed;
        }
        if (!slant) {
          ASSERT_EQ(o.disparity, std::round(o.disparity));
        }
      }
      for (std::size_t i = 1; i < s.objects.size(); ++i)
        ASSERT_GE(s.objects[i - 1].disparity, s.objects[i].disparity);
    }
  }
}

TEST(MakeScene, RejectsBadConfig) {
  GeneratorConfig cfg;
  cfg.objects_min = 4;
  cfg.objects_max = 2;
  EXPECT_THROW(make_scene(1, cfg), std::invalid_argument);
  GeneratorConfig c2;
  c2.bg_disp_max = 100;
  EXPECT_THROW(make_scene(1, c2), std::invalid_argument);
}

TEST(RenderFrame, SingleRectangleIsShiftedCopy) {
  const std::size_t h = 24, w = 48;
  SceneSpec s = flat_scene(h, w, 0.0);
  s.objects.push_back(rect(24, 12, 8, 6, 4, 99));
  const auto f = render_frame<double>(s, DomainStyle::identity(), 0);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const bool on = s.objects[0].covers(double(y), double(x), 0);
      EXPECT_EQ(f.gt_disparity[y * w + x], on ? 4.0 : 0.0);
      if (on) {
        for (std::size_t c = 0; c < 3; ++c) ASSERT_EQ(px(f.right, w, y, x - 4, c), px(f.left, w, y, x, c));
      } else if (!s.objects[0].covers(double(y), double(x + 4), 0)) {
        // background seen by both cameras at the same column
        for (std::size_t c = 0; c < 3; ++c) ASSERT_EQ(px(f.right, w, y, x, c), px(f.left, w, y, x, c));
      }
    }
}

TEST(RenderFrame, PhotometricConsistencyOnValidPixels) {
  GeneratorConfig cfg;
  const DomainStyle style = DomainStyle::source();
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto f = render_frame<double>(make_scene(seed, cfg), style, 0, seed);
    const std::size_t h = f.height(), w = f.width();
    double sum = 0, n = 0;
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        if (f.valid_mask[y * w + x] < 0.5) continue;
        const double xr = double(x) - f.gt_disparity[y * w + x];
        ASSERT_GE(xr, 0.0);
        const std::size_t x0 = std::size_t(xr);
        for (std::size_t c = 0; c < 3; ++c) {
          sum += std::abs(px(f.left, w, y, x, c) - px(f.right, w, y, x0, c));
          n += 1;
        }
      }
    ASSERT_GT(n, 0);
    EXPECT_LE(sum / n, style.noise_sigma + 1e-3) << seed;
  }
}

TEST(RenderFrame, OcclusionBandHasWidthOfDisparityGap) {
  const std::size_t h = 32, w = 64;
  SceneSpec s = flat_scene(h, w, 1.0);
  // near object first
  s.objects.push_back(rect(25, 16, 5, 5, 10, 5));
  s.objects.push_back(rect(25, 16, 15, 10, 4, 6));
  const auto f = render_frame<double>(s, DomainStyle::identity(), 0);
  const std::size_t y = 16;
  // Far-object pixels x in [14, 19] map to right columns covered by the near
  // object (right-view extent [10, 20]).
  std::size_t band = 0;
  for (std::size_t x = 10; x < 20; ++x) {
    const bool occluded = f.valid_mask[y * w + x] < 0.5;
    EXPECT_EQ(occluded, x >= 14) << x;
    band += occluded;
  }
  EXPECT_EQ(band, 6u);
  for (std::size_t x = 20; x <= 30; ++x) EXPECT_EQ(f.valid_mask[y * w + x], 1.0) << x;
}

TEST(RenderFrame, LeftBorderPixelsWithoutMatchAreInvalid) {
  GeneratorConfig cfg;
  const auto f = render_frame<double>(make_scene(5, cfg), DomainStyle::identity(), 0);
  const std::size_t w = f.width();
  for (std::size_t y = 0; y < f.height(); ++y)
    for (std::size_t x = 0; x < w; ++x)
      if (double(x) - f.gt_disparity[y * w + x] < 0) {
        EXPECT_EQ(f.valid_mask[y * w + x], 0.0);
      }
}

TEST(RenderFrame, TargetStyleShiftsAppearanceNotGeometry) {
  GeneratorConfig cfg;
  const auto s = make_scene(8, cfg);
  const auto a = render_frame<double>(s, DomainStyle::source(), 0, 1);
  const auto b = render_frame<double>(s, DomainStyle::target(), 0, 1);
  EXPECT_EQ(a.gt_disparity.vec(), b.gt_disparity.vec());
  EXPECT_EQ(a.valid_mask.vec(), b.valid_mask.vec());
  double diff = 0;
  for (std::size_t i = 0; i < a.left.numel(); ++i) diff += std::abs(a.left[i] - b.left[i]);
  EXPECT_GT(diff / double(a.left.numel()), 0.05);
}

TEST(DomainStyle, ValidateRejectsBadValues) {
  DomainStyle s;
  s.contrast = 0;
  EXPECT_THROW(s.validate(), std::invalid_argument);
  s = {};
  s.fog_alpha = 1.5;
  EXPECT_THROW(s.validate(), std::invalid_argument);
  s = {};
  s.texture_family = 3;
  EXPECT_THROW(s.validate(), std::invalid_argument);
}

TEST(MakeSequence, LengthOneAndDeterminism) {
  GeneratorConfig cfg;
  const auto one = make_sequence<double>(4, 1, DomainStyle::source(), "e", cfg);
  EXPECT_EQ(one.frames.size(), 1u);
  EXPECT_EQ(one.environment, "e");
  const auto a = make_sequence<float>(9, 3, DomainStyle::target(), "x", cfg);
  const auto b = make_sequence<float>(9, 3, DomainStyle::target(), "x", cfg);
  for (std::size_t t = 0; t < 3; ++t) {
    EXPECT_EQ(a.frames[t].left.vec(), b.frames[t].left.vec());
    EXPECT_EQ(a.frames[t].right.vec(), b.frames[t].right.vec());
    EXPECT_EQ(a.frames[t].gt_disparity.vec(), b.frames[t].gt_disparity.vec());
  }
  EXPECT_THROW(make_sequence<double>(1, 0, DomainStyle::source(), "e", cfg), std::invalid_argument);
}

TEST(MakeSequence, DriftBoundAcrossHundredFrames) {
  GeneratorConfig cfg;
  cfg.height = 32;
  cfg.width = 64;
  cfg.objects_min = cfg.objects_max = 1;
  cfg.max_drift = 1.0;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto seq = make_sequence<double>(seed, 100, DomainStyle::identity(), "e", cfg);
    const double dobj = make_scene(seed, cfg).objects.at(0).disparity;
    const long h = long(cfg.height), w = long(cfg.width), r = 2;  // ceil(max_drift) + 1 px rasterisation
    for (std::size_t t = 1; t < seq.frames.size(); ++t) {
      const auto& prev = seq.frames[t - 1].gt_disparity;
      const auto& cur = seq.frames[t].gt_disparity;
      for (long y = r; y < h - r; ++y)
        for (long x = r; x < w - r; ++x) {
          if (cur[std::size_t(y * w + x)] != dobj) continue;
          bool near = false;
          for (long dy = -r; dy <= r && !near; ++dy)
            for (long dx = -r; dx <= r && !near; ++dx) near = prev[std::size_t((y + dy) * w + x + dx)] == dobj;
          ASSERT_TRUE(near) << "seed " << seed << " frame " << t << " at " << y << "," << x;
        }
    }
  }
}

TEST(Dataset, ExportImportRoundTrip) {
  GeneratorConfig cfg;
  cfg.height = 16;
  cfg.width = 32;
  const auto seq = make_sequence<float>(2, 2, DomainStyle::target(), "env0", cfg, "abc");
  const auto root = std::filesystem::temp_directory_path() / "pointfix_dataset_test";
  std::filesystem::remove_all(root);
  export_sequence(root, seq);
  const auto back = import_sequence<float>(sequence_dir(root, "abc"));
  EXPECT_EQ(back.id, "abc");
  EXPECT_EQ(back.environment, "env0");
  ASSERT_EQ(back.frames.size(), 2u);
  for (std::size_t t = 0; t < 2; ++t) {
    EXPECT_EQ(back.frames[t].valid_mask.vec(), seq.frames[t].valid_mask.vec());
    // integer disparities survive the 1/256 quantisation; invalid pixels are stored as 0
    for (std::size_t i = 0; i < seq.frames[t].gt_disparity.numel(); ++i)
      ASSERT_EQ(back.frames[t].gt_disparity[i], seq.frames[t].valid_mask[i] > 0.5f ? seq.frames[t].gt_disparity[i] : 0.f);
    for (std::size_t i = 0; i < seq.frames[t].left.numel(); ++i)
      ASSERT_NEAR(back.frames[t].left[i], seq.frames[t].left[i], 0.5 / 255 + 1e-6);
  }
  std::filesystem::remove_all(root);
}
