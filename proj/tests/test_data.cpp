#include <gtest/gtest.h>

#include <png.h>

#include <cstring>
#include <fstream>
#include <random>
#include <set>

#include "helpers.hpp"
#include "topiq/data.hpp"

using namespace topiq;
namespace fs = std::filesystem;

namespace {

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << s;
}

// Writes tiny raw fixtures named in `names` under `dir`.
void touch_images(const fs::path& dir, const std::vector<std::string>& names) {
  for (const auto& n : names) write_tensor_file(Image::zeros({3, 4, 4}), dir / n);
}

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const DataError& e) {
    return e.what();
  }
  return "";
}

// FR manifest with `refs` references and a random number of distortions each.
Manifest random_fr_manifest(std::mt19937_64& gen, std::size_t refs) {
  Manifest m;
  m.kind = ManifestKind::mos_fr;
  std::uniform_int_distribution<int> per_ref(1, 5);
  std::uniform_real_distribution<double> mos(1, 5);
  for (std::size_t r = 0; r < refs; ++r) {
    const int k = per_ref(gen);
    for (int d = 0; d < k; ++d) {
      MosRecord rec;
      rec.ref_path = "ref" + std::to_string(r) + ".png";
      rec.dist_path = "d" + std::to_string(r) + "_" + std::to_string(d) + ".png";
      rec.mos_raw = mos(gen);
      m.mos.push_back(rec);
    }
  }
  m.normalize_mos();
  return m;
}

std::set<std::string> refs_of(const Manifest& m) {
  std::set<std::string> out;
  for (const auto& r : m.mos) out.insert(r.ref_path);
  for (const auto& r : m.pairwise) out.insert(r.ref_path);
  return out;
}

std::multiset<std::string> dists_of(const Manifest& m) {
  std::multiset<std::string> out;
  for (const auto& r : m.mos) out.insert(r.dist_path);
  return out;
}

}  // namespace

TEST(Manifest, MosIsMinMaxNormalized) {
  auto dir = testing_util::scratch_dir("manifest_mos");
  touch_images(dir, {"a.t", "b.t", "r.t"});
  write_text(dir / "m.csv", "dist_path,ref_path,mos\na.t,r.t,1\nb.t,r.t,5\n");
  auto m = load_manifest(dir / "m.csv", ManifestKind::mos_fr);
  ASSERT_EQ(m.size(), 2u);
  EXPECT_EQ(m.mos[0].mos, 0.0);
  EXPECT_EQ(m.mos[1].mos, 1.0);
  EXPECT_EQ(m.mos[1].mos_raw, 5.0);
  ASSERT_TRUE(m.label_range);
  EXPECT_EQ(m.label_range->min, 1.0);
  EXPECT_EQ(m.label_range->max, 5.0);
  EXPECT_EQ(detect_manifest_kind(dir / "m.csv"), ManifestKind::mos_fr);
}

TEST(Manifest, NoReferenceAndDistributionKinds) {
  auto dir = testing_util::scratch_dir("manifest_kinds");
  touch_images(dir, {"a.t", "b.t"});
  write_text(dir / "nr.csv", "dist_path,mos\na.t,3.5\nb.t,2\n");
  write_text(dir / "dist.csv", "dist_path,p1,p2,p3,p4,p5\na.t,0.5,0.5,0,0,0\n");
  auto nr = load_manifest(dir / "nr.csv", ManifestKind::mos_nr);
  EXPECT_EQ(nr.mos[0].mos, 1.0);
  EXPECT_TRUE(nr.mos[0].ref_path.empty());
  auto dist = load_manifest(dir / "dist.csv", ManifestKind::distribution);
  EXPECT_EQ(dist.bins, 5u);
  EXPECT_EQ(dist.distribution[0].p, (std::vector<double>{0.5, 0.5, 0, 0, 0}));
  EXPECT_EQ(detect_manifest_kind(dir / "nr.csv"), ManifestKind::mos_nr);
  EXPECT_EQ(detect_manifest_kind(dir / "dist.csv"), ManifestKind::distribution);
}

TEST(Manifest, PairwiseRowErrorsNameTheRow) {
  auto dir = testing_util::scratch_dir("manifest_2afc");
  touch_images(dir, {"r.t", "a.t", "b.t"});
  write_text(dir / "ok.csv", "ref_path,a_path,b_path,p_ab\nr.t,a.t,b.t,0.25\n");
  EXPECT_EQ(load_manifest(dir / "ok.csv", ManifestKind::pairwise).pairwise[0].p_ab, 0.25);
  EXPECT_EQ(detect_manifest_kind(dir / "ok.csv"), ManifestKind::pairwise);
  write_text(dir / "bad.csv", "ref_path,a_path,b_path,p_ab\nr.t,a.t,b.t,0.25\nr.t,a.t,b.t,1.2\n");
  const auto msg = error_of([&] { load_manifest(dir / "bad.csv", ManifestKind::pairwise); });
  EXPECT_NE(msg.find("bad.csv row 2"), std::string::npos) << msg;
  EXPECT_NE(msg.find("1.2"), std::string::npos) << msg;
}

TEST(Manifest, RowAddressedErrors) {
  auto dir = testing_util::scratch_dir("manifest_errors");
  touch_images(dir, {"a.t", "r.t"});
  auto expect_error = [&](const std::string& body, ManifestKind kind, const std::string& needle,
                          ManifestOptions opts = {}) {
    write_text(dir / "m.csv", body);
    const auto msg = error_of([&] { load_manifest(dir / "m.csv", kind, opts); });
    EXPECT_NE(msg.find(needle), std::string::npos) << "message: " << msg;
  };
  expect_error("dist_path,ref_path,mos\na.t,r.t,3\nmissing.t,r.t,2\n", ManifestKind::mos_fr, "row 2: file not found");
  expect_error("dist_path,ref_path,mos\na.t,r.t\n", ManifestKind::mos_fr, "row 1: expected 3 columns, got 2");
  expect_error("dist_path,ref_path,mos\na.t,r.t,abc\n", ManifestKind::mos_fr, "row 1: 'abc' is not a finite number");
  expect_error("dist_path,mos\na.t,7\n", ManifestKind::mos_nr, "row 1: MOS 7 outside declared range",
               ManifestOptions{true, std::make_pair(1.0, 5.0)});
  expect_error("dist_path,p1,p2,p3\na.t,0.5,0.3,0.1\n", ManifestKind::distribution, "row 1: distribution sums to 0.9");
  expect_error("dist_path,p1,p2\na.t,1.5,-0.5\n", ManifestKind::distribution, "row 1: negative probability");
  expect_error("dist,ref,mos\na.t,r.t,3\n", ManifestKind::mos_fr, "header does not match");
  expect_error("", ManifestKind::mos_fr, "is empty");
  EXPECT_THROW(load_manifest(dir / "nope.csv", ManifestKind::mos_fr), DataError);
}

TEST(Manifest, DistributionToleranceAndSkippedFileChecks) {
  auto dir = testing_util::scratch_dir("manifest_tol");
  write_text(dir / "m.csv", "dist_path,p1,p2\nghost.t,0.50004,0.5\n");
  ManifestOptions lax;
  lax.check_files = false;
  EXPECT_NO_THROW(load_manifest(dir / "m.csv", ManifestKind::distribution, lax));
  EXPECT_THROW(load_manifest(dir / "m.csv", ManifestKind::distribution), DataError);
}

TEST(Manifest, WriteThenLoadRoundTrips) {
  auto dir = testing_util::scratch_dir("manifest_write");
  fs::create_directories(dir / "img");
  fs::create_directories(dir / "out");
  touch_images(dir / "img", {"a.t", "b.t", "r.t"});
  write_text(dir / "m.csv", "dist_path,ref_path,mos\nimg/a.t,img/r.t,0.1\nimg/b.t,img/r.t,0.30000000000000004\n");
  auto m = load_manifest(dir / "m.csv", ManifestKind::mos_fr);
  write_manifest(m, dir / "out" / "copy.csv");
  auto back = load_manifest(dir / "out" / "copy.csv", ManifestKind::mos_fr);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back.mos[0].dist_path, "../img/a.t");
  EXPECT_EQ(back.mos[1].mos_raw, 0.30000000000000004);
  EXPECT_EQ(back.mos[1].mos, m.mos[1].mos);
}

TEST(Split, TenReferencesAtDefaultRatios) {
  std::mt19937_64 gen(1);
  auto m = random_fr_manifest(gen, 10);
  auto parts = split_by_reference(m, parse_ratios("6:2:2"), 42);
  EXPECT_EQ(refs_of(parts[0]).size(), 6u);
  EXPECT_EQ(refs_of(parts[1]).size(), 2u);
  EXPECT_EQ(refs_of(parts[2]).size(), 2u);
}

TEST(Split, RemainderGoesTrainThenValThenTest) {
  // 7 * (0.6, 0.2, 0.2) floors to (4, 1, 1); the leftover goes to train
  EXPECT_EQ(detail::split_counts(7, {0.6, 0.2, 0.2}), (std::array<std::size_t, 3>{5, 1, 1}));
  // 9 * (1/3 each) -> (3, 3, 3); 5 * (0.5, 0.25, 0.25) floors to (2, 1, 1), leftover to train
  EXPECT_EQ(detail::split_counts(9, {1, 1, 1}), (std::array<std::size_t, 3>{3, 3, 3}));
  EXPECT_EQ(detail::split_counts(5, {2, 1, 1}), (std::array<std::size_t, 3>{3, 1, 1}));
  // 2 * (0.4, 0.3, 0.3) floors to (0, 0, 0): one each to train and val
  EXPECT_EQ(detail::split_counts(2, {4, 3, 3}), (std::array<std::size_t, 3>{1, 1, 0}));
  // zero-ratio splits stay empty
  EXPECT_EQ(detail::split_counts(3, {1, 0, 1}), (std::array<std::size_t, 3>{2, 0, 1}));
  EXPECT_THROW(detail::split_counts(3, {0, 0, 0}), ArgumentError);
  EXPECT_THROW(detail::split_counts(3, {-1, 1, 1}), ArgumentError);
}

TEST(Split, PartitionWithoutLeakageOverRandomManifests) {
  std::mt19937_64 gen(2);
  std::uniform_int_distribution<std::size_t> ref_count(3, 30);
  for (int trial = 0; trial < 100; ++trial) {
    auto m = random_fr_manifest(gen, ref_count(gen));
    auto parts = split_by_reference(m, {0.6, 0.2, 0.2}, static_cast<std::uint64_t>(trial));
    std::multiset<std::string> all;
    for (const auto& p : parts) {
      const auto d = dists_of(p);
      all.insert(d.begin(), d.end());
    }
    EXPECT_EQ(all, dists_of(m));
    for (int a = 0; a < 3; ++a)
      for (int b = a + 1; b < 3; ++b) {
        const auto ra = refs_of(parts[a]), rb = refs_of(parts[b]);
        std::vector<std::string> both;
        std::set_intersection(ra.begin(), ra.end(), rb.begin(), rb.end(), std::back_inserter(both));
        EXPECT_TRUE(both.empty()) << "trial " << trial;
      }
  }
}

TEST(Split, DeterministicPerSeed) {
  std::mt19937_64 gen(3);
  auto m = random_fr_manifest(gen, 20);
  auto a = split_by_reference(m, {0.6, 0.2, 0.2}, 7);
  auto b = split_by_reference(m, {0.6, 0.2, 0.2}, 7);
  auto c = split_by_reference(m, {0.6, 0.2, 0.2}, 8);
  for (int s = 0; s < 3; ++s) EXPECT_EQ(dists_of(a[s]), dists_of(b[s]));
  EXPECT_NE(refs_of(a[0]), refs_of(c[0]));
}

TEST(Split, EachPartIsRenormalized) {
  std::mt19937_64 gen(4);
  auto m = random_fr_manifest(gen, 12);
  for (const auto& part : split_by_reference(m, {0.6, 0.2, 0.2}, 1)) {
    if (part.size() < 2) continue;
    double lo = 1, hi = 0;
    for (const auto& r : part.mos) {
      lo = std::min(lo, r.mos);
      hi = std::max(hi, r.mos);
    }
    EXPECT_EQ(lo, 0.0);
    EXPECT_EQ(hi, 1.0);
  }
}

TEST(Split, PairwiseFollowsReferences) {
  Manifest m;
  m.kind = ManifestKind::pairwise;
  for (int r = 0; r < 10; ++r)
    for (int k = 0; k < 3; ++k) m.pairwise.push_back({"r" + std::to_string(r), "a", "b", 0.5});
  auto parts = split_by_reference(m, {0.6, 0.2, 0.2}, 5);
  EXPECT_EQ(parts[0].size(), 18u);
  EXPECT_EQ(parts[1].size(), 6u);
  EXPECT_EQ(parts[2].size(), 6u);
}

TEST(Split, NoReferenceKindsNeedRecordSplit) {
  Manifest m;
  m.kind = ManifestKind::mos_nr;
  for (int i = 0; i < 10; ++i) m.mos.push_back({"d" + std::to_string(i), "", double(i), 0});
  EXPECT_THROW(split_by_reference(m, {0.6, 0.2, 0.2}, 1), UnsupportedKindError);
  auto parts = split_records(m, {0.6, 0.2, 0.2}, 1);
  EXPECT_EQ(parts[0].size() + parts[1].size() + parts[2].size(), 10u);
  EXPECT_EQ(parts[0].size(), 6u);
  std::multiset<std::string> all;
  for (const auto& p : parts) {
    const auto d = dists_of(p);
    all.insert(d.begin(), d.end());
  }
  EXPECT_EQ(all, dists_of(m));
}

TEST(Split, RatioParsing) {
  EXPECT_EQ(parse_ratios("6:2:2"), (SplitRatios{6, 2, 2}));
  EXPECT_EQ(parse_ratios("0.7:0.1:0.2"), (SplitRatios{0.7, 0.1, 0.2}));
  EXPECT_THROW(parse_ratios("6:2"), ArgumentError);
  EXPECT_THROW(parse_ratios("6:2:2:1"), ArgumentError);
  EXPECT_THROW(parse_ratios("6:x:2"), ArgumentError);
}

TEST(Resize, ShorterSideSchedule) {
  EXPECT_EQ(resize_shorter_side(Image::zeros({3, 336, 448}), 336).shape(), (Shape{3, 336, 448}));
  EXPECT_EQ(resize_shorter_side(Image::zeros({3, 600, 800}), 300).shape(), (Shape{3, 300, 400}));
  EXPECT_EQ(resize_shorter_side(Image::zeros({3, 800, 600}), 300).shape(), (Shape{3, 400, 300}));
  EXPECT_EQ(resize_shorter_side(Image::zeros({3, 50, 50}), 37).shape(), (Shape{3, 37, 37}));
  // 10 x 15 -> 7 x 10.5, rounded to 11
  EXPECT_EQ(resize_shorter_side(Image::zeros({3, 10, 15}), 7).shape(), (Shape{3, 7, 11}));
  EXPECT_THROW(resize_shorter_side(Image::zeros({3, 4, 4}), 0), ArgumentError);
}

TEST(Resize, SameSizeIsIdentity) {
  auto img = testing_util::texture(16, 3);
  EXPECT_TRUE(testing_util::bitwise_equal(resize_shorter_side(img, 16), img));
}

TEST(Augment, NoOpConfigIsIdentity) {
  auto img = testing_util::texture(16, 1);
  AugmentConfig cfg;
  cfg.crop_height = cfg.crop_width = 16;
  auto out = augment({img}, cfg, 0);
  EXPECT_TRUE(testing_util::bitwise_equal(out[0], img));
}

TEST(Augment, FlipsAreInvolutions) {
  std::mt19937_64 gen(2);
  auto img = testing_util::random_tensor<float>({3, 5, 7}, gen);
  EXPECT_TRUE(testing_util::bitwise_equal(flip_horizontal(flip_horizontal(img)), img));
  EXPECT_TRUE(testing_util::bitwise_equal(flip_vertical(flip_vertical(img)), img));
  auto h = flip_horizontal(img);
  EXPECT_EQ(h[0], img[6]);
  auto v = flip_vertical(img);
  EXPECT_EQ(v[0], img[4 * 7]);
}

TEST(Augment, CropMatchesIndexing) {
  std::mt19937_64 gen(3);
  auto img = testing_util::random_tensor<float>({3, 6, 8}, gen);
  auto c = crop(img, 2, 3, 3, 4);
  EXPECT_EQ(c.shape(), (Shape{3, 3, 4}));
  for (std::size_t ch = 0; ch < 3; ++ch)
    for (std::size_t y = 0; y < 3; ++y)
      for (std::size_t x = 0; x < 4; ++x) EXPECT_EQ(c[(ch * 3 + y) * 4 + x], img[(ch * 6 + y + 2) * 8 + x + 3]);
  EXPECT_THROW(crop(img, 4, 0, 3, 4), ArgumentError);
}

TEST(Augment, PairKeepsSpatialCorrespondence) {
  auto ref = testing_util::texture(24, 4);
  auto dist = testing_util::add_noise(ref, 0.1, 5);
  std::vector<float> diff(ref.numel());
  for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = dist[i] - ref[i];
  Image diff_img(ref.shape(), diff);
  AugmentConfig cfg;
  cfg.crop_height = 16;
  cfg.crop_width = 12;
  cfg.hflip_probability = 0.5;
  cfg.vflip_probability = 0.5;
  cfg.seed = 9;
  int flipped = 0;
  for (std::uint64_t stream = 0; stream < 16; ++stream) {
    auto out = augment({dist, ref}, cfg, stream);
    auto draw = draw_augment(cfg, 24, 24, stream);
    flipped += draw.hflip + draw.vflip;
    auto expected = apply_augment(diff_img, draw);
    ASSERT_EQ(out[0].shape(), (Shape{3, 16, 12}));
    for (std::size_t i = 0; i < expected.numel(); ++i) EXPECT_EQ(out[0][i] - out[1][i], expected[i]);
  }
  EXPECT_GT(flipped, 0);
}

TEST(Augment, StreamsAreIndependentOfOrder) {
  AugmentConfig cfg;
  cfg.crop_height = 8;
  cfg.crop_width = 8;
  cfg.hflip_probability = 0.5;
  cfg.vflip_probability = 0.5;
  cfg.seed = 3;
  auto a = draw_augment(cfg, 32, 32, 5);
  draw_augment(cfg, 32, 32, 4);
  auto b = draw_augment(cfg, 32, 32, 5);
  EXPECT_EQ(a.top, b.top);
  EXPECT_EQ(a.left, b.left);
  EXPECT_EQ(a.hflip, b.hflip);
  std::set<std::pair<std::size_t, std::size_t>> offsets;
  for (std::uint64_t s = 0; s < 32; ++s) {
    auto d = draw_augment(cfg, 32, 32, s);
    EXPECT_LE(d.top + d.height, 32u);
    EXPECT_LE(d.left + d.width, 32u);
    offsets.insert({d.top, d.left});
  }
  EXPECT_GT(offsets.size(), 1u);
}

TEST(Augment, ShorterSideRangeThenCrop) {
  AugmentConfig cfg;
  cfg.crop_height = 20;
  cfg.crop_width = 20;
  cfg.seed = 1;
  cfg.shorter_side_range = std::make_pair(24, 26);
  auto img = Image::zeros({3, 30, 40});
  for (std::uint64_t s = 0; s < 8; ++s) {
    auto d = draw_augment(cfg, 30, 40, s);
    EXPECT_GE(d.shorter_side, 24u);
    EXPECT_LE(d.shorter_side, 26u);
    EXPECT_EQ(augment({img}, cfg, s)[0].shape(), (Shape{3, 20, 20}));
  }
}

TEST(Augment, Errors) {
  AugmentConfig cfg;
  cfg.crop_height = 40;
  cfg.crop_width = 8;
  EXPECT_THROW(augment({Image::zeros({3, 32, 32})}, cfg, 0), ArgumentError);
  AugmentConfig ok;
  ok.crop_height = 8;
  ok.crop_width = 8;
  EXPECT_THROW(augment({Image::zeros({3, 32, 32}), Image::zeros({3, 16, 16})}, ok, 0), ArgumentError);
}

TEST(ImageIo, RawTensorRoundTripIsBitwise) {
  auto dir = testing_util::scratch_dir("io_raw");
  std::mt19937_64 gen(6);
  auto img = testing_util::random_tensor<float>({3, 5, 9}, gen, -10, 10);
  write_tensor_file(img, dir / "x.t");
  EXPECT_TRUE(testing_util::bitwise_equal(load_image(dir / "x.t"), img));
}

TEST(ImageIo, PngDecodesToUnitRange) {
  auto dir = testing_util::scratch_dir("io_png");
  // RGB fixture written with libpng directly
  const std::vector<png_byte> pixels{0, 128, 255, 10, 20, 30, 255, 255, 255, 1, 2, 3};
  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  png.width = 2;
  png.height = 2;
  png.format = PNG_FORMAT_RGB;
  ASSERT_TRUE(png_image_write_to_file(&png, (dir / "c.png").c_str(), 0, pixels.data(), 0, nullptr));
  auto img = load_image(dir / "c.png");
  ASSERT_EQ(img.shape(), (Shape{3, 2, 2}));
  for (std::size_t y = 0; y < 2; ++y)
    for (std::size_t x = 0; x < 2; ++x)
      for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(img[(c * 2 + y) * 2 + x], pixels[(y * 2 + x) * 3 + c] / 255.0f);

  Tensor<float> map(Shape{1, 1, 3}, {0.0f, 0.5f, 1.0f});
  write_gray_png(map, dir / "g.png");
  auto gray = load_image(dir / "g.png");
  ASSERT_EQ(gray.shape(), (Shape{3, 1, 3}));
  EXPECT_EQ(gray[0], 0.0f);
  EXPECT_EQ(gray[1], 128 / 255.0f);
  EXPECT_EQ(gray[2], 1.0f);
  EXPECT_EQ(gray[3 + 1], gray[1]);
}

TEST(ImageIo, Errors) {
  auto dir = testing_util::scratch_dir("io_err");
  write_text(dir / "junk.bin", "hello world, not an image");
  write_text(dir / "short.t", "topiq-tensor 1 3 4 4\nabc");
  write_text(dir / "bad.t", "topiq-tensor 2 3 4 4\n");
  EXPECT_THROW(load_image(dir / "junk.bin"), DataError);
  EXPECT_THROW(load_image(dir / "short.t"), DataError);
  EXPECT_THROW(load_image(dir / "bad.t"), DataError);
  EXPECT_THROW(load_image(dir / "none.png"), DataError);
}

TEST(Dataset, DecodesImagesAndTargets) {
  auto dir = testing_util::scratch_dir("dataset");
  write_tensor_file(Tensor<float>(Shape{3, 1, 1}, {0.1f, 0.2f, 0.3f}), dir / "a.t");
  write_tensor_file(Tensor<float>(Shape{3, 1, 1}, {0.4f, 0.5f, 0.6f}), dir / "r.t");
  write_text(dir / "fr.csv", "dist_path,ref_path,mos\na.t,r.t,2\nr.t,r.t,4\n");
  write_text(dir / "dist.csv", "dist_path,p1,p2,p3,p4,p5\na.t,0,0,1,0,0\n");
  write_text(dir / "afc.csv", "ref_path,a_path,b_path,p_ab\nr.t,a.t,r.t,0.75\n");
  auto fr = load_dataset(load_manifest(dir / "fr.csv", ManifestKind::mos_fr));
  ASSERT_EQ(fr.size(), 2u);
  EXPECT_EQ(fr.samples[0].images[0][0], 0.1f);
  EXPECT_EQ(fr.samples[0].images[1][0], 0.4f);
  EXPECT_EQ(fr.samples[0].target, 0.0);
  EXPECT_EQ(fr.samples[1].target, 1.0);
  EXPECT_EQ(fr.label_range->max, 4.0);
  auto dist = load_dataset(load_manifest(dir / "dist.csv", ManifestKind::distribution));
  EXPECT_EQ(dist.samples[0].target, 3.0);
  auto afc = load_dataset(load_manifest(dir / "afc.csv", ManifestKind::pairwise));
  EXPECT_EQ(afc.samples[0].images[1][0], 0.1f);
  EXPECT_EQ(afc.samples[0].target, 0.75);

  write_tensor_file(Image::zeros({3, 2, 2}), dir / "big.t");
  write_text(dir / "mixed.csv", "dist_path,ref_path,mos\nbig.t,r.t,2\n");
  EXPECT_THROW(load_dataset(load_manifest(dir / "mixed.csv", ManifestKind::mos_fr)), DataError);
}
