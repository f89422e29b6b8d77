#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "test_util.hpp"
#include "tg3d/data.hpp"
#include "tg3d/encoders.hpp"
#include "tg3d/parsing.hpp"

using namespace tg3d;
using tg3d::testing::temp_dir;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Regression fixture: cosine of the seed-0 encoder's embeddings of an all-zeros
// and an all-ones 32x32 image.
constexpr double kZerosOnesCosine = 0.20122556555312832;

}  // namespace

// ---------------------------------------------------------------- encoders

TEST(TextEncoder, DeterministicAndUnitNorm) {
  HashedTextEncoder enc(64, 0);
  const auto a = enc.encode("blue eyes"), b = enc.encode("blue eyes");
  EXPECT_EQ(a.values, b.values);
  for (const char* s : {"blue eyes", "a face with RED hair", "x"}) EXPECT_NEAR(enc.encode(s).norm(), 1.0, 1e-12);
  EXPECT_THROW(enc.encode("  ,. "), std::invalid_argument);
}

TEST(TextEncoder, WordOrderIsIgnoredAndMatchesTokenSum) {
  HashedTextEncoder enc(32, 3);
  EXPECT_NEAR(cosine(enc.encode("blue eyes"), enc.encode("eyes blue")), 1.0, 1e-12);
  // recompute from the raw token vectors
  const auto u = enc.token_vector("blue"), v = enc.token_vector("eyes");
  std::vector<double> s(u.size());
  for (size_t i = 0; i < s.size(); ++i) s[i] = u[i] + v[i];
  EXPECT_NEAR(cosine(enc.encode("Blue, eyes!").values, s), 1.0, 1e-12);
}

TEST(TextEncoder, TableEncoderLoadsExternalVectors) {
  const auto dir = temp_dir("table");
  {
    std::ofstream out(dir / "table.json");
    out << R"({"dim": 2, "tokens": {"red": [1, 0], "hair": [0, 1]}})";
  }
  EncoderConfig cfg;
  cfg.kind = "external";
  cfg.external_path = (dir / "table.json").string();
  auto enc = make_text_encoder(cfg);
  EXPECT_EQ(enc->dim(), 2);
  const auto e = enc->encode("red hair unknown");
  EXPECT_NEAR(e.values[0], std::sqrt(0.5), 1e-12);
  EXPECT_NEAR(e.values[1], std::sqrt(0.5), 1e-12);
  EXPECT_THROW(enc->encode("unknown"), std::invalid_argument);
  cfg.kind = "other";
  EXPECT_THROW(make_text_encoder(cfg), std::invalid_argument);
}

TEST(ImageEncoder, IdenticalImagesAndRegressionFixture) {
  Rng rng(0);
  ConvImageEncoder enc(ImageEncoderConfig{}, rng);
  Image img(32, 32, 0.3);
  img.at(4, 5, 1) = 0.9;
  EXPECT_NEAR(cosine(enc.encode_image(img), enc.encode_image(img)), 1.0, 1e-12);
  EXPECT_NEAR(enc.encode_image(img).norm(), 1.0, 1e-12);
  const double c = cosine(enc.encode_image(Image(32, 32, 0.0)), enc.encode_image(Image(32, 32, 1.0)));
  EXPECT_NEAR(c, kZerosOnesCosine, 1e-9);
  EXPECT_THROW(enc.encode_image(Image(16, 16, 0.0)), std::invalid_argument);
}

TEST(ImageEncoder, SaveLoadRoundTrip) {
  Rng rng(5);
  ConvImageEncoder enc(ImageEncoderConfig{16, 8, 16, 4}, rng);
  const auto dir = temp_dir("imgenc");
  enc.save(dir / "enc.bin");
  const auto back = ConvImageEncoder::load(dir / "enc.bin");
  EXPECT_EQ(back.params().hash(), enc.params().hash());
  Image img(16, 16, 0.25);
  EXPECT_EQ(back.encode_image(img).values, enc.encode_image(img).values);
}

TEST(IdentityEncoder, SameFaceAcrossPosesIsClose) {
  HistogramIdentityEncoder id;
  Rng rng(11);
  const auto face = random_face(rng);
  PoseDistribution poses;
  const auto a = render_face(face, orbit_camera(-0.4, 0.0, 2.7, 1.4), 32).image;
  const auto b = render_face(face, orbit_camera(0.4, 0.1, 2.7, 1.4), 32).image;
  EXPECT_NEAR(cosine(id.encode(a), id.encode(a)), 1.0, 1e-12);
  EXPECT_GE(cosine(id.encode(a), id.encode(b)), 0.8);
  EXPECT_NEAR(id.encode(a).norm(), 1.0, 1e-12);
}

// ---------------------------------------------------------------- parsing

TEST(Parsing, GroundTruthMasksPassThrough) {
  Rng rng(2);
  auto face = random_face(rng);
  face.glasses = true;  // all five labels present
  const auto fr = render_face(face, PoseDistribution{}.canonical(), 32);
  const auto parts = parse_parts(fr.image, &fr.labels);
  ASSERT_EQ(parts.masks.size(), part_label_names().size());
  for (size_t k = 0; k < parts.masks.size(); ++k) {
    EXPECT_EQ(parts.names[k], part_label_names()[k]);
    for (size_t i = 0; i < fr.labels.labels.size(); ++i)
      ASSERT_EQ(parts.masks[k].on[i], fr.labels.labels[i] == k + 1);
  }
}

TEST(Parsing, RegionGridTilesImage) {
  const auto regions = region_masks(32, 32, 2);
  ASSERT_EQ(regions.size(), 4u);
  std::vector<int> cover(32 * 32, 0);
  for (const auto& m : regions) {
    EXPECT_EQ(m.count(), 16 * 16);
    for (size_t i = 0; i < m.on.size(); ++i) cover[i] += m.on[i];
  }
  for (int c : cover) ASSERT_EQ(c, 1);
  // remainders go to the last row and column
  const auto odd = region_masks(7, 5, 2);
  EXPECT_EQ(odd[0].count(), 3 * 2);
  EXPECT_EQ(odd[3].count(), 4 * 3);
}

TEST(Parsing, BackgroundImageHasNoParts) {
  Image white(32, 32, 1.0);
  try {
    parse_parts(white, nullptr);
    FAIL() << "expected an error";
  } catch (const std::runtime_error& e) {
    EXPECT_STREQ(e.what(), "no parts found");
  }
  Image half = white;
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 16; ++x) half.at(y, x, 0) = 0.0;
  EXPECT_EQ(parse_parts(half, nullptr).masks.size(), 2u);
}

TEST(Parsing, BoundsMatchScan) {
  Mask m{10, 12, std::vector<uint8_t>(120, 0)};
  for (int y = 3; y <= 6; ++y)
    for (int x = 2; x <= 9; ++x) m.on[static_cast<size_t>(y * 12 + x)] = 1;
  int y0 = 99, x0 = 99, y1 = -1, x1 = -1;
  for (int y = 0; y < 10; ++y)
    for (int x = 0; x < 12; ++x)
      if (m.on[static_cast<size_t>(y * 12 + x)]) {
        y0 = std::min(y0, y);
        x0 = std::min(x0, x);
        y1 = std::max(y1, y);
        x1 = std::max(x1, x);
      }
  const auto b = mask_bounds(m);
  EXPECT_EQ(b.y0, y0);
  EXPECT_EQ(b.x0, x0);
  EXPECT_EQ(b.y1, y1);
  EXPECT_EQ(b.x1, x1);
  EXPECT_TRUE(mask_bounds(Mask{4, 4, std::vector<uint8_t>(16, 0)}).empty());
}

TEST(Parsing, CropsOfFullAndHalfMasks) {
  Rng rng(3);
  Tensor x = Tensor::from({1, 3, 8, 8}, rng.normal_vector(192));
  Mask full{8, 8, std::vector<uint8_t>(64, 1)};
  Tensor c = crop_parts(x, 0, {full}, 8);
  for (int i = 0; i < 192; ++i) ASSERT_NEAR(c.at(i), x.at(i), 1e-12);

  // left half: the crop spans only the left columns, and nothing of the right half leaks in
  Mask left{8, 8, std::vector<uint8_t>(64, 0)};
  for (int y = 0; y < 8; ++y)
    for (int xx = 0; xx < 4; ++xx) left.on[static_cast<size_t>(y * 8 + xx)] = 1;
  Tensor l = crop_parts(x, 0, {left}, 8);
  Tensor x2 = Tensor::from(x.shape(), std::vector<double>(x.data().begin(), x.data().end()));
  for (int ch = 0; ch < 3; ++ch)
    for (int y = 0; y < 8; ++y)
      for (int xx = 4; xx < 8; ++xx) x2.mutable_data()[static_cast<size_t>(ch * 64 + y * 8 + xx)] = 1e3;
  Tensor l2 = crop_parts(x2, 0, {left}, 8);
  for (int i = 0; i < 192; ++i) ASSERT_EQ(l.at(i), l2.at(i));
  Mask empty{8, 8, std::vector<uint8_t>(64, 0)};
  EXPECT_THROW(crop_parts(x, 0, {empty}, 8), std::invalid_argument);
}

// ---------------------------------------------------------------- data

TEST(Data, SynthesisIsByteDeterministic) {
  const auto a = temp_dir("synth_a"), b = temp_dir("synth_b");
  synthesize_toy_dataset(1, 9, a);
  synthesize_toy_dataset(1, 9, b);
  EXPECT_EQ(slurp(a / "manifest.jsonl"), slurp(b / "manifest.jsonl"));
  const auto m = load_dataset(a);
  ASSERT_EQ(m.records.size(), 1u);
  EXPECT_EQ(slurp(a / m.records[0].image), slurp(b / m.records[0].image));
  EXPECT_EQ(m.records[0].attributes.size(), static_cast<size_t>(attribute_count()));
}

TEST(Data, CaptionsNameTheAttributes) {
  Rng rng(4);
  for (int i = 0; i < 20; ++i) {
    const auto face = random_face(rng);
    const auto attrs = face.attributes();
    for (const auto& cap : face_captions(face)) {
      const auto toks = TextInput(cap).tokens;
      for (int k = 0; k < attribute_count(); ++k) {
        if (attrs[static_cast<size_t>(k)] == 0.0) continue;
        // every token of a present attribute appears in the caption
        for (const auto& t : TextInput(attribute_names()[static_cast<size_t>(k)]).tokens)
          EXPECT_NE(std::find(toks.begin(), toks.end(), t), toks.end()) << cap << " / " << t;
      }
    }
  }
}

TEST(Data, LoaderNamesBadRecordsAndPaths) {
  const auto dir = temp_dir("bad");
  synthesize_toy_dataset(3, 1, dir);
  const std::string good = slurp(dir / "manifest.jsonl");

  std::vector<std::string> lines;
  std::istringstream ss(good);
  for (std::string l; std::getline(ss, l);) lines.push_back(l);
  ASSERT_EQ(lines.size(), 3u);

  auto write = [&](const std::vector<std::string>& ls) {
    std::ofstream out(dir / "manifest.jsonl", std::ios::trunc);
    for (const auto& l : ls) out << l << "\n";
  };
  auto j = nlohmann::json::parse(lines[1]);
  auto cam = j["camera"].get<std::vector<double>>();
  cam.pop_back();
  j["camera"] = cam;
  write({lines[0], j.dump(), lines[2]});
  try {
    load_dataset(dir);
    FAIL();
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("record 1"), std::string::npos) << e.what();
  }

  write(lines);
  const auto m = load_dataset(dir);
  std::filesystem::remove(dir / m.records[2].image);
  try {
    load_dataset(dir);
    FAIL();
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find(m.records[2].image), std::string::npos) << e.what();
  }
}

TEST(Data, SampleBatchIsReproducible) {
  const auto dir = temp_dir("batch");
  synthesize_toy_dataset(6, 2, dir, SynthOptions{16, 0.5, {}});
  const Dataset data = load_images(load_dataset(dir));
  Rng r1(8), r2(8);
  const auto a = sample_batch(data, 5, 4, r1), b = sample_batch(data, 5, 4, r2);
  for (size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].record, b[i].record);
    EXPECT_EQ(a[i].z, b[i].z);
    EXPECT_EQ(a[i].text.raw, b[i].text.raw);
  }
  const auto only = sample_batch(data, 4, 4, r1, {3});
  for (const auto& s : only) EXPECT_EQ(s.record, 3u);
}

TEST(Data, SplitHoldsOutEveryPeriodthRecord) {
  const auto s = split_records(10, 4);
  EXPECT_EQ(s.held_out, (std::vector<size_t>{3, 7}));
  EXPECT_EQ(s.train.size(), 8u);
}
