#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include <json.hpp>

#include "substyle/cnn.hpp"
#include "substyle/vgg.hpp"
#include "test_support.hpp"

namespace {

using namespace substyle;
using namespace substyle::cnn;
using substyle::testing::TempDir;

Tensor random_tensor(int c, int h, int w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  Tensor t(c, h, w);
  for (float& v : t.data) v = u(rng);
  return t;
}

Conv3x3 random_conv(int in, int out, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(-0.5f, 0.5f);
  Conv3x3 c;
  c.name = "c";
  c.in = in;
  c.out = out;
  c.weight.resize(static_cast<std::size_t>(out) * in * 9);
  c.bias.resize(out);
  for (float& v : c.weight) v = u(rng);
  for (float& v : c.bias) v = u(rng);
  c.prepare();
  return c;
}

// Direct convolution with reflect-101 indices, in double.
Tensor naive_conv(const Conv3x3& c, const Tensor& x) {
  auto reflect = [](int i, int n) { return i < 0 ? -i : (i >= n ? 2 * n - 2 - i : i); };
  Tensor out(c.out, x.height, x.width);
  for (int o = 0; o < c.out; ++o) {
    for (int y = 0; y < x.height; ++y) {
      for (int xx = 0; xx < x.width; ++xx) {
        double acc = c.bias[o];
        for (int i = 0; i < c.in; ++i) {
          for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
              const int sy = reflect(y + ky - 1, x.height);
              const int sx = reflect(xx + kx - 1, x.width);
              acc += static_cast<double>(c.weight[((o * c.in + i) * 3 + ky) * 3 + kx]) *
                     x.at(i, sy, sx);
            }
          }
        }
        out.at(o, y, xx) = static_cast<float>(acc);
      }
    }
  }
  return out;
}

double max_diff(const Tensor& a, const Tensor& b) {
  EXPECT_EQ(a.channels, b.channels);
  EXPECT_EQ(a.height, b.height);
  EXPECT_EQ(a.width, b.width);
  double m = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    m = std::max(m, static_cast<double>(std::abs(a.data[i] - b.data[i])));
  }
  return m;
}

TEST(Primitives, MaxPool) {
  Tensor t(1, 2, 2);
  t.data = {1, 2, 3, 4};
  const Tensor p = maxpool2x2(t);
  ASSERT_EQ(p.height, 1);
  ASSERT_EQ(p.width, 1);
  EXPECT_EQ(p.data[0], 4.0f);
}

TEST(Primitives, Upsample) {
  Tensor t(1, 1, 1);
  t.data = {5};
  const Tensor u = upsample_nearest(t);
  EXPECT_EQ(u.height, 2);
  EXPECT_EQ(u.data, (std::vector<float>{5, 5, 5, 5}));
}

TEST(Primitives, UpsampleAfterPoolIsIdentityOnBlockConstantImages) {
  Tensor small = random_tensor(3, 6, 5, 1);
  const Tensor blocky = upsample_nearest(small);
  EXPECT_EQ(upsample_nearest(maxpool2x2(blocky)), blocky);
  EXPECT_EQ(maxpool2x2(blocky), small);
}

TEST(Primitives, Relu) {
  Tensor t(1, 1, 3);
  t.data = {-1, 0, 2};
  EXPECT_EQ(relu(t).data, (std::vector<float>{0, 0, 2}));
}

TEST(Primitives, ReflectionPadIsReflect101) {
  Tensor t(1, 3, 3);
  t.data = {1, 2, 3, 4, 5, 6, 7, 8, 9};
  const Tensor p = reflection_pad(t, 1);
  ASSERT_EQ(p.height, 5);
  ASSERT_EQ(p.width, 5);
  EXPECT_EQ(p.at(0, 0, 0), 5.0f);
  EXPECT_EQ(p.at(0, 0, 1), 4.0f);
  EXPECT_EQ(p.at(0, 2, 4), 5.0f);
  EXPECT_EQ(p.at(0, 4, 2), 5.0f);
  EXPECT_EQ(p.at(0, 4, 4), 5.0f);
  EXPECT_THROW(reflection_pad(Tensor(1, 1, 4), 1), Error);
}

TEST(Primitives, IdentityKernelLeavesInputUnchanged) {
  const int c = 4;
  Conv3x3 conv;
  conv.in = conv.out = c;
  conv.weight.assign(static_cast<std::size_t>(c) * c * 9, 0.0f);
  conv.bias.assign(c, 0.0f);
  for (int i = 0; i < c; ++i) conv.weight[(i * c + i) * 9 + 4] = 1.0f;
  conv.prepare();
  const Tensor x = random_tensor(c, 9, 11, 2);
  EXPECT_EQ(conv3x3(conv, x), x);
}

TEST(Primitives, ConvMatchesDirectReference) {
  // Small-input path, tap path, and a plane wider than one column block.
  for (auto [in, out, h, w] : {std::array{3, 5, 7, 9}, std::array{16, 8, 12, 10},
                               std::array{12, 6, 40, 37}}) {
    const Conv3x3 conv = random_conv(in, out, static_cast<std::uint64_t>(in * 100 + out));
    const Tensor x = random_tensor(in, h, w, 5);
    EXPECT_LT(max_diff(conv3x3(conv, x), naive_conv(conv, x)), 1e-4) << in << "->" << out;
  }
}

TEST(Primitives, ConvChannelMismatch) {
  const Conv3x3 conv = random_conv(3, 4, 1);
  EXPECT_THROW(conv3x3(conv, random_tensor(2, 4, 4, 1)), Error);
}

TEST(Network, ShapeChainIsValidated) {
  std::vector<Layer> layers{random_conv(3, 4, 1), Relu{}, random_conv(5, 2, 2)};
  EXPECT_THROW(Network(std::move(layers)), Error);
}

TEST(Network, RecordsRoundTrip) {
  const Network net = build_network(vgg19_encoder_plan(2), seeded_he_uniform(3), "enc2");
  const Network back = Network::from_records(net.to_records(), "enc2");
  EXPECT_TRUE(back.is_prefix_of(net));
  EXPECT_TRUE(net.is_prefix_of(back));
  EXPECT_EQ(back.pool_count(), 2);
  EXPECT_EQ(back.output_channels(), 128);
}

TEST(Network, ForwardTapsEqualsTruncatedForward) {
  const Network net = build_network(vgg19_encoder_plan(2), seeded_he_uniform(3), "enc2");
  const Network short_net = build_network(vgg19_encoder_plan(1), seeded_he_uniform(3), "enc1");
  const Tensor x = random_tensor(3, 32, 32, 4);
  const auto taps = net.forward_taps(x, {short_net.layers().size(), net.layers().size()});
  EXPECT_EQ(taps[0], short_net.forward(x));
  EXPECT_EQ(taps[1], net.forward(x));
  EXPECT_TRUE(short_net.is_prefix_of(net));
  EXPECT_FALSE(net.is_prefix_of(short_net));
}

TEST(LoadNetwork, SeededSetHasArchitectureChannels) {
  TempDir dir("nets");
  write_seeded_network_set(dir.path(), 1, 4);
  const Network enc4 = load_network(dir / "enc4.sswt");
  EXPECT_EQ(enc4.output_channels(), 512);
  EXPECT_EQ(enc4.pool_count(), 4);
  const Network dec4 = load_network(dir / "dec4.sswt");
  EXPECT_EQ(dec4.input_channels(), 512);
  EXPECT_EQ(dec4.output_channels(), 3);
  EXPECT_EQ(dec4.upsample_count(), 4);
}

TEST(LoadNetwork, CorruptFilesReportDistinctErrors) {
  TempDir dir("corrupt");
  save_network(build_network(vgg19_encoder_plan(1), seeded_he_uniform(2), "enc1"),
               dir / "enc1.sswt");
  std::ifstream in(dir / "enc1.sswt", std::ios::binary);
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), {});
  auto write = [&](const std::string& name, const std::vector<char>& b) {
    std::ofstream(dir / name, std::ios::binary).write(b.data(), static_cast<long>(b.size()));
    return dir / name;
  };
  auto code = [](const std::filesystem::path& p) {
    try {
      load_network(p);
    } catch (const Error& e) {
      return std::string(e.what());
    }
    return std::string("ok");
  };
  EXPECT_EQ(code(write("trunc.sswt", {bytes.begin(), bytes.begin() + 100})),
            "unexpected end of payload");
  auto magic = bytes;
  std::memcpy(magic.data(), "XXXX", 4);
  EXPECT_EQ(code(write("magic.sswt", magic)), "bad magic");
  auto sum = bytes;
  sum[200] ^= 1;
  EXPECT_EQ(code(write("sum.sswt", sum)), "checksum mismatch");
}

TEST(Encode, ShapeLawAcrossLevelsAndSizes) {
  TempDir dir("shape");
  write_seeded_network_set(dir.path(), 5, 3);
  NetworkSet nets(dir.path());
  for (int level = 1; level <= 3; ++level) {
    for (auto [h, w] : {std::pair{32, 32}, std::pair{40, 56}, std::pair{37, 33}}) {
      const Image img = substyle::testing::synthetic_image(h, w, 3);
      const FeatureMap f = nets.encode(img, level);
      const int factor = 1 << level;
      EXPECT_EQ(f.channels(), kLevelChannels[level]);
      EXPECT_EQ(f.height(), (h + factor - 1) / factor);
      EXPECT_EQ(f.width(), (w + factor - 1) / factor);
      const Image back = nets.decode(f);
      EXPECT_EQ(back.height(), h);
      EXPECT_EQ(back.width(), w);
    }
  }
}

TEST(Encode, Level4On256Image) {
  const Network enc = build_network(vgg19_encoder_plan(4), seeded_he_uniform(8), "enc4");
  const FeatureMap f = encode(enc, substyle::testing::synthetic_image(256, 256, 1), 4);
  EXPECT_EQ(f.channels(), 512);
  EXPECT_EQ(f.height(), 16);
  EXPECT_EQ(f.width(), 16);
}

TEST(Encode, ZeroWeightsYieldRectifiedBias) {
  const auto plan = vgg19_encoder_plan(2);
  const Network net = build_network(plan, [](const LayerPlan&, auto& w, auto& b) {
    std::fill(w.begin(), w.end(), 0.0f);
    for (std::size_t i = 0; i < b.size(); ++i) b[i] = i % 3 == 0 ? -0.25f : 0.1f * i;
  });
  const FeatureMap f = encode(net, substyle::testing::synthetic_image(64, 64, 2), 2);
  for (int c = 0; c < f.channels(); ++c) {
    const float expected = std::max(0.0f, c % 3 == 0 ? -0.25f : 0.1f * c);
    for (int y = 0; y < f.height(); ++y)
      for (int x = 0; x < f.width(); ++x) ASSERT_EQ(f.tensor.at(c, y, x), expected);
  }
}

TEST(Encode, LevelChecks) {
  const Network enc = build_network(vgg19_encoder_plan(1), seeded_he_uniform(8), "enc1");
  const Image img = substyle::testing::synthetic_image(32, 32, 1);
  EXPECT_THROW(encode(enc, img, 0), Error);
  EXPECT_THROW(encode(enc, img, 6), Error);
  EXPECT_THROW(encode(enc, img, 2), Error);
  EXPECT_THROW(encode(enc, substyle::testing::synthetic_image(16, 40, 1), 1), Error);
}

TEST(Decode, ZeroFeaturesZeroBiasGiveConstantImage) {
  const Network dec = build_network(mirrored_decoder_plan(2), [](const LayerPlan& p, auto& w,
                                                                auto& b) {
    seeded_he_uniform(4)(p, w, b);
    std::fill(b.begin(), b.end(), 0.0f);
  });
  FeatureMap f;
  f.tensor = Tensor(128, 8, 8);
  f.level = 2;
  const Image img = decode(dec, f);
  EXPECT_EQ(img.height(), 32);
  for (float v : img.pixels.data) ASSERT_EQ(v, img.pixels.data[0]);
}

TEST(Decode, LevelMismatch) {
  const Network dec = build_network(mirrored_decoder_plan(2), seeded_he_uniform(4));
  FeatureMap f;
  f.tensor = Tensor(64, 16, 16);
  f.level = 1;
  EXPECT_THROW(decode(dec, f), Error);
}

TEST(NetworkSet, EncodeLevelsEqualsSeparateEncodes) {
  TempDir dir("levels");
  write_seeded_network_set(dir.path(), 9, 3);
  NetworkSet nets(dir.path());
  const Image img = substyle::testing::synthetic_image(48, 40, 6);
  const std::vector<int> levels{3, 2, 1};
  const auto all = nets.encode_levels(img, levels);
  for (std::size_t i = 0; i < levels.size(); ++i) {
    EXPECT_EQ(all[i].tensor, nets.encode(img, levels[i]).tensor);
  }
}

TEST(NetworkSet, MissingNetwork) {
  TempDir dir("missing");
  NetworkSet nets(dir.path());
  EXPECT_FALSE(nets.has_level(1));
  try {
    nets.encoder(1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kMissingNetwork);
  }
}

TEST(ImageIo, PngRoundTripIsExactFor8BitValues) {
  TempDir dir("png");
  Image img(33, 35);
  for (std::size_t i = 0; i < img.pixels.data.size(); ++i) {
    img.pixels.data[i] = static_cast<float>(i % 256) / 255.0f;
  }
  write_png(img, dir / "a.png");
  EXPECT_EQ(read_image(dir / "a.png"), img);
  EXPECT_TRUE(std::isinf(psnr(img, img)));
}

TEST(ImageIo, LimitSize) {
  const Image img = substyle::testing::synthetic_image(100, 60, 1);
  const Image small = limit_size(img, 50);
  EXPECT_EQ(small.height(), 50);
  EXPECT_EQ(small.width(), 30);
  EXPECT_EQ(limit_size(img, 1024), img);
}

// ---- committed golden fixtures ---------------------------------------------

class Fixtures : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    std::ifstream in(std::filesystem::path(SUBSTYLE_FIXTURE_DIR) / "fixtures.json");
    listing_ = nlohmann::json::parse(in);
    dir_ = new TempDir("fixnets");
    write_seeded_network_set(dir_->path(), listing_["seed"].get<std::uint64_t>());
  }
  static void TearDownTestSuite() { delete dir_; }

  static nlohmann::json listing_;
  static TempDir* dir_;
};
nlohmann::json Fixtures::listing_;
TempDir* Fixtures::dir_ = nullptr;

TEST_F(Fixtures, EncoderParityAndDecodePsnrAtAllLevels) {
  NetworkSet nets(dir_->path());
  const std::filesystem::path root(SUBSTYLE_FIXTURE_DIR);
  const Image img = read_image(root / listing_["image"].get<std::string>());
  for (int level = 1; level <= 5; ++level) {
    const auto& entry = listing_["levels"][std::to_string(level)];
    const auto records = sswt::read_file(root / entry["file"].get<std::string>());
    const sswt::Record& golden = sswt::require(records, "features");
    const FeatureMap f = nets.encode(img, level);
    ASSERT_EQ(golden.dims, (std::vector<std::uint32_t>{static_cast<std::uint32_t>(f.channels()),
                                                       static_cast<std::uint32_t>(f.height()),
                                                       static_cast<std::uint32_t>(f.width())}));
    double worst = 0.0;
    for (std::size_t i = 0; i < golden.payload.size(); ++i) {
      worst = std::max(worst, static_cast<double>(std::abs(golden.payload[i] - f.tensor.data[i])));
    }
    EXPECT_LT(worst, 1e-3) << "level " << level;

    const Image decoded = nets.decode(f);
    const sswt::Record& golden_dec = sswt::require(records, "decoded");
    double worst_dec = 0.0;
    for (std::size_t i = 0; i < golden_dec.payload.size(); ++i) {
      worst_dec = std::max(
          worst_dec, static_cast<double>(std::abs(golden_dec.payload[i] - decoded.pixels.data[i])));
    }
    EXPECT_LT(worst_dec, 1e-3) << "level " << level;
    EXPECT_GE(psnr(img, decoded), entry["decode_psnr_db"].get<double>() - 0.5) << level;
  }
}

// Reconstruction quality needs converted pretrained weights, which are not
// shipped; point SUBSTYLE_PRETRAINED_WEIGHTS at a converted set to run it.
TEST(Pretrained, DecodeEncodePsnrAbove20dB) {
  const char* dir = std::getenv("SUBSTYLE_PRETRAINED_WEIGHTS");
  if (dir == nullptr) GTEST_SKIP() << "SUBSTYLE_PRETRAINED_WEIGHTS not set";
  NetworkSet nets(dir);
  const Image img = read_image(std::filesystem::path(SUBSTYLE_FIXTURE_DIR) / "fixture_image.png");
  for (int level = 1; level <= 3; ++level) {
    EXPECT_GT(psnr(img, nets.decode(nets.encode(img, level))), 20.0) << level;
  }
}

}  // namespace
