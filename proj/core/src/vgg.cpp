#include "substyle/vgg.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "substyle/error.hpp"

namespace substyle::cnn {

namespace {

// Conv channel pairs of the five VGG-19 blocks.
const std::vector<std::vector<std::pair<int, int>>>& vgg19_blocks() {
  static const std::vector<std::vector<std::pair<int, int>>> blocks = {
      {{3, 64}, {64, 64}},
      {{64, 128}, {128, 128}},
      {{128, 256}, {256, 256}, {256, 256}, {256, 256}},
      {{256, 512}, {512, 512}, {512, 512}, {512, 512}},
      {{512, 512}, {512, 512}, {512, 512}, {512, 512}},
  };
  return blocks;
}

void check_plan_level(int level) {
  if (level < kMinLevel || level > kMaxLevel) {
    fail(ErrorKind::kConfig, ErrorCode::kLevelOutOfRange,
         "level " + std::to_string(level) + " outside 1..5");
  }
}

}  // namespace

std::vector<LayerPlan> vgg19_encoder_plan(int level) {
  check_plan_level(level);
  std::vector<LayerPlan> plan;
  const auto& blocks = vgg19_blocks();
  for (int b = 0; b < level; ++b) {
    for (std::size_t i = 0; i < blocks[b].size(); ++i) {
      const std::string id = std::to_string(b + 1) + "_" + std::to_string(i + 1);
      plan.push_back({sswt::Kind::kConv, "conv" + id, blocks[b][i].first,
                      blocks[b][i].second});
      plan.push_back({sswt::Kind::kRelu, "relu" + id});
    }
    plan.push_back({sswt::Kind::kMaxPool, "pool" + std::to_string(b + 1)});
  }
  return plan;
}

std::vector<LayerPlan> mirrored_decoder_plan(int level) {
  check_plan_level(level);
  std::vector<LayerPlan> plan;
  const auto& blocks = vgg19_blocks();
  for (int b = level - 1; b >= 0; --b) {
    plan.push_back({sswt::Kind::kUpsample, "up" + std::to_string(b + 1)});
    for (std::size_t k = blocks[b].size(); k-- > 0;) {
      const std::string id = std::to_string(b + 1) + "_" + std::to_string(k + 1);
      const bool last = b == 0 && k == 0;
      plan.push_back({sswt::Kind::kConv, "dec" + std::to_string(level) + "_conv" + id,
                      blocks[b][k].second, blocks[b][k].first, last});
      if (!last) plan.push_back({sswt::Kind::kRelu, "dec_relu" + id});
    }
  }
  return plan;
}

Network build_network(const std::vector<LayerPlan>& plan, const WeightFiller& fill,
                      std::string name) {
  std::vector<Layer> layers;
  for (const LayerPlan& p : plan) {
    switch (p.kind) {
      case sswt::Kind::kConv: {
        Conv3x3 conv;
        conv.name = p.name;
        conv.in = p.in;
        conv.out = p.out;
        conv.weight.assign(static_cast<std::size_t>(p.out) * p.in * 9, 0.0f);
        conv.bias.assign(static_cast<std::size_t>(p.out), 0.0f);
        if (fill) fill(p, conv.weight, conv.bias);
        layers.emplace_back(std::move(conv));
        break;
      }
      case sswt::Kind::kRelu: layers.emplace_back(Relu{}); break;
      case sswt::Kind::kMaxPool: layers.emplace_back(MaxPool2x2{}); break;
      case sswt::Kind::kUpsample: layers.emplace_back(UpsampleNearest2x{}); break;
      case sswt::Kind::kTensor:
        fail(ErrorKind::kConfig, ErrorCode::kUnknownLayerKind, "tensor in layer plan");
    }
  }
  return Network(std::move(layers), std::move(name));
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

namespace {

void fill_stream(std::uint64_t seed, const std::string& name, double scale, double offset,
                 std::vector<float>& out) {
  const auto* bytes = reinterpret_cast<const std::uint8_t*>(name.data());
  const std::uint64_t key = splitmix64(seed ^ sswt::fnv1a({bytes, name.size()}));
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double u = static_cast<double>(splitmix64(key + i) >> 11) * 0x1.0p-53;
    out[i] = static_cast<float>((2.0 * u - 1.0) * scale + offset);
  }
}

}  // namespace

WeightFiller seeded_he_uniform(std::uint64_t seed) {
  return [seed](const LayerPlan& plan, std::vector<float>& weight, std::vector<float>& bias) {
    fill_stream(seed, plan.name, std::sqrt(6.0 / (9.0 * plan.in)), 0.0, weight);
    fill_stream(seed, plan.name + ".bias", 0.05, plan.output_layer ? 0.5 : 0.0, bias);
  };
}

void write_seeded_network_set(const std::filesystem::path& dir, std::uint64_t seed,
                              int max_level) {
  std::filesystem::create_directories(dir);
  const auto fill = seeded_he_uniform(seed);
  for (int level = 1; level <= max_level; ++level) {
    const std::string l = std::to_string(level);
    save_network(build_network(vgg19_encoder_plan(level), fill, "enc" + l),
                 dir / ("enc" + l + ".sswt"));
    save_network(build_network(mirrored_decoder_plan(level), fill, "dec" + l),
                 dir / ("dec" + l + ".sswt"));
  }
  nlohmann::json manifest = {{"preprocess", "none"},
                             {"source", "seeded_he_uniform"},
                             {"seed", seed}};
  std::ofstream(dir / "manifest.json") << manifest.dump(2) << "\n";
}

}  // namespace substyle::cnn
