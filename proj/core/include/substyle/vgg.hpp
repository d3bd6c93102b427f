#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "substyle/cnn.hpp"

namespace substyle::cnn {

// Layer plan entry: a conv (with in/out channels) or a parameterless layer.
struct LayerPlan {
  sswt::Kind kind;
  std::string name;
  int in = 0;
  int out = 0;
  bool output_layer = false;  // last conv of a decoder (no relu follows)
};

// VGG-19 slice ending at pool<level>.
std::vector<LayerPlan> vgg19_encoder_plan(int level);
// Mirror of the encoder slice: nearest 2x upsampling replaces each pooling
// layer, convolutions run in reverse with swapped channel counts, and the
// final conv maps to RGB without a relu.
std::vector<LayerPlan> mirrored_decoder_plan(int level);

// Fills a conv's weight (out*in*9) and bias (out).
using WeightFiller =
    std::function<void(const LayerPlan&, std::vector<float>& weight, std::vector<float>& bias)>;

Network build_network(const std::vector<LayerPlan>& plan, const WeightFiller& fill,
                      std::string name = {});

// Untrained weights derived from a seed and the layer name, so slices sharing
// a layer name share its weights. Element i of a layer is
//   u = splitmix64(splitmix64(seed ^ fnv1a(name)) + i) >> 11, scaled by 2^-53
//   w = (2u - 1) * sqrt(6 / (9 * in))       (bias: (2u - 1) * 0.05)
// with the bias stream using the name "<name>.bias". Decoder output layers
// get +0.5 added to the bias. Intended for smoke tests and benchmarks.
WeightFiller seeded_he_uniform(std::uint64_t seed);
std::uint64_t splitmix64(std::uint64_t x);

// Writes enc1..enc5, dec1..dec5 and manifest.json into `dir`.
void write_seeded_network_set(const std::filesystem::path& dir, std::uint64_t seed,
                              int max_level = kMaxLevel);

}  // namespace substyle::cnn
