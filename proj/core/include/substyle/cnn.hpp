#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "substyle/linalg.hpp"
#include "substyle/sswt.hpp"

namespace substyle::cnn {

// Channel-major activation tensor.
struct Tensor {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<float> data;

  Tensor() = default;
  Tensor(int c, int h, int w, float fill = 0.0f)
      : channels(c), height(h), width(w),
        data(static_cast<std::size_t>(c) * h * w, fill) {}

  std::size_t plane() const { return static_cast<std::size_t>(height) * width; }
  float& at(int c, int y, int x) { return data[c * plane() + static_cast<std::size_t>(y) * width + x]; }
  float at(int c, int y, int x) const { return data[c * plane() + static_cast<std::size_t>(y) * width + x]; }
  friend bool operator==(const Tensor&, const Tensor&) = default;
};

// RGB image, values in [0,1], stored 3 x H x W.
struct Image {
  Tensor pixels;

  Image() = default;
  Image(int height, int width, float fill = 0.0f) : pixels(3, height, width, fill) {}
  explicit Image(Tensor t);

  int height() const { return pixels.height; }
  int width() const { return pixels.width; }
  friend bool operator==(const Image&, const Image&) = default;
};

inline constexpr int kMinLevel = 1;
inline constexpr int kMaxLevel = 5;
inline constexpr int kMinImageSide = 32;

// Channels emitted by the VGG-19 pooling layer of each level.
inline constexpr std::array<int, 6> kLevelChannels = {3, 64, 128, 256, 512, 512};

// Encoder output at a pooling layer. `source_height/width` record the image
// size before edge padding so the decoder can crop back.
struct FeatureMap {
  Tensor tensor;
  int level = 0;
  int source_height = 0;
  int source_width = 0;

  int channels() const { return tensor.channels; }
  int height() const { return tensor.height; }
  int width() const { return tensor.width; }

  // C x (H*W) view as a matrix copy.
  linalg::Matrix as_matrix() const;
  // Same geometry, new values from a C x (H*W) matrix.
  FeatureMap with_values(const linalg::Matrix& m) const;
};

// ---- layers -----------------------------------------------------------------

struct Conv3x3 {
  std::string name;
  int in = 0;
  int out = 0;
  std::vector<float> weight;  // out x in x 3 x 3
  std::vector<float> bias;    // out
  // Per-tap weight matrices, tap-major: [9][out][in]. Derived from `weight`.
  std::vector<float> taps;

  void prepare();
};
struct Relu {};
struct MaxPool2x2 {};
struct UpsampleNearest2x {};

using Layer = std::variant<Conv3x3, Relu, MaxPool2x2, UpsampleNearest2x>;

// Pixel preprocessing required by a converted checkpoint.
enum class Preprocess {
  kNone,      // RGB in [0,1]
  kCaffeBgr,  // BGR, scaled to [0,255], ImageNet mean subtracted
};
Preprocess parse_preprocess(const std::string& name);
std::string to_string(Preprocess p);

class Network {
 public:
  Network() = default;
  explicit Network(std::vector<Layer> layers, std::string name = {});

  const std::vector<Layer>& layers() const { return layers_; }
  const std::string& name() const { return name_; }
  int input_channels() const { return input_channels_; }
  int output_channels() const { return output_channels_; }
  int pool_count() const { return pools_; }
  int upsample_count() const { return upsamples_; }

  Tensor forward(Tensor x) const;
  // Activations after the first `n` layers for every n in `taps`, in
  // ascending order of n.
  std::vector<Tensor> forward_taps(Tensor x, std::vector<std::size_t> taps) const;
  // Same layer kinds and identical parameters as the leading layers of `other`.
  bool is_prefix_of(const Network& other) const;

  std::vector<sswt::Record> to_records() const;
  static Network from_records(std::span<const sswt::Record> records,
                              std::string name = {});

 private:
  std::vector<Layer> layers_;
  std::string name_;
  int input_channels_ = 0;
  int output_channels_ = 0;
  int pools_ = 0;
  int upsamples_ = 0;
};

Network load_network(const std::filesystem::path& path);
void save_network(const Network& net, const std::filesystem::path& path);

// ---- primitive forward passes -----------------------------------------------

// 3x3 convolution with 1-pixel reflection padding.
Tensor conv3x3(const Conv3x3& layer, const Tensor& x);
Tensor relu(Tensor x);
Tensor maxpool2x2(const Tensor& x);
Tensor upsample_nearest(const Tensor& x);

// Reflect-101 padding (edge pixel not repeated); needs side >= 2.
Tensor reflection_pad(const Tensor& x, int pad);
// Edge replication up to the given size.
Tensor edge_pad(const Tensor& x, int height, int width);
Tensor crop(const Tensor& x, int height, int width);

// ---- encoder / decoder --------------------------------------------------------

FeatureMap encode(const Network& net, const Image& img, int level,
                  Preprocess pre = Preprocess::kNone);
Image decode(const Network& net, const FeatureMap& f,
             Preprocess pre = Preprocess::kNone);

// Encoder/decoder pairs for every level, loaded lazily from a directory
// holding enc{1..5}.sswt, dec{1..5}.sswt and an optional manifest.json with a
// "preprocess" entry. Thread-safe.
class NetworkSet {
 public:
  explicit NetworkSet(std::filesystem::path dir);

  const std::filesystem::path& dir() const { return dir_; }
  Preprocess preprocess() const { return preprocess_; }

  bool has_level(int level) const;
  const Network& encoder(int level) const;
  const Network& decoder(int level) const;

  FeatureMap encode(const Image& img, int level) const;
  // Encodes at several levels; results equal per-level encode() bitwise.
  // Encoders that are prefixes of the deepest one share a single pass.
  std::vector<FeatureMap> encode_levels(const Image& img, std::span<const int> levels) const;
  Image decode(const FeatureMap& f) const;

 private:
  const Network& get(const std::string& stem, int level) const;
  bool shares_prefix(int level, int deepest) const;

  std::filesystem::path dir_;
  Preprocess preprocess_ = Preprocess::kNone;
  mutable std::mutex mutex_;
  mutable std::map<std::string, std::shared_ptr<const Network>> cache_;
  mutable std::map<std::pair<int, int>, bool> prefix_cache_;
};

// ---- image I/O --------------------------------------------------------------

Image read_image(const std::filesystem::path& path);  // PNG or JPEG
void write_png(const Image& img, const std::filesystem::path& path);
void write_gray_png(const std::vector<std::uint8_t>& pixels, int height, int width,
                    const std::filesystem::path& path);
// Box-filter downscale so max(height, width) <= max_side; identity otherwise.
Image limit_size(const Image& img, int max_side);
Image clamp01(Image img);
double psnr(const Image& a, const Image& b);

}  // namespace substyle::cnn
