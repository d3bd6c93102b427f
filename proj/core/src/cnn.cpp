#include "substyle/cnn.hpp"

#include "dense.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "substyle/error.hpp"

namespace substyle::cnn {

namespace {

[[noreturn]] void shape_error(const std::string& msg) {
  fail(ErrorKind::kFormat, ErrorCode::kShapeMismatch, msg);
}

}  // namespace

Image::Image(Tensor t) : pixels(std::move(t)) {
  if (pixels.channels != 3) {
    fail(ErrorKind::kConfig, ErrorCode::kShapeMismatch,
         "image must have 3 channels, got " + std::to_string(pixels.channels));
  }
}

linalg::Matrix FeatureMap::as_matrix() const {
  return linalg::Matrix(static_cast<std::size_t>(tensor.channels), tensor.plane(),
                        tensor.data);
}

FeatureMap FeatureMap::with_values(const linalg::Matrix& m) const {
  if (m.rows() != static_cast<std::size_t>(tensor.channels) ||
      m.cols() != tensor.plane()) {
    fail(ErrorKind::kConfig, ErrorCode::kShapeMismatch,
         "feature values do not match the feature map geometry");
  }
  FeatureMap out = *this;
  out.tensor.data = m.values();
  return out;
}

void Conv3x3::prepare() {
  taps.assign(static_cast<std::size_t>(9) * out * in, 0.0f);
  for (int o = 0; o < out; ++o)
    for (int i = 0; i < in; ++i)
      for (int t = 0; t < 9; ++t)
        taps[(static_cast<std::size_t>(t) * out + o) * in + i] =
            weight[(static_cast<std::size_t>(o) * in + i) * 9 + t];
}

Preprocess parse_preprocess(const std::string& name) {
  if (name == "none") return Preprocess::kNone;
  if (name == "caffe_bgr") return Preprocess::kCaffeBgr;
  fail(ErrorKind::kConfig, ErrorCode::kGeneric, "unknown preprocess flag '" + name + "'");
}

std::string to_string(Preprocess p) {
  return p == Preprocess::kCaffeBgr ? "caffe_bgr" : "none";
}

// ---- primitives ---------------------------------------------------------------

Tensor reflection_pad(const Tensor& x, int pad) {
  if (pad > 0 && (x.height <= pad || x.width <= pad)) {
    shape_error("reflection padding needs sides larger than the pad");
  }
  Tensor out(x.channels, x.height + 2 * pad, x.width + 2 * pad);
  auto reflect = [](int i, int n) { return i < 0 ? -i : (i >= n ? 2 * (n - 1) - i : i); };
  for (int c = 0; c < x.channels; ++c)
    for (int y = 0; y < out.height; ++y) {
      const float* src = &x.data[c * x.plane() +
                                 static_cast<std::size_t>(reflect(y - pad, x.height)) * x.width];
      float* dst = &out.data[c * out.plane() + static_cast<std::size_t>(y) * out.width];
      for (int i = 0; i < pad; ++i) {
        dst[i] = src[pad - i];
        dst[pad + x.width + i] = src[x.width - 2 - i];
      }
      std::copy_n(src, x.width, dst + pad);
    }
  return out;
}

Tensor edge_pad(const Tensor& x, int height, int width) {
  if (height == x.height && width == x.width) return x;
  Tensor out(x.channels, height, width);
  for (int c = 0; c < x.channels; ++c)
    for (int y = 0; y < height; ++y) {
      const int sy = std::min(y, x.height - 1);
      for (int xx = 0; xx < width; ++xx)
        out.at(c, y, xx) = x.at(c, sy, std::min(xx, x.width - 1));
    }
  return out;
}

Tensor crop(const Tensor& x, int height, int width) {
  if (height == x.height && width == x.width) return x;
  if (height > x.height || width > x.width) shape_error("crop larger than tensor");
  Tensor out(x.channels, height, width);
  for (int c = 0; c < x.channels; ++c)
    for (int y = 0; y < height; ++y)
      std::copy_n(&x.data[c * x.plane() + static_cast<std::size_t>(y) * x.width], width,
                  &out.data[c * out.plane() + static_cast<std::size_t>(y) * width]);
  return out;
}

Tensor conv3x3(const Conv3x3& layer, const Tensor& x) {
  if (x.channels != layer.in) {
    fail(ErrorKind::kConfig, ErrorCode::kShapeMismatch,
         "conv " + layer.name + ": expected " + std::to_string(layer.in) +
             " input channels, got " + std::to_string(x.channels));
  }
  const int h = x.height;
  const int w = x.width;
  const int out_c = layer.out;
  Tensor padded = reflection_pad(x, 1);
  const int wp = w + 2;
  const std::size_t padded_plane = padded.plane();
  Tensor out(out_c, h, w);

  // The padded image is addressed with row stride w+2, so tap (ky,kx) of
  // output position p reads padded[p + ky*(w+2) + kx] and every tap is a
  // contiguous shift; the two extra columns per row are computed and
  // discarded. Two trailing floats keep the last reads in bounds.
  padded.data.resize(padded.data.size() + 2, 0.0f);
  const std::size_t ext_cols = static_cast<std::size_t>(h) * wp;
  std::vector<float> ext(static_cast<std::size_t>(out_c) * ext_cols);
  if (layer.in * 9 <= 64) {
    // Narrow input (first layer): one GEMM over a full im2col matrix.
    const std::size_t k = static_cast<std::size_t>(9) * layer.in;
    std::vector<float> cols(k * ext_cols);
    for (int c = 0; c < layer.in; ++c)
      for (int t = 0; t < 9; ++t)
        std::copy_n(&padded.data[c * padded_plane + static_cast<std::size_t>(t / 3) * wp + t % 3],
                    ext_cols, &cols[(static_cast<std::size_t>(c) * 9 + t) * ext_cols]);
    dense::Map<float>(ext.data(), out_c, ext_cols).noalias() =
        dense::ConstMap<float>(layer.weight.data(), out_c, k) *
        dense::ConstMap<float>(cols.data(), k, ext_cols);
  } else {
    // Nine shifted GEMMs per column block; the block of the output stays
    // cache resident across taps.
    constexpr std::size_t kBlock = 1024;
    for (std::size_t j0 = 0; j0 < ext_cols; j0 += kBlock) {
      const std::size_t nb = std::min(kBlock, ext_cols - j0);
      dense::StridedMap<float> dst(ext.data() + j0, out_c, nb, Eigen::OuterStride<>(ext_cols));
      for (int t = 0; t < 9; ++t) {
        const float* b = padded.data.data() + static_cast<std::size_t>(t / 3) * wp + t % 3 + j0;
        const dense::ConstMap<float> a(
            layer.taps.data() + static_cast<std::size_t>(t) * out_c * layer.in, out_c, layer.in);
        const dense::ConstStridedMap<float> src(b, layer.in, nb,
                                                Eigen::OuterStride<>(padded_plane));
        if (t == 0) {
          dst.noalias() = a * src;
        } else {
          dst.noalias() += a * src;
        }
      }
    }
  }
  for (int o = 0; o < out_c; ++o)
    for (int y = 0; y < h; ++y)
      std::copy_n(&ext[o * ext_cols + static_cast<std::size_t>(y) * wp], w,
                  &out.data[o * out.plane() + static_cast<std::size_t>(y) * w]);
  for (int o = 0; o < out_c; ++o) {
    const float b = layer.bias[o];
    float* p = out.data.data() + o * out.plane();
    for (std::size_t i = 0; i < out.plane(); ++i) p[i] += b;
  }
  return out;
}

Tensor relu(Tensor x) {
  for (float& v : x.data) v = v > 0.0f ? v : 0.0f;
  return x;
}

Tensor maxpool2x2(const Tensor& x) {
  Tensor out(x.channels, x.height / 2, x.width / 2);
  for (int c = 0; c < x.channels; ++c)
    for (int y = 0; y < out.height; ++y)
      for (int xx = 0; xx < out.width; ++xx) {
        const float a = x.at(c, 2 * y, 2 * xx);
        const float b = x.at(c, 2 * y, 2 * xx + 1);
        const float d = x.at(c, 2 * y + 1, 2 * xx);
        const float e = x.at(c, 2 * y + 1, 2 * xx + 1);
        out.at(c, y, xx) = std::max(std::max(a, b), std::max(d, e));
      }
  return out;
}

Tensor upsample_nearest(const Tensor& x) {
  Tensor out(x.channels, x.height * 2, x.width * 2);
  for (int c = 0; c < x.channels; ++c)
    for (int y = 0; y < out.height; ++y)
      for (int xx = 0; xx < out.width; ++xx)
        out.at(c, y, xx) = x.at(c, y / 2, xx / 2);
  return out;
}

// ---- network ----------------------------------------------------------------

Network::Network(std::vector<Layer> layers, std::string name)
    : layers_(std::move(layers)), name_(std::move(name)) {
  int channels = 0;
  for (Layer& layer : layers_) {
    if (auto* conv = std::get_if<Conv3x3>(&layer)) {
      if (conv->weight.size() != static_cast<std::size_t>(conv->out) * conv->in * 9 ||
          conv->bias.size() != static_cast<std::size_t>(conv->out)) {
        shape_error("conv " + conv->name + ": weight/bias sizes do not match out x in x 3 x 3");
      }
      if (channels == 0) {
        input_channels_ = conv->in;
      } else if (channels != conv->in) {
        shape_error("conv " + conv->name + " expects " + std::to_string(conv->in) +
                    " channels but receives " + std::to_string(channels));
      }
      channels = conv->out;
      if (conv->taps.empty()) conv->prepare();
    } else if (std::holds_alternative<MaxPool2x2>(layer)) {
      ++pools_;
    } else if (std::holds_alternative<UpsampleNearest2x>(layer)) {
      ++upsamples_;
    }
  }
  output_channels_ = channels;
}

Tensor Network::forward(Tensor x) const {
  return std::move(forward_taps(std::move(x), {layers_.size()}).front());
}

std::vector<Tensor> Network::forward_taps(Tensor x, std::vector<std::size_t> taps) const {
  std::sort(taps.begin(), taps.end());
  std::vector<Tensor> outputs;
  std::size_t next = 0;
  for (std::size_t i = 0; i <= layers_.size() && next < taps.size(); ++i) {
    while (next < taps.size() && taps[next] == i) {
      outputs.push_back(x);
      ++next;
    }
    if (i == layers_.size() || next == taps.size()) break;
    const Layer& layer = layers_[i];
    x = std::visit(
        [&](const auto& l) -> Tensor {
          using T = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<T, Conv3x3>) return conv3x3(l, x);
          else if constexpr (std::is_same_v<T, Relu>) return relu(std::move(x));
          else if constexpr (std::is_same_v<T, MaxPool2x2>) return maxpool2x2(x);
          else return upsample_nearest(x);
        },
        layer);
  }
  if (next != taps.size()) shape_error("tap index beyond network depth");
  return outputs;
}

bool Network::is_prefix_of(const Network& other) const {
  if (layers_.size() > other.layers_.size()) return false;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const Layer& a = layers_[i];
    const Layer& b = other.layers_[i];
    if (a.index() != b.index()) return false;
    if (const auto* ca = std::get_if<Conv3x3>(&a)) {
      const auto& cb = std::get<Conv3x3>(b);
      if (ca->in != cb.in || ca->out != cb.out || ca->weight != cb.weight ||
          ca->bias != cb.bias)
        return false;
    }
  }
  return true;
}

std::vector<sswt::Record> Network::to_records() const {
  std::vector<sswt::Record> records;
  int index = 0;
  for (const Layer& layer : layers_) {
    if (const auto* conv = std::get_if<Conv3x3>(&layer)) {
      records.push_back({conv->name, sswt::Kind::kConv,
                         {static_cast<std::uint32_t>(conv->out),
                          static_cast<std::uint32_t>(conv->in), 3u, 3u},
                         conv->weight});
      records.push_back({conv->name + ".bias", sswt::Kind::kConv,
                         {static_cast<std::uint32_t>(conv->out)}, conv->bias});
    } else {
      sswt::Record r;
      if (std::holds_alternative<Relu>(layer)) {
        r.kind = sswt::Kind::kRelu;
        r.name = "relu" + std::to_string(index);
      } else if (std::holds_alternative<MaxPool2x2>(layer)) {
        r.kind = sswt::Kind::kMaxPool;
        r.name = "pool" + std::to_string(index);
      } else {
        r.kind = sswt::Kind::kUpsample;
        r.name = "upsample" + std::to_string(index);
      }
      records.push_back(std::move(r));
    }
    ++index;
  }
  return records;
}

Network Network::from_records(std::span<const sswt::Record> records, std::string name) {
  std::vector<Layer> layers;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const sswt::Record& r = records[i];
    switch (r.kind) {
      case sswt::Kind::kConv: {
        if (r.dims.size() != 4 || r.dims[2] != 3 || r.dims[3] != 3) {
          shape_error("conv record '" + r.name + "' must have dims out x in x 3 x 3");
        }
        if (i + 1 >= records.size() || records[i + 1].name != r.name + ".bias") {
          shape_error("conv record '" + r.name + "' is not followed by its bias");
        }
        const sswt::Record& b = records[i + 1];
        if (b.kind != sswt::Kind::kConv || b.dims.size() != 1 || b.dims[0] != r.dims[0]) {
          shape_error("bias record '" + b.name + "' must be rank 1 with " +
                      std::to_string(r.dims[0]) + " entries");
        }
        Conv3x3 conv;
        conv.name = r.name;
        conv.out = static_cast<int>(r.dims[0]);
        conv.in = static_cast<int>(r.dims[1]);
        conv.weight = r.payload;
        conv.bias = b.payload;
        layers.emplace_back(std::move(conv));
        ++i;
        break;
      }
      case sswt::Kind::kRelu:
      case sswt::Kind::kMaxPool:
      case sswt::Kind::kUpsample:
        if (!r.dims.empty()) shape_error("layer record '" + r.name + "' must have rank 0");
        if (r.kind == sswt::Kind::kRelu) layers.emplace_back(Relu{});
        else if (r.kind == sswt::Kind::kMaxPool) layers.emplace_back(MaxPool2x2{});
        else layers.emplace_back(UpsampleNearest2x{});
        break;
      case sswt::Kind::kTensor:
        fail(ErrorKind::kFormat, ErrorCode::kUnknownLayerKind,
             "record '" + r.name + "' is a data tensor, not a network layer");
    }
  }
  return Network(std::move(layers), std::move(name));
}

Network load_network(const std::filesystem::path& path) {
  const auto records = sswt::read_file(path);
  return Network::from_records(records, path.stem().string());
}

void save_network(const Network& net, const std::filesystem::path& path) {
  const auto records = net.to_records();
  sswt::write_file(path, records);
}

// ---- encode / decode ----------------------------------------------------------

namespace {

constexpr float kCaffeMeanBgr[3] = {103.939f, 116.779f, 123.68f};

Tensor to_network_input(Tensor t, Preprocess pre) {
  if (pre == Preprocess::kNone) return t;
  Tensor out(3, t.height, t.width);
  for (int c = 0; c < 3; ++c) {
    const float* src = t.data.data() + (2 - c) * t.plane();
    float* dst = out.data.data() + c * out.plane();
    for (std::size_t i = 0; i < t.plane(); ++i) dst[i] = src[i] * 255.0f - kCaffeMeanBgr[c];
  }
  return out;
}

Tensor from_network_output(Tensor t, Preprocess pre) {
  if (pre == Preprocess::kNone) return t;
  Tensor out(3, t.height, t.width);
  for (int c = 0; c < 3; ++c) {
    const float* src = t.data.data() + c * t.plane();
    float* dst = out.data.data() + (2 - c) * out.plane();
    for (std::size_t i = 0; i < t.plane(); ++i) dst[i] = (src[i] + kCaffeMeanBgr[c]) / 255.0f;
  }
  return out;
}

void check_level(int level) {
  if (level < kMinLevel || level > kMaxLevel) {
    fail(ErrorKind::kConfig, ErrorCode::kLevelOutOfRange,
         "level " + std::to_string(level) + " outside 1..5");
  }
}

void check_encoder(const Network& net, const Image& img, int level) {
  check_level(level);
  if (net.pool_count() != level || net.upsample_count() != 0) {
    fail(ErrorKind::kConfig, ErrorCode::kLevelMismatch,
         "encoder '" + net.name() + "' has " + std::to_string(net.pool_count()) +
             " pooling layers; level " + std::to_string(level) + " requested");
  }
  if (img.height() < kMinImageSide || img.width() < kMinImageSide) {
    fail(ErrorKind::kConfig, ErrorCode::kShapeMismatch, "image must be at least 32x32");
  }
}

int padded_side(int side, int level) {
  const int factor = 1 << level;
  return (side + factor - 1) / factor * factor;
}

FeatureMap make_feature(Tensor t, const Network& net, const Image& img, int level) {
  if (t.channels != kLevelChannels[level]) {
    shape_error("encoder '" + net.name() + "' emits " + std::to_string(t.channels) +
                " channels; level " + std::to_string(level) + " expects " +
                std::to_string(kLevelChannels[level]));
  }
  FeatureMap f;
  f.tensor = std::move(t);
  f.level = level;
  f.source_height = img.height();
  f.source_width = img.width();
  return f;
}

}  // namespace

FeatureMap encode(const Network& net, const Image& img, int level, Preprocess pre) {
  check_encoder(net, img, level);
  const int h = padded_side(img.height(), level);
  const int w = padded_side(img.width(), level);
  return make_feature(net.forward(to_network_input(edge_pad(img.pixels, h, w), pre)), net,
                      img, level);
}

Image decode(const Network& net, const FeatureMap& f, Preprocess pre) {
  check_level(f.level);
  if (net.upsample_count() != f.level || net.pool_count() != 0) {
    fail(ErrorKind::kConfig, ErrorCode::kLevelMismatch,
         "decoder '" + net.name() + "' does not match feature level " +
             std::to_string(f.level));
  }
  Tensor t = net.forward(f.tensor);
  if (t.channels != 3) shape_error("decoder '" + net.name() + "' does not emit RGB");
  t = from_network_output(std::move(t), pre);
  const int h = f.source_height > 0 ? f.source_height : t.height;
  const int w = f.source_width > 0 ? f.source_width : t.width;
  return clamp01(Image(crop(t, h, w)));
}

NetworkSet::NetworkSet(std::filesystem::path dir) : dir_(std::move(dir)) {
  const auto manifest = dir_ / "manifest.json";
  if (std::filesystem::exists(manifest)) {
    std::ifstream in(manifest);
    try {
      const auto j = nlohmann::json::parse(in);
      preprocess_ = parse_preprocess(j.value("preprocess", std::string("none")));
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::kFormat, ErrorCode::kGeneric,
           "bad weight manifest " + manifest.string() + ": " + e.what());
    }
  }
}

bool NetworkSet::has_level(int level) const {
  return std::filesystem::exists(dir_ / ("enc" + std::to_string(level) + ".sswt")) &&
         std::filesystem::exists(dir_ / ("dec" + std::to_string(level) + ".sswt"));
}

const Network& NetworkSet::get(const std::string& stem, int level) const {
  check_level(level);
  const std::string key = stem + std::to_string(level);
  std::lock_guard lock(mutex_);
  auto it = cache_.find(key);
  if (it == cache_.end()) {
    const auto path = dir_ / (key + ".sswt");
    if (!std::filesystem::exists(path)) {
      fail(ErrorKind::kIo, ErrorCode::kMissingNetwork, "missing network " + path.string());
    }
    it = cache_.emplace(key, std::make_shared<const Network>(load_network(path))).first;
  }
  return *it->second;
}

const Network& NetworkSet::encoder(int level) const { return get("enc", level); }
const Network& NetworkSet::decoder(int level) const { return get("dec", level); }

FeatureMap NetworkSet::encode(const Image& img, int level) const {
  return cnn::encode(encoder(level), img, level, preprocess_);
}

std::vector<FeatureMap> NetworkSet::encode_levels(const Image& img,
                                                 std::span<const int> levels) const {
  std::vector<FeatureMap> out(levels.size());
  if (levels.empty()) return out;
  const int deepest = *std::max_element(levels.begin(), levels.end());
  const Network& top = encoder(deepest);
  check_encoder(top, img, deepest);
  const int h = padded_side(img.height(), deepest);
  const int w = padded_side(img.width(), deepest);
  // One pass through the deepest encoder serves every level whose encoder is
  // a prefix of it and whose padded input size agrees.
  std::vector<std::size_t> taps;
  std::vector<std::size_t> shared;
  for (std::size_t i = 0; i < levels.size(); ++i) {
    const int level = levels[i];
    const Network& net = encoder(level);
    check_encoder(net, img, level);
    if (padded_side(img.height(), level) == h && padded_side(img.width(), level) == w &&
        shares_prefix(level, deepest)) {
      taps.push_back(net.layers().size());
      shared.push_back(i);
    } else {
      out[i] = encode(img, level);
    }
  }
  if (!shared.empty()) {
    std::vector<std::size_t> sorted = taps;
    auto outputs = top.forward_taps(to_network_input(edge_pad(img.pixels, h, w), preprocess_),
                                    sorted);
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t j = 0; j < shared.size(); ++j) {
      const std::size_t slot =
          std::lower_bound(sorted.begin(), sorted.end(), taps[j]) - sorted.begin();
      const int level = levels[shared[j]];
      out[shared[j]] = make_feature(outputs[slot], encoder(level), img, level);
    }
  }
  return out;
}

bool NetworkSet::shares_prefix(int level, int deepest) const {
  if (level == deepest) return true;
  const Network& net = encoder(level);
  const Network& top = encoder(deepest);
  std::lock_guard lock(mutex_);
  const auto key = std::make_pair(level, deepest);
  auto it = prefix_cache_.find(key);
  if (it == prefix_cache_.end()) it = prefix_cache_.emplace(key, net.is_prefix_of(top)).first;
  return it->second;
}

Image NetworkSet::decode(const FeatureMap& f) const {
  return cnn::decode(decoder(f.level), f, preprocess_);
}

Image clamp01(Image img) {
  for (float& v : img.pixels.data) v = std::clamp(v, 0.0f, 1.0f);
  return img;
}

double psnr(const Image& a, const Image& b) {
  if (a.height() != b.height() || a.width() != b.width()) {
    fail(ErrorKind::kConfig, ErrorCode::kShapeMismatch, "psnr: image sizes differ");
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < a.pixels.data.size(); ++i) {
    const double d = static_cast<double>(a.pixels.data[i]) - b.pixels.data[i];
    acc += d * d;
  }
  const double mse = acc / static_cast<double>(a.pixels.data.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

}  // namespace substyle::cnn
