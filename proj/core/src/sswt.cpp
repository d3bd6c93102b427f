#include "substyle/sswt.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "substyle/error.hpp"

namespace substyle::sswt {

static_assert(std::endian::native == std::endian::little,
              "SSWT I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'S', 'S', 'W', 'T'};
constexpr std::uint64_t kFnvPrime = 1099511628211ull;

class Writer {
 public:
  template <typename T>
  void put(T value) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&value);
    bytes_.insert(bytes_.end(), p, p + sizeof(T));
  }
  void put_bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    bytes_.insert(bytes_.end(), p, p + n);
  }
  std::vector<std::uint8_t>& bytes() { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    T value{};
    std::memcpy(&value, take(sizeof(T)).data(), sizeof(T));
    return value;
  }
  std::span<const std::uint8_t> take(std::size_t n) {
    if (bytes_.size() - pos_ < n) {
      fail(ErrorKind::kFormat, ErrorCode::kUnexpectedEof,
           "unexpected end of payload");
    }
    auto out = bytes_.subspan(pos_, n);
    pos_ += n;
    return out;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::size_t Record::element_count() const {
  if (dims.empty()) return 0;
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

std::uint64_t fnv1a(std::span<const std::uint8_t> bytes, std::uint64_t state) {
  for (std::uint8_t b : bytes) {
    state ^= b;
    state *= kFnvPrime;
  }
  return state;
}

std::vector<std::uint8_t> serialize(std::span<const Record> records) {
  Writer w;
  w.put_bytes(kMagic, 4);
  w.put<std::uint32_t>(kVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(records.size()));
  std::uint64_t checksum = 14695981039346656037ull;
  for (const Record& r : records) {
    if (r.name.size() > 0xFFFF || r.dims.size() > 0xFF) {
      fail(ErrorKind::kConfig, ErrorCode::kShapeMismatch,
           "sswt: record '" + r.name + "' header does not fit the format");
    }
    if (r.payload.size() != r.element_count()) {
      fail(ErrorKind::kConfig, ErrorCode::kShapeMismatch,
           "sswt: record '" + r.name + "' payload does not match its dims");
    }
    w.put<std::uint16_t>(static_cast<std::uint16_t>(r.name.size()));
    w.put_bytes(r.name.data(), r.name.size());
    w.put<std::uint8_t>(static_cast<std::uint8_t>(r.kind));
    w.put<std::uint8_t>(static_cast<std::uint8_t>(r.dims.size()));
    for (auto d : r.dims) w.put<std::uint32_t>(d);
    const auto* payload = reinterpret_cast<const std::uint8_t*>(r.payload.data());
    const std::size_t nbytes = r.payload.size() * sizeof(float);
    w.put_bytes(payload, nbytes);
    checksum = fnv1a({payload, nbytes}, checksum);
  }
  w.put<std::uint64_t>(checksum);
  return std::move(w.bytes());
}

std::vector<Record> parse(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  const auto magic = r.take(4);
  if (std::memcmp(magic.data(), kMagic, 4) != 0) {
    fail(ErrorKind::kFormat, ErrorCode::kBadMagic, "bad magic");
  }
  const auto version = r.get<std::uint32_t>();
  if (version != kVersion) {
    fail(ErrorKind::kFormat, ErrorCode::kBadVersion,
         "unsupported version " + std::to_string(version));
  }
  const auto count = r.get<std::uint32_t>();
  std::vector<Record> records;
  records.reserve(count);
  std::uint64_t checksum = 14695981039346656037ull;
  for (std::uint32_t i = 0; i < count; ++i) {
    Record rec;
    const auto name_len = r.get<std::uint16_t>();
    const auto name = r.take(name_len);
    rec.name.assign(name.begin(), name.end());
    const auto kind = r.get<std::uint8_t>();
    if (kind > static_cast<std::uint8_t>(Kind::kTensor)) {
      fail(ErrorKind::kFormat, ErrorCode::kUnknownLayerKind,
           "unknown record kind " + std::to_string(kind) + " in '" + rec.name + "'");
    }
    rec.kind = static_cast<Kind>(kind);
    const auto rank = r.get<std::uint8_t>();
    rec.dims.resize(rank);
    for (auto& d : rec.dims) d = r.get<std::uint32_t>();
    const std::size_t n = rec.element_count();
    if (n > r.remaining() / sizeof(float)) {
      fail(ErrorKind::kFormat, ErrorCode::kUnexpectedEof,
           "unexpected end of payload");
    }
    const auto payload = r.take(n * sizeof(float));
    rec.payload.resize(n);
    if (n > 0) std::memcpy(rec.payload.data(), payload.data(), payload.size());
    checksum = fnv1a(payload, checksum);
    records.push_back(std::move(rec));
  }
  const auto stored = r.get<std::uint64_t>();
  if (stored != checksum) {
    fail(ErrorKind::kFormat, ErrorCode::kBadChecksum, "checksum mismatch");
  }
  return records;
}

std::vector<Record> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    fail(ErrorKind::kIo, ErrorCode::kGeneric, "cannot open " + path.string());
  }
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0, std::ios::beg);
  std::vector<std::uint8_t> bytes(size);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size));
  if (!in) {
    fail(ErrorKind::kIo, ErrorCode::kGeneric, "cannot read " + path.string());
  }
  return parse(bytes);
}

void write_file(const std::filesystem::path& path, std::span<const Record> records) {
  const auto bytes = serialize(records);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    fail(ErrorKind::kIo, ErrorCode::kGeneric, "cannot write " + path.string());
  }
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) {
    fail(ErrorKind::kIo, ErrorCode::kGeneric, "short write to " + path.string());
  }
}

const Record* find(std::span<const Record> records, const std::string& name) {
  for (const Record& r : records)
    if (r.name == name) return &r;
  return nullptr;
}

const Record& require(std::span<const Record> records, const std::string& name) {
  const Record* r = find(records, name);
  if (r == nullptr) {
    fail(ErrorKind::kFormat, ErrorCode::kShapeMismatch,
         "missing record '" + name + "'");
  }
  return *r;
}

}  // namespace substyle::sswt
