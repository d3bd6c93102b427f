#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace substyle::sswt {

// Binary tensor container shared by network weights, feature fixtures and
// persisted sub-style models.
//
//   "SSWT" | u32 version | u32 record_count
//   per record: u16 name_len | name | u8 kind | u8 rank | u32 dims[rank]
//               | f32 payload[prod(dims)]      (no payload when rank == 0)
//   u64 FNV-1a over every payload byte, in file order
//
// All integers and floats are little-endian.
inline constexpr std::uint32_t kVersion = 1;

enum class Kind : std::uint8_t {
  kConv = 0,
  kRelu = 1,
  kMaxPool = 2,
  kUpsample = 3,
  kTensor = 4,  // plain data record (fixtures, model parameters)
};

struct Record {
  std::string name;
  Kind kind = Kind::kTensor;
  std::vector<std::uint32_t> dims;
  std::vector<float> payload;

  std::size_t element_count() const;
  friend bool operator==(const Record&, const Record&) = default;
};

std::uint64_t fnv1a(std::span<const std::uint8_t> bytes,
                    std::uint64_t state = 14695981039346656037ull);

std::vector<std::uint8_t> serialize(std::span<const Record> records);
std::vector<Record> parse(std::span<const std::uint8_t> bytes);

std::vector<Record> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const Record> records);

const Record* find(std::span<const Record> records, const std::string& name);
const Record& require(std::span<const Record> records, const std::string& name);

}  // namespace substyle::sswt
