#pragma once

// MSTH container: magic "MSTH", u32 version, u32 record count, then records
//   u32 name length, name bytes, u8 dtype, u32 rank, u64 dims[rank],
//   u64 payload bytes, payload (little-endian).

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "msth/common.hpp"

namespace msth {

enum class DType : std::uint8_t { f32 = 0, f64 = 1, u8 = 2, i64 = 3, u64 = 4 };

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Record {
  std::string name;
  DType dtype = DType::u8;
  std::vector<std::uint64_t> shape;
  std::vector<std::uint8_t> payload;
};

class Container {
 public:
  void put(const std::string& name, std::span<const float> v);
  void put(const std::string& name, std::span<const double> v);
  void put_i64(const std::string& name, std::int64_t v);
  void put_u64(const std::string& name, std::uint64_t v);
  void put_f64(const std::string& name, double v) { put(name, std::span<const double>(&v, 1)); }
  void put_string(const std::string& name, const std::string& s);

  bool has(const std::string& name) const { return index_.count(name) != 0; }
  const Record& at(const std::string& name) const;
  /// Values as Real; the stored dtype must be f32 or f64 of matching size.
  template <class Real>
  void get(const std::string& name, std::vector<Real>& out, std::size_t expect) const;
  std::int64_t get_i64(const std::string& name) const;
  std::uint64_t get_u64(const std::string& name) const;
  double get_f64(const std::string& name) const;
  std::string get_string(const std::string& name) const;

  const std::vector<Record>& records() const { return records_; }

  std::vector<std::uint8_t> serialize() const;
  static Container deserialize(std::span<const std::uint8_t> bytes, const std::string& origin);

  void save(const std::filesystem::path& path) const;
  static Container load(const std::filesystem::path& path);

 private:
  void add(Record r);
  std::vector<Record> records_;
  std::map<std::string, std::size_t> index_;
};

}  // namespace msth
