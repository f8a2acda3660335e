#include "msth/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace msth {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

template <class T>
std::vector<std::uint8_t> bytes_of(std::span<const T> v) {
  std::vector<std::uint8_t> out(v.size_bytes());
  if (!v.empty()) std::memcpy(out.data(), v.data(), out.size());
  return out;
}

template <class T>
void append(std::vector<std::uint8_t>& out, T v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(T));
}

std::size_t dtype_size(DType d) {
  switch (d) {
    case DType::f32: return 4;
    case DType::f64: return 8;
    case DType::u8: return 1;
    case DType::i64: return 8;
    case DType::u64: return 8;
  }
  return 0;
}

struct Reader {
  std::span<const std::uint8_t> b;
  std::size_t pos = 0;
  const std::string& origin;

  template <class T>
  T read() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, b.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
  }
  void need(std::size_t n) {
    if (b.size() - pos < n) throw FormatError(origin + ": truncated checkpoint");
  }
};

}  // namespace

void Container::add(Record r) {
  if (index_.count(r.name)) throw ConfigError("duplicate checkpoint record '" + r.name + "'");
  index_[r.name] = records_.size();
  records_.push_back(std::move(r));
}

void Container::put(const std::string& name, std::span<const float> v) {
  add({name, DType::f32, {v.size()}, bytes_of(v)});
}
void Container::put(const std::string& name, std::span<const double> v) {
  add({name, DType::f64, {v.size()}, bytes_of(v)});
}
void Container::put_i64(const std::string& name, std::int64_t v) {
  add({name, DType::i64, {1}, bytes_of(std::span<const std::int64_t>(&v, 1))});
}
void Container::put_u64(const std::string& name, std::uint64_t v) {
  add({name, DType::u64, {1}, bytes_of(std::span<const std::uint64_t>(&v, 1))});
}
void Container::put_string(const std::string& name, const std::string& s) {
  add({name, DType::u8, {s.size()}, std::vector<std::uint8_t>(s.begin(), s.end())});
}

const Record& Container::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw FormatError("checkpoint is missing record '" + name + "'");
  return records_[it->second];
}

template <class Real>
void Container::get(const std::string& name, std::vector<Real>& out, std::size_t expect) const {
  const Record& r = at(name);
  const std::size_t n = r.payload.size() / dtype_size(r.dtype);
  if (n != expect)
    throw FormatError("checkpoint record '" + name + "' has " + std::to_string(n) +
                      " values, expected " + std::to_string(expect));
  out.resize(n);
  if (r.dtype == DType::f32) {
    std::vector<float> tmp(n);
    std::memcpy(tmp.data(), r.payload.data(), r.payload.size());
    for (std::size_t i = 0; i < n; ++i) out[i] = Real(tmp[i]);
  } else if (r.dtype == DType::f64) {
    std::vector<double> tmp(n);
    std::memcpy(tmp.data(), r.payload.data(), r.payload.size());
    for (std::size_t i = 0; i < n; ++i) out[i] = Real(tmp[i]);
  } else {
    throw FormatError("checkpoint record '" + name + "' is not floating point");
  }
}
template void Container::get(const std::string&, std::vector<float>&, std::size_t) const;
template void Container::get(const std::string&, std::vector<double>&, std::size_t) const;

std::int64_t Container::get_i64(const std::string& name) const {
  const Record& r = at(name);
  if (r.dtype != DType::i64 || r.payload.size() != 8)
    throw FormatError("checkpoint record '" + name + "' is not an i64 scalar");
  std::int64_t v;
  std::memcpy(&v, r.payload.data(), 8);
  return v;
}

std::uint64_t Container::get_u64(const std::string& name) const {
  const Record& r = at(name);
  if (r.dtype != DType::u64 || r.payload.size() != 8)
    throw FormatError("checkpoint record '" + name + "' is not a u64 scalar");
  std::uint64_t v;
  std::memcpy(&v, r.payload.data(), 8);
  return v;
}

double Container::get_f64(const std::string& name) const {
  const Record& r = at(name);
  if (r.dtype != DType::f64 || r.payload.size() != 8)
    throw FormatError("checkpoint record '" + name + "' is not an f64 scalar");
  double v;
  std::memcpy(&v, r.payload.data(), 8);
  return v;
}

std::string Container::get_string(const std::string& name) const {
  const Record& r = at(name);
  if (r.dtype != DType::u8) throw FormatError("checkpoint record '" + name + "' is not a string");
  return std::string(r.payload.begin(), r.payload.end());
}

std::vector<std::uint8_t> Container::serialize() const {
  std::vector<std::uint8_t> out = {'M', 'S', 'T', 'H'};
  append<std::uint32_t>(out, kCheckpointVersion);
  append<std::uint32_t>(out, std::uint32_t(records_.size()));
  for (const auto& r : records_) {
    append<std::uint32_t>(out, std::uint32_t(r.name.size()));
    out.insert(out.end(), r.name.begin(), r.name.end());
    append<std::uint8_t>(out, std::uint8_t(r.dtype));
    append<std::uint32_t>(out, std::uint32_t(r.shape.size()));
    for (auto d : r.shape) append<std::uint64_t>(out, d);
    append<std::uint64_t>(out, r.payload.size());
    out.insert(out.end(), r.payload.begin(), r.payload.end());
  }
  return out;
}

Container Container::deserialize(std::span<const std::uint8_t> bytes, const std::string& origin) {
  Reader rd{bytes, 0, origin};
  rd.need(4);
  if (std::memcmp(bytes.data(), "MSTH", 4) != 0) throw FormatError(origin + ": not an MSTH checkpoint");
  rd.pos = 4;
  const auto version = rd.read<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw FormatError(origin + ": unsupported checkpoint version " + std::to_string(version));
  const auto count = rd.read<std::uint32_t>();
  Container c;
  for (std::uint32_t i = 0; i < count; ++i) {
    Record r;
    const auto len = rd.read<std::uint32_t>();
    rd.need(len);
    r.name.assign(reinterpret_cast<const char*>(bytes.data() + rd.pos), len);
    rd.pos += len;
    const auto dt = rd.read<std::uint8_t>();
    if (dt > std::uint8_t(DType::u64)) throw FormatError(origin + ": bad dtype in record " + r.name);
    r.dtype = DType(dt);
    const auto rank = rd.read<std::uint32_t>();
    std::uint64_t elems = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      r.shape.push_back(rd.read<std::uint64_t>());
      elems *= r.shape.back();
    }
    const auto size = rd.read<std::uint64_t>();
    if (size != elems * dtype_size(r.dtype))
      throw FormatError(origin + ": record " + r.name + " payload does not match its shape");
    rd.need(size);
    r.payload.assign(bytes.begin() + rd.pos, bytes.begin() + rd.pos + size);
    rd.pos += size;
    c.add(std::move(r));
  }
  if (rd.pos != bytes.size()) throw FormatError(origin + ": trailing bytes after last record");
  return c;
}

void Container::save(const std::filesystem::path& path) const {
  const auto bytes = serialize();
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw FormatError("cannot write " + tmp);
    out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
    if (!out) throw FormatError("short write to " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Container Container::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize(bytes, path.string());
}

}  // namespace msth
