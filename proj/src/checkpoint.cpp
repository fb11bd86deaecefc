#include "vrtm/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace vrtm {

namespace {

constexpr char kMagic[5] = {'V', 'R', 'T', 'M', '1'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint8_t kDtypeF64 = 1;

void put_u32(std::string& out, std::uint32_t x) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((x >> (8 * i)) & 0xff));
}
void put_u64(std::string& out, std::uint64_t x) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((x >> (8 * i)) & 0xff));
}
void put_f64(std::string& out, double x) { put_u64(out, std::bit_cast<std::uint64_t>(x)); }
void put_str(std::string& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out.append(s);
}

struct Reader {
  const std::string& buf;
  std::size_t pos = 0;

  void need(std::size_t n) const {
    if (pos + n > buf.size())
      throw std::runtime_error("truncated checkpoint: needed " + std::to_string(n) +
                               " bytes at offset " + std::to_string(pos) + ", file has " +
                               std::to_string(buf.size()));
  }
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(buf[pos++]);
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t x = 0;
    for (int i = 0; i < 4; ++i)
      x |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(buf[pos + i])) << (8 * i);
    pos += 4;
    return x;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t x = 0;
    for (int i = 0; i < 8; ++i)
      x |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(buf[pos + i])) << (8 * i);
    pos += 8;
    return x;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

}  // namespace

void save_checkpoint(const Checkpoint& c, const std::string& path) {
  std::string out;
  out.append(kMagic, sizeof kMagic);
  put_u32(out, c.version);
  put_u64(out, c.vocab_hash);
  put_u32(out, static_cast<std::uint32_t>(c.config.size()));
  for (const auto& [k, v] : c.config) {
    put_str(out, k);
    put_str(out, v);
  }
  put_u32(out, static_cast<std::uint32_t>(c.arrays.size()));
  for (const auto& [name, t] : c.arrays) {
    put_str(out, name);
    out.push_back(static_cast<char>(kDtypeF64));
    put_u32(out, static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) put_u64(out, static_cast<std::uint64_t>(d));
    for (std::int64_t i = 0; i < t.size(); ++i) put_f64(out, t[i]);
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open '" + path + "' for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw std::runtime_error("write failed for '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint '" + path + "'");
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  Reader r{buf};
  r.need(sizeof kMagic);
  if (std::memcmp(buf.data(), kMagic, sizeof kMagic) != 0)
    throw std::runtime_error("bad magic: '" + path + "' is not a checkpoint file");
  r.pos = sizeof kMagic;

  Checkpoint c;
  c.version = r.u32();
  if (c.version != kVersion)
    throw std::runtime_error("checkpoint version mismatch: file has version " +
                             std::to_string(c.version) + ", this build supports version " +
                             std::to_string(kVersion));
  c.vocab_hash = r.u64();
  const std::uint32_t ncfg = r.u32();
  for (std::uint32_t i = 0; i < ncfg; ++i) {
    std::string k = r.str();
    std::string v = r.str();
    c.config.emplace_back(std::move(k), std::move(v));
  }
  const std::uint32_t narr = r.u32();
  for (std::uint32_t i = 0; i < narr; ++i) {
    std::string name = r.str();
    const std::uint8_t dtype = r.u8();
    if (dtype != kDtypeF64)
      throw std::runtime_error("checkpoint array '" + name + "' has unsupported dtype " +
                               std::to_string(dtype));
    const std::uint32_t ndim = r.u32();
    Shape shape;
    for (std::uint32_t d = 0; d < ndim; ++d) shape.push_back(static_cast<std::int64_t>(r.u64()));
    TensorD t(shape);
    for (std::int64_t j = 0; j < t.size(); ++j) t[j] = r.f64();
    c.arrays.emplace_back(std::move(name), std::move(t));
  }
  return c;
}

}  // namespace vrtm
