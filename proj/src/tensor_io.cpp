#include "rtvis/tensor_io.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>

namespace rtvis {
namespace {

constexpr std::array<char, 4> kMagic = {'T', 'V', 'T', '1'};

void put_u32(std::ostream& out, std::uint32_t v) {
  const std::array<char, 4> b = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                                 static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  out.write(b.data(), b.size());
}

std::uint32_t get_u32(std::istream& in, const char* what) {
  std::array<unsigned char, 4> b{};
  if (!in.read(reinterpret_cast<char*>(b.data()), b.size())) {
    throw FormatError(std::string("TVT1: truncated ") + what);
  }
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void write_tensor(std::ostream& out, const Tensor& t) {
  out.write(kMagic.data(), kMagic.size());
  put_u32(out, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t e : t.dims()) {
    if (e > std::numeric_limits<std::uint32_t>::max()) throw ShapeError("TVT1: extent exceeds 32 bits");
    put_u32(out, static_cast<std::uint32_t>(e));
  }
  for (float v : t.values()) put_u32(out, std::bit_cast<std::uint32_t>(v));
  if (!out) throw std::runtime_error("TVT1: write failed");
}

Tensor read_tensor(std::istream& in) {
  std::array<char, 4> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kMagic) throw FormatError("TVT1: bad magic");
  const std::uint32_t ndim = get_u32(in, "rank");
  if (ndim == 0) throw FormatError("TVT1: zero-dimensional tensor");
  std::vector<std::size_t> dims(ndim);
  std::size_t count = 1;
  for (auto& e : dims) {
    e = get_u32(in, "extent");
    if (e == 0) throw FormatError("TVT1: zero extent");
    if (count > std::numeric_limits<std::size_t>::max() / e) throw FormatError("TVT1: element count overflows");
    count *= e;
  }
  Tensor t(std::move(dims));
  float* dst = t.data();
  for (std::size_t i = 0; i < count; ++i) dst[i] = std::bit_cast<float>(get_u32(in, "payload"));
  return t;
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  write_tensor(out, t);
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return read_tensor(in);
}

}  // namespace rtvis
