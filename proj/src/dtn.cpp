#include "posedepth/dtn.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <limits>

namespace posedepth {

namespace {

constexpr std::array<char, 4> kMagic{'D', 'T', 'N', '1'};

void put_u32(std::ostream& out, std::uint32_t v) {
  const std::array<char, 4> b{static_cast<char>(v & 0xFF), static_cast<char>((v >> 8) & 0xFF),
                              static_cast<char>((v >> 16) & 0xFF), static_cast<char>((v >> 24) & 0xFF)};
  out.write(b.data(), 4);
}

std::uint32_t get_u32(std::istream& in) {
  std::array<unsigned char, 4> b{};
  if (!in.read(reinterpret_cast<char*>(b.data()), 4)) throw Error(ErrorCode::MalformedHeader, "truncated DTN1 header");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void write_dtn(std::ostream& out, const Tensor& t) {
  out.write(kMagic.data(), 4);
  put_u32(out, static_cast<std::uint32_t>(t.rank()));
  for (Index e : t.shape()) put_u32(out, static_cast<std::uint32_t>(e));
  for (Index i = 0; i < t.numel(); ++i) {
    const float f = static_cast<float>(t[i]);
    put_u32(out, std::bit_cast<std::uint32_t>(f));
  }
  if (!out) throw Error(ErrorCode::IoError, "DTN1 write failed");
}

Tensor read_dtn(std::istream& in) {
  std::array<char, 4> magic{};
  if (!in.read(magic.data(), 4) || magic != kMagic) throw Error(ErrorCode::MalformedHeader, "missing DTN1 magic");
  const std::uint32_t rank = get_u32(in);
  if (rank == 0 || rank > 16) throw Error(ErrorCode::MalformedHeader, "implausible DTN1 rank");
  Shape shape;
  Index count = 1;
  for (std::uint32_t i = 0; i < rank; ++i) {
    const std::uint32_t e = get_u32(in);
    if (e == 0) throw Error(ErrorCode::MalformedHeader, "zero extent in DTN1 header");
    shape.push_back(static_cast<Index>(e));
    count *= static_cast<Index>(e);
    if (count > (Index{1} << 34)) throw Error(ErrorCode::MalformedHeader, "DTN1 payload too large");
  }
  Buffer data(count);
  for (Index i = 0; i < count; ++i) {
    std::uint32_t bits = 0;
    try {
      bits = get_u32(in);
    } catch (const Error&) {
      throw Error(ErrorCode::MalformedHeader, "truncated DTN1 payload");
    }
    data[i] = static_cast<double>(std::bit_cast<float>(bits));
  }
  return Tensor(std::move(shape), std::move(data));
}

void write_dtn(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot open " + path.string() + " for writing");
  write_dtn(out, t);
}

Tensor read_dtn(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  return read_dtn(in);
}

}  // namespace posedepth
