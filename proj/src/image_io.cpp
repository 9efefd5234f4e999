#include "posedepth/image_io.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <string>
#include <vector>

namespace posedepth {

namespace {

unsigned char quantize(double v) {
  if (!(v >= -1e-9 && v <= 1.0 + 1e-9)) throw Error(ErrorCode::InvalidArgument, "image values must lie in [0, 1]");
  return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

void write_netpbm(const std::filesystem::path& path, const char* magic, Index width, Index height,
                  const std::vector<unsigned char>& payload) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot open " + path.string() + " for writing");
  out << magic << '\n' << width << ' ' << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
  if (!out) throw Error(ErrorCode::IoError, "write failed for " + path.string());
}

Index read_header_int(std::istream& in) {
  int c = in.peek();
  while (c != EOF) {
    if (c == '#') {
      std::string comment;
      std::getline(in, comment);
    } else if (std::isspace(c)) {
      in.get();
    } else {
      break;
    }
    c = in.peek();
  }
  if (c == EOF || !std::isdigit(c)) throw Error(ErrorCode::MalformedHeader, "expected a number in the netpbm header");
  Index v = 0;
  while (std::isdigit(in.peek())) {
    v = v * 10 + (in.get() - '0');
    if (v > (Index{1} << 24)) throw Error(ErrorCode::MalformedHeader, "netpbm extent too large");
  }
  return v;
}

struct Netpbm {
  Index width, height;
  std::vector<unsigned char> payload;
};

Netpbm read_netpbm(const std::filesystem::path& path, const char* magic, Index channels) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  char m[2] = {0, 0};
  if (!in.read(m, 2) || m[0] != magic[0] || m[1] != magic[1]) {
    throw Error(ErrorCode::MalformedHeader, path.string() + " is not a " + magic + " file");
  }
  Netpbm img{read_header_int(in), read_header_int(in), {}};
  const Index maxval = read_header_int(in);
  if (img.width <= 0 || img.height <= 0) throw Error(ErrorCode::MalformedHeader, "zero extent");
  if (maxval != 255) throw Error(ErrorCode::MalformedHeader, "only maxval 255 is supported");
  if (!std::isspace(in.get())) throw Error(ErrorCode::MalformedHeader, "missing separator after maxval");
  img.payload.resize(static_cast<std::size_t>(img.width * img.height * channels));
  if (!in.read(reinterpret_cast<char*>(img.payload.data()), static_cast<std::streamsize>(img.payload.size()))) {
    throw Error(ErrorCode::MalformedHeader, "truncated pixel data in " + path.string());
  }
  return img;
}

}  // namespace

void write_ppm(const std::filesystem::path& path, const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 3) throw Error(ErrorCode::ShapeMismatch, "write_ppm expects 3xHxW");
  const Index h = image.dim(1), w = image.dim(2);
  std::vector<unsigned char> payload(static_cast<std::size_t>(3 * h * w));
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x)
      for (Index c = 0; c < 3; ++c)
        payload[static_cast<std::size_t>((y * w + x) * 3 + c)] = quantize(image[(c * h + y) * w + x]);
  write_netpbm(path, "P6", w, h, payload);
}

void write_pgm(const std::filesystem::path& path, const Tensor& image) {
  if (image.rank() != 2) throw Error(ErrorCode::ShapeMismatch, "write_pgm expects HxW");
  std::vector<unsigned char> payload(static_cast<std::size_t>(image.numel()));
  for (Index i = 0; i < image.numel(); ++i) payload[static_cast<std::size_t>(i)] = quantize(image[i]);
  write_netpbm(path, "P5", image.dim(1), image.dim(0), payload);
}

Tensor read_ppm(const std::filesystem::path& path) {
  const Netpbm img = read_netpbm(path, "P6", 3);
  const Index h = img.height, w = img.width;
  Buffer data(3 * h * w);
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x)
      for (Index c = 0; c < 3; ++c)
        data[(c * h + y) * w + x] = img.payload[static_cast<std::size_t>((y * w + x) * 3 + c)] / 255.0;
  return Tensor({3, h, w}, std::move(data));
}

Tensor read_pgm(const std::filesystem::path& path) {
  const Netpbm img = read_netpbm(path, "P5", 1);
  Buffer data(img.width * img.height);
  for (Index i = 0; i < data.size(); ++i) data[i] = img.payload[static_cast<std::size_t>(i)] / 255.0;
  return Tensor({img.height, img.width}, std::move(data));
}

Tensor disparity_visualization(const Tensor& depth) {
  if (!(depth.data() > 0.0).all()) throw Error(ErrorCode::NonPositiveDepth, "visualization needs positive depth");
  const Buffer disp = 1.0 / depth.data();
  const double lo = disp.minCoeff(), hi = disp.maxCoeff();
  if (hi - lo <= 0.0) return Tensor::zeros(depth.shape());
  return Tensor(depth.shape(), (disp - lo) / (hi - lo));
}

}  // namespace posedepth
