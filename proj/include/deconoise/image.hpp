#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "deconoise/tensor.hpp"

namespace deconoise {

struct Image {
  int height = 0;
  int width = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(int h, int w) : height(h), width(w), pixels(static_cast<std::size_t>(h) * w, 0.0f) {}

  float& at(int r, int c) { return pixels[static_cast<std::size_t>(r) * width + c]; }
  float at(int r, int c) const { return pixels[static_cast<std::size_t>(r) * width + c]; }
  std::size_t size() const { return pixels.size(); }
};

// Phantoms share the pixel representation; the name tracks what the buffer
// holds (pre-convolution ground truth vs observed intensities).
using Phantom = Image;

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

inline void put_f32(std::string& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

// Stream reader that tracks its byte offset so parse errors can say where the
// file went wrong.
class ByteReader {
 public:
  ByteReader(std::istream& in, std::string context)
      : in_(in), context_(std::move(context)) {}

  void read(void* dst, std::size_t n) {
    in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n)
      require(false, context_, ": truncated at byte ",
              offset_ + static_cast<std::size_t>(std::max<std::streamsize>(in_.gcount(), 0)),
              " (wanted ", n, " more bytes)");
    offset_ += n;
  }

  std::uint32_t u32() {
    unsigned char b[4];
    read(b, 4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  }

  std::size_t offset() const { return offset_; }
  const std::string& context() const { return context_; }

 private:
  std::istream& in_;
  std::string context_;
  std::size_t offset_ = 0;
};

}  // namespace detail

// Raw tensor format: magic "NTF1", u32 ndim, u32 dims, then float32 payload,
// everything little-endian.
inline void encode_tensor(std::string& out, const Shape& shape,
                          const std::vector<float>& data) {
  out.append("NTF1", 4);
  detail::put_u32(out, static_cast<std::uint32_t>(shape.size()));
  for (int d : shape) detail::put_u32(out, static_cast<std::uint32_t>(d));
  for (float v : data) detail::put_f32(out, v);
}

inline void decode_tensor(detail::ByteReader& r, Shape& shape,
                          std::vector<float>& data) {
  const std::size_t magic_at = r.offset();
  char magic[4];
  r.read(magic, 4);
  detail::require(std::memcmp(magic, "NTF1", 4) == 0, r.context(),
                  ": bad magic at byte ", magic_at);
  const std::uint32_t ndim = r.u32();
  detail::require(ndim >= 1 && ndim <= 8, r.context(), ": implausible ndim ",
                  ndim, " at byte ", magic_at + 4);
  shape.clear();
  std::size_t n = 1;
  for (std::uint32_t i = 0; i < ndim; ++i) {
    const std::uint32_t d = r.u32();
    detail::require(d >= 1, r.context(), ": zero dim at byte ", r.offset() - 4);
    shape.push_back(static_cast<int>(d));
    n *= d;
  }
  data.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint32_t bits = r.u32();
    std::memcpy(&data[i], &bits, 4);
  }
}

inline void save_tensor(const std::string& path, const Shape& shape,
                        const std::vector<float>& data) {
  std::string buf;
  buf.reserve(12 + 4 * shape.size() + 4 * data.size());
  encode_tensor(buf, shape, data);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  detail::require(out.good(), path, ": cannot open for writing");
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  out.close();
  detail::require(out.good(), path, ": write failed");
}

inline void load_tensor(const std::string& path, Shape& shape,
                        std::vector<float>& data) {
  std::ifstream in(path, std::ios::binary);
  detail::require(in.good(), path, ": cannot open");
  detail::ByteReader r(in, path);
  decode_tensor(r, shape, data);
}

inline void save_image(const std::string& path, const Image& img) {
  save_tensor(path, {img.height, img.width}, img.pixels);
}

inline Image load_image(const std::string& path) {
  Shape shape;
  std::vector<float> data;
  load_tensor(path, shape, data);
  detail::require(shape.size() == 2, path, ": expected a 2-D image, got ",
                  shape_str(shape));
  Image img(shape[0], shape[1]);
  img.pixels = std::move(data);
  return img;
}

// 16-bit binary PGM (P5, maxval 65535, big-endian samples). Intensities map
// linearly from [min, max] to [0, 65535]; a constant image maps to all zeros.
inline void save_pgm16(const std::string& path, const Image& img) {
  float lo = img.pixels.empty() ? 0.0f : img.pixels[0];
  float hi = lo;
  for (float v : img.pixels) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const float range = hi - lo;
  std::string buf = "P5\n" + std::to_string(img.width) + " " +
                    std::to_string(img.height) + "\n65535\n";
  buf.reserve(buf.size() + 2 * img.size());
  for (float v : img.pixels) {
    unsigned s = 0;
    if (range > 0.0f) {
      const float t = (v - lo) / range * 65535.0f;
      s = static_cast<unsigned>(std::lround(std::clamp(t, 0.0f, 65535.0f)));
    }
    buf.push_back(static_cast<char>((s >> 8) & 0xff));
    buf.push_back(static_cast<char>(s & 0xff));
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  detail::require(out.good(), path, ": cannot open for writing");
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  out.close();
  detail::require(out.good(), path, ": write failed");
}

inline Tensor<float> image_to_tensor(const Image& img) {
  auto t = Tensor<float>::zeros({1, 1, img.height, img.width});
  t.value() = img.pixels;
  return t;
}

inline Image tensor_to_image(const Tensor<float>& t) {
  detail::require(t.shape().size() == 4 && t.dim(0) == 1 && t.dim(1) == 1,
                  "tensor_to_image: expected [1,1,H,W], got ",
                  shape_str(t.shape()));
  Image img(t.dim(2), t.dim(3));
  img.pixels = t.value();
  return img;
}

}  // namespace deconoise
