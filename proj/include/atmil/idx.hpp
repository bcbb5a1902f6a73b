#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "atmil/errors.hpp"
#include "atmil/morpho.hpp"

namespace atmil {

// Reader and writer for the big-endian IDX container used by MNIST-style
// datasets: u8 image tensors under magic 0x00000803 (3 dims) and u8 label
// vectors under magic 0x00000801 (1 dim). Errors name the byte offset.

struct IdxData {
  std::vector<DigitImage> images;
  std::vector<int> labels;
};

namespace detail {

constexpr uint32_t kIdxImagesMagic = 0x00000803;
constexpr uint32_t kIdxLabelsMagic = 0x00000801;

inline uint32_t read_u32_be(std::istream& in, const std::string& path, int64_t& offset) {
  unsigned char buf[4];
  in.read(reinterpret_cast<char*>(buf), 4);
  if (in.gcount() != 4)
    throw FormatError(path + ": unexpected end of file at offset " + std::to_string(offset));
  offset += 4;
  return (static_cast<uint32_t>(buf[0]) << 24) | (static_cast<uint32_t>(buf[1]) << 16) |
         (static_cast<uint32_t>(buf[2]) << 8) | static_cast<uint32_t>(buf[3]);
}

inline void write_u32_be(std::ostream& out, uint32_t v) {
  unsigned char buf[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(buf), 4);
}

inline std::string hex_magic(uint32_t v) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "0x%08x", v);
  return buf;
}

}  // namespace detail

/// Loads an image file plus its label file; pixel bytes scale to [0,1].
inline IdxData load_idx(const std::string& images_path, const std::string& labels_path) {
  std::ifstream imgs(images_path, std::ios::binary);
  if (!imgs) throw FormatError(images_path + ": cannot open");
  int64_t off = 0;
  uint32_t magic = detail::read_u32_be(imgs, images_path, off);
  if (magic != detail::kIdxImagesMagic)
    throw FormatError(images_path + ": bad magic " + detail::hex_magic(magic) + " at offset 0, " +
                      "expected " + detail::hex_magic(detail::kIdxImagesMagic));
  uint32_t count = detail::read_u32_be(imgs, images_path, off);
  uint32_t rows = detail::read_u32_be(imgs, images_path, off);
  uint32_t cols = detail::read_u32_be(imgs, images_path, off);
  if (rows == 0 || cols == 0 || rows > 4096 || cols > 4096)
    throw FormatError(images_path + ": implausible image dims " + std::to_string(rows) + "x" +
                      std::to_string(cols) + " at offset 8");

  IdxData data;
  data.images.reserve(count);
  std::vector<unsigned char> buf(static_cast<size_t>(rows) * cols);
  for (uint32_t i = 0; i < count; ++i) {
    imgs.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (imgs.gcount() != static_cast<std::streamsize>(buf.size()))
      throw FormatError(images_path + ": unexpected end of file at offset " +
                        std::to_string(off + imgs.gcount()) + " (image " + std::to_string(i) + ")");
    off += static_cast<int64_t>(buf.size());
    DigitImage img;
    img.height = static_cast<int>(rows);
    img.width = static_cast<int>(cols);
    img.pixels.resize(buf.size());
    for (size_t p = 0; p < buf.size(); ++p) img.pixels[p] = buf[p] / 255.0;
    data.images.push_back(std::move(img));
  }

  std::ifstream labs(labels_path, std::ios::binary);
  if (!labs) throw FormatError(labels_path + ": cannot open");
  int64_t loff = 0;
  uint32_t lmagic = detail::read_u32_be(labs, labels_path, loff);
  if (lmagic != detail::kIdxLabelsMagic)
    throw FormatError(labels_path + ": bad magic " + detail::hex_magic(lmagic) + " at offset 0, " +
                      "expected " + detail::hex_magic(detail::kIdxLabelsMagic));
  uint32_t lcount = detail::read_u32_be(labs, labels_path, loff);
  if (lcount != count)
    throw FormatError(labels_path + ": " + std::to_string(lcount) + " labels for " +
                      std::to_string(count) + " images");
  data.labels.resize(lcount);
  for (uint32_t i = 0; i < lcount; ++i) {
    char b;
    labs.read(&b, 1);
    if (labs.gcount() != 1)
      throw FormatError(labels_path + ": unexpected end of file at offset " +
                        std::to_string(loff));
    ++loff;
    data.labels[i] = static_cast<unsigned char>(b);
  }
  return data;
}

/// Writes images and labels in IDX layout; pixels quantize to u8.
inline void save_idx(const std::string& images_path, const std::string& labels_path,
                     const std::vector<DigitImage>& images, const std::vector<int>& labels) {
  if (images.size() != labels.size())
    throw UsageError("save_idx: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(images.size()) + " images");
  if (images.empty()) throw UsageError("save_idx: nothing to write");
  int rows = images[0].height, cols = images[0].width;

  std::ofstream imgs(images_path, std::ios::binary | std::ios::trunc);
  if (!imgs) throw FormatError(images_path + ": cannot open for writing");
  detail::write_u32_be(imgs, detail::kIdxImagesMagic);
  detail::write_u32_be(imgs, static_cast<uint32_t>(images.size()));
  detail::write_u32_be(imgs, static_cast<uint32_t>(rows));
  detail::write_u32_be(imgs, static_cast<uint32_t>(cols));
  std::vector<unsigned char> buf;
  for (const DigitImage& img : images) {
    if (img.height != rows || img.width != cols)
      throw UsageError("save_idx: mixed image sizes");
    buf.resize(img.pixels.size());
    for (size_t p = 0; p < buf.size(); ++p) {
      double v = std::clamp(img.pixels[p], 0.0, 1.0);
      buf[p] = static_cast<unsigned char>(std::lround(v * 255.0));
    }
    imgs.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  }

  std::ofstream labs(labels_path, std::ios::binary | std::ios::trunc);
  if (!labs) throw FormatError(labels_path + ": cannot open for writing");
  detail::write_u32_be(labs, detail::kIdxLabelsMagic);
  detail::write_u32_be(labs, static_cast<uint32_t>(labels.size()));
  for (int lab : labels) {
    if (lab < 0 || lab > 255) throw UsageError("save_idx: label out of u8 range");
    char b = static_cast<char>(static_cast<unsigned char>(lab));
    labs.write(&b, 1);
  }
}

}  // namespace atmil
