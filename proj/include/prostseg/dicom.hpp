#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "prostseg/error.hpp"

namespace prostseg {

// Minimal DICOM reader: uncompressed little-endian transfer syntaxes
// (implicit 1.2.840.10008.1.2 and explicit 1.2.840.10008.1.2.1),
// single-frame grayscale pixel data, 8 or 16 bits allocated.
// Enough for locally exported T2 slice series; anything else is rejected
// with a decode error naming the file.

struct DicomSlice {
  std::string patient_id;   // (0010,0020), may be empty
  long instance_number = -1;  // (0020,0013), -1 when absent
  int rows = 0;
  int cols = 0;
  std::vector<float> pixels;  // rescale slope/intercept applied
};

inline bool has_dicom_magic(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return false;
  char buf[132];
  if (!in.read(buf, 132)) return false;
  return std::memcmp(buf + 128, "DICM", 4) == 0;
}

namespace detail {

class DicomCursor {
 public:
  DicomCursor(const std::uint8_t* p, std::size_t n, const std::string& path)
      : p_(p), n_(n), path_(path) {}

  bool eof() const { return pos_ >= n_; }
  std::size_t pos() const { return pos_; }

  std::uint16_t u16() {
    need(2);
    std::uint16_t v = static_cast<std::uint16_t>(p_[pos_] | (p_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = p_[pos_] | (p_[pos_ + 1] << 8) | (p_[pos_ + 2] << 16) |
                      (static_cast<std::uint32_t>(p_[pos_ + 3]) << 24);
    pos_ += 4;
    return v;
  }
  std::string bytes(std::size_t len) {
    need(len);
    std::string s(reinterpret_cast<const char*>(p_ + pos_), len);
    pos_ += len;
    return s;
  }
  const std::uint8_t* raw(std::size_t len) {
    need(len);
    const std::uint8_t* r = p_ + pos_;
    pos_ += len;
    return r;
  }
  void skip(std::size_t len) { need(len), pos_ += len; }

 private:
  void need(std::size_t len) const {
    if (pos_ + len > n_) throw DataError("truncated DICOM file: " + path_);
  }
  const std::uint8_t* p_;
  std::size_t n_;
  std::size_t pos_ = 0;
  std::string path_;
};

inline bool is_long_vr(const char vr[2]) {
  static const char* long_vrs[] = {"OB", "OW", "OF", "SQ", "UT", "UN"};
  for (const char* v : long_vrs)
    if (vr[0] == v[0] && vr[1] == v[1]) return true;
  return false;
}

inline std::string trim_dicom_string(std::string s) {
  while (!s.empty() && (s.back() == ' ' || s.back() == '\0')) s.pop_back();
  std::size_t b = 0;
  while (b < s.size() && s[b] == ' ') ++b;
  return s.substr(b);
}

}  // namespace detail

inline DicomSlice read_dicom(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open DICOM file: " + path);
  std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() < 132 || std::memcmp(buf.data() + 128, "DICM", 4) != 0)
    throw DataError("missing DICM magic: " + path);

  detail::DicomCursor c(buf.data(), buf.size(), path);
  c.skip(132);

  bool explicit_vr = true;  // file meta group is always explicit little-endian
  bool meta_done = false;
  std::string transfer_syntax = "1.2.840.10008.1.2.1";

  DicomSlice out;
  int bits_allocated = 16;
  bool pixel_signed = false;
  double slope = 1.0, intercept = 0.0;
  const std::uint8_t* pixel_data = nullptr;
  std::uint32_t pixel_len = 0;

  while (!c.eof()) {
    std::uint16_t group = c.u16();
    std::uint16_t elem = c.u16();

    if (!meta_done && group != 0x0002) {
      meta_done = true;
      explicit_vr = (transfer_syntax != "1.2.840.10008.1.2");
      if (transfer_syntax != "1.2.840.10008.1.2" && transfer_syntax != "1.2.840.10008.1.2.1")
        throw DataError("unsupported DICOM transfer syntax " + transfer_syntax + ": " + path);
    }
    bool this_explicit = (group == 0x0002) ? true : explicit_vr;

    char vr[2] = {0, 0};
    std::uint32_t len;
    if (this_explicit) {
      std::string v = c.bytes(2);
      vr[0] = v[0];
      vr[1] = v[1];
      if (detail::is_long_vr(vr)) {
        c.skip(2);
        len = c.u32();
      } else {
        len = c.u16();
      }
    } else {
      len = c.u32();
    }

    // sequences and items with undefined length: walk to the delimiter
    if (len == 0xFFFFFFFFu) {
      int depth = 1;
      while (depth > 0) {
        std::uint16_t g = c.u16(), e = c.u16();
        std::uint32_t l = c.u32();
        if (g == 0xFFFE && e == 0xE0DD) {
          --depth;
        } else if (g == 0xFFFE && (e == 0xE000 || e == 0xE00D)) {
          if (e == 0xE000 && l != 0xFFFFFFFFu) c.skip(l);
        } else {
          if (l == 0xFFFFFFFFu) ++depth;
          else c.skip(l);
        }
      }
      continue;
    }

    auto tag_is = [&](std::uint16_t g, std::uint16_t e) { return group == g && elem == e; };
    if (tag_is(0x0002, 0x0010)) {
      transfer_syntax = detail::trim_dicom_string(c.bytes(len));
    } else if (tag_is(0x0010, 0x0020)) {
      out.patient_id = detail::trim_dicom_string(c.bytes(len));
    } else if (tag_is(0x0020, 0x0013)) {
      std::string s = detail::trim_dicom_string(c.bytes(len));
      if (!s.empty()) out.instance_number = std::strtol(s.c_str(), nullptr, 10);
    } else if (tag_is(0x0028, 0x0010)) {
      out.rows = detail::DicomCursor(c.raw(len), len, path).u16();
    } else if (tag_is(0x0028, 0x0011)) {
      out.cols = detail::DicomCursor(c.raw(len), len, path).u16();
    } else if (tag_is(0x0028, 0x0100)) {
      bits_allocated = detail::DicomCursor(c.raw(len), len, path).u16();
    } else if (tag_is(0x0028, 0x0103)) {
      pixel_signed = detail::DicomCursor(c.raw(len), len, path).u16() == 1;
    } else if (tag_is(0x0028, 0x1052)) {
      intercept = std::strtod(detail::trim_dicom_string(c.bytes(len)).c_str(), nullptr);
    } else if (tag_is(0x0028, 0x1053)) {
      std::string s = detail::trim_dicom_string(c.bytes(len));
      if (!s.empty()) slope = std::strtod(s.c_str(), nullptr);
    } else if (tag_is(0x7FE0, 0x0010)) {
      pixel_data = c.raw(len);
      pixel_len = len;
    } else {
      c.skip(len);
    }
  }

  if (out.rows <= 0 || out.cols <= 0 || !pixel_data)
    throw DataError("DICOM file lacks image data: " + path);
  const std::size_t npix = static_cast<std::size_t>(out.rows) * out.cols;
  out.pixels.resize(npix);
  if (bits_allocated == 8) {
    if (pixel_len < npix) throw DataError("truncated pixel data: " + path);
    for (std::size_t i = 0; i < npix; ++i)
      out.pixels[i] = static_cast<float>(slope * pixel_data[i] + intercept);
  } else if (bits_allocated == 16) {
    if (pixel_len < npix * 2) throw DataError("truncated pixel data: " + path);
    for (std::size_t i = 0; i < npix; ++i) {
      std::uint16_t raw = static_cast<std::uint16_t>(pixel_data[2 * i] | (pixel_data[2 * i + 1] << 8));
      double v = pixel_signed ? static_cast<double>(static_cast<std::int16_t>(raw)) : static_cast<double>(raw);
      out.pixels[i] = static_cast<float>(slope * v + intercept);
    }
  } else {
    throw DataError("unsupported DICOM bit depth: " + path);
  }
  return out;
}

}  // namespace prostseg
