#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "modaladapt/matrix.hpp"

namespace modaladapt {

// Little-endian binary primitives. Explicit byte order keeps all file
// formats host-independent and bit-exact.

inline void write_u32_le(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t read_u32_le(std::istream& in, const std::string& what) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) {
    throw std::runtime_error(what + ": truncated file (u32 expected)");
  }
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void write_f64_le(std::ostream& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof(bits));
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(b), 8);
}

inline double read_f64_le(std::istream& in, const std::string& what) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8)) {
    throw std::runtime_error(what + ": truncated file (f64 expected)");
  }
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  double v;
  std::memcpy(&v, &bits, sizeof(v));
  return v;
}

inline void write_f64_array(std::ostream& out, std::span<const double> values) {
  for (double v : values) write_f64_le(out, v);
}

inline void read_f64_array(std::istream& in, std::span<double> values, const std::string& what) {
  for (double& v : values) v = read_f64_le(in, what);
}

inline void write_magic(std::ostream& out, const char* magic) {
  out.write(magic, static_cast<std::streamsize>(std::string::traits_type::length(magic)));
}

inline void expect_magic(std::istream& in, const char* magic, const std::string& what) {
  const std::size_t n = std::string::traits_type::length(magic);
  std::string got(n, '\0');
  if (!in.read(got.data(), static_cast<std::streamsize>(n)) || got != magic) {
    throw std::runtime_error(what + ": bad magic, expected '" + magic + "'");
  }
}

inline std::ofstream open_output(const std::filesystem::path& path, const std::string& what) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error(what + ": cannot open '" + path.string() + "' for writing");
  return out;
}

inline std::ifstream open_input(const std::filesystem::path& path, const std::string& what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(what + ": cannot open '" + path.string() + "'");
  return in;
}

// Feature files: magic "MMAF1", u32 frame count, u32 dim, f64 LE row-major.
inline constexpr const char* kFeatureMagic = "MMAF1";
// Waveform files: magic "MMWV1", u32 sample count, f64 LE samples in [-1,1].
inline constexpr const char* kWaveMagic = "MMWV1";

inline void write_feature_file(const std::filesystem::path& path, const Matrix& features) {
  auto out = open_output(path, "feature file");
  write_magic(out, kFeatureMagic);
  write_u32_le(out, static_cast<std::uint32_t>(features.rows()));
  write_u32_le(out, static_cast<std::uint32_t>(features.cols()));
  write_f64_array(out, features.values());
  if (!out) throw std::runtime_error("feature file: write failed for '" + path.string() + "'");
}

inline Matrix read_feature_file(const std::filesystem::path& path) {
  const std::string what = "feature file '" + path.string() + "'";
  auto in = open_input(path, what);
  expect_magic(in, kFeatureMagic, what);
  const std::uint32_t rows = read_u32_le(in, what);
  const std::uint32_t cols = read_u32_le(in, what);
  if (rows < 1 || cols < 1) throw std::runtime_error(what + ": empty feature matrix");
  Matrix m(rows, cols);
  read_f64_array(in, m.values(), what);
  if (in.peek() != std::char_traits<char>::eof()) {
    throw std::runtime_error(what + ": trailing bytes after feature data");
  }
  if (!m.all_finite()) throw std::runtime_error(what + ": non-finite feature values");
  return m;
}

inline void write_wave_file(const std::filesystem::path& path, std::span<const double> samples) {
  auto out = open_output(path, "waveform file");
  write_magic(out, kWaveMagic);
  write_u32_le(out, static_cast<std::uint32_t>(samples.size()));
  write_f64_array(out, samples);
  if (!out) throw std::runtime_error("waveform file: write failed for '" + path.string() + "'");
}

inline std::vector<double> read_wave_file(const std::filesystem::path& path) {
  const std::string what = "waveform file '" + path.string() + "'";
  auto in = open_input(path, what);
  expect_magic(in, kWaveMagic, what);
  const std::uint32_t count = read_u32_le(in, what);
  std::vector<double> samples(count);
  read_f64_array(in, samples, what);
  if (in.peek() != std::char_traits<char>::eof()) {
    throw std::runtime_error(what + ": trailing bytes after sample data");
  }
  for (double v : samples) {
    if (!(v >= -1.0 && v <= 1.0)) {
      throw std::runtime_error(what + ": sample outside [-1,1]");
    }
  }
  return samples;
}

}  // namespace modaladapt
