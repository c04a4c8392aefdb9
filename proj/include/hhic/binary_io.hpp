#pragma once

// Little-endian POD streaming helpers for checkpoint files.

#include <cstdint>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "hhic/error.hpp"

namespace hhic::io {

template <typename T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw ParseError("unexpected end of binary stream");
  return v;
}

template <typename T>
void write_array(std::ostream& out, const std::vector<T>& v) {
  out.write(reinterpret_cast<const char*>(v.data()), std::streamsize(v.size() * sizeof(T)));
}

template <typename T>
std::vector<T> read_array(std::istream& in, std::size_t n) {
  std::vector<T> v(n);
  in.read(reinterpret_cast<char*>(v.data()), std::streamsize(n * sizeof(T)));
  if (!in) throw ParseError("unexpected end of binary stream");
  return v;
}

inline void write_string(std::ostream& out, const std::string& s) {
  write_pod<std::uint64_t>(out, s.size());
  out.write(s.data(), std::streamsize(s.size()));
}

inline std::string read_string(std::istream& in) {
  const auto n = read_pod<std::uint64_t>(in);
  if (n > (std::uint64_t(1) << 32)) throw ParseError("implausible string length in binary stream");
  std::string s(n, '\0');
  in.read(s.data(), std::streamsize(n));
  if (!in) throw ParseError("unexpected end of binary stream");
  return s;
}

}  // namespace hhic::io
