// SPDX-License-Identifier: Apache-2.0
//
// "ETNS" binary tensor dump:
//   magic "ETNS" | version u16 | rank u16 | dims u64 x rank | f64 payload
// All integers and floats little-endian, payload row-major.
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "eclip/tensor.hpp"

namespace eclip {

inline constexpr std::uint16_t kTensorFormatVersion = 1;

namespace bytes {

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v);
void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v);
void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v);
void put_f64(std::vector<std::uint8_t>& out, double v);
void put_string(std::vector<std::uint8_t>& out, const std::string& s);

/// Bounds-checked little-endian reader. Running past the end raises FormatError.
class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> buf) : buf_(buf) {}
  std::uint16_t u16();
  std::uint32_t u32();
  std::uint64_t u64();
  double f64();
  std::string string();
  std::span<const std::uint8_t> take(std::size_t n);
  bool at_end() const { return pos_ == buf_.size(); }
  std::size_t position() const { return pos_; }

 private:
  std::span<const std::uint8_t> buf_;
  std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> data);

}  // namespace bytes

void encode_tensor(std::vector<std::uint8_t>& out, const Tensor& t);
Tensor decode_tensor(bytes::Reader& in);

void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

}  // namespace eclip
