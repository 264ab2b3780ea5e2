// SPDX-License-Identifier: Apache-2.0

#include "eclip/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "eclip/errors.hpp"

namespace eclip {

namespace bytes {

namespace {

template <class T>
void put_le(std::vector<std::uint8_t>& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

}  // namespace

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) { put_le(out, v); }
void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) { put_le(out, v); }
void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) { put_le(out, v); }
void put_f64(std::vector<std::uint8_t>& out, double v) { put_le(out, std::bit_cast<std::uint64_t>(v)); }

void put_string(std::vector<std::uint8_t>& out, const std::string& s) {
  put_u64(out, s.size());
  out.insert(out.end(), s.begin(), s.end());
}

std::span<const std::uint8_t> Reader::take(std::size_t n) {
  if (n > buf_.size() - pos_) {
    throw FormatError("truncated data: need " + std::to_string(n) + " bytes at offset " + std::to_string(pos_) +
                      ", have " + std::to_string(buf_.size() - pos_));
  }
  auto s = buf_.subspan(pos_, n);
  pos_ += n;
  return s;
}

namespace {

template <class T>
T get_le(Reader& r) {
  auto s = r.take(sizeof(T));
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<T>(s[i]) << (8 * i));
  return v;
}

}  // namespace

std::uint16_t Reader::u16() { return get_le<std::uint16_t>(*this); }
std::uint32_t Reader::u32() { return get_le<std::uint32_t>(*this); }
std::uint64_t Reader::u64() { return get_le<std::uint64_t>(*this); }
double Reader::f64() { return std::bit_cast<double>(get_le<std::uint64_t>(*this)); }

std::string Reader::string() {
  const auto n = u64();
  auto s = take(n);
  return {s.begin(), s.end()};
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (!out) throw InputError("write failed for " + path.string());
}

}  // namespace bytes

void encode_tensor(std::vector<std::uint8_t>& out, const Tensor& t) {
  out.insert(out.end(), {'E', 'T', 'N', 'S'});
  bytes::put_u16(out, kTensorFormatVersion);
  bytes::put_u16(out, static_cast<std::uint16_t>(t.rank()));
  for (auto d : t.shape()) bytes::put_u64(out, d);
  for (double v : t.data()) bytes::put_f64(out, v);
}

Tensor decode_tensor(bytes::Reader& in) {
  auto magic = in.take(4);
  if (std::memcmp(magic.data(), "ETNS", 4) != 0) throw FormatError("bad tensor magic");
  const auto version = in.u16();
  if (version != kTensorFormatVersion) throw FormatError("unsupported tensor version " + std::to_string(version));
  const auto rank = in.u16();
  Shape shape(rank);
  std::size_t n = 1;
  for (auto& d : shape) {
    d = in.u64();
    if (d == 0 || d > (std::size_t{1} << 40) || n > (std::size_t{1} << 40) / d) throw FormatError("bad tensor dims");
    n *= d;
  }
  if (n * 8 > 1ull << 40) throw FormatError("tensor too large");
  std::vector<double> data(n);
  for (auto& v : data) v = in.f64();
  return Tensor::from(std::move(shape), std::move(data));
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  std::vector<std::uint8_t> buf;
  encode_tensor(buf, t);
  bytes::write_file(path, buf);
}

Tensor load_tensor(const std::filesystem::path& path) {
  const auto buf = bytes::read_file(path);
  bytes::Reader r(buf);
  auto t = decode_tensor(r);
  if (!r.at_end()) throw FormatError("trailing bytes after tensor in " + path.string());
  return t;
}

}  // namespace eclip
