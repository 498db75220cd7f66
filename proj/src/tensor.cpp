// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "stylemotion/tensor.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

namespace stylemotion {

namespace {

constexpr char kMagic[4] = {'M', 'I', 'M', 'T'};
constexpr uint32_t kMaxRank = 4;
// Caps total element count so payload sizes stay within size_t on any host.
constexpr uint64_t kMaxElements = uint64_t{1} << 34;

void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32(std::istream& is, const char* what) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (is.gcount() != 4) throw ParseError(std::string("truncated ") + what);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) |
         (static_cast<uint32_t>(b[3]) << 24);
}

static_assert(std::numeric_limits<float>::is_iec559, "requires IEEE floats");
static_assert(sizeof(float) == 4, "requires 32-bit float");

uint32_t f32_bits(float f) {
  uint32_t u;
  std::memcpy(&u, &f, 4);
  return u;
}

float bits_f32(uint32_t u) {
  float f;
  std::memcpy(&f, &u, 4);
  return f;
}

}  // namespace

NdArray NdArray::zeros(std::vector<uint32_t> shape) {
  NdArray a;
  a.shape = std::move(shape);
  a.data.assign(a.size(), 0.0f);
  return a;
}

size_t NdArray::size() const {
  uint64_t n = 1;
  for (uint32_t d : shape) n *= d;
  return static_cast<size_t>(n);
}

void write_tensor(std::ostream& os, const NdArray& a) {
  if (a.rank() < 1 || a.rank() > kMaxRank)
    throw ShapeError("tensor rank must be 1..4, got " +
                     std::to_string(a.rank()));
  uint64_t n = 1;
  for (uint32_t d : a.shape) {
    n *= d;
    if (n > kMaxElements) throw ShapeError("tensor too large to serialize");
  }
  if (n != a.data.size())
    throw ShapeError("tensor data size does not match shape");
  for (float f : a.data)
    if (!std::isfinite(f)) throw NumericError("tensor contains non-finite values");

  os.write(kMagic, 4);
  put_u32(os, static_cast<uint32_t>(a.rank()));
  for (uint32_t d : a.shape) put_u32(os, d);
  for (float f : a.data) put_u32(os, f32_bits(f));
  if (!os) throw IoError("tensor write failed");
}

void write_tensor(const std::filesystem::path& path, const NdArray& a) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path.string());
  write_tensor(os, a);
  os.flush();
  if (!os) throw IoError("tensor write failed: " + path.string());
}

NdArray read_tensor(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  if (is.gcount() != 4 || std::memcmp(magic, kMagic, 4) != 0)
    throw ParseError("bad magic, not a tensor file");

  const uint32_t rank = get_u32(is, "tensor header");
  if (rank < 1 || rank > kMaxRank)
    throw ParseError("bad tensor rank " + std::to_string(rank));

  NdArray a;
  a.shape.resize(rank);
  uint64_t n = 1;
  for (uint32_t i = 0; i < rank; ++i) {
    a.shape[i] = get_u32(is, "tensor dims");
    n *= a.shape[i];
    if (n > kMaxElements) throw ParseError("tensor dim overflow");
  }

  a.data.resize(static_cast<size_t>(n));
  std::vector<unsigned char> raw(static_cast<size_t>(n) * 4);
  is.read(reinterpret_cast<char*>(raw.data()),
          static_cast<std::streamsize>(raw.size()));
  if (static_cast<size_t>(is.gcount()) != raw.size())
    throw ParseError("truncated tensor payload");
  for (size_t i = 0; i < a.data.size(); ++i) {
    const uint32_t u = static_cast<uint32_t>(raw[4 * i]) |
                       (static_cast<uint32_t>(raw[4 * i + 1]) << 8) |
                       (static_cast<uint32_t>(raw[4 * i + 2]) << 16) |
                       (static_cast<uint32_t>(raw[4 * i + 3]) << 24);
    a.data[i] = bits_f32(u);
  }
  return a;
}

NdArray read_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open for reading: " + path.string());
  return read_tensor(is);
}

}  // namespace stylemotion
