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

#ifndef STYLEMOTION_TENSOR_HPP_
#define STYLEMOTION_TENSOR_HPP_

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include "stylemotion/error.hpp"

namespace stylemotion {

// Dense float32 array, rank 1..4, row-major (last dimension contiguous).
struct NdArray {
  std::vector<uint32_t> shape;
  std::vector<float> data;

  NdArray() = default;
  NdArray(std::vector<uint32_t> s, std::vector<float> d)
      : shape(std::move(s)), data(std::move(d)) {}

  static NdArray zeros(std::vector<uint32_t> shape);

  size_t rank() const { return shape.size(); }
  uint32_t dim(size_t i) const { return shape.at(i); }
  size_t size() const;
};

// Binary tensor container: magic "MIMT", u32 rank, rank x u32 dims,
// float32 payload; all values little-endian, payload row-major.
void write_tensor(std::ostream& os, const NdArray& a);
void write_tensor(const std::filesystem::path& path, const NdArray& a);
NdArray read_tensor(std::istream& is);
NdArray read_tensor(const std::filesystem::path& path);

}  // namespace stylemotion

#endif  // STYLEMOTION_TENSOR_HPP_
