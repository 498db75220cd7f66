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

#ifndef STYLEMOTION_ERROR_HPP_
#define STYLEMOTION_ERROR_HPP_

#include <stdexcept>
#include <string>

namespace stylemotion {

// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed file contents (tensor containers, wav, json).
class ParseError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration, arguments or dataset contents.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Incompatible tensor/sequence dimensions.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Filesystem failures (open/read/write).
class IoError : public Error {
 public:
  using Error::Error;
};

// Non-finite values where finite math is required.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace stylemotion

#endif  // STYLEMOTION_ERROR_HPP_
