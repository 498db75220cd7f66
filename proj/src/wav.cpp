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

#include "stylemotion/wav.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "stylemotion/error.hpp"

namespace stylemotion {

namespace {

void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u16(std::ostream& os, uint16_t v) {
  unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 2);
}

uint32_t get_u32(const unsigned char* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) |
         (static_cast<uint32_t>(p[3]) << 24);
}

uint16_t get_u16(const unsigned char* p) {
  return static_cast<uint16_t>(p[0] | (p[1] << 8));
}

}  // namespace

void write_wav(const std::filesystem::path& path, const Waveform& w) {
  if (w.sample_rate <= 0) throw ConfigError("waveform sample rate must be > 0");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path.string());

  const uint32_t rate = static_cast<uint32_t>(std::lround(w.sample_rate));
  const uint32_t data_bytes = static_cast<uint32_t>(w.samples.size() * 2);
  os.write("RIFF", 4);
  put_u32(os, 36 + data_bytes);
  os.write("WAVE", 4);
  os.write("fmt ", 4);
  put_u32(os, 16);
  put_u16(os, 1);  // PCM
  put_u16(os, 1);  // mono
  put_u32(os, rate);
  put_u32(os, rate * 2);  // byte rate
  put_u16(os, 2);         // block align
  put_u16(os, 16);        // bits per sample
  os.write("data", 4);
  put_u32(os, data_bytes);
  for (float x : w.samples) {
    const float c = std::clamp(x, -1.0f, 1.0f);
    const int16_t q = static_cast<int16_t>(std::lround(c * 32767.0f));
    put_u16(os, static_cast<uint16_t>(q));
  }
  os.flush();
  if (!os) throw IoError("wav write failed: " + path.string());
}

Waveform read_wav(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open for reading: " + path.string());

  unsigned char hdr[12];
  is.read(reinterpret_cast<char*>(hdr), 12);
  if (is.gcount() != 12 || std::memcmp(hdr, "RIFF", 4) != 0 ||
      std::memcmp(hdr + 8, "WAVE", 4) != 0)
    throw ParseError("not a RIFF/WAVE file: " + path.string());

  Waveform w;
  bool have_fmt = false, have_data = false;
  while (!have_data) {
    unsigned char chdr[8];
    is.read(reinterpret_cast<char*>(chdr), 8);
    if (is.gcount() != 8) throw ParseError("truncated wav chunks");
    const uint32_t size = get_u32(chdr + 4);
    if (std::memcmp(chdr, "fmt ", 4) == 0) {
      std::vector<unsigned char> fmt(size);
      is.read(reinterpret_cast<char*>(fmt.data()), size);
      if (static_cast<uint32_t>(is.gcount()) != size || size < 16)
        throw ParseError("truncated fmt chunk");
      if (get_u16(fmt.data()) != 1) throw ParseError("wav is not PCM");
      if (get_u16(fmt.data() + 2) != 1) throw ParseError("wav is not mono");
      if (get_u16(fmt.data() + 14) != 16)
        throw ParseError("wav is not 16-bit");
      w.sample_rate = static_cast<float>(get_u32(fmt.data() + 4));
      have_fmt = true;
    } else if (std::memcmp(chdr, "data", 4) == 0) {
      if (!have_fmt) throw ParseError("wav data chunk before fmt");
      std::vector<unsigned char> raw(size);
      is.read(reinterpret_cast<char*>(raw.data()), size);
      if (static_cast<uint32_t>(is.gcount()) != size)
        throw ParseError("truncated wav payload");
      w.samples.resize(size / 2);
      for (size_t i = 0; i < w.samples.size(); ++i) {
        const int16_t q =
            static_cast<int16_t>(get_u16(raw.data() + 2 * i));
        w.samples[i] = static_cast<float>(q) / 32767.0f;
      }
      have_data = true;
    } else {
      is.seekg(size + (size & 1), std::ios::cur);
      if (!is) throw ParseError("truncated wav chunks");
    }
  }
  return w;
}

}  // namespace stylemotion
