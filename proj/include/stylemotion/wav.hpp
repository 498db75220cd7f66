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

#ifndef STYLEMOTION_WAV_HPP_
#define STYLEMOTION_WAV_HPP_

#include <filesystem>
#include <vector>

namespace stylemotion {

struct Waveform {
  std::vector<float> samples;  // mono, nominal range [-1, 1]
  float sample_rate = 0.0f;

  int sample_count() const { return static_cast<int>(samples.size()); }
  double duration() const {
    return sample_rate > 0 ? samples.size() / static_cast<double>(sample_rate)
                           : 0.0;
  }
};

// 16-bit PCM mono RIFF/WAVE. Values are clamped to [-1, 1] on write.
void write_wav(const std::filesystem::path& path, const Waveform& w);
Waveform read_wav(const std::filesystem::path& path);

}  // namespace stylemotion

#endif  // STYLEMOTION_WAV_HPP_
