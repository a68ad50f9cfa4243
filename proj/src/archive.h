// Copyright 2026 The ReconGuard Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Readers for the standard archive formats accepted by load_dataset().
#ifndef RECONGUARD_SRC_ARCHIVE_H_
#define RECONGUARD_SRC_ARCHIVE_H_

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace reconguard::archive {

// Calls `visit(name, bytes)` for every regular file in a gzip-compressed tar.
void for_each_tar_gz_entry(
    const std::string& path,
    const std::function<void(const std::string&, const std::vector<unsigned char>&)>& visit);

// A numeric MATLAB array, kept in its stored element type.
struct MatArray {
  std::vector<int> dims;
  int element_type = 0;  // MAT v5 miXXX code
  std::vector<unsigned char> bytes;

  std::size_t count() const;
  double at(std::size_t i) const;
};

// Reads the named numeric arrays of a MAT v5 file (compressed or not).
std::vector<std::pair<std::string, MatArray>> read_mat_v5(const std::string& path);

}  // namespace reconguard::archive

#endif  // RECONGUARD_SRC_ARCHIVE_H_
