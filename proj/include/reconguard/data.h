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

#ifndef RECONGUARD_DATA_H_
#define RECONGUARD_DATA_H_

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace reconguard {

struct ImageShape {
  int height = 0;
  int width = 0;
  int channels = 0;

  std::size_t size() const {
    return static_cast<std::size_t>(height) * width * channels;
  }
  bool operator==(const ImageShape&) const = default;
};

// Interleaved H x W x C pixels in [0, 1].
using Image = std::vector<float>;

struct Sample {
  Image image;
  int label = 0;
};

using IdList = std::vector<std::size_t>;

// Immutable after construction; the constructor enforces pixel range, label
// range and a uniform image shape.
class Dataset {
 public:
  Dataset(std::string name, ImageShape shape, int num_classes,
          std::vector<Sample> samples);

  const std::string& name() const { return name_; }
  const ImageShape& shape() const { return shape_; }
  int num_classes() const { return num_classes_; }
  std::size_t size() const { return samples_.size(); }
  const Sample& operator[](std::size_t i) const { return samples_[i]; }
  const Sample& at(std::size_t i) const;
  std::span<const Sample> samples() const { return samples_; }

  std::vector<Image> images(std::span<const std::size_t> ids) const;
  std::vector<int> labels(std::span<const std::size_t> ids) const;
  std::uint64_t content_hash() const;

 private:
  std::string name_;
  ImageShape shape_;
  int num_classes_;
  std::vector<Sample> samples_;
};

// Accepted identifiers:
//   synthetic:C:N:HW:SEED       synth_dataset(C, N, HW, SEED)
//   <dir with data_batch_*.bin> CIFAR-10 binary batches
//   <cifar-10-binary.tar.gz>    the same batches read straight from the archive
//   <dir with *_32x32.mat>      SVHN cropped-digit MATLAB files (train, test)
//   <dir with meta.json>        record files: [label byte][H*W*C bytes HWC]
Dataset load_dataset(const std::string& name_or_path);

// Class-conditional images: a smooth per-class base pattern, a smooth
// per-sample nuisance field and Gaussian pixel noise, clipped to [0, 1]. Labels are interleaved (sample i has label i % C).
Dataset synth_dataset(int num_classes, int n_per_class, int hw, std::uint64_t seed);

struct SplitCounts {
  std::size_t member = 0;    // size of the target's training set
  std::size_t defender = 0;  // per side
  std::size_t attacker = 0;  // per side
  std::size_t eval = 0;      // total, split evenly between the two sides
  bool allow_defender_attacker_overlap = false;
};

struct SplitSpec {
  IdList member_ids;
  IdList nonmember_ids;
  IdList defender_member_ids;
  IdList defender_nonmember_ids;
  IdList attacker_known_member_ids;
  IdList attacker_known_nonmember_ids;
  IdList eval_member_ids;
  IdList eval_nonmember_ids;
  std::uint64_t seed = 0;

  std::uint64_t hash() const;
  bool operator==(const SplitSpec&) const = default;
};

SplitSpec make_splits(const Dataset& dataset, const SplitCounts& counts,
                      std::uint64_t seed);

// Throws ArgumentError naming the first violated split invariant.
void validate_split(const SplitSpec& split, std::size_t dataset_size,
                    bool allow_defender_attacker_overlap = false);

std::uint64_t hash_ids(std::span<const std::size_t> ids);

void to_json(nlohmann::json& j, const SplitSpec& s);
void from_json(const nlohmann::json& j, SplitSpec& s);

}  // namespace reconguard

#endif  // RECONGUARD_DATA_H_
