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

#include "reconguard/data.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <random>
#include <set>

#include "archive.h"
#include "reconguard/errors.h"
#include "reconguard/random.h"

namespace reconguard {
namespace fs = std::filesystem;
namespace {

constexpr int kCifarSide = 32;
constexpr int kCifarPixels = kCifarSide * kCifarSide;
constexpr std::size_t kCifarRecord = 1 + 3 * kCifarPixels;

// Appends CIFAR-10 binary records (label, R plane, G plane, B plane).
void append_cifar_records(const std::vector<unsigned char>& bytes, const std::string& source,
                          std::vector<Sample>& out) {
  if (bytes.size() % kCifarRecord != 0) {
    throw FormatError(source + ": size is not a multiple of the CIFAR-10 record size");
  }
  for (std::size_t off = 0; off < bytes.size(); off += kCifarRecord) {
    Sample s;
    s.label = bytes[off];
    s.image.resize(3 * kCifarPixels);
    for (int p = 0; p < kCifarPixels; ++p) {
      for (int c = 0; c < 3; ++c) {
        s.image[static_cast<std::size_t>(p) * 3 + c] =
            static_cast<float>(bytes[off + 1 + c * kCifarPixels + p]) / 255.0f;
      }
    }
    out.push_back(std::move(s));
  }
}

std::vector<unsigned char> read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw LoadError("cannot open " + p.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::vector<fs::path> cifar_batches(const fs::path& dir) {
  std::vector<fs::path> files;
  for (int i = 1; i <= 5; ++i) {
    fs::path p = dir / ("data_batch_" + std::to_string(i) + ".bin");
    if (fs::exists(p)) files.push_back(p);
  }
  if (fs::exists(dir / "test_batch.bin")) files.push_back(dir / "test_batch.bin");
  return files;
}

Dataset load_cifar_dir(const fs::path& dir, const std::vector<fs::path>& files) {
  std::vector<Sample> samples;
  for (const auto& f : files) append_cifar_records(read_file(f), f.string(), samples);
  return Dataset("cifar10:" + dir.string(), {kCifarSide, kCifarSide, 3}, 10, std::move(samples));
}

Dataset load_cifar_archive(const fs::path& path) {
  std::map<std::string, std::vector<unsigned char>> members;
  archive::for_each_tar_gz_entry(path.string(), [&](const std::string& name, const auto& body) {
    const std::string base = fs::path(name).filename().string();
    if (base.rfind("data_batch_", 0) == 0 || base == "test_batch.bin") members[base] = body;
  });
  if (members.empty()) throw LoadError(path.string() + " contains no CIFAR-10 batches");
  std::vector<Sample> samples;
  for (int i = 1; i <= 5; ++i) {
    auto it = members.find("data_batch_" + std::to_string(i) + ".bin");
    if (it != members.end()) append_cifar_records(it->second, it->first, samples);
  }
  if (auto it = members.find("test_batch.bin"); it != members.end()) {
    append_cifar_records(it->second, it->first, samples);
  }
  return Dataset("cifar10:" + path.string(), {kCifarSide, kCifarSide, 3}, 10, std::move(samples));
}

// SVHN stores X as [H, W, C, N] column-major uint8 and y in 1..10 (10 = digit 0).
void append_svhn(const fs::path& file, std::vector<Sample>& out, ImageShape& shape) {
  const auto arrays = archive::read_mat_v5(file.string());
  const archive::MatArray* x = nullptr;
  const archive::MatArray* y = nullptr;
  for (const auto& [name, arr] : arrays) {
    if (name == "X") x = &arr;
    if (name == "y") y = &arr;
  }
  if (!x || !y) throw FormatError(file.string() + ": missing X or y");
  if (x->dims.size() != 4) throw FormatError(file.string() + ": X must be 4-D");
  const ImageShape s{x->dims[0], x->dims[1], x->dims[2]};
  if (shape.size() && !(shape == s)) throw FormatError(file.string() + ": image shape differs");
  shape = s;
  const std::size_t n = static_cast<std::size_t>(x->dims[3]);
  if (y->count() != n) throw FormatError(file.string() + ": label count mismatch");
  const std::size_t H = s.height, W = s.width, C = s.channels;
  for (std::size_t i = 0; i < n; ++i) {
    Sample smp;
    const int raw = static_cast<int>(y->at(i));
    smp.label = raw == 10 ? 0 : raw;
    smp.image.resize(s.size());
    for (std::size_t h = 0; h < H; ++h) {
      for (std::size_t w = 0; w < W; ++w) {
        for (std::size_t c = 0; c < C; ++c) {
          const std::size_t src = h + H * (w + W * (c + C * i));
          smp.image[(h * W + w) * C + c] = static_cast<float>(x->at(src)) / 255.0f;
        }
      }
    }
    out.push_back(std::move(smp));
  }
}

Dataset load_records_dir(const fs::path& dir) {
  std::ifstream meta_in(dir / "meta.json");
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(meta_in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("meta.json: " + std::string(e.what()));
  }
  ImageShape shape{meta.at("height").get<int>(), meta.at("width").get<int>(),
                   meta.at("channels").get<int>()};
  const int num_classes = meta.at("num_classes").get<int>();
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".bin") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw LoadError(dir.string() + " has meta.json but no .bin records");
  const std::size_t record = 1 + shape.size();
  std::vector<Sample> samples;
  for (const auto& f : files) {
    const auto bytes = read_file(f);
    if (bytes.size() % record != 0) {
      throw FormatError(f.string() + ": size does not match the declared image shape");
    }
    for (std::size_t off = 0; off < bytes.size(); off += record) {
      Sample s;
      s.label = bytes[off];
      s.image.resize(shape.size());
      for (std::size_t i = 0; i < shape.size(); ++i) s.image[i] = bytes[off + 1 + i] / 255.0f;
      samples.push_back(std::move(s));
    }
  }
  return Dataset("records:" + dir.string(), shape, num_classes, std::move(samples));
}

Dataset load_synthetic_id(const std::string& id) {
  // synthetic:C:N:HW:SEED
  std::vector<std::string> parts;
  std::size_t start = 0;
  for (std::size_t pos; (pos = id.find(':', start)) != std::string::npos; start = pos + 1) {
    parts.push_back(id.substr(start, pos - start));
  }
  parts.push_back(id.substr(start));
  if (parts.size() != 5) throw ArgumentError("expected synthetic:C:N:HW:SEED, got " + id);
  try {
    return synth_dataset(std::stoi(parts[1]), std::stoi(parts[2]), std::stoi(parts[3]),
                         std::stoull(parts[4]));
  } catch (const std::logic_error& e) {
    if (dynamic_cast<const ArgumentError*>(&e)) throw;
    throw ArgumentError("malformed synthetic identifier " + id);
  }
}

}  // namespace

Dataset::Dataset(std::string name, ImageShape shape, int num_classes,
                 std::vector<Sample> samples)
    : name_(std::move(name)), shape_(shape), num_classes_(num_classes),
      samples_(std::move(samples)) {
  if (num_classes_ < 1) throw ArgumentError("dataset needs at least one class");
  if (shape_.height < 1 || shape_.width < 1 || shape_.channels < 1) {
    throw ArgumentError("dataset image shape must be positive");
  }
  for (std::size_t i = 0; i < samples_.size(); ++i) {
    const Sample& s = samples_[i];
    if (s.image.size() != shape_.size()) {
      throw FormatError("sample " + std::to_string(i) + " has a different image shape");
    }
    if (s.label < 0 || s.label >= num_classes_) {
      throw FormatError("sample " + std::to_string(i) + " label out of range");
    }
    for (float v : s.image) {
      if (!(v >= 0.0f && v <= 1.0f)) {
        throw FormatError("sample " + std::to_string(i) + " has a pixel outside [0, 1]");
      }
    }
  }
}

const Sample& Dataset::at(std::size_t i) const {
  if (i >= samples_.size()) throw ArgumentError("sample id " + std::to_string(i) + " out of range");
  return samples_[i];
}

std::vector<Image> Dataset::images(std::span<const std::size_t> ids) const {
  std::vector<Image> out;
  out.reserve(ids.size());
  for (std::size_t id : ids) out.push_back(at(id).image);
  return out;
}

std::vector<int> Dataset::labels(std::span<const std::size_t> ids) const {
  std::vector<int> out;
  out.reserve(ids.size());
  for (std::size_t id : ids) out.push_back(at(id).label);
  return out;
}

std::uint64_t Dataset::content_hash() const {
  Fnv1a h;
  h.update(name_);
  for (const Sample& s : samples_) {
    h.update_span(std::span<const float>(s.image));
    h.update(&s.label, sizeof s.label);
  }
  return h.digest();
}

Dataset load_dataset(const std::string& name_or_path) {
  if (name_or_path.rfind("synthetic:", 0) == 0) return load_synthetic_id(name_or_path);
  const fs::path p(name_or_path);
  if (!fs::exists(p)) throw LoadError("dataset source not found: " + name_or_path);
  if (fs::is_regular_file(p)) {
    const std::string s = p.string();
    if (s.ends_with(".tar.gz") || s.ends_with(".tgz")) return load_cifar_archive(p);
    if (s.ends_with(".mat")) {
      std::vector<Sample> samples;
      ImageShape shape;
      append_svhn(p, samples, shape);
      return Dataset("svhn:" + s, shape, 10, std::move(samples));
    }
    throw LoadError("unrecognised dataset file: " + s);
  }
  if (fs::exists(p / "meta.json")) return load_records_dir(p);
  if (auto batches = cifar_batches(p); !batches.empty()) return load_cifar_dir(p, batches);
  std::vector<fs::path> mats;
  for (const char* f : {"train_32x32.mat", "test_32x32.mat"}) {
    if (fs::exists(p / f)) mats.push_back(p / f);
  }
  if (!mats.empty()) {
    std::vector<Sample> samples;
    ImageShape shape;
    for (const auto& m : mats) append_svhn(m, samples, shape);
    return Dataset("svhn:" + p.string(), shape, 10, std::move(samples));
  }
  throw LoadError("no recognised dataset files in " + name_or_path);
}

namespace {

// Bilinear upsampling of a g x g x C grid to hw x hw x C.
std::vector<float> upsample_grid(const std::vector<float>& grid, int g, int hw, int C) {
  std::vector<float> out(static_cast<std::size_t>(hw) * hw * C);
  auto coord = [&](int i) {
    const float u = (static_cast<float>(i) + 0.5f) * g / hw - 0.5f;
    return std::clamp(u, 0.0f, static_cast<float>(g - 1));
  };
  for (int y = 0; y < hw; ++y) {
    const float fy = coord(y);
    const int y0 = static_cast<int>(fy), y1 = std::min(y0 + 1, g - 1);
    const float ty = fy - y0;
    for (int x = 0; x < hw; ++x) {
      const float fx = coord(x);
      const int x0 = static_cast<int>(fx), x1 = std::min(x0 + 1, g - 1);
      const float tx = fx - x0;
      for (int c = 0; c < C; ++c) {
        auto at = [&](int yy, int xx) { return grid[(static_cast<std::size_t>(yy) * g + xx) * C + c]; };
        const float top = at(y0, x0) * (1 - tx) + at(y0, x1) * tx;
        const float bot = at(y1, x0) * (1 - tx) + at(y1, x1) * tx;
        out[(static_cast<std::size_t>(y) * hw + x) * C + c] = top * (1 - ty) + bot * ty;
      }
    }
  }
  return out;
}

constexpr int kSynthChannels = 3;
constexpr int kSynthGrid = 4;
constexpr float kSharedContrast = 0.5f;
constexpr float kClassContrast = 0.2f;
constexpr float kSampleContrast = 0.4f;
constexpr float kPixelNoise = 0.15f;

}  // namespace

Dataset synth_dataset(int num_classes, int n_per_class, int hw, std::uint64_t seed) {
  if (num_classes < 2) throw ArgumentError("synth_dataset needs num_classes >= 2");
  if (n_per_class < 1) throw ArgumentError("synth_dataset needs n_per_class >= 1");
  if (hw < 8) throw ArgumentError("synth_dataset needs hw >= 8");
  Rng rng(derive_seed(seed, {0x5359ULL}));
  std::uniform_real_distribution<float> unit(0.0f, 1.0f);
  const std::size_t cells = static_cast<std::size_t>(kSynthGrid) * kSynthGrid * kSynthChannels;
  auto random_field = [&] {
    std::vector<float> grid(cells);
    for (float& v : grid) v = unit(rng) - 0.5f;
    return upsample_grid(grid, kSynthGrid, hw, kSynthChannels);
  };
  const std::vector<float> shared = random_field();
  std::vector<std::vector<float>> bases;
  for (int c = 0; c < num_classes; ++c) {
    std::vector<float> own = random_field();
    for (std::size_t i = 0; i < own.size(); ++i) {
      own[i] = 0.5f + kSharedContrast * shared[i] + kClassContrast * own[i];
    }
    bases.push_back(std::move(own));
  }
  std::normal_distribution<float> noise(0.0f, kPixelNoise);
  std::vector<Sample> samples;
  samples.reserve(static_cast<std::size_t>(num_classes) * n_per_class);
  for (int i = 0; i < num_classes * n_per_class; ++i) {
    Sample s;
    s.label = i % num_classes;
    s.image = bases[static_cast<std::size_t>(s.label)];
    const std::vector<float> nuisance = random_field();
    for (std::size_t p = 0; p < s.image.size(); ++p) {
      s.image[p] = std::clamp(s.image[p] + kSampleContrast * nuisance[p] + noise(rng), 0.0f, 1.0f);
    }
    samples.push_back(std::move(s));
  }
  const std::string name = "synthetic:" + std::to_string(num_classes) + ":" +
                           std::to_string(n_per_class) + ":" + std::to_string(hw) + ":" +
                           std::to_string(seed);
  return Dataset(name, {hw, hw, kSynthChannels}, num_classes, std::move(samples));
}

std::uint64_t hash_ids(std::span<const std::size_t> ids) {
  Fnv1a h;
  for (std::size_t id : ids) {
    const std::uint64_t v = id;
    h.update(&v, sizeof v);
  }
  return h.digest();
}

std::uint64_t SplitSpec::hash() const {
  Fnv1a h;
  for (const IdList* l : {&member_ids, &nonmember_ids, &defender_member_ids,
                          &defender_nonmember_ids, &attacker_known_member_ids,
                          &attacker_known_nonmember_ids, &eval_member_ids, &eval_nonmember_ids}) {
    const std::uint64_t n = l->size(), hv = hash_ids(*l);
    h.update(&n, sizeof n);
    h.update(&hv, sizeof hv);
  }
  h.update(&seed, sizeof seed);
  return h.digest();
}

SplitSpec make_splits(const Dataset& dataset, const SplitCounts& counts, std::uint64_t seed) {
  if (counts.member == 0 || counts.defender == 0 || counts.attacker == 0 || counts.eval == 0) {
    throw ArgumentError("split counts must be positive");
  }
  if (counts.eval % 2 != 0) throw ArgumentError("eval count must be even (balanced evaluation)");
  const std::size_t n = dataset.size();
  const std::size_t eval_side = counts.eval / 2;
  const std::size_t side_need =
      eval_side + (counts.allow_defender_attacker_overlap
                       ? std::max(counts.defender, counts.attacker)
                       : counts.defender + counts.attacker);
  if (counts.member > n) throw ArgumentError("member count exceeds dataset size");
  if (side_need > counts.member) {
    throw ArgumentError("member set too small for eval + defender + attacker subsets");
  }
  if (side_need > n - counts.member) {
    throw ArgumentError("not enough non-members for eval + defender + attacker subsets");
  }

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(derive_seed(seed, {0x53504cULL}));
  std::shuffle(order.begin(), order.end(), rng);

  SplitSpec s;
  s.seed = seed;
  s.member_ids.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(counts.member));
  s.nonmember_ids.assign(order.begin() + static_cast<std::ptrdiff_t>(counts.member), order.end());

  auto carve = [&](const IdList& pool, IdList& eval, IdList& defender, IdList& attacker) {
    auto it = pool.begin();
    eval.assign(it, it + static_cast<std::ptrdiff_t>(eval_side));
    it += static_cast<std::ptrdiff_t>(eval_side);
    attacker.assign(it, it + static_cast<std::ptrdiff_t>(counts.attacker));
    if (!counts.allow_defender_attacker_overlap) it += static_cast<std::ptrdiff_t>(counts.attacker);
    defender.assign(it, it + static_cast<std::ptrdiff_t>(counts.defender));
  };
  carve(s.member_ids, s.eval_member_ids, s.defender_member_ids, s.attacker_known_member_ids);
  carve(s.nonmember_ids, s.eval_nonmember_ids, s.defender_nonmember_ids,
        s.attacker_known_nonmember_ids);
  validate_split(s, n, counts.allow_defender_attacker_overlap);
  return s;
}

void validate_split(const SplitSpec& s, std::size_t dataset_size, bool allow_overlap) {
  auto to_set = [](const IdList& l) { return std::set<std::size_t>(l.begin(), l.end()); };
  auto check = [](bool ok, const std::string& what) {
    if (!ok) throw ArgumentError("split invariant violated: " + what);
  };
  auto disjoint = [](const std::set<std::size_t>& a, const std::set<std::size_t>& b) {
    for (std::size_t x : a) {
      if (b.count(x)) return false;
    }
    return true;
  };
  auto subset = [](const std::set<std::size_t>& a, const std::set<std::size_t>& b) {
    for (std::size_t x : a) {
      if (!b.count(x)) return false;
    }
    return true;
  };
  const auto mem = to_set(s.member_ids), non = to_set(s.nonmember_ids);
  const auto dm = to_set(s.defender_member_ids), dn = to_set(s.defender_nonmember_ids);
  const auto am = to_set(s.attacker_known_member_ids), an = to_set(s.attacker_known_nonmember_ids);
  const auto em = to_set(s.eval_member_ids), en = to_set(s.eval_nonmember_ids);
  for (const IdList* l : {&s.member_ids, &s.nonmember_ids}) {
    for (std::size_t id : *l) check(id < dataset_size, "id out of range");
  }
  check(mem.size() == s.member_ids.size() && non.size() == s.nonmember_ids.size(), "duplicate ids");
  check(disjoint(mem, non), "members and non-members overlap");
  check(subset(dm, mem) && subset(am, mem) && subset(em, mem), "member subsets outside member_ids");
  check(subset(dn, non) && subset(an, non) && subset(en, non),
        "non-member subsets outside nonmember_ids");
  check(disjoint(em, am) && disjoint(en, an), "eval ids overlap attacker-known ids");
  check(disjoint(em, dm) && disjoint(en, dn), "eval ids overlap defender ids");
  if (!allow_overlap) {
    check(disjoint(dm, am) && disjoint(dn, an), "defender ids overlap attacker-known ids");
  }
  check(s.eval_member_ids.size() == s.eval_nonmember_ids.size(), "eval lists are not balanced");
}

void to_json(nlohmann::json& j, const SplitSpec& s) {
  j = nlohmann::json{{"member_ids", s.member_ids},
                     {"nonmember_ids", s.nonmember_ids},
                     {"defender_member_ids", s.defender_member_ids},
                     {"defender_nonmember_ids", s.defender_nonmember_ids},
                     {"attacker_known_member_ids", s.attacker_known_member_ids},
                     {"attacker_known_nonmember_ids", s.attacker_known_nonmember_ids},
                     {"eval_member_ids", s.eval_member_ids},
                     {"eval_nonmember_ids", s.eval_nonmember_ids},
                     {"seed", s.seed}};
}

void from_json(const nlohmann::json& j, SplitSpec& s) {
  j.at("member_ids").get_to(s.member_ids);
  j.at("nonmember_ids").get_to(s.nonmember_ids);
  j.at("defender_member_ids").get_to(s.defender_member_ids);
  j.at("defender_nonmember_ids").get_to(s.defender_nonmember_ids);
  j.at("attacker_known_member_ids").get_to(s.attacker_known_member_ids);
  j.at("attacker_known_nonmember_ids").get_to(s.attacker_known_nonmember_ids);
  j.at("eval_member_ids").get_to(s.eval_member_ids);
  j.at("eval_nonmember_ids").get_to(s.eval_nonmember_ids);
  j.at("seed").get_to(s.seed);
}

}  // namespace reconguard
