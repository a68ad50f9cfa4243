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

#include "archive.h"

#include <zlib.h>

#include <cstring>
#include <fstream>
#include <iterator>

#include "reconguard/errors.h"

namespace reconguard::archive {
namespace {

enum MatType : int {
  kInt8 = 1, kUInt8 = 2, kInt16 = 3, kUInt16 = 4, kInt32 = 5, kUInt32 = 6,
  kSingle = 7, kDouble = 9, kInt64 = 12, kUInt64 = 13, kMatrix = 14,
  kCompressed = 15,
};

std::size_t element_size(int type) {
  switch (type) {
    case kInt8: case kUInt8: return 1;
    case kInt16: case kUInt16: return 2;
    case kInt32: case kUInt32: case kSingle: return 4;
    case kDouble: case kInt64: case kUInt64: return 8;
    default: throw FormatError("unsupported MAT element type " + std::to_string(type));
  }
}

template <typename T>
T read_le(const unsigned char* p) {
  T v;
  std::memcpy(&v, p, sizeof v);
  return v;
}

struct Cursor {
  const unsigned char* data;
  std::size_t size;
  std::size_t pos = 0;
};

// Reads one tag; returns (type, nbytes, payload pointer) and advances past
// the padded element.
struct Element {
  int type;
  std::size_t nbytes;
  const unsigned char* payload;
};

Element next_element(Cursor& c, bool pad = true) {
  if (c.pos + 8 > c.size) throw FormatError("truncated MAT element tag");
  const std::uint32_t first = read_le<std::uint32_t>(c.data + c.pos);
  if ((first >> 16) != 0) {  // small data element
    Element e{static_cast<int>(first & 0xffff), first >> 16, c.data + c.pos + 4};
    c.pos += 8;
    return e;
  }
  const std::uint32_t nbytes = read_le<std::uint32_t>(c.data + c.pos + 4);
  if (c.pos + 8 + nbytes > c.size) throw FormatError("truncated MAT element");
  Element e{static_cast<int>(first), nbytes, c.data + c.pos + 8};
  std::size_t advance = 8 + nbytes;
  if (pad && e.type != kCompressed) advance = (advance + 7) / 8 * 8;
  c.pos = std::min(c.size, c.pos + advance);
  return e;
}

std::vector<unsigned char> inflate_all(const unsigned char* src, std::size_t n) {
  z_stream zs{};
  if (inflateInit(&zs) != Z_OK) throw FormatError("zlib init failed");
  zs.next_in = const_cast<Bytef*>(src);
  zs.avail_in = static_cast<uInt>(n);
  std::vector<unsigned char> out;
  unsigned char buf[1 << 16];
  int rc = Z_OK;
  while (rc != Z_STREAM_END) {
    zs.next_out = buf;
    zs.avail_out = sizeof buf;
    rc = inflate(&zs, Z_NO_FLUSH);
    if (rc != Z_OK && rc != Z_STREAM_END) {
      inflateEnd(&zs);
      throw FormatError("corrupt compressed MAT element");
    }
    out.insert(out.end(), buf, buf + (sizeof buf - zs.avail_out));
    if (rc == Z_OK && zs.avail_in == 0 && zs.avail_out != 0) break;
  }
  inflateEnd(&zs);
  return out;
}

void parse_matrix(const Element& e, std::vector<std::pair<std::string, MatArray>>& out) {
  Cursor c{e.payload, e.nbytes};
  const Element flags = next_element(c);
  if (flags.nbytes < 8) throw FormatError("bad MAT array flags");
  const int cls = read_le<std::uint32_t>(flags.payload) & 0xff;
  const bool complex = (read_le<std::uint32_t>(flags.payload) >> 11) & 1;
  const Element dims = next_element(c);
  const Element name = next_element(c);
  // Numeric classes are 6 (double) through 15 (uint64); skip cells/structs.
  if (cls < 6 || cls > 15 || complex) return;
  MatArray arr;
  for (std::size_t i = 0; i + 4 <= dims.nbytes; i += 4) {
    arr.dims.push_back(read_le<std::int32_t>(dims.payload + i));
  }
  const Element real = next_element(c);
  arr.element_type = real.type;
  element_size(real.type);
  arr.bytes.assign(real.payload, real.payload + real.nbytes);
  out.emplace_back(std::string(reinterpret_cast<const char*>(name.payload), name.nbytes),
                   std::move(arr));
}

}  // namespace

std::size_t MatArray::count() const { return bytes.size() / element_size(element_type); }

double MatArray::at(std::size_t i) const {
  const unsigned char* p = bytes.data() + i * element_size(element_type);
  switch (element_type) {
    case kInt8: return read_le<std::int8_t>(p);
    case kUInt8: return read_le<std::uint8_t>(p);
    case kInt16: return read_le<std::int16_t>(p);
    case kUInt16: return read_le<std::uint16_t>(p);
    case kInt32: return read_le<std::int32_t>(p);
    case kUInt32: return read_le<std::uint32_t>(p);
    case kSingle: return read_le<float>(p);
    case kDouble: return read_le<double>(p);
    case kInt64: return static_cast<double>(read_le<std::int64_t>(p));
    case kUInt64: return static_cast<double>(read_le<std::uint64_t>(p));
    default: throw FormatError("unsupported MAT element type");
  }
}

std::vector<std::pair<std::string, MatArray>> read_mat_v5(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open " + path);
  std::vector<unsigned char> file((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (file.size() < 128 || file[126] != 'I' || file[127] != 'M') {
    throw FormatError(path + " is not a little-endian MAT v5 file");
  }
  std::vector<std::pair<std::string, MatArray>> out;
  Cursor c{file.data(), file.size(), 128};
  while (c.pos + 8 <= c.size) {
    const Element e = next_element(c);
    if (e.type == kCompressed) {
      const std::vector<unsigned char> raw = inflate_all(e.payload, e.nbytes);
      Cursor inner{raw.data(), raw.size()};
      const Element m = next_element(inner);
      if (m.type == kMatrix) parse_matrix(m, out);
    } else if (e.type == kMatrix) {
      parse_matrix(e, out);
    }
  }
  return out;
}

void for_each_tar_gz_entry(
    const std::string& path,
    const std::function<void(const std::string&, const std::vector<unsigned char>&)>& visit) {
  gzFile gz = gzopen(path.c_str(), "rb");
  if (!gz) throw LoadError("cannot open " + path);
  auto read_exact = [&](unsigned char* dst, std::size_t n) {
    std::size_t got = 0;
    while (got < n) {
      const int r = gzread(gz, dst + got, static_cast<unsigned>(n - got));
      if (r <= 0) return false;
      got += static_cast<std::size_t>(r);
    }
    return true;
  };
  unsigned char header[512];
  try {
    while (read_exact(header, 512)) {
      if (header[0] == 0) break;  // end-of-archive block
      std::string name(reinterpret_cast<char*>(header), strnlen(reinterpret_cast<char*>(header), 100));
      const std::string size_field(reinterpret_cast<char*>(header + 124), 12);
      const std::size_t size = std::strtoull(size_field.c_str(), nullptr, 8);
      const char type = static_cast<char>(header[156]);
      std::vector<unsigned char> body(size);
      if (size && !read_exact(body.data(), size)) throw FormatError("truncated tar entry " + name);
      const std::size_t pad = (512 - size % 512) % 512;
      unsigned char skip[512];
      if (pad && !read_exact(skip, pad)) throw FormatError("truncated tar padding");
      if (type == '0' || type == '\0') visit(name, body);
    }
  } catch (...) {
    gzclose(gz);
    throw;
  }
  gzclose(gz);
}

}  // namespace reconguard::archive
