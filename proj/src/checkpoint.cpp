#include "evformer/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <vector>

#include "evformer/event_stream.hpp"

namespace evf {

namespace {

struct FileCloser {
  std::FILE* f;
  ~FileCloser() {
    if (f) std::fclose(f);
  }
};

void put_u32(std::FILE* f, uint32_t v) {
  const unsigned char b[4] = {(unsigned char)(v & 0xff), (unsigned char)((v >> 8) & 0xff),
                              (unsigned char)((v >> 16) & 0xff), (unsigned char)(v >> 24)};
  std::fwrite(b, 1, 4, f);
}

uint32_t get_u32(std::FILE* f, const std::string& path) {
  unsigned char b[4];
  if (std::fread(b, 1, 4, f) != 4) throw FormatError(path + ": truncated checkpoint");
  return uint32_t(b[0]) | uint32_t(b[1]) << 8 | uint32_t(b[2]) << 16 | uint32_t(b[3]) << 24;
}

}  // namespace

void save_checkpoint(const std::string& path, const ParamList<float>& params) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  FileCloser closer{f};
  put_u32(f, uint32_t(params.size()));
  for (const auto& [name, t] : params) {
    put_u32(f, uint32_t(name.size()));
    std::fwrite(name.data(), 1, name.size(), f);
    put_u32(f, uint32_t(t.rank()));
    for (int i = 0; i < t.rank(); ++i) put_u32(f, uint32_t(t.dim(i)));
  }
  for (const auto& [name, t] : params) {
    for (int64_t i = 0; i < t.numel(); ++i) {
      uint32_t bits;
      const float v = t.data()[i];
      std::memcpy(&bits, &v, 4);
      put_u32(f, bits);
    }
  }
  if (std::ferror(f)) throw std::runtime_error("write failed for " + path);
}

void load_checkpoint(const std::string& path, ParamList<float>& params) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw std::runtime_error("cannot open " + path);
  FileCloser closer{f};
  const uint32_t count = get_u32(f, path);
  if (count != params.size()) {
    throw FormatError(path + ": holds " + std::to_string(count) + " parameters, model has " +
                      std::to_string(params.size()));
  }
  for (auto& [name, t] : params) {
    const uint32_t name_len = get_u32(f, path);
    std::string file_name(name_len, '\0');
    if (std::fread(file_name.data(), 1, name_len, f) != name_len) {
      throw FormatError(path + ": truncated checkpoint");
    }
    if (file_name != name) {
      throw FormatError(path + ": parameter '" + file_name + "' where '" + name +
                        "' was expected");
    }
    const uint32_t rank = get_u32(f, path);
    if (rank != uint32_t(t.rank())) {
      throw FormatError(path + ": rank mismatch for '" + name + "'");
    }
    for (int i = 0; i < t.rank(); ++i) {
      const uint32_t d = get_u32(f, path);
      if (d != uint32_t(t.dim(i))) {
        throw FormatError(path + ": shape mismatch for '" + name + "'");
      }
    }
  }
  for (auto& [name, t] : params) {
    (void)name;
    for (int64_t i = 0; i < t.numel(); ++i) {
      const uint32_t bits = get_u32(f, path);
      float v;
      std::memcpy(&v, &bits, 4);
      t.data()[i] = v;
    }
  }
  if (std::fgetc(f) != EOF) throw FormatError(path + ": trailing bytes after values");
}

}  // namespace evf
