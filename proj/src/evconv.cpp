#include "evformer/evconv.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "evformer/kernels.hpp"

namespace evf {

void Kernel::validate() const {
  if (size <= 0 || size % 2 == 0) {
    throw std::invalid_argument("kernel size must be odd and positive, got " +
                                std::to_string(size));
  }
  if (values.size() != size_t(size) * size) {
    throw std::invalid_argument("kernel value count " + std::to_string(values.size()) +
                                " does not match size " + std::to_string(size));
  }
  for (double v : values) {
    if (!std::isfinite(v)) throw std::invalid_argument("kernel has non-finite value");
  }
}

uint64_t CountMap::total() const {
  uint64_t sum = 0;
  for (uint32_t c : counts) sum += c;
  return sum;
}

CountMap& CountMap::operator+=(const CountMap& other) {
  if (height != other.height || width != other.width ||
      kernel_size != other.kernel_size || channels != other.channels) {
    throw std::invalid_argument("count map layout mismatch");
  }
  for (size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
  return *this;
}

Kernel gabor_kernel(const GaborParams& params, double theta_deg) {
  Kernel k = Kernel::zeros(params.size);
  k.validate();
  const int c = params.size / 2;
  const double theta = theta_deg * M_PI / 180.0;
  const double ct = std::cos(theta);
  const double st = std::sin(theta);
  const double g2 = params.gamma * params.gamma;
  const double two_s2 = 2.0 * params.sigma * params.sigma;
  for (int dy = -c; dy <= c; ++dy) {
    for (int dx = -c; dx <= c; ++dx) {
      const double xr = dx * ct + dy * st;
      const double yr = -dx * st + dy * ct;
      k.at(dy + c, dx + c) =
          std::exp(-(xr * xr + g2 * yr * yr) / two_s2) * std::cos(2.0 * M_PI * xr / params.lambda);
    }
  }
  double mean = 0.0;
  for (double v : k.values) mean += v;
  mean /= double(k.values.size());
  for (double& v : k.values) v -= mean;
  double norm = 0.0;
  for (double v : k.values) norm += v * v;
  norm = std::sqrt(norm);
  if (norm > 0.0) {
    for (double& v : k.values) v /= norm;
  }
  return k;
}

ResponseMap event_conv_reference(const EventStream& stream, const Kernel& kernel) {
  stream.validate();
  kernel.validate();
  const int k = kernel.size;
  const int c = k / 2;
  const int h = stream.height;
  const int w = stream.width;
  ResponseMap out;
  out.channels = kPolarityChannels;
  out.height = stream.height;
  out.width = stream.width;
  out.values.assign(size_t(kPolarityChannels) * h * w, 0.0f);
  for (const Event& e : stream.events) {
    float* resp = out.channel(e.polarity);
    for (int dr = -c; dr <= c; ++dr) {
      const int r = int(e.y) + dr;
      if (r < 0 || r >= h) continue;
      for (int dc = -c; dc <= c; ++dc) {
        const int col = int(e.x) + dc;
        if (col < 0 || col >= w) continue;
        resp[size_t(r) * w + col] += float(kernel.at(c + dr, c + dc));
      }
    }
  }
  return out;
}

CountMap build_count_map(const EventStream& stream, int kernel_size, int height,
                         int width) {
  if (stream.height != height || stream.width != width) {
    throw std::invalid_argument("stream is " + std::to_string(stream.width) + "x" +
                                std::to_string(stream.height) + ", count map wants " +
                                std::to_string(width) + "x" + std::to_string(height));
  }
  return build_count_map(stream, kernel_size);
}

CountMap build_count_map(const EventStream& stream, int kernel_size) {
  stream.validate();
  if (kernel_size <= 0 || kernel_size % 2 == 0) {
    throw std::invalid_argument("kernel size must be odd and positive, got " +
                                std::to_string(kernel_size));
  }
  const int k = kernel_size;
  const int c = k / 2;
  const int h = stream.height;
  const int w = stream.width;
  CountMap cmap;
  cmap.height = stream.height;
  cmap.width = stream.width;
  cmap.kernel_size = k;
  cmap.channels = kPolarityChannels;
  cmap.counts.assign(size_t(kPolarityChannels) * h * k * w * k, 0);
  const size_t wk = size_t(w) * k;
  for (const Event& e : stream.events) {
    uint32_t* counts = cmap.channel(e.polarity);
    for (int dr = -c; dr <= c; ++dr) {
      const int i = int(e.y) + dr;
      if (i < 0 || i >= h) continue;
      const size_t row = (size_t(i) * k + size_t(c + dr)) * wk;
      for (int dc = -c; dc <= c; ++dc) {
        const int j = int(e.x) + dc;
        if (j < 0 || j >= w) continue;
        counts[row + size_t(j) * k + size_t(c + dc)] += 1;
      }
    }
  }
  return cmap;
}

ResponseMap strided_readout(const CountMap& cmap, std::span<const Kernel> kernels) {
  if (kernels.empty() || kernels.size() % cmap.channels != 0) {
    throw std::invalid_argument("need a kernel per (output, polarity) pair, got " +
                                std::to_string(kernels.size()));
  }
  const int k = cmap.kernel_size;
  std::vector<float> kw(size_t(k) * k);
  ResponseMap out;
  out.channels = int(kernels.size()) / cmap.channels;
  out.height = cmap.height;
  out.width = cmap.width;
  out.values.assign(size_t(out.channels) * cmap.height * cmap.width, 0.0f);
  for (int c_out = 0; c_out < out.channels; ++c_out) {
    for (int p = 0; p < cmap.channels; ++p) {
      const Kernel& kernel = kernels[size_t(c_out) * cmap.channels + p];
      kernel.validate();
      if (kernel.size != k) {
        throw std::invalid_argument("kernel size " + std::to_string(kernel.size) +
                                    " does not match count map block size " +
                                    std::to_string(k));
      }
      for (size_t n = 0; n < kw.size(); ++n) kw[n] = float(kernel.values[n]);
      kern::Dispatch<float>::readout(cmap.channel(p), cmap.height, cmap.width, size_t(k),
                                     kw.data(), out.channel(c_out));
    }
  }
  return out;
}

ResponseMap strided_readout_per_polarity(const CountMap& cmap, const Kernel& kernel) {
  std::vector<Kernel> bank;
  const Kernel zero = Kernel::zeros(kernel.size);
  for (int p = 0; p < cmap.channels; ++p) {
    for (int q = 0; q < cmap.channels; ++q) bank.push_back(p == q ? kernel : zero);
  }
  return strided_readout(cmap, bank);
}

uint64_t footprint_total(const EventStream& stream, int kernel_size) {
  const int c = kernel_size / 2;
  uint64_t total = 0;
  for (const Event& e : stream.events) {
    const int r0 = std::max(0, int(e.y) - c);
    const int r1 = std::min(int(stream.height) - 1, int(e.y) + c);
    const int c0 = std::max(0, int(e.x) - c);
    const int c1 = std::min(int(stream.width) - 1, int(e.x) + c);
    if (r1 < r0 || c1 < c0) continue;
    total += uint64_t(r1 - r0 + 1) * uint64_t(c1 - c0 + 1);
  }
  return total;
}

namespace {

void write_u16(std::FILE* f, uint16_t v) {
  const unsigned char b[2] = {(unsigned char)(v & 0xff), (unsigned char)(v >> 8)};
  std::fwrite(b, 1, 2, f);
}

void write_u32(std::FILE* f, uint32_t v) {
  const unsigned char b[4] = {(unsigned char)(v & 0xff), (unsigned char)((v >> 8) & 0xff),
                              (unsigned char)((v >> 16) & 0xff), (unsigned char)(v >> 24)};
  std::fwrite(b, 1, 4, f);
}

struct FileCloser {
  std::FILE* f;
  ~FileCloser() {
    if (f) std::fclose(f);
  }
};

}  // namespace

void dump_count_map(const CountMap& cmap, const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  FileCloser closer{f};
  write_u16(f, uint16_t(cmap.channels));
  write_u16(f, cmap.height);
  write_u16(f, cmap.width);
  write_u16(f, uint16_t(cmap.kernel_size));
  for (uint32_t v : cmap.counts) write_u32(f, v);
  if (std::ferror(f)) throw std::runtime_error("write failed for " + path);
}

void dump_response_map(const ResponseMap& rmap, const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  FileCloser closer{f};
  write_u16(f, uint16_t(rmap.channels));
  write_u16(f, rmap.height);
  write_u16(f, rmap.width);
  write_u16(f, 0);
  for (float v : rmap.values) {
    uint32_t bits;
    static_assert(sizeof(bits) == sizeof(v));
    __builtin_memcpy(&bits, &v, sizeof(bits));
    write_u32(f, bits);
  }
  if (std::ferror(f)) throw std::runtime_error("write failed for " + path);
}

}  // namespace evf
