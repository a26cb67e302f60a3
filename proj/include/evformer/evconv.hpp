#pragma once

#include <span>
#include <string>
#include <vector>

#include "evformer/event_stream.hpp"

namespace evf {

// ON/OFF events are kept in separate channels end to end.
inline constexpr int kPolarityChannels = 2;

// Square odd-sized convolution kernel, row-major parameter order: parameter
// index n = a*K + b for kernel row a, column b.
struct Kernel {
  int size = 0;
  std::vector<double> values;  // size*size

  static Kernel zeros(int k) { return Kernel{k, std::vector<double>(size_t(k) * k, 0.0)}; }
  double& at(int a, int b) { return values[size_t(a) * size + b]; }
  double at(int a, int b) const { return values[size_t(a) * size + b]; }
  void validate() const;  // odd size, finite values
};

// Per-parameter coverage counts. Channel p is a (H*K) x (W*K) grid whose
// K x K block (i,j) holds, for response position (i,j), how often each kernel
// parameter covered that position. Kernel values are never consulted.
struct CountMap {
  uint16_t height = 0;  // response rows H
  uint16_t width = 0;   // response cols W
  int kernel_size = 0;
  int channels = kPolarityChannels;
  std::vector<uint32_t> counts;  // channels * (H*K) * (W*K)

  size_t channel_stride() const {
    return size_t(height) * kernel_size * width * kernel_size;
  }
  const uint32_t* channel(int p) const { return counts.data() + channel_stride() * p; }
  uint32_t* channel(int p) { return counts.data() + channel_stride() * p; }
  uint32_t at(int p, int i, int j, int a, int b) const {
    const size_t wk = size_t(width) * kernel_size;
    return channel(p)[(size_t(i) * kernel_size + a) * wk + size_t(j) * kernel_size + b];
  }
  uint64_t total() const;
  CountMap& operator+=(const CountMap& other);
};

struct ResponseMap {
  int channels = 0;
  uint16_t height = 0;
  uint16_t width = 0;
  std::vector<float> values;  // channels * height * width

  float at(int c, int i, int j) const {
    return values[(size_t(c) * height + i) * width + j];
  }
  const float* channel(int c) const { return values.data() + size_t(c) * height * width; }
  float* channel(int c) { return values.data() + size_t(c) * height * width; }
};

struct GaborParams {
  double sigma = 1.2;   // effective width
  double lambda = 1.5;  // wavelength
  double gamma = 0.3;   // aspect ratio
  std::vector<double> thetas_deg = {0.0, 45.0, 90.0, 135.0};
  int size = 3;
};

// Oriented Gabor kernel, zero-mean and unit-L2 normalized.
Kernel gabor_kernel(const GaborParams& params, double theta_deg);

// Classical event-by-event convolution: for every event, the kernel is
// stamped centered on the event pixel, clipped at the sensor edges. One
// output channel per polarity. This is the ground-truth oracle for the
// count-map factorization and is deliberately kept scalar and simple.
ResponseMap event_conv_reference(const EventStream& stream, const Kernel& kernel);

// The parameter counter: same stamping geometry, but each covered position
// records which kernel parameter covered it, by incrementing that
// parameter's count cell.
CountMap build_count_map(const EventStream& stream, int kernel_size);
CountMap build_count_map(const EventStream& stream, int kernel_size, int height,
                         int width);  // checked against stream dims

// One convolution with stride equal to the kernel size over the count map.
// kernels.size() must be a multiple of the polarity channel count; output
// channel c is read out with kernels[c*P + p] applied to polarity channel p.
ResponseMap strided_readout(const CountMap& cmap, std::span<const Kernel> kernels);

// Diagonal arrangement matching event_conv_reference: output channel p reads
// polarity channel p with the single shared kernel.
ResponseMap strided_readout_per_polarity(const CountMap& cmap, const Kernel& kernel);

// Sum over events of the in-bounds kernel footprint size (brute force; the
// count-conservation oracle).
uint64_t footprint_total(const EventStream& stream, int kernel_size);

// Debug dumps for cross-implementation diffing: header u16 C|H|W|K, then
// 32-bit values row-major (u32 counts / f32 responses), little-endian.
void dump_count_map(const CountMap& cmap, const std::string& path);
void dump_response_map(const ResponseMap& rmap, const std::string& path);

}  // namespace evf
