#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace evf {

// Malformed input file; the message names the byte offset (EVS1) or line
// number (CSV) of the first problem.
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Polarity : uint8_t { kOff = 0, kOn = 1 };

struct Event {
  uint32_t t_us = 0;  // microseconds since stream start
  uint16_t x = 0;     // pixel column
  uint16_t y = 0;     // pixel row
  uint8_t polarity = 0;

  friend bool operator==(const Event&, const Event&) = default;
};

struct EventStream {
  uint16_t width = 0;
  uint16_t height = 0;
  uint32_t duration_us = 0;
  std::vector<Event> events;  // non-decreasing in t_us, every t_us < duration_us

  // Throws std::invalid_argument naming the first violated invariant.
  void validate() const;

  friend bool operator==(const EventStream&, const EventStream&) = default;
};

enum class StreamFormat { kEvs1, kCsv };

// CSV carries no sensor geometry; it is supplied out of band.
struct StreamGeometry {
  uint16_t width = 0;
  uint16_t height = 0;
  uint32_t duration_us = 0;
};

// Unsorted sources are tolerated: events are stably re-sorted by timestamp.
EventStream load_stream(const std::string& path, StreamFormat format,
                        std::optional<StreamGeometry> csv_geometry = std::nullopt);
void save_stream(const EventStream& stream, const std::string& path,
                 StreamFormat format);

// Splits [0, duration) into t_steps half-open uniform intervals. Bin i holds
// events with t*t_steps in [i*duration, (i+1)*duration); each sub-stream is
// re-based to start at 0. The union of the bins is the input event multiset.
std::vector<EventStream> bin_events(const EventStream& stream, int t_steps);

// Reverse of bin_events: concatenates bins, restoring per-bin time offsets.
EventStream concat_bins(const std::vector<EventStream>& bins, uint16_t width,
                        uint16_t height, uint32_t duration_us);

// Four moving-glyph classes rendered as edge events.
inline constexpr int kSyntheticClassCount = 4;
inline constexpr const char* kSyntheticClassNames[kSyntheticClassCount] = {"X", "T",
                                                                           "L", "O"};

struct SyntheticSpec {
  int class_id = 0;        // in [0, kSyntheticClassCount)
  uint64_t seed = 0;
  uint16_t width = 32;
  uint16_t height = 32;
  uint32_t duration_us = 1'000'000;
  double event_rate = 20'000.0;  // glyph events per second
  double noise_rate = 0.0;       // uniform background events per second
};

// Deterministic: equal specs yield identical streams. The glyph outline
// traverses the field over the stream duration; leading-edge events are ON,
// trailing-edge OFF.
EventStream gen_synthetic(const SyntheticSpec& spec);

// Analytic glyph path, exposed for oracle-style tests: center of the glyph at
// time t, and its outline radius, for the stream a spec generates.
struct GlyphPath {
  double x0, y0, x1, y1;  // start/end centers
  double radius;
  void center_at(uint32_t t_us, uint32_t duration_us, double& cx, double& cy) const;
};
GlyphPath synthetic_glyph_path(const SyntheticSpec& spec);

}  // namespace evf
