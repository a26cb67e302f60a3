#include "evformer/event_stream.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

namespace evf {
namespace {

constexpr char kMagic[4] = {'E', 'V', 'S', '1'};
constexpr size_t kHeaderSize = 4 + 2 + 2 + 4 + 4;
constexpr size_t kRecordSize = 4 + 2 + 2 + 1;

uint16_t read_u16(const uint8_t* p) { return uint16_t(p[0]) | uint16_t(p[1]) << 8; }
uint32_t read_u32(const uint8_t* p) {
  return uint32_t(p[0]) | uint32_t(p[1]) << 8 | uint32_t(p[2]) << 16 | uint32_t(p[3]) << 24;
}
void write_u16(std::ostream& os, uint16_t v) {
  const char b[2] = {char(v & 0xff), char(v >> 8 & 0xff)};
  os.write(b, 2);
}
void write_u32(std::ostream& os, uint32_t v) {
  const char b[4] = {char(v & 0xff), char(v >> 8 & 0xff), char(v >> 16 & 0xff),
                     char(v >> 24 & 0xff)};
  os.write(b, 4);
}

void sort_by_time(std::vector<Event>& events) {
  std::stable_sort(events.begin(), events.end(),
                   [](const Event& a, const Event& b) { return a.t_us < b.t_us; });
}

EventStream load_evs1(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<uint8_t> buf((std::istreambuf_iterator<char>(in)),
                           std::istreambuf_iterator<char>());

  if (buf.size() < 4 || std::memcmp(buf.data(), kMagic, 4) != 0)
    throw FormatError(path + ": bad magic at offset 0");
  if (buf.size() < kHeaderSize)
    throw FormatError(path + ": truncated header at offset " + std::to_string(buf.size()));

  EventStream s;
  s.width = read_u16(buf.data() + 4);
  s.height = read_u16(buf.data() + 6);
  s.duration_us = read_u32(buf.data() + 8);
  const uint32_t count = read_u32(buf.data() + 12);
  if (s.width == 0 || s.height == 0)
    throw FormatError(path + ": zero sensor dimension at offset 4");

  const size_t expect = kHeaderSize + size_t(count) * kRecordSize;
  if (buf.size() < expect)
    throw FormatError(path + ": truncated record at offset " + std::to_string(buf.size()));

  s.events.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    const size_t off = kHeaderSize + size_t(i) * kRecordSize;
    const uint8_t* p = buf.data() + off;
    Event e;
    e.t_us = read_u32(p);
    e.x = read_u16(p + 4);
    e.y = read_u16(p + 6);
    e.polarity = p[8];
    if (e.x >= s.width || e.y >= s.height)
      throw FormatError(path + ": out-of-range coordinate at offset " + std::to_string(off));
    if (e.t_us >= s.duration_us)
      throw FormatError(path + ": out-of-range timestamp at offset " + std::to_string(off));
    if (e.polarity > 1)
      throw FormatError(path + ": bad polarity at offset " + std::to_string(off));
    s.events.push_back(e);
  }
  sort_by_time(s.events);
  return s;
}

EventStream load_csv(const std::string& path, const StreamGeometry& geom) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);

  EventStream s;
  s.width = geom.width;
  s.height = geom.height;
  s.duration_us = geom.duration_us;

  std::string line;
  size_t lineno = 0;
  if (!std::getline(in, line)) throw FormatError(path + ": missing header at line 1");
  ++lineno;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "t_us,x,y,p")
    throw FormatError(path + ": bad header at line 1 (expected \"t_us,x,y,p\")");

  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    uint64_t vals[4];
    size_t pos = 0;
    for (int f = 0; f < 4; ++f) {
      size_t next = f < 3 ? line.find(',', pos) : line.size();
      if (next == std::string::npos)
        throw FormatError(path + ": missing field at line " + std::to_string(lineno));
      errno = 0;
      char* end = nullptr;
      const std::string tok = line.substr(pos, next - pos);
      vals[f] = std::strtoull(tok.c_str(), &end, 10);
      if (end == tok.c_str() || *end != '\0' || errno != 0)
        throw FormatError(path + ": bad integer at line " + std::to_string(lineno));
      pos = next + 1;
    }
    Event e;
    e.t_us = static_cast<uint32_t>(vals[0]);
    e.x = static_cast<uint16_t>(vals[1]);
    e.y = static_cast<uint16_t>(vals[2]);
    e.polarity = static_cast<uint8_t>(vals[3]);
    if (vals[0] >= s.duration_us || vals[1] >= s.width || vals[2] >= s.height || vals[3] > 1)
      throw FormatError(path + ": out-of-range value at line " + std::to_string(lineno));
    s.events.push_back(e);
  }
  sort_by_time(s.events);
  return s;
}

uint64_t mix64(uint64_t h, uint64_t v) {
  // splitmix64 step folded over the fields
  h ^= v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
  uint64_t z = h;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

double next_unit(std::mt19937_64& rng) {
  return double(rng() >> 11) * 0x1.0p-53;  // [0,1)
}

// Offset of a point on the glyph outline, relative to the glyph center.
void outline_point(int class_id, double radius, std::mt19937_64& rng, double& dx,
                   double& dy) {
  const double u = next_unit(rng);
  const bool second = next_unit(rng) < 0.5;
  const double r = radius;
  switch (class_id) {
    case 0:  // X: the two diagonals
      if (second) {
        dx = -r + 2 * r * u;
        dy = -r + 2 * r * u;
      } else {
        dx = -r + 2 * r * u;
        dy = r - 2 * r * u;
      }
      break;
    case 1:  // T: top bar and center stem
      if (second) {
        dx = -r + 2 * r * u;
        dy = -r;
      } else {
        dx = 0;
        dy = -r + 2 * r * u;
      }
      break;
    case 2:  // L: left stem and bottom bar
      if (second) {
        dx = -r;
        dy = -r + 2 * r * u;
      } else {
        dx = -r + 2 * r * u;
        dy = r;
      }
      break;
    default: {  // O: circle
      const double phi = 2.0 * 3.14159265358979323846 * u;
      dx = r * std::cos(phi);
      dy = r * std::sin(phi);
      break;
    }
  }
}

}  // namespace

void EventStream::validate() const {
  if (width == 0 || height == 0)
    throw std::invalid_argument("event stream: sensor dimensions must be positive");
  uint32_t prev = 0;
  for (size_t i = 0; i < events.size(); ++i) {
    const Event& e = events[i];
    if (e.x >= width || e.y >= height)
      throw std::invalid_argument("event stream: event " + std::to_string(i) +
                                  " coordinate out of range");
    if (e.t_us >= duration_us)
      throw std::invalid_argument("event stream: event " + std::to_string(i) +
                                  " timestamp >= duration");
    if (e.polarity > 1)
      throw std::invalid_argument("event stream: event " + std::to_string(i) +
                                  " bad polarity");
    if (e.t_us < prev)
      throw std::invalid_argument("event stream: events not sorted at index " +
                                  std::to_string(i));
    prev = e.t_us;
  }
}

EventStream load_stream(const std::string& path, StreamFormat format,
                        std::optional<StreamGeometry> csv_geometry) {
  if (format == StreamFormat::kEvs1) return load_evs1(path);
  if (!csv_geometry)
    throw std::invalid_argument("CSV load requires sensor geometry (width/height/duration)");
  return load_csv(path, *csv_geometry);
}

void save_stream(const EventStream& stream, const std::string& path,
                 StreamFormat format) {
  stream.validate();
  std::ofstream out(path, format == StreamFormat::kEvs1
                              ? std::ios::binary | std::ios::trunc
                              : std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");

  if (format == StreamFormat::kEvs1) {
    out.write(kMagic, 4);
    write_u16(out, stream.width);
    write_u16(out, stream.height);
    write_u32(out, stream.duration_us);
    write_u32(out, static_cast<uint32_t>(stream.events.size()));
    for (const Event& e : stream.events) {
      write_u32(out, e.t_us);
      write_u16(out, e.x);
      write_u16(out, e.y);
      out.put(char(e.polarity));
    }
  } else {
    out << "t_us,x,y,p\n";
    for (const Event& e : stream.events)
      out << e.t_us << ',' << e.x << ',' << e.y << ',' << int(e.polarity) << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

std::vector<EventStream> bin_events(const EventStream& stream, int t_steps) {
  if (t_steps < 1) throw std::invalid_argument("bin_events: t_steps must be >= 1");
  const uint64_t dur = stream.duration_us;
  const uint64_t steps = static_cast<uint64_t>(t_steps);

  // Integer bin starts; bin i spans [start[i], start[i+1]) with start[i] =
  // ceil(i*dur/steps), which matches the exact rational membership rule
  // t*steps in [i*dur, (i+1)*dur).
  std::vector<uint64_t> start(steps + 1);
  for (uint64_t i = 0; i <= steps; ++i) start[i] = (i * dur + steps - 1) / steps;
  start[steps] = dur;

  std::vector<EventStream> bins(steps);
  for (uint64_t i = 0; i < steps; ++i) {
    bins[i].width = stream.width;
    bins[i].height = stream.height;
    bins[i].duration_us = static_cast<uint32_t>(start[i + 1] - start[i]);
  }
  for (const Event& e : stream.events) {
    uint64_t i = dur == 0 ? steps - 1 : uint64_t(e.t_us) * steps / dur;
    if (i >= steps) i = steps - 1;  // t == duration lands in the final bin
    Event rebased = e;
    rebased.t_us = static_cast<uint32_t>(e.t_us - start[i]);
    if (rebased.t_us >= bins[i].duration_us) bins[i].duration_us = rebased.t_us + 1;
    bins[i].events.push_back(rebased);
  }
  return bins;
}

EventStream concat_bins(const std::vector<EventStream>& bins, uint16_t width,
                        uint16_t height, uint32_t duration_us) {
  EventStream s;
  s.width = width;
  s.height = height;
  s.duration_us = duration_us;
  const uint64_t dur = duration_us;
  const uint64_t steps = bins.size();
  uint64_t offset = 0;
  for (uint64_t i = 0; i < steps; ++i) {
    offset = steps == 0 ? 0 : (i * dur + steps - 1) / steps;
    for (const Event& e : bins[i].events) {
      Event g = e;
      g.t_us = static_cast<uint32_t>(e.t_us + offset);
      s.events.push_back(g);
    }
  }
  sort_by_time(s.events);
  return s;
}

GlyphPath synthetic_glyph_path(const SyntheticSpec& spec) {
  uint64_t h = 0x6a09e667f3bcc908ULL;
  h = mix64(h, spec.seed);
  h = mix64(h, static_cast<uint64_t>(spec.class_id));
  h = mix64(h, (uint64_t(spec.width) << 32) | spec.height);
  h = mix64(h, spec.duration_us);
  std::mt19937_64 rng(h);

  GlyphPath p{};
  p.radius = std::max(2.0, 0.2 * std::min(spec.width, spec.height));
  const double margin = p.radius + 2.0;
  const double w = spec.width, hgt = spec.height;
  const double ylo = std::min(margin, hgt - 1 - margin);
  const double yhi = std::max(margin, hgt - 1 - margin);
  // left-to-right traverse with seeded vertical endpoints
  p.x0 = std::min(margin, w - 1 - margin);
  p.x1 = std::max(margin, w - 1 - margin);
  p.y0 = ylo + (yhi - ylo) * next_unit(rng);
  p.y1 = ylo + (yhi - ylo) * next_unit(rng);
  return p;
}

void GlyphPath::center_at(uint32_t t_us, uint32_t duration_us, double& cx,
                          double& cy) const {
  const double f = duration_us == 0 ? 0.0 : double(t_us) / double(duration_us);
  cx = x0 + (x1 - x0) * f;
  cy = y0 + (y1 - y0) * f;
}

EventStream gen_synthetic(const SyntheticSpec& spec) {
  if (spec.class_id < 0 || spec.class_id >= kSyntheticClassCount)
    throw std::invalid_argument("gen_synthetic: class_id out of range");
  if (!(spec.event_rate > 0)) throw std::invalid_argument("gen_synthetic: event_rate must be > 0");
  if (spec.noise_rate < 0) throw std::invalid_argument("gen_synthetic: noise_rate must be >= 0");
  if (spec.width == 0 || spec.height == 0 || spec.duration_us == 0)
    throw std::invalid_argument("gen_synthetic: empty sensor or zero duration");

  const GlyphPath path = synthetic_glyph_path(spec);

  uint64_t h = 0xbb67ae8584caa73bULL;
  h = mix64(h, spec.seed);
  h = mix64(h, static_cast<uint64_t>(spec.class_id));
  h = mix64(h, (uint64_t(spec.width) << 32) | spec.height);
  h = mix64(h, spec.duration_us);
  h = mix64(h, static_cast<uint64_t>(std::llround(spec.event_rate * 1000)));
  h = mix64(h, static_cast<uint64_t>(std::llround(spec.noise_rate * 1000)));
  std::mt19937_64 rng(h);

  EventStream s;
  s.width = spec.width;
  s.height = spec.height;
  s.duration_us = spec.duration_us;

  const double dur_s = spec.duration_us * 1e-6;
  const uint64_t n_glyph = static_cast<uint64_t>(std::llround(spec.event_rate * dur_s));
  const uint64_t n_noise = static_cast<uint64_t>(std::llround(spec.noise_rate * dur_s));
  s.events.reserve(n_glyph + n_noise);

  double vx = path.x1 - path.x0, vy = path.y1 - path.y0;
  const double vn = std::sqrt(vx * vx + vy * vy);
  if (vn > 0) {
    vx /= vn;
    vy /= vn;
  } else {
    vx = 1;
    vy = 0;
  }

  for (uint64_t k = 0; k < n_glyph; ++k) {
    const uint32_t t = static_cast<uint32_t>(k * uint64_t(spec.duration_us) / n_glyph);
    double cx, cy;
    path.center_at(t, spec.duration_us, cx, cy);
    double dx, dy;
    outline_point(spec.class_id, path.radius, rng, dx, dy);
    long px = std::lround(cx + dx);
    long py = std::lround(cy + dy);
    px = std::clamp(px, 0L, long(spec.width) - 1);
    py = std::clamp(py, 0L, long(spec.height) - 1);
    Event e;
    e.t_us = t;
    e.x = static_cast<uint16_t>(px);
    e.y = static_cast<uint16_t>(py);
    e.polarity = (dx * vx + dy * vy) >= 0 ? uint8_t(Polarity::kOn) : uint8_t(Polarity::kOff);
    s.events.push_back(e);
  }

  for (uint64_t k = 0; k < n_noise; ++k) {
    Event e;
    e.t_us = static_cast<uint32_t>(next_unit(rng) * spec.duration_us);
    e.x = static_cast<uint16_t>(next_unit(rng) * spec.width);
    e.y = static_cast<uint16_t>(next_unit(rng) * spec.height);
    e.polarity = next_unit(rng) < 0.5 ? 0 : 1;
    s.events.push_back(e);
  }

  sort_by_time(s.events);
  return s;
}

}  // namespace evf
