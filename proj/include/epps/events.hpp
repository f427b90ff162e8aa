#pragma once

// Detected-photon records and the little-endian binary event file.
//
// File layout:
//   "EPPS"           4 bytes magic
//   version          u16 (currently 1)
//   channel_count    u16
//   records          { channel u8, t_ps u64 } packed, 9 bytes each

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "epps/error.hpp"

namespace epps {

struct PhotonEvent {
  std::uint8_t channel = 0;
  std::int64_t t_ps = 0;

  friend bool operator==(const PhotonEvent&, const PhotonEvent&) = default;
};

inline bool event_before(const PhotonEvent& a, const PhotonEvent& b) {
  return a.t_ps != b.t_ps ? a.t_ps < b.t_ps : a.channel < b.channel;
}

struct EventStream {
  std::vector<PhotonEvent> events;  // globally sorted by (t_ps, channel)
  std::int64_t duration_ps = 0;
  std::uint16_t channel_count = 0;
  bool empty_warning = false;  // no photon sources at all were configured

  double duration_s() const { return static_cast<double>(duration_ps) * 1e-12; }
};

// Timestamps of one channel, in stream order.
inline std::vector<std::int64_t> channel_times(std::span<const PhotonEvent> events,
                                               std::uint8_t channel) {
  std::vector<std::int64_t> t;
  for (const auto& e : events)
    if (e.channel == channel) t.push_back(e.t_ps);
  return t;
}

inline constexpr std::array<char, 4> kEventMagic{'E', 'P', 'P', 'S'};
inline constexpr std::uint16_t kEventFileVersion = 1;

namespace detail {
template <class T>
void put_le(std::vector<char>& buf, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i)
    buf.push_back(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xffu));
}
template <class T>
T get_le(const unsigned char* p) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return static_cast<T>(v);
}
}  // namespace detail

inline std::vector<char> encode_events(std::span<const PhotonEvent> events,
                                       std::uint16_t channel_count) {
  std::vector<char> buf;
  buf.reserve(8 + 9 * events.size());
  for (const char c : kEventMagic) buf.push_back(c);
  detail::put_le<std::uint16_t>(buf, kEventFileVersion);
  detail::put_le<std::uint16_t>(buf, channel_count);
  for (const auto& e : events) {
    detail::put_le<std::uint8_t>(buf, e.channel);
    detail::put_le<std::uint64_t>(buf, static_cast<std::uint64_t>(e.t_ps));
  }
  return buf;
}

inline void write_event_file(const std::filesystem::path& path, const EventStream& s) {
  const auto buf = encode_events(s.events, s.channel_count);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("events: cannot open " + path.string() + " for writing");
  f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

// Reads events and channel count. Duration lives in the sidecar metadata.
inline EventStream read_event_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("events: cannot open " + path.string());
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(f)), {});
  if (buf.size() < 8 || !std::equal(kEventMagic.begin(), kEventMagic.end(), buf.begin()))
    throw Error("events: " + path.string() + " is not an EPPS event file");
  const auto version = detail::get_le<std::uint16_t>(&buf[4]);
  if (version != kEventFileVersion)
    throw Error("events: unsupported event file version " + std::to_string(version));
  if ((buf.size() - 8) % 9 != 0) throw Error("events: truncated record in " + path.string());
  EventStream s;
  s.channel_count = detail::get_le<std::uint16_t>(&buf[6]);
  const std::size_t n = (buf.size() - 8) / 9;
  s.events.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const unsigned char* p = &buf[8 + 9 * i];
    s.events[i].channel = p[0];
    s.events[i].t_ps = static_cast<std::int64_t>(detail::get_le<std::uint64_t>(p + 1));
  }
  if (!s.events.empty()) s.duration_ps = s.events.back().t_ps;
  return s;
}

}  // namespace epps
