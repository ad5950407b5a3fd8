/* Copyright 2026 The Melofill Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#include "melofill/midi.hpp"

#include <algorithm>
#include <deque>
#include <fstream>
#include <iterator>
#include <map>
#include <tuple>

namespace melofill {

MidiParseError::MidiParseError(const std::string& chunk, std::size_t offset,
                               const std::string& what)
    : std::runtime_error(chunk + " at byte " + std::to_string(offset) + ": " + what),
      chunk_(chunk),
      offset_(offset) {}

namespace {

class Reader {
 public:
  Reader(std::span<const std::uint8_t> data, std::size_t base, std::string chunk)
      : data_(data), base_(base), chunk_(std::move(chunk)) {}

  bool done() const { return pos_ >= data_.size(); }
  std::size_t offset() const { return base_ + pos_; }

  std::uint8_t u8() {
    need(1);
    return data_[pos_++];
  }
  std::uint8_t peek() {
    need(1);
    return data_[pos_];
  }
  std::uint32_t be(int n) {
    need(static_cast<std::size_t>(n));
    std::uint32_t v = 0;
    for (int i = 0; i < n; ++i) v = (v << 8) | data_[pos_++];
    return v;
  }
  std::uint32_t vlq() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      const std::uint8_t b = u8();
      v = (v << 7) | (b & 0x7F);
      if (!(b & 0x80)) return v;
    }
    fail("variable-length quantity longer than 4 bytes");
  }
  std::span<const std::uint8_t> take(std::size_t n) {
    need(n);
    auto s = data_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw MidiParseError(chunk_, offset(), what);
  }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > data_.size()) fail("truncated chunk");
  }

  std::span<const std::uint8_t> data_;
  std::size_t base_;
  std::string chunk_;
  std::size_t pos_ = 0;
};

struct PendingNote {
  std::int64_t onset;
};

void parse_track(Reader& r, int track_index, std::int64_t division, RawSong& song) {
  auto rescale = [division](std::int64_t t) {
    return (t * kTicksPerQuarter + division / 2) / division;
  };
  std::int64_t tick = 0;
  std::uint8_t running = 0;
  std::map<int, std::vector<NoteEvent>> by_channel;
  std::map<std::pair<int, int>, std::deque<PendingNote>> open;  // (channel, pitch)

  auto close = [&](int ch, int pitch, std::int64_t at) {
    auto it = open.find({ch, pitch});
    if (it == open.end() || it->second.empty()) return;  // stray note-off
    const auto onset = it->second.front().onset;
    it->second.pop_front();
    const auto on = rescale(onset), off = rescale(at);
    if (off > on) by_channel[ch].push_back({pitch, on, off - on});
  };

  bool ended = false;
  while (!r.done() && !ended) {
    tick += r.vlq();
    std::uint8_t status = r.peek();
    if (status & 0x80) {
      r.u8();
    } else {
      if (running == 0) r.fail("data byte without running status");
      status = running;
    }

    if (status == 0xFF) {
      const std::uint8_t type = r.u8();
      const auto len = r.vlq();
      auto payload = r.take(len);
      if (type == 0x51 && len == 3) {
        const std::int32_t us = (payload[0] << 16) | (payload[1] << 8) | payload[2];
        song.tempo_map.push_back({rescale(tick), us});
      } else if (type == 0x58 && len >= 2) {
        song.time_signatures.push_back({rescale(tick), payload[0], 1 << payload[1]});
      } else if (type == 0x2F) {
        ended = true;
      }
      continue;
    }
    if (status == 0xF0 || status == 0xF7) {
      r.take(r.vlq());
      continue;
    }
    if (status >= 0xF0) r.fail("unsupported system message");

    running = status;
    const int ch = status & 0x0F;
    switch (status & 0xF0) {
      case 0x80: {
        const int pitch = r.u8() & 0x7F;
        r.u8();
        close(ch, pitch, tick);
        break;
      }
      case 0x90: {
        const int pitch = r.u8() & 0x7F;
        const int vel = r.u8() & 0x7F;
        if (vel == 0) {
          close(ch, pitch, tick);
        } else {
          open[{ch, pitch}].push_back({tick});
        }
        break;
      }
      case 0xA0:
      case 0xB0:
      case 0xE0:
        r.take(2);
        break;
      case 0xC0:
      case 0xD0:
        r.take(1);
        break;
      default:
        r.fail("bad status byte");
    }
  }

  for (const auto& [key, pending] : open) {
    for (const auto& p : pending) {
      song.warnings.push_back("track " + std::to_string(track_index) + " channel " +
                              std::to_string(key.first) + ": unmatched note-on pitch " +
                              std::to_string(key.second) + " at tick " +
                              std::to_string(rescale(p.onset)) + " dropped");
    }
  }
  for (auto& [ch, notes] : by_channel) {
    std::sort(notes.begin(), notes.end(), [](const NoteEvent& a, const NoteEvent& b) {
      return std::tie(a.onset, a.pitch, a.duration) < std::tie(b.onset, b.pitch, b.duration);
    });
    song.tracks.push_back({track_index, ch, std::move(notes)});
  }
}

}  // namespace

RawSong parse_midi(std::span<const std::uint8_t> bytes) {
  Reader head(bytes, 0, "MThd");
  const auto magic = head.take(4);
  if (!std::equal(magic.begin(), magic.end(), "MThd")) {
    throw MidiParseError("MThd", 0, "missing MThd magic");
  }
  const auto hlen = head.be(4);
  if (hlen < 6) head.fail("header length < 6");
  RawSong song;
  song.format = static_cast<int>(head.be(2));
  const auto ntracks = head.be(2);
  const auto division = head.be(2);
  if (song.format > 1) head.fail("unsupported format " + std::to_string(song.format));
  if (division & 0x8000) head.fail("SMPTE time division not supported");
  if (division == 0) head.fail("zero time division");
  head.take(hlen - 6);

  std::size_t pos = 8 + hlen;
  for (std::uint32_t t = 0; t < ntracks; ++t) {
    const std::string name = "MTrk#" + std::to_string(t);
    Reader hdr(bytes.subspan(std::min(pos, bytes.size())), pos, name);
    const auto id = hdr.take(4);
    const auto len = hdr.be(4);
    if (!std::equal(id.begin(), id.end(), "MTrk")) {
      // Unknown chunks are skipped per the SMF spec.
      hdr.take(len);
      pos += 8 + len;
      --t;
      continue;
    }
    if (pos + 8 + len > bytes.size()) {
      throw MidiParseError(name, bytes.size(), "truncated chunk (declared " +
                                                   std::to_string(len) + " bytes)");
    }
    Reader body(bytes.subspan(pos + 8, len), pos + 8, name);
    parse_track(body, static_cast<int>(t), division, song);
    pos += 8 + len;
  }

  auto by_tick = [](const auto& a, const auto& b) { return a.tick < b.tick; };
  std::stable_sort(song.tempo_map.begin(), song.tempo_map.end(), by_tick);
  std::stable_sort(song.time_signatures.begin(), song.time_signatures.end(), by_tick);
  return song;
}

RawSong read_midi_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<std::uint8_t> data((std::istreambuf_iterator<char>(in)),
                                 std::istreambuf_iterator<char>());
  return parse_midi(data);
}

namespace {

void put_be(std::vector<std::uint8_t>& out, std::uint32_t v, int n) {
  for (int i = n - 1; i >= 0; --i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_vlq(std::vector<std::uint8_t>& out, std::uint32_t v) {
  std::uint8_t buf[5];
  int n = 0;
  buf[n++] = v & 0x7F;
  while (v >>= 7) buf[n++] = static_cast<std::uint8_t>((v & 0x7F) | 0x80);
  while (n) out.push_back(buf[--n]);
}

}  // namespace

std::vector<std::uint8_t> write_midi(const Melody& m, int velocity) {
  struct Ev {
    std::int64_t tick;
    int order;  // note-offs before note-ons at equal ticks
    std::uint8_t status, a, b;
  };
  std::vector<Ev> evs;
  for (const auto& n : m.notes) {
    evs.push_back({n.onset, 1, 0x90, static_cast<std::uint8_t>(n.pitch),
                   static_cast<std::uint8_t>(velocity)});
    evs.push_back({n.end(), 0, 0x80, static_cast<std::uint8_t>(n.pitch), 0});
  }
  std::stable_sort(evs.begin(), evs.end(), [](const Ev& x, const Ev& y) {
    return std::tie(x.tick, x.order) < std::tie(y.tick, y.order);
  });

  std::vector<std::uint8_t> trk;
  put_vlq(trk, 0);
  trk.insert(trk.end(), {0xFF, 0x58, 0x04, 0x04, 0x02, 0x18, 0x08});
  put_vlq(trk, 0);
  trk.insert(trk.end(), {0xFF, 0x51, 0x03});
  put_be(trk, static_cast<std::uint32_t>(m.tempo_us), 3);
  std::int64_t last = 0;
  for (const auto& e : evs) {
    put_vlq(trk, static_cast<std::uint32_t>(e.tick - last));
    last = e.tick;
    trk.insert(trk.end(), {e.status, e.a, e.b});
  }
  put_vlq(trk, 0);
  trk.insert(trk.end(), {0xFF, 0x2F, 0x00});

  std::vector<std::uint8_t> out = {'M', 'T', 'h', 'd'};
  put_be(out, 6, 4);
  put_be(out, 0, 2);
  put_be(out, 1, 2);
  put_be(out, static_cast<std::uint32_t>(kTicksPerQuarter), 2);
  out.insert(out.end(), {'M', 'T', 'r', 'k'});
  put_be(out, static_cast<std::uint32_t>(trk.size()), 4);
  out.insert(out.end(), trk.begin(), trk.end());
  return out;
}

void write_midi_file(const std::string& path, const Melody& m) {
  const auto bytes = write_midi(m);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

}  // namespace melofill
