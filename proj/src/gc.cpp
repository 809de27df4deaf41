// SPDX-License-Identifier: Apache-2.0
#include "pjh/gc.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <deque>

#include "pjh/errors.hpp"

namespace pjh {

// ----------------------------------------------------------- MarkBitmap

MarkBitmap::MarkBitmap(std::uint64_t data_start, std::uint64_t words)
    : data_start_(data_start),
      words_(words),
      begin_((words + 63) / 64, 0),
      end_((words + 63) / 64, 0) {}

MarkBitmap MarkBitmap::from_planes(std::uint64_t data_start, std::uint64_t words,
                                   std::span<const std::uint8_t> begin_plane,
                                   std::span<const std::uint8_t> end_plane) {
  MarkBitmap b(data_start, words);
  const std::uint64_t bytes = (words + 7) / 8;
  if (begin_plane.size() < bytes || end_plane.size() < bytes) {
    throw Error(Errc::CorruptImage, "mark bitmap shorter than the scanned heap");
  }
  for (std::uint64_t i = 0; i < bytes; ++i) {
    b.begin_[i / 8] |= std::uint64_t{begin_plane[i]} << (8 * (i % 8));
    b.end_[i / 8] |= std::uint64_t{end_plane[i]} << (8 * (i % 8));
  }
  // Bits past the scanned range are not part of this bitmap.
  if (words % 64 != 0 && !b.begin_.empty()) {
    const std::uint64_t keep = (std::uint64_t{1} << (words % 64)) - 1;
    b.begin_.back() &= keep;
    b.end_.back() &= keep;
  }
  return b;
}

void MarkBitmap::set_begin_bit(std::uint64_t word) {
  if (word >= words_) throw Error(Errc::OutOfBounds, "bit outside bitmap");
  begin_[word / 64] |= std::uint64_t{1} << (word % 64);
}

void MarkBitmap::set_end_bit(std::uint64_t word) {
  if (word >= words_) throw Error(Errc::OutOfBounds, "bit outside bitmap");
  end_[word / 64] |= std::uint64_t{1} << (word % 64);
}

void MarkBitmap::mark(std::uint64_t offset, std::uint64_t size) {
  const std::uint64_t first = (offset - data_start_) / kWordSize;
  set_begin_bit(first);
  set_end_bit(first + size / kWordSize - 1);
}

bool MarkBitmap::is_marked(std::uint64_t offset) const {
  if (offset < data_start_) return false;
  const std::uint64_t word = (offset - data_start_) / kWordSize;
  if (word >= words_) return false;
  return (begin_[word / 64] >> (word % 64)) & 1;
}

std::uint64_t MarkBitmap::marked_count() const {
  std::uint64_t n = 0;
  for (auto w : begin_) n += static_cast<std::uint64_t>(std::popcount(w));
  return n;
}

std::vector<std::uint64_t> MarkBitmap::marked_offsets() const {
  std::vector<std::uint64_t> out;
  for (std::size_t i = 0; i < begin_.size(); ++i) {
    for (std::uint64_t w = begin_[i]; w; w &= w - 1) {
      out.push_back(data_start_ + (i * 64 + static_cast<std::uint64_t>(std::countr_zero(w))) * kWordSize);
    }
  }
  return out;
}

namespace {

std::vector<std::uint8_t> plane_bytes(const std::vector<std::uint64_t>& plane, std::uint64_t words) {
  std::vector<std::uint8_t> out((words + 7) / 8, 0);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<std::uint8_t>(plane[i / 8] >> (8 * (i % 8)));
  }
  return out;
}

/// First set bit at index >= from, or `limit` when there is none.
std::uint64_t next_bit(const std::vector<std::uint64_t>& plane, std::uint64_t from,
                       std::uint64_t limit) {
  if (from >= limit) return limit;
  std::size_t i = from / 64;
  std::uint64_t w = plane[i] & (~std::uint64_t{0} << (from % 64));
  while (true) {
    if (w) {
      const std::uint64_t bit = i * 64 + static_cast<std::uint64_t>(std::countr_zero(w));
      return std::min(bit, limit);
    }
    if (++i >= plane.size()) return limit;
    w = plane[i];
  }
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

}  // namespace

std::vector<std::uint8_t> MarkBitmap::begin_bytes() const { return plane_bytes(begin_, words_); }
std::vector<std::uint8_t> MarkBitmap::end_bytes() const { return plane_bytes(end_, words_); }

// -------------------------------------------------------------- Summary

Summary summarize(const MarkBitmap& bitmap, const Geometry& geometry) {
  Summary s;
  s.regions.assign(geometry.region_count, RegionSummary{});
  const std::uint64_t words = bitmap.words();
  std::uint64_t dest = geometry.data_start;
  std::uint64_t word = 0;
  while (true) {
    const std::uint64_t b = next_bit(bitmap.begin_plane(), word, words);
    if (b >= words) break;
    std::uint64_t e = next_bit(bitmap.end_plane(), b, words);
    if (e >= words) e = words - 1;
    const std::uint64_t source = bitmap.data_start() + b * kWordSize;
    const std::uint64_t size = (e - b + 1) * kWordSize;
    s.objects.push_back({source, size, dest});
    const std::uint64_t r = (source - geometry.data_start) / geometry.region_size;
    if (r < s.regions.size()) {
      auto& region = s.regions[r];
      if (region.objects == 0) region.first_dest = dest;
      region.live_bytes += size;
      ++region.objects;
    }
    dest += size;
    word = e + 1;
  }
  // Empty regions record where the next live data would land.
  std::uint64_t running = geometry.data_start;
  for (auto& region : s.regions) {
    if (region.objects == 0) region.first_dest = running;
    running = region.first_dest + region.live_bytes;
  }
  s.live_bytes = dest - geometry.data_start;
  s.new_top = dest;
  return s;
}

std::uint64_t Summary::forward(std::uint64_t source) const {
  auto it = std::lower_bound(objects.begin(), objects.end(), source,
                             [](const SummaryEntry& e, std::uint64_t v) { return e.source < v; });
  if (it == objects.end() || it->source != source) {
    throw Error(Errc::CorruptReference, "reference to offset " + std::to_string(source) +
                                            " does not name a live object");
  }
  return it->dest;
}

std::vector<std::uint8_t> Summary::serialize() const {
  std::vector<std::uint8_t> out;
  put_u64(out, objects.size());
  for (const auto& e : objects) {
    put_u64(out, e.source);
    put_u64(out, e.size);
    put_u64(out, e.dest);
  }
  put_u64(out, regions.size());
  for (const auto& r : regions) {
    put_u64(out, r.live_bytes);
    put_u64(out, r.first_dest);
    put_u64(out, r.objects);
  }
  put_u64(out, live_bytes);
  put_u64(out, new_top);
  return out;
}

// ------------------------------------------------------------ Collector

Collector::Collector(Heap& heap, GcOptions options)
    : heap_(heap), dev_(heap.device()), options_(options) {}

Geometry Collector::geometry() const {
  return Geometry{heap_.data_start(), kRegionSize, heap_.metadata().region_count};
}

void Collector::flush(std::uint64_t offset, std::uint64_t len) {
  if (options_.persist) dev_.flush(offset, len);
}

void Collector::fence() {
  if (options_.persist) dev_.fence();
}

void Collector::put(std::uint64_t offset, std::uint64_t value) {
  dev_.write_u64(offset, value);
  flush(offset, 8);
}

void Collector::visit_roots(const RootVisitor& visit, std::span<ObjRef> extra_roots) {
  for (auto& r : extra_roots) visit(r);
  for (auto& [id, provider] : heap_.providers_) provider(visit);
}

MarkBitmap Collector::mark(std::span<const ObjRef> extra_roots) {
  const std::uint64_t start = heap_.data_start();
  const std::uint64_t top = heap_.top();
  const std::uint64_t words = (top - start) / kWordSize;

  // Object starts, so that references into the middle of an object are caught.
  std::vector<std::uint64_t> starts((words + 63) / 64, 0);
  heap_.for_each_object([&](std::uint64_t off, const TypeDescriptor&, std::uint64_t) {
    const std::uint64_t w = (off - start) / kWordSize;
    starts[w / 64] |= std::uint64_t{1} << (w % 64);
  });

  MarkBitmap bitmap(start, words);
  std::vector<std::uint64_t> stack;
  auto push = [&](std::uint64_t word) {
    if (word == 0 || !heap_.contains(word)) return;  // null or another space
    const std::uint64_t off = heap_.offset_of(word);
    const std::uint64_t w = (off - start) / kWordSize;
    if (off < start || off >= top || off % kWordSize != 0 || !((starts[w / 64] >> (w % 64)) & 1)) {
      throw Error(Errc::CorruptReference, "reference to heap offset " + std::to_string(off) +
                                              " is not an object start");
    }
    if (bitmap.is_marked(off)) return;
    bitmap.mark(off, heap_.object_size_at(off));
    stack.push_back(off);
  };

  for (const auto& e : heap_.names_.entries(EntryKind::Root)) push(e.address);
  for (const auto& r : extra_roots) {
    if (r.space == Space::Persistent) push(r.address);
  }
  for (auto& [id, provider] : heap_.providers_) {
    provider([&](ObjRef& r) {
      if (r.space == Space::Persistent) push(r.address);
    });
  }
  while (!stack.empty()) {
    const std::uint64_t off = stack.back();
    stack.pop_back();
    const TypeDescriptor* d = nullptr;
    const std::uint64_t size = heap_.object_size_at(off, &d);
    heap_.for_each_slot(off, *d, size, [&](std::uint64_t slot) { push(dev_.read_u64(slot)); });
  }
  return bitmap;
}

void Collector::persist_bitmap(const MarkBitmap& bitmap) {
  const auto& meta = heap_.metadata();
  const auto begin = bitmap.begin_bytes();
  const auto end = bitmap.end_bytes();
  dev_.write(meta.mark_bitmap_location, begin);
  dev_.write(meta.mark_bitmap_location + meta.mark_plane_size, end);
  flush(meta.mark_bitmap_location, begin.size());
  flush(meta.mark_bitmap_location + meta.mark_plane_size, end.size());
}

MarkBitmap Collector::load_bitmap(std::uint64_t scan_end) const {
  const auto& meta = heap_.metadata();
  if (scan_end < meta.data_heap_location || scan_end > meta.data_heap_end()) {
    throw Error(Errc::CorruptImage, "collection journal names a bad scan end");
  }
  const std::uint64_t words = (scan_end - meta.data_heap_location) / kWordSize;
  const std::uint64_t bytes = (words + 7) / 8;
  auto begin = dev_.read(meta.mark_bitmap_location, bytes);
  auto end = dev_.read(meta.mark_bitmap_location + meta.mark_plane_size, bytes);
  return MarkBitmap::from_planes(meta.data_heap_location, words, begin, end);
}

GcStats Collector::collect(std::span<ObjRef> extra_roots) {
  const auto t0 = std::chrono::steady_clock::now();
  const std::uint64_t points0 = dev_.persist_point_count();
  auto& meta = heap_.meta_;
  const std::uint64_t scan_end = meta.top;

  std::vector<ObjRef> extra(extra_roots.begin(), extra_roots.end());
  const MarkBitmap bitmap = mark(extra);
  const Summary summary = summarize(bitmap, geometry());

  // Everything the recovery needs goes down before the in-progress flag.
  persist_bitmap(bitmap);
  const std::uint64_t region_bytes = (meta.region_count + 7) / 8;
  dev_.fill(meta.region_bitmap_location, region_bytes, 0);
  flush(meta.region_bitmap_location, region_bytes);
  const std::uint64_t epoch = meta.global_timestamp + 1;
  put(journal::kEpoch, epoch);
  put(journal::kDoneBelow, meta.data_heap_location);
  put(journal::kScratchSource, 0);
  put(journal::kRootsStaged, 0);
  put(journal::kScanEnd, scan_end);
  fence();

  put(meta::kGcInProgress, 1);
  fence();
  meta.gc_in_progress = true;
  put(meta::kGlobalTimestamp, epoch);
  fence();
  meta.global_timestamp = epoch;

  run(summary, epoch, scan_end);

  // Volatile roots follow their objects.
  visit_roots(
      [&](ObjRef& r) {
        if (r.space == Space::Persistent && r.address != 0 && heap_.contains(r.address)) {
          r.address = heap_.address_of(summary.forward(heap_.offset_of(r.address)));
        }
      },
      extra_roots);
  if (!options_.persist) dev_.persist_all();

  GcStats stats;
  stats.live_bytes = summary.live_bytes;
  stats.live_objects = summary.objects.size();
  stats.reclaimed_bytes = scan_end - summary.new_top;
  stats.regions = (scan_end - meta.data_heap_location + kRegionSize - 1) / kRegionSize;
  stats.fences_issued = dev_.persist_point_count() - points0;
  stats.pause_ns = static_cast<std::uint64_t>(
      std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::steady_clock::now() - t0)
          .count());
  return stats;
}

void Collector::recover() {
  auto& meta = heap_.meta_;
  const std::uint64_t epoch = dev_.read_u64(journal::kEpoch);
  const std::uint64_t scan_end = dev_.read_u64(journal::kScanEnd);
  if (epoch == 0 || (epoch != meta.global_timestamp && epoch != meta.global_timestamp + 1)) {
    throw Error(Errc::CorruptImage, "collection journal epoch does not match the heap");
  }
  if (meta.global_timestamp != epoch) {
    put(meta::kGlobalTimestamp, epoch);
    fence();
    meta.global_timestamp = epoch;
  }
  const MarkBitmap bitmap = load_bitmap(scan_end);
  run(summarize(bitmap, geometry()), epoch, scan_end);
}

std::uint64_t Collector::forward_word(const Summary& summary, std::uint64_t word) const {
  if (word == 0 || !heap_.contains(word)) return word;
  return heap_.address_of(summary.forward(heap_.offset_of(word)));
}

void Collector::stage_roots(const Summary& summary) {
  for (const auto& e : heap_.names_.entries(EntryKind::Root)) {
    put(kStagedRootsOffset + 8 * e.slot, forward_word(summary, e.address));
  }
  fence();
  put(journal::kRootsStaged, 1);
  fence();
}

void Collector::run(const Summary& summary, std::uint64_t epoch, std::uint64_t scan_end) {
  const auto& meta = heap_.metadata();
  done_below_ = dev_.read_u64(journal::kDoneBelow);
  scratch_source_ = dev_.read_u64(journal::kScratchSource);
  if (dev_.read_u64(journal::kRootsStaged) == 0) stage_roots(summary);

  const std::uint64_t start = meta.data_heap_location;
  const std::uint64_t regions = (scan_end - start + kRegionSize - 1) / kRegionSize;
  std::size_t next = 0;
  bool unfenced_bits = false;
  for (std::uint64_t r = 0; r < regions; ++r) {
    const std::uint64_t region_end = start + (r + 1) * kRegionSize;
    const std::uint64_t bit_byte = meta.region_bitmap_location + r / 8;
    const std::uint8_t mask = static_cast<std::uint8_t>(1u << (r % 8));
    const bool done = (dev_.read(bit_byte, 1)[0] & mask) != 0;
    bool moved_any = false;
    for (; next < summary.objects.size() && summary.objects[next].source < region_end; ++next) {
      const auto& e = summary.objects[next];
      if (done || e.source + e.size <= done_below_) continue;
      move_object(summary, e, epoch);
      moved_any = true;
    }
    if (done) continue;
    std::uint8_t byte = dev_.read(bit_byte, 1)[0];
    byte |= mask;
    dev_.write(bit_byte, std::span<const std::uint8_t>(&byte, 1));
    flush(bit_byte, 1);
    if (moved_any) {
      fence();
      unfenced_bits = false;
    } else {
      unfenced_bits = true;
    }
  }
  if (unfenced_bits) fence();
  finalize(summary, scan_end);
}

void Collector::move_object(const Summary& summary, const SummaryEntry& e, std::uint64_t epoch) {
  const auto& meta = heap_.metadata();
  const std::uint64_t s = e.source;
  const std::uint64_t n = e.size;
  const std::uint64_t d = e.dest;
  if (n > meta.scratch_size) throw Error(Errc::CorruptImage, "live object larger than scratch");

  const bool saved = scratch_source_ == s;
  std::vector<std::uint8_t> bytes = dev_.read(saved ? meta.scratch_location : s, n);

  auto word_at = [&](std::uint64_t rel) {
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | bytes[rel + static_cast<std::uint64_t>(i)];
    return v;
  };
  auto set_word = [](std::vector<std::uint8_t>& b, std::uint64_t rel, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) b[rel + static_cast<std::uint64_t>(i)] = static_cast<std::uint8_t>(v >> (8 * i));
  };

  const TypeDescriptor* d_klass = heap_.klass_at(word_at(0) & ~kKlassFlagMask);
  if (!d_klass) throw Error(Errc::CorruptImage, "live object without descriptor during compaction");

  std::vector<std::uint8_t> copy = bytes;
  bool changed = false;
  heap_.for_each_slot(0, *d_klass, n, [&](std::uint64_t rel) {
    const std::uint64_t w = word_at(rel);
    const std::uint64_t f = forward_word(summary, w);
    if (f != w) {
      set_word(copy, rel, f);
      changed = true;
    }
  });

  if (d == s && !changed) {
    if (dev_.read_u64(s + 8) != epoch) {
      put(s + 8, epoch);
      fence();
    }
  } else if (d + n <= s) {
    dev_.write(d, copy);
    flush(d, n);
    fence();
    put(d + 8, epoch);
    fence();
    put(s + 8, epoch);
  } else {
    // The move overwrites the original, which then can no longer serve as
    // its own undo copy; keep one in scratch first.
    if (!saved) {
      dev_.write(meta.scratch_location, bytes);
      flush(meta.scratch_location, n);
      fence();
      put(journal::kScratchSource, s);
      fence();
      scratch_source_ = s;
    }
    dev_.write(d, copy);
    flush(d, n);
    fence();
    put(d + 8, epoch);
    fence();
  }
  put(journal::kDoneBelow, s + n);
  fence();
  done_below_ = s + n;
}

void Collector::finalize(const Summary& summary, std::uint64_t scan_end) {
  auto& meta = heap_.meta_;
  const std::uint64_t new_top = summary.new_top;

  for (const auto& e : heap_.names_.entries(EntryKind::Root)) {
    const std::uint64_t staged = dev_.read_u64(kStagedRootsOffset + 8 * e.slot);
    if (staged != e.address) heap_.names_.set_address(e.slot, staged, false);
  }
  fence();
  if (scan_end > new_top) {
    dev_.fill(new_top, scan_end - new_top, 0);
    flush(new_top, scan_end - new_top);
    fence();
  }
  put(meta::kLastAllocation, new_top);
  fence();
  meta.last_allocation = new_top;
  put(meta::kTop, new_top);
  fence();
  meta.top = new_top;
  put(meta::kGcInProgress, 0);
  fence();
  meta.gc_in_progress = false;
  const std::uint64_t region_bytes = (meta.region_count + 7) / 8;
  dev_.fill(meta.region_bitmap_location, region_bytes, 0);
  flush(meta.region_bitmap_location, region_bytes);
  fence();
}

}  // namespace pjh
