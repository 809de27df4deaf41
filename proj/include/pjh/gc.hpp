// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "pjh/heap.hpp"

namespace pjh {

/// Liveness bitmap over the data heap, one bit per 8-byte word in each of
/// two planes: the begin plane marks the first word of a live object and
/// the end plane its last word. Object sizes can therefore be recovered
/// from the bitmap alone, after compaction has overwritten headers.
class MarkBitmap {
 public:
  MarkBitmap() = default;
  MarkBitmap(std::uint64_t data_start, std::uint64_t words);

  static MarkBitmap from_planes(std::uint64_t data_start, std::uint64_t words,
                                std::span<const std::uint8_t> begin_plane,
                                std::span<const std::uint8_t> end_plane);

  void mark(std::uint64_t offset, std::uint64_t size);
  bool is_marked(std::uint64_t offset) const;
  std::uint64_t marked_count() const;
  /// Offsets of all set begin bits, ascending.
  std::vector<std::uint64_t> marked_offsets() const;

  std::uint64_t data_start() const noexcept { return data_start_; }
  std::uint64_t words() const noexcept { return words_; }
  /// Plane bytes as stored on media (bit i of byte k is word 8k+i).
  std::vector<std::uint8_t> begin_bytes() const;
  std::vector<std::uint8_t> end_bytes() const;
  const std::vector<std::uint64_t>& begin_plane() const noexcept { return begin_; }
  const std::vector<std::uint64_t>& end_plane() const noexcept { return end_; }

  void set_begin_bit(std::uint64_t word);
  void set_end_bit(std::uint64_t word);

  bool operator==(const MarkBitmap&) const = default;

 private:
  std::uint64_t data_start_ = 0;
  std::uint64_t words_ = 0;
  std::vector<std::uint64_t> begin_;
  std::vector<std::uint64_t> end_;
};

struct Geometry {
  std::uint64_t data_start = 0;
  std::uint64_t region_size = kRegionSize;
  std::uint64_t region_count = 0;
};

struct SummaryEntry {
  std::uint64_t source;
  std::uint64_t size;
  std::uint64_t dest;
  bool operator==(const SummaryEntry&) const = default;
};

struct RegionSummary {
  std::uint64_t live_bytes = 0;
  std::uint64_t first_dest = 0;
  std::uint64_t objects = 0;
  bool operator==(const RegionSummary&) const = default;
};

/// Destination of every live object, produced by sliding live data toward
/// the data heap start in address order. Entirely volatile.
struct Summary {
  std::vector<SummaryEntry> objects;
  std::vector<RegionSummary> regions;
  std::uint64_t live_bytes = 0;
  std::uint64_t new_top = 0;

  /// Destination offset of the live object starting at `source`.
  /// Throws CorruptReference when no live object starts there.
  std::uint64_t forward(std::uint64_t source) const;
  std::vector<std::uint8_t> serialize() const;
  bool operator==(const Summary&) const = default;
};

/// Pure function of the bitmap and geometry. A begin bit pairs with the
/// first end bit at or after it (or the bitmap end when there is none);
/// begin bits inside an object are ignored.
Summary summarize(const MarkBitmap& bitmap, const Geometry& geometry);

/// Stop-the-world sliding mark-compact collector for one heap, including
/// the recovery of a collection that a crash interrupted.
///
/// Progress is journaled in one line of the metadata area: the epoch, a
/// cursor below which every object is finished, the source address whose
/// bytes are saved in the scratch area, and whether root updates are staged.
/// Objects are compacted in ascending source order. An object whose move
/// overlaps itself (or that stays put but has references to rewrite) is
/// first saved to scratch, because the move destroys its original.
class Collector {
 public:
  Collector(Heap& heap, GcOptions options);

  /// Computes liveness from all roots without touching the media.
  MarkBitmap mark(std::span<const ObjRef> extra_roots);
  GcStats collect(std::span<ObjRef> extra_roots);
  /// Finishes an interrupted collection from the persisted bitmap and journal.
  void recover();

  Geometry geometry() const;
  /// Reads the persisted bitmap covering [data_start, scan_end).
  MarkBitmap load_bitmap(std::uint64_t scan_end) const;

 private:
  void flush(std::uint64_t offset, std::uint64_t len);
  void fence();
  void put(std::uint64_t offset, std::uint64_t value);

  void persist_bitmap(const MarkBitmap& bitmap);
  void run(const Summary& summary, std::uint64_t epoch, std::uint64_t scan_end);
  void stage_roots(const Summary& summary);
  void move_object(const Summary& summary, const SummaryEntry& e, std::uint64_t epoch);
  void finalize(const Summary& summary, std::uint64_t scan_end);
  std::uint64_t forward_word(const Summary& summary, std::uint64_t word) const;
  void visit_roots(const RootVisitor& visit, std::span<ObjRef> extra_roots);

  Heap& heap_;
  PersistentDevice& dev_;
  GcOptions options_;
  std::uint64_t done_below_ = 0;
  std::uint64_t scratch_source_ = 0;
};

}  // namespace pjh
