// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>

namespace pjh {

class PersistentDevice;

// On-media layout. All multi-byte values are little-endian.
//
//   [0, 64K)           metadata block, GC journal, staged roots, name table
//   klass segment      64K, type descriptors
//   gc scratch         undo space for objects whose move overlaps themselves
//   undo log           transaction undo log
//   bitmaps            mark bitmap (begin and end planes) + region bitmap
//   data heap          region-aligned object space
inline constexpr std::uint64_t kRegionSize = 64 * 1024;
inline constexpr std::uint64_t kHeaderSize = 16;
inline constexpr std::uint64_t kWordSize = 8;
inline constexpr std::uint64_t kArrayLengthOffset = 16;
inline constexpr std::uint64_t kArrayHeaderSize = 24;
inline constexpr std::uint64_t kKlassFlagMask = 0x7;

inline constexpr char kImageMagic[8] = {'P', 'J', 'H', 'I', 'M', 'G', '0', '1'};
inline constexpr std::uint32_t kImageVersion = 1;

inline constexpr std::uint64_t kNameTableSlots = 512;
inline constexpr std::uint64_t kNameEntrySize = 64;
inline constexpr std::uint64_t kMaxNameLength = 47;

inline constexpr std::uint64_t kKlassSegmentSize = kRegionSize;
inline constexpr std::uint64_t kScratchSize = 4 * kRegionSize;
inline constexpr std::uint64_t kMaxObjectSize = kScratchSize;
inline constexpr std::uint64_t kMinUndoLogSize = kRegionSize;

/// Byte offsets of the metadata words. The first twelve follow the declared
/// order of the heap metadata; the rest extend it.
namespace meta {
inline constexpr std::uint64_t kMagic = 0;
inline constexpr std::uint64_t kVersion = 8;
inline constexpr std::uint64_t kAddressHint = 16;
inline constexpr std::uint64_t kHeapSize = 24;
inline constexpr std::uint64_t kTop = 32;
inline constexpr std::uint64_t kGcInProgress = 40;
inline constexpr std::uint64_t kGlobalTimestamp = 48;
inline constexpr std::uint64_t kMarkBitmap = 56;
inline constexpr std::uint64_t kRegionBitmap = 64;
inline constexpr std::uint64_t kNameTable = 72;
inline constexpr std::uint64_t kKlassSegment = 80;
inline constexpr std::uint64_t kDataHeap = 88;
inline constexpr std::uint64_t kKlassSegmentSize = 96;
inline constexpr std::uint64_t kNameTableSlots = 104;
inline constexpr std::uint64_t kUndoLog = 112;
inline constexpr std::uint64_t kUndoLogSize = 120;
inline constexpr std::uint64_t kScratch = 128;
inline constexpr std::uint64_t kScratchSize = 136;
inline constexpr std::uint64_t kMarkPlaneSize = 144;
inline constexpr std::uint64_t kLastAllocation = 152;
inline constexpr std::uint64_t kRemapTarget = 160;
inline constexpr std::uint64_t kRegionCount = 168;
inline constexpr std::uint64_t kBlockSize = 256;
}  // namespace meta

/// GC journal: one cache line of progress words for an in-flight collection.
namespace journal {
inline constexpr std::uint64_t kBase = 256;
inline constexpr std::uint64_t kEpoch = kBase + 0;
inline constexpr std::uint64_t kDoneBelow = kBase + 8;
inline constexpr std::uint64_t kScratchSource = kBase + 16;
inline constexpr std::uint64_t kRootsStaged = kBase + 24;
/// Top of the heap when the collection started; the bitmap covers [data, scan end).
inline constexpr std::uint64_t kScanEnd = kBase + 32;
}  // namespace journal

inline constexpr std::uint64_t kStagedRootsOffset = 4096;
inline constexpr std::uint64_t kNameTableOffset = 8192;

struct HeapMetadata {
  std::uint32_t version = 0;
  std::uint64_t address_hint = 0;
  std::uint64_t heap_size = 0;
  std::uint64_t top = 0;
  bool gc_in_progress = false;
  std::uint64_t global_timestamp = 0;
  std::uint64_t mark_bitmap_location = 0;
  std::uint64_t region_bitmap_location = 0;
  std::uint64_t name_table_location = 0;
  std::uint64_t klass_segment_location = 0;
  std::uint64_t data_heap_location = 0;
  std::uint64_t klass_segment_size = 0;
  std::uint64_t name_table_slots = 0;
  std::uint64_t undo_log_location = 0;
  std::uint64_t undo_log_size = 0;
  std::uint64_t scratch_location = 0;
  std::uint64_t scratch_size = 0;
  std::uint64_t mark_plane_size = 0;
  std::uint64_t last_allocation = 0;
  std::uint64_t remap_target = 0;
  std::uint64_t region_count = 0;

  std::uint64_t data_heap_end() const noexcept {
    return data_heap_location + region_count * kRegionSize;
  }

  static HeapMetadata read(const PersistentDevice& device);
  /// Rejects bad magic, bad version and out-of-range locations.
  void check() const;
};

/// Computes where every area goes for a heap of `heap_size` bytes.
/// Throws SizeTooSmall when not even one data region fits.
HeapMetadata plan_layout(std::uint64_t heap_size, std::uint64_t address_hint);

std::uint64_t minimum_heap_size();

constexpr std::uint64_t align_up(std::uint64_t v, std::uint64_t a) noexcept {
  return (v + a - 1) / a * a;
}

}  // namespace pjh
