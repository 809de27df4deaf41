// SPDX-License-Identifier: Apache-2.0
#include "pjh/layout.hpp"

#include <algorithm>
#include <cstring>
#include <string>

#include "pjh/device.hpp"
#include "pjh/errors.hpp"

namespace pjh {

namespace {

constexpr std::uint64_t kKlassOffset = kRegionSize;
constexpr std::uint64_t kScratchOffset = kKlassOffset + kKlassSegmentSize;
constexpr std::uint64_t kUndoOffset = kScratchOffset + kScratchSize;

std::uint64_t undo_log_size_for(std::uint64_t heap_size) {
  return std::max(kMinUndoLogSize, align_up(heap_size / 64, kRegionSize));
}

std::uint64_t bitmap_area_for(std::uint64_t data_size) {
  const std::uint64_t plane = data_size / 64;
  const std::uint64_t regions = data_size / kRegionSize;
  const std::uint64_t region_bits = align_up((regions + 7) / 8, kWordSize);
  return align_up(2 * plane + region_bits, kRegionSize);
}

}  // namespace

HeapMetadata plan_layout(std::uint64_t heap_size, std::uint64_t address_hint) {
  HeapMetadata m;
  m.version = kImageVersion;
  m.address_hint = address_hint;
  m.heap_size = heap_size;
  m.name_table_location = kNameTableOffset;
  m.name_table_slots = kNameTableSlots;
  m.klass_segment_location = kKlassOffset;
  m.klass_segment_size = kKlassSegmentSize;
  m.scratch_location = kScratchOffset;
  m.scratch_size = kScratchSize;
  m.undo_log_location = kUndoOffset;
  m.undo_log_size = undo_log_size_for(heap_size);

  const std::uint64_t bitmaps = m.undo_log_location + m.undo_log_size;
  if (heap_size <= bitmaps) {
    throw Error(Errc::SizeTooSmall, "heap size " + std::to_string(heap_size) +
                                        " below minimum " + std::to_string(minimum_heap_size()));
  }
  std::uint64_t data = (heap_size - bitmaps) / kRegionSize * kRegionSize;
  while (data > 0 && bitmaps + bitmap_area_for(data) + data > heap_size) data -= kRegionSize;
  if (data == 0) {
    throw Error(Errc::SizeTooSmall, "heap size " + std::to_string(heap_size) +
                                        " below minimum " + std::to_string(minimum_heap_size()));
  }
  m.mark_plane_size = data / 64;
  m.mark_bitmap_location = bitmaps;
  m.region_bitmap_location = bitmaps + 2 * m.mark_plane_size;
  m.data_heap_location = bitmaps + bitmap_area_for(data);
  m.region_count = data / kRegionSize;
  m.top = m.data_heap_location;
  m.last_allocation = m.top;
  return m;
}

std::uint64_t minimum_heap_size() {
  const std::uint64_t fixed = kUndoOffset + kMinUndoLogSize;
  return fixed + bitmap_area_for(kRegionSize) + kRegionSize;
}

HeapMetadata HeapMetadata::read(const PersistentDevice& device) {
  if (device.capacity() < meta::kBlockSize) {
    throw Error(Errc::CorruptImage, "device too small for a heap image");
  }
  auto magic = device.read(meta::kMagic, 8);
  if (std::memcmp(magic.data(), kImageMagic, 8) != 0) {
    throw Error(Errc::CorruptImage, "bad heap image magic");
  }
  HeapMetadata m;
  m.version = static_cast<std::uint32_t>(device.read_u64(meta::kVersion));
  m.address_hint = device.read_u64(meta::kAddressHint);
  m.heap_size = device.read_u64(meta::kHeapSize);
  m.top = device.read_u64(meta::kTop);
  m.gc_in_progress = device.read_u64(meta::kGcInProgress) != 0;
  m.global_timestamp = device.read_u64(meta::kGlobalTimestamp);
  m.mark_bitmap_location = device.read_u64(meta::kMarkBitmap);
  m.region_bitmap_location = device.read_u64(meta::kRegionBitmap);
  m.name_table_location = device.read_u64(meta::kNameTable);
  m.klass_segment_location = device.read_u64(meta::kKlassSegment);
  m.data_heap_location = device.read_u64(meta::kDataHeap);
  m.klass_segment_size = device.read_u64(meta::kKlassSegmentSize);
  m.name_table_slots = device.read_u64(meta::kNameTableSlots);
  m.undo_log_location = device.read_u64(meta::kUndoLog);
  m.undo_log_size = device.read_u64(meta::kUndoLogSize);
  m.scratch_location = device.read_u64(meta::kScratch);
  m.scratch_size = device.read_u64(meta::kScratchSize);
  m.mark_plane_size = device.read_u64(meta::kMarkPlaneSize);
  m.last_allocation = device.read_u64(meta::kLastAllocation);
  m.remap_target = device.read_u64(meta::kRemapTarget);
  m.region_count = device.read_u64(meta::kRegionCount);
  m.check();
  if (m.heap_size != device.capacity()) {
    throw Error(Errc::CorruptImage, "heap size does not match device capacity");
  }
  return m;
}

void HeapMetadata::check() const {
  auto fail = [](const std::string& what) { throw Error(Errc::CorruptImage, what); };
  if (version != kImageVersion) fail("unsupported image version " + std::to_string(version));
  auto inside = [&](std::uint64_t loc, std::uint64_t len, const char* what) {
    if (loc % kWordSize != 0 || loc > heap_size || len > heap_size - loc) {
      fail(std::string(what) + " lies outside the heap");
    }
  };
  inside(name_table_location, name_table_slots * kNameEntrySize, "name table");
  inside(klass_segment_location, klass_segment_size, "klass segment");
  inside(scratch_location, scratch_size, "gc scratch");
  inside(undo_log_location, undo_log_size, "undo log");
  inside(mark_bitmap_location, 2 * mark_plane_size, "mark bitmap");
  inside(region_bitmap_location, (region_count + 7) / 8, "region bitmap");
  inside(data_heap_location, region_count * kRegionSize, "data heap");
  if (data_heap_location % kRegionSize != 0) fail("data heap is not region aligned");
  if (mark_plane_size * 64 != region_count * kRegionSize) fail("mark bitmap size mismatch");
  if (top < data_heap_location || top > data_heap_end() || top % kWordSize != 0) {
    fail("top " + std::to_string(top) + " outside data heap");
  }
  if (last_allocation < data_heap_location || last_allocation > top ||
      last_allocation % kWordSize != 0) {
    fail("allocation journal outside data heap");
  }
}

}  // namespace pjh
