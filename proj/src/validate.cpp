// SPDX-License-Identifier: Apache-2.0
#include "pjh/validate.hpp"

#include <exception>
#include <unordered_set>

#include "pjh/errors.hpp"
#include "pjh/heap.hpp"

namespace pjh {

namespace {

constexpr std::size_t kMaxReported = 32;

}  // namespace

ValidationReport validate(const Heap& heap) {
  ValidationReport report;
  auto fail = [&report](std::string msg) {
    if (report.errors.size() < kMaxReported) report.errors.push_back(std::move(msg));
  };
  const PersistentDevice& dev = heap.device();
  const HeapMetadata& cached = heap.metadata();

  HeapMetadata meta;
  try {
    meta = HeapMetadata::read(dev);
  } catch (const std::exception& e) {
    fail(std::string("metadata: ") + e.what());
    return report;
  }
  if (meta.top != cached.top || meta.address_hint != heap.base() ||
      meta.global_timestamp != cached.global_timestamp) {
    fail("metadata: media and in-memory copies disagree");
  }
  if (meta.gc_in_progress) fail("metadata: collection still marked in progress");
  if (meta.remap_target != 0) fail("metadata: remap still pending");

  // Name table, read afresh from the media.
  NameTable names(const_cast<PersistentDevice&>(dev), meta.name_table_location,
                  meta.name_table_slots);
  try {
    names.load();
  } catch (const std::exception& e) {
    fail(std::string("name table: ") + e.what());
    return report;
  }
  const std::uint64_t seg_end = meta.klass_segment_location + meta.klass_segment_size;
  for (const auto& e : names.entries(EntryKind::Klass)) {
    const TypeDescriptor* d = heap.klass_at(e.address);
    if (e.address < meta.klass_segment_location || e.address >= seg_end || !d ||
        d->name() != e.name) {
      fail("klass entry " + e.name + " does not name a loaded descriptor");
      continue;
    }
    if (!is_reserved_type_name(e.name)) ++report.klasses;
  }
  if (heap.klass_top() > seg_end) fail("klass segment overflows");

  // Header walk.
  std::unordered_set<std::uint64_t> starts;
  std::vector<std::uint64_t> slots;
  try {
    heap.for_each_object([&](std::uint64_t off, const TypeDescriptor& d, std::uint64_t size) {
      starts.insert(off);
      report.object_bytes += size;
      if (heap.is_filler(d)) {
        ++report.fillers;
      } else {
        ++report.objects;
      }
      const std::uint64_t ts = dev.read_u64(off + 8);
      if (ts > meta.global_timestamp) {
        fail("object at " + std::to_string(off) + " carries a future timestamp");
      }
      if ((dev.read_u64(off) & kKlassFlagMask) != 0) {
        fail("object at " + std::to_string(off) + " has reserved klass flag bits set");
      }
      heap.for_each_slot(off, d, size, [&](std::uint64_t slot) { slots.push_back(slot); });
    });
  } catch (const std::exception& e) {
    fail(std::string("header walk: ") + e.what());
    return report;
  }
  if (report.object_bytes != meta.top - meta.data_heap_location) {
    fail("header walk covers " + std::to_string(report.object_bytes) + " bytes, expected " +
         std::to_string(meta.top - meta.data_heap_location));
  }

  auto check_target = [&](std::uint64_t word, const std::string& where) {
    if (word == 0) return;
    if (!heap.contains(word)) {
      ++report.foreign_references;
      return;
    }
    ++report.references;
    if (!starts.count(heap.offset_of(word))) {
      fail(where + " points at heap offset " + std::to_string(heap.offset_of(word)) +
           ", which is not an object start");
    }
  };
  for (std::uint64_t slot : slots) {
    check_target(dev.read_u64(slot), "slot at " + std::to_string(slot));
  }
  for (const auto& e : names.entries(EntryKind::Root)) {
    ++report.roots;
    if (e.address != 0 && !heap.contains(e.address)) {
      fail("root " + e.name + " points outside the heap");
      continue;
    }
    check_target(e.address, "root " + e.name);
  }

  if (!dev.all_zero(meta.top, meta.data_heap_end() - meta.top)) {
    fail("bytes above top are not zero");
  }
  if (!dev.all_zero(meta.region_bitmap_location, (meta.region_count + 7) / 8)) {
    fail("region bitmap not clear outside a collection");
  }

  UndoLog undo(const_cast<PersistentDevice&>(dev), meta.undo_log_location, meta.undo_log_size);
  report.undo_records = undo.record_count();
  if (report.undo_records > undo.capacity()) {
    fail("undo log record count exceeds its capacity");
  } else if (!undo.empty()) {
    fail("undo log holds " + std::to_string(report.undo_records) + " records" +
         (undo.committed() ? " of a committed transaction" : ""));
  }
  return report;
}

}  // namespace pjh
