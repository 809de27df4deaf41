// SPDX-License-Identifier: Apache-2.0
#include "pjh/heap.hpp"

#include <algorithm>
#include <cstring>

#include "pjh/errors.hpp"
#include "pjh/gc.hpp"

namespace pjh {

namespace {

std::uint32_t le32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

void write_metadata(PersistentDevice& dev, const HeapMetadata& m) {
  dev.write(meta::kMagic, std::span<const std::uint8_t>(
                              reinterpret_cast<const std::uint8_t*>(kImageMagic), 8));
  dev.write_u64(meta::kVersion, m.version);
  dev.write_u64(meta::kAddressHint, m.address_hint);
  dev.write_u64(meta::kHeapSize, m.heap_size);
  dev.write_u64(meta::kTop, m.top);
  dev.write_u64(meta::kGcInProgress, m.gc_in_progress ? 1 : 0);
  dev.write_u64(meta::kGlobalTimestamp, m.global_timestamp);
  dev.write_u64(meta::kMarkBitmap, m.mark_bitmap_location);
  dev.write_u64(meta::kRegionBitmap, m.region_bitmap_location);
  dev.write_u64(meta::kNameTable, m.name_table_location);
  dev.write_u64(meta::kKlassSegment, m.klass_segment_location);
  dev.write_u64(meta::kDataHeap, m.data_heap_location);
  dev.write_u64(meta::kKlassSegmentSize, m.klass_segment_size);
  dev.write_u64(meta::kNameTableSlots, m.name_table_slots);
  dev.write_u64(meta::kUndoLog, m.undo_log_location);
  dev.write_u64(meta::kUndoLogSize, m.undo_log_size);
  dev.write_u64(meta::kScratch, m.scratch_location);
  dev.write_u64(meta::kScratchSize, m.scratch_size);
  dev.write_u64(meta::kMarkPlaneSize, m.mark_plane_size);
  dev.write_u64(meta::kLastAllocation, m.last_allocation);
  dev.write_u64(meta::kRemapTarget, m.remap_target);
  dev.write_u64(meta::kRegionCount, m.region_count);
}

}  // namespace

Heap::Heap(std::string name, std::shared_ptr<PersistentDevice> device, const HeapMetadata& meta,
           std::uint64_t heap_id)
    : name_(std::move(name)),
      device_(std::move(device)),
      meta_(meta),
      id_(heap_id),
      base_(meta.address_hint),
      names_(*device_, meta.name_table_location, meta.name_table_slots),
      undo_(*device_, meta.undo_log_location, meta.undo_log_size),
      klass_top_(meta.klass_segment_location) {}

Heap::~Heap() = default;

std::unique_ptr<Heap> Heap::format(std::string name, std::shared_ptr<PersistentDevice> device,
                                   std::uint64_t address_hint, std::uint64_t heap_id) {
  const HeapMetadata meta = plan_layout(device->capacity(), address_hint);
  write_metadata(*device, meta);
  device->flush(0, meta::kBlockSize);
  device->fence();
  std::unique_ptr<Heap> heap(new Heap(std::move(name), std::move(device), meta, heap_id));
  heap->register_internal(TypeDescriptor::instance(std::string(kWordFillerName)));
  heap->register_internal(
      TypeDescriptor::array_of(std::string(kFillerName), FieldKind::Scalar, 1));
  return heap;
}

std::unique_ptr<Heap> Heap::open(std::string name, std::shared_ptr<PersistentDevice> device,
                                 std::uint64_t heap_id) {
  const HeapMetadata meta = HeapMetadata::read(*device);
  std::unique_ptr<Heap> heap(new Heap(std::move(name), std::move(device), meta, heap_id));
  heap->names_.load();
  heap->load_report_.descriptors = heap->reinitialize_types();
  return heap;
}

LoadReport Heap::finish_load(const LoadOptions& options, std::uint64_t mapped_base) {
  std::lock_guard lock(mutex_);
  safety_ = options.safety;
  if (meta_.gc_in_progress) {
    Collector(*this, GcOptions{}).recover();
    load_report_.gc_recovered = true;
  } else {
    // A crash after the in-progress flag was cleared can leave region bits
    // behind; they mean nothing outside a collection.
    const std::uint64_t region_bytes = (meta_.region_count + 7) / 8;
    if (!device_->all_zero(meta_.region_bitmap_location, region_bytes)) {
      device_->fill(meta_.region_bitmap_location, region_bytes, 0);
      device_->flush(meta_.region_bitmap_location, region_bytes);
      device_->fence();
    }
  }
  repair_allocation_gap();
  load_report_.undo = undo_.recover();
  if (meta_.remap_target != 0) {
    // An earlier remap was cut short: finish it toward its recorded target.
    rebase_references(meta_.address_hint, meta_.remap_target);
    set_hint(meta_.remap_target);
    put_meta(meta::kRemapTarget, 0);
    meta_.remap_target = 0;
    load_report_.remapped = true;
  }
  if (mapped_base != meta_.address_hint) {
    remap(mapped_base);
    load_report_.remapped = true;
  }
  if (safety_ == SafetyLevel::Zeroing) load_report_.nullified = zeroing_scan();
  return load_report_;
}

bool Heap::contains(std::uint64_t address) const noexcept {
  return address >= base_ && address - base_ < meta_.heap_size;
}

void Heap::read_raw(std::uint64_t address, std::span<std::uint8_t> out) const {
  if (!contains(address)) throw Error(Errc::OutOfBounds, "address outside heap " + name_);
  device_->read_into(address - base_, out);
}

void Heap::write_raw(std::uint64_t address, std::span<const std::uint8_t> in) {
  if (!contains(address)) throw Error(Errc::OutOfBounds, "address outside heap " + name_);
  device_->write(address - base_, in);
}

const TypeDescriptor& Heap::descriptor_of(std::uint64_t address) const {
  const std::uint64_t offset = address - base_;
  if (!contains(address) || offset < meta_.data_heap_location || offset >= meta_.top) {
    throw Error(Errc::OutOfBounds, "address is not an allocated object of heap " + name_);
  }
  const std::uint64_t word = device_->read_u64(offset) & ~kKlassFlagMask;
  auto it = klass_by_offset_.find(word);
  if (it == klass_by_offset_.end()) {
    throw Error(Errc::CorruptReference, "no descriptor behind klass word at offset " +
                                            std::to_string(offset));
  }
  return *it->second;
}

void Heap::put_meta(std::uint64_t word, std::uint64_t value, bool fence) {
  device_->write_u64(word, value);
  device_->flush(word, 8);
  if (fence) device_->fence();
}

void Heap::set_hint(std::uint64_t hint) {
  put_meta(meta::kAddressHint, hint);
  meta_.address_hint = hint;
  base_ = hint;
}

// ---------------------------------------------------------------- types

std::size_t Heap::reinitialize_types() {
  std::lock_guard lock(mutex_);
  klass_by_offset_.clear();
  klass_by_name_.clear();
  klass_top_ = meta_.klass_segment_location;
  filler_offset_ = word_filler_offset_ = 0;
  const std::uint64_t seg_begin = meta_.klass_segment_location;
  const std::uint64_t seg_end = seg_begin + meta_.klass_segment_size;
  std::size_t user = 0;
  for (const auto& entry : names_.entries(EntryKind::Klass)) {
    const std::uint64_t off = entry.address;
    if (off < seg_begin || off + 8 > seg_end || off % kWordSize != 0) {
      throw Error(Errc::CorruptDescriptor, entry.name + " lies outside the Klass segment");
    }
    auto head = device_->read(off, 8);
    if (le32(head.data()) != kDescriptorMagic) {
      throw Error(Errc::CorruptDescriptor, entry.name + ": bad descriptor magic");
    }
    const std::uint64_t len = le32(head.data() + 4);
    if (len < 24 || off + len > seg_end) {
      throw Error(Errc::CorruptDescriptor, entry.name + ": bad descriptor length");
    }
    auto bytes = device_->read(off, len);
    auto d = std::make_unique<TypeDescriptor>(TypeDescriptor::decode(bytes));
    if (d->name() != entry.name) {
      throw Error(Errc::CorruptDescriptor, "entry " + entry.name + " names descriptor " + d->name());
    }
    d->bind(Space::Persistent, id_, off);
    klass_top_ = std::max(klass_top_, off + len);
    if (d->name() == kFillerName) filler_offset_ = off;
    if (d->name() == kWordFillerName) word_filler_offset_ = off;
    if (!is_reserved_type_name(d->name())) ++user;
    klass_by_name_[d->name()] = off;
    const TypeDescriptor& bound = *d;
    klass_by_offset_[off] = std::move(d);
    if (type_listener_) type_listener_(bound);
  }
  if (filler_offset_ == 0 || word_filler_offset_ == 0) {
    throw Error(Errc::CorruptImage, "heap " + name_ + " lacks its filler descriptors");
  }
  return user;
}

const TypeDescriptor& Heap::register_type(const TypeDescriptor& proto) {
  if (is_reserved_type_name(proto.name())) {
    throw Error(Errc::InvalidArgument, "type names starting with '$' are reserved");
  }
  return register_internal(proto);
}

const TypeDescriptor& Heap::register_internal(const TypeDescriptor& proto) {
  std::lock_guard lock(mutex_);
  if (auto it = klass_by_name_.find(proto.name()); it != klass_by_name_.end()) {
    const TypeDescriptor& existing = *klass_by_offset_.at(it->second);
    if (!existing.same_layout(proto)) {
      throw Error(Errc::LayoutMismatch, proto.name() + " is stored with a different layout");
    }
    return existing;
  }
  proto.check_well_formed();
  const auto bytes = proto.encode();
  const std::uint64_t seg_end = meta_.klass_segment_location + meta_.klass_segment_size;
  if (klass_top_ + bytes.size() > seg_end) {
    throw Error(Errc::SegmentFull, "no room for descriptor " + proto.name());
  }
  const std::uint64_t off = klass_top_;
  device_->write(off, bytes);
  device_->flush(off, bytes.size());
  device_->fence();
  names_.insert(EntryKind::Klass, proto.name(), off);

  auto d = std::make_unique<TypeDescriptor>(proto);
  d->bind(Space::Persistent, id_, off);
  klass_top_ = off + bytes.size();
  if (d->name() == kFillerName) filler_offset_ = off;
  if (d->name() == kWordFillerName) word_filler_offset_ = off;
  klass_by_name_[d->name()] = off;
  const TypeDescriptor& bound = *d;
  klass_by_offset_[off] = std::move(d);
  if (type_listener_) type_listener_(bound);
  return bound;
}

const TypeDescriptor* Heap::find_klass(std::string_view name) const {
  auto it = klass_by_name_.find(name);
  return it == klass_by_name_.end() ? nullptr : klass_by_offset_.at(it->second).get();
}

const TypeDescriptor& Heap::klass(std::string_view name) const {
  if (const auto* d = find_klass(name)) return *d;
  throw Error(Errc::UnknownKlass, std::string(name) + " is not registered in heap " + name_);
}

const TypeDescriptor* Heap::klass_at(std::uint64_t offset) const {
  auto it = klass_by_offset_.find(offset);
  return it == klass_by_offset_.end() ? nullptr : it->second.get();
}

std::vector<const TypeDescriptor*> Heap::klasses() const {
  std::vector<const TypeDescriptor*> out;
  for (const auto& [name, off] : klass_by_name_) {
    if (!is_reserved_type_name(name)) out.push_back(klass_by_offset_.at(off).get());
  }
  return out;
}

bool Heap::is_filler(const TypeDescriptor& klass) const noexcept {
  return klass.space() == Space::Persistent && klass.owner() == id_ &&
         (klass.address() == filler_offset_ || klass.address() == word_filler_offset_);
}

// ----------------------------------------------------------- allocation

ObjRef Heap::allocate(std::string_view klass_name, std::optional<std::uint64_t> array_length) {
  return allocate(klass(klass_name), array_length);
}

ObjRef Heap::allocate(const TypeDescriptor& klass, std::optional<std::uint64_t> array_length) {
  std::lock_guard lock(mutex_);
  if (meta_.gc_in_progress || collecting_) {
    throw Error(Errc::GcInProgress, "allocation during collection");
  }
  if (klass.space() != Space::Persistent || klass.owner() != id_ ||
      !klass_by_offset_.count(klass.address())) {
    throw Error(Errc::UnknownKlass, klass.name() + " is not a descriptor of heap " + name_);
  }
  if (klass.is_array() != array_length.has_value()) {
    throw Error(Errc::InvalidArgument, klass.is_array() ? "array type needs a length"
                                                        : "length given for a non-array type");
  }
  const std::uint64_t length = array_length.value_or(0);
  if (klass.is_array() &&
      length > (kMaxObjectSize - kArrayHeaderSize) / klass.array()->element_width) {
    throw Error(Errc::ObjectTooLarge, "array of " + std::to_string(length) + " elements");
  }
  const std::uint64_t size = klass.object_size(length);
  if (size > kMaxObjectSize) {
    throw Error(Errc::ObjectTooLarge, std::to_string(size) + " byte object");
  }
  if (meta_.top + size > data_end() && auto_gc_ && undo_.empty()) collect();
  if (meta_.top + size > data_end()) {
    throw Error(Errc::OutOfMemory, "heap " + name_ + " cannot fit " + std::to_string(size) +
                                       " more bytes");
  }
  const std::uint64_t at = meta_.top;
  // Journal the allocation start so that load can stamp a filler over an
  // object whose header never became durable.
  if (meta_.last_allocation != at) {
    put_meta(meta::kLastAllocation, at);
    meta_.last_allocation = at;
  }
  put_meta(meta::kTop, at + size);
  meta_.top = at + size;
  if (array_length) {
    device_->write_u64(at + kArrayLengthOffset, length);
    device_->flush(at + kArrayLengthOffset, 8);
    device_->fence();
  }
  device_->write_u64(at, klass.address());
  device_->write_u64(at + 8, meta_.global_timestamp);
  device_->flush(at, kHeaderSize);
  device_->fence();
  return ref_at(at);
}

void Heap::stamp_filler(std::uint64_t offset, std::uint64_t size, bool persist) {
  device_->write_u64(offset + 8, meta_.global_timestamp);
  std::uint64_t klass_word = word_filler_offset_;
  if (size > kHeaderSize) {
    device_->write_u64(offset + kArrayLengthOffset, size - kArrayHeaderSize);
    klass_word = filler_offset_;
  }
  if (persist) {
    device_->flush(offset + 8, size > kHeaderSize ? 16 : 8);
    device_->fence();
  }
  device_->write_u64(offset, klass_word);
  if (persist) {
    device_->flush(offset, 8);
    device_->fence();
  }
}

void Heap::repair_allocation_gap() {
  const std::uint64_t last = meta_.last_allocation;
  if (last < meta_.top && device_->read_u64(last) == 0) {
    stamp_filler(last, meta_.top - last, true);
    load_report_.gap_repaired = true;
  }
}

// ---------------------------------------------------------------- roots

void Heap::set_root(const std::string& name, ObjRef ref) {
  std::lock_guard lock(mutex_);
  if (meta_.gc_in_progress || collecting_) {
    throw Error(Errc::GcInProgress, "roots cannot change during collection");
  }
  if (!ref.is_null()) {
    if (ref.space == Space::Volatile) {
      throw Error(Errc::VolatileRef, "root " + name + " cannot name volatile memory");
    }
    const std::uint64_t off = ref.address - base_;
    if (!contains(ref.address) || off < data_start() || off >= meta_.top) {
      throw Error(Errc::InvalidArgument, "root " + name + " does not name an object of " + name_);
    }
  }
  if (const auto* e = names_.find(EntryKind::Root, name)) {
    names_.set_address(e->slot, ref.address);
  } else {
    names_.insert(EntryKind::Root, name, ref.address);
  }
}

ObjRef Heap::get_root(std::string_view name) const {
  const auto* e = names_.find(EntryKind::Root, name);
  if (!e) throw Error(Errc::NoSuchRoot, std::string(name));
  return load_ref(e->address);
}

bool Heap::has_root(std::string_view name) const {
  return names_.find(EntryKind::Root, name) != nullptr;
}

std::vector<std::pair<std::string, ObjRef>> Heap::roots() const {
  std::vector<std::pair<std::string, ObjRef>> out;
  for (const auto& e : names_.entries(EntryKind::Root)) out.emplace_back(e.name, load_ref(e.address));
  std::sort(out.begin(), out.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  return out;
}

// ------------------------------------------------------------- flushing

void Heap::flush_scalar(ObjRef ref, std::string_view field) {
  const auto& d = descriptor_of(ref);
  auto idx = d.field_index(field);
  if (!idx) throw Error(Errc::UnknownField, d.name() + "." + std::string(field));
  flush_scalar(ref, *idx);
}

void Heap::flush_scalar(ObjRef ref, std::size_t field_index) {
  const auto& d = descriptor_of(ref);
  if (field_index >= d.fields().size()) {
    throw Error(Errc::UnknownField, d.name() + " has no field #" + std::to_string(field_index));
  }
  const FieldInfo& f = d.fields()[field_index];
  if (f.width > 8) {
    throw Error(Errc::TooWide, d.name() + "." + f.name + " is " + std::to_string(f.width) +
                                   " bytes; flush it with flush_object");
  }
  device_->flush(offset_of(ref.address) + f.offset, f.width);
  device_->fence();
}

void Heap::flush_array_element(ObjRef array, std::uint64_t index) {
  const auto& d = descriptor_of(array);
  if (!d.is_array()) throw Error(Errc::InvalidArgument, d.name() + " is not an array type");
  const std::uint64_t off = offset_of(array.address);
  const std::uint64_t length = device_->read_u64(off + kArrayLengthOffset);
  if (index >= length) {
    throw Error(Errc::OutOfBounds, "index " + std::to_string(index) + " >= length " +
                                       std::to_string(length));
  }
  if (d.array()->element_width > 8) {
    throw Error(Errc::TooWide, d.name() + " elements are wider than 8 bytes");
  }
  device_->flush(off + d.element_offset(index), d.array()->element_width);
  device_->fence();
}

void Heap::flush_object(ObjRef ref) {
  check_ref(ref);
  const std::uint64_t off = offset_of(ref.address);
  if (off < data_start() || off >= meta_.top) {
    throw Error(Errc::OutOfBounds, "not an allocated object");
  }
  device_->flush(off, object_size_at(off));
  device_->fence();
}

// -------------------------------------------------------------- walking

std::uint64_t Heap::object_size_at(std::uint64_t offset, const TypeDescriptor** klass) const {
  const std::uint64_t word = device_->read_u64(offset) & ~kKlassFlagMask;
  auto it = klass_by_offset_.find(word);
  if (it == klass_by_offset_.end()) {
    throw Error(Errc::CorruptImage, "bad klass word " + std::to_string(word) + " at offset " +
                                        std::to_string(offset));
  }
  const TypeDescriptor& d = *it->second;
  std::uint64_t length = 0;
  if (d.is_array()) {
    length = device_->read_u64(offset + kArrayLengthOffset);
    if (length > kMaxObjectSize) {
      throw Error(Errc::CorruptImage, "array length out of range at offset " +
                                          std::to_string(offset));
    }
  }
  const std::uint64_t size = d.object_size(length);
  if (size > data_end() - offset) {
    throw Error(Errc::CorruptImage, "object at offset " + std::to_string(offset) +
                                        " runs past the data heap");
  }
  if (klass) *klass = &d;
  return size;
}

void Heap::for_each_object(
    const std::function<void(std::uint64_t, const TypeDescriptor&, std::uint64_t)>& visit) const {
  std::uint64_t at = data_start();
  const std::uint64_t end = meta_.top;
  while (at < end) {
    const TypeDescriptor* d = nullptr;
    const std::uint64_t size = object_size_at(at, &d);
    if (size > end - at) {
      throw Error(Errc::CorruptImage, "object at offset " + std::to_string(at) + " crosses top");
    }
    visit(at, *d, size);
    at += size;
  }
}

void Heap::for_each_slot(std::uint64_t offset, const TypeDescriptor& klass, std::uint64_t size,
                         const std::function<void(std::uint64_t)>& visit) const {
  if (klass.is_array()) {
    if (klass.array()->element_kind != FieldKind::Reference) return;
    const std::uint64_t length = (size - kArrayHeaderSize) / 8;
    for (std::uint64_t i = 0; i < length; ++i) visit(offset + kArrayHeaderSize + 8 * i);
    return;
  }
  for (const auto& f : klass.fields()) {
    if (f.kind == FieldKind::Reference) visit(offset + f.offset);
  }
}

// ------------------------------------------------- safety and relocation

std::uint64_t Heap::zeroing_scan() {
  std::lock_guard lock(mutex_);
  std::uint64_t count = 0;
  for_each_object([&](std::uint64_t off, const TypeDescriptor& d, std::uint64_t size) {
    for_each_slot(off, d, size, [&](std::uint64_t slot) {
      const std::uint64_t w = device_->read_u64(slot);
      if (w != 0 && !contains(w)) {
        device_->write_u64(slot, 0);
        device_->flush(slot, 8);
        ++count;
      }
    });
  });
  if (count > 0) device_->fence();
  return count;
}

void Heap::rebase_references(std::uint64_t from, std::uint64_t to) {
  const std::uint64_t span = meta_.heap_size;
  auto moved = [&](std::uint64_t w) { return w >= from && w - from < span; };
  for_each_object([&](std::uint64_t off, const TypeDescriptor& d, std::uint64_t size) {
    for_each_slot(off, d, size, [&](std::uint64_t slot) {
      const std::uint64_t w = device_->read_u64(slot);
      if (moved(w)) {
        device_->write_u64(slot, w - from + to);
        device_->flush(slot, 8);
      }
    });
  });
  for (const auto& e : names_.entries(EntryKind::Root)) {
    if (moved(e.address)) names_.set_address(e.slot, e.address - from + to, false);
  }
  device_->fence();
}

void Heap::remap(std::uint64_t new_base) {
  std::lock_guard lock(mutex_);
  if (meta_.gc_in_progress) throw Error(Errc::GcInProgress, "remap during collection");
  if (new_base == meta_.address_hint) return;
  const std::uint64_t old = meta_.address_hint;
  if (new_base < old + meta_.heap_size && old < new_base + meta_.heap_size) {
    throw Error(Errc::InvalidArgument, "remap target overlaps the current mapping");
  }
  put_meta(meta::kRemapTarget, new_base);
  meta_.remap_target = new_base;
  rebase_references(old, new_base);
  set_hint(new_base);
  put_meta(meta::kRemapTarget, 0);
  meta_.remap_target = 0;
}

// ----------------------------------------------------------- collection

std::uint64_t Heap::add_root_provider(RootProvider provider) {
  std::lock_guard lock(mutex_);
  const std::uint64_t id = next_provider_++;
  providers_.emplace(id, std::move(provider));
  return id;
}

void Heap::remove_root_provider(std::uint64_t id) {
  std::lock_guard lock(mutex_);
  providers_.erase(id);
}

GcStats Heap::collect(const GcOptions& options, std::span<ObjRef> extra_roots) {
  std::lock_guard lock(mutex_);
  if (meta_.gc_in_progress || collecting_) {
    throw Error(Errc::GcInProgress, "collection already running");
  }
  if (!undo_.empty()) {
    throw Error(Errc::GcInProgress, "a transaction holds undo records; finish it first");
  }
  collecting_ = true;
  try {
    GcStats stats = Collector(*this, options).collect(extra_roots);
    collecting_ = false;
    return stats;
  } catch (...) {
    collecting_ = false;
    throw;
  }
}

}  // namespace pjh
