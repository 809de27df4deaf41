// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "pjh/device.hpp"
#include "pjh/layout.hpp"
#include "pjh/name_table.hpp"
#include "pjh/object_store.hpp"
#include "pjh/types.hpp"
#include "pjh/undo_log.hpp"

namespace pjh {

enum class SafetyLevel { UserGuaranteed, Zeroing };

struct LoadOptions {
  SafetyLevel safety = SafetyLevel::UserGuaranteed;
  /// Test hook: behave as if the address hint were already taken.
  bool deny_hint = false;
};

struct LoadReport {
  std::size_t descriptors = 0;
  bool gc_recovered = false;
  bool gap_repaired = false;
  UndoLog::Recovery undo = UndoLog::Recovery::Clean;
  bool remapped = false;
  std::uint64_t nullified = 0;
};

struct GcOptions {
  /// false runs the same algorithm without flushes or fences and persists
  /// once at the end; it is the baseline for measuring flush overhead.
  bool persist = true;
};

struct GcStats {
  std::uint64_t live_bytes = 0;
  std::uint64_t reclaimed_bytes = 0;
  std::uint64_t regions = 0;
  std::uint64_t pause_ns = 0;
  std::uint64_t fences_issued = 0;
  std::uint64_t live_objects = 0;
};

using RootVisitor = std::function<void(ObjRef&)>;
/// Supplies volatile root slots to the collector; the collector rewrites
/// them through the visitor when objects move.
using RootProvider = std::function<void(const RootVisitor&)>;

class Collector;

/// One persistent heap mapped into the process.
///
/// References stored in the heap are absolute addresses based at the
/// address hint. Object headers are 16 bytes: the klass word (heap offset
/// of the descriptor, low 3 bits reserved) and the timestamp word; arrays
/// add a length word.
class Heap : public ObjectStore {
 public:
  /// Lays out a fresh heap on a zeroed device and persists the format.
  static std::unique_ptr<Heap> format(std::string name, std::shared_ptr<PersistentDevice> device,
                                      std::uint64_t address_hint, std::uint64_t heap_id);
  /// Reads metadata and descriptors. finish_load() must run before use.
  static std::unique_ptr<Heap> open(std::string name, std::shared_ptr<PersistentDevice> device,
                                    std::uint64_t heap_id);
  ~Heap() override;

  /// Recovery and relocation steps of loading, in order: collection
  /// recovery, allocation gap repair, undo-log recovery, remap, zeroing.
  LoadReport finish_load(const LoadOptions& options, std::uint64_t mapped_base);

  const std::string& name() const noexcept { return name_; }
  PersistentDevice& device() noexcept { return *device_; }
  const PersistentDevice& device() const noexcept { return *device_; }
  const std::shared_ptr<PersistentDevice>& device_ptr() const noexcept { return device_; }
  std::uint64_t id() const noexcept { return id_; }

  const HeapMetadata& metadata() const noexcept { return meta_; }
  std::uint64_t base() const noexcept { return base_; }
  std::uint64_t size() const noexcept { return meta_.heap_size; }
  std::uint64_t data_start() const noexcept { return meta_.data_heap_location; }
  std::uint64_t data_end() const noexcept { return meta_.data_heap_end(); }
  std::uint64_t top() const noexcept { return meta_.top; }
  std::uint64_t global_timestamp() const noexcept { return meta_.global_timestamp; }
  SafetyLevel safety() const noexcept { return safety_; }
  const LoadReport& load_report() const noexcept { return load_report_; }

  std::uint64_t address_of(std::uint64_t offset) const noexcept { return base_ + offset; }
  std::uint64_t offset_of(std::uint64_t address) const noexcept { return address - base_; }
  ObjRef ref_at(std::uint64_t offset) const noexcept { return {Space::Persistent, base_ + offset}; }

  // ObjectStore
  Space space() const noexcept override { return Space::Persistent; }
  bool contains(std::uint64_t address) const noexcept override;
  void read_raw(std::uint64_t address, std::span<std::uint8_t> out) const override;
  void write_raw(std::uint64_t address, std::span<const std::uint8_t> in) override;
  using ObjectStore::descriptor_of;
  const TypeDescriptor& descriptor_of(std::uint64_t address) const override;

  // Types
  /// Stores the descriptor and its name entry (entry last) unless a
  /// descriptor of that name exists; returns the bound descriptor.
  const TypeDescriptor& register_type(const TypeDescriptor& proto);
  const TypeDescriptor* find_klass(std::string_view name) const;
  const TypeDescriptor& klass(std::string_view name) const;
  const TypeDescriptor* klass_at(std::uint64_t offset) const;
  /// User descriptors, excluding the reserved filler types.
  std::vector<const TypeDescriptor*> klasses() const;
  /// Rebuilds the process-local descriptor table from the Klass segment.
  std::size_t reinitialize_types();
  std::uint64_t klass_top() const noexcept { return klass_top_; }
  void set_type_listener(std::function<void(const TypeDescriptor&)> listener) {
    type_listener_ = std::move(listener);
  }

  // Allocation
  ObjRef allocate(const TypeDescriptor& klass, std::optional<std::uint64_t> array_length = {});
  ObjRef allocate(std::string_view klass_name, std::optional<std::uint64_t> array_length = {});
  /// Whether an allocation that runs out of space may collect and retry.
  void set_auto_gc(bool enabled) noexcept { auto_gc_ = enabled; }
  bool auto_gc() const noexcept { return auto_gc_; }

  // Roots
  void set_root(const std::string& name, ObjRef ref);
  ObjRef get_root(std::string_view name) const;
  bool has_root(std::string_view name) const;
  /// Root bindings sorted by name.
  std::vector<std::pair<std::string, ObjRef>> roots() const;

  // Flushing
  void flush_scalar(ObjRef ref, std::size_t field_index);
  void flush_scalar(ObjRef ref, std::string_view field);
  void flush_array_element(ObjRef array, std::uint64_t index);
  void flush_object(ObjRef ref);

  // Walking
  /// Visits every object in [data_start, top) in address order with its
  /// heap offset, descriptor and size. Throws CorruptImage on a bad header.
  void for_each_object(
      const std::function<void(std::uint64_t offset, const TypeDescriptor&, std::uint64_t size)>&
          visit) const;
  /// Size of the object at `offset`; throws CorruptImage on a bad header.
  std::uint64_t object_size_at(std::uint64_t offset, const TypeDescriptor** klass = nullptr) const;
  /// Calls `visit` with the heap offset of every reference slot of the object.
  void for_each_slot(std::uint64_t offset, const TypeDescriptor& klass, std::uint64_t size,
                     const std::function<void(std::uint64_t slot)>& visit) const;
  bool is_filler(const TypeDescriptor& klass) const noexcept;

  // Safety and relocation
  /// Nullifies every reference that leaves the heap; returns how many.
  std::uint64_t zeroing_scan();
  /// Moves the heap to `new_base`, rewriting every stored heap reference.
  void remap(std::uint64_t new_base);

  // Collection (implemented by the collector)
  GcStats collect(const GcOptions& options = {}, std::span<ObjRef> extra_roots = {});
  std::uint64_t add_root_provider(RootProvider provider);
  void remove_root_provider(std::uint64_t id);

  UndoLog& undo_log() noexcept { return undo_; }
  const NameTable& name_table() const noexcept { return names_; }
  std::recursive_mutex& mutator_lock() noexcept { return mutex_; }

 private:
  friend class Collector;

  Heap(std::string name, std::shared_ptr<PersistentDevice> device, const HeapMetadata& meta,
       std::uint64_t heap_id);

  void put_meta(std::uint64_t word, std::uint64_t value, bool fence = true);
  const TypeDescriptor& register_internal(const TypeDescriptor& proto);
  void repair_allocation_gap();
  void stamp_filler(std::uint64_t offset, std::uint64_t size, bool persist);
  void rebase_references(std::uint64_t from, std::uint64_t to);
  void set_hint(std::uint64_t hint);

  std::string name_;
  std::shared_ptr<PersistentDevice> device_;
  HeapMetadata meta_;
  std::uint64_t id_;
  std::uint64_t base_;
  SafetyLevel safety_ = SafetyLevel::UserGuaranteed;
  LoadReport load_report_;

  NameTable names_;
  UndoLog undo_;

  std::unordered_map<std::uint64_t, std::unique_ptr<TypeDescriptor>> klass_by_offset_;
  std::map<std::string, std::uint64_t, std::less<>> klass_by_name_;
  std::uint64_t klass_top_ = 0;
  std::uint64_t filler_offset_ = 0;
  std::uint64_t word_filler_offset_ = 0;
  std::function<void(const TypeDescriptor&)> type_listener_;

  std::map<std::uint64_t, RootProvider> providers_;
  std::uint64_t next_provider_ = 1;
  bool auto_gc_ = true;
  bool collecting_ = false;

  mutable std::recursive_mutex mutex_;
};

}  // namespace pjh
