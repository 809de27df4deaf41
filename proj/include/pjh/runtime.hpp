// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <string_view>

#include "pjh/address_space.hpp"
#include "pjh/heap.hpp"
#include "pjh/storage.hpp"
#include "pjh/volatile_space.hpp"

namespace pjh {

/// Per-process record of every descriptor by logical name: at most one in
/// the volatile space and at most one per loaded heap.
class TypeRegistry {
 public:
  struct Record {
    const TypeDescriptor* volatile_type = nullptr;
    std::map<std::uint64_t, const TypeDescriptor*> persistent;  // keyed by heap id
  };

  void note(const TypeDescriptor& d);
  void forget_heap(std::uint64_t heap_id);
  const Record* find(std::string_view name) const;
  std::size_t size() const noexcept { return records_.size(); }

 private:
  std::map<std::string, Record, std::less<>> records_;
};

/// The process side of persistent heaps: name manager access, address
/// space, volatile companion space, type registry and the live handles.
/// Only one live handle per heap name exists at a time.
class Runtime {
 public:
  explicit Runtime(std::shared_ptr<Storage> storage);
  Runtime(const Runtime&) = delete;
  Runtime& operator=(const Runtime&) = delete;
  /// Closes every live heap cleanly.
  ~Runtime();

  Heap& create_heap(const std::string& name, std::uint64_t size);
  Heap& load_heap(const std::string& name, const LoadOptions& options = {});
  bool exists_heap(const std::string& name) const;
  /// Persists everything and drops the handle.
  void close_heap(const std::string& name);
  /// Drops all handles without persisting and crashes the storage devices.
  void simulate_crash();

  /// Registers a type in the volatile space and records it for alias checks.
  const TypeDescriptor& register_volatile_type(const TypeDescriptor& proto);

  Heap* find_heap(std::string_view name);
  Storage& storage() noexcept { return *storage_; }
  VolatileSpace& volatile_space() noexcept { return volatile_; }
  TypeRegistry& types() noexcept { return registry_; }
  AddressSpace& address_space() noexcept { return addresses_; }

  /// Store that owns `ref`; throws OutOfBounds when nothing does.
  ObjectStore& store_of(ObjRef ref);
  const TypeDescriptor& descriptor_of(ObjRef ref);

  /// Alias-aware type test: the logical name decides, not the space.
  bool is_instance_of(ObjRef ref, std::string_view logical_name);
  /// Returns `ref` when it is an instance of `logical_name`, else throws ClassCast.
  ObjRef checked_cast(ObjRef ref, std::string_view logical_name);

 private:
  Heap& adopt(std::unique_ptr<Heap> heap);
  void release(Heap& heap);

  std::shared_ptr<Storage> storage_;
  AddressSpace addresses_;
  VolatileSpace volatile_;
  TypeRegistry registry_;
  std::map<std::string, std::unique_ptr<Heap>, std::less<>> heaps_;
  std::map<std::string, std::uint64_t, std::less<>> provider_ids_;
  std::uint64_t next_heap_id_ = 1;
};

}  // namespace pjh
