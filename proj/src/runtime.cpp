// SPDX-License-Identifier: Apache-2.0
#include "pjh/runtime.hpp"

#include "pjh/errors.hpp"

namespace pjh {

void TypeRegistry::note(const TypeDescriptor& d) {
  auto& rec = records_[d.name()];
  if (d.space() == Space::Volatile) {
    rec.volatile_type = &d;
  } else {
    rec.persistent[d.owner()] = &d;
  }
}

void TypeRegistry::forget_heap(std::uint64_t heap_id) {
  for (auto it = records_.begin(); it != records_.end();) {
    it->second.persistent.erase(heap_id);
    if (!it->second.volatile_type && it->second.persistent.empty()) {
      it = records_.erase(it);
    } else {
      ++it;
    }
  }
}

const TypeRegistry::Record* TypeRegistry::find(std::string_view name) const {
  auto it = records_.find(name);
  return it == records_.end() ? nullptr : &it->second;
}

Runtime::Runtime(std::shared_ptr<Storage> storage) : storage_(std::move(storage)) {}

Runtime::~Runtime() {
  for (auto& [name, heap] : heaps_) {
    try {
      heap->device().persist_all();
    } catch (...) {
      // A device that is set to crash keeps whatever it made durable.
    }
  }
}

Heap& Runtime::adopt(std::unique_ptr<Heap> heap) {
  Heap& h = *heap;
  const std::string name = h.name();
  heaps_[name] = std::move(heap);
  // Volatile objects are roots for every heap, and their reference slots
  // must follow objects that the collector moves.
  provider_ids_[name] = h.add_root_provider([this, &h](const RootVisitor& visit) {
    volatile_.for_each_reference([&](std::uint64_t slot, std::uint64_t value) {
      if (value == 0 || !h.contains(value)) return;
      ObjRef r{Space::Persistent, value};
      visit(r);
      if (r.address != value) volatile_.write_word(slot, r.address);
    });
  });
  return h;
}

Heap& Runtime::create_heap(const std::string& name, std::uint64_t size) {
  if (heaps_.count(name) || storage_->exists(name)) throw Error(Errc::NameExists, name);
  if (size < minimum_heap_size()) {
    throw Error(Errc::SizeTooSmall, "heap size " + std::to_string(size) + " below minimum " +
                                        std::to_string(minimum_heap_size()));
  }
  auto device = storage_->create_device(name, size);
  const std::uint64_t base = addresses_.reserve_any(size, nullptr);
  std::unique_ptr<Heap> heap;
  try {
    heap = Heap::format(name, device, base, next_heap_id_++);
    storage_->register_name(name);
  } catch (...) {
    addresses_.release(base);
    throw;
  }
  addresses_.release(base);
  addresses_.try_reserve(base, size, heap.get());
  heap->set_type_listener([this](const TypeDescriptor& d) { registry_.note(d); });
  for (const auto* d : heap->klasses()) registry_.note(*d);
  return adopt(std::move(heap));
}

Heap& Runtime::load_heap(const std::string& name, const LoadOptions& options) {
  if (heaps_.count(name)) throw Error(Errc::HeapBusy, name + " is already loaded");
  auto device = storage_->open_device(name);
  auto heap = Heap::open(name, device, next_heap_id_++);
  const auto& meta = heap->metadata();
  const std::uint64_t preferred = meta.remap_target ? meta.remap_target : meta.address_hint;
  std::uint64_t base = preferred;
  if (options.deny_hint || !addresses_.try_reserve(preferred, meta.heap_size, heap.get())) {
    base = addresses_.reserve_any(meta.heap_size, heap.get(), preferred, meta.heap_size);
  }
  try {
    heap->set_type_listener([this](const TypeDescriptor& d) { registry_.note(d); });
    heap->finish_load(options, base);
  } catch (...) {
    addresses_.release(base);
    registry_.forget_heap(heap->id());
    throw;
  }
  for (const auto* d : heap->klasses()) registry_.note(*d);
  return adopt(std::move(heap));
}

bool Runtime::exists_heap(const std::string& name) const { return storage_->exists(name); }

void Runtime::release(Heap& heap) {
  addresses_.release(heap.base());
  registry_.forget_heap(heap.id());
  provider_ids_.erase(heap.name());
}

void Runtime::close_heap(const std::string& name) {
  auto it = heaps_.find(name);
  if (it == heaps_.end()) throw Error(Errc::UnknownHeap, name + " is not loaded");
  it->second->device().persist_all();
  release(*it->second);
  heaps_.erase(it);
}

void Runtime::simulate_crash() {
  for (auto& [name, heap] : heaps_) release(*heap);
  heaps_.clear();
  storage_->crash_devices();
}

const TypeDescriptor& Runtime::register_volatile_type(const TypeDescriptor& proto) {
  const auto& d = volatile_.register_type(proto);
  registry_.note(d);
  return d;
}

Heap* Runtime::find_heap(std::string_view name) {
  auto it = heaps_.find(name);
  return it == heaps_.end() ? nullptr : it->second.get();
}

ObjectStore& Runtime::store_of(ObjRef ref) {
  if (ref.is_null()) throw Error(Errc::InvalidArgument, "null reference");
  if (ref.space == Space::Volatile) {
    if (!volatile_.contains(ref.address)) throw Error(Errc::OutOfBounds, "dangling volatile ref");
    return volatile_;
  }
  if (auto* store = addresses_.owner_of(ref.address)) return *store;
  throw Error(Errc::OutOfBounds, "reference is not inside any loaded heap");
}

const TypeDescriptor& Runtime::descriptor_of(ObjRef ref) {
  return store_of(ref).descriptor_of(ref);
}

bool Runtime::is_instance_of(ObjRef ref, std::string_view logical_name) {
  if (ref.is_null()) return false;
  return descriptor_of(ref).name() == logical_name;
}

ObjRef Runtime::checked_cast(ObjRef ref, std::string_view logical_name) {
  if (ref.is_null()) return ref;
  const auto& d = descriptor_of(ref);
  if (d.name() != logical_name) {
    throw Error(Errc::ClassCast, d.name() + " cannot be cast to " + std::string(logical_name));
  }
  return ref;
}

}  // namespace pjh
