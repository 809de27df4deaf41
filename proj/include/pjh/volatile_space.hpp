// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "pjh/address_space.hpp"
#include "pjh/object_store.hpp"

namespace pjh {

/// Minimal stand-in for the ordinary (volatile) heap: a bump-allocated
/// byte arena with its own descriptors. Objects use the same header layout
/// as persistent ones; the klass word holds a descriptor id. Nothing here is
/// ever collected.
class VolatileSpace : public ObjectStore {
 public:
  explicit VolatileSpace(std::uint64_t base = AddressSpace::kVolatileBase);

  Space space() const noexcept override { return Space::Volatile; }
  bool contains(std::uint64_t address) const noexcept override;
  void read_raw(std::uint64_t address, std::span<std::uint8_t> out) const override;
  void write_raw(std::uint64_t address, std::span<const std::uint8_t> in) override;
  using ObjectStore::descriptor_of;
  const TypeDescriptor& descriptor_of(std::uint64_t address) const override;

  /// Idempotent per name; throws LayoutMismatch on a conflicting layout.
  const TypeDescriptor& register_type(const TypeDescriptor& proto);
  const TypeDescriptor* find_type(std::string_view name) const;

  ObjRef allocate(const TypeDescriptor& klass, std::optional<std::uint64_t> array_length = {});

  /// Calls `visit` for every reference slot of every object, passing the slot
  /// address and its current value.
  void for_each_reference(const std::function<void(std::uint64_t slot, std::uint64_t value)>& visit) const;

  std::uint64_t base() const noexcept { return base_; }
  std::uint64_t used_bytes() const noexcept { return bytes_.size(); }
  std::uint64_t object_count() const noexcept { return objects_; }

 private:
  std::uint64_t base_;
  std::vector<std::uint8_t> bytes_;
  std::vector<std::unique_ptr<TypeDescriptor>> types_;
  std::map<std::string, std::size_t, std::less<>> by_name_;
  std::uint64_t objects_ = 0;
};

}  // namespace pjh
