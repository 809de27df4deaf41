// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <optional>

namespace pjh {

class ObjectStore;

/// Process-wide virtual address bookkeeping. Each mapped heap owns one
/// slot; the volatile space sits far above every heap slot.
class AddressSpace {
 public:
  static constexpr std::uint64_t kHeapBase = 0x1000'0000'0000ULL;
  static constexpr std::uint64_t kHeapLimit = 0x7000'0000'0000ULL;
  static constexpr std::uint64_t kVolatileBase = 0x7E00'0000'0000ULL;
  static constexpr std::uint64_t kSlotAlign = 1ULL << 32;

  /// Claims [base, base+size) when it is free and a legal heap slot.
  bool try_reserve(std::uint64_t base, std::uint64_t size, ObjectStore* owner);
  /// Claims the lowest free slot that does not overlap [avoid, avoid+avoid_size).
  std::uint64_t reserve_any(std::uint64_t size, ObjectStore* owner, std::uint64_t avoid = 0,
                            std::uint64_t avoid_size = 0);
  void release(std::uint64_t base);

  ObjectStore* owner_of(std::uint64_t address) const;

 private:
  struct Slot {
    std::uint64_t size;
    ObjectStore* owner;
  };
  bool is_free(std::uint64_t base, std::uint64_t size) const;

  std::map<std::uint64_t, Slot> slots_;
};

}  // namespace pjh
