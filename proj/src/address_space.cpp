// SPDX-License-Identifier: Apache-2.0
#include "pjh/address_space.hpp"

#include "pjh/errors.hpp"
#include "pjh/layout.hpp"

namespace pjh {

namespace {

bool overlaps(std::uint64_t a, std::uint64_t an, std::uint64_t b, std::uint64_t bn) {
  return a < b + bn && b < a + an;
}

}  // namespace

bool AddressSpace::is_free(std::uint64_t base, std::uint64_t size) const {
  if (base < kHeapBase || base % kSlotAlign != 0 || size > kHeapLimit - base) return false;
  auto it = slots_.upper_bound(base);
  if (it != slots_.end() && overlaps(base, size, it->first, it->second.size)) return false;
  if (it != slots_.begin()) {
    --it;
    if (overlaps(base, size, it->first, it->second.size)) return false;
  }
  return true;
}

bool AddressSpace::try_reserve(std::uint64_t base, std::uint64_t size, ObjectStore* owner) {
  if (!is_free(base, size)) return false;
  slots_[base] = Slot{size, owner};
  return true;
}

std::uint64_t AddressSpace::reserve_any(std::uint64_t size, ObjectStore* owner,
                                        std::uint64_t avoid, std::uint64_t avoid_size) {
  for (std::uint64_t base = kHeapBase; base + size <= kHeapLimit;
       base += align_up(size, kSlotAlign)) {
    if (avoid_size && overlaps(base, size, avoid, avoid_size)) continue;
    if (try_reserve(base, size, owner)) return base;
  }
  throw Error(Errc::OutOfMemory, "virtual address space exhausted");
}

void AddressSpace::release(std::uint64_t base) { slots_.erase(base); }

ObjectStore* AddressSpace::owner_of(std::uint64_t address) const {
  auto it = slots_.upper_bound(address);
  if (it == slots_.begin()) return nullptr;
  --it;
  return address - it->first < it->second.size ? it->second.owner : nullptr;
}

}  // namespace pjh
