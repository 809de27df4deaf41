// SPDX-License-Identifier: Apache-2.0
#include "pjh/name_table.hpp"

#include <array>
#include <cstring>

#include "pjh/device.hpp"
#include "pjh/errors.hpp"
#include "pjh/layout.hpp"

namespace pjh {

NameTable::NameTable(PersistentDevice& device, std::uint64_t location, std::uint64_t slots)
    : device_(device), location_(location), slots_(slots), mirror_(slots) {}

std::uint64_t NameTable::hash(EntryKind kind, std::string_view name) noexcept {
  std::uint64_t h = 14695981039346656037ULL;  // FNV-1a
  auto mix = [&h](std::uint8_t b) {
    h ^= b;
    h *= 1099511628211ULL;
  };
  mix(static_cast<std::uint8_t>(kind));
  for (char c : name) mix(static_cast<std::uint8_t>(c));
  return h;
}

std::uint64_t NameTable::slot_offset(std::size_t slot) const noexcept {
  return location_ + slot * kNameEntrySize;
}

void NameTable::load() {
  index_.clear();
  auto raw = device_.read(location_, slots_ * kNameEntrySize);
  for (std::size_t slot = 0; slot < slots_; ++slot) {
    const std::uint8_t* e = raw.data() + slot * kNameEntrySize;
    NameEntry entry;
    entry.slot = slot;
    const std::uint8_t kind = e[0];
    if (kind == 1 || kind == 2) {
      const std::uint8_t len = e[1];
      if (len == 0 || len > kMaxNameLength) {
        throw Error(Errc::CorruptImage, "name table entry " + std::to_string(slot) +
                                            " has a bad name length");
      }
      entry.kind = static_cast<EntryKind>(kind);
      entry.name.assign(reinterpret_cast<const char*>(e + 2), len);
      for (int i = 0; i < 8; ++i) entry.address |= std::uint64_t{e[kAddressOffset + i]} << (8 * i);
      if (!index_.emplace(std::make_pair(entry.kind, entry.name), slot).second) {
        throw Error(Errc::CorruptImage, "duplicate name table entry " + entry.name);
      }
    } else if (kind != 0) {
      throw Error(Errc::CorruptImage, "name table entry " + std::to_string(slot) +
                                          " has unknown kind " + std::to_string(kind));
    }
    mirror_[slot] = std::move(entry);
  }
}

const NameEntry* NameTable::find(EntryKind kind, std::string_view name) const {
  auto it = index_.find(std::make_pair(kind, std::string(name)));
  return it == index_.end() ? nullptr : &mirror_[it->second];
}

std::size_t NameTable::insert(EntryKind kind, const std::string& name, std::uint64_t address,
                              bool persist) {
  if (name.empty()) throw Error(Errc::InvalidArgument, "empty name");
  if (name.size() > kMaxNameLength) {
    throw Error(Errc::NameTooLong, "'" + name + "' is longer than 47 bytes");
  }
  if (find(kind, name)) throw Error(Errc::NameExists, name);
  const std::uint64_t start = hash(kind, name) % slots_;
  for (std::uint64_t probe = 0; probe < slots_; ++probe) {
    const std::size_t slot = (start + probe) % slots_;
    if (mirror_[slot].kind != EntryKind::Empty) continue;
    std::array<std::uint8_t, kNameEntrySize> e{};
    e[1] = static_cast<std::uint8_t>(name.size());
    std::memcpy(e.data() + 2, name.data(), name.size());
    for (int i = 0; i < 8; ++i) e[kAddressOffset + i] = static_cast<std::uint8_t>(address >> (8 * i));
    const std::uint64_t at = slot_offset(slot);
    device_.write(at, e);
    if (persist) {
      device_.flush(at, kNameEntrySize);
      device_.fence();
    }
    const std::uint8_t k = static_cast<std::uint8_t>(kind);
    device_.write(at, std::span<const std::uint8_t>(&k, 1));
    if (persist) {
      device_.flush(at, 1);
      device_.fence();
    }
    mirror_[slot] = NameEntry{kind, name, address, slot};
    index_.emplace(std::make_pair(kind, name), slot);
    return slot;
  }
  throw Error(Errc::NameTableFull, "no free name table slot for " + name);
}

void NameTable::set_address(std::size_t slot, std::uint64_t address, bool fence) {
  const std::uint64_t at = slot_offset(slot) + kAddressOffset;
  device_.write_u64(at, address);
  device_.flush(at, 8);
  if (fence) device_.fence();
  mirror_[slot].address = address;
}

std::vector<NameEntry> NameTable::entries(EntryKind kind) const {
  std::vector<NameEntry> out;
  for (const auto& e : mirror_) {
    if (e.kind == kind) out.push_back(e);
  }
  return out;
}

}  // namespace pjh
