// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace pjh {

class PersistentDevice;

enum class EntryKind : std::uint8_t { Empty = 0, Klass = 1, Root = 2 };

struct NameEntry {
  EntryKind kind = EntryKind::Empty;
  std::string name;
  std::uint64_t address = 0;
  std::size_t slot = 0;
};

/// Persistent open-addressed table of 64-byte entries:
///   [0] kind, [1] name length, [2, 49) name bytes, [56, 64) address.
/// A new entry is written whole with kind 0 and persisted, then its kind
/// byte is set and persisted; the kind byte is the commit point.
class NameTable {
 public:
  NameTable(PersistentDevice& device, std::uint64_t location, std::uint64_t slots);

  /// Rebuilds the in-memory mirror from the device.
  void load();

  const NameEntry* find(EntryKind kind, std::string_view name) const;
  /// Throws NameTooLong or NameTableFull. Returns the slot used.
  std::size_t insert(EntryKind kind, const std::string& name, std::uint64_t address,
                     bool persist = true);
  /// Writes and flushes a new address word; fences when `fence` is set.
  void set_address(std::size_t slot, std::uint64_t address, bool fence = true);

  std::vector<NameEntry> entries(EntryKind kind) const;
  std::uint64_t slot_offset(std::size_t slot) const noexcept;
  std::uint64_t slots() const noexcept { return slots_; }

  static std::uint64_t hash(EntryKind kind, std::string_view name) noexcept;

  static constexpr std::uint64_t kAddressOffset = 56;

 private:
  PersistentDevice& device_;
  std::uint64_t location_;
  std::uint64_t slots_;
  std::vector<NameEntry> mirror_;
  std::map<std::pair<EntryKind, std::string>, std::size_t, std::less<>> index_;
};

}  // namespace pjh
