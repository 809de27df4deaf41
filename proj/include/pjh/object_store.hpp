// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "pjh/types.hpp"

namespace pjh {

/// A reference: which space it points into, plus an absolute address.
/// Address 0 is null.
struct ObjRef {
  Space space = Space::Persistent;
  std::uint64_t address = 0;

  bool is_null() const noexcept { return address == 0; }
  explicit operator bool() const noexcept { return address != 0; }
  bool operator==(const ObjRef&) const = default;

  static ObjRef null() { return {}; }
};

/// Common object access for the persistent heap and the volatile space.
/// Subclasses provide raw byte access and header decoding; field access is
/// built on top and checks that fields and elements exist.
class ObjectStore {
 public:
  virtual ~ObjectStore() = default;

  virtual Space space() const noexcept = 0;
  /// True when `address` falls inside the address range this store owns.
  virtual bool contains(std::uint64_t address) const noexcept = 0;
  virtual void read_raw(std::uint64_t address, std::span<std::uint8_t> out) const = 0;
  virtual void write_raw(std::uint64_t address, std::span<const std::uint8_t> in) = 0;
  virtual const TypeDescriptor& descriptor_of(std::uint64_t address) const = 0;

  const TypeDescriptor& descriptor_of(ObjRef ref) const;

  std::uint64_t read_word(std::uint64_t address) const;
  void write_word(std::uint64_t address, std::uint64_t value);

  /// Interprets a stored reference word: inside this store it is a
  /// reference of this space, anywhere else a reference to the other space.
  ObjRef load_ref(std::uint64_t word) const;

  std::uint64_t array_length(ObjRef ref) const;
  std::uint64_t object_size(ObjRef ref) const;

  std::uint64_t get_scalar(ObjRef ref, std::string_view field) const;
  void set_scalar(ObjRef ref, std::string_view field, std::uint64_t value);
  ObjRef get_ref(ObjRef ref, std::string_view field) const;
  void set_ref(ObjRef ref, std::string_view field, ObjRef value);
  std::vector<std::uint8_t> get_embedded(ObjRef ref, std::string_view field) const;
  void set_embedded(ObjRef ref, std::string_view field, std::span<const std::uint8_t> bytes);

  std::uint64_t get_element(ObjRef array, std::uint64_t index) const;
  void set_element(ObjRef array, std::uint64_t index, std::uint64_t value);
  ObjRef get_element_ref(ObjRef array, std::uint64_t index) const;
  void set_element_ref(ObjRef array, std::uint64_t index, ObjRef value);
  /// Stored word of a reference element, without interpreting it.
  std::uint64_t get_element_word(ObjRef array, std::uint64_t index) const;
  void set_element_word(ObjRef array, std::uint64_t index, std::uint64_t word);

  /// Whole payload of a byte array.
  std::vector<std::uint8_t> get_bytes(ObjRef array) const;
  void set_bytes(ObjRef array, std::span<const std::uint8_t> bytes);

 protected:
  void check_ref(ObjRef ref) const;
  const FieldInfo& field_of(ObjRef ref, std::string_view field, FieldKind kind) const;
  std::uint64_t element_address(ObjRef array, std::uint64_t index, FieldKind kind) const;
};

}  // namespace pjh
