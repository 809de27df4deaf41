// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace pjh {

enum class Space : std::uint8_t { Persistent, Volatile };

enum class FieldKind : std::uint8_t {
  Scalar = 0,     // width 1, 2, 4 or 8
  Reference = 1,  // 8-byte address word
  Embedded = 2,   // inline value blob of any width
};

struct FieldInfo {
  std::string name;
  std::uint32_t offset = 0;
  FieldKind kind = FieldKind::Scalar;
  std::uint16_t width = 8;

  bool operator==(const FieldInfo&) const = default;
};

struct ArrayInfo {
  FieldKind element_kind = FieldKind::Scalar;
  std::uint16_t element_width = 1;

  bool operator==(const ArrayInfo&) const = default;
};

/// Layout description of a type (a Klass): logical name, instance size and
/// the field table that tells reference words apart from plain data.
///
/// Field offsets are absolute within the object, so the first field of an
/// instance type lives right after the 16-byte header.
class TypeDescriptor {
 public:
  TypeDescriptor() = default;

  static TypeDescriptor instance(std::string name);
  static TypeDescriptor array_of(std::string name, FieldKind element, std::uint16_t width = 8);

  /// Builder helpers; each appends a field at the next naturally aligned offset.
  TypeDescriptor& scalar(std::string field, std::uint16_t width = 8);
  TypeDescriptor& reference(std::string field);
  TypeDescriptor& embedded(std::string field, std::uint16_t width);

  const std::string& name() const noexcept { return name_; }
  std::uint32_t instance_size() const noexcept { return instance_size_; }
  const std::vector<FieldInfo>& fields() const noexcept { return fields_; }
  const std::optional<ArrayInfo>& array() const noexcept { return array_; }
  bool is_array() const noexcept { return array_.has_value(); }

  std::optional<std::size_t> field_index(std::string_view field) const;
  const FieldInfo& field(std::string_view field) const;

  /// Total object size including header, rounded to 8 bytes.
  std::uint64_t object_size(std::uint64_t array_length = 0) const;
  /// Byte offset (within the object) of array element `index`.
  std::uint64_t element_offset(std::uint64_t index) const;
  bool has_references() const noexcept;

  /// Same name, size, field table and array shape.
  bool same_layout(const TypeDescriptor& other) const;

  /// Throws InvalidType-flavoured errors when the invariants do not hold:
  /// disjoint fields inside the instance, aligned references, legal widths.
  void check_well_formed() const;

  // Identity, set once the descriptor is bound to a space.
  Space space() const noexcept { return space_; }
  std::uint64_t owner() const noexcept { return owner_; }
  std::uint64_t address() const noexcept { return address_; }
  bool runtime_bound() const noexcept { return runtime_bound_; }
  void bind(Space space, std::uint64_t owner, std::uint64_t address);

  /// Persistent encoding: preamble, length-prefixed name, u32 instance
  /// size, u16 field count, 16-byte field records, field-name pool.
  std::vector<std::uint8_t> encode() const;
  static TypeDescriptor decode(std::span<const std::uint8_t> bytes);
  /// Total encoded length of the descriptor starting at `bytes`.
  static std::uint32_t encoded_length(std::span<const std::uint8_t> bytes);

 private:
  std::string name_;
  std::uint32_t instance_size_ = 16;
  std::vector<FieldInfo> fields_;
  std::optional<ArrayInfo> array_;

  Space space_ = Space::Persistent;
  std::uint64_t owner_ = 0;
  std::uint64_t address_ = 0;
  bool runtime_bound_ = false;
};

/// Two descriptors are aliases when they are the same descriptor, or name
/// the same logical type in different spaces.
bool alias_of(const TypeDescriptor& a, const TypeDescriptor& b);

inline constexpr std::uint32_t kDescriptorMagic = 0x314B4C53;  // "SLK1" little-endian
inline constexpr std::string_view kFillerName = "$filler";
inline constexpr std::string_view kWordFillerName = "$filler16";

bool is_reserved_type_name(std::string_view name);

}  // namespace pjh
