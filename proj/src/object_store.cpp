// SPDX-License-Identifier: Apache-2.0
#include "pjh/object_store.hpp"

#include <array>

#include "pjh/errors.hpp"
#include "pjh/layout.hpp"

namespace pjh {

namespace {

std::uint64_t read_le(const ObjectStore& store, std::uint64_t address, std::uint16_t width) {
  std::array<std::uint8_t, 8> buf{};
  store.read_raw(address, std::span<std::uint8_t>(buf.data(), width));
  std::uint64_t v = 0;
  for (int i = width - 1; i >= 0; --i) v = (v << 8) | buf[static_cast<std::size_t>(i)];
  return v;
}

void write_le(ObjectStore& store, std::uint64_t address, std::uint16_t width, std::uint64_t v) {
  std::array<std::uint8_t, 8> buf{};
  for (std::size_t i = 0; i < width; ++i) buf[i] = static_cast<std::uint8_t>(v >> (8 * i));
  store.write_raw(address, std::span<const std::uint8_t>(buf.data(), width));
}

}  // namespace

const TypeDescriptor& ObjectStore::descriptor_of(ObjRef ref) const {
  check_ref(ref);
  return descriptor_of(ref.address);
}

std::uint64_t ObjectStore::read_word(std::uint64_t address) const {
  return read_le(*this, address, 8);
}

void ObjectStore::write_word(std::uint64_t address, std::uint64_t value) {
  write_le(*this, address, 8, value);
}

ObjRef ObjectStore::load_ref(std::uint64_t word) const {
  if (word == 0) return ObjRef::null();
  if (contains(word)) return {space(), word};
  return {space() == Space::Persistent ? Space::Volatile : Space::Persistent, word};
}

void ObjectStore::check_ref(ObjRef ref) const {
  if (ref.is_null()) throw Error(Errc::InvalidArgument, "null reference");
  if (ref.space != space() || !contains(ref.address)) {
    throw Error(Errc::OutOfBounds, "reference does not belong to this space");
  }
}

std::uint64_t ObjectStore::array_length(ObjRef ref) const {
  const auto& d = descriptor_of(ref);
  if (!d.is_array()) throw Error(Errc::InvalidArgument, d.name() + " is not an array type");
  return read_word(ref.address + kArrayLengthOffset);
}

std::uint64_t ObjectStore::object_size(ObjRef ref) const {
  const auto& d = descriptor_of(ref);
  return d.object_size(d.is_array() ? read_word(ref.address + kArrayLengthOffset) : 0);
}

const FieldInfo& ObjectStore::field_of(ObjRef ref, std::string_view field, FieldKind kind) const {
  const FieldInfo& f = descriptor_of(ref).field(field);
  if (f.kind != kind) {
    throw Error(Errc::InvalidArgument, "field " + f.name + " has a different kind");
  }
  return f;
}

std::uint64_t ObjectStore::get_scalar(ObjRef ref, std::string_view field) const {
  const auto& f = field_of(ref, field, FieldKind::Scalar);
  return read_le(*this, ref.address + f.offset, f.width);
}

void ObjectStore::set_scalar(ObjRef ref, std::string_view field, std::uint64_t value) {
  const auto& f = field_of(ref, field, FieldKind::Scalar);
  write_le(*this, ref.address + f.offset, f.width, value);
}

ObjRef ObjectStore::get_ref(ObjRef ref, std::string_view field) const {
  const auto& f = field_of(ref, field, FieldKind::Reference);
  return load_ref(read_word(ref.address + f.offset));
}

void ObjectStore::set_ref(ObjRef ref, std::string_view field, ObjRef value) {
  const auto& f = field_of(ref, field, FieldKind::Reference);
  write_word(ref.address + f.offset, value.address);
}

std::vector<std::uint8_t> ObjectStore::get_embedded(ObjRef ref, std::string_view field) const {
  const auto& f = field_of(ref, field, FieldKind::Embedded);
  std::vector<std::uint8_t> out(f.width);
  read_raw(ref.address + f.offset, out);
  return out;
}

void ObjectStore::set_embedded(ObjRef ref, std::string_view field,
                               std::span<const std::uint8_t> bytes) {
  const auto& f = field_of(ref, field, FieldKind::Embedded);
  if (bytes.size() != f.width) {
    throw Error(Errc::InvalidArgument, "embedded field " + f.name + " needs " +
                                           std::to_string(f.width) + " bytes");
  }
  write_raw(ref.address + f.offset, bytes);
}

std::uint64_t ObjectStore::element_address(ObjRef array, std::uint64_t index,
                                            FieldKind kind) const {
  const auto& d = descriptor_of(array);
  if (!d.is_array()) throw Error(Errc::InvalidArgument, d.name() + " is not an array type");
  if (d.array()->element_kind != kind) {
    throw Error(Errc::InvalidArgument, d.name() + " has a different element kind");
  }
  const std::uint64_t length = read_word(array.address + kArrayLengthOffset);
  if (index >= length) {
    throw Error(Errc::OutOfBounds, "index " + std::to_string(index) + " >= length " +
                                       std::to_string(length));
  }
  return array.address + d.element_offset(index);
}

std::uint64_t ObjectStore::get_element(ObjRef array, std::uint64_t index) const {
  const auto addr = element_address(array, index, FieldKind::Scalar);
  return read_le(*this, addr, descriptor_of(array).array()->element_width);
}

void ObjectStore::set_element(ObjRef array, std::uint64_t index, std::uint64_t value) {
  const auto addr = element_address(array, index, FieldKind::Scalar);
  write_le(*this, addr, descriptor_of(array).array()->element_width, value);
}

ObjRef ObjectStore::get_element_ref(ObjRef array, std::uint64_t index) const {
  return load_ref(read_word(element_address(array, index, FieldKind::Reference)));
}

void ObjectStore::set_element_ref(ObjRef array, std::uint64_t index, ObjRef value) {
  write_word(element_address(array, index, FieldKind::Reference), value.address);
}

std::uint64_t ObjectStore::get_element_word(ObjRef array, std::uint64_t index) const {
  return read_word(element_address(array, index, FieldKind::Reference));
}

void ObjectStore::set_element_word(ObjRef array, std::uint64_t index, std::uint64_t word) {
  write_word(element_address(array, index, FieldKind::Reference), word);
}

std::vector<std::uint8_t> ObjectStore::get_bytes(ObjRef array) const {
  const auto& d = descriptor_of(array);
  if (!d.is_array() || d.array()->element_width != 1) {
    throw Error(Errc::InvalidArgument, d.name() + " is not a byte array");
  }
  std::vector<std::uint8_t> out(read_word(array.address + kArrayLengthOffset));
  read_raw(array.address + kArrayHeaderSize, out);
  return out;
}

void ObjectStore::set_bytes(ObjRef array, std::span<const std::uint8_t> bytes) {
  const auto& d = descriptor_of(array);
  if (!d.is_array() || d.array()->element_width != 1) {
    throw Error(Errc::InvalidArgument, d.name() + " is not a byte array");
  }
  if (bytes.size() != read_word(array.address + kArrayLengthOffset)) {
    throw Error(Errc::OutOfBounds, "byte payload does not match the array length");
  }
  write_raw(array.address + kArrayHeaderSize, bytes);
}

}  // namespace pjh
