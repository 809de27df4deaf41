// SPDX-License-Identifier: Apache-2.0
#include "pjh/volatile_space.hpp"

#include <cstring>

#include "pjh/errors.hpp"
#include "pjh/layout.hpp"

namespace pjh {

VolatileSpace::VolatileSpace(std::uint64_t base) : base_(base) {
  // Offset 0 stays unused so that no object sits at the base address.
  bytes_.assign(kWordSize, 0);
}

bool VolatileSpace::contains(std::uint64_t address) const noexcept {
  return address >= base_ && address - base_ < bytes_.size();
}

void VolatileSpace::read_raw(std::uint64_t address, std::span<std::uint8_t> out) const {
  if (!contains(address) || out.size() > bytes_.size() - (address - base_)) {
    throw Error(Errc::OutOfBounds, "volatile read out of range");
  }
  std::memcpy(out.data(), bytes_.data() + (address - base_), out.size());
}

void VolatileSpace::write_raw(std::uint64_t address, std::span<const std::uint8_t> in) {
  if (!contains(address) || in.size() > bytes_.size() - (address - base_)) {
    throw Error(Errc::OutOfBounds, "volatile write out of range");
  }
  std::memcpy(bytes_.data() + (address - base_), in.data(), in.size());
}

const TypeDescriptor& VolatileSpace::descriptor_of(std::uint64_t address) const {
  const std::uint64_t id = (read_word(address) & ~kKlassFlagMask) >> 3;
  if (id == 0 || id > types_.size()) {
    throw Error(Errc::CorruptReference, "volatile object without a descriptor");
  }
  return *types_[id - 1];
}

const TypeDescriptor& VolatileSpace::register_type(const TypeDescriptor& proto) {
  if (auto it = by_name_.find(proto.name()); it != by_name_.end()) {
    const auto& existing = *types_[it->second];
    if (!existing.same_layout(proto)) throw Error(Errc::LayoutMismatch, proto.name());
    return existing;
  }
  proto.check_well_formed();
  auto d = std::make_unique<TypeDescriptor>(proto);
  const std::uint64_t id = types_.size() + 1;
  d->bind(Space::Volatile, base_, id << 3);
  by_name_.emplace(proto.name(), types_.size());
  types_.push_back(std::move(d));
  return *types_.back();
}

const TypeDescriptor* VolatileSpace::find_type(std::string_view name) const {
  auto it = by_name_.find(name);
  return it == by_name_.end() ? nullptr : types_[it->second].get();
}

ObjRef VolatileSpace::allocate(const TypeDescriptor& klass,
                               std::optional<std::uint64_t> array_length) {
  if (klass.space() != Space::Volatile || klass.owner() != base_) {
    throw Error(Errc::UnknownKlass, klass.name() + " is not a volatile-space type");
  }
  if (klass.is_array() != array_length.has_value()) {
    throw Error(Errc::InvalidArgument, "array length given for the wrong kind of type");
  }
  const std::uint64_t size = klass.object_size(array_length.value_or(0));
  const std::uint64_t at = base_ + bytes_.size();
  bytes_.resize(bytes_.size() + size, 0);
  write_word(at, klass.address());
  if (array_length) write_word(at + kArrayLengthOffset, *array_length);
  ++objects_;
  return {Space::Volatile, at};
}

void VolatileSpace::for_each_reference(
    const std::function<void(std::uint64_t, std::uint64_t)>& visit) const {
  std::uint64_t at = base_ + kWordSize;
  const std::uint64_t end = base_ + bytes_.size();
  while (at < end) {
    const auto& d = descriptor_of(at);
    const std::uint64_t length = d.is_array() ? read_word(at + kArrayLengthOffset) : 0;
    if (d.is_array()) {
      if (d.array()->element_kind == FieldKind::Reference) {
        for (std::uint64_t i = 0; i < length; ++i) {
          const std::uint64_t slot = at + d.element_offset(i);
          visit(slot, read_word(slot));
        }
      }
    } else {
      for (const auto& f : d.fields()) {
        if (f.kind == FieldKind::Reference) visit(at + f.offset, read_word(at + f.offset));
      }
    }
    at += d.object_size(length);
  }
}

}  // namespace pjh
