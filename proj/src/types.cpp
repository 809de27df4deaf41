// SPDX-License-Identifier: Apache-2.0
#include "pjh/types.hpp"

#include <algorithm>

#include "pjh/errors.hpp"
#include "pjh/layout.hpp"

namespace pjh {

namespace {

bool legal_scalar_width(std::uint16_t w) { return w == 1 || w == 2 || w == 4 || w == 8; }

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16(std::uint16_t v) { put(v, 2); }
  void u32(std::uint32_t v) { put(v, 4); }
  void bytes(std::string_view s) { out_.insert(out_.end(), s.begin(), s.end()); }
  void align(std::size_t a) {
    while (out_.size() % a) out_.push_back(0);
  }
  std::size_t size() const { return out_.size(); }
  void patch_u32(std::size_t at, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_[at + i] = static_cast<std::uint8_t>(v >> (8 * i));
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}
  std::uint8_t u8() { return static_cast<std::uint8_t>(get(1)); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(get(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  void align(std::size_t a) { pos_ = (pos_ + a - 1) / a * a; }
  std::size_t pos() const { return pos_; }
  void seek(std::size_t p) { pos_ = p; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > in_.size()) throw Error(Errc::CorruptDescriptor, "descriptor truncated");
  }
  std::uint64_t get(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = n - 1; i >= 0; --i) v = (v << 8) | in_[pos_ + static_cast<std::size_t>(i)];
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

}  // namespace

TypeDescriptor TypeDescriptor::instance(std::string name) {
  TypeDescriptor d;
  d.name_ = std::move(name);
  d.instance_size_ = kHeaderSize;
  return d;
}

TypeDescriptor TypeDescriptor::array_of(std::string name, FieldKind element,
                                        std::uint16_t width) {
  TypeDescriptor d;
  d.name_ = std::move(name);
  if (element == FieldKind::Reference) width = 8;
  d.array_ = ArrayInfo{element, width};
  d.instance_size_ = kArrayHeaderSize;
  return d;
}

TypeDescriptor& TypeDescriptor::scalar(std::string field, std::uint16_t width) {
  if (!legal_scalar_width(width)) {
    throw Error(Errc::InvalidArgument, "scalar width must be 1, 2, 4 or 8");
  }
  const auto offset = static_cast<std::uint32_t>(align_up(instance_size_, width));
  fields_.push_back({std::move(field), offset, FieldKind::Scalar, width});
  instance_size_ = static_cast<std::uint32_t>(align_up(offset + width, kWordSize));
  return *this;
}

TypeDescriptor& TypeDescriptor::reference(std::string field) {
  const auto offset = static_cast<std::uint32_t>(align_up(instance_size_, kWordSize));
  fields_.push_back({std::move(field), offset, FieldKind::Reference, 8});
  instance_size_ = offset + 8;
  return *this;
}

TypeDescriptor& TypeDescriptor::embedded(std::string field, std::uint16_t width) {
  if (width == 0) throw Error(Errc::InvalidArgument, "embedded field needs a width");
  const auto offset = static_cast<std::uint32_t>(align_up(instance_size_, kWordSize));
  fields_.push_back({std::move(field), offset, FieldKind::Embedded, width});
  instance_size_ = static_cast<std::uint32_t>(align_up(offset + width, kWordSize));
  return *this;
}

std::optional<std::size_t> TypeDescriptor::field_index(std::string_view field) const {
  for (std::size_t i = 0; i < fields_.size(); ++i) {
    if (fields_[i].name == field) return i;
  }
  return std::nullopt;
}

const FieldInfo& TypeDescriptor::field(std::string_view field) const {
  auto idx = field_index(field);
  if (!idx) throw Error(Errc::UnknownField, name_ + "." + std::string(field));
  return fields_[*idx];
}

std::uint64_t TypeDescriptor::object_size(std::uint64_t array_length) const {
  if (!array_) return align_up(instance_size_, kWordSize);
  return align_up(kArrayHeaderSize + array_length * array_->element_width, kWordSize);
}

std::uint64_t TypeDescriptor::element_offset(std::uint64_t index) const {
  return kArrayHeaderSize + index * (array_ ? array_->element_width : 0);
}

bool TypeDescriptor::has_references() const noexcept {
  if (array_) return array_->element_kind == FieldKind::Reference;
  return std::any_of(fields_.begin(), fields_.end(),
                     [](const FieldInfo& f) { return f.kind == FieldKind::Reference; });
}

bool TypeDescriptor::same_layout(const TypeDescriptor& other) const {
  return name_ == other.name_ && instance_size_ == other.instance_size_ &&
         fields_ == other.fields_ && array_ == other.array_;
}

void TypeDescriptor::check_well_formed() const {
  auto bad = [this](const std::string& why) {
    throw Error(Errc::InvalidArgument, "type " + name_ + ": " + why);
  };
  if (name_.empty()) bad("empty name");
  if (name_.size() > kMaxNameLength) {
    throw Error(Errc::NameTooLong, "type name longer than 47 bytes: " + name_);
  }
  if (array_) {
    if (!fields_.empty()) bad("array types carry no fields");
    if (instance_size_ != kArrayHeaderSize) bad("array instance size must be 24");
    if (array_->element_width == 0) bad("zero element width");
    if (array_->element_kind == FieldKind::Scalar && !legal_scalar_width(array_->element_width)) {
      bad("illegal scalar element width");
    }
    if (array_->element_kind == FieldKind::Reference && array_->element_width != 8) {
      bad("reference elements are 8 bytes");
    }
    return;
  }
  if (instance_size_ < kHeaderSize || instance_size_ % kWordSize != 0) {
    bad("instance size must be a multiple of 8 and at least 16");
  }
  std::vector<std::pair<std::uint32_t, std::uint32_t>> spans;
  for (const auto& f : fields_) {
    if (f.name.empty() || f.name.size() > 255) bad("bad field name");
    if (f.offset < kHeaderSize || f.offset + f.width > instance_size_) {
      bad("field " + f.name + " outside the instance");
    }
    if (f.kind == FieldKind::Reference && (f.width != 8 || f.offset % 8 != 0)) {
      bad("reference field " + f.name + " must be 8 bytes and 8-aligned");
    }
    if (f.kind == FieldKind::Scalar && !legal_scalar_width(f.width)) {
      bad("scalar field " + f.name + " has illegal width");
    }
    spans.emplace_back(f.offset, f.offset + f.width);
  }
  std::sort(spans.begin(), spans.end());
  for (std::size_t i = 1; i < spans.size(); ++i) {
    if (spans[i].first < spans[i - 1].second) bad("overlapping fields");
  }
  for (std::size_t i = 0; i < fields_.size(); ++i) {
    for (std::size_t j = i + 1; j < fields_.size(); ++j) {
      if (fields_[i].name == fields_[j].name) bad("duplicate field " + fields_[i].name);
    }
  }
}

void TypeDescriptor::bind(Space space, std::uint64_t owner, std::uint64_t address) {
  space_ = space;
  owner_ = owner;
  address_ = address;
  runtime_bound_ = true;
}

std::vector<std::uint8_t> TypeDescriptor::encode() const {
  Writer w;
  w.u32(kDescriptorMagic);
  w.u32(0);  // total length, patched below
  w.u8(array_ ? 1 : 0);
  w.u8(array_ ? static_cast<std::uint8_t>(array_->element_kind) : 0);
  w.u16(array_ ? array_->element_width : 0);
  w.u16(static_cast<std::uint16_t>(name_.size()));
  w.bytes(name_);
  w.align(4);
  w.u32(instance_size_);
  w.u16(static_cast<std::uint16_t>(fields_.size()));
  w.u16(0);
  w.align(8);
  std::uint32_t pool = 0;
  for (const auto& f : fields_) {
    w.u32(f.offset);
    w.u16(f.width);
    w.u8(static_cast<std::uint8_t>(f.kind));
    w.u8(static_cast<std::uint8_t>(f.name.size()));
    w.u32(pool);
    w.u32(0);
    pool += static_cast<std::uint32_t>(f.name.size());
  }
  for (const auto& f : fields_) w.bytes(f.name);
  w.align(8);
  w.patch_u32(4, static_cast<std::uint32_t>(w.size()));
  return w.take();
}

std::uint32_t TypeDescriptor::encoded_length(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  if (r.u32() != kDescriptorMagic) throw Error(Errc::CorruptDescriptor, "bad descriptor magic");
  const std::uint32_t len = r.u32();
  if (len < 24 || len % 8 != 0 || len > bytes.size()) {
    throw Error(Errc::CorruptDescriptor, "bad descriptor length");
  }
  return len;
}

TypeDescriptor TypeDescriptor::decode(std::span<const std::uint8_t> bytes) {
  const std::uint32_t total = encoded_length(bytes);
  Reader r(bytes.first(total));
  r.seek(8);
  TypeDescriptor d;
  const bool is_array = r.u8() != 0;
  const auto element_kind = r.u8();
  const auto element_width = r.u16();
  if (element_kind > 2) throw Error(Errc::CorruptDescriptor, "bad element kind");
  const auto name_len = r.u16();
  d.name_ = r.str(name_len);
  r.align(4);
  d.instance_size_ = r.u32();
  const auto field_count = r.u16();
  r.u16();
  r.align(8);
  struct Raw {
    std::uint32_t offset;
    std::uint16_t width;
    std::uint8_t kind;
    std::uint8_t name_len;
    std::uint32_t pool;
  };
  std::vector<Raw> raws;
  for (std::uint16_t i = 0; i < field_count; ++i) {
    Raw raw{};
    raw.offset = r.u32();
    raw.width = r.u16();
    raw.kind = r.u8();
    raw.name_len = r.u8();
    raw.pool = r.u32();
    r.u32();
    if (raw.kind > 2) throw Error(Errc::CorruptDescriptor, "bad field kind");
    raws.push_back(raw);
  }
  const std::size_t pool_start = r.pos();
  for (const auto& raw : raws) {
    r.seek(pool_start + raw.pool);
    d.fields_.push_back(
        {r.str(raw.name_len), raw.offset, static_cast<FieldKind>(raw.kind), raw.width});
  }
  if (is_array) d.array_ = ArrayInfo{static_cast<FieldKind>(element_kind), element_width};
  try {
    d.check_well_formed();
  } catch (const Error& e) {
    throw Error(Errc::CorruptDescriptor, e.what());
  }
  return d;
}

bool alias_of(const TypeDescriptor& a, const TypeDescriptor& b) {
  const bool identical = a.space() == b.space() && a.owner() == b.owner() &&
                         a.address() == b.address() && a.name() == b.name();
  if (identical) return true;
  return a.name() == b.name() && a.space() != b.space();
}

bool is_reserved_type_name(std::string_view name) { return !name.empty() && name[0] == '$'; }

}  // namespace pjh
