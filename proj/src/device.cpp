// SPDX-License-Identifier: Apache-2.0
#include "pjh/device.hpp"

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <fstream>

#include "pjh/errors.hpp"

namespace pjh {

namespace {

void put_u64(std::uint8_t* p, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) p[i] = static_cast<std::uint8_t>(v >> (8 * i));
}

std::uint64_t get_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

void validate_capacity(std::uint64_t capacity) {
  if (capacity == 0 || capacity % kLineSize != 0) {
    throw Error(Errc::InvalidCapacity,
                "capacity " + std::to_string(capacity) + " is not a positive multiple of 64");
  }
}

std::array<std::uint8_t, kDeviceFileHeader> file_header(std::uint64_t capacity) {
  std::array<std::uint8_t, kDeviceFileHeader> header{};
  std::memcpy(header.data(), kDeviceMagic, sizeof(kDeviceMagic));
  put_u64(header.data() + 8, capacity);
  return header;
}

std::uint64_t parse_header(const std::uint8_t* header, const std::string& path) {
  if (std::memcmp(header, kDeviceMagic, sizeof(kDeviceMagic)) != 0) {
    throw Error(Errc::CorruptImage, path + ": bad device magic");
  }
  return get_u64(header + 8);
}

void pwrite_all(int fd, const void* data, std::size_t len, off_t offset) {
  const auto* p = static_cast<const std::uint8_t*>(data);
  while (len > 0) {
    ssize_t n = ::pwrite(fd, p, len, offset);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw Error(Errc::IoError, std::string("pwrite: ") + std::strerror(errno));
    }
    p += n;
    len -= static_cast<std::size_t>(n);
    offset += n;
  }
}

}  // namespace

PersistentDevice::PersistentDevice(std::uint64_t capacity) : capacity_(capacity) {
  validate_capacity(capacity);
  const std::uint64_t lines = capacity / kLineSize;
  durable_.assign(capacity, 0);
  current_.assign(capacity, 0);
  state_.assign(lines, 0);
  pending_slot_.assign(lines, -1);
}

PersistentDevice::~PersistentDevice() {
  if (fd_ >= 0) {
    ::fdatasync(fd_);
    ::close(fd_);
  }
}

std::unique_ptr<PersistentDevice> PersistentDevice::from_image(
    std::span<const std::uint8_t> image) {
  auto dev = std::make_unique<PersistentDevice>(image.size());
  std::copy(image.begin(), image.end(), dev->durable_.begin());
  std::copy(image.begin(), image.end(), dev->current_.begin());
  return dev;
}

std::unique_ptr<PersistentDevice> PersistentDevice::create_file(const std::string& path,
                                                                std::uint64_t capacity) {
  auto dev = std::make_unique<PersistentDevice>(capacity);
  int fd = ::open(path.c_str(), O_RDWR | O_CREAT | O_TRUNC, 0644);
  if (fd < 0) throw Error(Errc::IoError, path + ": " + std::strerror(errno));
  dev->fd_ = fd;
  auto header = file_header(capacity);
  pwrite_all(fd, header.data(), header.size(), 0);
  if (::ftruncate(fd, static_cast<off_t>(kDeviceFileHeader + capacity)) != 0) {
    throw Error(Errc::IoError, path + ": " + std::strerror(errno));
  }
  ::fdatasync(fd);
  return dev;
}

std::unique_ptr<PersistentDevice> PersistentDevice::open_file(const std::string& path) {
  int fd = ::open(path.c_str(), O_RDWR);
  if (fd < 0) throw Error(Errc::IoError, path + ": " + std::strerror(errno));
  std::uint8_t header[kDeviceFileHeader];
  if (::pread(fd, header, sizeof(header), 0) != static_cast<ssize_t>(sizeof(header))) {
    ::close(fd);
    throw Error(Errc::CorruptImage, path + ": short device header");
  }
  std::uint64_t capacity = 0;
  try {
    capacity = parse_header(header, path);
    validate_capacity(capacity);
  } catch (...) {
    ::close(fd);
    throw;
  }
  auto dev = std::make_unique<PersistentDevice>(capacity);
  dev->fd_ = fd;
  std::uint64_t done = 0;
  while (done < capacity) {
    ssize_t n = ::pread(fd, dev->durable_.data() + done, capacity - done,
                        static_cast<off_t>(kDeviceFileHeader + done));
    if (n <= 0) throw Error(Errc::CorruptImage, path + ": truncated device image");
    done += static_cast<std::uint64_t>(n);
  }
  dev->current_ = dev->durable_;
  return dev;
}

void PersistentDevice::check_range(std::uint64_t offset, std::uint64_t len) const {
  if (offset > capacity_ || len > capacity_ - offset) {
    throw Error(Errc::OutOfBounds, "range [" + std::to_string(offset) + ", +" +
                                       std::to_string(len) + ") exceeds capacity " +
                                       std::to_string(capacity_));
  }
}

void PersistentDevice::mark_written(std::uint64_t offset, std::uint64_t len) {
  if (len == 0) return;
  const std::uint64_t first = offset / kLineSize;
  const std::uint64_t last = (offset + len - 1) / kLineSize;
  for (std::uint64_t line = first; line <= last; ++line) {
    std::uint8_t& st = state_[line];
    if (!(st & kDirty)) dirty_lines_.push_back(line);
    if (!(st & kTouched)) touched_lines_.push_back(line);
    st |= kDirty | kTouched;
  }
}

void PersistentDevice::write(std::uint64_t offset, std::span<const std::uint8_t> data) {
  check_range(offset, data.size());
  if (data.empty()) return;
  std::memcpy(current_.data() + offset, data.data(), data.size());
  mark_written(offset, data.size());
}

void PersistentDevice::read_into(std::uint64_t offset, std::span<std::uint8_t> out) const {
  check_range(offset, out.size());
  if (!out.empty()) std::memcpy(out.data(), current_.data() + offset, out.size());
}

std::vector<std::uint8_t> PersistentDevice::read(std::uint64_t offset, std::uint64_t len) const {
  check_range(offset, len);
  return {current_.begin() + static_cast<std::ptrdiff_t>(offset),
          current_.begin() + static_cast<std::ptrdiff_t>(offset + len)};
}

std::uint64_t PersistentDevice::read_u64(std::uint64_t offset) const {
  check_range(offset, 8);
  return get_u64(current_.data() + offset);
}

void PersistentDevice::write_u64(std::uint64_t offset, std::uint64_t value) {
  check_range(offset, 8);
  put_u64(current_.data() + offset, value);
  mark_written(offset, 8);
}

void PersistentDevice::fill(std::uint64_t offset, std::uint64_t len, std::uint8_t value) {
  check_range(offset, len);
  if (len == 0) return;
  std::memset(current_.data() + offset, value, len);
  mark_written(offset, len);
}

bool PersistentDevice::all_zero(std::uint64_t offset, std::uint64_t len) const {
  check_range(offset, len);
  const std::uint8_t* p = current_.data() + offset;
  return std::all_of(p, p + len, [](std::uint8_t b) { return b == 0; });
}

void PersistentDevice::flush(std::uint64_t offset, std::uint64_t len) {
  check_range(offset, len);
  if (len == 0) return;
  const std::uint64_t first = offset / kLineSize;
  const std::uint64_t last = (offset + len - 1) / kLineSize;
  for (std::uint64_t line = first; line <= last; ++line) {
    std::uint8_t& st = state_[line];
    if (!(st & kDirty)) continue;
    st &= static_cast<std::uint8_t>(~kDirty);
    ++flushed_lines_;
    std::int32_t slot = pending_slot_[line];
    if (slot < 0) {
      slot = static_cast<std::int32_t>(pending_.size());
      pending_slot_[line] = slot;
      pending_.push_back(CommittedLine{line, {}});
    }
    std::memcpy(pending_[static_cast<std::size_t>(slot)].bytes.data(),
                current_.data() + line * kLineSize, kLineSize);
  }
}

std::uint64_t PersistentDevice::fence() {
  for (const auto& committed : pending_) {
    std::uint8_t* dst = durable_.data() + committed.index * kLineSize;
    if (checkpoint_active_ && !(state_[committed.index] & kSaved)) {
      CommittedLine pre{committed.index, {}};
      std::memcpy(pre.bytes.data(), dst, kLineSize);
      checkpoint_preimages_.push_back(pre);
      state_[committed.index] |= kSaved;
    }
    std::memcpy(dst, committed.bytes.data(), kLineSize);
    pending_slot_[committed.index] = -1;
  }
  if (fd_ >= 0 && !pending_.empty()) write_through(pending_);
  ++persist_points_;
  if (fence_hook_) fence_hook_(persist_points_, pending_);
  pending_.clear();

  if (dirty_lines_.size() > dirty_compact_mark_) {
    std::erase_if(dirty_lines_, [this](std::uint64_t line) { return !(state_[line] & kDirty); });
    dirty_compact_mark_ = std::max<std::size_t>(1024, dirty_lines_.size() * 2);
  }

  if (crash_policy_ && crash_policy_->crash_at_point == persist_points_) {
    throw InjectedCrash(persist_points_);
  }
  return persist_points_;
}

std::uint64_t PersistentDevice::persist_all() {
  for (std::uint64_t line : dirty_lines_) {
    if (state_[line] & kDirty) flush(line * kLineSize, kLineSize);
  }
  dirty_lines_.clear();
  return fence();
}

bool PersistentDevice::has_unpersisted_lines() const noexcept {
  if (!pending_.empty()) return true;
  return std::any_of(dirty_lines_.begin(), dirty_lines_.end(),
                     [this](std::uint64_t line) { return (state_[line] & kDirty) != 0; });
}

CrashReport PersistentDevice::crash() {
  for (std::uint64_t line : touched_lines_) {
    std::memcpy(current_.data() + line * kLineSize, durable_.data() + line * kLineSize,
                kLineSize);
    state_[line] &= static_cast<std::uint8_t>(~(kDirty | kTouched));
  }
  touched_lines_.clear();
  dirty_lines_.clear();
  for (const auto& p : pending_) pending_slot_[p.index] = -1;
  pending_.clear();
  return CrashReport{persist_points_, durable_};
}

void PersistentDevice::set_crash_policy(std::optional<CrashPolicy> policy) {
  if (policy && fd_ >= 0) {
    throw Error(Errc::InvalidArgument, "crash injection requires a simulated device");
  }
  crash_policy_ = policy;
}

std::vector<std::uint8_t> PersistentDevice::durable_read(std::uint64_t offset,
                                                         std::uint64_t len) const {
  check_range(offset, len);
  return {durable_.begin() + static_cast<std::ptrdiff_t>(offset),
          durable_.begin() + static_cast<std::ptrdiff_t>(offset + len)};
}

void PersistentDevice::apply_committed(std::span<const CommittedLine> lines) {
  if (!pending_.empty()) {
    throw Error(Errc::InvalidArgument, "apply_committed with pending lines");
  }
  for (const auto& committed : lines) {
    if (committed.index >= state_.size()) {
      throw Error(Errc::OutOfBounds, "committed line outside device");
    }
    std::memcpy(durable_.data() + committed.index * kLineSize, committed.bytes.data(), kLineSize);
    if (!(state_[committed.index] & kTouched)) {
      std::memcpy(current_.data() + committed.index * kLineSize, committed.bytes.data(),
                  kLineSize);
    }
  }
}

void PersistentDevice::mark_checkpoint() {
  for (const auto& pre : checkpoint_preimages_) {
    state_[pre.index] &= static_cast<std::uint8_t>(~kSaved);
  }
  checkpoint_preimages_.clear();
  checkpoint_active_ = true;
}

void PersistentDevice::restore_checkpoint() {
  crash();
  for (auto it = checkpoint_preimages_.rbegin(); it != checkpoint_preimages_.rend(); ++it) {
    std::memcpy(durable_.data() + it->index * kLineSize, it->bytes.data(), kLineSize);
    std::memcpy(current_.data() + it->index * kLineSize, it->bytes.data(), kLineSize);
    state_[it->index] &= static_cast<std::uint8_t>(~kSaved);
  }
  checkpoint_preimages_.clear();
  checkpoint_active_ = false;
}

void PersistentDevice::write_through(std::span<const CommittedLine> lines) {
  for (const auto& committed : lines) {
    pwrite_all(fd_, committed.bytes.data(), kLineSize,
               static_cast<off_t>(kDeviceFileHeader + committed.index * kLineSize));
  }
}

void PersistentDevice::save_image(const std::string& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::IoError, "cannot write " + path);
  auto header = file_header(capacity_);
  out.write(reinterpret_cast<const char*>(header.data()), header.size());
  out.write(reinterpret_cast<const char*>(durable_.data()),
            static_cast<std::streamsize>(durable_.size()));
  if (!out) throw Error(Errc::IoError, "short write to " + path);
}

std::unique_ptr<PersistentDevice> PersistentDevice::load_image(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::IoError, "cannot read " + path);
  std::uint8_t header[kDeviceFileHeader];
  in.read(reinterpret_cast<char*>(header), sizeof(header));
  if (!in) throw Error(Errc::CorruptImage, path + ": short device header");
  const std::uint64_t capacity = parse_header(header, path);
  validate_capacity(capacity);
  std::vector<std::uint8_t> image(capacity);
  in.read(reinterpret_cast<char*>(image.data()), static_cast<std::streamsize>(capacity));
  if (!in) throw Error(Errc::CorruptImage, path + ": truncated device image");
  return from_image(image);
}

}  // namespace pjh
