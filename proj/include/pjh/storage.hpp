// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "pjh/device.hpp"

namespace pjh {

/// Where heap devices live, plus the name manager that maps heap names to
/// them. A heap becomes visible only once its name is registered, so
/// registration is the commit point of heap creation.
class Storage {
 public:
  virtual ~Storage() = default;

  virtual bool exists(const std::string& name) const = 0;
  virtual std::vector<std::string> names() const = 0;

  /// Creates a zeroed device for `name` without registering it. A device
  /// left behind by an earlier unregistered create is replaced.
  virtual std::shared_ptr<PersistentDevice> create_device(const std::string& name,
                                                          std::uint64_t capacity) = 0;
  virtual void register_name(const std::string& name) = 0;
  /// Throws UnknownHeap when the name is not registered.
  virtual std::shared_ptr<PersistentDevice> open_device(const std::string& name) = 0;
  /// Drops everything that was not made durable on the devices this storage handed out.
  virtual void crash_devices() = 0;
};

/// Heaps kept in memory on simulated devices; supports crash injection.
class SimulatedStorage : public Storage {
 public:
  bool exists(const std::string& name) const override;
  std::vector<std::string> names() const override;
  std::shared_ptr<PersistentDevice> create_device(const std::string& name,
                                                  std::uint64_t capacity) override;
  void register_name(const std::string& name) override;
  std::shared_ptr<PersistentDevice> open_device(const std::string& name) override;
  void crash_devices() override;

  /// Registers an existing device under `name` (used to reopen crash images).
  void adopt(const std::string& name, std::shared_ptr<PersistentDevice> device);
  /// Device of `name`, registered or not; null when none.
  std::shared_ptr<PersistentDevice> device(const std::string& name) const;
  /// Crash policy installed on every device created from now on.
  void set_crash_policy_for_new_devices(std::optional<CrashPolicy> policy) {
    new_device_policy_ = policy;
  }

 private:
  std::map<std::string, std::shared_ptr<PersistentDevice>> devices_;
  std::map<std::string, bool> registered_;
  std::optional<CrashPolicy> new_device_policy_;
};

/// Heaps stored as `<name>.pjh` files in one directory, with the name
/// manager in `heaps.manifest` (one `name<TAB>path` line per heap),
/// rewritten through a temporary file and rename.
class DirectoryStorage : public Storage {
 public:
  explicit DirectoryStorage(std::string directory);

  bool exists(const std::string& name) const override;
  std::vector<std::string> names() const override;
  std::shared_ptr<PersistentDevice> create_device(const std::string& name,
                                                  std::uint64_t capacity) override;
  void register_name(const std::string& name) override;
  std::shared_ptr<PersistentDevice> open_device(const std::string& name) override;
  void crash_devices() override {}

  const std::string& directory() const noexcept { return dir_; }
  std::string path_for(const std::string& name) const;

  static constexpr const char* kManifestName = "heaps.manifest";

 private:
  std::map<std::string, std::string> read_manifest() const;
  void write_manifest(const std::map<std::string, std::string>& entries) const;

  std::string dir_;
};

}  // namespace pjh
