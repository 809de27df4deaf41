// SPDX-License-Identifier: Apache-2.0
#include "pjh/storage.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "pjh/errors.hpp"

namespace pjh {

namespace fs = std::filesystem;

bool SimulatedStorage::exists(const std::string& name) const {
  auto it = registered_.find(name);
  return it != registered_.end() && it->second;
}

std::vector<std::string> SimulatedStorage::names() const {
  std::vector<std::string> out;
  for (const auto& [name, reg] : registered_) {
    if (reg) out.push_back(name);
  }
  return out;
}

std::shared_ptr<PersistentDevice> SimulatedStorage::create_device(const std::string& name,
                                                                  std::uint64_t capacity) {
  if (exists(name)) throw Error(Errc::NameExists, name);
  auto device = std::make_shared<PersistentDevice>(capacity);
  if (new_device_policy_) device->set_crash_policy(new_device_policy_);
  devices_[name] = device;
  return device;
}

void SimulatedStorage::register_name(const std::string& name) {
  if (!devices_.count(name)) throw Error(Errc::UnknownHeap, name);
  registered_[name] = true;
}

std::shared_ptr<PersistentDevice> SimulatedStorage::open_device(const std::string& name) {
  if (!exists(name)) throw Error(Errc::UnknownHeap, name);
  return devices_.at(name);
}

void SimulatedStorage::crash_devices() {
  for (auto& [name, device] : devices_) device->crash();
}

void SimulatedStorage::adopt(const std::string& name, std::shared_ptr<PersistentDevice> device) {
  devices_[name] = std::move(device);
  registered_[name] = true;
}

std::shared_ptr<PersistentDevice> SimulatedStorage::device(const std::string& name) const {
  auto it = devices_.find(name);
  return it == devices_.end() ? nullptr : it->second;
}

DirectoryStorage::DirectoryStorage(std::string directory) : dir_(std::move(directory)) {
  std::error_code ec;
  fs::create_directories(dir_, ec);
  if (ec) throw Error(Errc::IoError, dir_ + ": " + ec.message());
}

std::string DirectoryStorage::path_for(const std::string& name) const {
  return (fs::path(dir_) / (name + ".pjh")).string();
}

std::map<std::string, std::string> DirectoryStorage::read_manifest() const {
  std::map<std::string, std::string> entries;
  std::ifstream in(fs::path(dir_) / kManifestName);
  std::string line;
  while (std::getline(in, line)) {
    auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0) continue;
    entries[line.substr(0, tab)] = line.substr(tab + 1);
  }
  return entries;
}

void DirectoryStorage::write_manifest(const std::map<std::string, std::string>& entries) const {
  const fs::path final_path = fs::path(dir_) / kManifestName;
  const fs::path temp_path = fs::path(dir_) / (std::string(kManifestName) + ".tmp");
  {
    std::ofstream out(temp_path, std::ios::trunc);
    for (const auto& [name, path] : entries) out << name << '\t' << path << '\n';
    out.flush();
    if (!out) throw Error(Errc::IoError, "cannot write " + temp_path.string());
  }
  std::error_code ec;
  fs::rename(temp_path, final_path, ec);
  if (ec) throw Error(Errc::IoError, "rename manifest: " + ec.message());
}

bool DirectoryStorage::exists(const std::string& name) const {
  return read_manifest().count(name) != 0;
}

std::vector<std::string> DirectoryStorage::names() const {
  std::vector<std::string> out;
  for (const auto& [name, path] : read_manifest()) out.push_back(name);
  return out;
}

std::shared_ptr<PersistentDevice> DirectoryStorage::create_device(const std::string& name,
                                                                  std::uint64_t capacity) {
  if (name.empty() || name.find_first_of("/\t\n") != std::string::npos) {
    throw Error(Errc::InvalidArgument, "heap name not usable as a file name: " + name);
  }
  if (exists(name)) throw Error(Errc::NameExists, name);
  return PersistentDevice::create_file(path_for(name), capacity);
}

void DirectoryStorage::register_name(const std::string& name) {
  auto entries = read_manifest();
  entries[name] = path_for(name);
  write_manifest(entries);
}

std::shared_ptr<PersistentDevice> DirectoryStorage::open_device(const std::string& name) {
  auto entries = read_manifest();
  auto it = entries.find(name);
  if (it == entries.end()) throw Error(Errc::UnknownHeap, name);
  return PersistentDevice::open_file(it->second);
}

}  // namespace pjh
