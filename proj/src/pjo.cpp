// SPDX-License-Identifier: Apache-2.0
#include "pjh/pjo.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <set>
#include <sstream>

#include "pjh/errors.hpp"
#include "pjh/heap.hpp"
#include "pjh/runtime.hpp"

namespace pjh::pjo {

namespace {

constexpr std::string_view kStringType = "pjo.String";
constexpr std::string_view kListType = "pjo.List";
constexpr std::string_view kTableType = "pjo.Table";
constexpr std::string_view kTombstoneType = "pjo.Tombstone";
constexpr std::string_view kTombstoneRoot = "pjo.tombstone";
constexpr std::string_view kTablePrefix = "pjo:";

std::string table_root(std::string_view type) { return std::string(kTablePrefix) + std::string(type); }

std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t pow2_at_least(std::uint64_t n) {
  std::uint64_t c = 1;
  while (c < n) c <<= 1;
  return c;
}

std::atomic<std::uint64_t> g_txn_counter{1};

}  // namespace

// ------------------------------------------------------- EntityDescriptor

EntityDescriptor::EntityDescriptor(std::string name) : name_(std::move(name)) {}

EntityDescriptor::EntityDescriptor(std::string name, const EntityDescriptor& parent)
    : name_(std::move(name)), parent_(parent.name()), fields_(parent.fields()), key_(parent.key_) {}

EntityDescriptor& EntityDescriptor::add(EntityField f) {
  if (field_index(f.name)) throw Error(Errc::InvalidArgument, "duplicate field " + f.name);
  fields_.push_back(std::move(f));
  return *this;
}

EntityDescriptor& EntityDescriptor::scalar(std::string field, std::uint16_t width) {
  if (width != 1 && width != 2 && width != 4 && width != 8) {
    throw Error(Errc::InvalidArgument, "scalar width must be 1, 2, 4 or 8");
  }
  return add({std::move(field), FieldType::Scalar, width, {}});
}

EntityDescriptor& EntityDescriptor::string(std::string field) {
  return add({std::move(field), FieldType::String, 8, {}});
}

EntityDescriptor& EntityDescriptor::reference(std::string field, std::string target) {
  return add({std::move(field), FieldType::EntityRef, 8, std::move(target)});
}

EntityDescriptor& EntityDescriptor::list(std::string field, std::string target) {
  return add({std::move(field), FieldType::EntityList, 8, std::move(target)});
}

EntityDescriptor& EntityDescriptor::key(std::string field) {
  key_ = std::move(field);
  return *this;
}

std::optional<std::size_t> EntityDescriptor::field_index(std::string_view field) const {
  for (std::size_t i = 0; i < fields_.size(); ++i) {
    if (fields_[i].name == field) return i;
  }
  return std::nullopt;
}

std::size_t EntityDescriptor::index_of(std::string_view field) const {
  auto i = field_index(field);
  if (!i) throw Error(Errc::UnknownField, name_ + "." + std::string(field));
  return *i;
}

TypeDescriptor EntityDescriptor::layout() const {
  auto d = TypeDescriptor::instance(name_);
  for (const auto& f : fields_) {
    if (f.type == FieldType::Scalar) {
      d.scalar(f.name, f.width);
    } else {
      d.reference(f.name);
    }
  }
  return d;
}

// ---------------------------------------------------------- ManagedEntity

ManagedEntity::ManagedEntity(EntityManager& em, const EntityDescriptor& desc, ObjRef app)
    : em_(&em),
      desc_(&desc),
      app_(app),
      dirty_(desc.fields().size(), false),
      shadow_(desc.fields().size(), false) {}

bool ManagedEntity::is_dirty(std::string_view field) const { return dirty_[desc_->index_of(field)]; }

std::size_t ManagedEntity::dirty_count() const noexcept {
  return static_cast<std::size_t>(std::count(dirty_.begin(), dirty_.end(), true));
}

bool ManagedEntity::has_shadow(std::string_view field) const {
  return shadow_[desc_->index_of(field)];
}

std::size_t ManagedEntity::shadow_count() const noexcept {
  return static_cast<std::size_t>(std::count(shadow_.begin(), shadow_.end(), true));
}

std::size_t ManagedEntity::checked_index(std::string_view field, FieldType type) const {
  const std::size_t i = desc_->index_of(field);
  if (desc_->fields()[i].type != type) {
    throw Error(Errc::InvalidArgument, desc_->name() + "." + std::string(field) +
                                           " has a different field type");
  }
  return i;
}

void ManagedEntity::touch(std::size_t i) {
  dirty_[i] = true;
  if (dedup_) shadow_[i] = true;
}

std::uint64_t ManagedEntity::app_slot(std::string_view field) const {
  const auto& f = em_->info(desc_->name()).app->field(field);
  return em_->runtime().volatile_space().read_word(app_.address + f.offset);
}

std::uint64_t ManagedEntity::get(std::string_view field) const {
  const std::size_t i = checked_index(field, FieldType::Scalar);
  if (reads_binding(i)) return em_->heap().get_scalar(binding_, field);
  return em_->runtime().volatile_space().get_scalar(app_, field);
}

void ManagedEntity::set(std::string_view field, std::uint64_t value) {
  const std::size_t i = checked_index(field, FieldType::Scalar);
  em_->runtime().volatile_space().set_scalar(app_, field, value);
  touch(i);
}

std::string ManagedEntity::get_string(std::string_view field) const {
  const std::size_t i = checked_index(field, FieldType::String);
  ObjRef s = reads_binding(i) ? em_->heap().get_ref(binding_, field)
                              : em_->runtime().volatile_space().get_ref(app_, field);
  if (s.is_null()) return {};
  auto bytes = em_->runtime().store_of(s).get_bytes(s);
  return {bytes.begin(), bytes.end()};
}

void ManagedEntity::set_string(std::string_view field, std::string_view value) {
  const std::size_t i = checked_index(field, FieldType::String);
  auto& vs = em_->runtime().volatile_space();
  ObjRef s = vs.allocate(*em_->app_string_type_, value.size());
  vs.set_bytes(s, std::span(reinterpret_cast<const std::uint8_t*>(value.data()), value.size()));
  vs.set_ref(app_, field, s);
  touch(i);
}

ManagedEntity* ManagedEntity::get_ref(std::string_view field) const {
  const std::size_t i = checked_index(field, FieldType::EntityRef);
  const auto off = em_->info(desc_->name()).app->field(field).offset;
  const std::uint64_t word = reads_binding(i)
                                 ? em_->heap().read_word(binding_.address + off)
                                 : em_->runtime().volatile_space().read_word(app_.address + off);
  return em_->entity_for_word(word);
}

void ManagedEntity::set_ref(std::string_view field, ManagedEntity* target) {
  const std::size_t i = checked_index(field, FieldType::EntityRef);
  if (target) {
    if (target->em_ != em_) throw Error(Errc::InvalidArgument, "entity of another manager");
    if (!em_->is_a(target->desc_->name(), desc_->fields()[i].target)) {
      throw Error(Errc::ClassCast, target->desc_->name() + " is not a " + desc_->fields()[i].target);
    }
  }
  em_->runtime().volatile_space().set_ref(app_, field, target ? target->app_ : ObjRef::null());
  touch(i);
}

std::vector<ManagedEntity*> ManagedEntity::get_list(std::string_view field) const {
  const std::size_t i = checked_index(field, FieldType::EntityList);
  ObjRef list = reads_binding(i) ? em_->heap().get_ref(binding_, field)
                                 : em_->runtime().volatile_space().get_ref(app_, field);
  std::vector<ManagedEntity*> out;
  if (list.is_null()) return out;
  auto& store = em_->runtime().store_of(list);
  const std::uint64_t n = store.array_length(list);
  out.reserve(n);
  for (std::uint64_t k = 0; k < n; ++k) {
    out.push_back(em_->entity_for_word(store.get_element_word(list, k)));
  }
  return out;
}

void ManagedEntity::set_list(std::string_view field, const std::vector<ManagedEntity*>& items) {
  const std::size_t i = checked_index(field, FieldType::EntityList);
  for (auto* e : items) {
    if (!e || e->em_ != em_) throw Error(Errc::InvalidArgument, "list items must be entities");
    if (!em_->is_a(e->desc_->name(), desc_->fields()[i].target)) {
      throw Error(Errc::ClassCast, e->desc_->name() + " is not a " + desc_->fields()[i].target);
    }
  }
  auto& vs = em_->runtime().volatile_space();
  ObjRef list = vs.allocate(*em_->app_list_type_, items.size());
  for (std::size_t k = 0; k < items.size(); ++k) vs.set_element_ref(list, k, items[k]->app_);
  vs.set_ref(app_, field, list);
  touch(i);
}

// ------------------------------------------------------------ Transaction

void Transaction::require_active() const {
  if (status_ != Status::Active) throw Error(Errc::InactiveTransaction, "transaction is not active");
}

void Transaction::enlist(ManagedEntity& e) {
  if (std::find(managed_.begin(), managed_.end(), &e) != managed_.end()) return;
  managed_.push_back(&e);
  if (e.state_ == ManagedEntity::State::Transient) e.state_ = ManagedEntity::State::Managed;
  if (e.binding_.is_null()) std::fill(e.dirty_.begin(), e.dirty_.end(), true);
}

void Transaction::persist(ManagedEntity& entity) {
  require_active();
  if (entity.em_ != em_) throw Error(Errc::InvalidArgument, "entity of another manager");
  if (entity.removed_) throw Error(Errc::InvalidArgument, "entity was removed");
  if (!em_->is_enhanced(entity.desc_->name())) {
    throw Error(Errc::UnregisteredType, entity.desc_->name());
  }
  enlist(entity);
  // Cascade to referenced entities that have never been stored.
  for (std::size_t next = 0; next < managed_.size(); ++next) {
    ManagedEntity& e = *managed_[next];
    for (const auto& f : e.desc_->fields()) {
      std::vector<ManagedEntity*> targets;
      if (f.type == FieldType::EntityRef) {
        targets.push_back(e.get_ref(f.name));
      } else if (f.type == FieldType::EntityList) {
        targets = e.get_list(f.name);
      }
      for (auto* t : targets) {
        if (t && t->binding_.is_null() && !t->removed_) enlist(*t);
      }
    }
  }
}

void Transaction::remove(ManagedEntity& entity) {
  require_active();
  if (entity.em_ != em_) throw Error(Errc::InvalidArgument, "entity of another manager");
  if (entity.binding_.is_null()) {
    std::erase(managed_, &entity);
    entity.state_ = ManagedEntity::State::Transient;
    return;
  }
  if (std::find(removals_.begin(), removals_.end(), &entity) == removals_.end()) {
    removals_.push_back(&entity);
  }
}

void Transaction::rollback() {
  require_active();
  status_ = Status::RolledBack;
}

void Transaction::commit() {
  require_active();
  Heap& heap = em_->heap();
  std::lock_guard lock(heap.mutator_lock());
  const bool auto_gc = heap.auto_gc();
  heap.set_auto_gc(false);
  struct RestoreGc {
    Heap& h;
    bool on;
    ~RestoreGc() { h.set_auto_gc(on); }
  } restore{heap, auto_gc};

  const auto t0 = std::chrono::steady_clock::now();
  const std::uint64_t fences0 = heap.device().persist_point_count();
  status_ = Status::Committing;
  try {
    run_commit();
  } catch (const Error&) {
    // Failures before the commit point leave either nothing logged or a log
    // that rollback restores; the transaction ends rolled back if any word
    // was logged, otherwise it stays usable.
    if (heap.undo_log().empty()) {
      status_ = Status::Active;
    } else {
      heap.undo_log().rollback();
      status_ = Status::RolledBack;
    }
    throw;
  }
  stats_.fences = heap.device().persist_point_count() - fences0;
  stats_.elapsed_ns = static_cast<std::uint64_t>(
      std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::steady_clock::now() - t0)
          .count());
  status_ = Status::Committed;
}

void Transaction::run_commit() {
  EntityManager& em = *em_;
  Heap& heap = em.heap();
  PersistentDevice& dev = heap.device();
  auto& vs = em.runtime().volatile_space();
  stats_ = {};

  auto is_removed = [&](const ManagedEntity* e) {
    return std::find(removals_.begin(), removals_.end(), e) != removals_.end();
  };

  // Work set: the management list, dirty committed entities, and every
  // never-stored entity reachable from them.
  std::vector<ManagedEntity*> work = managed_;
  for (auto& owned : em.entities_) {
    ManagedEntity* e = owned.get();
    if (!e->binding_.is_null() && !e->removed_ && e->dirty_count() > 0 &&
        std::find(work.begin(), work.end(), e) == work.end()) {
      work.push_back(e);
    }
  }
  for (std::size_t next = 0; next < work.size(); ++next) {
    ManagedEntity& e = *work[next];
    for (const auto& f : e.desc_->fields()) {
      std::vector<ManagedEntity*> targets;
      if (f.type == FieldType::EntityRef) {
        targets.push_back(e.get_ref(f.name));
      } else if (f.type == FieldType::EntityList) {
        targets = e.get_list(f.name);
      }
      for (auto* t : targets) {
        if (t && t->binding_.is_null() && !t->removed_ &&
            std::find(work.begin(), work.end(), t) == work.end()) {
          if (t->state_ == ManagedEntity::State::Transient) t->state_ = ManagedEntity::State::Managed;
          std::fill(t->dirty_.begin(), t->dirty_.end(), true);
          work.push_back(t);
        }
      }
    }
  }
  std::erase_if(work, is_removed);

  // Prepare: new copies get addresses before any field value is computed.
  std::vector<ManagedEntity*> fresh;
  std::map<ManagedEntity*, ObjRef> new_binding;
  for (auto* e : work) {
    if (e->binding_.is_null()) {
      new_binding[e] = heap.allocate(*em.info(e->desc_->name()).persistent);
      fresh.push_back(e);
    }
  }
  auto binding_of = [&](ManagedEntity* e) -> std::uint64_t {
    if (!e) return 0;
    if (!e->binding_.is_null()) return e->binding_.address;
    auto it = new_binding.find(e);
    if (it == new_binding.end()) throw Error(Errc::InvalidArgument, "reference to an unstored entity");
    return it->second.address;
  };

  bool flushed = false;
  auto flush_new = [&](ObjRef r) {
    dev.flush(heap.offset_of(r.address), heap.object_size(r));
    flushed = true;
  };

  // Word value of field `i` as it should be stored in the persistent copy.
  auto stored_word = [&](ManagedEntity& e, std::size_t i) -> std::uint64_t {
    const EntityField& f = e.desc_->fields()[i];
    switch (f.type) {
      case FieldType::Scalar:
        return e.reads_binding(i) ? heap.get_scalar(e.binding_, f.name) : vs.get_scalar(e.app_, f.name);
      case FieldType::String: {
        if (e.reads_binding(i)) return heap.get_ref(e.binding_, f.name).address;
        ObjRef src = vs.get_ref(e.app_, f.name);
        if (src.is_null()) return 0;
        if (src.space == Space::Persistent) return src.address;
        auto bytes = vs.get_bytes(src);
        ObjRef s = heap.allocate(*em.string_type_, bytes.size());
        heap.set_bytes(s, bytes);
        flush_new(s);
        return s.address;
      }
      case FieldType::EntityRef:
        return binding_of(e.get_ref(f.name));
      case FieldType::EntityList: {
        if (e.reads_binding(i)) return heap.get_ref(e.binding_, f.name).address;
        ObjRef src = vs.get_ref(e.app_, f.name);
        if (src.is_null()) return 0;
        if (src.space == Space::Persistent) return src.address;
        auto items = e.get_list(f.name);
        ObjRef list = heap.allocate(*em.list_type_, items.size());
        for (std::size_t k = 0; k < items.size(); ++k) {
          heap.set_element_word(list, k, binding_of(items[k]));
        }
        flush_new(list);
        return list.address;
      }
    }
    return 0;
  };

  // Logged writes, keyed by heap offset of the containing word.
  std::map<std::uint64_t, std::uint64_t> planned;
  auto plan = [&](std::uint64_t address, std::uint64_t value, std::uint16_t width) {
    const std::uint64_t off = heap.offset_of(address);
    const std::uint64_t word_off = off & ~std::uint64_t{7};
    auto it = planned.find(word_off);
    std::uint64_t word = it != planned.end() ? it->second : dev.read_u64(word_off);
    const unsigned shift = static_cast<unsigned>(off - word_off) * 8;
    const std::uint64_t mask = width == 8 ? ~std::uint64_t{0} : ((std::uint64_t{1} << (width * 8)) - 1);
    word = (word & ~(mask << shift)) | ((value & mask) << shift);
    planned[word_off] = word;
  };

  for (auto* e : work) {
    const auto& layout = *em.info(e->desc_->name()).persistent;
    const bool is_new = new_binding.count(e) != 0;
    const ObjRef copy = is_new ? new_binding[e] : e->binding_;
    for (std::size_t i = 0; i < e->dirty_.size(); ++i) {
      if (!is_new && !e->dirty_[i]) continue;
      const std::uint64_t value = stored_word(*e, i);
      const FieldInfo& fi = layout.fields()[i];
      if (is_new) {
        if (fi.kind == FieldKind::Scalar) {
          heap.set_scalar(copy, fi.name, value);
        } else {
          heap.write_word(copy.address + fi.offset, value);
        }
      } else {
        plan(copy.address + fi.offset, value, fi.width);
      }
    }
    if (is_new) flush_new(copy);
  }

  // Table slots: inserts for new copies, tombstones for removals.
  std::map<std::string, std::vector<ManagedEntity*>, std::less<>> inserts;
  for (auto* e : fresh) inserts[e->desc_->name()].push_back(e);
  for (auto& [type, list] : inserts) {
    const auto& t = em.info(type);
    std::set<std::uint64_t> seen;
    for (auto* e : list) {
      if (!seen.insert(vs.get_scalar(e->app_, t.desc.key_field())).second) {
        throw Error(Errc::InvalidArgument, type + " key repeated in one transaction");
      }
    }
    const auto table = em.ensure_table(t, list.size());
    const std::uint64_t cap = table.capacity;
    const std::uint64_t tomb = em.tombstone();
    std::set<std::uint64_t> reserved;
    for (auto* e : list) {
      const std::uint64_t key = vs.get_scalar(e->app_, t.desc.key_field());
      if (em.probe(table, t, key, false)) {
        throw Error(Errc::InvalidArgument, type + " key " + std::to_string(key) + " exists");
      }
      std::uint64_t slot = mix(key) & (cap - 1);
      for (std::uint64_t n = 0;; ++n, slot = (slot + 1) & (cap - 1)) {
        if (n == cap) throw Error(Errc::OutOfMemory, "entity table full");
        const std::uint64_t w = heap.read_word(table.slot_address(slot));
        if ((w == 0 || w == tomb) && !reserved.count(slot)) break;
      }
      reserved.insert(slot);
      plan(table.slot_address(slot), new_binding[e].address, 8);
    }
  }
  for (auto* e : removals_) {
    const auto& t = em.info(e->desc_->name());
    const auto table = em.table_view(t.desc.name());
    const std::uint64_t key = em.key_of_copy(t, e->binding_.address);
    auto slot = table.empty() ? std::nullopt : em.probe(table, t, key, false);
    if (!slot) continue;
    plan(table.slot_address(*slot), em.tombstone(), 8);
  }
  if (flushed) dev.fence();

  // Logged phase: old word durable in the log before the new word lands.
  UndoLog& log = heap.undo_log();
  for (const auto& [off, value] : planned) {
    log.append(id_, off);
    dev.write_u64(off, value);
    dev.flush(off, 8);
    ++stats_.undo_records;
    ++stats_.words_written;
  }
  if (!planned.empty()) dev.fence();
  log.commit();

  for (auto& [e, b] : new_binding) {
    e->binding_ = b;
    em.by_binding_[b.address] = e;
  }
  for (auto* e : removals_) {
    em.by_binding_.erase(e->binding_.address);
    e->binding_ = ObjRef::null();
    e->removed_ = true;
    e->dedup_ = false;
    e->state_ = ManagedEntity::State::Transient;
  }
  committed_ = work;
  for (auto* e : work) e->state_ = ManagedEntity::State::Committed;
  stats_.redirected = dedup_redirect();
  for (auto* e : work) std::fill(e->dirty_.begin(), e->dirty_.end(), false);
  log.truncate();

  stats_.entities = work.size();
  stats_.new_copies = fresh.size();
  stats_.removed = removals_.size();
}

std::size_t Transaction::dedup_redirect() {
  auto& vs = em_->runtime().volatile_space();
  Heap& heap = em_->heap();
  std::size_t count = 0;
  for (auto* e : committed_) {
    if (e->binding_.is_null()) continue;
    const auto& layout = *em_->info(e->desc_->name()).app;
    for (std::size_t i = 0; i < e->desc_->fields().size(); ++i) {
      const FieldType type = e->desc_->fields()[i].type;
      if (type != FieldType::String && type != FieldType::EntityList) continue;
      const std::uint64_t off = layout.fields()[i].offset;
      const std::uint64_t word = heap.read_word(e->binding_.address + off);
      vs.write_word(e->app_.address + off, word);
      if (word != 0) ++count;
    }
    e->dedup_ = true;
    std::fill(e->shadow_.begin(), e->shadow_.end(), false);
  }
  return count;
}

// ---------------------------------------------------------- EntityFactory

ManagedEntity& EntityFactory::create() const { return em_->create(*desc_); }

// ---------------------------------------------------------- EntityManager

EntityManager::EntityManager(Runtime& runtime, Heap& heap) : runtime_(&runtime), heap_(&heap) {
  register_internal_types();
  provider_id_ = heap.add_root_provider([this](const RootVisitor& visit) {
    for (auto& e : entities_) {
      if (!e->binding_.is_null()) visit(e->binding_);
    }
    binding_index_stale_ = true;
  });
}

EntityManager::~EntityManager() { heap_->remove_root_provider(provider_id_); }

void EntityManager::register_internal_types() {
  const auto str = TypeDescriptor::array_of(std::string(kStringType), FieldKind::Scalar, 1);
  const auto list = TypeDescriptor::array_of(std::string(kListType), FieldKind::Reference);
  const auto table = TypeDescriptor::array_of(std::string(kTableType), FieldKind::Reference);
  const auto tomb = TypeDescriptor::instance(std::string(kTombstoneType));
  string_type_ = &heap_->register_type(str);
  list_type_ = &heap_->register_type(list);
  table_type_ = &heap_->register_type(table);
  const auto& tomb_type = heap_->register_type(tomb);
  app_string_type_ = &runtime_->register_volatile_type(str);
  app_list_type_ = &runtime_->register_volatile_type(list);
  if (!heap_->has_root(kTombstoneRoot)) {
    heap_->set_root(std::string(kTombstoneRoot), heap_->allocate(tomb_type));
  }
}

EntityManager::TypeInfo& EntityManager::info(std::string_view type) {
  auto it = types_.find(type);
  if (it == types_.end()) throw Error(Errc::UnregisteredType, std::string(type));
  return *it->second;
}

const EntityManager::TypeInfo& EntityManager::info(std::string_view type) const {
  auto it = types_.find(type);
  if (it == types_.end()) throw Error(Errc::UnregisteredType, std::string(type));
  return *it->second;
}

bool EntityManager::is_enhanced(std::string_view type) const { return types_.count(type) != 0; }

const EntityDescriptor& EntityManager::descriptor(std::string_view type) const {
  return info(type).desc;
}

EntityFactory EntityManager::factory(std::string_view type) {
  return EntityFactory(*this, info(type).desc);
}

bool EntityManager::is_a(std::string_view type, std::string_view ancestor) const {
  std::string cur(type);
  while (!cur.empty()) {
    if (cur == ancestor) return true;
    auto it = types_.find(cur);
    if (it == types_.end()) return false;
    cur = it->second->desc.parent();
  }
  return false;
}

EntityFactory EntityManager::enhance(const EntityDescriptor& desc) {
  return enhance(std::vector<EntityDescriptor>{desc}).front();
}

std::vector<EntityFactory> EntityManager::enhance(const std::vector<EntityDescriptor>& group) {
  std::set<std::string, std::less<>> names;
  for (const auto& d : group) names.insert(d.name());
  auto known = [&](std::string_view n) { return is_enhanced(n) || names.count(n) != 0; };

  for (const auto& d : group) {
    if (d.name().empty() || d.name().rfind("pjo.", 0) == 0 || is_reserved_type_name(d.name())) {
      throw Error(Errc::InvalidArgument, "entity type name '" + d.name() + "' is reserved");
    }
    if (table_root(d.name()).size() > kMaxNameLength) {
      throw Error(Errc::NameTooLong, "entity type name too long: " + d.name());
    }
    auto k = d.field_index(d.key_field());
    if (d.key_field().empty() || !k || d.fields()[*k].type != FieldType::Scalar ||
        d.fields()[*k].width != 8) {
      throw Error(Errc::InvalidArgument, d.name() + " needs an 8-byte scalar key field");
    }
    if (!d.parent().empty() && !known(d.parent())) {
      throw Error(Errc::UnregisteredType, d.name() + " extends unregistered " + d.parent());
    }
    for (const auto& f : d.fields()) {
      if ((f.type == FieldType::EntityRef || f.type == FieldType::EntityList) && !known(f.target)) {
        throw Error(Errc::UnregisteredType,
                    d.name() + "." + f.name + " targets unregistered " + f.target);
      }
    }
    if (auto it = types_.find(d.name()); it != types_.end() && !(it->second->desc.fields() == d.fields() &&
                                                                it->second->desc.key_field() == d.key_field() &&
                                                                it->second->desc.parent() == d.parent())) {
      throw Error(Errc::LayoutMismatch, d.name() + " is enhanced with a different layout");
    }
  }

  std::vector<EntityFactory> out;
  for (const auto& d : group) {
    auto it = types_.find(d.name());
    if (it == types_.end()) {
      auto t = std::make_unique<TypeInfo>(TypeInfo{d, nullptr, nullptr});
      const auto layout = d.layout();
      t->persistent = &heap_->register_type(layout);
      t->app = &runtime_->register_volatile_type(layout);
      it = types_.emplace(d.name(), std::move(t)).first;
    }
    out.push_back(EntityFactory(*this, it->second->desc));
  }
  return out;
}

Transaction& EntityManager::begin() {
  if (txn_ && txn_->status() == Transaction::Status::Active) {
    throw Error(Errc::NestedTransaction, "a transaction is already active");
  }
  txn_.reset(new Transaction(*this, g_txn_counter.fetch_add(1)));
  return *txn_;
}

Transaction* EntityManager::active() noexcept {
  return txn_ && txn_->status() == Transaction::Status::Active ? txn_.get() : nullptr;
}

ManagedEntity& EntityManager::create(const EntityDescriptor& desc) {
  const TypeInfo& t = info(desc.name());
  ObjRef app = runtime_->volatile_space().allocate(*t.app);
  entities_.push_back(std::unique_ptr<ManagedEntity>(new ManagedEntity(*this, t.desc, app)));
  ManagedEntity* e = entities_.back().get();
  by_app_[app.address] = e;
  return *e;
}

ManagedEntity* EntityManager::entity_for_app(std::uint64_t address) const {
  auto it = by_app_.find(address);
  return it == by_app_.end() ? nullptr : it->second;
}

void EntityManager::rebuild_binding_index() {
  by_binding_.clear();
  for (auto& e : entities_) {
    if (!e->binding_.is_null()) by_binding_[e->binding_.address] = e.get();
  }
  binding_index_stale_ = false;
}

ManagedEntity* EntityManager::entity_for_binding(ObjRef copy) {
  if (copy.is_null()) return nullptr;
  if (binding_index_stale_) rebuild_binding_index();
  if (auto it = by_binding_.find(copy.address); it != by_binding_.end()) return it->second;

  const TypeInfo& t = info(heap_->descriptor_of(copy).name());
  ManagedEntity& e = create(t.desc);
  e.binding_ = copy;
  e.state_ = ManagedEntity::State::Committed;
  e.dedup_ = true;
  auto& vs = runtime_->volatile_space();
  for (std::size_t i = 0; i < t.desc.fields().size(); ++i) {
    const FieldType type = t.desc.fields()[i].type;
    if (type != FieldType::String && type != FieldType::EntityList) continue;
    const std::uint64_t off = t.app->fields()[i].offset;
    vs.write_word(e.app_.address + off, heap_->read_word(copy.address + off));
  }
  by_binding_[copy.address] = &e;
  return &e;
}

ManagedEntity* EntityManager::entity_for_word(std::uint64_t word) {
  if (word == 0) return nullptr;
  if (runtime_->volatile_space().contains(word)) return entity_for_app(word);
  return entity_for_binding({Space::Persistent, word});
}

std::uint64_t EntityManager::tombstone() const { return heap_->get_root(kTombstoneRoot).address; }

ObjRef EntityManager::table(std::string_view type) const {
  const std::string root = table_root(type);
  return heap_->has_root(root) ? heap_->get_root(root) : ObjRef::null();
}

std::uint64_t EntityManager::key_of_copy(const TypeInfo& t, std::uint64_t address) const {
  const auto& f = t.persistent->field(t.desc.key_field());
  return heap_->read_word(address + f.offset);
}

EntityManager::TableView EntityManager::table_view(std::string_view type) const {
  TableView v;
  v.directory = table(type);
  if (v.directory.is_null()) return v;
  const std::uint64_t n = heap_->array_length(v.directory);
  for (std::uint64_t i = 0; i < n; ++i) v.segments.push_back(heap_->get_element_word(v.directory, i));
  v.segment_slots = heap_->array_length({Space::Persistent, v.segments.front()});
  v.capacity = n * v.segment_slots;
  return v;
}

std::vector<std::uint64_t> EntityManager::live_copies(const TableView& table) const {
  std::vector<std::uint64_t> out;
  const std::uint64_t tomb = tombstone();
  for (std::uint64_t seg : table.segments) {
    const ObjRef s{Space::Persistent, seg};
    for (std::uint64_t i = 0; i < table.segment_slots; ++i) {
      const std::uint64_t w = heap_->get_element_word(s, i);
      if (w != 0 && w != tomb) out.push_back(w);
    }
  }
  return out;
}

std::optional<std::uint64_t> EntityManager::probe(const TableView& table, const TypeInfo& t,
                                                  std::uint64_t key, bool insert) const {
  const std::uint64_t cap = table.capacity;
  const std::uint64_t tomb = tombstone();
  std::optional<std::uint64_t> free_slot;
  std::uint64_t slot = mix(key) & (cap - 1);
  for (std::uint64_t n = 0; n < cap; ++n, slot = (slot + 1) & (cap - 1)) {
    const std::uint64_t w = heap_->read_word(table.slot_address(slot));
    if (w == 0) return insert ? (free_slot ? free_slot : slot) : std::nullopt;
    if (w == tomb) {
      if (!free_slot) free_slot = slot;
      continue;
    }
    if (key_of_copy(t, w) == key) return insert ? std::nullopt : std::optional(slot);
  }
  return insert ? free_slot : std::nullopt;
}

EntityManager::TableView EntityManager::ensure_table(const TypeInfo& t, std::uint64_t extra) {
  TableView table = table_view(t.desc.name());
  std::vector<std::uint64_t> live;
  if (!table.empty()) {
    std::uint64_t used = 0;
    for (std::uint64_t seg : table.segments) {
      const ObjRef s{Space::Persistent, seg};
      for (std::uint64_t i = 0; i < table.segment_slots; ++i) {
        if (heap_->get_element_word(s, i) != 0) ++used;
      }
    }
    if ((used + extra) * 2 <= table.capacity) return table;
    live = live_copies(table);
  }
  // Rebuild at a load factor of at most one quarter, then swap the root.
  TableView grown;
  grown.capacity = std::max(kInitialTableCapacity, pow2_at_least(4 * (live.size() + extra)));
  grown.segment_slots = std::min(grown.capacity, kSegmentSlots);
  const std::uint64_t n = grown.capacity / grown.segment_slots;
  grown.directory = heap_->allocate(*table_type_, n);
  for (std::uint64_t i = 0; i < n; ++i) {
    ObjRef seg = heap_->allocate(*table_type_, grown.segment_slots);
    heap_->set_element_word(grown.directory, i, seg.address);
    grown.segments.push_back(seg.address);
  }
  for (std::uint64_t w : live) {
    std::uint64_t slot = mix(key_of_copy(t, w)) & (grown.capacity - 1);
    while (heap_->read_word(grown.slot_address(slot)) != 0) slot = (slot + 1) & (grown.capacity - 1);
    heap_->write_word(grown.slot_address(slot), w);
  }
  auto& dev = heap_->device();
  dev.flush(heap_->offset_of(grown.directory.address), heap_->object_size(grown.directory));
  for (std::uint64_t seg : grown.segments) {
    const ObjRef s{Space::Persistent, seg};
    dev.flush(heap_->offset_of(seg), heap_->object_size(s));
  }
  dev.fence();
  heap_->set_root(table_root(t.desc.name()), grown.directory);
  return grown;
}

ManagedEntity* EntityManager::find(std::string_view type, std::uint64_t key) {
  const TypeInfo& t = info(type);
  const auto table = table_view(type);
  if (table.empty()) return nullptr;
  auto slot = probe(table, t, key, false);
  if (!slot) return nullptr;
  return entity_for_binding({Space::Persistent, heap_->read_word(table.slot_address(*slot))});
}

std::vector<std::uint64_t> EntityManager::keys(std::string_view type) const {
  const TypeInfo& t = info(type);
  std::vector<std::uint64_t> out;
  for (std::uint64_t w : live_copies(table_view(type))) out.push_back(key_of_copy(t, w));
  std::sort(out.begin(), out.end());
  return out;
}

std::size_t EntityManager::count(std::string_view type) const { return keys(type).size(); }

std::string EntityManager::describe_copy(std::uint64_t address) const {
  const ObjRef copy{Space::Persistent, address};
  const TypeInfo& t = info(heap_->descriptor_of(copy).name());
  auto ref_text = [&](std::uint64_t w) -> std::string {
    if (w == 0) return "null";
    const ObjRef r{Space::Persistent, w};
    const TypeInfo& rt = info(heap_->descriptor_of(r).name());
    return rt.desc.name() + "#" + std::to_string(key_of_copy(rt, w));
  };
  std::ostringstream out;
  out << t.desc.name() << "{";
  for (std::size_t i = 0; i < t.desc.fields().size(); ++i) {
    const EntityField& f = t.desc.fields()[i];
    const std::uint64_t slot = address + t.persistent->fields()[i].offset;
    out << f.name << "=";
    switch (f.type) {
      case FieldType::Scalar:
        out << heap_->get_scalar(copy, f.name);
        break;
      case FieldType::String: {
        const std::uint64_t w = heap_->read_word(slot);
        if (w == 0) {
          out << "null";
        } else {
          auto bytes = heap_->get_bytes({Space::Persistent, w});
          out << '"' << std::string(bytes.begin(), bytes.end()) << '"';
        }
        break;
      }
      case FieldType::EntityRef:
        out << ref_text(heap_->read_word(slot));
        break;
      case FieldType::EntityList: {
        const std::uint64_t w = heap_->read_word(slot);
        if (w == 0) {
          out << "null";
          break;
        }
        const ObjRef list{Space::Persistent, w};
        out << "[";
        for (std::uint64_t k = 0; k < heap_->array_length(list); ++k) {
          out << (k ? "," : "") << ref_text(heap_->get_element_word(list, k));
        }
        out << "]";
        break;
      }
    }
    out << ";";
  }
  out << "}";
  return out.str();
}

std::map<std::uint64_t, std::string> EntityManager::dump(std::string_view type) const {
  const TypeInfo& t = info(type);
  std::map<std::uint64_t, std::string> out;
  for (std::uint64_t w : live_copies(table_view(type))) out[key_of_copy(t, w)] = describe_copy(w);
  return out;
}

}  // namespace pjh::pjo
